// Command-line front end. Exit status: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <fmt/format.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "brainfusion/error.hpp"
#include "brainfusion/gradcam.hpp"
#include "brainfusion/pipeline.hpp"

namespace fs = std::filesystem;
using namespace brainfusion;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kConfig = 2;

struct Invocation {
  std::string verb;
  std::vector<std::string> config_files;
  std::vector<std::string> assignments;
  std::string replay;
  /// Values given through flags that alias config keys.
  std::map<std::string, std::string> aliases;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

fs::path make_run_dir(const RunConfig& c) {
  if (c.output_dir.empty()) throw ConfigError("config key 'run.dir' is required");
  fs::create_directories(c.output_dir);
  return c.output_dir;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> image_list(const fs::path& p) {
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("config key 'image': no images in " + p.string());
  return out;
}

// ---------------------------------------------------------------- verbs

int cmd_prepare(const RunConfig& c) {
  require_existing(c.data, "data");
  const auto out = make_run_dir(c);
  const auto ingested = c.kind == CorpusKind::classification ? ingest_classification_dataset(c.data)
                                                             : ingest_detection_dataset(c.data);
  const auto manifest = split_dataset(ingested.manifest, c.ratios, c.seed);
  save_manifest(manifest, out / "manifest.json");
  write_text(out / "ingest_report.txt", ingested.report.to_text());
  json counts = json::object();
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto n = manifest.indices_in(s).size();
    counts[std::string(split_name(s))] = n;
    std::cout << fmt::format("{:<6} {}\n", split_name(s), n);
  }
  write_run_manifest({"prepare", c, {c.data}, {}, {{"split_sizes", counts}},
                      {out / "manifest.json", out / "ingest_report.txt"}},
                     out);
  return kOk;
}

int cmd_train_cls(const RunConfig& c) {
  require_existing(c.manifest, "manifest");
  const auto out = make_run_dir(c);
  const auto manifest = load_manifest(c.manifest);
  auto model = Classifier::build(c.classifier, c.seed);
  for (const auto& w : model.warnings()) std::cerr << "warning: " << w << "\n";
  TrainOptions opts;
  opts.checkpoint_dir = out / "classifier";
  opts.on_epoch = [](const EpochLog& e) {
    std::cerr << fmt::format("epoch {:3d}  loss {:.4f}  acc {:.4f}  val_loss {:.4f}  val_acc {:.4f}  lr {:.3g}\n",
                             e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.lr);
  };
  const auto log = train(model, manifest, c.classifier, c.seed, opts);
  const auto& best = log.epochs.at(static_cast<std::size_t>(log.best_epoch - 1));
  const json metrics = {{"best_epoch", log.best_epoch},
                        {"stopped_epoch", log.stopped_epoch},
                        {"val_loss", best.val_loss},
                        {"val_accuracy", best.val_accuracy}};
  std::cout << metrics.dump() << "\n";
  write_run_manifest({"train-cls", c, {c.manifest}, {*opts.checkpoint_dir}, metrics, {}}, out);
  return kOk;
}

int cmd_train_det(const RunConfig& c) {
  require_existing(c.manifest, "manifest");
  const auto out = make_run_dir(c);
  const auto manifest = load_manifest(c.manifest);
  DetectorTrainOptions opts;
  opts.checkpoint_dir = out / "detector";
  opts.on_epoch = [](const DetectorEpochLog& e) {
    std::cerr << fmt::format("epoch {:3d}  loss {:.4f}  box {:.4f}  cls {:.4f}  mAP50 {:.4f}  mAP50-95 {:.4f}\n",
                             e.epoch, e.train_loss, e.box_loss, e.cls_loss, e.val_map50, e.val_map50_95);
  };
  const auto result = train_detector(manifest, c.detector, c.seed, opts);
  for (const auto& w : result.model.warnings()) std::cerr << "warning: " << w << "\n";
  const auto& best = result.log.epochs.at(static_cast<std::size_t>(result.log.best_epoch - 1));
  const json metrics = {{"best_epoch", result.log.best_epoch},
                        {"val_map50", best.val_map50},
                        {"val_map50_95", best.val_map50_95}};
  std::cout << metrics.dump() << "\n";
  write_run_manifest({"train-det", c, {c.manifest}, {*opts.checkpoint_dir}, metrics, {}}, out);
  return kOk;
}

int cmd_eval_cls(const RunConfig& c) {
  std::vector<ClassificationPrediction> preds;
  std::vector<fs::path> inputs, checkpoints;
  if (!c.predictions.empty()) {
    require_existing(c.predictions, "predictions");
    preds = read_classification_predictions(c.predictions);
    inputs.push_back(c.predictions);
  } else {
    require_existing(c.cls_checkpoint, "cls.checkpoint");
    require_existing(c.manifest, "manifest");
    const auto manifest = load_manifest(c.manifest);
    auto stage = load_classifier_stage(c.cls_checkpoint);
    preds = predict_split(*stage, manifest, c.split);
    inputs.push_back(c.manifest);
    checkpoints.push_back(c.cls_checkpoint);
  }
  const auto cm = confusion_from_predictions(preds);
  const auto report = classification_report(cm);
  const auto table = format_classification_report(report, c.cls_decimals);
  std::cout << table;
  if (!c.output_dir.empty()) {
    const auto out = make_run_dir(c);
    write_text(out / "classification_report.txt", table);
    write_text(out / "classification_report.json", classification_report_json(report, cm));
    std::vector<fs::path> outputs = {out / "classification_report.txt", out / "classification_report.json"};
    if (c.predictions.empty()) {
      write_classification_predictions(preds, out / "predictions.jsonl");
      outputs.push_back(out / "predictions.jsonl");
    }
    const json metrics = {{"accuracy", report.accuracy},
                          {"macro_f1", report.macro_avg.f1},
                          {"weighted_f1", report.weighted_avg.f1},
                          {"support", report.total_support}};
    write_run_manifest({"eval-cls", c, inputs, checkpoints, metrics, outputs}, out);
  }
  return kOk;
}

int cmd_eval_det(const RunConfig& c) {
  require_existing(c.manifest, "manifest");
  const auto manifest = load_manifest(c.manifest);
  if (manifest.corpus_kind() != CorpusKind::detection) {
    throw ConfigError("config key 'manifest': " + c.manifest.string() + " is not a detection manifest");
  }
  ImageDetections preds;
  std::vector<fs::path> inputs = {c.manifest}, checkpoints;
  double pr_conf = c.detector.conf_threshold;
  DetectionReport report;
  if (!c.predictions.empty()) {
    require_existing(c.predictions, "predictions");
    preds = read_predictions_jsonl(c.predictions);
    inputs.push_back(c.predictions);
    report = detection_report(preds, ground_truth(manifest, c.split), pr_conf);
  } else {
    require_existing(c.det_checkpoint, "det.checkpoint");
    const auto model = Detector::load(c.det_checkpoint);
    report = evaluate_detector(model, manifest, c.split, &preds);
    checkpoints.push_back(c.det_checkpoint);
  }
  const auto table = format_detection_report(report, c.det_decimals);
  std::cout << table;
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (!c.output_dir.empty()) {
    const auto out = make_run_dir(c);
    write_text(out / "detection_report.txt", table);
    write_text(out / "detection_report.json", detection_report_json(report));
    std::vector<fs::path> outputs = {out / "detection_report.txt", out / "detection_report.json"};
    if (c.predictions.empty()) {
      write_predictions_jsonl(preds, out / "predictions.jsonl");
      outputs.push_back(out / "predictions.jsonl");
    }
    const json metrics = {{"precision", report.all.precision},
                          {"recall", report.all.recall},
                          {"map50", report.all.ap50 ? json(*report.all.ap50) : json(nullptr)},
                          {"map50_95", report.all.ap50_95 ? json(*report.all.ap50_95) : json(nullptr)}};
    write_run_manifest({"eval-det", c, inputs, checkpoints, metrics, outputs}, out);
  }
  return kOk;
}

int cmd_infer(const RunConfig& c) {
  require_existing(c.image, "image");
  require_existing(c.cls_checkpoint, "cls.checkpoint");
  require_existing(c.det_checkpoint, "det.checkpoint");
  const auto out = make_run_dir(c);
  const auto images = image_list(c.image);
  auto classifier = load_classifier_stage(c.cls_checkpoint);
  auto detector = load_detector_stage(c.det_checkpoint);
  PipelineOptions opts{out, c.gradcam, c.alpha, c.dump_heatmap_grid};
  const auto verdicts = run_batch(images, *classifier, *detector, opts, c.workers);

  std::ofstream all(out / "verdicts.jsonl");
  if (!all) throw Error("cannot write " + (out / "verdicts.jsonl").string());
  long positives = 0;
  for (const auto& v : verdicts) {
    all << to_json(v).dump() << "\n";
    positives += v.tumor_present;
  }
  all.close();
  if (verdicts.size() == 1) {
    write_text(out / "verdict.json", to_json(verdicts[0]).dump(2) + "\n");
    std::cout << to_json(verdicts[0]).dump(2) << "\n";
  } else {
    for (const auto& v : verdicts) std::cout << to_json(v).dump() << "\n";
  }
  const json metrics = {{"images", verdicts.size()}, {"tumor_present", positives}};
  write_run_manifest({"infer", c, {c.image}, {c.cls_checkpoint, c.det_checkpoint}, metrics,
                      {out / "verdicts.jsonl"}},
                     out);
  return kOk;
}

int cmd_explain(const RunConfig& c) {
  require_existing(c.image, "image");
  require_existing(c.cls_checkpoint, "cls.checkpoint");
  const auto out = make_run_dir(c);
  auto classifier = load_classifier_stage(c.cls_checkpoint);
  std::vector<fs::path> outputs;
  for (const auto& path : image_list(c.image)) {
    const auto img = load_pipeline_image(path);
    const ClassLabel target = c.explain_class ? *c.explain_class : classifier->classify(img).argmax();
    const auto hm = classifier->explain(img, target);
    if (!hm) throw Error("checkpoint " + c.cls_checkpoint.string() + " has no feature layer to explain");
    const auto stem = path.stem().string();
    const auto png = out / (stem + "_gradcam.png");
    write_png(render_heatmap_overlay(normalize(img.raw), *hm, c.alpha).image, png);
    outputs.push_back(png);
    if (c.dump_heatmap_grid) {
      write_heatmap_grid(*hm, out / (stem + "_gradcam.txt"));
      outputs.push_back(out / (stem + "_gradcam.txt"));
    }
    std::cout << fmt::format("{} {} {}\n", path.generic_string(), class_name(target), png.generic_string());
  }
  write_run_manifest({"explain", c, {c.image}, {c.cls_checkpoint}, json::object(), outputs}, out);
  return kOk;
}

KeyValueConfig build_config(const Invocation& inv) {
  KeyValueConfig kv;
  if (!inv.replay.empty()) {
    const auto m = read_run_manifest(inv.replay);
    if (m.value("verb", "") != inv.verb) {
      throw ConfigError(fmt::format("--replay: manifest was written by '{}', not '{}'", m.value("verb", ""), inv.verb));
    }
    kv = replay_config(m);
  }
  for (const auto& f : inv.config_files) kv.merge(KeyValueConfig::load(f));
  for (const auto& [key, value] : inv.aliases) kv.set(key, value);
  for (const auto& a : inv.assignments) kv.set_assignment(a);
  return kv;
}

int dispatch(const Invocation& inv) {
  const RunConfig c = run_config_from(build_config(inv));
  if (inv.verb == "prepare") return cmd_prepare(c);
  if (inv.verb == "train-cls") return cmd_train_cls(c);
  if (inv.verb == "train-det") return cmd_train_det(c);
  if (inv.verb == "eval-cls") return cmd_eval_cls(c);
  if (inv.verb == "eval-det") return cmd_eval_det(c);
  if (inv.verb == "infer") return cmd_infer(c);
  if (inv.verb == "explain") return cmd_explain(c);
  throw ConfigError("unknown verb '" + inv.verb + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage brain MRI tumor classification and localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "brainfusion 0.1.0");

  Invocation inv;
  // Flags that are shorthand for config keys.
  const std::vector<std::pair<std::string, std::string>> alias_flags = {
      {"--data", "data"},       {"--manifest", "manifest"},   {"--out", "run.dir"},
      {"--cls", "cls.checkpoint"}, {"--det", "det.checkpoint"}, {"--image", "image"},
      {"--predictions", "predictions"}, {"--split", "split"},  {"--kind", "kind"},
      {"--seed", "seed"},       {"--class", "explain.class"}};
  std::map<std::string, std::string> alias_values;

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"prepare", "Ingest a dataset tree and write a split manifest"},
      {"train-cls", "Fine-tune the classifier"},
      {"train-det", "Train the detector"},
      {"eval-cls", "Classification report from a checkpoint or a predictions file"},
      {"eval-det", "Detection report from a checkpoint or a predictions file"},
      {"infer", "Two-stage inference on an image or a directory of images"},
      {"explain", "Grad-CAM overlays for classifier decisions"}};
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_files, "key = value config file (repeatable)");
    sub->add_option("--set", inv.assignments, "Override one key, e.g. --set cls.epochs=10 (repeatable)");
    sub->add_option("--replay", inv.replay, "Reuse the configuration stored in a run manifest");
    for (const auto& [flag, key] : alias_flags) {
      sub->add_option(flag, alias_values[key], "Same as --set " + key + "=VALUE");
    }
    sub->callback([&inv, &alias_values, &alias_flags, sub] {
      inv.verb = sub->get_name();
      for (const auto& [flag, key] : alias_flags) {
        if (sub->count(flag) > 0) inv.aliases[key] = alias_values[key];
      }
    });
  }

  const auto known_verb = [&](const std::string& v) {
    return std::any_of(verbs.begin(), verbs.end(), [&](const auto& p) { return p.first == v; });
  };
  if (argc > 1 && argv[1][0] != '-' && !known_verb(argv[1])) {
    std::cerr << "error: unknown verb '" << argv[1] << "'\n" << app.help();
    return kConfig;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    return dispatch(inv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
