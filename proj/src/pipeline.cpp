#include "brainfusion/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <thread>

#include "brainfusion/error.hpp"
#include "brainfusion/gradcam.hpp"
#include "brainfusion/hashing.hpp"

namespace brainfusion {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStubClassifierFormat = "brainfusion-stub-classifier";
constexpr const char* kStubDetectorFormat = "brainfusion-stub-detector";

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw CheckpointError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error("cannot write " + p.string());
}

json scores_json(const ClassScores& s) { return json(std::vector<double>(s.probs.begin(), s.probs.end())); }

ClassScores scores_from(const json& j) {
  if (!j.is_array() || j.size() != kNumClasses) throw ParseError("class_scores must hold 4 numbers", 0);
  ClassScores s;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (!j[k].is_number()) throw ParseError("class_scores must hold 4 numbers", 0);
    s.probs[k] = j[k].get<double>();
  }
  return s;
}

ClassLabel label_from(const json& j, const char* field) {
  if (!j.is_string()) throw ParseError(std::string(field) + " must be a class name", 0);
  const auto l = label_from_string(j.get<std::string>());
  if (!l) throw ParseError(std::string(field) + ": unknown class '" + j.get<std::string>() + "'", 0);
  return *l;
}

json detection_json(const Detection& d) {
  return {{"class", class_name(d.box.class_id)}, {"cx", d.box.cx},  {"cy", d.box.cy},
          {"w", d.box.w},                        {"h", d.box.h},    {"confidence", d.confidence()}};
}

Detection detection_from(const json& j) {
  try {
    Detection d;
    d.box.class_id = label_from(j.at("class"), "class");
    d.box.cx = j.at("cx").get<double>();
    d.box.cy = j.at("cy").get<double>();
    d.box.w = j.at("w").get<double>();
    d.box.h = j.at("h").get<double>();
    d.box.confidence = j.at("confidence").get<double>();
    return d;
  } catch (const json::exception& e) {
    throw ParseError(std::string("detection: ") + e.what(), 0);
  }
}

std::string name_of(const PipelineImage& img) { return img.path.filename().string(); }

}  // namespace

// ---------------------------------------------------------------- stages

PipelineImage load_pipeline_image(const fs::path& path) { return {path, decode_image(path)}; }

ClassScores ModelClassifierStage::classify(const PipelineImage& img) {
  const int s = model_.config().input_size;
  return model_.predict(normalize(resize(img.raw, {s, s})));
}

std::optional<Heatmap> ModelClassifierStage::explain(const PipelineImage& img, ClassLabel target) {
  const std::lock_guard lock(explain_mu_);
  const int s = model_.config().input_size;
  ClassifierCam cam(model_);
  return gradcam(cam, to_batch(normalize(resize(img.raw, {s, s}))), target, {img.raw.height(), img.raw.width()});
}

std::vector<Detection> ModelDetectorStage::detect(const PipelineImage& img) {
  const int s = model_.config().input_size;
  return model_.detect(normalize(resize(img.raw, {s, s})));
}

ClassScores StubClassifierStage::classify(const PipelineImage& img) {
  ++calls_;
  const auto it = by_name_.find(name_of(img));
  return it == by_name_.end() ? fallback_ : it->second;
}

std::vector<Detection> StubDetectorStage::detect(const PipelineImage& img) {
  ++calls_;
  const auto it = by_name_.find(name_of(img));
  return it == by_name_.end() ? fallback_ : it->second;
}

void write_stub_classifier_checkpoint(const fs::path& dir, const ClassScores& fallback,
                                      const std::map<std::string, ClassScores>& by_name) {
  fs::create_directories(dir);
  json images = json::object();
  for (const auto& [name, s] : by_name) images[name] = scores_json(s);
  write_json_file(dir / "config.json", {{"format", kStubClassifierFormat}, {"scores", scores_json(fallback)},
                                        {"images", images}});
}

void write_stub_detector_checkpoint(const fs::path& dir, const std::vector<Detection>& fallback,
                                    const std::map<std::string, std::vector<Detection>>& by_name) {
  fs::create_directories(dir);
  auto list = [](const std::vector<Detection>& ds) {
    json a = json::array();
    for (const auto& d : ds) a.push_back(detection_json(d));
    return a;
  };
  json images = json::object();
  for (const auto& [name, ds] : by_name) images[name] = list(ds);
  write_json_file(dir / "config.json",
                  {{"format", kStubDetectorFormat}, {"detections", list(fallback)}, {"images", images}});
}

std::unique_ptr<ClassifierStage> load_classifier_stage(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("classifier checkpoint " + dir.string() + " not found");
  const auto j = read_json_file(dir / "config.json");
  if (j.value("format", "") != kStubClassifierFormat) {
    return std::make_unique<ModelClassifierStage>(Classifier::load(dir));
  }
  try {
    const json images = j.value("images", json::object());
    std::map<std::string, ClassScores> by_name;
    for (const auto& [name, s] : images.items()) by_name[name] = scores_from(s);
    return std::make_unique<StubClassifierStage>(scores_from(j.at("scores")), std::move(by_name));
  } catch (const std::exception& e) {
    throw CheckpointError((dir / "config.json").string() + ": " + e.what());
  }
}

std::unique_ptr<DetectorStage> load_detector_stage(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("detector checkpoint " + dir.string() + " not found");
  const auto j = read_json_file(dir / "config.json");
  if (j.value("format", "") != kStubDetectorFormat) {
    return std::make_unique<ModelDetectorStage>(Detector::load(dir));
  }
  try {
    auto list = [](const json& a) {
      std::vector<Detection> out;
      for (const auto& d : a) out.push_back(detection_from(d));
      return out;
    };
    const json images = j.value("images", json::object());
    std::map<std::string, std::vector<Detection>> by_name;
    for (const auto& [name, ds] : images.items()) by_name[name] = list(ds);
    return std::make_unique<StubDetectorStage>(list(j.at("detections")), std::move(by_name));
  } catch (const std::exception& e) {
    throw CheckpointError((dir / "config.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- verdicts

json to_json(const PipelineVerdict& v) {
  json dets = json::array();
  for (const auto& d : v.detections) dets.push_back(detection_json(d));
  auto opt = [](const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); };
  return {{"image", v.image},
          {"tumor_present", v.tumor_present},
          {"predicted_class", class_name(v.predicted_class)},
          {"class_scores", scores_json(v.class_scores)},
          {"detections", dets},
          {"disagreement", v.disagreement},
          {"artifacts", {{"overlay", opt(v.overlay)}, {"heatmap", opt(v.heatmap)}}}};
}

PipelineVerdict verdict_from_json(const json& j) {
  static const std::set<std::string> keys = {"image",      "tumor_present", "predicted_class", "class_scores",
                                             "detections", "disagreement",  "artifacts"};
  if (!j.is_object()) throw ParseError("verdict must be an object", 0);
  for (const auto& [k, _] : j.items()) {
    if (!keys.contains(k)) throw ParseError("unknown verdict field '" + k + "'", 0);
  }
  try {
    PipelineVerdict v;
    v.image = j.at("image").get<std::string>();
    v.tumor_present = j.at("tumor_present").get<bool>();
    v.predicted_class = label_from(j.at("predicted_class"), "predicted_class");
    v.class_scores = scores_from(j.at("class_scores"));
    for (const auto& d : j.at("detections")) v.detections.push_back(detection_from(d));
    v.disagreement = j.at("disagreement").get<bool>();
    const auto& a = j.at("artifacts");
    auto opt = [&](const char* k) -> std::optional<std::string> {
      if (!a.contains(k) || a.at(k).is_null()) return std::nullopt;
      return a.at(k).get<std::string>();
    };
    v.overlay = opt("overlay");
    v.heatmap = opt("heatmap");
    if (!v.tumor_present && (!v.detections.empty() || v.predicted_class != ClassLabel::no_tumor)) {
      throw ParseError("a tumor-free verdict carries no detections and class no_tumor", 0);
    }
    if (v.disagreement && (!v.tumor_present || v.detections.empty())) {
      throw ParseError("disagreement requires a tumor and at least one detection", 0);
    }
    return v;
  } catch (const json::exception& e) {
    throw ParseError(std::string("verdict: ") + e.what(), 0);
  }
}

PipelineVerdict run_two_stage(const fs::path& image, ClassifierStage& classifier, DetectorStage& detector,
                              const PipelineOptions& options) {
  const PipelineImage img = load_pipeline_image(image);
  PipelineVerdict v;
  v.image = image.generic_string();
  v.class_scores = classifier.classify(img);
  v.predicted_class = v.class_scores.argmax();
  v.tumor_present = v.predicted_class != ClassLabel::no_tumor;
  if (v.tumor_present) {
    v.detections = detector.detect(img);
    const auto top = std::max_element(v.detections.begin(), v.detections.end(),
                                      [](const Detection& a, const Detection& b) { return a.confidence() < b.confidence(); });
    v.disagreement = top != v.detections.end() && top->box.class_id != v.predicted_class;
  }

  if (options.output_dir) {
    const auto stem = image.stem().string();
    const ImageTensor source = normalize(img.raw);
    const auto overlay = render_box_overlay(source, v.detections);
    const auto overlay_path = *options.output_dir / (stem + "_overlay.png");
    write_png(overlay.image, overlay_path);
    v.overlay = overlay_path.generic_string();
    if (options.gradcam) {
      if (auto hm = classifier.explain(img, v.predicted_class)) {
        const auto hm_path = *options.output_dir / (stem + "_gradcam.png");
        write_png(render_heatmap_overlay(source, *hm, options.alpha).image, hm_path);
        if (options.dump_heatmap_grid) write_heatmap_grid(*hm, *options.output_dir / (stem + "_gradcam.txt"));
        v.heatmap = hm_path.generic_string();
      }
    }
  }
  return v;
}

std::vector<PipelineVerdict> run_batch(std::span<const fs::path> images, ClassifierStage& classifier,
                                       DetectorStage& detector, const PipelineOptions& options, int workers) {
  const std::size_t n = images.size();
  std::vector<std::optional<PipelineVerdict>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = run_two_stage(images[i], classifier, detector, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  if (count == 1 || n <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(count, n); ++t) pool.emplace_back(work);
  }
  std::vector<PipelineVerdict> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*results[i]));
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

std::vector<ClassificationPrediction> predict_split(ClassifierStage& stage, const Manifest& manifest, Split split) {
  std::vector<ClassificationPrediction> out;
  for (auto i : manifest.indices_in(split)) {
    const auto& r = manifest.records()[i];
    out.push_back({r.image_path.generic_string(), r.label, stage.classify(load_pipeline_image(r.image_path))});
  }
  return out;
}

void write_classification_predictions(std::span<const ClassificationPrediction> preds, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : preds) {
    out << json{{"image", p.image},
                {"truth", class_name(p.truth)},
                {"predicted", class_name(p.scores.argmax())},
                {"scores", scores_json(p.scores)}}
               .dump()
        << "\n";
  }
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<ClassificationPrediction> read_classification_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<ClassificationPrediction> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ClassificationPrediction p;
      p.image = j.at("image").get<std::string>();
      p.truth = label_from(j.at("truth"), "truth");
      if (j.contains("scores")) {
        p.scores = scores_from(j.at("scores"));
        if (j.contains("predicted") && label_from(j.at("predicted"), "predicted") != p.scores.argmax()) {
          throw ParseError("predicted disagrees with the argmax of scores", 0);
        }
      } else {
        p.scores.probs.fill(0.0);
        p.scores.probs[to_index(label_from(j.at("predicted"), "predicted"))] = 1.0;
      }
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n).with_context(path.string());
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n).with_context(path.string());
    }
  }
  return out;
}

ConfusionMatrix confusion_from_predictions(std::span<const ClassificationPrediction> preds) {
  std::vector<ClassLabel> predicted, truth;
  for (const auto& p : preds) {
    predicted.push_back(p.scores.argmax());
    truth.push_back(p.truth);
  }
  return confusion_matrix(predicted, truth);
}

// ---------------------------------------------------------------- run config

const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = {
      "data", "manifest", "run.dir", "cls.checkpoint", "det.checkpoint", "image", "predictions", "kind",
      "split", "seed", "split.train", "split.val", "split.test",
      "cls.backbone", "cls.unfreeze_last_n", "cls.head_units", "cls.dropout", "cls.epochs", "cls.lr",
      "cls.batch_size", "cls.early_stop_patience", "cls.plateau.factor", "cls.plateau.patience",
      "cls.plateau.min_lr", "cls.plateau.min_delta", "cls.input_size", "cls.augment", "cls.balance",
      "cls.aug.shear", "cls.aug.zoom", "cls.aug.hflip", "cls.aug.vflip", "cls.require_pretrained",
      "cls.weights_dir",
      "det.variant", "det.epochs", "det.batch_size", "det.input_size", "det.lr0", "det.lrf", "det.weight_decay",
      "det.warmup_epochs", "det.conf", "det.nms_iou", "det.max_det", "det.augment", "det.require_pretrained",
      "det.weights_dir",
      "report.cls_decimals", "report.det_decimals", "explain.gradcam", "explain.alpha", "explain.grid",
      "explain.class", "infer.workers"};
  return keys;
}

RunConfig run_config_from(const KeyValueConfig& kv) {
  kv.validate_keys(run_config_keys());
  RunConfig c;
  c.source = kv;
  auto path = [&](const char* k) { return fs::path(kv.get_string(k, "")); };
  auto int_key = [&](const char* k, int fallback) {
    const long v = kv.get_int(k, fallback);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      throw ConfigError(fmt::format("config key '{}' is out of range", k));
    }
    return static_cast<int>(v);
  };
  c.data = path("data");
  c.manifest = path("manifest");
  c.output_dir = path("run.dir");
  c.cls_checkpoint = path("cls.checkpoint");
  c.det_checkpoint = path("det.checkpoint");
  c.image = path("image");
  c.predictions = path("predictions");

  const auto kind = kv.get_string("kind", "classification");
  if (kind == "classification") c.kind = CorpusKind::classification;
  else if (kind == "detection") c.kind = CorpusKind::detection;
  else throw ConfigError("config key 'kind' must be classification or detection, got '" + kind + "'");

  try {
    c.split = split_from_string(kv.get_string("split", "test"));
  } catch (const std::exception&) {
    throw ConfigError("config key 'split' must be train, val or test");
  }
  if (c.split == Split::unassigned) throw ConfigError("config key 'split' must be train, val or test");

  const long seed = kv.get_int("seed", 42);
  if (seed < 0) throw ConfigError("config key 'seed' must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.ratios = {kv.get_double("split.train", 0.8), kv.get_double("split.val", 0.1), kv.get_double("split.test", 0.1)};
  for (const auto& [k, v] : {std::pair{"split.train", c.ratios.train}, {"split.val", c.ratios.val},
                             {"split.test", c.ratios.test}}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(fmt::format("config key '{}' must be in [0,1]", k));
  }

  auto& cls = c.classifier;
  if (kv.contains("cls.backbone")) cls.backbone = backbone_from_string(*kv.get("cls.backbone"));
  cls.unfreeze_last_n = int_key("cls.unfreeze_last_n", cls.unfreeze_last_n);
  cls.head_units = int_key("cls.head_units", cls.head_units);
  cls.head_dropout = kv.get_double("cls.dropout", cls.head_dropout);
  cls.epochs = int_key("cls.epochs", cls.epochs);
  cls.initial_lr = kv.get_double("cls.lr", cls.initial_lr);
  cls.batch_size = int_key("cls.batch_size", cls.batch_size);
  cls.early_stop_patience = int_key("cls.early_stop_patience", cls.early_stop_patience);
  cls.plateau.factor = kv.get_double("cls.plateau.factor", cls.plateau.factor);
  cls.plateau.patience = int_key("cls.plateau.patience", cls.plateau.patience);
  cls.plateau.min_lr = kv.get_double("cls.plateau.min_lr", cls.plateau.min_lr);
  cls.plateau.min_delta = kv.get_double("cls.plateau.min_delta", cls.plateau.min_delta);
  cls.input_size = int_key("cls.input_size", cls.input_size);
  cls.augment = kv.get_bool("cls.augment", cls.augment);
  cls.balance = kv.get_bool("cls.balance", cls.balance);
  cls.augmentation.shear_limit = kv.get_double("cls.aug.shear", cls.augmentation.shear_limit);
  cls.augmentation.zoom_limit = kv.get_double("cls.aug.zoom", cls.augmentation.zoom_limit);
  cls.augmentation.hflip = kv.get_bool("cls.aug.hflip", cls.augmentation.hflip);
  cls.augmentation.vflip = kv.get_bool("cls.aug.vflip", cls.augmentation.vflip);
  cls.require_pretrained = kv.get_bool("cls.require_pretrained", cls.require_pretrained);
  cls.weights_dir = kv.get_string("cls.weights_dir", cls.weights_dir);
  try {
    cls.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("classifier settings (cls.*): ") + e.what());
  }

  auto& det = c.detector;
  det.variant = kv.get_string("det.variant", det.variant);
  det.epochs = int_key("det.epochs", det.epochs);
  det.batch_size = int_key("det.batch_size", det.batch_size);
  det.input_size = int_key("det.input_size", det.input_size);
  det.lr0 = kv.get_double("det.lr0", det.lr0);
  det.lrf = kv.get_double("det.lrf", det.lrf);
  det.weight_decay = kv.get_double("det.weight_decay", det.weight_decay);
  det.warmup_epochs = kv.get_double("det.warmup_epochs", det.warmup_epochs);
  det.conf_threshold = kv.get_double("det.conf", det.conf_threshold);
  det.nms_iou_threshold = kv.get_double("det.nms_iou", det.nms_iou_threshold);
  det.max_detections = int_key("det.max_det", det.max_detections);
  if (!kv.get_bool("det.augment", true)) det.augmentation = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  det.require_pretrained = kv.get_bool("det.require_pretrained", det.require_pretrained);
  det.weights_dir = kv.get_string("det.weights_dir", det.weights_dir);
  try {
    det.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("detector settings (det.*): ") + e.what());
  }

  c.cls_decimals = int_key("report.cls_decimals", c.cls_decimals);
  c.det_decimals = int_key("report.det_decimals", c.det_decimals);
  for (const auto& [k, v] : {std::pair{"report.cls_decimals", c.cls_decimals}, {"report.det_decimals", c.det_decimals}}) {
    if (v < 0 || v > 12) throw ConfigError(fmt::format("config key '{}' must be in 0..12", k));
  }
  c.gradcam = kv.get_bool("explain.gradcam", c.gradcam);
  c.alpha = kv.get_double("explain.alpha", c.alpha);
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("config key 'explain.alpha' must be in [0,1]");
  c.dump_heatmap_grid = kv.get_bool("explain.grid", c.dump_heatmap_grid);
  if (kv.contains("explain.class")) {
    c.explain_class = label_from_string(*kv.get("explain.class"));
    if (!c.explain_class) throw ConfigError("config key 'explain.class' names no class: '" + *kv.get("explain.class") + "'");
  }
  c.workers = int_key("infer.workers", c.workers);
  if (c.workers < 1) throw ConfigError("config key 'infer.workers' must be at least 1");
  return c;
}

void require_existing(const fs::path& p, const std::string& key) {
  if (p.empty()) throw ConfigError("config key '" + key + "' is required");
  if (!fs::exists(p)) throw ConfigError("config key '" + key + "': " + p.string() + " does not exist");
}

// ---------------------------------------------------------------- run manifest

namespace {

json hash_tree(const fs::path& p) {
  if (fs::is_regular_file(p)) return sha256_file(p);
  if (!fs::is_directory(p)) return nullptr;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[fs::relative(f, p).generic_string()] = sha256_file(f);
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

fs::path write_run_manifest(const RunRecord& record, const fs::path& dir) {
  if (dir.empty() || !fs::is_directory(dir)) {
    throw Error("run manifest: output directory " + dir.string() + " does not exist");
  }
  const std::string config_text = record.config.source.to_text();
  json datasets = json::object();
  for (const auto& d : record.datasets) datasets[d.generic_string()] = hash_tree(d);
  json checkpoints = json::object();
  for (const auto& c : record.checkpoints) checkpoints[c.generic_string()] = hash_tree(c);
  json outputs = json::object();
  for (const auto& o : record.outputs) outputs[o.generic_string()] = hash_tree(o);
  const json j = {{"format", "brainfusion-run"},
                  {"verb", record.verb},
                  {"config", config_text},
                  {"config_sha256", sha256_hex(config_text)},
                  {"seed", record.config.seed},
                  {"datasets", datasets},
                  {"checkpoints", checkpoints},
                  {"outputs", outputs},
                  {"metrics", record.metrics},
                  {"timestamp", utc_timestamp()}};
  const auto path = dir / "run_manifest.json";
  write_json_file(path, j);
  return path;
}

json read_run_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  if (!j.is_object() || j.value("format", "") != "brainfusion-run" || !j.contains("config") ||
      !j.at("config").is_string()) {
    throw ParseError(path.string() + " is not a run manifest", 0);
  }
  return j;
}

KeyValueConfig replay_config(const json& manifest) {
  return KeyValueConfig::parse(manifest.at("config").get<std::string>());
}

}  // namespace brainfusion
