#include "brainfusion/classifier.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "brainfusion/data_catalog.hpp"
#include "brainfusion/error.hpp"
#include "brainfusion/onnx_export.hpp"

namespace brainfusion {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kCheckpointFormat = "brainfusion-classifier";

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("invalid classifier config: " + field + " " + rule);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw CheckpointError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw CheckpointError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  torch::NoGradGuard g;
  for (auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& state) {
  torch::NoGradGuard g;
  std::size_t k = 0;
  for (auto& p : m.parameters()) p.copy_(state.at(k++));
  for (auto& b : m.buffers()) b.copy_(state.at(k++));
}

/// Batch boundaries of size `batch`; a trailing singleton joins the previous
/// batch so batch-statistics layers never see one sample.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) out.emplace_back(i, std::min(n, i + batch));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

class ImageSource {
 public:
  ImageSource(const Manifest& m, int size, std::size_t budget_bytes, std::size_t expected)
      : m_(m), size_(size) {
    const std::size_t per = static_cast<std::size_t>(size) * size * 3 * sizeof(float);
    cache_ = per * expected <= budget_bytes;
  }

  ImageTensor get(std::size_t index) {
    if (cache_) {
      if (auto it = images_.find(index); it != images_.end()) return it->second;
    }
    auto img = normalize(decode_and_resize(m_.records()[index].image_path, {size_, size_}));
    if (cache_) images_.emplace(index, img);
    return img;
  }

 private:
  const Manifest& m_;
  int size_;
  bool cache_;
  std::unordered_map<std::size_t, ImageTensor> images_;
};

torch::Tensor labels_tensor(const Manifest& m, const std::vector<std::size_t>& idx) {
  std::vector<std::int64_t> v;
  v.reserve(idx.size());
  for (auto i : idx) v.push_back(to_index(m.records()[i].label));
  return torch::tensor(v, torch::kInt64);
}

void check_finite(double loss, int epoch, const char* phase) {
  if (!std::isfinite(loss)) {
    throw TrainingError(fmt::format("non-finite {} loss ({}) at epoch {}; lower initial_lr or check inputs",
                                    phase, loss, epoch));
  }
}

}  // namespace

// ------------------------------------------------------------------ config

void ClassifierConfig::validate() const {
  require(unfreeze_last_n >= 0, "unfreeze_last_n", "must be >= 0");
  require(head_units >= 1, "head_units", "must be >= 1");
  require(head_dropout >= 0.0 && head_dropout < 1.0, "head_dropout", "must be in [0,1)");
  require(epochs >= 1, "epochs", "must be >= 1");
  require(initial_lr > 0.0 && std::isfinite(initial_lr), "initial_lr", "must be > 0");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(early_stop_patience >= 1, "early_stop_patience", "must be >= 1");
  require(plateau.factor > 0.0 && plateau.factor < 1.0, "plateau.factor", "must be in (0,1)");
  require(plateau.patience >= 1, "plateau.patience", "must be >= 1");
  require(plateau.min_lr >= 0.0, "plateau.min_lr", "must be >= 0");
  require(plateau.min_delta >= 0.0, "plateau.min_delta", "must be >= 0");
  require(input_size >= 32 && input_size % 32 == 0, "input_size", "must be a positive multiple of 32");
  augmentation.validate();
}

json to_json(const ClassifierConfig& c) {
  return {{"backbone", backbone_name(c.backbone)},
          {"unfreeze_last_n", c.unfreeze_last_n},
          {"head_units", c.head_units},
          {"head_dropout", c.head_dropout},
          {"epochs", c.epochs},
          {"initial_lr", c.initial_lr},
          {"batch_size", c.batch_size},
          {"early_stop_patience", c.early_stop_patience},
          {"plateau",
           {{"factor", c.plateau.factor},
            {"patience", c.plateau.patience},
            {"min_lr", c.plateau.min_lr},
            {"min_delta", c.plateau.min_delta}}},
          {"input_size", c.input_size},
          {"augment", c.augment},
          {"balance", c.balance},
          {"augmentation",
           {{"shear_limit", c.augmentation.shear_limit},
            {"zoom_limit", c.augmentation.zoom_limit},
            {"hflip", c.augmentation.hflip},
            {"vflip", c.augmentation.vflip}}},
          {"require_pretrained", c.require_pretrained},
          {"weights_dir", c.weights_dir}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  const auto defaults = to_json(c);
  if (!j.is_object()) throw ConfigError("classifier config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown classifier config key '" + key + "'");
    if (defaults[key].is_object()) {
      for (const auto& [sub, v] : value.items()) {
        if (!defaults[key].contains(sub)) throw ConfigError("unknown classifier config key '" + key + "." + sub + "'");
      }
    }
  }
  try {
    if (j.contains("backbone")) c.backbone = backbone_from_string(j["backbone"].get<std::string>());
    auto get = [&](const char* k, auto& dst) {
      if (j.contains(k)) dst = j[k].get<std::decay_t<decltype(dst)>>();
    };
    get("unfreeze_last_n", c.unfreeze_last_n);
    get("head_units", c.head_units);
    get("head_dropout", c.head_dropout);
    get("epochs", c.epochs);
    get("initial_lr", c.initial_lr);
    get("batch_size", c.batch_size);
    get("early_stop_patience", c.early_stop_patience);
    get("input_size", c.input_size);
    get("augment", c.augment);
    get("balance", c.balance);
    get("require_pretrained", c.require_pretrained);
    get("weights_dir", c.weights_dir);
    if (j.contains("plateau")) {
      const auto& p = j["plateau"];
      c.plateau.factor = p.value("factor", c.plateau.factor);
      c.plateau.patience = p.value("patience", c.plateau.patience);
      c.plateau.min_lr = p.value("min_lr", c.plateau.min_lr);
      c.plateau.min_delta = p.value("min_delta", c.plateau.min_delta);
    }
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      c.augmentation.shear_limit = a.value("shear_limit", c.augmentation.shear_limit);
      c.augmentation.zoom_limit = a.value("zoom_limit", c.augmentation.zoom_limit);
      c.augmentation.hflip = a.value("hflip", c.augmentation.hflip);
      c.augmentation.vflip = a.value("vflip", c.augmentation.vflip);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------------ network

ClassifierHeadImpl::ClassifierHeadImpl(std::int64_t in_features, std::int64_t units, double dropout) {
  norm = register_module("norm", torch::nn::BatchNorm1d(in_features));
  fc1 = register_module("fc1", torch::nn::Linear(in_features, units));
  drop = register_module("drop", torch::nn::Dropout(dropout));
  fc2 = register_module("fc2", torch::nn::Linear(units, static_cast<std::int64_t>(kNumClasses)));
}

torch::Tensor ClassifierHeadImpl::forward(const torch::Tensor& pooled) {
  return fc2(drop(torch::relu(fc1(norm(pooled)))));
}

ClassifierNet::ClassifierNet(std::shared_ptr<Backbone> bb, std::int64_t units, double dropout) {
  backbone = register_module("backbone", std::move(bb));
  head = register_module("head", ClassifierHead(backbone->feature_channels(), units, dropout));
}

torch::Tensor ClassifierNet::feature_map(const torch::Tensor& x) {
  return backbone->feature_map(backbone->preprocess(x));
}

torch::Tensor ClassifierNet::logits_from_feature_map(const torch::Tensor& fmap) {
  return head->forward(backbone->post_features(fmap).mean({2, 3}));
}

torch::Tensor ClassifierNet::forward(const torch::Tensor& x) { return logits_from_feature_map(feature_map(x)); }

void ClassifierNet::train(bool on) {
  torch::nn::Module::train(on);
  for (auto& bn : frozen_norms) bn->eval();
}

// ------------------------------------------------------------------ handle

torch::Tensor to_batch(std::span<const ImageTensor> imgs) {
  if (imgs.empty()) throw ShapeError("empty image batch");
  const int h = imgs.front().height();
  const int w = imgs.front().width();
  auto out = torch::empty({static_cast<std::int64_t>(imgs.size()), h, w, 3}, torch::kFloat32);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i].height() != h || imgs[i].width() != w) throw ShapeError("images in a batch differ in size");
    std::copy(imgs[i].data().begin(), imgs[i].data().end(), out[static_cast<std::int64_t>(i)].data_ptr<float>());
  }
  return out.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor to_batch(const ImageTensor& img) { return to_batch(std::span<const ImageTensor>(&img, 1)); }

Classifier Classifier::build(const ClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  Classifier c;
  c.config_ = config;
  torch::manual_seed(seed);
  auto bb = make_backbone(config.backbone);
  const auto loaded = load_pretrained(*bb, resolve_weights_dir(config.weights_dir));
  c.pretrained_ = loaded.loaded;
  if (!loaded.loaded) {
    if (config.require_pretrained) throw CheckpointError("pretrained weights required: " + loaded.warning);
    c.warnings_.push_back("pretrained=false: " + loaded.warning);
  }
  c.net_ = std::make_shared<ClassifierNet>(bb, config.head_units, config.head_dropout);
  c.apply_freezing();
  return c;
}

void Classifier::apply_freezing() {
  auto layers = net_->backbone->weight_layers();
  for (auto& p : net_->backbone->parameters()) p.set_requires_grad(false);
  net_->frozen_norms.clear();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(config_.unfreeze_last_n), layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool trainable = i >= layers.size() - n;
    for (auto& p : layers[i].parameters) p.set_requires_grad(trainable);
    if (!trainable) {
      for (auto& bn : layers[i].norms) net_->frozen_norms.push_back(bn);
    }
  }
  for (auto& p : net_->head->parameters()) p.set_requires_grad(true);
  net_->eval();
}

std::vector<LayerStatus> Classifier::backbone_layers() const {
  std::vector<LayerStatus> out;
  for (const auto& l : net_->backbone->weight_layers()) {
    std::int64_t count = 0;
    bool trainable = !l.parameters.empty();
    for (const auto& p : l.parameters) {
      count += p.numel();
      trainable = trainable && p.requires_grad();
    }
    out.push_back({l.name, trainable, count});
  }
  return out;
}

std::int64_t Classifier::trainable_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net_->parameters()) {
    if (p.requires_grad()) n += p.numel();
  }
  return n;
}

std::int64_t Classifier::trainable_backbone_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net_->backbone->parameters()) {
    if (p.requires_grad()) n += p.numel();
  }
  return n;
}

torch::Tensor Classifier::probabilities(const torch::Tensor& batch) const {
  const auto s = config_.input_size;
  if (batch.dim() != 4 || batch.size(1) != 3 || batch.size(2) != s || batch.size(3) != s) {
    throw ShapeError(fmt::format("classifier expects N x 3 x {} x {} input", s, s));
  }
  std::lock_guard lock(*mu_);
  torch::NoGradGuard no_grad;
  net_->eval();
  return torch::softmax(net_->forward(batch).to(torch::kFloat64), 1);
}

ClassScores Classifier::predict(const ImageTensor& img) const { return predict_batch({&img, 1}).front(); }

std::vector<ClassScores> Classifier::predict_batch(std::span<const ImageTensor> imgs) const {
  const auto s = config_.input_size;
  for (const auto& img : imgs) {
    if (img.height() != s || img.width() != s) {
      throw ShapeError(fmt::format("classifier expects {}x{}x3 input, got {}x{}x3", s, s, img.height(), img.width()));
    }
  }
  std::vector<ClassScores> out;
  if (imgs.empty()) return out;
  const auto probs = probabilities(to_batch(imgs)).contiguous();
  const auto* p = probs.data_ptr<double>();
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    ClassScores cs;
    std::copy(p + i * kNumClasses, p + (i + 1) * kNumClasses, cs.probs.begin());
    out.push_back(cs);
  }
  return out;
}

ClassScores Classifier::predict_path(const fs::path& image) const {
  return predict(normalize(decode_and_resize(image, {config_.input_size, config_.input_size})));
}

void Classifier::save(const fs::path& dir) const {
  fs::create_directories(dir);
  auto j = json{{"format", kCheckpointFormat}, {"pretrained", pretrained_}, {"config", to_json(config_)}};
  write_json(dir / "config.json", j);
  torch::serialize::OutputArchive archive;
  net_->save(archive);
  archive.save_to((dir / "weights.pt").string());
}

Classifier Classifier::load(const fs::path& dir) {
  const auto j = read_json(dir / "config.json");
  if (j.value("format", "") != kCheckpointFormat) {
    throw CheckpointError((dir / "config.json").string() + " is not a classifier checkpoint");
  }
  Classifier c;
  c.config_ = classifier_config_from_json(j.at("config"));
  c.pretrained_ = j.value("pretrained", false);
  torch::manual_seed(0);
  c.net_ = std::make_shared<ClassifierNet>(make_backbone(c.config_.backbone), c.config_.head_units,
                                           c.config_.head_dropout);
  const auto weights = dir / "weights.pt";
  if (!fs::exists(weights)) throw CheckpointError(weights.string() + " not found");
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(weights.string());
    c.net_->load(archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot load " + weights.string() + ": " + e.what_without_backtrace());
  }
  c.apply_freezing();
  return c;
}

void Classifier::export_model(const fs::path& path) const {
  std::lock_guard lock(*mu_);
  const auto s = config_.input_size;
  onnx::TorchGraph g("brainfusion_classifier");
  g.builder().input("input", {-1, 3, s, s});
  auto x = net_->backbone->export_graph(g, "input");
  x = g.flatten(g.global_average_pool(x));
  const auto& head = net_->head;
  x = g.batch_norm(head->norm, x);
  x = g.relu(g.linear(head->fc1, x));
  x = g.softmax(g.linear(head->fc2, x), 1);
  g.builder().output(x, {-1, static_cast<std::int64_t>(kNumClasses)});
  g.builder().metadata("backbone", std::string(backbone_name(config_.backbone)));
  g.builder().metadata("input_size", std::to_string(s));
  g.builder().metadata("input_range", "[0,1] RGB NCHW");
  g.builder().metadata("classes", "glioma,meningioma,no_tumor,pituitary");
  onnx::write_model(g.builder().model(), path);
}

// ------------------------------------------------------------------ schedules

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - cfg_.min_delta) {
    best_ = val_loss;
    wait_ = 0;
    return lr_;
  }
  if (++wait_ >= cfg_.patience) {
    lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
    wait_ = 0;
  }
  return lr_;
}

bool EarlyStopping::step(double val_loss, int epoch) {
  improved_ = val_loss < best_ - min_delta_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return false;
  }
  return ++wait_ >= patience_;
}

// ------------------------------------------------------------------ log I/O

json to_json(const TrainingLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"lr", e.lr}});
  }
  return {{"epochs", epochs},
          {"stopped_epoch", log.stopped_epoch},
          {"best_epoch", log.best_epoch},
          {"early_stopped", log.early_stopped},
          {"cached_features", log.cached_features},
          {"notes", log.notes}};
}

TrainingLog training_log_from_json(const json& j) {
  TrainingLog log;
  for (const auto& e : j.at("epochs")) {
    log.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                          e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                          e.at("val_accuracy").get<double>(), e.at("lr").get<double>()});
  }
  log.stopped_epoch = j.at("stopped_epoch").get<int>();
  log.best_epoch = j.at("best_epoch").get<int>();
  log.early_stopped = j.value("early_stopped", false);
  log.cached_features = j.value("cached_features", false);
  log.notes = j.value("notes", std::vector<std::string>{});
  return log;
}

// ------------------------------------------------------------------ training

std::unique_ptr<torch::optim::Adam> make_optimizer(Classifier& model, double lr) {
  std::vector<torch::Tensor> params;
  for (auto& p : model.net().parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  return std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(lr));
}

double train_step(Classifier& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                  const torch::Tensor& labels) {
  auto& net = model.net();
  net.train();
  opt.zero_grad();
  auto loss = torch::nn::functional::cross_entropy(net.forward(images), labels);
  loss.backward();
  opt.step();
  return loss.item<double>();
}

namespace {

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

}  // namespace

TrainingLog train(Classifier& model, const Manifest& manifest, const ClassifierConfig& config, std::uint64_t seed,
                  const TrainOptions& options) {
  config.validate();
  const auto train_idx = manifest.indices_in(Split::train);
  const auto val_idx = manifest.indices_in(Split::val);
  if (train_idx.empty()) throw TrainingError("train split is empty");
  if (val_idx.empty()) throw TrainingError("val split is empty");

  std::mt19937_64 rng(seed);
  torch::manual_seed(seed);
  const auto quotas = config.balance ? balance_plan(manifest) : std::map<ClassLabel, std::size_t>{};
  auto& net = model.net();
  const int size = model.config().input_size;
  const bool cache_features = model.trainable_backbone_parameter_count() == 0 && !config.augment;

  TrainingLog log;
  log.cached_features = cache_features;
  for (const auto& w : model.warnings()) log.notes.push_back(w);

  ImageSource images(manifest, size, options.image_cache_bytes, train_idx.size() + val_idx.size());
  auto load_batch = [&](const std::vector<std::size_t>& idx, bool augment) {
    std::vector<ImageTensor> imgs;
    imgs.reserve(idx.size());
    for (auto i : idx) {
      auto img = images.get(i);
      imgs.push_back(augment ? random_augment(img, config.augmentation, rng) : std::move(img));
    }
    return to_batch(imgs);
  };

  // Pooled backbone features per record, for the frozen-backbone path.
  std::unordered_map<std::size_t, torch::Tensor> features;
  if (cache_features) {
    torch::NoGradGuard no_grad;
    net.eval();
    std::vector<std::size_t> all = train_idx;
    all.insert(all.end(), val_idx.begin(), val_idx.end());
    for (auto [b, e] : batches(all.size(), static_cast<std::size_t>(config.batch_size))) {
      std::vector<std::size_t> idx(all.begin() + b, all.begin() + e);
      const auto pooled = net.backbone->pooled_features(load_batch(idx, false));
      for (std::size_t k = 0; k < idx.size(); ++k) features[idx[k]] = pooled[static_cast<std::int64_t>(k)].clone();
    }
  }
  auto feature_batch = [&](const std::vector<std::size_t>& idx) {
    std::vector<torch::Tensor> rows;
    for (auto i : idx) rows.push_back(features.at(i));
    return torch::stack(rows);
  };

  auto optimizer = make_optimizer(model, config.initial_lr);
  PlateauScheduler scheduler(config.plateau, config.initial_lr);
  EarlyStopping stopper(config.early_stop_patience, config.plateau.min_delta);
  std::vector<torch::Tensor> best_state = snapshot(net);
  double lr = config.initial_lr;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto plan = build_epoch_plan(manifest, quotas, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (auto [b, e] : batches(plan.size(), static_cast<std::size_t>(config.batch_size))) {
      std::vector<std::size_t> idx;
      for (std::size_t k = b; k < e; ++k) idx.push_back(plan[k].record_index);
      const auto labels = labels_tensor(manifest, idx);
      torch::Tensor logits;
      net.train();
      optimizer->zero_grad();
      if (cache_features) {
        logits = net.head->forward(feature_batch(idx));
      } else {
        logits = net.forward(load_batch(idx, config.augment));
      }
      auto loss = torch::nn::functional::cross_entropy(logits, labels);
      const double lv = loss.item<double>();
      check_finite(lv, epoch, "train");
      loss.backward();
      optimizer->step();
      loss_sum += lv * static_cast<double>(idx.size());
      correct += static_cast<std::size_t>(logits.argmax(1).eq(labels).sum().item<std::int64_t>());
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(plan.size());
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(plan.size());
    {
      torch::NoGradGuard no_grad;
      net.eval();
      double vloss = 0.0;
      std::size_t vcorrect = 0;
      for (auto [b, e] : batches(val_idx.size(), static_cast<std::size_t>(config.batch_size))) {
        std::vector<std::size_t> idx(val_idx.begin() + b, val_idx.begin() + e);
        const auto labels = labels_tensor(manifest, idx);
        const auto logits = cache_features ? net.head->forward(feature_batch(idx)) : net.forward(load_batch(idx, false));
        vloss += torch::nn::functional::cross_entropy(logits.to(torch::kFloat64), labels,
                                                      torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum))
                     .item<double>();
        vcorrect += static_cast<std::size_t>(logits.argmax(1).eq(labels).sum().item<std::int64_t>());
      }
      entry.val_loss = vloss / static_cast<double>(val_idx.size());
      entry.val_accuracy = static_cast<double>(vcorrect) / static_cast<double>(val_idx.size());
    }
    check_finite(entry.val_loss, epoch, "validation");
    log.epochs.push_back(entry);
    log.stopped_epoch = epoch;
    if (options.on_epoch) options.on_epoch(entry);

    const bool stop = stopper.step(entry.val_loss, epoch);
    if (stopper.improved()) best_state = snapshot(net);
    lr = scheduler.step(entry.val_loss);
    set_lr(*optimizer, lr);
    if (stop) {
      log.early_stopped = true;
      break;
    }
  }

  restore(net, best_state);
  net.eval();
  log.best_epoch = stopper.best_epoch();
  if (options.checkpoint_dir) {
    model.save(*options.checkpoint_dir);
    write_json(*options.checkpoint_dir / "training_log.json", to_json(log));
  }
  return log;
}

}  // namespace brainfusion
