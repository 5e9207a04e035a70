#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "brainfusion/augment.hpp"
#include "brainfusion/backbones.hpp"
#include "brainfusion/image.hpp"
#include "brainfusion/manifest.hpp"
#include "brainfusion/scores.hpp"

namespace brainfusion {

struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-7;
  /// An epoch improves only when val_loss < best - min_delta.
  double min_delta = 1e-4;
};

struct ClassifierConfig {
  BackboneId backbone = BackboneId::vgg16;
  int unfreeze_last_n = 5;
  int head_units = 256;
  double head_dropout = 0.5;
  int epochs = 100;
  double initial_lr = 1e-5;
  int batch_size = 32;
  int early_stop_patience = 10;
  PlateauConfig plateau;
  /// Square side of the model input. 224 except in reduced-size runs.
  int input_size = kClassifierInput.height;
  bool augment = true;
  bool balance = true;
  AugmentationPolicy augmentation;
  /// Fail instead of falling back to random initialization.
  bool require_pretrained = false;
  std::string weights_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const ClassifierConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

/// GAP -> BatchNorm -> dense(units) + ReLU -> dropout -> dense(4).
/// Produces logits; softmax is applied by the caller.
class ClassifierHeadImpl : public torch::nn::Module {
 public:
  ClassifierHeadImpl(std::int64_t in_features, std::int64_t units, double dropout);
  torch::Tensor forward(const torch::Tensor& pooled);

  torch::nn::BatchNorm1d norm{nullptr};
  torch::nn::Linear fc1{nullptr};
  torch::nn::Dropout drop{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(ClassifierHead);

class ClassifierNet : public torch::nn::Module {
 public:
  ClassifierNet(std::shared_ptr<Backbone> backbone, std::int64_t units, double dropout);

  /// x: N x 3 x S x S in [0,1]. Returns N x 4 logits.
  torch::Tensor forward(const torch::Tensor& x);
  /// Logits from the target-layer activation (the Grad-CAM path).
  torch::Tensor logits_from_feature_map(const torch::Tensor& fmap);
  torch::Tensor feature_map(const torch::Tensor& x);

  /// Keeps frozen normalization layers in inference mode.
  void train(bool on = true) override;

  std::shared_ptr<Backbone> backbone;
  ClassifierHead head{nullptr};
  std::vector<torch::nn::BatchNorm2d> frozen_norms;
};

struct LayerStatus {
  std::string name;
  bool trainable;
  std::int64_t parameters;
};

/// Model handle. predict/predict_batch may be called from several threads;
/// training requires exclusive use.
class Classifier {
 public:
  /// Builds the backbone, loads pretrained weights (or falls back to random
  /// initialization with a warning), applies the freezing rule and appends
  /// the head. Seeds LibTorch's generator with `seed` first.
  static Classifier build(const ClassifierConfig& config, std::uint64_t seed = 0);
  /// Loads a checkpoint directory written by save().
  static Classifier load(const std::filesystem::path& dir);

  void save(const std::filesystem::path& dir) const;

  /// img: input_size x input_size x 3 with values in [0,1]; else ShapeError.
  ClassScores predict(const ImageTensor& img) const;
  std::vector<ClassScores> predict_batch(std::span<const ImageTensor> imgs) const;
  ClassScores predict_path(const std::filesystem::path& image) const;

  /// Probabilities for an N x 3 x S x S batch.
  torch::Tensor probabilities(const torch::Tensor& batch) const;

  const ClassifierConfig& config() const noexcept { return config_; }
  ClassifierNet& net() noexcept { return *net_; }
  const std::shared_ptr<ClassifierNet>& net_ptr() const noexcept { return net_; }
  bool pretrained() const noexcept { return pretrained_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  std::vector<LayerStatus> backbone_layers() const;
  std::int64_t trainable_parameter_count() const;
  std::int64_t trainable_backbone_parameter_count() const;

  /// Writes the inference graph (input transform, backbone, head, softmax)
  /// in ONNX format. Throws ExportError for unsupported operators.
  void export_model(const std::filesystem::path& path) const;

 private:
  Classifier() = default;
  void apply_freezing();

  ClassifierConfig config_;
  std::shared_ptr<ClassifierNet> net_;
  bool pretrained_ = false;
  std::vector<std::string> warnings_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

/// Converts HWC [0,1] images to an N x 3 x H x W float tensor.
torch::Tensor to_batch(std::span<const ImageTensor> imgs);
torch::Tensor to_batch(const ImageTensor& img);

/// Reduce-on-plateau rule: after `patience` epochs without improvement the
/// rate is multiplied by `factor`, never dropping below `min_lr`.
class PlateauScheduler {
 public:
  PlateauScheduler(PlateauConfig cfg, double initial_lr) : cfg_(cfg), lr_(initial_lr) {}
  /// Feeds one epoch's val_loss; returns the lr for the next epoch.
  double step(double val_loss);
  double lr() const noexcept { return lr_; }

 private:
  PlateauConfig cfg_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}
  /// Returns true when training should stop after this epoch.
  bool step(double val_loss, int epoch);
  bool improved() const noexcept { return improved_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
  int best_epoch_ = 0;
  bool improved_ = false;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;  // rate used during the epoch

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  int stopped_epoch = 0;
  int best_epoch = 0;
  bool early_stopped = false;
  bool cached_features = false;
  std::vector<std::string> notes;

  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

nlohmann::json to_json(const TrainingLog& log);
TrainingLog training_log_from_json(const nlohmann::json& j);

struct TrainOptions {
  /// When set, the restored best model, config and log are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochLog&)> on_epoch;
  /// Decoded-image cache budget in bytes.
  std::size_t image_cache_bytes = std::size_t{1} << 30;
};

/// Fits `model` on the manifest's train split, validating on val. Uses the
/// optimisation fields of `config` (epochs, lr, batch, schedules,
/// augmentation, balancing); architecture fields come from the model.
/// With a frozen backbone and augmentation off, pooled backbone features
/// are computed once and only the head is trained.
/// Throws TrainingError on empty splits or a non-finite loss.
TrainingLog train(Classifier& model, const Manifest& manifest, const ClassifierConfig& config,
                  std::uint64_t seed, const TrainOptions& options = {});

/// Adam over the model's trainable parameters.
std::unique_ptr<torch::optim::Adam> make_optimizer(Classifier& model, double lr);

/// One optimisation step on a batch (N x 3 x S x S in [0,1], labels int64).
/// Returns the batch loss.
double train_step(Classifier& model, torch::optim::Optimizer& opt, const torch::Tensor& images,
                  const torch::Tensor& labels);

}  // namespace brainfusion
