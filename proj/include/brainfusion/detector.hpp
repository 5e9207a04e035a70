#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "brainfusion/box.hpp"
#include "brainfusion/image.hpp"
#include "brainfusion/manifest.hpp"
#include "brainfusion/metrics.hpp"

namespace brainfusion {

/// Training-time photometric and geometric jitter. Probabilities in [0,1].
struct DetectorAugmentation {
  double hflip = 0.5;
  double vflip = 0.0;
  /// Zoom factor drawn from [1 - scale, 1 + scale].
  double scale = 0.25;
  /// Additive offset drawn from [-brightness, brightness].
  double brightness = 0.1;
  /// Contrast gain drawn from [1 - contrast, 1 + contrast].
  double contrast = 0.2;
  double blur_prob = 0.1;
  double blur_sigma_max = 1.0;
};

struct DetectorConfig {
  /// "yolov8n" or "yolov8s".
  std::string variant = "yolov8n";
  int num_classes = static_cast<int>(kNumClasses);
  int epochs = 30;
  int batch_size = 16;
  int input_size = kDetectorInput.height;
  double lr0 = 0.002;
  /// Final lr is lr0 * lrf after linear decay.
  double lrf = 0.01;
  double weight_decay = 5e-4;
  double warmup_epochs = 3.0;
  double conf_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  int max_detections = 100;
  DetectorAugmentation augmentation;
  bool require_pretrained = false;
  std::string weights_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

/// Per-anchor predictions for a batch.
struct RawPredictions {
  torch::Tensor boxes;       // N x A x 4, xyxy in input pixels
  torch::Tensor cls_logits;  // N x A x C
};

class DetectorNet;

/// Greedy class-wise NMS. Visits detections by descending confidence (stable
/// for ties) and drops a detection whose IoU with a kept same-class one
/// exceeds `iou_threshold`. Output is in visiting order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Confidence filter (>= conf_threshold), NMS, truncation to max_detections
/// and clipping to the unit square. Boxes that clip to zero area are dropped.
std::vector<Detection> postprocess(const std::vector<Detection>& candidates, double conf_threshold,
                                   double iou_threshold, int max_detections);

/// Model handle. Inference calls are serialised internally.
class Detector {
 public:
  /// Random initialization seeded by `seed`, then `<weights_dir>/<variant>.pt`
  /// when present.
  static Detector build(const DetectorConfig& config, std::uint64_t seed = 0);
  /// Throws CheckpointError when the directory is missing or malformed.
  static Detector load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  /// Per-anchor best-class candidates in normalized coordinates with
  /// confidence >= min_confidence, before NMS. img must be
  /// input_size x input_size x 3 in [0,1]; else ShapeError.
  std::vector<Detection> candidates(const ImageTensor& img, double min_confidence = 1e-3) const;
  /// candidates + postprocess with the configured thresholds, or `conf`.
  std::vector<Detection> detect(const ImageTensor& img, std::optional<double> conf = std::nullopt) const;
  /// Decodes and resizes an image file before detect.
  std::vector<Detection> detect_path(const std::filesystem::path& image,
                                     std::optional<double> conf = std::nullopt) const;

  const DetectorConfig& config() const noexcept { return config_; }
  DetectorConfig& mutable_config() noexcept { return config_; }
  DetectorNet& net() noexcept { return *net_; }
  /// Parameters and buffers, for inspection.
  torch::nn::Module& module() const noexcept;
  bool pretrained() const noexcept { return pretrained_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::int64_t parameter_count() const;

  RawPredictions forward(const torch::Tensor& batch) const;

 private:
  Detector() = default;

  DetectorConfig config_;
  std::shared_ptr<DetectorNet> net_;
  bool pretrained_ = false;
  std::vector<std::string> warnings_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

struct DetectorEpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double box_loss = 0.0;
  double cls_loss = 0.0;
  double lr = 0.0;  // at the end of the epoch
  double val_map50 = 0.0;
  double val_map50_95 = 0.0;
  /// 0.1 * mAP@0.5 + 0.9 * mAP@0.5:0.95; the highest (latest on ties)
  /// selects the retained checkpoint.
  double fitness = 0.0;

  friend bool operator==(const DetectorEpochLog&, const DetectorEpochLog&) = default;
};

struct DetectorTrainingLog {
  std::vector<DetectorEpochLog> epochs;
  int best_epoch = 0;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const DetectorTrainingLog& log);

struct DetectorTrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const DetectorEpochLog&)> on_epoch;
  std::size_t image_cache_bytes = std::size_t{1} << 30;
};

struct DetectorTrainResult {
  Detector model;
  DetectorTrainingLog log;
};

/// Trains every layer on the manifest's train split and keeps the weights of
/// the epoch with the best validation fitness. Throws ConfigError for a
/// non-detection manifest or class count other than 4, TrainingError for
/// empty splits or a non-finite loss.
DetectorTrainResult train_detector(const Manifest& manifest, const DetectorConfig& config, std::uint64_t seed,
                                   const DetectorTrainOptions& options = {});

/// Runs `model` over the records of `split` and scores the result.
/// Predictions use confidence >= 0.001 for AP; P/R use the configured
/// threshold.
DetectionReport evaluate_detector(const Detector& model, const Manifest& manifest, Split split,
                                  ImageDetections* predictions_out = nullptr);

/// One JSON object per line: {image, class_id, cx, cy, w, h, confidence}.
void write_predictions_jsonl(const ImageDetections& preds, const std::filesystem::path& path);
/// Throws ParseError naming the line.
ImageDetections read_predictions_jsonl(const std::filesystem::path& path);

/// Ground truth per image path from a detection manifest split.
ImageGroundTruth ground_truth(const Manifest& manifest, Split split);

}  // namespace brainfusion
