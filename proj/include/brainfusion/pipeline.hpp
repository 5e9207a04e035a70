#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "brainfusion/classifier.hpp"
#include "brainfusion/config_file.hpp"
#include "brainfusion/data_catalog.hpp"
#include "brainfusion/detector.hpp"
#include "brainfusion/explain.hpp"
#include "brainfusion/metrics.hpp"

namespace brainfusion {

/// A decoded source image, RGB in [0,255] at its stored resolution.
struct PipelineImage {
  std::filesystem::path path;
  ImageTensor raw;
};

/// Throws DecodeError.
PipelineImage load_pipeline_image(const std::filesystem::path& path);

class ClassifierStage {
 public:
  virtual ~ClassifierStage() = default;
  virtual ClassScores classify(const PipelineImage& img) = 0;
  /// Grad-CAM at the source resolution; nullopt when the stage has no
  /// feature layer to explain.
  virtual std::optional<Heatmap> explain(const PipelineImage& img, ClassLabel target) = 0;
};

class DetectorStage {
 public:
  virtual ~DetectorStage() = default;
  virtual std::vector<Detection> detect(const PipelineImage& img) = 0;
};

/// Resizes to the model input size (224 by default) before predicting.
class ModelClassifierStage : public ClassifierStage {
 public:
  explicit ModelClassifierStage(Classifier model) : model_(std::move(model)) {}
  ClassScores classify(const PipelineImage& img) override;
  std::optional<Heatmap> explain(const PipelineImage& img, ClassLabel target) override;
  const Classifier& model() const noexcept { return model_; }

 private:
  Classifier model_;
  std::mutex explain_mu_;
};

/// Resizes the source image (not the classifier input) to the detector size.
class ModelDetectorStage : public DetectorStage {
 public:
  explicit ModelDetectorStage(Detector model) : model_(std::move(model)) {}
  std::vector<Detection> detect(const PipelineImage& img) override;

 private:
  Detector model_;
};

/// Canned outputs keyed by source file name, with a fallback. Counts calls.
class StubClassifierStage : public ClassifierStage {
 public:
  explicit StubClassifierStage(ClassScores fallback, std::map<std::string, ClassScores> by_name = {})
      : fallback_(fallback), by_name_(std::move(by_name)) {}
  ClassScores classify(const PipelineImage& img) override;
  std::optional<Heatmap> explain(const PipelineImage&, ClassLabel) override { return std::nullopt; }
  long calls() const noexcept { return calls_; }

 private:
  ClassScores fallback_;
  std::map<std::string, ClassScores> by_name_;
  std::atomic<long> calls_{0};
};

class StubDetectorStage : public DetectorStage {
 public:
  explicit StubDetectorStage(std::vector<Detection> fallback = {},
                             std::map<std::string, std::vector<Detection>> by_name = {})
      : fallback_(std::move(fallback)), by_name_(std::move(by_name)) {}
  std::vector<Detection> detect(const PipelineImage& img) override;
  long calls() const noexcept { return calls_; }

 private:
  std::vector<Detection> fallback_;
  std::map<std::string, std::vector<Detection>> by_name_;
  std::atomic<long> calls_{0};
};

/// Stub checkpoints are directories whose config.json carries a stub format
/// tag; the real loaders reject them.
void write_stub_classifier_checkpoint(const std::filesystem::path& dir, const ClassScores& fallback,
                                      const std::map<std::string, ClassScores>& by_name = {});
void write_stub_detector_checkpoint(const std::filesystem::path& dir, const std::vector<Detection>& fallback,
                                    const std::map<std::string, std::vector<Detection>>& by_name = {});

/// Dispatches on the checkpoint's format tag. Throws CheckpointError.
std::unique_ptr<ClassifierStage> load_classifier_stage(const std::filesystem::path& dir);
std::unique_ptr<DetectorStage> load_detector_stage(const std::filesystem::path& dir);

struct PipelineVerdict {
  std::string image;
  bool tumor_present = false;
  ClassLabel predicted_class = ClassLabel::no_tumor;
  ClassScores class_scores;
  std::vector<Detection> detections;
  bool disagreement = false;
  std::optional<std::string> overlay;
  std::optional<std::string> heatmap;

  friend bool operator==(const PipelineVerdict&, const PipelineVerdict&) = default;
};

nlohmann::json to_json(const PipelineVerdict& v);
/// Throws ParseError on schema violations.
PipelineVerdict verdict_from_json(const nlohmann::json& j);

struct PipelineOptions {
  /// Overlays are written here when set.
  std::optional<std::filesystem::path> output_dir;
  bool gradcam = false;
  double alpha = 0.4;
  bool dump_heatmap_grid = false;
};

/// Stage 1 classifies; a no_tumor argmax ends the run without calling the
/// detector. Otherwise stage 2 detects. The classifier's argmax is the final
/// label; `disagreement` flags a top-confidence detection of another class.
PipelineVerdict run_two_stage(const std::filesystem::path& image, ClassifierStage& classifier,
                              DetectorStage& detector, const PipelineOptions& options = {});

/// Verdicts in input order. Up to `workers` images are processed at once;
/// the stages must tolerate concurrent calls. The first failure (in input
/// order) is rethrown after all workers finish.
std::vector<PipelineVerdict> run_batch(std::span<const std::filesystem::path> images,
                                       ClassifierStage& classifier, DetectorStage& detector,
                                       const PipelineOptions& options = {}, int workers = 1);

// ---------------------------------------------------------------- evaluation

struct ClassificationPrediction {
  std::string image;
  ClassLabel truth = ClassLabel::glioma;
  ClassScores scores;

  friend bool operator==(const ClassificationPrediction&, const ClassificationPrediction&) = default;
};

std::vector<ClassificationPrediction> predict_split(ClassifierStage& stage, const Manifest& manifest, Split split);
/// One JSON object per line: {image, truth, predicted, scores:[4]}.
void write_classification_predictions(std::span<const ClassificationPrediction> preds,
                                      const std::filesystem::path& path);
/// Throws ParseError naming the line.
std::vector<ClassificationPrediction> read_classification_predictions(const std::filesystem::path& path);
ConfusionMatrix confusion_from_predictions(std::span<const ClassificationPrediction> preds);

// ---------------------------------------------------------------- run config

/// Everything a CLI verb may need, read from a flat key-value namespace.
struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::filesystem::path cls_checkpoint;
  std::filesystem::path det_checkpoint;
  std::filesystem::path image;
  std::filesystem::path predictions;
  CorpusKind kind = CorpusKind::classification;
  Split split = Split::test;
  std::uint64_t seed = 42;
  SplitRatios ratios;
  ClassifierConfig classifier;
  DetectorConfig detector;
  int cls_decimals = 2;
  int det_decimals = 3;
  bool gradcam = false;
  double alpha = 0.4;
  bool dump_heatmap_grid = false;
  int workers = 1;
  std::optional<ClassLabel> explain_class;
  /// The assignments this config was built from.
  KeyValueConfig source;
};

/// Every accepted key, e.g. "cls.lr" or "det.epochs".
const std::set<std::string>& run_config_keys();
/// Throws ConfigError naming the offending key.
RunConfig run_config_from(const KeyValueConfig& kv);
/// Throws ConfigError naming `key` when it is unset or does not exist.
void require_existing(const std::filesystem::path& p, const std::string& key);

// ---------------------------------------------------------------- run manifest

struct RunRecord {
  std::string verb;
  RunConfig config;
  std::vector<std::filesystem::path> datasets;
  std::vector<std::filesystem::path> checkpoints;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::filesystem::path> outputs;
};

/// Writes `<dir>/run_manifest.json` with the config text and hash, seed,
/// SHA-256 of every dataset manifest, checkpoint file and output, metric
/// summaries and a UTC timestamp. Throws Error when `dir` does not exist.
std::filesystem::path write_run_manifest(const RunRecord& record, const std::filesystem::path& dir);
/// Throws ParseError.
nlohmann::json read_run_manifest(const std::filesystem::path& path);
/// The stored assignments, for replay.
KeyValueConfig replay_config(const nlohmann::json& manifest);

}  // namespace brainfusion
