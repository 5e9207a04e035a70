#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brainfusion/box.hpp"
#include "brainfusion/labels.hpp"

namespace brainfusion {

// ---------------------------------------------------------------- classification

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const noexcept;
  long support(ClassLabel c) const noexcept;
  long predicted(ClassLabel c) const noexcept;
  long true_positives(ClassLabel c) const noexcept;
};

/// Label sequences as integer ids; throws ConfigError on a length mismatch or
/// an id outside 0..3.
ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth);
ConfusionMatrix confusion_matrix(std::span<const ClassLabel> predicted,
                                 std::span<const ClassLabel> truth);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  /// Set when the metric's denominator was zero and 0 was substituted.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct AveragedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassificationReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  double accuracy = 0.0;
  AveragedMetrics macro_avg;
  AveragedMetrics weighted_avg;
  long total_support = 0;
};

/// Per-class precision/recall/F1 with the zero-division convention metric = 0.
/// Throws ConfigError on an empty matrix.
ClassificationReport classification_report(const ConfusionMatrix& cm);

/// Aligned table: Precision / Recall / F1-score / Support per class, then
/// Accuracy, Macro Avg and Weighted Avg rows, values at `decimals`.
std::string format_classification_report(const ClassificationReport& r, int decimals = 2);
std::string classification_report_json(const ClassificationReport& r, const ConfusionMatrix& cm);

// ---------------------------------------------------------------- detection

double iou(const Box& a, const Box& b) noexcept;

struct MatchResult {
  /// Indices into the input prediction list, in descending-confidence order
  /// (stable for ties).
  std::vector<std::size_t> order;
  /// is_tp[k] refers to prediction order[k].
  std::vector<bool> is_tp;
  /// matched_gt[k] is the ground-truth index matched by order[k], or -1.
  std::vector<int> matched_gt;
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
};

/// Greedy matching: each prediction, by descending confidence, takes the
/// unmatched same-class ground truth with the highest IoU >= threshold
/// (ties go to the lowest ground-truth index).
MatchResult match_detections(std::span<const Detection> preds, std::span<const Box> gts,
                             double iou_threshold);

enum class ApMethod {
  /// Mean of interpolated precision at recall 0.00, 0.01, ..., 1.00.
  interpolated_101,
  /// Area under the monotone precision envelope (all recall points).
  all_points,
};

struct RankedMatch {
  double confidence;
  bool tp;
};

struct PrPoint {
  double recall;
  double precision;
};

/// Cumulative precision/recall down a ranking sorted by descending
/// confidence (stable).
std::vector<PrPoint> pr_curve(std::span<const RankedMatch> ranked, long instances);

/// nullopt when `instances` is 0.
std::optional<double> average_precision(std::span<const RankedMatch> ranked, long instances,
                                        ApMethod method = ApMethod::interpolated_101);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> coco_iou_thresholds() noexcept;

struct DetectionClassRow {
  long images = 0;
  long instances = 0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> ap50;
  std::optional<double> ap50_95;
};

struct DetectionReport {
  std::array<DetectionClassRow, kNumClasses> per_class{};
  /// images = unique images with any ground truth; P/R/AP are unweighted means
  /// over classes with instances.
  DetectionClassRow all;
  std::vector<std::string> warnings;
};

using ImageDetections = std::map<std::string, std::vector<Detection>>;
using ImageGroundTruth = std::map<std::string, std::vector<Box>>;

/// Images are visited in key order; within the global per-class ranking,
/// equal confidences keep image order, then per-image prediction order.
/// Throws ConfigError when there are no ground-truth boxes.
DetectionReport detection_report(const ImageDetections& preds, const ImageGroundTruth& gts,
                                 double conf_threshold_for_pr,
                                 ApMethod method = ApMethod::interpolated_101);

/// Class / Images / Instances / Precision / Recall / mAP@0.5 / mAP@0.5-0.95.
std::string format_detection_report(const DetectionReport& r, int decimals = 3);
std::string detection_report_json(const DetectionReport& r);

}  // namespace brainfusion
