#include "brainfusion/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "brainfusion/error.hpp"
#include "json.hpp"

namespace brainfusion {

long ConfusionMatrix::total() const noexcept {
  long n = 0;
  for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), 0L);
  return n;
}

long ConfusionMatrix::support(ClassLabel c) const noexcept {
  const auto& row = counts[to_index(c)];
  return std::accumulate(row.begin(), row.end(), 0L);
}

long ConfusionMatrix::predicted(ClassLabel c) const noexcept {
  long n = 0;
  for (const auto& row : counts) n += row[to_index(c)];
  return n;
}

long ConfusionMatrix::true_positives(ClassLabel c) const noexcept {
  return counts[to_index(c)][to_index(c)];
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw ConfigError(fmt::format("label sequences differ in length ({} vs {})", predicted.size(),
                                  truth.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || t >= static_cast<int>(kNumClasses) || p < 0 || p >= static_cast<int>(kNumClasses)) {
      throw ConfigError(fmt::format("label out of range at position {}", i));
    }
    ++cm.counts[t][p];
  }
  return cm;
}

ConfusionMatrix confusion_matrix(std::span<const ClassLabel> predicted,
                                 std::span<const ClassLabel> truth) {
  std::vector<int> p(predicted.size());
  std::vector<int> t(truth.size());
  std::transform(predicted.begin(), predicted.end(), p.begin(), to_index);
  std::transform(truth.begin(), truth.end(), t.begin(), to_index);
  return confusion_matrix(std::span<const int>(p), std::span<const int>(t));
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total <= 0) throw ConfigError("classification report of an empty confusion matrix");
  ClassificationReport r;
  r.total_support = total;
  long trace = 0;
  for (auto c : kAllClasses) {
    auto& m = r.per_class[to_index(c)];
    const long tp = cm.true_positives(c);
    const long predicted = cm.predicted(c);
    m.support = cm.support(c);
    trace += tp;
    if (predicted > 0) {
      m.precision = static_cast<double>(tp) / predicted;
    } else {
      m.precision_undefined = true;
    }
    if (m.support > 0) {
      m.recall = static_cast<double>(tp) / m.support;
    } else {
      m.recall_undefined = true;
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    r.macro_avg.precision += m.precision / kNumClasses;
    r.macro_avg.recall += m.recall / kNumClasses;
    r.macro_avg.f1 += m.f1 / kNumClasses;
    const double w = static_cast<double>(m.support) / total;
    r.weighted_avg.precision += w * m.precision;
    r.weighted_avg.recall += w * m.recall;
    r.weighted_avg.f1 += w * m.f1;
  }
  r.accuracy = static_cast<double>(trace) / total;
  return r;
}

std::string format_classification_report(const ClassificationReport& r, int decimals) {
  const auto num = [&](double v) { return fmt::format("{:.{}f}", v, decimals); };
  std::string out = fmt::format("{:<14}{:>11}{:>9}{:>11}{:>10}\n", "Class", "Precision", "Recall",
                                "F1-score", "Support");
  for (auto c : kAllClasses) {
    const auto& m = r.per_class[to_index(c)];
    out += fmt::format("{:<14}{:>11}{:>9}{:>11}{:>10}\n", display_name(c), num(m.precision),
                       num(m.recall), num(m.f1), m.support);
  }
  out += fmt::format("{:<14}{:>11}{:>9}{:>11}{:>10}\n", "Accuracy", "", "", num(r.accuracy),
                     r.total_support);
  out += fmt::format("{:<14}{:>11}{:>9}{:>11}{:>10}\n", "Macro Avg", num(r.macro_avg.precision),
                     num(r.macro_avg.recall), num(r.macro_avg.f1), r.total_support);
  out += fmt::format("{:<14}{:>11}{:>9}{:>11}{:>10}\n", "Weighted Avg",
                     num(r.weighted_avg.precision), num(r.weighted_avg.recall),
                     num(r.weighted_avg.f1), r.total_support);
  return out;
}

std::string classification_report_json(const ClassificationReport& r, const ConfusionMatrix& cm) {
  nlohmann::json j;
  for (auto c : kAllClasses) {
    const auto& m = r.per_class[to_index(c)];
    j["per_class"][std::string(class_name(c))] = {
        {"precision", m.precision}, {"recall", m.recall},       {"f1", m.f1},
        {"support", m.support},     {"precision_undefined", m.precision_undefined},
        {"recall_undefined", m.recall_undefined}, {"f1_undefined", m.f1_undefined}};
  }
  j["accuracy"] = r.accuracy;
  j["macro_avg"] = {{"precision", r.macro_avg.precision},
                    {"recall", r.macro_avg.recall},
                    {"f1", r.macro_avg.f1}};
  j["weighted_avg"] = {{"precision", r.weighted_avg.precision},
                       {"recall", r.weighted_avg.recall},
                       {"f1", r.weighted_avg.f1}};
  j["total_support"] = r.total_support;
  j["confusion_matrix"] = cm.counts;
  return j.dump(2) + "\n";
}

double iou(const Box& a, const Box& b) noexcept {
  const double ax1 = a.x1(), ay1 = a.y1(), ax2 = a.x2(), ay2 = a.y2();
  const double bx1 = b.x1(), by1 = b.y1(), bx2 = b.x2(), by2 = b.y2();
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  // Areas from the same corners so identical boxes give exactly 1.
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

MatchResult match_detections(std::span<const Detection> preds, std::span<const Box> gts,
                             double iou_threshold) {
  MatchResult r;
  r.order.resize(preds.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence() > preds[b].confidence();
  });
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t k : r.order) {
    const auto& p = preds[k].box;
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != p.class_id) continue;
      const double v = iou(p, gts[g]);
      if (v >= iou_threshold && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    r.matched_gt.push_back(best);
    r.is_tp.push_back(best >= 0);
    if (best >= 0) {
      taken[best] = true;
      ++r.true_positives;
    } else {
      ++r.false_positives;
    }
  }
  r.false_negatives = static_cast<int>(std::count(taken.begin(), taken.end(), false));
  return r;
}

std::vector<PrPoint> pr_curve(std::span<const RankedMatch> ranked, long instances) {
  std::vector<std::size_t> order(ranked.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranked[a].confidence > ranked[b].confidence;
  });
  std::vector<PrPoint> curve;
  curve.reserve(order.size());
  long tp = 0;
  long fp = 0;
  for (std::size_t k : order) {
    (ranked[k].tp ? tp : fp) += 1;
    curve.push_back({instances > 0 ? static_cast<double>(tp) / instances : 0.0,
                     static_cast<double>(tp) / (tp + fp)});
  }
  return curve;
}

std::optional<double> average_precision(std::span<const RankedMatch> ranked, long instances,
                                        ApMethod method) {
  if (instances <= 0) return std::nullopt;
  const auto curve = pr_curve(ranked, instances);
  // envelope[k] = max precision over points k..end
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t k = curve.size(); k-- > 0;) {
    running = std::max(running, curve[k].precision);
    envelope[k] = running;
  }
  if (method == ApMethod::interpolated_101) {
    double sum = 0.0;
    std::size_t k = 0;
    for (int i = 0; i <= 100; ++i) {
      const double r = i / 100.0;
      while (k < curve.size() && curve[k].recall < r) ++k;
      if (k < curve.size()) sum += envelope[k];
    }
    return sum / 101.0;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve[k].recall > prev_recall) {
      ap += (curve[k].recall - prev_recall) * envelope[k];
      prev_recall = curve[k].recall;
    }
  }
  return ap;
}

std::array<double, 10> coco_iou_thresholds() noexcept {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

DetectionReport detection_report(const ImageDetections& preds, const ImageGroundTruth& gts,
                                 double conf_threshold_for_pr, ApMethod method) {
  std::set<std::string> images;
  for (const auto& [k, v] : gts) images.insert(k);
  for (const auto& [k, v] : preds) images.insert(k);

  DetectionReport rep;
  std::set<std::string> images_with_gt;
  for (const auto& [img, boxes] : gts) {
    std::array<bool, kNumClasses> seen{};
    for (const auto& b : boxes) {
      ++rep.per_class[to_index(b.class_id)].instances;
      seen[to_index(b.class_id)] = true;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) rep.per_class[c].images += seen[c] ? 1 : 0;
    if (!boxes.empty()) images_with_gt.insert(img);
  }
  long total_instances = 0;
  for (const auto& row : rep.per_class) total_instances += row.instances;
  if (total_instances == 0) throw ConfigError("detection report needs at least one ground-truth box");

  static const std::vector<Detection> kNoPreds;
  static const std::vector<Box> kNoGts;
  const auto thresholds = coco_iou_thresholds();
  // ranked[t][c]: per-threshold, per-class global ranking.
  std::array<std::array<std::vector<RankedMatch>, kNumClasses>, 10> ranked;
  std::array<long, kNumClasses> tp_at_conf{};
  std::array<long, kNumClasses> pred_at_conf{};

  for (const auto& img : images) {
    const auto pit = preds.find(img);
    const auto git = gts.find(img);
    const auto& p = pit == preds.end() ? kNoPreds : pit->second;
    const auto& g = git == gts.end() ? kNoGts : git->second;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto m = match_detections(p, g, thresholds[t]);
      for (std::size_t k = 0; k < m.order.size(); ++k) {
        const auto& d = p[m.order[k]];
        ranked[t][to_index(d.box.class_id)].push_back({d.confidence(), m.is_tp[k]});
        if (t == 0 && d.confidence() >= conf_threshold_for_pr) {
          ++pred_at_conf[to_index(d.box.class_id)];
          tp_at_conf[to_index(d.box.class_id)] += m.is_tp[k] ? 1 : 0;
        }
      }
    }
  }

  int classes_present = 0;
  double sum_ap50 = 0.0;
  double sum_ap50_95 = 0.0;
  for (auto c : kAllClasses) {
    auto& row = rep.per_class[to_index(c)];
    const int ci = to_index(c);
    row.precision = pred_at_conf[ci] > 0 ? static_cast<double>(tp_at_conf[ci]) / pred_at_conf[ci] : 0.0;
    row.recall = row.instances > 0 ? static_cast<double>(tp_at_conf[ci]) / row.instances : 0.0;
    if (row.instances == 0) {
      rep.warnings.push_back(fmt::format("class {} has no ground-truth instances; AP undefined and "
                                         "excluded from mAP",
                                         class_name(c)));
      continue;
    }
    row.ap50 = average_precision(ranked[0][ci], row.instances, method);
    double sum = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      sum += *average_precision(ranked[t][ci], row.instances, method);
    }
    row.ap50_95 = sum / thresholds.size();
    ++classes_present;
    rep.all.precision += row.precision;
    rep.all.recall += row.recall;
    sum_ap50 += *row.ap50;
    sum_ap50_95 += *row.ap50_95;
  }
  rep.all.precision /= classes_present;
  rep.all.recall /= classes_present;
  rep.all.ap50 = sum_ap50 / classes_present;
  rep.all.ap50_95 = sum_ap50_95 / classes_present;
  rep.all.images = static_cast<long>(images_with_gt.size());
  rep.all.instances = total_instances;
  return rep;
}

std::string format_detection_report(const DetectionReport& r, int decimals) {
  const auto num = [&](const std::optional<double>& v) {
    return v ? fmt::format("{:.{}f}", *v, decimals) : std::string("-");
  };
  std::string out = fmt::format("{:<12}{:>8}{:>11}{:>11}{:>8}{:>10}{:>15}\n", "Class", "Images",
                                "Instances", "Precision", "Recall", "mAP@0.5", "mAP@0.5-0.95");
  const auto row = [&](std::string_view name, const DetectionClassRow& x) {
    return fmt::format("{:<12}{:>8}{:>11}{:>11}{:>8}{:>10}{:>15}\n", name, x.images, x.instances,
                       num(x.precision), num(x.recall), num(x.ap50), num(x.ap50_95));
  };
  for (auto c : kAllClasses) out += row(display_name(c), r.per_class[to_index(c)]);
  out += row("All", r.all);
  return out;
}

std::string detection_report_json(const DetectionReport& r) {
  const auto row = [](const DetectionClassRow& x) {
    nlohmann::json j = {{"images", x.images},
                        {"instances", x.instances},
                        {"precision", x.precision},
                        {"recall", x.recall}};
    j["ap50"] = x.ap50 ? nlohmann::json(*x.ap50) : nlohmann::json(nullptr);
    j["ap50_95"] = x.ap50_95 ? nlohmann::json(*x.ap50_95) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json j;
  for (auto c : kAllClasses) j["per_class"][std::string(class_name(c))] = row(r.per_class[to_index(c)]);
  j["all"] = row(r.all);
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

}  // namespace brainfusion
