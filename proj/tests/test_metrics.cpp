#include <gtest/gtest.h>

#include <fmt/format.h>

#include <algorithm>
#include <random>

#include "brainfusion/error.hpp"
#include "brainfusion/metrics.hpp"
#include "detection_oracle.hpp"

using namespace brainfusion;

namespace {

Box make_box(int cls, double cx, double cy, double w, double h) {
  return Box{static_cast<ClassLabel>(cls), cx, cy, w, h, std::nullopt};
}

Detection det(int cls, double cx, double cy, double w, double h, double conf) {
  Box b = make_box(cls, cx, cy, w, h);
  b.confidence = conf;
  return {b};
}

/// Published-report fixture: supports 300/306/405/300 with three glioma and three
/// meningioma misses.
ConfusionMatrix table_ii_matrix() {
  ConfusionMatrix cm;
  cm.counts = {{{297, 3, 0, 0}, {1, 303, 0, 2}, {0, 0, 405, 0}, {0, 0, 0, 300}}};
  return cm;
}

std::string r2(double v) { return fmt::format("{:.2f}", v); }

}  // namespace

TEST(ConfusionMatrix, DiagonalWhenAllCorrect) {
  const std::vector<int> y = {0, 1, 2, 3, 3, 2};
  const auto cm = confusion_matrix(std::span<const int>(y), std::span<const int>(y));
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 4; ++p) EXPECT_EQ(cm.counts[t][p], t == p ? std::count(y.begin(), y.end(), t) : 0);
}

TEST(ConfusionMatrix, DirectTally) {
  const std::vector<ClassLabel> pred = {ClassLabel::glioma, ClassLabel::glioma};
  const std::vector<ClassLabel> truth = {ClassLabel::glioma, ClassLabel::meningioma};
  const auto cm = confusion_matrix(std::span<const ClassLabel>(pred), std::span<const ClassLabel>(truth));
  EXPECT_EQ(cm.counts[0][0], 1);
  EXPECT_EQ(cm.counts[1][0], 1);
  EXPECT_EQ(cm.total(), 2);
}

TEST(ConfusionMatrix, MatchesBruteForceTally) {
  std::mt19937_64 rng(17);
  std::vector<int> pred(1000), truth(1000);
  for (int i = 0; i < 1000; ++i) {
    pred[i] = static_cast<int>(rng() % 4);
    truth[i] = static_cast<int>(rng() % 4);
  }
  const auto cm = confusion_matrix(std::span<const int>(pred), std::span<const int>(truth));
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 4; ++p) {
      long n = 0;
      for (int i = 0; i < 1000; ++i) n += (truth[i] == t && pred[i] == p);
      EXPECT_EQ(cm.counts[t][p], n);
    }
}

TEST(ConfusionMatrix, Errors) {
  const std::vector<int> a = {0, 1}, b = {0}, bad = {0, 4};
  EXPECT_THROW(confusion_matrix(std::span<const int>(a), std::span<const int>(b)), ConfigError);
  EXPECT_THROW(confusion_matrix(std::span<const int>(bad), std::span<const int>(a)), ConfigError);
}

TEST(ClassificationReport, ReproducesPublishedRounding) {
  const auto r = classification_report(table_ii_matrix());
  const auto& g = r.per_class[0];
  const auto& m = r.per_class[1];
  const auto& n = r.per_class[2];
  const auto& p = r.per_class[3];
  EXPECT_EQ(r2(g.precision), "1.00");
  EXPECT_EQ(r2(g.recall), "0.99");
  EXPECT_EQ(r2(g.f1), "0.99");
  EXPECT_EQ(r2(m.precision), "0.99");
  EXPECT_EQ(r2(m.recall), "0.99");
  EXPECT_EQ(r2(m.f1), "0.99");
  EXPECT_EQ(r2(n.precision), "1.00");
  EXPECT_EQ(r2(n.recall), "1.00");
  EXPECT_EQ(r2(n.f1), "1.00");
  EXPECT_EQ(r2(p.precision), "0.99");
  EXPECT_EQ(r2(p.recall), "1.00");
  EXPECT_EQ(r2(p.f1), "1.00");
  EXPECT_EQ((std::array<long, 4>{g.support, m.support, n.support, p.support}),
            (std::array<long, 4>{300, 306, 405, 300}));
  EXPECT_EQ(r.total_support, 1311);
  EXPECT_EQ(r2(r.accuracy), "1.00");
  EXPECT_EQ(r2(r.macro_avg.precision), "1.00");
  EXPECT_EQ(r2(r.macro_avg.recall), "1.00");
  EXPECT_EQ(r2(r.macro_avg.f1), "1.00");
  EXPECT_EQ(r2(r.weighted_avg.precision), "1.00");
  EXPECT_EQ(r2(r.weighted_avg.recall), "1.00");
  EXPECT_EQ(r2(r.weighted_avg.f1), "1.00");
  const auto table = format_classification_report(r);
  for (const char* col : {"Precision", "Recall", "F1-score", "Support", "Accuracy", "Macro Avg", "Weighted Avg"}) {
    EXPECT_NE(table.find(col), std::string::npos) << col;
  }
}

TEST(ClassificationReport, PerfectAndNeverPredicted) {
  ConfusionMatrix perfect;
  for (int c = 0; c < 4; ++c) perfect.counts[c][c] = 5 + c;
  const auto r = classification_report(perfect);
  for (const auto& m : r.per_class) {
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
  }
  EXPECT_EQ(r.accuracy, 1.0);

  ConfusionMatrix cm;
  cm.counts[0][1] = 4;  // glioma never predicted
  cm.counts[1][1] = 6;
  const auto q = classification_report(cm);
  EXPECT_EQ(q.per_class[0].precision, 0.0);
  EXPECT_TRUE(q.per_class[0].precision_undefined);
  EXPECT_EQ(q.per_class[0].recall, 0.0);
  EXPECT_EQ(q.per_class[0].f1, 0.0);
  EXPECT_TRUE(q.per_class[2].recall_undefined);
  EXPECT_THROW(classification_report(ConfusionMatrix{}), ConfigError);
}

TEST(ClassificationReportProperty, Invariants) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    ConfusionMatrix cm;
    for (auto& row : cm.counts)
      for (auto& v : row) v = static_cast<long>(rng() % 20);
    cm.counts[0][0] += 1;
    const auto r = classification_report(cm);
    EXPECT_NEAR(r.accuracy, r.weighted_avg.recall, 1e-12);
    for (const auto& m : r.per_class) {
      for (double v : {m.precision, m.recall, m.f1}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
    ConfusionMatrix diag;
    for (int c = 0; c < 4; ++c) diag.counts[c][c] = 1 + static_cast<long>(rng() % 50);
    const auto d = classification_report(diag);
    EXPECT_NEAR(d.weighted_avg.precision, d.accuracy, 1e-12);
    EXPECT_NEAR(d.weighted_avg.f1, d.accuracy, 1e-12);
    ConfusionMatrix equal;
    for (int t = 0; t < 4; ++t) {
      long left = 30;
      for (int p = 0; p < 3; ++p) {
        equal.counts[t][p] = static_cast<long>(rng() % (left + 1));
        left -= equal.counts[t][p];
      }
      equal.counts[t][3] = left;
    }
    const auto e = classification_report(equal);
    EXPECT_NEAR(e.macro_avg.precision, e.weighted_avg.precision, 1e-12);
    EXPECT_NEAR(e.macro_avg.recall, e.weighted_avg.recall, 1e-12);
    EXPECT_NEAR(e.macro_avg.f1, e.weighted_avg.f1, 1e-12);
  }
}

TEST(Iou, WorkedExamples) {
  const auto a = make_box(0, 0.5, 0.5, 0.4, 0.4);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, make_box(0, 0.1, 0.1, 0.1, 0.1)), 0.0);
  const auto b = make_box(0, 0.6, 0.5, 0.4, 0.4);
  EXPECT_NEAR(iou(a, b), 0.6, 1e-12);
  EXPECT_NEAR(iou(a, b), bf_oracle::raster_iou(a, b, 1000), 1e-3);
}

TEST(IouProperty, AgreesWithRasterization) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.3, 0.7), s(0.1, 0.4);
  for (int i = 0; i < 20; ++i) {
    const auto a = make_box(0, u(rng), u(rng), s(rng), s(rng));
    const auto b = make_box(0, u(rng), u(rng), s(rng), s(rng));
    EXPECT_NEAR(iou(a, b), bf_oracle::raster_iou(a, b, 400), 1e-2);
    EXPECT_NEAR(iou(a, b), iou(b, a), 1e-15);
  }
}

TEST(Match, SingleExact) {
  const std::vector<Detection> p = {det(1, 0.5, 0.5, 0.2, 0.2, 0.9)};
  const std::vector<Box> g = {make_box(1, 0.5, 0.5, 0.2, 0.2)};
  const auto m = match_detections(p, g, 0.5);
  EXPECT_EQ(m.true_positives, 1);
  EXPECT_EQ(m.false_positives, 0);
  EXPECT_EQ(m.false_negatives, 0);
}

TEST(Match, TwoPredsOneGt) {
  const std::vector<Detection> p = {det(1, 0.5, 0.5, 0.2, 0.2, 0.6), det(1, 0.5, 0.5, 0.2, 0.2, 0.9)};
  const std::vector<Box> g = {make_box(1, 0.5, 0.5, 0.2, 0.2)};
  const auto m = match_detections(p, g, 0.5);
  EXPECT_EQ(m.order, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(m.is_tp, (std::vector<bool>{true, false}));
  EXPECT_EQ(m.false_negatives, 0);
}

TEST(Match, ClassMustAgreeAndIouTiesGoToLowestIndex) {
  const std::vector<Box> g = {make_box(0, 0.4, 0.5, 0.2, 0.2), make_box(0, 0.6, 0.5, 0.2, 0.2)};
  const std::vector<Detection> p = {det(0, 0.5, 0.5, 0.2, 0.2, 0.8)};
  const auto m = match_detections(p, g, 0.3);
  EXPECT_EQ(m.matched_gt[0], 0);
  const std::vector<Detection> wrong = {det(2, 0.4, 0.5, 0.2, 0.2, 0.8)};
  EXPECT_EQ(match_detections(wrong, g, 0.5).false_positives, 1);
}

TEST(MatchProperty, AgreesWithGreedyReplay) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const auto scene = bf_oracle::random_scene(rng);
    for (const auto& [img, g] : scene.gts) {
      const auto it = scene.preds.find(img);
      if (it == scene.preds.end()) continue;
      const auto m = match_detections(it->second, g, 0.5);
      const auto ref = bf_oracle::greedy_replay(it->second, g, 0.5, 0);
      ASSERT_EQ(ref.size(), m.is_tp.size());
      int tp = 0;
      for (std::size_t k = 0; k < ref.size(); ++k) {
        ASSERT_EQ(ref[k].tp, m.is_tp[k]);
        tp += ref[k].tp;
      }
      ASSERT_EQ(m.false_negatives, static_cast<int>(g.size()) - tp);
    }
  }
}

TEST(AveragePrecision, HandTraces) {
  const std::vector<RankedMatch> single = {{0.9, true}};
  EXPECT_NEAR(*average_precision(single, 1), 1.0, 1e-12);
  const std::vector<RankedMatch> fp_tp = {{0.9, false}, {0.8, true}};
  EXPECT_NEAR(*average_precision(fp_tp, 1), 0.5, 1e-12);
  const auto curve = pr_curve(fp_tp, 1);
  EXPECT_DOUBLE_EQ(curve.back().recall, 1.0);
  EXPECT_DOUBLE_EQ(curve.back().precision, 0.5);
  const std::vector<RankedMatch> tp_fp = {{0.9, true}, {0.8, false}};
  EXPECT_NEAR(*average_precision(tp_fp, 1), 1.0, 1e-12);
  EXPECT_FALSE(average_precision(single, 0).has_value());
  // Half the instances found at full precision: levels 0.00..0.50 count.
  EXPECT_NEAR(*average_precision(single, 2), 51.0 / 101.0, 1e-12);
}

TEST(AveragePrecision, AllPointsVariant) {
  const std::vector<RankedMatch> ranked = {{0.9, true}, {0.8, false}, {0.7, true}};
  // envelope: recall 0.5 at p=1, recall 1.0 at p=2/3
  EXPECT_NEAR(*average_precision(ranked, 2, ApMethod::all_points), 0.5 * 1.0 + 0.5 * 2.0 / 3.0, 1e-12);
}

TEST(AveragePrecisionProperty, BoundedAndMonotoneInFalsePositives) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 300; ++i) {
    std::vector<RankedMatch> ranked;
    const int n = 1 + static_cast<int>(rng() % 12);
    long tps = 0;
    for (int k = 0; k < n; ++k) {
      ranked.push_back({u(rng), u(rng) < 0.5});
      tps += ranked.back().tp;
    }
    const long instances = tps + static_cast<long>(rng() % 3) + (tps == 0);
    const double ap = *average_precision(ranked, instances);
    ASSERT_GE(ap, 0.0);
    ASSERT_LE(ap, 1.0);
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      if (ranked[k].tp) continue;
      auto fewer = ranked;
      fewer.erase(fewer.begin() + static_cast<long>(k));
      ASSERT_GE(*average_precision(fewer, instances) + 1e-12, ap);
    }
  }
}

TEST(DetectionReport, PerfectDetector) {
  ImageGroundTruth gts = {{"a", {make_box(0, 0.3, 0.3, 0.2, 0.2), make_box(3, 0.7, 0.7, 0.1, 0.1)}},
                          {"b", {make_box(1, 0.5, 0.5, 0.3, 0.3)}},
                          {"c", {make_box(2, 0.5, 0.5, 0.8, 0.8)}}};
  ImageDetections preds;
  for (const auto& [k, boxes] : gts)
    for (auto b : boxes) {
      b.confidence = 0.9;
      preds[k].push_back({b});
    }
  const auto r = detection_report(preds, gts, 0.25);
  for (const auto& row : r.per_class) {
    EXPECT_EQ(row.precision, 1.0);
    EXPECT_EQ(row.recall, 1.0);
    EXPECT_NEAR(*row.ap50, 1.0, 1e-12);
    EXPECT_NEAR(*row.ap50_95, 1.0, 1e-12);
  }
  EXPECT_EQ(r.all.images, 3);
  EXPECT_EQ(r.all.instances, 4);
  EXPECT_NEAR(*r.all.ap50, 1.0, 1e-12);
  const auto table = format_detection_report(r);
  EXPECT_NE(table.find("mAP@0.5-0.95"), std::string::npos);
  EXPECT_NE(table.find("All"), std::string::npos);
}

TEST(DetectionReport, MissingClassExcludedWithWarning) {
  ImageGroundTruth gts = {{"a", {make_box(0, 0.3, 0.3, 0.2, 0.2)}}};
  ImageDetections preds = {{"a", {det(0, 0.3, 0.3, 0.2, 0.2, 0.8), det(1, 0.6, 0.6, 0.2, 0.2, 0.8)}}};
  const auto r = detection_report(preds, gts, 0.25);
  EXPECT_FALSE(r.per_class[1].ap50.has_value());
  EXPECT_EQ(r.warnings.size(), 3u);
  EXPECT_NEAR(*r.all.ap50, 1.0, 1e-12);
  EXPECT_THROW(detection_report(preds, {}, 0.25), ConfigError);
}

TEST(DetectionReportProperty, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1234);
  for (int i = 0; i < 150; ++i) {
    const auto s = bf_oracle::random_scene(rng);
    const auto r = detection_report(s.preds, s.gts, 0.25);
    const auto o = bf_oracle::oracle_report(s.preds, s.gts, 0.25);
    for (int c = 0; c < 4; ++c) {
      ASSERT_EQ(r.per_class[c].instances, o.rows[c].instances);
      ASSERT_NEAR(r.per_class[c].precision, o.rows[c].precision, 1e-9);
      ASSERT_NEAR(r.per_class[c].recall, o.rows[c].recall, 1e-9);
      ASSERT_EQ(r.per_class[c].ap50.has_value(), o.rows[c].ap50.has_value());
      if (o.rows[c].ap50) {
        ASSERT_NEAR(*r.per_class[c].ap50, *o.rows[c].ap50, 1e-9);
        ASSERT_NEAR(*r.per_class[c].ap50_95, *o.rows[c].ap50_95, 1e-9);
      }
    }
    ASSERT_NEAR(r.all.precision, o.precision, 1e-9);
    ASSERT_NEAR(r.all.recall, o.recall, 1e-9);
    ASSERT_NEAR(*r.all.ap50, o.map50, 1e-9);
    ASSERT_NEAR(*r.all.ap50_95, o.map50_95, 1e-9);
    ASSERT_GE(*r.all.ap50 + 1e-12, *r.all.ap50_95);
  }
}

TEST(DetectionReportProperty, OrderOfDistinctConfidencePredictionsIsIrrelevant) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    auto s = bf_oracle::random_scene(rng);
    const auto base = detection_report(s.preds, s.gts, 0.25);
    for (auto& [k, p] : s.preds) std::shuffle(p.begin(), p.end(), rng);
    const auto shuffled = detection_report(s.preds, s.gts, 0.25);
    ASSERT_EQ(detection_report_json(base), detection_report_json(shuffled));
  }
}

TEST(DetectionReportProperty, EqualConfidenceDuplicatesPermuteFreely) {
  ImageGroundTruth gts = {{"a", {make_box(0, 0.5, 0.5, 0.2, 0.2)}}};
  ImageDetections one = {{"a", {det(0, 0.5, 0.5, 0.2, 0.2, 0.7), det(0, 0.52, 0.5, 0.2, 0.2, 0.7)}}};
  ImageDetections two = {{"a", {one["a"][1], one["a"][0]}}};
  const auto r1 = detection_report(one, gts, 0.25);
  const auto r2 = detection_report(two, gts, 0.25);
  EXPECT_EQ(r1.per_class[0].precision, r2.per_class[0].precision);
  EXPECT_EQ(*r1.per_class[0].ap50, *r2.per_class[0].ap50);
}
