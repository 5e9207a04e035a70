#pragma once

// Brute-force reference for detection metrics. Written independently of
// src/metrics.cpp: no shared helpers, quadratic scans instead of sorting,
// AP recomputed from scratch for every recall level.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "brainfusion/box.hpp"

namespace bf_oracle {

using brainfusion::Box;
using brainfusion::Detection;

inline double rect_iou(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double w = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double h = std::min(ay2, by2) - std::max(ay1, by1);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
}

/// Pixel-center rasterization IoU on an n x n grid.
inline double raster_iou(const Box& a, const Box& b, int n) {
  long inter = 0, uni = 0;
  for (int y = 0; y < n; ++y) {
    const double py = (y + 0.5) / n;
    for (int x = 0; x < n; ++x) {
      const double px = (x + 0.5) / n;
      const bool in_a = px >= a.x1() && px < a.x2() && py >= a.y1() && py < a.y2();
      const bool in_b = px >= b.x1() && px < b.x2() && py >= b.y1() && py < b.y2();
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

struct Entry {
  double conf;
  int image;
  int rank;  // position in the image's confidence order
  int cls;
  bool tp;
};

/// Replays the greedy rule by repeatedly selecting the highest-confidence
/// unvisited prediction (earliest index on ties).
inline std::vector<Entry> greedy_replay(const std::vector<Detection>& preds,
                                        const std::vector<Box>& gts, double thr, int image) {
  std::vector<bool> visited(preds.size(), false);
  std::vector<bool> used(gts.size(), false);
  std::vector<Entry> out;
  for (std::size_t step = 0; step < preds.size(); ++step) {
    int pick = -1;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (visited[i]) continue;
      if (pick < 0 || *preds[i].box.confidence > *preds[pick].box.confidence) pick = static_cast<int>(i);
    }
    visited[pick] = true;
    const auto& p = preds[pick].box;
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_id != p.class_id) continue;
      const double v = rect_iou(p, gts[g]);
      if (v >= thr && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) used[best] = true;
    out.push_back({*p.confidence, image, static_cast<int>(step), static_cast<int>(p.class_id), best >= 0});
  }
  return out;
}

inline bool ranks_before(const Entry& a, const Entry& b) {
  if (a.conf != b.conf) return a.conf > b.conf;
  if (a.image != b.image) return a.image < b.image;
  return a.rank < b.rank;
}

/// 101-point interpolated AP by direct summation over every prefix.
inline double direct_ap(std::vector<Entry> entries, long instances) {
  // selection sort into ranking order
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (std::size_t j = i + 1; j < entries.size(); ++j)
      if (ranks_before(entries[j], entries[i])) std::swap(entries[i], entries[j]);
  double total = 0;
  for (int level = 0; level <= 100; ++level) {
    const double r = level / 100.0;
    double best = 0;
    for (std::size_t k = 1; k <= entries.size(); ++k) {
      long tp = 0;
      for (std::size_t j = 0; j < k; ++j) tp += entries[j].tp;
      const double recall = static_cast<double>(tp) / instances;
      const double precision = static_cast<double>(tp) / k;
      if (recall >= r) best = std::max(best, precision);
    }
    total += best;
  }
  return total / 101;
}

struct OracleRow {
  long instances = 0;
  double precision = 0, recall = 0;
  std::optional<double> ap50, ap50_95;
};

struct OracleReport {
  std::array<OracleRow, 4> rows;
  double precision = 0, recall = 0, map50 = 0, map50_95 = 0;
};

inline OracleReport oracle_report(const std::map<std::string, std::vector<Detection>>& preds,
                                  const std::map<std::string, std::vector<Box>>& gts, double conf_thr) {
  std::vector<std::string> images;
  for (const auto& [k, v] : gts) images.push_back(k);
  for (const auto& [k, v] : preds)
    if (std::find(images.begin(), images.end(), k) == images.end()) images.push_back(k);
  std::sort(images.begin(), images.end());

  OracleReport rep;
  for (const auto& [k, boxes] : gts)
    for (const auto& b : boxes) rep.rows[static_cast<int>(b.class_id)].instances++;

  std::array<std::array<std::vector<Entry>, 4>, 10> per;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto p = preds.count(images[i]) ? preds.at(images[i]) : std::vector<Detection>{};
      const auto g = gts.count(images[i]) ? gts.at(images[i]) : std::vector<Box>{};
      for (const auto& e : greedy_replay(p, g, thr, static_cast<int>(i))) per[t][e.cls].push_back(e);
    }
  }
  int present = 0;
  for (int c = 0; c < 4; ++c) {
    auto& row = rep.rows[c];
    long tp = 0, n = 0;
    for (const auto& e : per[0][c])
      if (e.conf >= conf_thr) {
        ++n;
        tp += e.tp;
      }
    row.precision = n ? static_cast<double>(tp) / n : 0.0;
    row.recall = row.instances ? static_cast<double>(tp) / row.instances : 0.0;
    if (!row.instances) continue;
    row.ap50 = direct_ap(per[0][c], row.instances);
    double s = 0;
    for (int t = 0; t < 10; ++t) s += direct_ap(per[t][c], row.instances);
    row.ap50_95 = s / 10;
    ++present;
    rep.precision += row.precision;
    rep.recall += row.recall;
    rep.map50 += *row.ap50;
    rep.map50_95 += *row.ap50_95;
  }
  rep.precision /= present;
  rep.recall /= present;
  rep.map50 /= present;
  rep.map50_95 /= present;
  return rep;
}

struct Scene {
  std::map<std::string, std::vector<Detection>> preds;
  std::map<std::string, std::vector<Box>> gts;
};

/// 1-3 images; each has 0-5 ground truths (at least one overall) and 0-8
/// predictions mixing jittered copies of ground truths with random boxes.
inline Scene random_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto rand_box = [&](int cls) {
    const double w = 0.05 + 0.4 * u(rng), h = 0.05 + 0.4 * u(rng);
    Box b{static_cast<brainfusion::ClassLabel>(cls), w / 2 + (1 - w) * u(rng), h / 2 + (1 - h) * u(rng), w, h,
          std::nullopt};
    return b;
  };
  Scene s;
  const int n_images = 1 + static_cast<int>(rng() % 3);
  int total_gt = 0;
  for (int i = 0; i < n_images; ++i) {
    const std::string key = "img" + std::to_string(i);
    const int n_gt = static_cast<int>(rng() % 6);
    std::vector<Box> g;
    for (int k = 0; k < n_gt; ++k) g.push_back(rand_box(static_cast<int>(rng() % 4)));
    if (i == n_images - 1 && total_gt + n_gt == 0) g.push_back(rand_box(static_cast<int>(rng() % 4)));
    total_gt += static_cast<int>(g.size());
    std::vector<Detection> p;
    const int n_pred = static_cast<int>(rng() % 9);
    for (int k = 0; k < n_pred; ++k) {
      Box b;
      if (!g.empty() && u(rng) < 0.7) {
        b = g[rng() % g.size()];
        b.cx = std::clamp(b.cx + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
        b.cy = std::clamp(b.cy + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
        b.w = std::clamp(b.w * (0.8 + 0.4 * u(rng)), 0.01, 1.0);
        b.h = std::clamp(b.h * (0.8 + 0.4 * u(rng)), 0.01, 1.0);
        if (u(rng) < 0.15) b.class_id = static_cast<brainfusion::ClassLabel>(rng() % 4);
      } else {
        b = rand_box(static_cast<int>(rng() % 4));
      }
      b.confidence = u(rng);
      p.push_back({b});
    }
    s.gts[key] = g;
    if (!p.empty() || u(rng) < 0.5) s.preds[key] = p;
  }
  return s;
}

}  // namespace bf_oracle
