#pragma once

#include <array>
#include <cmath>

#include "brainfusion/labels.hpp"

namespace brainfusion {

/// Per-class probabilities indexed by ClassLabel id.
struct ClassScores {
  std::array<double, kNumClasses> probs{};

  double operator[](ClassLabel c) const noexcept { return probs[to_index(c)]; }

  /// Lowest id wins ties.
  ClassLabel argmax() const noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumClasses; ++i) {
      if (probs[i] > probs[best]) best = i;
    }
    return kAllClasses[best];
  }

  bool is_simplex(double tol = 1e-5) const noexcept {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) return false;
      sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
  }

  friend bool operator==(const ClassScores&, const ClassScores&) = default;
};

}  // namespace brainfusion
