#pragma once

#include <filesystem>

#include "brainfusion/data_catalog.hpp"
#include "brainfusion/synthetic.hpp"

namespace bf_test {

/// Phantom corpus under `root` with the first `train` images of each class
/// in the train split, the next `val` in val and the rest in test.
inline brainfusion::Manifest phantom_manifest(const std::filesystem::path& root, int train, int val, int test,
                                             int size, std::uint64_t seed) {
  using namespace brainfusion;
  synthetic::write_classification_corpus(root, train + val + test, size, seed);
  auto m = ingest_classification_dataset(root).manifest;
  std::array<int, kNumClasses> seen{};
  for (std::size_t i = 0; i < m.size(); ++i) {
    const int k = seen[to_index(m.records()[i].label)]++;
    m.set_split(i, k < train ? Split::train : k < train + val ? Split::val : Split::test);
  }
  return m;
}

}  // namespace bf_test

namespace bf_test {

/// Detection corpus of `count` phantoms; image k goes to train when
/// k % 4 != 3, else to val.
inline brainfusion::Manifest detection_manifest(const std::filesystem::path& root, int count, int size,
                                               std::uint64_t seed) {
  using namespace brainfusion;
  synthetic::write_detection_corpus(root, count, size, seed);
  auto m = ingest_detection_dataset(root).manifest;
  for (std::size_t i = 0; i < m.size(); ++i) m.set_split(i, i % 4 == 3 ? Split::val : Split::train);
  return m;
}

}  // namespace bf_test
