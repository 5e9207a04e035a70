#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "brainfusion/manifest.hpp"

namespace brainfusion {

struct IngestIssue {
  enum class Kind { skipped, rejected, warning };
  Kind kind;
  std::filesystem::path path;
  std::string reason;
};

/// Plain-text log of skipped and rejected files.
struct IngestReport {
  std::vector<IngestIssue> issues;

  std::size_t count(IngestIssue::Kind kind) const noexcept;
  std::string to_text() const;
};

struct IngestOptions {
  /// Fully decode each image; otherwise only check the file signature.
  bool verify_decode = true;
};

struct IngestResult {
  Manifest manifest;
  IngestReport report;
};

/// `root` holds one directory per class (glioma, meningioma, notumor or
/// no_tumor, pituitary). A root whose children are themselves such class
/// trees (e.g. Training/ and Testing/) is merged, with the child name
/// recorded as the record source. A missing class directory is fatal.
IngestResult ingest_classification_dataset(const std::filesystem::path& root,
                                           const IngestOptions& options = {});

/// Images are paired with YOLO label files by basename, either alongside the
/// image or in a sibling `labels/` directory mirroring `images/`.
IngestResult ingest_detection_dataset(const std::filesystem::path& root,
                                      const IngestOptions& options = {});

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Per-class stratified split. Within each class (in id order) the records
/// are shuffled with a seeded mt19937_64; the first floor(train*n) go to
/// train, the next floor(val*n) to val and the remainder to test.
Manifest split_dataset(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

/// Augmentation quota per class present in the train split:
/// max train count minus this class's train count.
std::map<ClassLabel, std::size_t> balance_plan(const Manifest& manifest);

struct EpochItem {
  std::size_t record_index;
  bool oversampled;
};

/// One epoch of training items: every train record once, plus quota[c]
/// oversampled copies of class-c records, shuffled by `rng`.
std::vector<EpochItem> build_epoch_plan(const Manifest& manifest,
                                        const std::map<ClassLabel, std::size_t>& quotas,
                                        std::mt19937_64& rng);

}  // namespace brainfusion
