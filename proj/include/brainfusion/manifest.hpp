#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "brainfusion/box.hpp"
#include "brainfusion/labels.hpp"

namespace brainfusion {

enum class Split { unassigned, train, val, test };
enum class CorpusKind { classification, detection };

std::string_view split_name(Split s) noexcept;
Split split_from_string(std::string_view s);
std::string_view corpus_kind_name(CorpusKind k) noexcept;

struct SampleRecord {
  std::filesystem::path image_path;
  ClassLabel label = ClassLabel::no_tumor;
  Split split = Split::unassigned;
  std::string source;
  std::vector<Box> boxes;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

/// Dataset catalog. Keeps class counts in sync with its records and rejects
/// duplicate image paths.
class Manifest {
 public:
  explicit Manifest(CorpusKind kind = CorpusKind::classification) : kind_(kind) {}

  CorpusKind corpus_kind() const noexcept { return kind_; }
  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  const ClassCounts& class_counts() const noexcept { return counts_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t total_boxes() const noexcept;

  void add(SampleRecord record);
  void set_split(std::size_t index, Split split);

  ClassCounts counts_in(Split split) const noexcept;
  std::vector<std::size_t> indices_in(Split split) const;
  /// Copy holding only the records of one split.
  Manifest subset(Split split) const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.kind_ == b.kind_ && a.records_ == b.records_;
  }

 private:
  CorpusKind kind_;
  std::vector<SampleRecord> records_;
  ClassCounts counts_{};
  std::map<std::string, std::size_t> path_index_;
};

/// Serialized form:
/// {"schema":1,"corpus_kind":..,"class_counts":{..},
///  "records":[{"path","label","split","source","boxes":[[cls,cx,cy,w,h],..]}]}
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace brainfusion
