#include "brainfusion/data_catalog.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "brainfusion/error.hpp"
#include "brainfusion/yolo_label.hpp"

namespace brainfusion {
namespace fs = std::filesystem;
namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
         ext == ".tiff";
}

std::vector<fs::path> list_images(const fs::path& dir, bool recursive) {
  std::vector<fs::path> out;
  if (recursive) {
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    }
  } else {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool image_readable(const fs::path& p, const IngestOptions& options) {
  if (!options.verify_decode) return cv::haveImageReader(p.string());
  return !cv::imread(p.string(), cv::IMREAD_UNCHANGED).empty();
}

/// Maps each class to its subdirectory of `root`, or nullopt if any is missing.
std::optional<std::array<fs::path, kNumClasses>> class_dirs(const fs::path& root) {
  std::array<fs::path, kNumClasses> dirs;
  std::array<bool, kNumClasses> found{};
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    if (auto label = label_from_string(e.path().filename().string())) {
      dirs[to_index(*label)] = e.path();
      found[to_index(*label)] = true;
    }
  }
  if (std::all_of(found.begin(), found.end(), [](bool b) { return b; })) return dirs;
  return std::nullopt;
}

std::string missing_classes(const fs::path& root) {
  std::array<bool, kNumClasses> found{};
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    if (auto label = label_from_string(e.path().filename().string())) found[to_index(*label)] = true;
  }
  std::string names;
  for (auto c : kAllClasses) {
    if (!found[to_index(c)]) names += (names.empty() ? "" : ", ") + std::string(class_name(c));
  }
  return names;
}

/// Candidate label files for an image: <stem>.txt alongside it, and the
/// same relative location under a sibling "labels" directory.
std::vector<fs::path> label_candidates(const fs::path& image) {
  std::vector<fs::path> out;
  auto txt = image;
  txt.replace_extension(".txt");
  out.push_back(txt);
  std::vector<fs::path> parts(image.begin(), image.end());
  for (std::size_t i = parts.size(); i-- > 0;) {
    if (parts[i] == "images") {
      fs::path p;
      for (std::size_t j = 0; j < parts.size(); ++j) p /= (j == i ? fs::path("labels") : parts[j]);
      p.replace_extension(".txt");
      out.push_back(p);
      break;
    }
  }
  return out;
}

/// Class named by a directory component or by a file stem such as
/// "glioma_0012".
std::optional<ClassLabel> label_from_path(const fs::path& p) {
  for (auto it = p.begin(); it != p.end(); ++it) {
    if (auto l = label_from_string(it->string())) return l;
  }
  std::string stem = p.stem().string();
  while (!stem.empty() && (std::isdigit(static_cast<unsigned char>(stem.back())) ||
                           stem.back() == '_' || stem.back() == '-')) {
    stem.pop_back();
  }
  return label_from_string(stem);
}

}  // namespace

std::size_t IngestReport::count(IngestIssue::Kind kind) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [&](const auto& i) { return i.kind == kind; }));
}

std::string IngestReport::to_text() const {
  std::string out = fmt::format("# ingest report: {} skipped, {} rejected, {} warnings\n",
                                count(IngestIssue::Kind::skipped),
                                count(IngestIssue::Kind::rejected),
                                count(IngestIssue::Kind::warning));
  for (const auto& i : issues) {
    const char* tag = i.kind == IngestIssue::Kind::skipped    ? "SKIPPED"
                      : i.kind == IngestIssue::Kind::rejected ? "REJECTED"
                                                              : "WARNING";
    out += fmt::format("{}\t{}\t{}\n", tag, i.path.generic_string(), i.reason);
  }
  return out;
}

IngestResult ingest_classification_dataset(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw IngestError("dataset root is not a directory: " + root.string());

  std::vector<std::pair<std::string, std::array<fs::path, kNumClasses>>> trees;
  if (auto dirs = class_dirs(root)) {
    trees.emplace_back("", *dirs);
  } else {
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) children.push_back(e.path());
    }
    std::sort(children.begin(), children.end());
    for (const auto& child : children) {
      if (auto dirs = class_dirs(child)) trees.emplace_back(child.filename().string(), *dirs);
    }
    if (trees.empty()) {
      throw IngestError(fmt::format("missing class directories under {}: {}", root.string(),
                                    missing_classes(root)));
    }
  }

  IngestResult result{Manifest(CorpusKind::classification), {}};
  for (const auto& [source, dirs] : trees) {
    for (auto c : kAllClasses) {
      for (const auto& path : list_images(dirs[to_index(c)], false)) {
        if (!image_readable(path, options)) {
          result.report.issues.push_back({IngestIssue::Kind::skipped, path, "image does not decode"});
          continue;
        }
        SampleRecord r;
        r.image_path = path;
        r.label = c;
        r.source = source.empty() ? std::string(class_name(c)) : source;
        result.manifest.add(std::move(r));
      }
    }
  }
  return result;
}

IngestResult ingest_detection_dataset(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw IngestError("dataset root is not a directory: " + root.string());
  IngestResult result{Manifest(CorpusKind::detection), {}};
  for (const auto& path : list_images(root, true)) {
    if (!image_readable(path, options)) {
      result.report.issues.push_back({IngestIssue::Kind::skipped, path, "image does not decode"});
      continue;
    }
    SampleRecord r;
    r.image_path = path;
    r.source = fs::relative(path.parent_path(), root).generic_string();

    std::optional<fs::path> label_file;
    for (const auto& cand : label_candidates(path)) {
      if (fs::is_regular_file(cand)) {
        label_file = cand;
        break;
      }
    }
    if (label_file) {
      try {
        r.boxes = read_yolo_label_file(*label_file);
      } catch (const ParseError& e) {
        result.report.issues.push_back({IngestIssue::Kind::rejected, *label_file, e.what()});
        continue;
      }
    } else {
      result.report.issues.push_back({IngestIssue::Kind::warning, path, "no label file"});
    }

    if (!r.boxes.empty()) {
      r.label = r.boxes.front().class_id;
    } else {
      r.label = label_from_path(fs::relative(path, root)).value_or(ClassLabel::no_tumor);
    }
    result.manifest.add(std::move(r));
  }
  return result;
}

Manifest split_dataset(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw ConfigError(fmt::format("split ratios must be non-negative and sum to 1 (got {})", sum));
  }
  for (const auto& r : manifest.records()) {
    if (r.split != Split::unassigned) throw ConfigError("manifest already has split assignments");
  }

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    by_class[to_index(manifest.records()[i].label)].push_back(i);
  }

  Manifest out = manifest;
  std::mt19937_64 rng(seed);
  for (auto c : kAllClasses) {
    auto& idx = by_class[to_index(c)];
    const std::size_t n = idx.size();
    if (n == 0) continue;
    if (n < 3) {
      throw ConfigError(fmt::format("class {} has {} samples; at least 3 are needed to populate "
                                    "train/val/test",
                                    class_name(c), n));
    }
    // Fisher-Yates on raw draws: the order depends only on the mt19937_64 stream.
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(idx[i], idx[j]);
    }
    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 1e-9));
    for (std::size_t k = 0; k < n; ++k) {
      const Split s = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
      out.set_split(idx[k], s);
    }
  }
  return out;
}

std::map<ClassLabel, std::size_t> balance_plan(const Manifest& manifest) {
  if (manifest.corpus_kind() != CorpusKind::classification) {
    throw ConfigError("balance_plan applies to classification corpora only");
  }
  const auto counts = manifest.counts_in(Split::train);
  std::size_t max_count = 0;
  for (auto n : counts) max_count = std::max(max_count, n);
  if (max_count == 0) throw ConfigError("balance_plan needs a non-empty train split");
  std::map<ClassLabel, std::size_t> quota;
  for (auto c : kAllClasses) {
    const auto n = counts[to_index(c)];
    if (n > 0) quota[c] = max_count - n;
  }
  return quota;
}

std::vector<EpochItem> build_epoch_plan(const Manifest& manifest,
                                        const std::map<ClassLabel, std::size_t>& quotas,
                                        std::mt19937_64& rng) {
  std::vector<EpochItem> plan;
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i : manifest.indices_in(Split::train)) {
    plan.push_back({i, false});
    by_class[to_index(manifest.records()[i].label)].push_back(i);
  }
  for (const auto& [c, q] : quotas) {
    const auto& pool = by_class[to_index(c)];
    if (pool.empty()) continue;
    for (std::size_t k = 0; k < q; ++k) {
      plan.push_back({pool[static_cast<std::size_t>(rng() % pool.size())], true});
    }
  }
  for (std::size_t i = plan.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(plan[i - 1], plan[j]);
  }
  return plan;
}

}  // namespace brainfusion
