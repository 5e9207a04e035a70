#include "brainfusion/manifest.hpp"

#include <fstream>
#include <sstream>

#include "brainfusion/error.hpp"
#include "json.hpp"

namespace brainfusion {

using nlohmann::json;

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unassigned";
}

Split split_from_string(std::string_view s) {
  if (s == "unassigned") return Split::unassigned;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + std::string(s) + "'", 0);
}

std::string_view corpus_kind_name(CorpusKind k) noexcept {
  return k == CorpusKind::classification ? "classification" : "detection";
}

std::size_t Manifest::total_boxes() const noexcept {
  std::size_t n = 0;
  for (const auto& r : records_) n += r.boxes.size();
  return n;
}

void Manifest::add(SampleRecord record) {
  const std::string key = record.image_path.lexically_normal().string();
  if (path_index_.contains(key)) throw IngestError("duplicate image path " + key);
  for (const auto& b : record.boxes) {
    if (!is_valid(b)) throw IngestError("invalid box in record " + key);
  }
  path_index_.emplace(key, records_.size());
  ++counts_[to_index(record.label)];
  records_.push_back(std::move(record));
}

void Manifest::set_split(std::size_t index, Split split) { records_.at(index).split = split; }

ClassCounts Manifest::counts_in(Split split) const noexcept {
  ClassCounts c{};
  for (const auto& r : records_) {
    if (r.split == split) ++c[to_index(r.label)];
  }
  return c;
}

std::vector<std::size_t> Manifest::indices_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split) out.push_back(i);
  }
  return out;
}

Manifest Manifest::subset(Split split) const {
  Manifest m(kind_);
  for (const auto& r : records_) {
    if (r.split == split) m.add(r);
  }
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json records = json::array();
  for (const auto& r : m.records()) {
    json boxes = json::array();
    for (const auto& b : r.boxes) boxes.push_back({to_index(b.class_id), b.cx, b.cy, b.w, b.h});
    records.push_back({{"path", r.image_path.generic_string()},
                       {"label", class_name(r.label)},
                       {"split", split_name(r.split)},
                       {"source", r.source},
                       {"boxes", std::move(boxes)}});
  }
  json counts = json::object();
  for (auto c : kAllClasses) counts[std::string(class_name(c))] = m.class_counts()[to_index(c)];
  json doc = {{"schema", 1},
              {"corpus_kind", corpus_kind_name(m.corpus_kind())},
              {"class_counts", std::move(counts)},
              {"records", std::move(records)}};
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what(), 0);
  }
  try {
    if (doc.at("schema").get<int>() != 1) throw ParseError("unsupported manifest schema", 0);
    const auto kind_name = doc.at("corpus_kind").get<std::string>();
    CorpusKind kind;
    if (kind_name == "classification") {
      kind = CorpusKind::classification;
    } else if (kind_name == "detection") {
      kind = CorpusKind::detection;
    } else {
      throw ParseError("unknown corpus_kind '" + kind_name + "'", 0);
    }
    Manifest m(kind);
    for (const auto& jr : doc.at("records")) {
      SampleRecord r;
      r.image_path = jr.at("path").get<std::string>();
      const auto label = label_from_string(jr.at("label").get<std::string>());
      if (!label) throw ParseError("unknown label in manifest record", 0);
      r.label = *label;
      r.split = split_from_string(jr.at("split").get<std::string>());
      r.source = jr.value("source", "");
      for (const auto& jb : jr.at("boxes")) {
        if (!jb.is_array() || jb.size() != 5) throw ParseError("box must have 5 fields", 0);
        const auto cls = label_from_index(jb[0].get<long>());
        if (!cls) throw ParseError("box class id out of range", 0);
        Box b{*cls, jb[1].get<double>(), jb[2].get<double>(), jb[3].get<double>(),
              jb[4].get<double>(), std::nullopt};
        r.boxes.push_back(b);
      }
      m.add(std::move(r));
    }
    if (doc.contains("class_counts")) {
      for (auto c : kAllClasses) {
        const auto stored = doc["class_counts"].value(std::string(class_name(c)), std::size_t{0});
        if (stored != m.class_counts()[to_index(c)]) {
          throw ParseError("class_counts disagree with records", 0);
        }
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), 0);
  } catch (const IngestError& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), 0);
  }
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << manifest_to_json(m);
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

}  // namespace brainfusion
