#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace brainfusion::onnx {

/// Minimal protobuf wire-format writer for the ONNX message subset we emit.
class WireWriter {
 public:
  void varint_field(int field, std::uint64_t value);
  void int64_field(int field, std::int64_t value) { varint_field(field, static_cast<std::uint64_t>(value)); }
  void float_field(int field, float value);
  void bytes_field(int field, std::string_view bytes);
  void message_field(int field, const WireWriter& nested) { bytes_field(field, nested.bytes()); }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  void raw_varint(std::uint64_t v);
  void tag(int field, int wire_type) { raw_varint(static_cast<std::uint64_t>(field) << 3 | wire_type); }

  std::string buf_;
};

struct WireField {
  int number = 0;
  int wire_type = 0;
  std::uint64_t varint = 0;   // wire type 0
  std::uint32_t fixed32 = 0;  // wire type 5
  std::uint64_t fixed64 = 0;  // wire type 1
  std::string_view bytes;     // wire type 2
};

/// Splits one message into its fields. Throws CheckpointError on truncated
/// or malformed input.
std::vector<WireField> parse_fields(std::string_view message);

/// Reads a packed or unpacked repeated int64 field occurrence.
void append_int64s(const WireField& f, std::vector<std::int64_t>& out);

// ---------------------------------------------------------------- ONNX model

enum class AttrType { f = 1, i = 2, s = 3, floats = 6, ints = 7 };

struct Attribute {
  std::string name;
  AttrType type = AttrType::i;
  float f = 0.0f;
  std::int64_t i = 0;
  std::string s;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
};

struct Node {
  std::string op_type;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<Attribute> attributes;

  const Attribute* find(std::string_view attr) const;
  std::int64_t attr_int(std::string_view attr, std::int64_t fallback) const;
  float attr_float(std::string_view attr, float fallback) const;
  std::vector<std::int64_t> attr_ints(std::string_view attr, std::vector<std::int64_t> fallback) const;
};

/// FLOAT tensor stored as raw little-endian data.
struct Initializer {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};

struct ValueInfo {
  std::string name;
  /// Negative entries are symbolic (the batch dimension).
  std::vector<std::int64_t> dims;
};

struct Model {
  std::int64_t ir_version = 7;
  std::int64_t opset = 13;
  std::string producer = "brainfusion";
  std::string graph_name;
  std::vector<Node> nodes;
  std::vector<Initializer> initializers;
  std::vector<ValueInfo> inputs;
  std::vector<ValueInfo> outputs;
  std::map<std::string, std::string> metadata;
};

/// Operators the exporter may emit and the runner can execute.
bool is_supported_op(std::string_view op_type);

/// Accumulates nodes and tensors; rejects operators outside the supported set
/// with ExportError.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::string graph_name) { model_.graph_name = std::move(graph_name); }

  std::string initializer(const std::string& name, std::vector<std::int64_t> dims, std::vector<float> data);
  /// Emits a node with a generated output name and returns that name.
  std::string node(const std::string& op_type, std::vector<std::string> inputs,
                   std::vector<Attribute> attrs = {}, const std::string& name_hint = "");
  void input(const std::string& name, std::vector<std::int64_t> dims);
  void output(const std::string& name, std::vector<std::int64_t> dims);
  void metadata(const std::string& key, const std::string& value) { model_.metadata[key] = value; }

  const Model& model() const noexcept { return model_; }

 private:
  Model model_;
  int counter_ = 0;
};

Attribute attr_int(std::string name, std::int64_t v);
Attribute attr_float(std::string name, float v);
Attribute attr_ints(std::string name, std::vector<std::int64_t> v);

std::string serialize_model(const Model& m);
/// Throws CheckpointError on anything that is not a well-formed model.
Model parse_model(std::string_view bytes);

}  // namespace brainfusion::onnx
