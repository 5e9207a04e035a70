#include "brainfusion/onnx_wire.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "brainfusion/error.hpp"

namespace brainfusion::onnx {
namespace {

// onnx.proto field numbers
namespace model_f { constexpr int ir_version = 1, producer_name = 2, graph = 7, opset_import = 8, metadata_props = 14; }
namespace opset_f { constexpr int domain = 1, version = 2; }
namespace graph_f { constexpr int node = 1, name = 2, initializer = 5, input = 11, output = 12; }
namespace node_f { constexpr int input = 1, output = 2, name = 3, op_type = 4, attribute = 5; }
namespace attr_f { constexpr int name = 1, f = 2, i = 3, s = 4, floats = 7, ints = 8, type = 20; }
namespace tensor_f { constexpr int dims = 1, data_type = 2, float_data = 4, name = 8, raw_data = 9; }
namespace value_f { constexpr int name = 1, type = 2; }
namespace type_f { constexpr int tensor_type = 1; }
namespace ttype_f { constexpr int elem_type = 1, shape = 2; }
namespace shape_f { constexpr int dim = 1; }
namespace dim_f { constexpr int dim_value = 1, dim_param = 2; }
namespace kv_f { constexpr int key = 1, value = 2; }
constexpr int kFloat = 1;

[[noreturn]] void malformed(const std::string& what) {
  throw CheckpointError("malformed ONNX model: " + what);
}

std::uint64_t read_varint(std::string_view s, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= s.size()) malformed("truncated varint");
    const auto byte = static_cast<unsigned char>(s[pos++]);
    v |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
    if (!(byte & 0x80)) return v;
  }
  malformed("varint too long");
}

WireWriter value_info_message(const ValueInfo& vi) {
  WireWriter shape;
  for (auto d : vi.dims) {
    WireWriter dim;
    if (d >= 0) {
      dim.int64_field(dim_f::dim_value, d);
    } else {
      dim.bytes_field(dim_f::dim_param, "N");
    }
    shape.message_field(shape_f::dim, dim);
  }
  WireWriter ttype;
  ttype.int64_field(ttype_f::elem_type, kFloat);
  ttype.message_field(ttype_f::shape, shape);
  WireWriter type;
  type.message_field(type_f::tensor_type, ttype);
  WireWriter out;
  out.bytes_field(value_f::name, vi.name);
  out.message_field(value_f::type, type);
  return out;
}

ValueInfo parse_value_info(std::string_view bytes) {
  ValueInfo vi;
  for (const auto& f : parse_fields(bytes)) {
    if (f.number == value_f::name && f.wire_type == 2) vi.name = std::string(f.bytes);
    if (f.number != value_f::type || f.wire_type != 2) continue;
    for (const auto& t : parse_fields(f.bytes)) {
      if (t.number != type_f::tensor_type || t.wire_type != 2) continue;
      for (const auto& tt : parse_fields(t.bytes)) {
        if (tt.number != ttype_f::shape || tt.wire_type != 2) continue;
        for (const auto& d : parse_fields(tt.bytes)) {
          if (d.number != shape_f::dim || d.wire_type != 2) continue;
          std::int64_t dim = -1;
          for (const auto& dv : parse_fields(d.bytes)) {
            if (dv.number == dim_f::dim_value && dv.wire_type == 0) dim = static_cast<std::int64_t>(dv.varint);
          }
          vi.dims.push_back(dim);
        }
      }
    }
  }
  return vi;
}

WireWriter attribute_message(const Attribute& a) {
  WireWriter w;
  w.bytes_field(attr_f::name, a.name);
  switch (a.type) {
    case AttrType::f: w.float_field(attr_f::f, a.f); break;
    case AttrType::i: w.int64_field(attr_f::i, a.i); break;
    case AttrType::s: w.bytes_field(attr_f::s, a.s); break;
    case AttrType::floats:
      for (float v : a.floats) w.float_field(attr_f::floats, v);
      break;
    case AttrType::ints:
      for (auto v : a.ints) w.int64_field(attr_f::ints, v);
      break;
  }
  w.int64_field(attr_f::type, static_cast<int>(a.type));
  return w;
}

Attribute parse_attribute(std::string_view bytes) {
  Attribute a;
  bool has_type = false;
  for (const auto& f : parse_fields(bytes)) {
    switch (f.number) {
      case attr_f::name: a.name = std::string(f.bytes); break;
      case attr_f::f: a.f = std::bit_cast<float>(f.fixed32); break;
      case attr_f::i: a.i = static_cast<std::int64_t>(f.varint); break;
      case attr_f::s: a.s = std::string(f.bytes); break;
      case attr_f::floats:
        if (f.wire_type == 5) {
          a.floats.push_back(std::bit_cast<float>(f.fixed32));
        } else if (f.wire_type == 2) {
          for (std::size_t k = 0; k + 4 <= f.bytes.size(); k += 4) {
            std::uint32_t u;
            std::memcpy(&u, f.bytes.data() + k, 4);
            a.floats.push_back(std::bit_cast<float>(u));
          }
        }
        break;
      case attr_f::ints: append_int64s(f, a.ints); break;
      case attr_f::type:
        a.type = static_cast<AttrType>(f.varint);
        has_type = true;
        break;
      default: break;
    }
  }
  if (!has_type) malformed("attribute '" + a.name + "' without type");
  return a;
}

}  // namespace

void WireWriter::raw_varint(std::uint64_t v) {
  while (v >= 0x80) {
    buf_.push_back(static_cast<char>((v & 0x7F) | 0x80));
    v >>= 7;
  }
  buf_.push_back(static_cast<char>(v));
}

void WireWriter::varint_field(int field, std::uint64_t value) {
  tag(field, 0);
  raw_varint(value);
}

void WireWriter::float_field(int field, float value) {
  tag(field, 5);
  const auto u = std::bit_cast<std::uint32_t>(value);
  for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((u >> (8 * k)) & 0xFF));
}

void WireWriter::bytes_field(int field, std::string_view bytes) {
  tag(field, 2);
  raw_varint(bytes.size());
  buf_.append(bytes);
}

std::vector<WireField> parse_fields(std::string_view s) {
  std::vector<WireField> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto key = read_varint(s, pos);
    WireField f;
    f.number = static_cast<int>(key >> 3);
    f.wire_type = static_cast<int>(key & 7);
    if (f.number <= 0) malformed("invalid field number");
    switch (f.wire_type) {
      case 0: f.varint = read_varint(s, pos); break;
      case 1:
        if (pos + 8 > s.size()) malformed("truncated fixed64");
        std::memcpy(&f.fixed64, s.data() + pos, 8);
        pos += 8;
        break;
      case 2: {
        const auto len = read_varint(s, pos);
        if (len > s.size() - pos) malformed("truncated length-delimited field");
        f.bytes = s.substr(pos, len);
        pos += len;
        break;
      }
      case 5:
        if (pos + 4 > s.size()) malformed("truncated fixed32");
        std::memcpy(&f.fixed32, s.data() + pos, 4);
        pos += 4;
        break;
      default: malformed("unsupported wire type " + std::to_string(f.wire_type));
    }
    out.push_back(f);
  }
  return out;
}

void append_int64s(const WireField& f, std::vector<std::int64_t>& out) {
  if (f.wire_type == 0) {
    out.push_back(static_cast<std::int64_t>(f.varint));
  } else if (f.wire_type == 2) {
    std::size_t pos = 0;
    while (pos < f.bytes.size()) out.push_back(static_cast<std::int64_t>(read_varint(f.bytes, pos)));
  } else {
    malformed("int64 field with wire type " + std::to_string(f.wire_type));
  }
}

const Attribute* Node::find(std::string_view attr) const {
  for (const auto& a : attributes) {
    if (a.name == attr) return &a;
  }
  return nullptr;
}

std::int64_t Node::attr_int(std::string_view attr, std::int64_t fallback) const {
  const auto* a = find(attr);
  return a ? a->i : fallback;
}

float Node::attr_float(std::string_view attr, float fallback) const {
  const auto* a = find(attr);
  return a ? a->f : fallback;
}

std::vector<std::int64_t> Node::attr_ints(std::string_view attr, std::vector<std::int64_t> fallback) const {
  const auto* a = find(attr);
  return a ? a->ints : fallback;
}

bool is_supported_op(std::string_view op) {
  static constexpr std::array<std::string_view, 14> kOps = {
      "Conv", "BatchNormalization", "Relu", "MaxPool", "Add", "Sub", "Mul", "Div",
      "GlobalAveragePool", "Flatten", "Gemm", "Softmax", "Concat", "Identity"};
  return std::find(kOps.begin(), kOps.end(), op) != kOps.end();
}

std::string GraphBuilder::initializer(const std::string& name, std::vector<std::int64_t> dims,
                                      std::vector<float> data) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  if (n != static_cast<std::int64_t>(data.size())) throw ExportError("initializer " + name + " size mismatch");
  model_.initializers.push_back({name, std::move(dims), std::move(data)});
  return name;
}

std::string GraphBuilder::node(const std::string& op_type, std::vector<std::string> inputs,
                               std::vector<Attribute> attrs, const std::string& name_hint) {
  if (!is_supported_op(op_type)) throw ExportError("operator '" + op_type + "' is not supported by the exporter");
  Node n;
  n.op_type = op_type;
  n.name = (name_hint.empty() ? op_type : name_hint) + "_" + std::to_string(counter_++);
  n.inputs = std::move(inputs);
  n.outputs = {n.name + "_out"};
  n.attributes = std::move(attrs);
  model_.nodes.push_back(n);
  return n.outputs.front();
}

void GraphBuilder::input(const std::string& name, std::vector<std::int64_t> dims) {
  model_.inputs.push_back({name, std::move(dims)});
}

void GraphBuilder::output(const std::string& name, std::vector<std::int64_t> dims) {
  model_.outputs.push_back({name, std::move(dims)});
}

Attribute attr_int(std::string name, std::int64_t v) {
  Attribute a;
  a.name = std::move(name);
  a.type = AttrType::i;
  a.i = v;
  return a;
}

Attribute attr_float(std::string name, float v) {
  Attribute a;
  a.name = std::move(name);
  a.type = AttrType::f;
  a.f = v;
  return a;
}

Attribute attr_ints(std::string name, std::vector<std::int64_t> v) {
  Attribute a;
  a.name = std::move(name);
  a.type = AttrType::ints;
  a.ints = std::move(v);
  return a;
}

std::string serialize_model(const Model& m) {
  WireWriter graph;
  for (const auto& n : m.nodes) {
    WireWriter node;
    for (const auto& i : n.inputs) node.bytes_field(node_f::input, i);
    for (const auto& o : n.outputs) node.bytes_field(node_f::output, o);
    node.bytes_field(node_f::name, n.name);
    node.bytes_field(node_f::op_type, n.op_type);
    for (const auto& a : n.attributes) node.message_field(node_f::attribute, attribute_message(a));
    graph.message_field(graph_f::node, node);
  }
  graph.bytes_field(graph_f::name, m.graph_name);
  for (const auto& t : m.initializers) {
    WireWriter tensor;
    for (auto d : t.dims) tensor.int64_field(tensor_f::dims, d);
    tensor.int64_field(tensor_f::data_type, kFloat);
    tensor.bytes_field(tensor_f::name, t.name);
    std::string raw(t.data.size() * 4, '\0');
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const auto u = std::bit_cast<std::uint32_t>(t.data[k]);
      for (int b = 0; b < 4; ++b) raw[4 * k + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
    tensor.bytes_field(tensor_f::raw_data, raw);
    graph.message_field(graph_f::initializer, tensor);
  }
  for (const auto& vi : m.inputs) graph.message_field(graph_f::input, value_info_message(vi));
  for (const auto& vi : m.outputs) graph.message_field(graph_f::output, value_info_message(vi));

  WireWriter model;
  model.int64_field(model_f::ir_version, m.ir_version);
  model.bytes_field(model_f::producer_name, m.producer);
  model.message_field(model_f::graph, graph);
  WireWriter opset;
  opset.bytes_field(opset_f::domain, "");
  opset.int64_field(opset_f::version, m.opset);
  model.message_field(model_f::opset_import, opset);
  for (const auto& [k, v] : m.metadata) {
    WireWriter kv;
    kv.bytes_field(kv_f::key, k);
    kv.bytes_field(kv_f::value, v);
    model.message_field(model_f::metadata_props, kv);
  }
  return model.bytes();
}

Model parse_model(std::string_view bytes) {
  Model m;
  bool has_graph = false;
  m.opset = 0;
  for (const auto& f : parse_fields(bytes)) {
    if (f.number == model_f::ir_version && f.wire_type == 0) m.ir_version = static_cast<std::int64_t>(f.varint);
    if (f.number == model_f::producer_name && f.wire_type == 2) m.producer = std::string(f.bytes);
    if (f.number == model_f::opset_import && f.wire_type == 2) {
      for (const auto& o : parse_fields(f.bytes)) {
        if (o.number == opset_f::version && o.wire_type == 0) m.opset = static_cast<std::int64_t>(o.varint);
      }
    }
    if (f.number == model_f::metadata_props && f.wire_type == 2) {
      std::string key, value;
      for (const auto& kv : parse_fields(f.bytes)) {
        if (kv.number == kv_f::key) key = std::string(kv.bytes);
        if (kv.number == kv_f::value) value = std::string(kv.bytes);
      }
      m.metadata[key] = value;
    }
    if (f.number != model_f::graph || f.wire_type != 2) continue;
    has_graph = true;
    for (const auto& g : parse_fields(f.bytes)) {
      if (g.wire_type != 2) continue;
      switch (g.number) {
        case graph_f::name: m.graph_name = std::string(g.bytes); break;
        case graph_f::node: {
          Node n;
          for (const auto& nf : parse_fields(g.bytes)) {
            if (nf.wire_type != 2) continue;
            if (nf.number == node_f::input) n.inputs.emplace_back(nf.bytes);
            if (nf.number == node_f::output) n.outputs.emplace_back(nf.bytes);
            if (nf.number == node_f::name) n.name = std::string(nf.bytes);
            if (nf.number == node_f::op_type) n.op_type = std::string(nf.bytes);
            if (nf.number == node_f::attribute) n.attributes.push_back(parse_attribute(nf.bytes));
          }
          if (n.op_type.empty()) malformed("node without op_type");
          m.nodes.push_back(std::move(n));
          break;
        }
        case graph_f::initializer: {
          Initializer t;
          std::int64_t dtype = 0;
          std::string_view raw;
          for (const auto& tf : parse_fields(g.bytes)) {
            if (tf.number == tensor_f::dims) append_int64s(tf, t.dims);
            if (tf.number == tensor_f::data_type) dtype = static_cast<std::int64_t>(tf.varint);
            if (tf.number == tensor_f::name) t.name = std::string(tf.bytes);
            if (tf.number == tensor_f::raw_data) raw = tf.bytes;
            if (tf.number == tensor_f::float_data) {
              if (tf.wire_type == 5) t.data.push_back(std::bit_cast<float>(tf.fixed32));
            }
          }
          if (dtype != kFloat) malformed("initializer " + t.name + " is not FLOAT");
          if (!raw.empty()) {
            if (raw.size() % 4) malformed("raw_data length not a multiple of 4");
            t.data.resize(raw.size() / 4);
            for (std::size_t k = 0; k < t.data.size(); ++k) {
              std::uint32_t u = 0;
              for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * k + b])) << (8 * b);
              t.data[k] = std::bit_cast<float>(u);
            }
          }
          std::int64_t n = 1;
          for (auto d : t.dims) n *= d;
          if (n != static_cast<std::int64_t>(t.data.size())) malformed("initializer " + t.name + " size mismatch");
          m.initializers.push_back(std::move(t));
          break;
        }
        case graph_f::input: m.inputs.push_back(parse_value_info(g.bytes)); break;
        case graph_f::output: m.outputs.push_back(parse_value_info(g.bytes)); break;
        default: break;
      }
    }
  }
  if (!has_graph) malformed("no graph");
  if (m.inputs.empty() || m.outputs.empty()) malformed("graph without inputs or outputs");
  return m;
}

}  // namespace brainfusion::onnx
