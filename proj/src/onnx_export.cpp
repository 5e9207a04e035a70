#include "brainfusion/onnx_export.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "brainfusion/error.hpp"

namespace brainfusion::onnx {
namespace {

std::vector<std::int64_t> dims_of(const torch::Tensor& t) {
  return {t.sizes().begin(), t.sizes().end()};
}

std::vector<float> data_of(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

}  // namespace

std::string TorchGraph::param(const std::string& hint, const torch::Tensor& t) {
  const void* key = t.unsafeGetTensorImpl();
  if (auto it = names_.find(key); it != names_.end()) return it->second;
  const auto name = b_.initializer(hint + "_" + std::to_string(counter_++), dims_of(t), data_of(t));
  names_[key] = name;
  return name;
}

std::string TorchGraph::constant(const std::string& hint, const torch::Tensor& t) {
  return b_.initializer(hint + "_" + std::to_string(counter_++), dims_of(t), data_of(t));
}

std::string TorchGraph::conv(const torch::nn::Conv2d& m, const std::string& x) {
  const auto& o = m->options;
  const auto pad = std::get<torch::ExpandingArray<2>>(o.padding());
  std::vector<std::string> inputs = {x, param("conv_w", m->weight)};
  if (o.bias()) inputs.push_back(param("conv_b", m->bias));
  const auto k = o.kernel_size();
  const auto s = o.stride();
  const auto d = o.dilation();
  return b_.node("Conv", inputs,
                 {attr_ints("kernel_shape", {k->at(0), k->at(1)}),
                  attr_ints("strides", {s->at(0), s->at(1)}),
                  attr_ints("pads", {pad->at(0), pad->at(1), pad->at(0), pad->at(1)}),
                  attr_ints("dilations", {d->at(0), d->at(1)}), attr_int("group", o.groups())});
}

std::string TorchGraph::batch_norm(const torch::nn::BatchNorm2d& m, const std::string& x) {
  return b_.node("BatchNormalization",
                 {x, param("bn_scale", m->weight), param("bn_bias", m->bias),
                  param("bn_mean", m->running_mean), param("bn_var", m->running_var)},
                 {attr_float("epsilon", static_cast<float>(m->options.eps()))});
}

std::string TorchGraph::batch_norm(const torch::nn::BatchNorm1d& m, const std::string& x) {
  return b_.node("BatchNormalization",
                 {x, param("bn_scale", m->weight), param("bn_bias", m->bias),
                  param("bn_mean", m->running_mean), param("bn_var", m->running_var)},
                 {attr_float("epsilon", static_cast<float>(m->options.eps()))});
}

std::string TorchGraph::linear(const torch::nn::Linear& m, const std::string& x) {
  return b_.node("Gemm", {x, param("fc_w", m->weight), param("fc_b", m->bias)},
                 {attr_int("transB", 1)});
}

std::string TorchGraph::max_pool(const std::string& x, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t pad) {
  return b_.node("MaxPool", {x},
                 {attr_ints("kernel_shape", {kernel, kernel}), attr_ints("strides", {stride, stride}),
                  attr_ints("pads", {pad, pad, pad, pad})});
}

std::string TorchGraph::flatten(const std::string& x) {
  return b_.node("Flatten", {x}, {attr_int("axis", 1)});
}

std::string TorchGraph::softmax(const std::string& x, std::int64_t axis) {
  return b_.node("Softmax", {x}, {attr_int("axis", axis)});
}

void write_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExportError("cannot write " + path.string());
  const auto bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ExportError("failed writing " + path.string());
}

GraphRunner::GraphRunner(Model model) : model_(std::move(model)) {
  for (const auto& n : model_.nodes) {
    if (!is_supported_op(n.op_type)) throw ExportError("unsupported operator '" + n.op_type + "' in graph");
  }
  for (const auto& t : model_.initializers) {
    auto tensor = torch::from_blob(const_cast<float*>(t.data.data()), t.dims, torch::kFloat32).clone();
    initializers_.emplace(t.name, std::move(tensor));
  }
}

GraphRunner GraphRunner::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open model file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return GraphRunner(parse_model(bytes));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

torch::Tensor GraphRunner::run(const torch::Tensor& input) const {
  torch::NoGradGuard no_grad;
  std::unordered_map<std::string, torch::Tensor> values = initializers_;
  values[model_.inputs.front().name] = input.to(torch::kFloat32);
  auto get = [&](const std::string& name) -> const torch::Tensor& {
    auto it = values.find(name);
    if (it == values.end()) throw CheckpointError("graph references undefined value '" + name + "'");
    return it->second;
  };
  for (const auto& n : model_.nodes) {
    const auto& op = n.op_type;
    torch::Tensor y;
    if (op == "Conv") {
      const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
      if (pads.size() != 4 || pads[0] != pads[2] || pads[1] != pads[3]) {
        throw ExportError("asymmetric Conv padding is not supported");
      }
      torch::Tensor bias = n.inputs.size() > 2 ? get(n.inputs[2]) : torch::Tensor();
      y = torch::conv2d(get(n.inputs[0]), get(n.inputs[1]), bias, n.attr_ints("strides", {1, 1}),
                        {pads[0], pads[1]}, n.attr_ints("dilations", {1, 1}), n.attr_int("group", 1));
    } else if (op == "BatchNormalization") {
      y = torch::batch_norm(get(n.inputs[0]), get(n.inputs[1]), get(n.inputs[2]), get(n.inputs[3]),
                            get(n.inputs[4]), false, 0.0, n.attr_float("epsilon", 1e-5f), false);
    } else if (op == "Relu") {
      y = torch::relu(get(n.inputs[0]));
    } else if (op == "MaxPool") {
      const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
      y = torch::max_pool2d(get(n.inputs[0]), n.attr_ints("kernel_shape", {}), n.attr_ints("strides", {1, 1}),
                            {pads[0], pads[1]});
    } else if (op == "Add") {
      y = get(n.inputs[0]) + get(n.inputs[1]);
    } else if (op == "Sub") {
      y = get(n.inputs[0]) - get(n.inputs[1]);
    } else if (op == "Mul") {
      y = get(n.inputs[0]) * get(n.inputs[1]);
    } else if (op == "Div") {
      y = get(n.inputs[0]) / get(n.inputs[1]);
    } else if (op == "GlobalAveragePool") {
      y = get(n.inputs[0]).mean({2, 3}, true);
    } else if (op == "Flatten") {
      y = get(n.inputs[0]).flatten(n.attr_int("axis", 1));
    } else if (op == "Gemm") {
      auto b = get(n.inputs[1]);
      if (n.attr_int("transB", 0)) b = b.t();
      auto a = get(n.inputs[0]);
      if (n.attr_int("transA", 0)) a = a.t();
      y = torch::matmul(a, b) * n.attr_float("alpha", 1.0f);
      if (n.inputs.size() > 2) y = y + get(n.inputs[2]) * n.attr_float("beta", 1.0f);
    } else if (op == "Softmax") {
      y = torch::softmax(get(n.inputs[0]), n.attr_int("axis", -1));
    } else if (op == "Concat") {
      std::vector<torch::Tensor> parts;
      for (const auto& i : n.inputs) parts.push_back(get(i));
      y = torch::cat(parts, n.attr_int("axis", 0));
    } else if (op == "Identity") {
      y = get(n.inputs[0]);
    } else {
      throw ExportError("unsupported operator '" + op + "'");
    }
    values[n.outputs.front()] = std::move(y);
  }
  return get(model_.outputs.front().name);
}

}  // namespace brainfusion::onnx
