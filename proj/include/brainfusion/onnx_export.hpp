#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <unordered_map>

#include "brainfusion/onnx_wire.hpp"

namespace brainfusion::onnx {

/// GraphBuilder front end that lowers LibTorch modules to ONNX nodes.
/// Parameters are copied as float32 initializers.
class TorchGraph {
 public:
  explicit TorchGraph(std::string name) : b_(std::move(name)) {}

  std::string constant(const std::string& hint, const torch::Tensor& t);
  std::string conv(const torch::nn::Conv2d& m, const std::string& x);
  std::string batch_norm(const torch::nn::BatchNorm2d& m, const std::string& x);
  std::string batch_norm(const torch::nn::BatchNorm1d& m, const std::string& x);
  std::string linear(const torch::nn::Linear& m, const std::string& x);
  std::string relu(const std::string& x) { return b_.node("Relu", {x}); }
  std::string max_pool(const std::string& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad);
  std::string add(const std::string& a, const std::string& b) { return b_.node("Add", {a, b}); }
  std::string sub(const std::string& a, const std::string& b) { return b_.node("Sub", {a, b}); }
  std::string mul(const std::string& a, const std::string& b) { return b_.node("Mul", {a, b}); }
  std::string div(const std::string& a, const std::string& b) { return b_.node("Div", {a, b}); }
  std::string global_average_pool(const std::string& x) { return b_.node("GlobalAveragePool", {x}); }
  std::string flatten(const std::string& x);
  std::string softmax(const std::string& x, std::int64_t axis);

  GraphBuilder& builder() noexcept { return b_; }

 private:
  std::string param(const std::string& hint, const torch::Tensor& t);

  GraphBuilder b_;
  std::unordered_map<const void*, std::string> names_;
  int counter_ = 0;
};

/// Executes a parsed model with LibTorch kernels. Input: NCHW float.
/// Throws ExportError for operators outside the supported set.
class GraphRunner {
 public:
  explicit GraphRunner(Model model);
  static GraphRunner load(const std::filesystem::path& path);

  torch::Tensor run(const torch::Tensor& input) const;
  const Model& model() const noexcept { return model_; }

 private:
  Model model_;
  std::unordered_map<std::string, torch::Tensor> initializers_;
};

void write_model(const Model& m, const std::filesystem::path& path);

}  // namespace brainfusion::onnx
