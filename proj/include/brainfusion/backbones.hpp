#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace brainfusion {

namespace onnx {
class TorchGraph;
}

enum class BackboneId { vgg16, resnet50, xception };

std::string_view backbone_name(BackboneId id) noexcept;
/// Throws ConfigError for unknown names.
BackboneId backbone_from_string(std::string_view name);

/// One conv or dense layer together with the normalization layers whose
/// trainability follows it.
struct WeightLayer {
  std::string name;
  std::vector<torch::Tensor> parameters;
  std::vector<torch::nn::BatchNorm2d> norms;
};

/// Pretrained-style feature extractor. Input to `preprocess` is NCHW with
/// values in [0,1].
class Backbone : public torch::nn::Module {
 public:
  virtual BackboneId id() const = 0;
  virtual std::int64_t feature_channels() const = 0;
  /// Layer whose activation `feature_map` returns; Grad-CAM target.
  virtual std::string target_layer() const = 0;

  /// Canonical input transform of the backbone's weights.
  virtual torch::Tensor preprocess(const torch::Tensor& x01) const = 0;
  /// Preprocessed input -> target-layer activation.
  virtual torch::Tensor feature_map(const torch::Tensor& x) = 0;
  /// Target-layer activation -> tensor that is globally average pooled.
  virtual torch::Tensor post_features(const torch::Tensor& f) { return f; }

  /// Weight-bearing layers in forward order.
  virtual std::vector<WeightLayer> weight_layers() = 0;

  /// Appends the preprocessing and feature stack to `g` and returns the name
  /// of the tensor to be globally average pooled.
  virtual std::string export_graph(onnx::TorchGraph& g, const std::string& input) = 0;

  torch::Tensor pooled_features(const torch::Tensor& x01) {
    return post_features(feature_map(preprocess(x01))).mean({2, 3});
  }
};

std::shared_ptr<Backbone> make_backbone(BackboneId id);

struct WeightLoadResult {
  bool loaded = false;
  std::filesystem::path file;
  std::string warning;
};

/// Directory holding `<backbone>.pt` weight files: `dir` when non-empty,
/// else $BRAINFUSION_WEIGHTS_DIR, else empty.
std::filesystem::path resolve_weights_dir(const std::filesystem::path& dir);

/// Copies every parameter and buffer of `module` from a pickled name->tensor
/// dict at `file`, verifying a `<file>.sha256` sidecar when present. Throws
/// CheckpointError on checksum mismatch or missing/misshapen tensors.
void load_tensor_dict(torch::nn::Module& module, const std::filesystem::path& file);

/// Loads `<dir>/<name>.pt` (a pickled name->tensor dict) into the backbone.
/// A `<name>.pt.sha256` sidecar, when present, must match the file hash.
/// A missing file leaves the random initialization and sets `warning`.
/// Throws CheckpointError on checksum mismatch or missing/misshapen tensors.
WeightLoadResult load_pretrained(Backbone& backbone, const std::filesystem::path& dir);

}  // namespace brainfusion
