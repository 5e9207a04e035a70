#pragma once

#include <torch/torch.h>

#include "brainfusion/classifier.hpp"
#include "brainfusion/explain.hpp"

namespace brainfusion {

/// A model split at its last convolutional layer.
class CamModel {
 public:
  virtual ~CamModel() = default;
  /// x: 1 x 3 x S x S in [0,1]. Returns the 1 x K x h x w activation.
  virtual torch::Tensor feature_map(const torch::Tensor& x) = 0;
  /// Class scores (1 x 4, pre-softmax) computed from that activation.
  virtual torch::Tensor scores_from_feature_map(const torch::Tensor& fmap) = 0;
};

/// Adapter over a classifier's backbone target layer and head.
class ClassifierCam : public CamModel {
 public:
  explicit ClassifierCam(const Classifier& model) : model_(model) {}
  torch::Tensor feature_map(const torch::Tensor& x) override;
  torch::Tensor scores_from_feature_map(const torch::Tensor& fmap) override;
  int input_size() const noexcept { return model_.config().input_size; }

 private:
  const Classifier& model_;
};

/// Grad-CAM for `target`: channel weights are the spatial mean of the score
/// gradient, the map is ReLU of the weighted channel sum, bilinearly
/// upsampled to `out` and min-max normalized. A map with no spread
/// (including all zeros) comes back all zeros.
/// Throws ShapeError when the feature layer output is not 1 x K x h x w.
Heatmap gradcam(CamModel& model, const torch::Tensor& input, ClassLabel target, ImageSize out);

/// Runs at the model's input size and returns a map the size of `img`.
/// Must not run concurrently with training of the same model.
Heatmap gradcam(const Classifier& model, const ImageTensor& img, ClassLabel target);

}  // namespace brainfusion
