#include "brainfusion/gradcam.hpp"

#include <fmt/format.h>

#include "brainfusion/error.hpp"

namespace brainfusion {

torch::Tensor ClassifierCam::feature_map(const torch::Tensor& x) {
  auto& net = *model_.net_ptr();
  net.eval();
  return net.feature_map(x);
}

torch::Tensor ClassifierCam::scores_from_feature_map(const torch::Tensor& fmap) {
  return model_.net_ptr()->logits_from_feature_map(fmap);
}

Heatmap gradcam(CamModel& model, const torch::Tensor& input, ClassLabel target, ImageSize out) {
  torch::AutoGradMode grad_on(true);
  torch::Tensor fmap = model.feature_map(input);
  if (fmap.dim() != 4 || fmap.size(0) != 1) {
    throw ShapeError(fmt::format("Grad-CAM needs a 1 x K x h x w feature layer, got {} dims", fmap.dim()));
  }
  fmap = fmap.detach().requires_grad_(true);
  const torch::Tensor scores = model.scores_from_feature_map(fmap);
  if (scores.dim() != 2 || scores.size(1) != kNumClasses) throw ShapeError("scores must be 1 x 4");
  const torch::Tensor score = scores.index({0, to_index(target)});

  torch::Tensor grad;
  if (score.requires_grad()) {
    grad = torch::autograd::grad({score}, {fmap}, {}, false, false, true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(fmap);

  const auto weights = grad.detach().mean({2, 3}, true);
  auto cam = torch::relu((weights * fmap.detach()).sum(1, true)).to(torch::kDouble);
  cam = torch::nn::functional::interpolate(cam, torch::nn::functional::InterpolateFuncOptions()
                                                    .size(std::vector<std::int64_t>{out.height, out.width})
                                                    .mode(torch::kBilinear)
                                                    .align_corners(false));
  const double lo = cam.min().item<double>();
  const double hi = cam.max().item<double>();
  cam = hi > lo ? (cam - lo) / (hi - lo) : torch::zeros_like(cam);
  cam = cam.clamp(0.0, 1.0).to(torch::kFloat).contiguous();

  Heatmap hm{out.height, out.width, {}, target};
  const float* p = cam.data_ptr<float>();
  hm.values.assign(p, p + cam.numel());
  return hm;
}

Heatmap gradcam(const Classifier& model, const ImageTensor& img, ClassLabel target) {
  const int s = model.config().input_size;
  const ImageTensor input = (img.height() == s && img.width() == s) ? img : resize(img, {s, s});
  ClassifierCam cam(model);
  return gradcam(cam, to_batch(input), target, {img.height(), img.width()});
}

}  // namespace brainfusion
