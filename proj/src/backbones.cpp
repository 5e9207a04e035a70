#include "brainfusion/backbones.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "brainfusion/error.hpp"
#include "brainfusion/hashing.hpp"
#include "brainfusion/onnx_export.hpp"

namespace brainfusion {
namespace {

namespace tnn = torch::nn;

tnn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad,
                 bool bias, std::int64_t groups = 1) {
  return tnn::Conv2d(tnn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias).groups(groups));
}

void kaiming_init(tnn::Module& m) {
  for (auto& mod : m.modules(/*include_self=*/false)) {
    if (auto* c = mod->as<tnn::Conv2d>()) {
      tnn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->options.bias()) tnn::init::zeros_(c->bias);
    } else if (auto* b = mod->as<tnn::BatchNorm2d>()) {
      tnn::init::ones_(b->weight);
      tnn::init::zeros_(b->bias);
    }
  }
}

std::vector<torch::Tensor> conv_params(const tnn::Conv2d& c) {
  std::vector<torch::Tensor> p = {c->weight};
  if (c->options.bias()) p.push_back(c->bias);
  return p;
}

WeightLayer conv_bn_layer(std::string name, const tnn::Conv2d& c, const tnn::BatchNorm2d& bn) {
  WeightLayer l{std::move(name), conv_params(c), {bn}};
  l.parameters.push_back(bn->weight);
  l.parameters.push_back(bn->bias);
  return l;
}

torch::Tensor imagenet_preprocess(const torch::Tensor& x) {
  static const auto mean = torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1});
  static const auto std = torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1});
  return (x - mean) / std;
}

std::string export_imagenet_preprocess(onnx::TorchGraph& g, const std::string& x) {
  const auto mean = g.constant("mean", torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1}));
  const auto std = g.constant("std", torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1}));
  return g.div(g.sub(x, mean), std);
}

// ------------------------------------------------------------------ VGG16

class Vgg16 : public Backbone {
 public:
  Vgg16() {
    static constexpr int kWidths[5] = {64, 128, 256, 512, 512};
    static constexpr int kDepth[5] = {2, 2, 3, 3, 3};
    features_ = register_module("features", tnn::Sequential());
    std::int64_t in = 3;
    for (int b = 0; b < 5; ++b) {
      for (int i = 0; i < kDepth[b]; ++i) {
        auto c = conv(in, kWidths[b], 3, 1, 1, true);
        features_->push_back(c);
        features_->push_back(tnn::ReLU());
        convs_.push_back(c);
        names_.push_back("block" + std::to_string(b + 1) + "_conv" + std::to_string(i + 1));
        in = kWidths[b];
      }
      features_->push_back(tnn::MaxPool2d(tnn::MaxPool2dOptions(2).stride(2)));
      block_end_.push_back(static_cast<int>(convs_.size()));
    }
    kaiming_init(*this);
  }

  BackboneId id() const override { return BackboneId::vgg16; }
  std::int64_t feature_channels() const override { return 512; }
  std::string target_layer() const override { return "block5_conv3"; }
  torch::Tensor preprocess(const torch::Tensor& x) const override { return imagenet_preprocess(x); }

  torch::Tensor feature_map(const torch::Tensor& input) override {
    auto x = input;
    std::size_t k = 0;
    for (int b = 0; b < 5; ++b) {
      for (; k < static_cast<std::size_t>(block_end_[b]); ++k) x = torch::relu(convs_[k]->forward(x));
      if (b < 4) x = torch::max_pool2d(x, 2, 2);
    }
    return x;
  }

  torch::Tensor post_features(const torch::Tensor& f) override { return torch::max_pool2d(f, 2, 2); }

  std::vector<WeightLayer> weight_layers() override {
    std::vector<WeightLayer> out;
    for (std::size_t k = 0; k < convs_.size(); ++k) out.push_back({names_[k], conv_params(convs_[k]), {}});
    return out;
  }

  std::string export_graph(onnx::TorchGraph& g, const std::string& input) override {
    auto x = export_imagenet_preprocess(g, input);
    std::size_t k = 0;
    for (int b = 0; b < 5; ++b) {
      for (; k < static_cast<std::size_t>(block_end_[b]); ++k) x = g.relu(g.conv(convs_[k], x));
      x = g.max_pool(x, 2, 2, 0);
    }
    return x;
  }

 private:
  tnn::Sequential features_{nullptr};
  std::vector<tnn::Conv2d> convs_;
  std::vector<std::string> names_;
  std::vector<int> block_end_;
};

// --------------------------------------------------------------- ResNet50

class BottleneckImpl : public tnn::Module {
 public:
  BottleneckImpl(std::int64_t in, std::int64_t width, std::int64_t stride, bool downsample) {
    const auto out = width * 4;
    conv1 = register_module("conv1", conv(in, width, 1, 1, 0, false));
    bn1 = register_module("bn1", tnn::BatchNorm2d(width));
    conv2 = register_module("conv2", conv(width, width, 3, stride, 1, false));
    bn2 = register_module("bn2", tnn::BatchNorm2d(width));
    conv3 = register_module("conv3", conv(width, out, 1, 1, 0, false));
    bn3 = register_module("bn3", tnn::BatchNorm2d(out));
    if (downsample) {
      ds_conv = conv(in, out, 1, stride, 0, false);
      ds_bn = tnn::BatchNorm2d(out);
      register_module("downsample", tnn::Sequential(ds_conv, ds_bn));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = torch::relu(bn2(conv2(y)));
    y = bn3(conv3(y));
    auto identity = ds_conv ? ds_bn(ds_conv(x)) : x;
    return torch::relu(y + identity);
  }

  std::string export_graph(onnx::TorchGraph& g, const std::string& x) {
    auto y = g.relu(g.batch_norm(bn1, g.conv(conv1, x)));
    y = g.relu(g.batch_norm(bn2, g.conv(conv2, y)));
    y = g.batch_norm(bn3, g.conv(conv3, y));
    auto identity = ds_conv ? g.batch_norm(ds_bn, g.conv(ds_conv, x)) : x;
    return g.relu(g.add(y, identity));
  }

  tnn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, ds_conv{nullptr};
  tnn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, ds_bn{nullptr};
};
TORCH_MODULE(Bottleneck);

class ResNet50 : public Backbone {
 public:
  ResNet50() {
    conv1_ = register_module("conv1", conv(3, 64, 7, 2, 3, false));
    bn1_ = register_module("bn1", tnn::BatchNorm2d(64));
    static constexpr int kBlocks[4] = {3, 4, 6, 3};
    std::int64_t in = 64;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t width = 64 << s;
      tnn::Sequential layer;
      for (int b = 0; b < kBlocks[s]; ++b) {
        const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
        Bottleneck block(in, width, stride, b == 0);
        layer->push_back(block);
        blocks_.push_back(block);
        block_names_.push_back("layer" + std::to_string(s + 1) + "." + std::to_string(b));
        in = width * 4;
      }
      register_module("layer" + std::to_string(s + 1), layer);
    }
    kaiming_init(*this);
  }

  BackboneId id() const override { return BackboneId::resnet50; }
  std::int64_t feature_channels() const override { return 2048; }
  std::string target_layer() const override { return "layer4"; }
  torch::Tensor preprocess(const torch::Tensor& x) const override { return imagenet_preprocess(x); }

  torch::Tensor feature_map(const torch::Tensor& input) override {
    auto x = torch::relu(bn1_(conv1_(input)));
    x = torch::max_pool2d(x, 3, 2, 1);
    for (auto& b : blocks_) x = b->forward(x);
    return x;
  }

  std::vector<WeightLayer> weight_layers() override {
    std::vector<WeightLayer> out = {conv_bn_layer("conv1", conv1_, bn1_)};
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      const auto& n = block_names_[i];
      out.push_back(conv_bn_layer(n + ".conv1", b->conv1, b->bn1));
      out.push_back(conv_bn_layer(n + ".conv2", b->conv2, b->bn2));
      out.push_back(conv_bn_layer(n + ".conv3", b->conv3, b->bn3));
      if (b->ds_conv) out.push_back(conv_bn_layer(n + ".downsample", b->ds_conv, b->ds_bn));
    }
    return out;
  }

  std::string export_graph(onnx::TorchGraph& g, const std::string& input) override {
    auto x = export_imagenet_preprocess(g, input);
    x = g.relu(g.batch_norm(bn1_, g.conv(conv1_, x)));
    x = g.max_pool(x, 3, 2, 1);
    for (auto& b : blocks_) x = b->export_graph(g, x);
    return x;
  }

 private:
  tnn::Conv2d conv1_{nullptr};
  tnn::BatchNorm2d bn1_{nullptr};
  std::vector<Bottleneck> blocks_;
  std::vector<std::string> block_names_;
};

// --------------------------------------------------------------- Xception

class SeparableConvImpl : public tnn::Module {
 public:
  SeparableConvImpl(std::int64_t in, std::int64_t out) {
    conv1 = register_module("conv1", conv(in, in, 3, 1, 1, false, in));
    pointwise = register_module("pointwise", conv(in, out, 1, 1, 0, false));
  }
  torch::Tensor forward(const torch::Tensor& x) { return pointwise(conv1(x)); }
  std::string export_graph(onnx::TorchGraph& g, const std::string& x) {
    return g.conv(pointwise, g.conv(conv1, x));
  }
  std::vector<torch::Tensor> params() const { return {conv1->weight, pointwise->weight}; }

  tnn::Conv2d conv1{nullptr}, pointwise{nullptr};
};
TORCH_MODULE(SeparableConv);

/// Residual block: [relu] sep bn (relu sep bn)* [maxpool] + 1x1 skip.
/// Module indices inside `rep` follow the common Xception port layout.
class XceptionBlockImpl : public tnn::Module {
 public:
  XceptionBlockImpl(std::int64_t in, std::int64_t out, int reps, std::int64_t stride, bool start_with_relu,
                    bool grow_first)
      : stride_(stride), start_with_relu_(start_with_relu) {
    if (out != in || stride != 1) {
      skip = register_module("skip", conv(in, out, 1, stride, 0, false));
      skipbn = register_module("skipbn", tnn::BatchNorm2d(out));
    }
    tnn::Sequential rep;
    std::int64_t c = in;
    auto add_unit = [&](std::int64_t to) {
      if (start_with_relu || !seps.empty()) rep->push_back(tnn::ReLU());
      SeparableConv s(c, to);
      tnn::BatchNorm2d bn(to);
      rep->push_back(s);
      rep->push_back(bn);
      seps.push_back(s);
      bns.push_back(bn);
      c = to;
    };
    if (grow_first) add_unit(out);
    for (int i = 0; i < reps - 1; ++i) add_unit(c);
    if (!grow_first) add_unit(out);
    if (stride != 1) rep->push_back(tnn::MaxPool2d(tnn::MaxPool2dOptions(3).stride(stride).padding(1)));
    register_module("rep", rep);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = x;
    for (std::size_t i = 0; i < seps.size(); ++i) {
      if (i > 0 || start_with_relu_) y = torch::relu(y);
      y = bns[i](seps[i](y));
    }
    if (stride_ != 1) y = torch::max_pool2d(y, 3, stride_, 1);
    return y + (skip ? skipbn(skip(x)) : x);
  }

  std::string export_graph(onnx::TorchGraph& g, const std::string& x) {
    auto y = x;
    for (std::size_t i = 0; i < seps.size(); ++i) {
      if (i > 0 || start_with_relu_) y = g.relu(y);
      y = g.batch_norm(bns[i], seps[i]->export_graph(g, y));
    }
    if (stride_ != 1) y = g.max_pool(y, 3, stride_, 1);
    return g.add(y, skip ? g.batch_norm(skipbn, g.conv(skip, x)) : x);
  }

  std::vector<SeparableConv> seps;
  std::vector<tnn::BatchNorm2d> bns;
  tnn::Conv2d skip{nullptr};
  tnn::BatchNorm2d skipbn{nullptr};

 private:
  std::int64_t stride_;
  bool start_with_relu_;
};
TORCH_MODULE(XceptionBlock);

class Xception : public Backbone {
 public:
  Xception() {
    conv1_ = register_module("conv1", conv(3, 32, 3, 2, 0, false));
    bn1_ = register_module("bn1", tnn::BatchNorm2d(32));
    conv2_ = register_module("conv2", conv(32, 64, 3, 1, 0, false));
    bn2_ = register_module("bn2", tnn::BatchNorm2d(64));
    auto add_block = [&](std::int64_t in, std::int64_t out, int reps, std::int64_t stride, bool relu, bool grow) {
      XceptionBlock b(in, out, reps, stride, relu, grow);
      blocks_.push_back(register_module("block" + std::to_string(blocks_.size() + 1), b));
    };
    add_block(64, 128, 2, 2, false, true);
    add_block(128, 256, 2, 2, true, true);
    add_block(256, 728, 2, 2, true, true);
    for (int i = 0; i < 8; ++i) add_block(728, 728, 3, 1, true, true);
    add_block(728, 1024, 2, 2, true, false);
    conv3_ = register_module("conv3", SeparableConv(1024, 1536));
    bn3_ = register_module("bn3", tnn::BatchNorm2d(1536));
    conv4_ = register_module("conv4", SeparableConv(1536, 2048));
    bn4_ = register_module("bn4", tnn::BatchNorm2d(2048));
    kaiming_init(*this);
  }

  BackboneId id() const override { return BackboneId::xception; }
  std::int64_t feature_channels() const override { return 2048; }
  std::string target_layer() const override { return "conv4"; }
  torch::Tensor preprocess(const torch::Tensor& x) const override { return x * 2.0 - 1.0; }

  torch::Tensor feature_map(const torch::Tensor& input) override {
    auto x = torch::relu(bn1_(conv1_(input)));
    x = torch::relu(bn2_(conv2_(x)));
    for (auto& b : blocks_) x = b->forward(x);
    x = torch::relu(bn3_(conv3_(x)));
    return torch::relu(bn4_(conv4_(x)));
  }

  std::vector<WeightLayer> weight_layers() override {
    std::vector<WeightLayer> out = {conv_bn_layer("conv1", conv1_, bn1_), conv_bn_layer("conv2", conv2_, bn2_)};
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      const auto prefix = "block" + std::to_string(i + 1);
      for (std::size_t s = 0; s < b->seps.size(); ++s) {
        WeightLayer l{prefix + ".sep" + std::to_string(s + 1), b->seps[s]->params(), {b->bns[s]}};
        l.parameters.push_back(b->bns[s]->weight);
        l.parameters.push_back(b->bns[s]->bias);
        out.push_back(std::move(l));
      }
      if (b->skip) out.push_back(conv_bn_layer(prefix + ".skip", b->skip, b->skipbn));
    }
    for (auto [name, sep, bn] : {std::tuple{"conv3", conv3_, bn3_}, std::tuple{"conv4", conv4_, bn4_}}) {
      WeightLayer l{name, sep->params(), {bn}};
      l.parameters.push_back(bn->weight);
      l.parameters.push_back(bn->bias);
      out.push_back(std::move(l));
    }
    return out;
  }

  std::string export_graph(onnx::TorchGraph& g, const std::string& input) override {
    const auto two = g.constant("two", torch::full({1}, 2.0f));
    const auto one = g.constant("one", torch::full({1}, 1.0f));
    auto x = g.sub(g.mul(input, two), one);
    x = g.relu(g.batch_norm(bn1_, g.conv(conv1_, x)));
    x = g.relu(g.batch_norm(bn2_, g.conv(conv2_, x)));
    for (auto& b : blocks_) x = b->export_graph(g, x);
    x = g.relu(g.batch_norm(bn3_, conv3_->export_graph(g, x)));
    return g.relu(g.batch_norm(bn4_, conv4_->export_graph(g, x)));
  }

 private:
  tnn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  tnn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr}, bn4_{nullptr};
  SeparableConv conv3_{nullptr}, conv4_{nullptr};
  std::vector<XceptionBlock> blocks_;
};

}  // namespace

std::string_view backbone_name(BackboneId id) noexcept {
  switch (id) {
    case BackboneId::vgg16: return "vgg16";
    case BackboneId::resnet50: return "resnet50";
    case BackboneId::xception: return "xception";
  }
  return "unknown";
}

BackboneId backbone_from_string(std::string_view name) {
  for (auto id : {BackboneId::vgg16, BackboneId::resnet50, BackboneId::xception}) {
    if (backbone_name(id) == name) return id;
  }
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected vgg16, resnet50 or xception)");
}

std::shared_ptr<Backbone> make_backbone(BackboneId id) {
  switch (id) {
    case BackboneId::vgg16: return std::make_shared<Vgg16>();
    case BackboneId::resnet50: return std::make_shared<ResNet50>();
    case BackboneId::xception: return std::make_shared<Xception>();
  }
  throw ConfigError("unknown backbone id");
}

std::filesystem::path resolve_weights_dir(const std::filesystem::path& dir) {
  if (!dir.empty()) return dir;
  if (const char* env = std::getenv("BRAINFUSION_WEIGHTS_DIR"); env && *env) return env;
  return {};
}

void load_tensor_dict(torch::nn::Module& module, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto sidecar = file;
  sidecar += ".sha256";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream s(sidecar);
    std::string expected;
    s >> expected;
    const auto actual = sha256_hex(std::string_view(bytes.data(), bytes.size()));
    if (expected != actual) {
      throw CheckpointError("checksum mismatch for " + file.string() + ": expected " + expected +
                            ", got " + actual);
    }
  }

  torch::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read weight file " + file.string() + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw CheckpointError(file.string() + " does not hold a tensor dict");
  std::unordered_map<std::string, torch::Tensor> tensors;
  for (const auto& kv : value.toGenericDict()) tensors[kv.key().toStringRef()] = kv.value().toTensor();

  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& dst) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw CheckpointError(file.string() + " lacks tensor '" + key + "'");
    if (it->second.sizes() != dst.sizes()) {
      throw CheckpointError("shape mismatch for '" + key + "' in " + file.string());
    }
    dst.copy_(it->second.to(dst.dtype()));
  };
  for (auto& p : module.named_parameters()) assign(p.key(), p.value());
  for (auto& b : module.named_buffers()) {
    if (b.key().ends_with("num_batches_tracked")) continue;
    assign(b.key(), b.value());
  }
}

WeightLoadResult load_pretrained(Backbone& backbone, const std::filesystem::path& dir) {
  WeightLoadResult result;
  const auto name = std::string(backbone_name(backbone.id()));
  if (dir.empty()) {
    result.warning = "no weights directory configured; " + name + " uses random initialization";
    return result;
  }
  result.file = dir / (name + ".pt");
  if (!std::filesystem::exists(result.file)) {
    result.warning = result.file.string() + " not found; " + name + " uses random initialization";
    return result;
  }
  load_tensor_dict(backbone, result.file);
  result.loaded = true;
  return result;
}

}  // namespace brainfusion
