#include "brainfusion/detector.hpp"

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "brainfusion/augment.hpp"
#include "brainfusion/backbones.hpp"
#include "brainfusion/error.hpp"

namespace brainfusion {

namespace tnn = torch::nn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFormat = "brainfusion-detector";

// ------------------------------------------------------------------ layers

class ConvBnActImpl : public tnn::Module {
 public:
  ConvBnActImpl(std::int64_t c1, std::int64_t c2, std::int64_t k = 1, std::int64_t s = 1) {
    conv = register_module("conv", tnn::Conv2d(tnn::Conv2dOptions(c1, c2, k).stride(s).padding(k / 2).bias(false)));
    bn = register_module("bn", tnn::BatchNorm2d(tnn::BatchNorm2dOptions(c2).eps(1e-3).momentum(0.1)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::silu(bn(conv(x))); }

  tnn::Conv2d conv{nullptr};
  tnn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBnAct);

class BottleneckImpl : public tnn::Module {
 public:
  BottleneckImpl(std::int64_t c, bool shortcut) : shortcut_(shortcut) {
    cv1 = register_module("cv1", ConvBnAct(c, c, 3));
    cv2 = register_module("cv2", ConvBnAct(c, c, 3));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = cv2(cv1(x));
    return shortcut_ ? x + y : y;
  }

 private:
  bool shortcut_;
  ConvBnAct cv1{nullptr}, cv2{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Split-transform-concat block: cv1 splits into two halves, each
/// bottleneck extends the last half, cv2 fuses all pieces.
class C2fImpl : public tnn::Module {
 public:
  C2fImpl(std::int64_t c1, std::int64_t c2, int n, bool shortcut) : c_(c2 / 2) {
    cv1 = register_module("cv1", ConvBnAct(c1, 2 * c_, 1));
    cv2 = register_module("cv2", ConvBnAct((2 + n) * c_, c2, 1));
    tnn::ModuleList list;
    for (int i = 0; i < n; ++i) {
      Bottleneck b(c_, shortcut);
      list->push_back(b);
      m_.push_back(b);
    }
    register_module("m", list);
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto parts = cv1(x).chunk(2, 1);
    std::vector<torch::Tensor> y(parts.begin(), parts.end());
    for (auto& b : m_) y.push_back(b(y.back()));
    return cv2(torch::cat(y, 1));
  }

 private:
  std::int64_t c_;
  ConvBnAct cv1{nullptr}, cv2{nullptr};
  std::vector<Bottleneck> m_;
};
TORCH_MODULE(C2f);

class SppfImpl : public tnn::Module {
 public:
  SppfImpl(std::int64_t c1, std::int64_t c2) {
    cv1 = register_module("cv1", ConvBnAct(c1, c1 / 2, 1));
    cv2 = register_module("cv2", ConvBnAct(c1 / 2 * 4, c2, 1));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto a = cv1(x);
    auto b = torch::max_pool2d(a, 5, 1, 2);
    auto c = torch::max_pool2d(b, 5, 1, 2);
    auto d = torch::max_pool2d(c, 5, 1, 2);
    return cv2(torch::cat({a, b, c, d}, 1));
  }

 private:
  ConvBnAct cv1{nullptr}, cv2{nullptr};
};
TORCH_MODULE(Sppf);

class HeadBranchImpl : public tnn::Module {
 public:
  HeadBranchImpl(std::int64_t c_in, std::int64_t c_mid, std::int64_t c_out) {
    a = register_module("a", ConvBnAct(c_in, c_mid, 3));
    b = register_module("b", ConvBnAct(c_mid, c_mid, 3));
    out = register_module("out", tnn::Conv2d(tnn::Conv2dOptions(c_mid, c_out, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return out(b(a(x))); }

  ConvBnAct a{nullptr}, b{nullptr};
  tnn::Conv2d out{nullptr};
};
TORCH_MODULE(HeadBranch);

struct Scaling {
  double width;
  double depth;
};

Scaling variant_scaling(const std::string& v) {
  if (v == "yolov8n") return {0.25, 1.0 / 3.0};
  if (v == "yolov8s") return {0.50, 1.0 / 3.0};
  throw ConfigError("unknown detector variant '" + v + "' (expected yolov8n or yolov8s)");
}

}  // namespace

// ------------------------------------------------------------------ network

class DetectorNet : public tnn::Module {
 public:
  static constexpr std::array<std::int64_t, 3> kStrides = {8, 16, 32};

  DetectorNet(const std::string& variant, int num_classes, int input_size) : nc_(num_classes), size_(input_size) {
    const auto sc = variant_scaling(variant);
    auto ch = [&](int base) { return static_cast<std::int64_t>(std::max(8.0, std::round(base * sc.width / 8) * 8)); };
    auto rep = [&](int base) { return std::max(1, static_cast<int>(std::round(base * sc.depth))); };
    const auto c1 = ch(64), c2 = ch(128), c3 = ch(256), c4 = ch(512), c5 = ch(1024);

    stem1 = register_module("stem1", ConvBnAct(3, c1, 3, 2));
    stem2 = register_module("stem2", ConvBnAct(c1, c2, 3, 2));
    s2 = register_module("s2", C2f(c2, c2, rep(3), true));
    down3 = register_module("down3", ConvBnAct(c2, c3, 3, 2));
    s3 = register_module("s3", C2f(c3, c3, rep(6), true));
    down4 = register_module("down4", ConvBnAct(c3, c4, 3, 2));
    s4 = register_module("s4", C2f(c4, c4, rep(6), true));
    down5 = register_module("down5", ConvBnAct(c4, c5, 3, 2));
    s5 = register_module("s5", C2f(c5, c5, rep(3), true));
    sppf = register_module("sppf", Sppf(c5, c5));

    top4 = register_module("top4", C2f(c5 + c4, c4, rep(3), false));
    top3 = register_module("top3", C2f(c4 + c3, c3, rep(3), false));
    pan_down3 = register_module("pan_down3", ConvBnAct(c3, c3, 3, 2));
    pan4 = register_module("pan4", C2f(c3 + c4, c4, rep(3), false));
    pan_down4 = register_module("pan_down4", ConvBnAct(c4, c4, 3, 2));
    pan5 = register_module("pan5", C2f(c4 + c5, c5, rep(3), false));

    const std::array<std::int64_t, 3> level_ch = {c3, c4, c5};
    const auto box_mid = std::max<std::int64_t>({16, c3 / 4, 64});
    const auto cls_mid = std::max<std::int64_t>(c3, std::min<std::int64_t>(nc_, 100));
    for (int l = 0; l < 3; ++l) {
      box_.push_back(register_module("box" + std::to_string(l), HeadBranch(level_ch[l], box_mid, 4)));
      cls_.push_back(register_module("cls" + std::to_string(l), HeadBranch(level_ch[l], cls_mid, nc_)));
    }
    init_weights();
    build_anchors();
  }

  RawPredictions forward(const torch::Tensor& x) {
    auto p3 = s3(down3(s2(stem2(stem1(x)))));
    auto p4 = s4(down4(p3));
    auto p5 = sppf(s5(down5(p4)));
    auto up = [](const torch::Tensor& t) {
      return tnn::functional::interpolate(
          t, tnn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    };
    auto h4 = top4(torch::cat({up(p5), p4}, 1));
    auto o3 = top3(torch::cat({up(h4), p3}, 1));
    auto o4 = pan4(torch::cat({pan_down3(o3), h4}, 1));
    auto o5 = pan5(torch::cat({pan_down4(o4), p5}, 1));
    const std::array<torch::Tensor, 3> feats = {o3, o4, o5};

    std::vector<torch::Tensor> dist, logits;
    for (int l = 0; l < 3; ++l) {
      dist.push_back(box_[l](feats[l]).flatten(2).transpose(1, 2));
      logits.push_back(cls_[l](feats[l]).flatten(2).transpose(1, 2));
    }
    const auto ltrb = tnn::functional::softplus(torch::cat(dist, 1)) * strides_.unsqueeze(-1);
    const auto ax = anchors_.select(1, 0);
    const auto ay = anchors_.select(1, 1);
    auto boxes = torch::stack({ax - ltrb.select(2, 0), ay - ltrb.select(2, 1), ax + ltrb.select(2, 2),
                               ay + ltrb.select(2, 3)},
                              2);
    return {boxes, torch::cat(logits, 1)};
  }

  int input_size() const noexcept { return size_; }
  int num_classes() const noexcept { return nc_; }
  const torch::Tensor& anchors() const noexcept { return anchors_; }
  const torch::Tensor& strides() const noexcept { return strides_; }
  const torch::Tensor& levels() const noexcept { return levels_; }

 private:
  void init_weights() {
    torch::NoGradGuard g;
    for (int l = 0; l < 3; ++l) {
      box_[l]->out->bias.fill_(1.0);
      const double s = static_cast<double>(size_) / static_cast<double>(kStrides[l]);
      cls_[l]->out->bias.fill_(std::log(5.0 / nc_ / (s * s)));
    }
  }

  void build_anchors() {
    std::vector<float> a, s, lv;
    for (int l = 0; l < 3; ++l) {
      const auto st = kStrides[l];
      const auto n = size_ / st;
      for (std::int64_t y = 0; y < n; ++y) {
        for (std::int64_t x = 0; x < n; ++x) {
          a.push_back(static_cast<float>((x + 0.5) * st));
          a.push_back(static_cast<float>((y + 0.5) * st));
          s.push_back(static_cast<float>(st));
          lv.push_back(static_cast<float>(l));
        }
      }
    }
    const auto count = static_cast<std::int64_t>(s.size());
    anchors_ = torch::tensor(a).view({count, 2});
    strides_ = torch::tensor(s);
    levels_ = torch::tensor(lv).to(torch::kInt64);
  }

  int nc_;
  int size_;
  ConvBnAct stem1{nullptr}, stem2{nullptr}, down3{nullptr}, down4{nullptr}, down5{nullptr};
  ConvBnAct pan_down3{nullptr}, pan_down4{nullptr};
  C2f s2{nullptr}, s3{nullptr}, s4{nullptr}, s5{nullptr}, top4{nullptr}, top3{nullptr}, pan4{nullptr}, pan5{nullptr};
  Sppf sppf{nullptr};
  std::vector<HeadBranch> box_, cls_;
  torch::Tensor anchors_, strides_, levels_;
};

// ------------------------------------------------------------------ config

namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("invalid detector config: " + field + " " + rule);
}

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void DetectorConfig::validate() const {
  variant_scaling(variant);
  require(num_classes == static_cast<int>(kNumClasses), "num_classes",
          fmt::format("must be {} (glioma, meningioma, no_tumor, pituitary), got {}", kNumClasses, num_classes));
  require(epochs >= 1, "epochs", "must be >= 1");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(input_size >= 64 && input_size % 32 == 0, "input_size", "must be a multiple of 32 and >= 64");
  require(lr0 > 0.0, "lr0", "must be > 0");
  require(lrf > 0.0 && lrf <= 1.0, "lrf", "must be in (0,1]");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(warmup_epochs >= 0.0, "warmup_epochs", "must be >= 0");
  require(conf_threshold > 0.0 && conf_threshold < 1.0, "conf_threshold", "must be in (0,1)");
  require(nms_iou_threshold > 0.0 && nms_iou_threshold < 1.0, "nms_iou_threshold", "must be in (0,1)");
  require(max_detections >= 1, "max_detections", "must be >= 1");
  const auto& a = augmentation;
  require(in_unit(a.hflip), "augmentation.hflip", "must be in [0,1]");
  require(in_unit(a.vflip), "augmentation.vflip", "must be in [0,1]");
  require(a.scale >= 0.0 && a.scale < 1.0, "augmentation.scale", "must be in [0,1)");
  require(a.brightness >= 0.0 && a.brightness <= 1.0, "augmentation.brightness", "must be in [0,1]");
  require(a.contrast >= 0.0 && a.contrast < 1.0, "augmentation.contrast", "must be in [0,1)");
  require(in_unit(a.blur_prob), "augmentation.blur_prob", "must be in [0,1]");
  require(a.blur_sigma_max >= 0.0, "augmentation.blur_sigma_max", "must be >= 0");
}

json to_json(const DetectorConfig& c) {
  const auto& a = c.augmentation;
  return {{"variant", c.variant},
          {"num_classes", c.num_classes},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"input_size", c.input_size},
          {"lr0", c.lr0},
          {"lrf", c.lrf},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"conf_threshold", c.conf_threshold},
          {"nms_iou_threshold", c.nms_iou_threshold},
          {"max_detections", c.max_detections},
          {"augmentation",
           {{"hflip", a.hflip},
            {"vflip", a.vflip},
            {"scale", a.scale},
            {"brightness", a.brightness},
            {"contrast", a.contrast},
            {"blur_prob", a.blur_prob},
            {"blur_sigma_max", a.blur_sigma_max}}},
          {"require_pretrained", c.require_pretrained},
          {"weights_dir", c.weights_dir}};
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  const auto defaults = to_json(c);
  if (!j.is_object()) throw ConfigError("detector config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown detector config key '" + key + "'");
    if (key == "augmentation") {
      for (const auto& [sub, v] : value.items()) {
        if (!defaults[key].contains(sub)) throw ConfigError("unknown detector config key 'augmentation." + sub + "'");
      }
    }
  }
  try {
    auto get = [&](const char* k, auto& dst) {
      if (j.contains(k)) dst = j[k].get<std::decay_t<decltype(dst)>>();
    };
    get("variant", c.variant);
    get("num_classes", c.num_classes);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("input_size", c.input_size);
    get("lr0", c.lr0);
    get("lrf", c.lrf);
    get("weight_decay", c.weight_decay);
    get("warmup_epochs", c.warmup_epochs);
    get("conf_threshold", c.conf_threshold);
    get("nms_iou_threshold", c.nms_iou_threshold);
    get("max_detections", c.max_detections);
    get("require_pretrained", c.require_pretrained);
    get("weights_dir", c.weights_dir);
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      auto& d = c.augmentation;
      d.hflip = a.value("hflip", d.hflip);
      d.vflip = a.value("vflip", d.vflip);
      d.scale = a.value("scale", d.scale);
      d.brightness = a.value("brightness", d.brightness);
      d.contrast = a.value("contrast", d.contrast);
      d.blur_prob = a.value("blur_prob", d.blur_prob);
      d.blur_sigma_max = a.value("blur_sigma_max", d.blur_sigma_max);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detector config: ") + e.what());
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------------ postprocessing

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence() > b.confidence(); });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.box.class_id == d.box.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> postprocess(const std::vector<Detection>& candidates, double conf_threshold,
                                   double iou_threshold, int max_detections) {
  std::vector<Detection> passing;
  for (const auto& c : candidates) {
    if (c.confidence() < conf_threshold) continue;
    Detection d{clip(c.box)};
    if (d.box.w <= 0.0 || d.box.h <= 0.0) continue;
    passing.push_back(d);
  }
  auto kept = nms(std::move(passing), iou_threshold);
  if (kept.size() > static_cast<std::size_t>(max_detections)) kept.resize(static_cast<std::size_t>(max_detections));
  return kept;
}

// ------------------------------------------------------------------ handle

namespace {

torch::Tensor image_batch(std::span<const ImageTensor> imgs) {
  const int h = imgs.front().height();
  const int w = imgs.front().width();
  auto out = torch::empty({static_cast<std::int64_t>(imgs.size()), h, w, 3}, torch::kFloat32);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    std::copy(imgs[i].data().begin(), imgs[i].data().end(), out[static_cast<std::int64_t>(i)].data_ptr<float>());
  }
  return out.permute({0, 3, 1, 2}).contiguous();
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw CheckpointError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw CheckpointError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

}  // namespace

Detector Detector::build(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  Detector d;
  d.config_ = config;
  torch::manual_seed(seed);
  d.net_ = std::make_shared<DetectorNet>(config.variant, config.num_classes, config.input_size);
  const auto dir = resolve_weights_dir(config.weights_dir);
  const auto file = dir.empty() ? fs::path{} : dir / (config.variant + ".pt");
  if (!file.empty() && fs::exists(file)) {
    load_tensor_dict(*d.net_, file);
    d.pretrained_ = true;
  } else {
    const auto why = file.empty() ? std::string("no weights directory configured") : file.string() + " not found";
    if (config.require_pretrained) throw CheckpointError("pretrained detector weights required: " + why);
    d.warnings_.push_back("pretrained=false: " + why + "; " + config.variant + " uses random initialization");
  }
  d.net_->eval();
  return d;
}

void Detector::save(const fs::path& dir) const {
  fs::create_directories(dir);
  write_json_file(dir / "config.json", {{"format", kCheckpointFormat}, {"pretrained", pretrained_}, {"config", to_json(config_)}});
  torch::serialize::OutputArchive archive;
  net_->save(archive);
  archive.save_to((dir / "weights.pt").string());
}

Detector Detector::load(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("detector checkpoint " + dir.string() + " not found");
  const auto j = read_json_file(dir / "config.json");
  if (j.value("format", "") != kCheckpointFormat) {
    throw CheckpointError((dir / "config.json").string() + " is not a detector checkpoint");
  }
  Detector d;
  try {
    d.config_ = detector_config_from_json(j.at("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError((dir / "config.json").string() + ": " + e.what());
  }
  d.pretrained_ = j.value("pretrained", false);
  d.net_ = std::make_shared<DetectorNet>(d.config_.variant, d.config_.num_classes, d.config_.input_size);
  const auto weights = dir / "weights.pt";
  if (!fs::exists(weights)) throw CheckpointError(weights.string() + " not found");
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(weights.string());
    d.net_->load(archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot load " + weights.string() + ": " + e.what_without_backtrace());
  }
  d.net_->eval();
  return d;
}

torch::nn::Module& Detector::module() const noexcept { return *net_; }

std::int64_t Detector::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net_->parameters()) n += p.numel();
  return n;
}

RawPredictions Detector::forward(const torch::Tensor& batch) const { return net_->forward(batch); }

std::vector<Detection> Detector::candidates(const ImageTensor& img, double min_confidence) const {
  const int s = config_.input_size;
  if (img.height() != s || img.width() != s) {
    throw ShapeError(fmt::format("detector expects {}x{}x3 input, got {}x{}x3", s, s, img.height(), img.width()));
  }
  RawPredictions raw;
  {
    std::lock_guard lock(*mu_);
    torch::NoGradGuard no_grad;
    net_->eval();
    raw = net_->forward(image_batch({&img, 1}));
  }
  const auto probs = torch::sigmoid(raw.cls_logits[0]).to(torch::kFloat64);
  const auto [conf, cls] = probs.max(1);
  const auto boxes = raw.boxes[0].to(torch::kFloat64).contiguous();
  const auto keep = conf.ge(min_confidence).nonzero().flatten();
  const auto* b = boxes.data_ptr<double>();
  const auto* c = conf.contiguous().data_ptr<double>();
  const auto* k = cls.contiguous().data_ptr<std::int64_t>();
  const auto* idx = keep.data_ptr<std::int64_t>();
  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(keep.numel()));
  for (std::int64_t i = 0; i < keep.numel(); ++i) {
    const auto a = idx[i];
    const auto label = *label_from_index(k[a]);
    out.push_back({box_from_corners(label, b[4 * a] / s, b[4 * a + 1] / s, b[4 * a + 2] / s, b[4 * a + 3] / s, c[a])});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& x, const Detection& y) { return x.confidence() > y.confidence(); });
  if (out.size() > 3000) out.resize(3000);
  return out;
}

std::vector<Detection> Detector::detect(const ImageTensor& img, std::optional<double> conf) const {
  const double t = conf.value_or(config_.conf_threshold);
  return postprocess(candidates(img, std::min(t, 1e-3)), t, config_.nms_iou_threshold, config_.max_detections);
}

std::vector<Detection> Detector::detect_path(const fs::path& image, std::optional<double> conf) const {
  return detect(normalize(decode_and_resize(image, {config_.input_size, config_.input_size})), conf);
}

// ------------------------------------------------------------------ training

namespace {

struct Sample {
  ImageTensor image;
  std::vector<Box> boxes;
};

Sample augment_sample(Sample s, const DetectorAugmentation& a, std::mt19937_64& rng) {
  // Fixed number of draws per sample keeps the stream aligned across policies.
  const bool hf = uniform01(rng) < a.hflip;
  const bool vf = uniform01(rng) < a.vflip;
  const double scale = uniform(rng, 1.0 - a.scale, 1.0 + a.scale);
  const double bright = uniform(rng, -a.brightness, a.brightness);
  const double gain = uniform(rng, 1.0 - a.contrast, 1.0 + a.contrast);
  const bool blur = uniform01(rng) < a.blur_prob;
  const double sigma = uniform(rng, 0.1, std::max(0.1, a.blur_sigma_max));

  if (hf) {
    s.image = flip(s.image, FlipAxis::horizontal);
    for (auto& b : s.boxes) b.cx = 1.0 - b.cx;
  }
  if (vf) {
    s.image = flip(s.image, FlipAxis::vertical);
    for (auto& b : s.boxes) b.cy = 1.0 - b.cy;
  }
  if (a.scale > 0.0 && scale != 1.0) {
    s.image = zoom(s.image, scale, a.scale);
    std::vector<Box> kept;
    for (auto b : s.boxes) {
      b.cx = 0.5 + (b.cx - 0.5) * scale;
      b.cy = 0.5 + (b.cy - 0.5) * scale;
      b.w *= scale;
      b.h *= scale;
      b = clip(b);
      if (b.w > 0.01 && b.h > 0.01) kept.push_back(b);
    }
    s.boxes = std::move(kept);
  }
  for (auto& v : s.image.data()) v = std::clamp(static_cast<float>((v - 0.5) * gain + 0.5 + bright), 0.0f, 1.0f);
  if (blur && a.blur_sigma_max > 0.0) {
    cv::Mat m(s.image.height(), s.image.width(), CV_32FC3, s.image.data().data());
    cv::GaussianBlur(m, m, cv::Size(0, 0), sigma);
  }
  return s;
}

struct LossParts {
  torch::Tensor total;
  double box = 0.0;
  double cls = 0.0;
};

torch::Tensor giou(const torch::Tensor& p, const torch::Tensor& g) {
  constexpr double eps = 1e-7;
  const auto ix1 = torch::max(p.select(1, 0), g.select(1, 0));
  const auto iy1 = torch::max(p.select(1, 1), g.select(1, 1));
  const auto ix2 = torch::min(p.select(1, 2), g.select(1, 2));
  const auto iy2 = torch::min(p.select(1, 3), g.select(1, 3));
  const auto inter = (ix2 - ix1).clamp_min(0) * (iy2 - iy1).clamp_min(0);
  const auto ap = (p.select(1, 2) - p.select(1, 0)) * (p.select(1, 3) - p.select(1, 1));
  const auto ag = (g.select(1, 2) - g.select(1, 0)) * (g.select(1, 3) - g.select(1, 1));
  const auto uni = ap + ag - inter + eps;
  const auto cw = torch::max(p.select(1, 2), g.select(1, 2)) - torch::min(p.select(1, 0), g.select(1, 0));
  const auto chh = torch::max(p.select(1, 3), g.select(1, 3)) - torch::min(p.select(1, 1), g.select(1, 1));
  const auto c = cw * chh + eps;
  return inter / uni - (c - uni) / c;
}

/// Anchor -> ground-truth index (-1 for background). Candidates are anchors
/// inside the box, within 2.5 strides of its center and on the level whose
/// size range covers the box extent; relaxed level-free, then to the
/// nearest anchor, so every box gets at least one anchor. Overlaps resolve
/// to the smallest box.
torch::Tensor assign(const DetectorNet& net, const torch::Tensor& gt) {
  const auto& anchors = net.anchors();
  const auto A = anchors.size(0);
  if (gt.size(0) == 0) return torch::full({A}, -1, torch::kInt64);
  const double unit = net.input_size() / 640.0;
  const auto lo = torch::tensor({0.0f, 64.0f, 128.0f}).mul(unit).index_select(0, net.levels());
  const auto hi = torch::tensor({64.0f, 128.0f, 1e9f}).mul(unit).index_select(0, net.levels());
  const auto ax = anchors.select(1, 0);
  const auto ay = anchors.select(1, 1);
  const auto radius = net.strides() * 2.5;
  auto cost = torch::full({gt.size(0), A}, INFINITY);
  for (std::int64_t g = 0; g < gt.size(0); ++g) {
    const auto x1 = gt[g][0], y1 = gt[g][1], x2 = gt[g][2], y2 = gt[g][3];
    const auto l = ax - x1, t = ay - y1, r = x2 - ax, b = y2 - ay;
    const auto inside = torch::min(torch::min(l, t), torch::min(r, b)).gt(0);
    const auto extent = torch::max(torch::max(l, t), torch::max(r, b));
    const auto cx = (x1 + x2) / 2, cy = (y1 + y2) / 2;
    const auto center = (ax - cx).abs().lt(radius) & (ay - cy).abs().lt(radius);
    auto cand = inside & center & extent.ge(lo) & extent.le(hi);
    if (!cand.any().item<bool>()) cand = inside & center;
    if (!cand.any().item<bool>()) {
      cand = torch::zeros({A}, torch::kBool);
      cand[((ax - cx).pow(2) + (ay - cy).pow(2)).argmin()] = true;
    }
    const auto area = (x2 - x1) * (y2 - y1);
    cost[g] = torch::where(cand, area.expand({A}), torch::full({A}, INFINITY));
  }
  const auto [best, idx] = cost.min(0);
  return torch::where(torch::isfinite(best), idx, torch::full_like(idx, -1));
}

LossParts detection_loss(const DetectorNet& net, const RawPredictions& raw, const std::vector<Sample>& batch) {
  constexpr double kBoxGain = 5.0;
  constexpr double kClsGain = 1.0;
  const int s = net.input_size();
  const int nc = net.num_classes();
  torch::Tensor box_sum = torch::zeros({});
  torch::Tensor cls_sum = torch::zeros({});
  std::int64_t positives = 0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& boxes = batch[n].boxes;
    auto gt = torch::empty({static_cast<std::int64_t>(boxes.size()), 4});
    std::vector<std::int64_t> labels;
    for (std::size_t g = 0; g < boxes.size(); ++g) {
      const auto& b = boxes[g];
      gt[static_cast<std::int64_t>(g)] = torch::tensor({static_cast<float>(b.x1() * s), static_cast<float>(b.y1() * s),
                                                        static_cast<float>(b.x2() * s), static_cast<float>(b.y2() * s)});
      labels.push_back(to_index(b.class_id));
    }
    const auto target = assign(net, gt);
    const auto pos = target.ge(0);
    auto cls_target = torch::zeros({target.size(0), nc});
    const auto pos_idx = pos.nonzero().flatten();
    const auto n_pos = pos_idx.numel();
    const auto logits = raw.cls_logits[static_cast<std::int64_t>(n)];
    if (n_pos > 0) {
      const auto gt_idx = target.index_select(0, pos_idx);
      const auto lab = torch::tensor(labels, torch::kInt64).index_select(0, gt_idx);
      cls_target.index_put_({pos_idx, lab}, 1.0);
      const auto pred = raw.boxes[static_cast<std::int64_t>(n)].index_select(0, pos_idx);
      box_sum = box_sum + (1.0 - giou(pred, gt.index_select(0, gt_idx))).sum();
    }
    cls_sum = cls_sum + tnn::functional::binary_cross_entropy_with_logits(
                            logits, cls_target, tnn::functional::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kSum));
    positives += n_pos;
  }
  const double norm = static_cast<double>(std::max<std::int64_t>(positives, 1));
  auto box_loss = box_sum / norm;
  auto cls_loss = cls_sum / norm;
  return {kBoxGain * box_loss + kClsGain * cls_loss, box_loss.item<double>(), cls_loss.item<double>()};
}

class SampleSource {
 public:
  SampleSource(const Manifest& m, int size, std::size_t budget, std::size_t expected) : m_(m), size_(size) {
    cache_ = static_cast<std::size_t>(size) * size * 3 * sizeof(float) * expected <= budget;
  }
  Sample get(std::size_t i) {
    if (cache_) {
      if (auto it = cache_map_.find(i); it != cache_map_.end()) return it->second;
    }
    const auto& r = m_.records()[i];
    Sample s{normalize(decode_and_resize(r.image_path, {size_, size_})), r.boxes};
    if (cache_) cache_map_.emplace(i, s);
    return s;
  }

 private:
  const Manifest& m_;
  int size_;
  bool cache_;
  std::unordered_map<std::size_t, Sample> cache_map_;
};

std::vector<torch::Tensor> snapshot(tnn::Module& m) {
  torch::NoGradGuard g;
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(tnn::Module& m, const std::vector<torch::Tensor>& s) {
  torch::NoGradGuard g;
  std::size_t k = 0;
  for (auto& p : m.parameters()) p.copy_(s.at(k++));
  for (auto& b : m.buffers()) b.copy_(s.at(k++));
}

}  // namespace

json to_json(const DetectorTrainingLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"box_loss", e.box_loss},
                      {"cls_loss", e.cls_loss},
                      {"lr", e.lr},
                      {"val_map50", e.val_map50},
                      {"val_map50_95", e.val_map50_95},
                      {"fitness", e.fitness}});
  }
  return {{"epochs", epochs}, {"best_epoch", log.best_epoch}, {"notes", log.notes}};
}

ImageGroundTruth ground_truth(const Manifest& manifest, Split split) {
  ImageGroundTruth gts;
  for (auto i : manifest.indices_in(split)) {
    const auto& r = manifest.records()[i];
    gts[r.image_path.generic_string()] = r.boxes;
  }
  return gts;
}

DetectionReport evaluate_detector(const Detector& model, const Manifest& manifest, Split split,
                                  ImageDetections* predictions_out) {
  ImageDetections preds;
  for (auto i : manifest.indices_in(split)) {
    const auto& r = manifest.records()[i];
    preds[r.image_path.generic_string()] = model.detect_path(r.image_path, 1e-3);
  }
  auto report = detection_report(preds, ground_truth(manifest, split), model.config().conf_threshold);
  if (predictions_out) *predictions_out = std::move(preds);
  return report;
}

DetectorTrainResult train_detector(const Manifest& manifest, const DetectorConfig& config, std::uint64_t seed,
                                   const DetectorTrainOptions& options) {
  config.validate();
  if (manifest.corpus_kind() != CorpusKind::detection) throw ConfigError("train_detector needs a detection manifest");
  const auto train_idx = manifest.indices_in(Split::train);
  const auto val_idx = manifest.indices_in(Split::val);
  if (train_idx.empty()) throw TrainingError("detection train split is empty");
  if (val_idx.empty()) throw TrainingError("detection val split is empty");

  auto model = Detector::build(config, seed);
  auto& net = model.net();
  DetectorTrainingLog log;
  log.notes = model.warnings();

  std::vector<torch::Tensor> decay, no_decay;
  for (const auto& p : net.named_parameters()) {
    (p.value().dim() == 4 ? decay : no_decay).push_back(p.value());
  }
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, std::make_unique<torch::optim::AdamWOptions>(
                                 torch::optim::AdamWOptions(config.lr0).weight_decay(config.weight_decay)));
  groups.emplace_back(no_decay, std::make_unique<torch::optim::AdamWOptions>(torch::optim::AdamWOptions(config.lr0).weight_decay(0.0)));
  torch::optim::AdamW optimizer(std::move(groups), torch::optim::AdamWOptions(config.lr0));

  std::vector<tnn::BatchNorm2dImpl*> norms;
  for (auto& m : net.modules(false)) {
    if (auto* bn = m->as<tnn::BatchNorm2d>()) norms.push_back(bn);
  }

  std::mt19937_64 rng(seed);
  SampleSource source(manifest, config.input_size, options.image_cache_bytes, train_idx.size());
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = (train_idx.size() + bs - 1) / bs;
  const std::size_t total = per_epoch * static_cast<std::size_t>(config.epochs);
  const auto warmup = std::min<std::size_t>(static_cast<std::size_t>(std::round(config.warmup_epochs * per_epoch)), total / 2);
  std::size_t iteration = 0;

  double best_fitness = -1.0;
  auto best_state = snapshot(net);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Linear decay from lr0 to lr0 * lrf over the run.
    const double decay_factor = (1.0 - static_cast<double>(epoch - 1) / config.epochs) * (1.0 - config.lrf) + config.lrf;
    auto order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0, box_sum = 0.0, cls_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<Sample> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
        batch.push_back(augment_sample(source.get(order[k]), config.augmentation, rng));
      }
      const double ramp = warmup == 0 ? 1.0 : std::min(1.0, static_cast<double>(iteration + 1) / static_cast<double>(warmup));
      lr = config.lr0 * decay_factor * ramp;
      for (auto& g : optimizer.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);

      std::vector<ImageTensor> imgs;
      for (const auto& s : batch) imgs.push_back(s.image);
      // Running statistics average the first steps uniformly so the unit
      // initial variance does not linger in short runs.
      const double momentum = std::max(0.1, 1.0 / static_cast<double>(iteration + 1));
      for (auto& bn : norms) bn->options.momentum(momentum);
      net.train();
      optimizer.zero_grad();
      const auto raw = net.forward(image_batch(imgs));
      auto loss = detection_loss(net, raw, batch);
      const double lv = loss.total.item<double>();
      if (!std::isfinite(lv)) throw TrainingError(fmt::format("non-finite detector loss at epoch {}", epoch));
      loss.total.backward();
      optimizer.step();
      const auto n = static_cast<double>(batch.size());
      loss_sum += lv * n;
      box_sum += loss.box * n;
      cls_sum += loss.cls * n;
      ++iteration;
    }
    net.eval();
    const auto report = evaluate_detector(model, manifest, Split::val);
    DetectorEpochLog e;
    e.epoch = epoch;
    const auto n = static_cast<double>(order.size());
    e.train_loss = loss_sum / n;
    e.box_loss = box_sum / n;
    e.cls_loss = cls_sum / n;
    e.lr = lr;
    e.val_map50 = report.all.ap50.value_or(0.0);
    e.val_map50_95 = report.all.ap50_95.value_or(0.0);
    e.fitness = 0.1 * e.val_map50 + 0.9 * e.val_map50_95;
    log.epochs.push_back(e);
    if (options.on_epoch) options.on_epoch(e);
    if (e.fitness >= best_fitness) {
      best_fitness = e.fitness;
      log.best_epoch = epoch;
      best_state = snapshot(net);
    }
  }
  restore(net, best_state);
  net.eval();
  if (options.checkpoint_dir) {
    model.save(*options.checkpoint_dir);
    write_json_file(*options.checkpoint_dir / "training_log.json", to_json(log));
  }
  return {std::move(model), std::move(log)};
}

// ------------------------------------------------------------------ JSONL

void write_predictions_jsonl(const ImageDetections& preds, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [image, dets] : preds) {
    for (const auto& d : dets) {
      out << json{{"image", image},
                  {"class_id", to_index(d.box.class_id)},
                  {"cx", d.box.cx},
                  {"cy", d.box.cy},
                  {"w", d.box.w},
                  {"h", d.box.h},
                  {"confidence", d.confidence()}}
                 .dump()
          << "\n";
    }
  }
}

ImageDetections read_predictions_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  ImageDetections out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto label = label_from_index(j.at("class_id").get<long>());
      if (!label) throw ParseError("class_id not in 0..3", n);
      Box b{*label, j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(),
            j.at("h").get<double>(), j.at("confidence").get<double>()};
      if (!is_valid(b)) throw ParseError("invalid box", n);
      out[j.at("image").get<std::string>()].push_back({b});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    } catch (const ParseError& e) {
      throw e.with_context(path.string());
    }
  }
  return out;
}

}  // namespace brainfusion
