#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "brainfusion/classifier.hpp"
#include "brainfusion/error.hpp"
#include "brainfusion/hashing.hpp"
#include "ml_fixtures.hpp"
#include "test_util.hpp"

using namespace brainfusion;

namespace {

/// Reference replay of the reduce-on-plateau rule: lr used in epoch k given
/// the val losses of epochs before it.
std::vector<double> replay_plateau(const std::vector<double>& val_losses, double lr, double factor, int patience,
                                   double min_lr, double min_delta) {
  std::vector<double> lrs;
  double best = INFINITY;
  int stale = 0;
  for (double v : val_losses) {
    lrs.push_back(lr);
    if (v < best - min_delta) {
      best = v;
      stale = 0;
      continue;
    }
    stale += 1;
    if (stale == patience) {
      lr = std::max(lr * factor, min_lr);
      stale = 0;
    }
  }
  return lrs;
}

ClassifierConfig small_config(BackboneId id = BackboneId::vgg16, int size = 64) {
  ClassifierConfig c;
  c.backbone = id;
  c.input_size = size;
  c.weights_dir = "/nonexistent-weights";
  return c;
}

ImageTensor random_image(int size, std::mt19937_64& rng) {
  ImageTensor img(size, size);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

}  // namespace

TEST(Backbone, NamesRoundTripAndUnknownIsConfigError) {
  for (auto id : {BackboneId::vgg16, BackboneId::resnet50, BackboneId::xception}) {
    EXPECT_EQ(backbone_from_string(backbone_name(id)), id);
  }
  EXPECT_THROW(backbone_from_string("alexnet"), ConfigError);
}

TEST(Backbone, Vgg16HasThirteenConvLayersAndTargetBlock5) {
  auto bb = make_backbone(BackboneId::vgg16);
  const auto layers = bb->weight_layers();
  ASSERT_EQ(layers.size(), 13u);
  EXPECT_EQ(layers.front().name, "block1_conv1");
  EXPECT_EQ(layers.back().name, "block5_conv3");
  EXPECT_EQ(bb->target_layer(), "block5_conv3");
  torch::NoGradGuard g;
  const auto f = bb->feature_map(bb->preprocess(torch::rand({1, 3, 224, 224})));
  EXPECT_EQ(f.sizes(), (std::vector<std::int64_t>{1, 512, 14, 14}));
}

TEST(Backbone, ResNetAndXceptionFeatureShapes) {
  torch::NoGradGuard g;
  auto rn = make_backbone(BackboneId::resnet50);
  EXPECT_EQ(rn->weight_layers().size(), 53u);
  auto f = rn->feature_map(rn->preprocess(torch::rand({1, 3, 224, 224})));
  EXPECT_EQ(f.sizes(), (std::vector<std::int64_t>{1, 2048, 7, 7}));
  auto xc = make_backbone(BackboneId::xception);
  EXPECT_EQ(xc->weight_layers().size(), 40u);
  f = xc->feature_map(xc->preprocess(torch::rand({1, 3, 224, 224})));
  EXPECT_EQ(f.sizes(), (std::vector<std::int64_t>{1, 2048, 7, 7}));
}

TEST(Backbone, ParameterNamesFollowTorchvisionLayout) {
  auto names = [](BackboneId id) {
    std::set<std::string> out;
    for (const auto& p : make_backbone(id)->named_parameters()) out.insert(p.key());
    return out;
  };
  const auto vgg = names(BackboneId::vgg16);
  EXPECT_TRUE(vgg.count("features.0.weight"));
  EXPECT_TRUE(vgg.count("features.28.bias"));
  const auto rn = names(BackboneId::resnet50);
  EXPECT_TRUE(rn.count("layer1.0.downsample.0.weight"));
  EXPECT_TRUE(rn.count("layer4.2.bn3.weight"));
  const auto xc = names(BackboneId::xception);
  EXPECT_TRUE(xc.count("block1.rep.0.conv1.weight"));
  EXPECT_TRUE(xc.count("block12.skip.weight"));
  EXPECT_TRUE(xc.count("conv4.pointwise.weight"));
}

TEST(Backbone, LoadsPickledWeightsAndChecksChecksum) {
  bf_test::TempDir dir;
  torch::manual_seed(7);
  auto source = make_backbone(BackboneId::vgg16);
  c10::Dict<std::string, torch::Tensor> dict;
  for (const auto& p : source->named_parameters()) dict.insert(p.key(), p.value().detach());
  const auto bytes = torch::pickle_save(dict);
  const auto file = dir / "vgg16.pt";
  std::ofstream(file, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  torch::manual_seed(8);
  auto target = make_backbone(BackboneId::vgg16);
  const auto r = load_pretrained(*target, dir.path());
  EXPECT_TRUE(r.loaded);
  EXPECT_TRUE(torch::equal(target->named_parameters()["features.28.weight"],
                           source->named_parameters()["features.28.weight"]));

  std::ofstream(dir / "vgg16.pt.sha256") << sha256_hex(std::string_view(bytes.data(), bytes.size())) << "\n";
  EXPECT_TRUE(load_pretrained(*target, dir.path()).loaded);
  std::ofstream(dir / "vgg16.pt.sha256") << std::string(64, '0') << "\n";
  EXPECT_THROW(load_pretrained(*target, dir.path()), CheckpointError);
}

TEST(Backbone, MissingWeightsFallBackWithWarning) {
  auto bb = make_backbone(BackboneId::vgg16);
  const auto r = load_pretrained(*bb, "/nonexistent-weights");
  EXPECT_FALSE(r.loaded);
  EXPECT_NE(r.warning.find("random initialization"), std::string::npos);

  auto cfg = small_config();
  const auto model = Classifier::build(cfg);
  EXPECT_FALSE(model.pretrained());
  ASSERT_FALSE(model.warnings().empty());
  EXPECT_EQ(model.warnings().front().rfind("pretrained=false", 0), 0u);
  cfg.require_pretrained = true;
  EXPECT_THROW(Classifier::build(cfg), CheckpointError);
}

TEST(ClassifierConfig, ValidationNamesTheField) {
  auto expect_bad = [](auto mutate, const std::string& field) {
    ClassifierConfig c;
    mutate(c);
    try {
      c.validate();
      ADD_FAILURE() << field << " accepted";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_bad([](ClassifierConfig& c) { c.unfreeze_last_n = -1; }, "unfreeze_last_n");
  expect_bad([](ClassifierConfig& c) { c.initial_lr = 0.0; }, "initial_lr");
  expect_bad([](ClassifierConfig& c) { c.epochs = 0; }, "epochs");
  expect_bad([](ClassifierConfig& c) { c.plateau.factor = 1.0; }, "plateau.factor");
  expect_bad([](ClassifierConfig& c) { c.input_size = 100; }, "input_size");
}

TEST(ClassifierConfig, JsonRoundTripAndUnknownKey) {
  ClassifierConfig c;
  c.backbone = BackboneId::xception;
  c.unfreeze_last_n = 3;
  c.plateau.patience = 7;
  c.augmentation.shear_limit = 0.2;
  const auto back = classifier_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(classifier_config_from_json({{"learning_rate", 0.1}}), ConfigError);
  EXPECT_THROW(classifier_config_from_json({{"plateau", {{"cooldown", 1}}}}), ConfigError);
}

TEST(Freezing, Vgg16LastFiveWeightLayersTrainable) {
  const auto model = Classifier::build(small_config());
  const auto layers = model.backbone_layers();
  ASSERT_EQ(layers.size(), 13u);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    EXPECT_EQ(layers[i].trainable, i >= 8) << layers[i].name;
  }
  EXPECT_EQ(layers[8].name, "block4_conv2");
  std::int64_t expected = 0;
  for (std::size_t i = 8; i < 13; ++i) expected += layers[i].parameters;
  EXPECT_EQ(model.trainable_backbone_parameter_count(), expected);
}

TEST(Freezing, ZeroUnfreezeLeavesOnlyHeadTrainable) {
  auto cfg = small_config();
  cfg.unfreeze_last_n = 0;
  auto model = Classifier::build(cfg);
  EXPECT_EQ(model.trainable_backbone_parameter_count(), 0);
  std::int64_t head = 0;
  for (const auto& p : model.net().head->parameters()) head += p.numel();
  EXPECT_EQ(model.trainable_parameter_count(), head);
}

TEST(Freezing, BatchNormFollowsItsConv) {
  auto cfg = small_config(BackboneId::resnet50, 64);
  auto model = Classifier::build(cfg);
  const auto layers = model.backbone_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) EXPECT_EQ(layers[i].trainable, i + 5 >= layers.size());
  // The 48 frozen layers' norms stay in inference mode while training.
  model.net().train();
  ASSERT_EQ(model.net().frozen_norms.size(), layers.size() - 5);
  for (const auto& bn : model.net().frozen_norms) EXPECT_FALSE(bn->is_training());
  EXPECT_TRUE(model.net().head->is_training());
}

TEST(Freezing, OneStepLeavesFrozenWeightsBitwiseUnchanged) {
  auto model = Classifier::build(small_config());
  std::vector<torch::Tensor> before;
  for (const auto& l : model.net().backbone->weight_layers()) before.push_back(l.parameters[0].detach().clone());
  auto opt = make_optimizer(model, 1e-3);
  const auto images = torch::rand({4, 3, 64, 64});
  const auto labels = torch::tensor({0, 1, 2, 3}, torch::kInt64);
  train_step(model, *opt, images, labels);
  const auto layers = model.net().backbone->weight_layers();
  bool any_changed = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool same = torch::equal(before[i], layers[i].parameters[0]);
    if (i < 8) EXPECT_TRUE(same) << layers[i].name;
    if (i >= 8 && !same) any_changed = true;
  }
  EXPECT_TRUE(any_changed);
}

TEST(Predict, ScoresFormASimplexForAnyInput) {
  for (auto id : {BackboneId::vgg16, BackboneId::resnet50, BackboneId::xception}) {
    const auto model = Classifier::build(small_config(id, 96), 3);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(model.predict(random_image(96, rng)).is_simplex(1e-5));
    EXPECT_TRUE(model.predict(ImageTensor(96, 96, 0.0f)).is_simplex(1e-5));
    EXPECT_TRUE(model.predict(ImageTensor(96, 96, 1.0f)).is_simplex(1e-5));
  }
}

TEST(Predict, BatchEqualsSingles) {
  const auto model = Classifier::build(small_config(BackboneId::vgg16, 64), 5);
  std::mt19937_64 rng(2);
  std::vector<ImageTensor> imgs;
  for (int k = 0; k < 5; ++k) imgs.push_back(random_image(64, rng));
  const auto batch = model.predict_batch(imgs);
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    const auto single = model.predict(imgs[k]);
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_NEAR(batch[k].probs[c], single.probs[c], 1e-6);
  }
}

TEST(Predict, WrongShapeIsShapeError) {
  const auto model = Classifier::build(small_config(BackboneId::vgg16, 64));
  EXPECT_THROW(model.predict(ImageTensor(32, 64)), ShapeError);
}

TEST(Scheduler, StrictImprovementNeverReducesLr) {
  PlateauScheduler s({}, 1e-5);
  EarlyStopping e(10, 1e-4);
  for (int k = 0; k < 40; ++k) {
    const double v = 2.0 - 0.01 * k;
    EXPECT_FALSE(e.step(v, k + 1));
    EXPECT_EQ(s.step(v), 1e-5);
  }
}

TEST(Scheduler, ConstantLossReducesAfterPatienceAndStops) {
  PlateauScheduler s({0.5, 5, 1e-7, 1e-4}, 1e-5);
  EarlyStopping e(10, 1e-4);
  std::vector<double> lrs;
  int stopped = 0;
  for (int epoch = 1; epoch <= 30; ++epoch) {
    lrs.push_back(s.lr());
    const bool stop = e.step(1.0, epoch);
    s.step(1.0);
    if (stop) {
      stopped = epoch;
      break;
    }
  }
  // Epoch 1 sets the best; epochs 2-6 stall, so epoch 7 runs at half rate.
  EXPECT_EQ(stopped, 11);
  EXPECT_EQ(e.best_epoch(), 1);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(lrs[k], 1e-5);
  for (int k = 6; k < 11; ++k) EXPECT_EQ(lrs[k], 5e-6);
}

TEST(Scheduler, FloorsAtMinLr) {
  PlateauScheduler s({0.1, 1, 1e-7, 1e-4}, 1e-5);
  s.step(1.0);
  for (int k = 0; k < 10; ++k) s.step(1.0);
  EXPECT_EQ(s.lr(), 1e-7);
}

TEST(Scheduler, SubThresholdImprovementCountsAsStall) {
  const std::vector<double> v = {1.0, 0.99995, 0.9999, 0.99989, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9};
  PlateauScheduler s({0.5, 2, 1e-7, 1e-4}, 1.0);
  std::vector<double> lrs;
  for (double x : v) {
    lrs.push_back(s.lr());
    s.step(x);
  }
  EXPECT_EQ(lrs, replay_plateau(v, 1.0, 0.5, 2, 1e-7, 1e-4));
}

TEST(Scheduler, MatchesReplayOnRandomSeries) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v;
    double x = 2.0;
    for (int k = 0; k < 60; ++k) v.push_back(x += u(rng));
    PlateauScheduler s({0.5, 3, 1e-4, 1e-4}, 1e-2);
    std::vector<double> lrs;
    for (double y : v) {
      lrs.push_back(s.lr());
      s.step(y);
    }
    ASSERT_EQ(lrs, replay_plateau(v, 1e-2, 0.5, 3, 1e-4, 1e-4));
  }
}

class TrainingFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new bf_test::TempDir("bf_cls");
    manifest_ = new Manifest(bf_test::phantom_manifest(dir_->path() / "corpus", 2, 1, 1, 96, 21));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static ClassifierConfig overfit_config() {
    auto c = small_config(BackboneId::vgg16, 64);
    c.unfreeze_last_n = 0;
    c.augment = false;
    c.epochs = 30;
    c.initial_lr = 1e-3;
    c.batch_size = 8;
    c.early_stop_patience = 30;
    return c;
  }

  static bf_test::TempDir* dir_;
  static Manifest* manifest_;
};
bf_test::TempDir* TrainingFixture::dir_ = nullptr;
Manifest* TrainingFixture::manifest_ = nullptr;

TEST_F(TrainingFixture, OverfitsTwoImagesPerClass) {
  const auto cfg = overfit_config();
  auto model = Classifier::build(cfg, 1);
  const auto log = train(model, *manifest_, cfg, 1);
  EXPECT_TRUE(log.cached_features);
  ASSERT_EQ(log.epochs.size(), 30u);
  double best_acc = 0.0;
  for (const auto& e : log.epochs) best_acc = std::max(best_acc, e.train_accuracy);
  EXPECT_EQ(best_acc, 1.0);
  for (auto i : manifest_->indices_in(Split::train)) {
    const auto& r = manifest_->records()[i];
    if (r.label != ClassLabel::glioma) continue;
    EXPECT_EQ(model.predict_path(r.image_path).argmax(), ClassLabel::glioma) << r.image_path;
  }
}

TEST_F(TrainingFixture, LogInvariantsAndReplay) {
  auto cfg = overfit_config();
  cfg.epochs = 25;
  cfg.plateau.patience = 2;
  cfg.early_stop_patience = 4;
  auto model = Classifier::build(cfg, 2);
  const auto log = train(model, *manifest_, cfg, 2);
  ASSERT_FALSE(log.epochs.empty());
  EXPECT_LE(log.best_epoch, log.stopped_epoch);
  EXPECT_EQ(log.stopped_epoch, static_cast<int>(log.epochs.size()));
  std::vector<double> vl, lrs;
  for (const auto& e : log.epochs) {
    vl.push_back(e.val_loss);
    lrs.push_back(e.lr);
  }
  for (std::size_t k = 1; k < lrs.size(); ++k) EXPECT_LE(lrs[k], lrs[k - 1]);
  EXPECT_EQ(lrs, replay_plateau(vl, cfg.initial_lr, cfg.plateau.factor, cfg.plateau.patience, cfg.plateau.min_lr,
                                cfg.plateau.min_delta));
}

TEST_F(TrainingFixture, SameSeedSameLog) {
  auto cfg = overfit_config();
  cfg.epochs = 4;
  auto a = Classifier::build(cfg, 3);
  auto b = Classifier::build(cfg, 3);
  EXPECT_EQ(train(a, *manifest_, cfg, 3), train(b, *manifest_, cfg, 3));
}

TEST_F(TrainingFixture, AugmentedFineTuningRunsAndCheckpointRoundTrips) {
  auto cfg = small_config(BackboneId::vgg16, 64);
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.initial_lr = 1e-4;
  auto model = Classifier::build(cfg, 4);
  bf_test::TempDir ckpt;
  TrainOptions opts;
  opts.checkpoint_dir = ckpt.path() / "model";
  int callbacks = 0;
  opts.on_epoch = [&](const EpochLog&) { ++callbacks; };
  const auto log = train(model, *manifest_, cfg, 4, opts);
  EXPECT_FALSE(log.cached_features);
  EXPECT_EQ(callbacks, 2);
  for (const char* f : {"config.json", "weights.pt", "training_log.json"}) {
    EXPECT_TRUE(std::filesystem::exists(*opts.checkpoint_dir / f)) << f;
  }
  const auto loaded = Classifier::load(*opts.checkpoint_dir);
  EXPECT_EQ(to_json(loaded.config()), to_json(model.config()));
  std::ifstream in(*opts.checkpoint_dir / "training_log.json");
  EXPECT_EQ(training_log_from_json(nlohmann::json::parse(in)), log);
  const auto& img = manifest_->records().front().image_path;
  const auto p1 = model.predict_path(img);
  const auto p2 = loaded.predict_path(img);
  for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_EQ(p1.probs[c], p2.probs[c]);
  EXPECT_EQ(loaded.backbone_layers().back().trainable, true);
}

TEST_F(TrainingFixture, EmptySplitsAreTrainingErrors) {
  const auto cfg = overfit_config();
  auto model = Classifier::build(cfg);
  EXPECT_THROW(train(model, manifest_->subset(Split::test), cfg, 0), TrainingError);
  Manifest no_val = *manifest_;
  for (auto i : no_val.indices_in(Split::val)) no_val.set_split(i, Split::test);
  EXPECT_THROW(train(model, no_val, cfg, 0), TrainingError);
}

TEST(Checkpoint, MissingOrForeignDirectoryIsCheckpointError) {
  bf_test::TempDir dir;
  EXPECT_THROW(Classifier::load(dir.path()), CheckpointError);
  std::ofstream(dir / "config.json") << R"({"format":"other"})";
  EXPECT_THROW(Classifier::load(dir.path()), CheckpointError);
}
