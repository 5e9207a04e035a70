#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "brainfusion/pipeline.hpp"
#include "test_util.hpp"

using namespace brainfusion;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with `args` (already shell-quoted where needed).
CliResult cli(const std::string& args, const fs::path& scratch, const char* binary = BF_CLI) {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string(binary) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

class CliFixture : public ::testing::Test {
 protected:
  std::string p(const std::string& child) const { return (dir_ / child).string(); }
  CliResult run(const std::string& args) const { return cli(args, dir_.path()); }
  CliResult fixtures(const std::string& args) const { return cli(args, dir_.path(), BF_MAKE_FIXTURES); }

  bf_test::TempDir dir_{"bf_cli"};
};

}  // namespace

TEST_F(CliFixture, ExitCodes) {
  EXPECT_EQ(run("--help").status, 0);
  EXPECT_EQ(run("").status, 2);
  const auto unknown = run("frobnicate");
  EXPECT_EQ(unknown.status, 2);
  EXPECT_NE(unknown.err.find("frobnicate"), std::string::npos);
  const auto bad_key = run("prepare --set cls.epochz=3 --data " + p("x"));
  EXPECT_EQ(bad_key.status, 2);
  EXPECT_NE(bad_key.err.find("cls.epochz"), std::string::npos);
  EXPECT_EQ(run("prepare --bogus-flag").status, 2);
  EXPECT_EQ(run("prepare --data " + p("absent") + " --out " + p("r")).status, 2);
  EXPECT_EQ(run("eval-cls --config " + p("missing.cfg")).status, 2);

  fs::create_directories(dir_ / "broken");
  std::ofstream(dir_ / "broken" / "config.json") << "{ not json";
  std::ofstream(dir_ / "img.png") << "x";
  EXPECT_EQ(run("infer --image " + p("img.png") + " --cls " + p("broken") + " --det " + p("broken") + " --out " +
                p("r"))
                .status,
            1);
}

TEST_F(CliFixture, PrepareIsDeterministic) {
  ASSERT_EQ(fixtures("classification --out " + p("corpus") + " --count 5 --size 48 --seed 3").status, 0);
  ASSERT_EQ(run("prepare --data " + p("corpus") + " --seed 42 --out " + p("a")).status, 0);
  ASSERT_EQ(run("prepare --data " + p("corpus") + " --seed 42 --out " + p("b")).status, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "manifest.json"), slurp(dir_ / "b" / "manifest.json"));
  const auto m = load_manifest(dir_ / "a" / "manifest.json");
  EXPECT_EQ(m.size(), 20u);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "run_manifest.json"));

  ASSERT_EQ(run("prepare --data " + p("corpus") + " --seed 43 --out " + p("c")).status, 0);
  EXPECT_NE(slurp(dir_ / "a" / "manifest.json"), slurp(dir_ / "c" / "manifest.json"));
}

TEST_F(CliFixture, EvalClsFromPredictionsPrintsReport) {
  {
    std::ofstream f(dir_ / "preds.jsonl");
    const char* rows[] = {"glioma", "glioma", "meningioma", "no_tumor", "pituitary", "pituitary"};
    const char* pred[] = {"glioma", "meningioma", "meningioma", "no_tumor", "pituitary", "glioma"};
    for (int i = 0; i < 6; ++i) {
      f << "{\"image\":\"i" << i << ".png\",\"truth\":\"" << rows[i] << "\",\"predicted\":\"" << pred[i] << "\"}\n";
    }
  }
  const auto r = run("eval-cls --predictions " + p("preds.jsonl") + " --out " + p("eval"));
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* s : {"Precision", "Recall", "F1-score", "Support", "Accuracy", "Macro Avg", "Weighted Avg",
                        "Glioma", "No Tumor"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  EXPECT_EQ(slurp(dir_ / "eval" / "classification_report.txt"), r.out);

  // Replaying the stored configuration reproduces the metrics exactly.
  const auto again = run("eval-cls --replay " + p("eval/run_manifest.json"));
  ASSERT_EQ(again.status, 0) << again.err;
  EXPECT_EQ(again.out, r.out);
  const auto m1 = read_run_manifest(dir_ / "eval" / "run_manifest.json");
  EXPECT_EQ(m1["metrics"]["accuracy"].get<double>(), 4.0 / 6.0);
  EXPECT_EQ(run("eval-det --replay " + p("eval/run_manifest.json")).status, 2);
}

TEST_F(CliFixture, InferWithStubCheckpoints) {
  ClassScores clear;
  clear.probs = {0.05, 0.05, 0.85, 0.05};
  ClassScores glioma;
  glioma.probs = {0.8, 0.1, 0.05, 0.05};
  write_stub_classifier_checkpoint(dir_ / "cls", clear, {{"tumor.png", glioma}});
  write_stub_detector_checkpoint(dir_ / "det", {Detection{Box{ClassLabel::glioma, 0.5, 0.5, 0.3, 0.3, 0.9}}});
  write_png(ImageTensor(64, 64, 0.2f), dir_ / "healthy.png");

  const auto r = run("infer --image " + p("healthy.png") + " --cls " + p("cls") + " --det " + p("det") + " --out " +
                     p("run"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto v = nlohmann::json::parse(slurp(dir_ / "run" / "verdict.json"));
  EXPECT_EQ(v["tumor_present"], false);
  EXPECT_EQ(v["predicted_class"], "no_tumor");
  EXPECT_TRUE(v["detections"].is_array() && v["detections"].empty());
  EXPECT_EQ(nlohmann::json::parse(r.out), v);
  EXPECT_TRUE(fs::exists(v["artifacts"]["overlay"].get<std::string>()));

  fs::create_directories(dir_ / "batch");
  write_png(ImageTensor(64, 64, 0.2f), dir_ / "batch" / "healthy.png");
  write_png(ImageTensor(64, 64, 0.6f), dir_ / "batch" / "tumor.png");
  const auto b = run("infer --image " + p("batch") + " --cls " + p("cls") + " --det " + p("det") + " --out " +
                     p("run2") + " --set infer.workers=2");
  ASSERT_EQ(b.status, 0) << b.err;
  std::ifstream lines(dir_ / "run2" / "verdicts.jsonl");
  std::vector<PipelineVerdict> verdicts;
  for (std::string line; std::getline(lines, line);) verdicts.push_back(verdict_from_json(nlohmann::json::parse(line)));
  ASSERT_EQ(verdicts.size(), 2u);
  EXPECT_FALSE(verdicts[0].tumor_present);
  EXPECT_TRUE(verdicts[1].tumor_present);
  EXPECT_EQ(verdicts[1].detections.size(), 1u);
  EXPECT_FALSE(verdicts[1].disagreement);
}

TEST_F(CliFixture, TrainEvalExplainRoundTrip) {
  ASSERT_EQ(fixtures("classification --out " + p("corpus") + " --count 4 --size 64 --seed 1").status, 0);
  ASSERT_EQ(run("prepare --data " + p("corpus") + " --out " + p("prep") + " --set split.train=0.5 --set split.val=0.25 "
                "--set split.test=0.25")
                .status,
            0);
  {
    std::ofstream cfg(dir_ / "small.cfg");
    cfg << "# small frozen-backbone run\n"
           "cls.input_size = 64\ncls.unfreeze_last_n = 0\ncls.augment = false\ncls.epochs = 2\n"
           "cls.lr = 0.001\ncls.batch_size = 8\ncls.weights_dir = /nonexistent\n";
  }
  const auto t = run("train-cls --config " + p("small.cfg") + " --manifest " + p("prep/manifest.json") + " --out " +
                     p("train"));
  ASSERT_EQ(t.status, 0) << t.err;
  EXPECT_NE(t.err.find("pretrained=false"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "train" / "classifier" / "weights.pt"));
  EXPECT_TRUE(fs::exists(dir_ / "train" / "classifier" / "training_log.json"));

  const auto e = run("eval-cls --cls " + p("train/classifier") + " --manifest " + p("prep/manifest.json") +
                     " --out " + p("eval"));
  ASSERT_EQ(e.status, 0) << e.err;
  EXPECT_NE(e.out.find("Weighted Avg"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "eval" / "predictions.jsonl"));
  const auto e2 = run("eval-cls --replay " + p("eval/run_manifest.json") + " --out " + p("eval2"));
  ASSERT_EQ(e2.status, 0) << e2.err;
  EXPECT_EQ(slurp(dir_ / "eval" / "classification_report.json"), slurp(dir_ / "eval2" / "classification_report.json"));

  const auto img = (dir_ / "corpus" / "glioma" / "glioma_0000.png").string();
  const auto x = run("explain --cls " + p("train/classifier") + " --image " + img + " --class glioma --out " +
                     p("cam") + " --set explain.grid=true");
  ASSERT_EQ(x.status, 0) << x.err;
  EXPECT_TRUE(fs::exists(dir_ / "cam" / "glioma_0000_gradcam.png"));
  const auto hm = read_heatmap_grid(dir_ / "cam" / "glioma_0000_gradcam.txt");
  EXPECT_EQ(hm.height, 64);
  EXPECT_EQ(hm.target_class, ClassLabel::glioma);

  write_stub_classifier_checkpoint(dir_ / "stub", ClassScores{});
  EXPECT_EQ(run("explain --cls " + p("stub") + " --image " + img + " --out " + p("cam2")).status, 1);
}

TEST_F(CliFixture, DetectionVerbs) {
  ASSERT_EQ(fixtures("detection --out " + p("det") + " --count 16 --size 96 --seed 4").status, 0);
  ASSERT_EQ(run("prepare --kind detection --data " + p("det") + " --out " + p("prep") +
                " --set split.train=0.5 --set split.val=0.25 --set split.test=0.25")
                .status,
            0);
  const auto t = run("train-det --manifest " + p("prep/manifest.json") + " --out " + p("train") +
                     " --set det.epochs=1 --set det.input_size=96 --set det.batch_size=4 --set det.weights_dir=/nonexistent");
  ASSERT_EQ(t.status, 0) << t.err;
  const auto e = run("eval-det --det " + p("train/detector") + " --manifest " + p("prep/manifest.json") + " --out " +
                     p("eval"));
  ASSERT_EQ(e.status, 0) << e.err;
  for (const char* s : {"Class", "Images", "Instances", "Precision", "Recall", "mAP@0.5", "mAP@0.5-0.95", "All"}) {
    EXPECT_NE(e.out.find(s), std::string::npos) << s;
  }
  const auto again = run("eval-det --predictions " + p("eval/predictions.jsonl") + " --manifest " +
                         p("prep/manifest.json"));
  ASSERT_EQ(again.status, 0) << again.err;
  EXPECT_EQ(again.out, e.out);
  EXPECT_EQ(run("eval-det --det " + p("train/detector") + " --manifest " + p("prep/manifest.json") +
                " --set det.epochs=0")
                .status,
            2);
}
