#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "m3sr/checkpoint.hpp"
#include "m3sr/data.hpp"
#include "m3sr/network.hpp"

using namespace m3sr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("m3sr_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Outcome {
  int code;
  std::string out;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "m3sr");
  testing::internal::CaptureStdout();
  const int code = cli::run(args);
  std::fflush(stdout);
  return {code, testing::internal::GetCapturedStdout()};
}

fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << "base_width = 4\nstate = 2\ngroups = 2\nsynth_height = 16\nsynth_width = 16\n"
                      "patch = 16\nepochs = 2\nbatch_size = 2\nval_pairs = 1\n";
  return p;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"synth"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"info", "--variant", "V9"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"infer", "--checkpoint", "/nonexistent", "--in", "/tmp", "--out", "/tmp/x"}).code, cli::kExitUsage);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const fs::path dir = temp_dir("runtime");
  std::ofstream(dir / "bad.cfg") << "bogus = 1\n";
  EXPECT_EQ(run({"info", "--config", (dir / "bad.cfg").string()}).code, cli::kExitFailure);
  EXPECT_EQ(run({"info", "--height", "66"}).code, cli::kExitFailure);
  EXPECT_EQ(run({"eval", "--in", dir.string()}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--in", dir.string(), "--reference", dir.string()}).code, cli::kExitFailure);
}

TEST(Cli, InfoMatchesCostModel) {
  const Outcome r = run({"info", "--groups", "8", "--height", "32", "--width", "48"});
  ASSERT_EQ(r.code, cli::kExitOk);
  ModelConfig c;
  c.groups = 8;
  const CostReport cost = count_params_flops(c, 32, 48);
  EXPECT_NE(r.out.find("parameters " + std::to_string(cost.parameter_count) + "\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("flops " + std::to_string(cost.flops) + " "), std::string::npos) << r.out;
  const Outcome v1 = run({"info", "--variant", "V1"});
  ASSERT_EQ(v1.code, cli::kExitOk);
  const auto full = count_params_flops(ModelConfig{}, 64, 64).parameter_count;
  const auto reduced = count_params_flops(apply_variant(ModelConfig{}, Variant::kV1), 64, 64).parameter_count;
  EXPECT_LT(reduced, full);
  EXPECT_NE(v1.out.find("parameters " + std::to_string(reduced) + "\n"), std::string::npos);
}

TEST(Cli, SynthTrainInferEval) {
  const fs::path dir = temp_dir("pipeline");
  const std::string cfg = tiny_config(dir).string();
  const fs::path data = dir / "data", run_dir = dir / "run", rec = dir / "rec";

  ASSERT_EQ(run({"synth", "--config", cfg, "--out", data.string(), "--pairs", "3", "--seed", "4"}).code, 0);
  for (const char* id : {"pair_000", "pair_001", "pair_002"}) {
    EXPECT_EQ(read_cube(data / (std::string(id) + "_rgb.m3sr")).values.shape(), (Shape{16, 16, 3}));
    EXPECT_EQ(read_cube(data / (std::string(id) + "_hsi.m3sr")).values.shape(), (Shape{16, 16, 31}));
  }

  const Outcome tr = run({"train", "--config", cfg, "--in", data.string(), "--out", run_dir.string()});
  ASSERT_EQ(tr.code, 0) << tr.out;
  ASSERT_TRUE(fs::exists(run_dir / "checkpoint.m3ck"));
  const std::string log = slurp(run_dir / "train_log.txt");
  EXPECT_EQ(log.rfind("step 0 loss ", 0), 0u);
  EXPECT_NE(log.find("epoch 2 train_loss "), std::string::npos);
  EXPECT_NE(log.find(" val_psnr "), std::string::npos);
  EXPECT_EQ(load_checkpoint(run_dir / "checkpoint.m3ck").config.base_width, 4u);

  const Outcome inf = run({"infer", "--checkpoint", (run_dir / "checkpoint.m3ck").string(), "--in", data.string(),
                           "--out", rec.string(), "--reference", data.string()});
  ASSERT_EQ(inf.code, 0) << inf.out;
  EXPECT_EQ(read_cube(rec / "pair_001_hsi.m3sr").values.shape(), (Shape{16, 16, 31}));
  const std::string pgm = slurp(rec / "pair_001_err_band30.pgm");
  EXPECT_EQ(pgm.rfind("P5\n16 16\n255\n", 0), 0u);
  EXPECT_FALSE(fs::exists(rec / "pair_001_err_band31.pgm"));

  const fs::path record = dir / "eval.txt";
  const Outcome ev = run({"eval", "--in", rec.string(), "--reference", data.string(), "--out", record.string()});
  ASSERT_EQ(ev.code, 0) << ev.out;
  std::istringstream lines(slurp(record));
  std::string id;
  double rmse_v, psnr_v, sam_v, ssim_v;
  int rows = 0;
  while (lines >> id >> rmse_v >> psnr_v >> sam_v >> ssim_v) {
    ++rows;
    EXPECT_GT(rmse_v, 0.0);
    EXPECT_LT(psnr_v, 100.0);
  }
  EXPECT_EQ(rows, 3);
  EXPECT_NE(ev.out.find("mean"), std::string::npos);
}

TEST(Cli, EvalIdentity) {
  const fs::path dir = temp_dir("identity");
  const std::string cfg = tiny_config(dir).string();
  ASSERT_EQ(run({"synth", "--config", cfg, "--out", dir.string(), "--pairs", "2"}).code, 0);
  const fs::path record = dir / "eval.txt";
  ASSERT_EQ(run({"eval", "--in", dir.string(), "--reference", dir.string(), "--out", record.string()}).code, 0);
  std::istringstream lines(slurp(record));
  std::string id;
  double rmse_v, psnr_v, sam_v, ssim_v;
  int rows = 0;
  while (lines >> id >> rmse_v >> psnr_v >> sam_v >> ssim_v) {
    ++rows;
    EXPECT_EQ(rmse_v, 0.0);
    EXPECT_EQ(psnr_v, 100.0);
    EXPECT_NEAR(sam_v, 0.0, 1e-5);
    EXPECT_NEAR(ssim_v, 1.0, 1e-12);
  }
  EXPECT_EQ(rows, 2);
}

TEST(Cli, TrainSynthesizesWhenNoInput) {
  const fs::path dir = temp_dir("synthtrain");
  const std::string cfg = tiny_config(dir).string();
  const fs::path ck = dir / "custom.m3ck";
  const Outcome r = run({"train", "--config", cfg, "--pairs", "3", "--out", dir.string(), "--checkpoint",
                         ck.string(), "--variant", "V3"});
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_FALSE(load_checkpoint(ck).config.spectral);
}

TEST(Cli, Verify) {
  const Outcome r = run({"verify", "--seed", "1"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("all invariants hold"), std::string::npos);
}

TEST(Cli, Bench) {
  const Outcome r = run({"bench"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("4096"), std::string::npos);
}
