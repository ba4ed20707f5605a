// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
#include <fcntl.h>
#include <malloc.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <typeinfo>
#include <vector>

#include "cli.hpp"
#include "m3sr/data.hpp"
#include "m3sr/errors.hpp"
#include "m3sr/metrics.hpp"
#include "m3sr/network.hpp"
#include "m3sr/train.hpp"
#include "m3sr/verify.hpp"
#include "oracles.hpp"

using namespace m3sr;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kScanBudgetS = 5.0;
constexpr double kZohBudgetS = 1.0;
constexpr double kWaveletBudgetS = 5.0;
constexpr double kGradBudgetS = 120.0;
constexpr std::size_t kAblationSteps = 200;
constexpr std::size_t kOverfitMaxSteps = 2000;
constexpr double kOverfitPsnrDb = 40.0;
constexpr double kOverfitBudgetS = 15 * 60.0;
constexpr double kMetricTol = 1e-9;
constexpr double kMssimTol = 1e-6;
constexpr std::size_t kMetricPairs = 20;
constexpr std::size_t kRoundTripCubes = 50;
constexpr std::uint64_t kSeed = 7;

struct Verdict {
  bool passed;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Runs `fn` with stdout sent to /dev/null so only verdict lines remain.
int quiet(const std::function<int()>& fn) {
  std::fflush(stdout);
  const int saved = dup(1);
  const int null = open("/dev/null", O_WRONLY);
  dup2(null, 1);
  close(null);
  int code = 1;
  try {
    code = fn();
  } catch (...) {
    std::fflush(stdout);
    dup2(saved, 1);
    close(saved);
    throw;
  }
  std::fflush(stdout);
  dup2(saved, 1);
  close(saved);
  return code;
}

Verdict from_check(const CheckResult& r, double budget) {
  const bool fast = r.seconds < budget;
  return {r.passed && fast, r.detail + ", " + fmt("%.2f s", r.seconds) + (fast ? "" : " over budget")};
}

Verdict scan_duality() { return from_check(check_scan_duality(kSeed, 100), kScanBudgetS); }

Verdict zoh() { return from_check(check_zoh_consistency(kSeed), kZohBudgetS); }

Verdict wavelet() { return from_check(check_wavelet_exactness(kSeed, 100), kWaveletBudgetS); }

Verdict gradients() {
  double seconds = 0;
  std::string failed;
  for (const CheckResult& r : check_gradients(kSeed)) {
    seconds += r.seconds;
    if (!r.passed) failed += " " + r.name + " (" + r.detail + ")";
  }
  const bool fast = seconds < kGradBudgetS;
  return {failed.empty() && fast,
          (failed.empty() ? std::string("all blocks pass") : "failed:" + failed) + ", " + fmt("%.2f s", seconds) +
              (fast ? "" : " over budget")};
}

Verdict fusion() {
  const CheckResult r = check_fusion_degeneracy(kSeed);
  return {r.passed, r.detail};
}

std::vector<CubePair> synth_set(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CubePair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_pair(rng, side, side));
  return out;
}

Verdict ablation() {
  const ModelConfig base;
  const std::uint64_t full = build_model<float>(base).parameter_count();
  const std::vector<CubePair> data = synth_set(4, 32, kSeed);
  bool ok = true;
  std::string detail = "full " + std::to_string(full);
  for (Variant v : {Variant::kV1, Variant::kV2, Variant::kV3}) {
    Model<float> m = build_variant<float>(base, v);
    const std::uint64_t n = m.parameter_count();
    TrainConfig t;
    t.batch_size = 1;
    t.epochs = kAblationSteps / data.size();
    t.seed = kSeed;
    bool trained = false;
    double first = 0, last = 0;
    try {
      const TrainResult r = train_loop(m, data, {}, t);
      const std::size_t k = 20, s = r.log.steps.size();
      for (std::size_t i = 0; i < k; ++i) {
        first += r.log.steps[i].loss / k;
        last += r.log.steps[s - k + i].loss / k;
      }
      trained = s == kAblationSteps && std::isfinite(last) && last < first;
    } catch (const NumericError&) {
      trained = false;
    }
    ok = ok && n < full && trained;
    detail += ", " + variant_name(v) + " " + std::to_string(n) + " loss " + fmt("%.4f", first) + "->" +
              fmt("%.4f", last);
  }
  return {ok, detail};
}

Verdict group_scaling() {
  ModelConfig c;
  std::uint64_t prev_p = 0, prev_f = 0;
  bool ok = true;
  std::string detail;
  for (std::size_t g : {2, 4, 8, 16}) {
    c.groups = g;
    const CostReport r = count_params_flops(c, 64, 64);
    ok = ok && r.parameter_count > prev_p && r.flops > prev_f;
    prev_p = r.parameter_count;
    prev_f = r.flops;
    detail += (detail.empty() ? "" : ", ") + ("G" + std::to_string(g) + " " + std::to_string(r.parameter_count) +
                                              " params " + fmt("%.4f GFLOPs", double(r.flops) / 1e9));
  }
  return {ok, detail};
}

struct StopTraining {};

Verdict overfit() {
  const std::vector<CubePair> data = synth_set(4, 64, kSeed);
  ModelConfig mc;
  mc.base_width = 16;
  mc.state = 8;
  mc.seed = kSeed;
  Model<float> model = build_model<float>(mc);
  TrainConfig t;
  t.batch_size = 1;
  t.epochs = kOverfitMaxSteps / data.size();
  t.lr0 = 4e-4;
  t.lr_min = 0;
  t.beta1 = 0.9;
  t.beta2 = 0.999;
  t.augment = false;
  t.seed = kSeed;
  const auto t0 = Clock::now();
  std::size_t steps = 0;
  double best = 0;
  try {
    train_loop(model, data, {}, t, [&](const StepRecord& r) {
      steps = r.step + 1;
      if (steps % 100 == 0) {
        best = std::max(best, validate(model, data).mean.psnr_db);
        if (best > kOverfitPsnrDb) throw StopTraining{};
      }
      if (since(t0) > kOverfitBudgetS) throw StopTraining{};
    });
  } catch (const StopTraining&) {
  }
  const double seconds = since(t0);
  const double psnr = validate(model, data).mean.psnr_db;
  const bool ok = psnr > kOverfitPsnrDb && steps <= kOverfitMaxSteps && seconds < kOverfitBudgetS;
  return {ok, "training psnr " + fmt("%.2f dB", psnr) + " after " + std::to_string(steps) + " steps, " +
                  fmt("%.0f s", seconds)};
}

Verdict metric_oracles() {
  Rng rng(kSeed);
  double worst = 0, worst_ssim = 0;
  for (std::size_t i = 0; i < kMetricPairs; ++i) {
    Tensor<double> z({16, 16, 3}), zh({16, 16, 3});
    for (std::size_t k = 0; k < z.size(); ++k) {
      z[k] = rng.uniform(0.05, 1.0);
      zh[k] = std::clamp(z[k] + 0.05 * rng.normal(), 0.01, 1.0);
    }
    worst = std::max({worst, std::abs(rmse(z, zh) - test::oracle::rmse(z, zh)),
                      std::abs(psnr(z, zh) - test::oracle::psnr(z, zh)),
                      std::abs(sam(z, zh) - test::oracle::sam(z, zh))});
    worst_ssim = std::max(worst_ssim, std::abs(mssim(z, zh) - test::oracle::mssim(z, zh)));
  }
  return {worst < kMetricTol && worst_ssim < kMssimTol,
          "max err rmse/psnr/sam " + fmt("%.2e", worst) + ", mssim " + fmt("%.2e", worst_ssim)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("m3sr_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Verdict format_round_trip() {
  const fs::path dir = scratch("format");
  Rng rng(kSeed);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < kRoundTripCubes; ++i) {
    const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16), b = 1 + rng.below(31);
    Tensor<float> v({h, w, b});
    for (auto& x : v.data()) x = float(rng.uniform());
    const HsiCube c = make_hsi(std::move(v), std::uint32_t(rng.below(1000)), std::uint32_t(rng.below(20)));
    write_cube(c, dir / "c.m3sr");
    const HsiCube back = read_cube(dir / "c.m3sr");
    if (back.values.shape() == c.values.shape() && back.values.storage() == c.values.storage() &&
        back.wavelength_start == c.wavelength_start && back.wavelength_step == c.wavelength_step) {
      ++exact;
    }
  }
  const std::string good = slurp(dir / "c.m3sr");
  std::string magic = good, version = good;
  magic[0] = 'Q';
  version[4] = 7;
  spit(dir / "magic.m3sr", magic);
  spit(dir / "version.m3sr", version);
  spit(dir / "short.m3sr", good.substr(0, good.size() - 1));
  auto error_of = [&](const char* name) -> std::string {
    try {
      read_cube(dir / name);
    } catch (const FormatError& e) {
      return typeid(e).name();
    } catch (...) {
    }
    return "";
  };
  const std::string em = error_of("magic.m3sr"), ev = error_of("version.m3sr"), et = error_of("short.m3sr");
  const bool classes = em == typeid(BadMagicError).name() && ev == typeid(VersionMismatchError).name() &&
                       et == typeid(TruncatedPayloadError).name();
  return {exact == kRoundTripCubes && classes,
          std::to_string(exact) + "/" + std::to_string(kRoundTripCubes) + " bitwise, corruption classes " +
              (classes ? "distinct" : "wrong")};
}

Verdict determinism() {
  const fs::path dir = scratch("determinism");
  std::ofstream(dir / "run.cfg") << "base_width = 8\nstate = 4\nsynth_height = 16\nsynth_width = 16\n"
                                    "patch = 16\nepochs = 3\nbatch_size = 2\nval_pairs = 1\n";
  const std::string cfg = (dir / "run.cfg").string();
  auto train = [&](const std::string& out) {
    return quiet([&] {
      return cli::run({"m3sr", "train", "--config", cfg, "--pairs", "4", "--seed", "3", "--out", (dir / out).string()});
    });
  };
  const int a = train("a"), b = train("b");
  const std::string ca = slurp(dir / "a" / "checkpoint.m3ck"), cb = slurp(dir / "b" / "checkpoint.m3ck");
  const bool same = a == 0 && b == 0 && !ca.empty() && ca == cb;
  const int v = quiet([] { return cli::run({"m3sr", "verify", "--seed", std::to_string(kSeed)}); });
  return {same && v == 0, std::string("checkpoints ") + (same ? "identical" : "differ") + " (" +
                              std::to_string(ca.size()) + " bytes), verify exit " + std::to_string(v)};
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"scan duality", scan_duality},
      {"zoh consistency", zoh},
      {"wavelet exactness", wavelet},
      {"gradient suite", gradients},
      {"fusion degeneracy", fusion},
      {"ablation structure", ablation},
      {"group scaling", group_scaling},
      {"overfit", overfit},
      {"metric oracles", metric_oracles},
      {"format round trip", format_round_trip},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v{false, ""};
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.passed;
    std::printf("%s %2zu %-20s %s\n", v.passed ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
