#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "m3sr/checkpoint.hpp"
#include "m3sr/config.hpp"
#include "m3sr/data.hpp"
#include "m3sr/errors.hpp"
#include "m3sr/metrics.hpp"
#include "m3sr/network.hpp"
#include "m3sr/ssm.hpp"
#include "m3sr/train.hpp"
#include "m3sr/verify.hpp"

namespace m3sr::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRgbSuffix = "_rgb.m3sr";
constexpr const char* kHsiSuffix = "_hsi.m3sr";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string in, out, checkpoint, reference;
  std::size_t pairs = 4;
  std::string variant = "full";
  std::optional<std::size_t> groups;
  std::size_t height = 0, width = 0;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string strip(const std::string& s, const std::string& suffix) {
  return ends_with(s, suffix) ? s.substr(0, s.size() - suffix.size()) : s;
}

// Files in `dir` ending with `suffix`, keyed by the id in front of it.
std::map<std::string, fs::path> list_cubes(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && ends_with(name, suffix)) out[strip(name, suffix)] = e.path();
  }
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig load_run_config(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) rc.set_seed(*o.seed);
  rc.model = apply_variant(rc.model, parse_variant(o.variant));
  if (o.groups) rc.model.groups = *o.groups;
  rc.validate();
  return rc;
}

std::string pair_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%03zu", i);
  return buf;
}

std::vector<CubePair> synth_pairs(const RunConfig& rc, std::size_t count) {
  Rng rng(rc.train.seed);
  std::vector<CubePair> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_pair(rng, rc.synth_height, rc.synth_width));
  return out;
}

int cmd_synth(const Options& o) {
  const RunConfig rc = load_run_config(o);
  const fs::path dir = o.out;
  make_dir(dir);
  const auto pairs = synth_pairs(rc, o.pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    write_cube(pairs[i].rgb, dir / (pair_id(i) + kRgbSuffix));
    write_cube(pairs[i].hsi, dir / (pair_id(i) + kHsiSuffix));
  }
  std::cout << "wrote " << pairs.size() << " pairs (" << rc.synth_height << "x" << rc.synth_width << ") to "
            << dir.string() << "\n";
  return kExitOk;
}

std::vector<CubePair> load_pairs(const fs::path& dir) {
  const auto rgb = list_cubes(dir, kRgbSuffix);
  std::vector<CubePair> out;
  for (const auto& [id, path] : rgb) {
    const fs::path hsi = dir / (id + kHsiSuffix);
    if (!fs::exists(hsi)) throw IoError("missing reference cube " + hsi.string());
    out.push_back({read_cube(path), read_cube(hsi)});
  }
  if (out.empty()) throw IoError("no *" + std::string(kRgbSuffix) + " cubes in " + dir.string());
  return out;
}

// Splits every pair into non-overlapping patch x patch windows when the
// image is larger than the patch; smaller images are used whole.
std::vector<CubePair> to_patches(const std::vector<CubePair>& pairs, std::size_t patch, Rng& rng) {
  std::vector<CubePair> out;
  for (const auto& p : pairs) {
    if (p.rgb.height() <= patch && p.rgb.width() <= patch) {
      out.push_back(p);
      continue;
    }
    for (auto& w : crop_patches(p, patch, patch, CropMode::kGrid, rng)) out.push_back(std::move(w.pair));
  }
  return out;
}

int cmd_train(const Options& o) {
  const RunConfig rc = load_run_config(o);
  std::vector<CubePair> pairs = o.in.empty() ? synth_pairs(rc, o.pairs) : load_pairs(o.in);
  if (rc.val_pairs >= pairs.size()) throw ConfigError("val_pairs must leave at least one training pair");
  std::vector<CubePair> val(pairs.end() - std::ptrdiff_t(rc.val_pairs), pairs.end());
  pairs.resize(pairs.size() - rc.val_pairs);
  Rng crop_rng(rc.train.seed);
  const std::vector<CubePair> train = to_patches(pairs, rc.train.patch, crop_rng);

  Model<float> model = build_model<float>(rc.model);
  std::cout << "model " << variant_name(parse_variant(o.variant)) << ": " << model.parameter_count()
            << " parameters, " << train.size() << " training samples\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train_loop(model, train, val, rc.train, [&](const StepRecord& r) {
    if (r.step % 100 == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %zu loss %.6f lr %.3e (%.0f s)\n", r.step, r.loss, r.lr, s);
      std::fflush(stdout);
    }
  });
  load_values(model, res.best);

  const fs::path dir = o.out;
  make_dir(dir);
  const fs::path ckpt = o.checkpoint.empty() ? dir / "checkpoint.m3ck" : fs::path(o.checkpoint);
  save_checkpoint(model, ckpt);
  res.log.write(dir / "train_log.txt");
  const auto& last = res.log.steps.back();
  std::printf("trained %zu steps, final loss %.6f; checkpoint %s\n", res.log.steps.size(), last.loss,
              ckpt.string().c_str());
  if (!val.empty()) std::printf("best validation psnr %.3f dB at epoch %zu\n", res.best_psnr, res.best_epoch);
  return kExitOk;
}

// Per-band absolute error maps, all scaled by the cube's largest error.
void write_heatmaps(const fs::path& dir, const std::string& id, const HsiCube& rec, const HsiCube& ref) {
  if (rec.values.shape() != ref.values.shape()) {
    throw ShapeError("reference " + shape_str(ref.values.shape()) + " does not match reconstruction " +
                     shape_str(rec.values.shape()));
  }
  const std::size_t h = rec.height(), w = rec.width(), bands = rec.bands();
  double peak = 0;
  for (std::size_t i = 0; i < rec.values.size(); ++i) {
    peak = std::max(peak, std::abs(double(rec.values[i]) - double(ref.values[i])));
  }
  for (std::size_t k = 0; k < bands; ++k) {
    Tensor<double> err({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      err[p] = std::abs(double(rec.values[p * bands + k]) - double(ref.values[p * bands + k]));
    }
    char name[64];
    std::snprintf(name, sizeof name, "_err_band%02zu.pgm", k);
    write_pgm(dir / (id + name), err, peak > 0 ? peak : 1.0);
  }
}

int cmd_infer(const Options& o) {
  const Model<float> model = load_checkpoint(o.checkpoint);
  std::map<std::string, fs::path> inputs;
  if (fs::is_directory(o.in)) {
    inputs = list_cubes(o.in, kRgbSuffix);
  } else {
    inputs[strip(fs::path(o.in).filename().string(), kRgbSuffix)] = o.in;
  }
  if (inputs.empty()) throw IoError("no input cubes in " + o.in);
  const bool ref_dir = !o.reference.empty() && fs::is_directory(o.reference);
  if (!o.reference.empty() && !ref_dir && inputs.size() != 1) {
    throw ConfigError("a single --reference file needs a single input cube");
  }
  const fs::path dir = o.out;
  make_dir(dir);
  for (const auto& [id, path] : inputs) {
    const HsiCube rgb = read_cube(path);
    if (rgb.bands() != model.config.in_channels) {
      throw ShapeError(path.string() + ": " + std::to_string(rgb.bands()) + " bands, model expects " +
                       std::to_string(model.config.in_channels));
    }
    const HsiCube rec = reconstruct(model, rgb);
    write_cube(rec, dir / (id + kHsiSuffix));
    std::string note;
    if (!o.reference.empty()) {
      const fs::path ref = ref_dir ? fs::path(o.reference) / (id + kHsiSuffix) : fs::path(o.reference);
      write_heatmaps(dir, id, rec, read_cube(ref));
      note = ", heatmaps written";
    }
    std::cout << id << ": " << rec.height() << "x" << rec.width() << "x" << rec.bands() << note << "\n";
  }
  return kExitOk;
}

int cmd_eval(const Options& o) {
  if (o.reference.empty()) throw ConfigError("eval needs --reference DIR");
  const auto recs = list_cubes(o.in, kHsiSuffix);
  std::vector<EvalPair> pairs;
  std::size_t side = SIZE_MAX;
  for (const auto& [id, path] : recs) {
    const fs::path ref = fs::path(o.reference) / (id + kHsiSuffix);
    if (!fs::exists(ref)) throw IoError("missing reference " + ref.string());
    const HsiCube z = read_cube(ref), zh = read_cube(path);
    side = std::min({side, z.height(), z.width()});
    pairs.push_back({id, z.values.cast<double>(), zh.values.cast<double>()});
  }
  if (pairs.empty()) throw IoError("no *" + std::string(kHsiSuffix) + " cubes in " + o.in);
  SsimOptions opt;
  opt.window = std::min(opt.window, side);
  const MetricReport rep = evaluate(pairs, false, opt);
  std::printf("%-16s %12s %12s %12s %12s\n", "id", "rmse", "psnr_db", "sam_deg", "mssim");
  auto row = [](const ImageMetrics& m) {
    std::printf("%-16s %12.6f %12.4f %12.6f %12.6f\n", m.id.c_str(), m.rmse, m.psnr_db, m.sam_deg, m.mssim);
  };
  for (const auto& m : rep.per_image) row(m);
  row(rep.mean);
  if (!o.out.empty()) {
    std::ofstream f(o.out);
    if (!f) throw IoError("cannot write " + o.out);
    f.precision(17);
    for (const auto& m : rep.per_image) {
      f << m.id << ' ' << m.rmse << ' ' << m.psnr_db << ' ' << m.sam_deg << ' ' << m.mssim << '\n';
    }
    if (!f) throw IoError("write failed: " + o.out);
  }
  return kExitOk;
}

int cmd_verify(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  bool ok = true;
  for (const CheckResult& r : run_invariant_suite(seed)) {
    ok = ok && r.passed;
    std::printf("%s %-20s %s (%.2f s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
  }
  std::printf("%s\n", ok ? "all invariants hold" : "invariant failure");
  return ok ? kExitOk : kExitFailure;
}

int cmd_info(const Options& o) {
  const RunConfig rc = load_run_config(o);
  const std::size_t h = o.height ? o.height : rc.synth_height, w = o.width ? o.width : rc.synth_width;
  const CostReport c = count_params_flops(rc.model, h, w);
  std::printf("%-28s %12s %16s\n", "layer", "params", "flops");
  for (const auto& l : c.layers) {
    std::printf("%-28s %12llu %16llu\n", l.name.c_str(), (unsigned long long)l.params, (unsigned long long)l.flops);
  }
  std::printf("variant %s, groups %zu, input %zux%zu\n", o.variant.c_str(), rc.model.groups, h, w);
  std::printf("parameters %llu\nflops %llu (%.4f G)\n", (unsigned long long)c.parameter_count,
              (unsigned long long)c.flops, double(c.flops) / 1e9);
  return kExitOk;
}

template <typename F>
double seconds_per_call(F&& f) {
  std::size_t reps = 1;
  for (;;) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < reps; ++i) f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s > 0.2 || reps > (1u << 20)) return s / double(reps);
    reps *= 2;
  }
}

int cmd_bench(const Options& o) {
  Rng rng(o.seed.value_or(0));
  SsmParams p = SsmParams::s4d_real(8, 0.05);
  for (auto& b : p.b) b = rng.normal();
  const DiscreteSsm d = zoh_discretize(p);
  std::printf("%6s %18s %18s %18s\n", "L", "scan Msteps/s", "conv Msteps/s", "blocked Msteps/s");
  for (std::size_t len : {256, 1024, 4096}) {
    std::vector<double> x(len);
    for (auto& v : x) v = rng.normal();
    const std::vector<DiscreteSsm> steps(len, d);
    double sink = 0;
    const double t_scan = seconds_per_call([&] { sink += ssm_scan(d, x).back(); });
    const double t_conv = seconds_per_call([&] { sink += causal_convolve(x, ssm_kernel(d, len)).back(); });
    const double t_blk = seconds_per_call([&] { sink += blocked_scan(steps, x, 64).back(); });
    std::printf("%6zu %18.2f %18.2f %18.2f%s\n", len, len / t_scan / 1e6, len / t_conv / 1e6, len / t_blk / 1e6,
                std::isfinite(sink) ? "" : " (non-finite)");
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"M3SR spectral reconstruction"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed for model init, data and training");
    sub->add_option("--variant", o.variant, "full, V1, V2 or V3")
        ->check(CLI::IsMember({"full", "V1", "V2", "V3"}));
    sub->add_option("--groups", o.groups, "spectral group count G")->check(CLI::PositiveNumber);
  };
  CLI::App* synth = app.add_subcommand("synth", "write synthetic rgb/hsi cube pairs");
  common(synth);
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--pairs", o.pairs, "number of pairs")->check(CLI::PositiveNumber);

  CLI::App* train = app.add_subcommand("train", "train a model, write checkpoint and log");
  common(train);
  train->add_option("--in", o.in, "directory of *_rgb.m3sr / *_hsi.m3sr pairs (default: synthesize)");
  train->add_option("--pairs", o.pairs, "synthetic pairs when --in is absent")->check(CLI::PositiveNumber);
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "checkpoint path (default OUT/checkpoint.m3ck)");

  CLI::App* infer = app.add_subcommand("infer", "reconstruct hsi cubes from rgb cubes");
  infer->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--in", o.in, "rgb cube or directory of *_rgb.m3sr")->required()->check(CLI::ExistingPath);
  infer->add_option("--out", o.out, "output directory")->required();
  infer->add_option("--reference", o.reference, "hsi cube or directory; enables error heatmaps")
      ->check(CLI::ExistingPath);

  CLI::App* eval = app.add_subcommand("eval", "metrics of reconstructions against references");
  eval->add_option("--in", o.in, "directory of reconstructed *_hsi.m3sr")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--reference", o.reference, "directory of reference *_hsi.m3sr")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--out", o.out, "record file, one line per image: id rmse psnr sam mssim");

  CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--seed", o.seed, "seed");

  CLI::App* info = app.add_subcommand("info", "parameter and FLOP counts");
  common(info);
  info->add_option("--height", o.height, "input height (default synth_height)");
  info->add_option("--width", o.width, "input width (default synth_width)");

  CLI::App* bench = app.add_subcommand("bench", "scan vs kernel convolution vs blocked scan throughput");
  bench->add_option("--seed", o.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*infer) return cmd_infer(o);
    if (*eval) return cmd_eval(o);
    if (*verify) return cmd_verify(o);
    if (*info) return cmd_info(o);
    if (*bench) return cmd_bench(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(int(argv.size()), argv.data());
}

}  // namespace m3sr::cli
