#include "m3sr/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr_min >= 0) || !(lr0 > lr_min)) throw ConfigError("learning rates must satisfy lr0 > lr_min >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (patch == 0 || patch % 4) throw ConfigError("patch must be a positive multiple of 4");
}

double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw DomainError("cosine_lr: step " + std::to_string(step) + " exceeds total " + std::to_string(total_steps));
  }
  if (total_steps == 0) return cfg.lr0;
  const double phase = std::numbers::pi * double(step) / double(total_steps);
  return cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(phase)) / 2.0;
}

template <typename T>
Var<T> mae(const Var<T>& prediction, const Var<T>& target) {
  return mae_loss(prediction, target);
}

double mae_value(const Tensor<double>& z, const Tensor<double>& zh) {
  require_same_shape(z.shape(), zh.shape(), "mae");
  double acc = 0;
  for (std::size_t i = 0; i < z.size(); ++i) acc += std::abs(z[i] - zh[i]);
  return acc / double(z.size());
}

Adam::Adam(ParamList<float> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.size(), 0.0);
    v_.emplace_back(p.var.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<float>& v = params_[i].var;
    if (!v.has_grad()) continue;
    const Tensor<float> g = v.grad();
    auto& m = m_[i];
    auto& s = v_[i];
    auto values = v.mutable_value().data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = g[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      s[k] = beta2_ * s[k] + (1.0 - beta2_) * gk * gk;
      const double mhat = m[k] / c1, vhat = s[k] / c2;
      values[k] = float(double(values[k]) - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

AugmentDraw draw_augment(Rng& rng) {
  AugmentDraw d;
  d.quarter_turns = int(rng.below(4));
  d.flip = rng.below(2) == 1;
  return d;
}

Tensor<float> augment_tensor(const Tensor<float>& hwc, const AugmentDraw& d) {
  if (hwc.rank() != 3) throw ShapeError("augment: expected (H, W, C)");
  Tensor<float> cur = hwc;
  const int turns = ((d.quarter_turns % 4) + 4) % 4;
  for (int r = 0; r < turns; ++r) {
    const std::size_t h = cur.dim(0), w = cur.dim(1), c = cur.dim(2);
    if (h != w) throw ConfigError("augment: rotations need square patches");
    Tensor<float> next({w, h, c});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        std::copy_n(&cur[(i * w + j) * c], c, &next[(j * h + (h - 1 - i)) * c]);
    cur = std::move(next);
  }
  if (d.flip) {
    const std::size_t h = cur.dim(0), w = cur.dim(1), c = cur.dim(2);
    Tensor<float> next({h, w, c});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) std::copy_n(&cur[(i * w + j) * c], c, &next[(i * w + (w - 1 - j)) * c]);
    cur = std::move(next);
  }
  return cur;
}

CubePair augment(const CubePair& pair, const AugmentDraw& d) {
  CubePair out = pair;
  out.rgb.values = augment_tensor(pair.rgb.values, d);
  out.hsi.values = augment_tensor(pair.hsi.values, d);
  return out;
}

CubePair augment(const CubePair& pair, Rng& rng) {
  return augment(pair, draw_augment(rng));
}

std::string TrainLog::to_text() const {
  std::ostringstream os;
  os.precision(9);
  for (const auto& s : steps) os << "step " << s.step << " loss " << s.loss << " lr " << s.lr << '\n';
  for (const auto& e : epochs) {
    os << "epoch " << e.epoch << " train_loss " << e.train_loss;
    if (e.validated) {
      os << " val_rmse " << e.validation.rmse << " val_psnr " << e.validation.psnr_db << " val_sam "
         << e.validation.sam_deg << " val_mssim " << e.validation.mssim;
    }
    os << '\n';
  }
  return os.str();
}

void TrainLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_text();
}

std::vector<Tensor<float>> snapshot(const Model<float>& model) {
  std::vector<Tensor<float>> out;
  for (const auto& p : model.parameters()) out.push_back(p.var.value());
  return out;
}

void load_values(Model<float>& model, const std::vector<Tensor<float>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ShapeError("load_values: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].var.shape(), values[i].shape(), "load_values");
    params[i].var.mutable_value() = values[i];
  }
}

namespace {

// Stacks the selected cubes into a (B, H, W, C) grid.
Tensor<float> stack(const std::vector<const HsiCube*>& cubes) {
  const Shape& s = cubes.front()->values.shape();
  Tensor<float> out({cubes.size(), s[0], s[1], s[2]});
  const std::size_t n = shape_numel(s);
  for (std::size_t b = 0; b < cubes.size(); ++b) {
    if (cubes[b]->values.shape() != s) throw ShapeError("training batch mixes cube sizes");
    std::copy_n(cubes[b]->values.data().data(), n, &out[b * n]);
  }
  return out;
}

}  // namespace

HsiCube reconstruct(const Model<float>& model, const HsiCube& rgb) {
  NoGradGuard guard;
  const Tensor<float>& v = rgb.values;
  const Var<float> x = Var<float>::constant(v.reshaped({1, v.dim(0), v.dim(1), v.dim(2)}));
  const Var<float> y = forward_grid(model, x);
  Tensor<float> out = y.value().reshaped({v.dim(0), v.dim(1), model.config.out_channels});
  for (auto& e : out.data()) e = std::clamp(e, 0.0f, 1.0f);
  const std::uint32_t step = model.config.out_channels > 1 ? std::uint32_t(300 / (model.config.out_channels - 1)) : 0;
  return make_hsi(std::move(out), 400, step);
}

MetricReport validate(const Model<float>& model, const std::vector<CubePair>& pairs) {
  std::vector<EvalPair> ev;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const HsiCube rec = reconstruct(model, pairs[i].rgb);
    ev.push_back({std::to_string(i), pairs[i].hsi.values.cast<double>(), rec.values.cast<double>()});
  }
  const std::size_t side = std::min(pairs.front().hsi.height(), pairs.front().hsi.width());
  SsimOptions opt;
  opt.window = std::min<std::size_t>(opt.window, side);
  return evaluate(ev, false, opt);
}

TrainResult train_loop(Model<float>& model, const std::vector<CubePair>& train, const std::vector<CubePair>& val,
                       const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (train.empty()) throw ConfigError("train_loop: empty training set");
  for (const auto& p : train) require_divisible(p.rgb.height(), p.rgb.width());
  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = cfg.epochs * per_epoch;
  if (cfg.max_steps) total = std::min(total, cfg.max_steps);

  Rng rng(cfg.seed);
  Adam opt(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const ParamList<float> params = model.parameters();
  TrainResult res;
  res.best = snapshot(model);
  bool have_best = false;
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < n && step < total; start += cfg.batch_size) {
      std::vector<CubePair> batch;
      for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) {
        batch.push_back(cfg.augment ? augment(train[order[i]], rng) : train[order[i]]);
      }
      std::vector<const HsiCube*> rgb, hsi;
      for (const auto& p : batch) {
        rgb.push_back(&p.rgb);
        hsi.push_back(&p.hsi);
      }
      const double lr = cosine_lr(step, total, cfg);
      for (const auto& p : params) p.var.node()->grad = Tensor<float>();
      const Var<float> x = Var<float>::constant(stack(rgb));
      const Var<float> target = Var<float>::constant(stack(hsi));
      const Var<float> loss = mae(forward_grid(model, x), target);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("train_loop: non-finite loss at step " + std::to_string(step) + " (lr " +
                           std::to_string(lr) + ")");
      }
      loss.backward();
      opt.step(lr);
      const StepRecord rec{step, lv, lr};
      res.log.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_loss += lv;
      ++epoch_steps;
      ++step;
    }
    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = epoch_loss / double(std::max<std::size_t>(epoch_steps, 1));
    if (!val.empty()) {
      er.validated = true;
      er.validation = validate(model, val).mean;
      if (!have_best || er.validation.psnr_db > res.best_psnr) {
        have_best = true;
        res.best_psnr = er.validation.psnr_db;
        res.best_epoch = epoch;
        res.best = snapshot(model);
      }
    }
    res.log.epochs.push_back(er);
  }
  if (!have_best) {
    res.best = snapshot(model);
    res.best_epoch = res.log.epochs.size();
  }
  return res;
}

template Var<float> mae(const Var<float>&, const Var<float>&);
template Var<double> mae(const Var<double>&, const Var<double>&);

}  // namespace m3sr
