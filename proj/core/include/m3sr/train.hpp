#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "m3sr/data.hpp"
#include "m3sr/metrics.hpp"
#include "m3sr/network.hpp"

namespace m3sr {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double lr0 = 4e-4;
  double lr_min = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t patch = 128;
  bool augment = true;
  std::size_t max_steps = 0;  // 0: epochs * ceil(n / batch_size)
  std::uint64_t seed = 0;

  void validate() const;
};

// lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2; DomainError when
// step > total.
double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// Mean absolute error over all elements.
template <typename T>
Var<T> mae(const Var<T>& prediction, const Var<T>& target);
double mae_value(const Tensor<double>& z, const Tensor<double>& zh);

// Adam without weight decay. m and v start at zero; step t is 1-based.
class Adam {
 public:
  Adam(ParamList<float> params, double beta1, double beta2, double eps);
  // Applies one update from the gradients currently held by the parameters.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  ParamList<float> params_;
  std::vector<AlignedVector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Rotation by quarter turns (counter-clockwise index map (i, j) -> (j, H-1-i)
// per turn) followed by an optional horizontal flip (i, j) -> (i, W-1-j).
struct AugmentDraw {
  int quarter_turns = 0;
  bool flip = false;
};
AugmentDraw draw_augment(Rng& rng);
Tensor<float> augment_tensor(const Tensor<float>& hwc, const AugmentDraw& d);
CubePair augment(const CubePair& pair, const AugmentDraw& d);
CubePair augment(const CubePair& pair, Rng& rng);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean over the epoch's steps
  bool validated = false;
  ImageMetrics validation;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  // Line records: "step <n> loss <x> lr <y>" and
  // "epoch <e> train_loss <x> [val_rmse .. val_psnr .. val_sam .. val_mssim ..]".
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;
};

struct TrainResult {
  TrainLog log;
  std::vector<Tensor<float>> best;  // parameter values of the best-validation epoch
  std::size_t best_epoch = 0;
  double best_psnr = 0;
};

// Runs Adam on the MAE loss with the cosine schedule. Batches are drawn in a
// seeded shuffled order each epoch; validation runs after every epoch when
// `val` is non-empty and the parameters with the highest mean PSNR are kept
// in `best` (the final parameters otherwise). A non-finite loss throws
// NumericError naming the step and learning rate.
using StepCallback = std::function<void(const StepRecord&)>;
TrainResult train_loop(Model<float>& model, const std::vector<CubePair>& train, const std::vector<CubePair>& val,
                       const TrainConfig& cfg, const StepCallback& on_step = {});

// Inference on one RGB cube; output clipped to [0, 1].
HsiCube reconstruct(const Model<float>& model, const HsiCube& rgb);
MetricReport validate(const Model<float>& model, const std::vector<CubePair>& pairs);

void load_values(Model<float>& model, const std::vector<Tensor<float>>& values);
std::vector<Tensor<float>> snapshot(const Model<float>& model);

}  // namespace m3sr
