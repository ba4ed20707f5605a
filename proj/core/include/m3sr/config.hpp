#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "m3sr/network.hpp"
#include "m3sr/train.hpp"

namespace m3sr {

// Everything a run reads from a plain-text config: one "key = value" per
// line, '#' starts a comment. Unknown keys and malformed values throw
// ConfigError naming the line.
//
// Model keys (defaults): in_channels 3, out_channels 31, base_width 16,
// blocks_per_stage 1, state 8, groups 4, vss_expand 1, mamba_width 2,
// spatial/frequency/spectral true, d_skip true.
// Training keys: batch_size 32, epochs 100, lr0 4e-4, lr_min 0, beta1 0.9,
// beta2 0.999, adam_eps 1e-8, patch 128, augment true, max_steps 0.
// Data keys: synth_height 64, synth_width 64, val_pairs 0 (pairs held out
// from the end of the training set for per-epoch validation).
// "seed" (default 0) seeds both model init and training.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t synth_height = 64;
  std::size_t synth_width = 64;
  std::size_t val_pairs = 0;

  void set(const std::string& key, const std::string& value);
  void set_seed(std::uint64_t seed);
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Model keys only, one per line, in a fixed order.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

}  // namespace m3sr
