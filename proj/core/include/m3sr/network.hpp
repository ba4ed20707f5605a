#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "m3sr/blocks.hpp"

namespace m3sr {

// Architecture hyperparameters. Scale widths are (C0, 2 C0, 4 C0).
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t out_channels = 31;
  std::size_t base_width = 16;       // C0
  std::size_t blocks_per_stage = 1;  // MPF blocks per encoder, decoder and bottleneck stage
  std::size_t state = 8;             // N
  std::size_t groups = 4;            // G
  std::size_t vss_expand = 1;
  std::size_t mamba_width = 2;
  bool spatial = true;
  bool frequency = true;
  bool spectral = true;
  bool d_skip = true;
  std::uint64_t seed = 0;

  void validate() const;
  BlockConfig block(std::size_t channels) const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Variant { kFull, kV1, kV2, kV3 };

// "full", "V1" (no spatial branch), "V2" (no frequency), "V3" (no spectral).
Variant parse_variant(const std::string& tag);
std::string variant_name(Variant v);
ModelConfig apply_variant(ModelConfig cfg, Variant v);

template <typename T>
struct UpStage {
  Var<T> weight, bias;     // transposed conv (2, 2, 2C, C), (C)
  LinearParams<T> merge;   // Concat(up, skip): 2C -> C
};

// Three-scale encoder-decoder:
//   embed 3x3 -> [MPF(C0)] -> down -> [MPF(2C0)] -> down -> [MPF(4C0)]
//   -> up + skip -> [MPF(2C0)] -> up + skip -> [MPF(C0)] -> head 3x3.
template <typename T>
struct Model {
  ModelConfig config;
  ConvParams<T> embed;
  std::vector<std::vector<BlockParams<T>>> encoder;  // 2 stages
  std::vector<ConvParams<T>> down;                   // 2
  std::vector<BlockParams<T>> bottleneck;
  std::vector<UpStage<T>> up;                        // 2, deepest first
  std::vector<std::vector<BlockParams<T>>> decoder;  // 2, deepest first
  ConvParams<T> head;

  // Stable dotted names in a fixed order.
  ParamList<T> parameters() const;
  std::size_t parameter_count() const;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg);
template <typename T>
Model<T> build_variant(ModelConfig cfg, Variant v);

// (B, H, W, in) -> (B, H, W, out); H and W must be multiples of 4.
template <typename T>
Var<T> forward_grid(const Model<T>& m, const Var<T>& x);
// (in, H, W) -> (out, H, W).
template <typename T>
Var<T> forward(const Model<T>& m, const Var<T>& rgb);

void require_divisible(std::size_t h, std::size_t w);

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

// FLOPs count one multiply-accumulate as 2 and every other arithmetic
// operation as 1. Per-element constants: layer norm 7, SiLU 4, softplus 4,
// Haar analysis or synthesis 4 per output. One selective-scan state update
// (discretize, recur, read out) counts as 8 per (token, channel, state).
struct CostReport {
  std::uint64_t parameter_count = 0;
  std::uint64_t flops = 0;
  std::vector<LayerCost> layers;
};

CostReport count_params_flops(const ModelConfig& cfg, std::size_t h, std::size_t w);

}  // namespace m3sr
