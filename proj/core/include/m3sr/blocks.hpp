#pragma once

#include <cstddef>
#include <string>

#include "m3sr/autograd.hpp"
#include "m3sr/rng.hpp"
#include "m3sr/scan2d.hpp"
#include "m3sr/ssm.hpp"

// Building blocks of the multi-perceptual fusion (MPF) block. The grid
// functions take token grids (B, H, W, C); the FeatureMap overloads take
// (C, H, W) and wrap them.
namespace m3sr {

// Affine map over the last axis; weight (out, in). Also serves as the
// pointwise (1x1) convolution on token grids.
template <typename T>
struct LinearParams {
  Var<T> weight, bias;

  // Uniform in +-1/sqrt(in) for weight and bias.
  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct LayerNormParams {
  Var<T> gamma, beta;

  static LayerNormParams init(std::size_t channels);
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// K x K dense convolution, weight (K, K, Ci, Co).
template <typename T>
struct ConvParams {
  Var<T> weight, bias;
  std::size_t stride = 1, pad = 0;

  static ConvParams init(std::size_t k, std::size_t ci, std::size_t co, std::size_t stride, std::size_t pad,
                         Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Dimensions shared by every block of one MPF block.
struct BlockConfig {
  std::size_t channels = 16;
  std::size_t state = 8;       // N
  std::size_t vss_expand = 1;  // VSS inner width = vss_expand * channels
  std::size_t mamba_width = 2; // inner width of the spectral Mamba block
  std::size_t groups = 4;      // G
  bool spatial = true;
  bool frequency = true;
  bool spectral = true;
  bool d_skip = true;

  void validate() const;
};

// VSS(x) = Lin(LN(SS2D(x'))), x' = SiLU(DWConv(Lin(x))).
template <typename T>
struct VssParams {
  LinearParams<T> in_proj;
  Var<T> dw_weight, dw_bias;  // (3, 3, E), (E)
  Ss2dParams<T> ss2d;
  LayerNormParams<T> norm;
  LinearParams<T> out_proj;

  static VssParams init(std::size_t channels, std::size_t inner, std::size_t state, Rng& rng, bool skip);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Mamba(x) = Lin(x' + x''), x' = SiLU(Lin(x)),
// x'' = S6(SiLU(DWConv1d(Lin(x)))) with a causal width-3 DWConv1d.
template <typename T>
struct MambaParams {
  LinearParams<T> gate_proj;
  LinearParams<T> in_proj;
  Var<T> conv_weight, conv_bias;  // (E, 3), (E)
  SelectiveParams<T> s6;
  LinearParams<T> out_proj;

  static MambaParams init(std::size_t channels, std::size_t inner, std::size_t state, Rng& rng, bool skip);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Spatial and frequency branches share this layout: LN, VSS and the 2C -> C
// merge applied after Concat(VSS(LN(x)), x).
template <typename T>
struct VssBranchParams {
  LayerNormParams<T> norm;
  VssParams<T> vss;
  LinearParams<T> merge;

  static VssBranchParams init(const BlockConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct SpectralParams {
  std::size_t groups = 1;
  LinearParams<T> expand;   // C -> C*G
  MambaParams<T> mamba;     // feature width 1, shared by all groups
  LinearParams<T> project;  // C*G -> C

  static SpectralParams init(const BlockConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// All weights of one MPF block. A disabled branch has no parameters and an
// undefined fusion weight.
template <typename T>
struct BlockParams {
  BlockConfig config;
  VssBranchParams<T> spatial;
  VssBranchParams<T> frequency;
  SpectralParams<T> spectral;
  Var<T> omega_a, omega_f, omega_e;  // one element each

  static BlockParams init(const BlockConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
Var<T> vss_block_grid(const Var<T>& x, const VssParams<T>& p);
// x: (L, D) or (S, L, D).
template <typename T>
Var<T> mamba_block(const Var<T>& x, const MambaParams<T>& p);
template <typename T>
Var<T> spatial_branch_grid(const Var<T>& x, const VssBranchParams<T>& p);
// Odd extents are zero-padded to even before the DWT and cropped after the
// IDWT when `pad_odd` is set; otherwise they throw ShapeError.
template <typename T>
Var<T> frequency_branch_grid(const Var<T>& x, const VssBranchParams<T>& p, bool pad_odd = false);
template <typename T>
Var<T> spectral_branch_grid(const Var<T>& x, const SpectralParams<T>& p);

template <typename T>
struct MpfTrace {
  Var<T> input, spatial, frequency, spectral, output;  // disabled branches undefined
};

// F_out = w_a F_a + w_f F_f + w_e F_e + F_in over the enabled branches.
template <typename T>
MpfTrace<T> mpf_trace_grid(const Var<T>& x, const BlockParams<T>& p, bool pad_odd = false);
template <typename T>
Var<T> mpf_block_grid(const Var<T>& x, const BlockParams<T>& p, bool pad_odd = false);

// FeatureMap (C, H, W) forms.
template <typename T>
Var<T> vss_block(const Var<T>& f, const VssParams<T>& p);
template <typename T>
Var<T> spatial_branch(const Var<T>& f, const VssBranchParams<T>& p);
template <typename T>
Var<T> frequency_branch(const Var<T>& f, const VssBranchParams<T>& p);
template <typename T>
Var<T> spectral_branch(const Var<T>& f, const SpectralParams<T>& p);
template <typename T>
Var<T> mpf_block(const Var<T>& f, const BlockParams<T>& p);
template <typename T>
MpfTrace<T> mpf_trace(const Var<T>& f, const BlockParams<T>& p);

}  // namespace m3sr
