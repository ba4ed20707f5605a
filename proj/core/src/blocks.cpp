#include "m3sr/blocks.hpp"

#include <cmath>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

namespace {

template <typename T>
Var<T> uniform_leaf(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = T(rng.uniform(-bound, bound));
  return Var<T>::leaf(std::move(t));
}

template <typename T>
void push(ParamList<T>& out, const std::string& name, const Var<T>& v) {
  if (v.defined()) out.push_back({name, v});
}

}  // namespace

template <typename T>
LinearParams<T> LinearParams<T>::init(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  if (in == 0 || out == 0) throw ConfigError("linear layer widths must be >= 1");
  const double bound = 1.0 / std::sqrt(double(in));
  LinearParams p;
  p.weight = uniform_leaf<T>({out, in}, bound, rng);
  if (with_bias) p.bias = uniform_leaf<T>({out}, bound, rng);
  return p;
}

template <typename T>
Var<T> LinearParams<T>::operator()(const Var<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
void LinearParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  push(out, prefix + ".weight", weight);
  push(out, prefix + ".bias", bias);
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::init(std::size_t channels) {
  return {Var<T>::leaf(Tensor<T>({channels}, T(1))), Var<T>::leaf(Tensor<T>({channels}))};
}

template <typename T>
Var<T> LayerNormParams<T>::operator()(const Var<T>& x) const {
  return layer_norm(x, gamma, beta);
}

template <typename T>
void LayerNormParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  push(out, prefix + ".gamma", gamma);
  push(out, prefix + ".beta", beta);
}

template <typename T>
ConvParams<T> ConvParams<T>::init(std::size_t k, std::size_t ci, std::size_t co, std::size_t stride,
                                  std::size_t pad, Rng& rng) {
  if (k == 0 || ci == 0 || co == 0) throw ConfigError("convolution sizes must be >= 1");
  const double bound = 1.0 / std::sqrt(double(k * k * ci));
  ConvParams p;
  p.weight = uniform_leaf<T>({k, k, ci, co}, bound, rng);
  p.bias = uniform_leaf<T>({co}, bound, rng);
  p.stride = stride;
  p.pad = pad;
  return p;
}

template <typename T>
Var<T> ConvParams<T>::operator()(const Var<T>& x) const {
  return conv2d(x, weight, bias, stride, pad);
}

template <typename T>
void ConvParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  push(out, prefix + ".weight", weight);
  push(out, prefix + ".bias", bias);
}

void BlockConfig::validate() const {
  if (channels == 0) throw ConfigError("block channels must be >= 1");
  if (state == 0) throw ConfigError("state dimension N must be >= 1");
  if (vss_expand == 0 || mamba_width == 0) throw ConfigError("inner widths must be >= 1");
  if (groups < 1) throw ConfigError("group count G must be >= 1");
}

template <typename T>
VssParams<T> VssParams<T>::init(std::size_t channels, std::size_t inner, std::size_t state, Rng& rng, bool skip) {
  VssParams p;
  p.in_proj = LinearParams<T>::init(channels, inner, rng);
  p.dw_weight = uniform_leaf<T>({3, 3, inner}, 1.0 / 3.0, rng);
  p.dw_bias = uniform_leaf<T>({inner}, 1.0 / 3.0, rng);
  p.ss2d = init_ss2d<T>(inner, state, rng, skip);
  p.norm = LayerNormParams<T>::init(inner);
  p.out_proj = LinearParams<T>::init(inner, channels, rng);
  return p;
}

template <typename T>
void VssParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  push(out, prefix + ".dwconv.weight", dw_weight);
  push(out, prefix + ".dwconv.bias", dw_bias);
  for (std::size_t d = 0; d < ss2d.size(); ++d) ss2d[d].collect(prefix + ".ss2d.dir" + std::to_string(d), out);
  norm.collect(prefix + ".norm", out);
  out_proj.collect(prefix + ".out_proj", out);
}

template <typename T>
MambaParams<T> MambaParams<T>::init(std::size_t channels, std::size_t inner, std::size_t state, Rng& rng,
                                    bool skip) {
  MambaParams p;
  p.gate_proj = LinearParams<T>::init(channels, inner, rng);
  p.in_proj = LinearParams<T>::init(channels, inner, rng);
  const double bound = 1.0 / std::sqrt(3.0);
  p.conv_weight = uniform_leaf<T>({inner, 3}, bound, rng);
  p.conv_bias = uniform_leaf<T>({inner}, bound, rng);
  p.s6 = SelectiveParams<T>::init(inner, state, rng, skip);
  p.out_proj = LinearParams<T>::init(inner, channels, rng);
  return p;
}

template <typename T>
void MambaParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  gate_proj.collect(prefix + ".gate_proj", out);
  in_proj.collect(prefix + ".in_proj", out);
  push(out, prefix + ".conv1d.weight", conv_weight);
  push(out, prefix + ".conv1d.bias", conv_bias);
  s6.collect(prefix + ".s6", out);
  out_proj.collect(prefix + ".out_proj", out);
}

template <typename T>
VssBranchParams<T> VssBranchParams<T>::init(const BlockConfig& cfg, Rng& rng) {
  VssBranchParams p;
  p.norm = LayerNormParams<T>::init(cfg.channels);
  p.vss = VssParams<T>::init(cfg.channels, cfg.vss_expand * cfg.channels, cfg.state, rng, cfg.d_skip);
  p.merge = LinearParams<T>::init(2 * cfg.channels, cfg.channels, rng);
  return p;
}

template <typename T>
void VssBranchParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  norm.collect(prefix + ".norm", out);
  vss.collect(prefix + ".vss", out);
  merge.collect(prefix + ".merge", out);
}

template <typename T>
SpectralParams<T> SpectralParams<T>::init(const BlockConfig& cfg, Rng& rng) {
  SpectralParams p;
  p.groups = cfg.groups;
  p.expand = LinearParams<T>::init(cfg.channels, cfg.channels * cfg.groups, rng);
  p.mamba = MambaParams<T>::init(1, cfg.mamba_width, cfg.state, rng, cfg.d_skip);
  p.project = LinearParams<T>::init(cfg.channels * cfg.groups, cfg.channels, rng);
  return p;
}

template <typename T>
void SpectralParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  expand.collect(prefix + ".expand", out);
  mamba.collect(prefix + ".mamba", out);
  project.collect(prefix + ".project", out);
}

template <typename T>
BlockParams<T> BlockParams<T>::init(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  BlockParams p;
  p.config = cfg;
  // Every branch draws from its own child stream, so removing one branch
  // leaves the others' initial weights unchanged.
  Rng rs = rng.split(), rf = rng.split(), re = rng.split(), rw = rng.split();
  auto scalar = [&rw](bool on) {
    const T v = T(rw.uniform());
    return on ? Var<T>::leaf(Tensor<T>({1}, v)) : Var<T>();
  };
  if (cfg.spatial) p.spatial = VssBranchParams<T>::init(cfg, rs);
  if (cfg.frequency) p.frequency = VssBranchParams<T>::init(cfg, rf);
  if (cfg.spectral) p.spectral = SpectralParams<T>::init(cfg, re);
  p.omega_a = scalar(cfg.spatial);
  p.omega_f = scalar(cfg.frequency);
  p.omega_e = scalar(cfg.spectral);
  return p;
}

template <typename T>
void BlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  if (config.spatial) spatial.collect(prefix + ".spatial", out);
  if (config.frequency) frequency.collect(prefix + ".frequency", out);
  if (config.spectral) spectral.collect(prefix + ".spectral", out);
  push(out, prefix + ".omega_a", omega_a);
  push(out, prefix + ".omega_f", omega_f);
  push(out, prefix + ".omega_e", omega_e);
}

namespace {

template <typename T>
void require_grid(const Var<T>& x, const char* what) {
  if (x.shape().size() != 4) {
    throw ShapeError(std::string(what) + ": expected a (B, H, W, C) grid, got " + shape_str(x.shape()));
  }
}

template <typename T>
void require_width(const Var<T>& x, std::size_t c, const char* what) {
  if (x.shape().back() != c) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(c) + " channels, got " +
                     shape_str(x.shape()));
  }
}

template <typename T>
Var<T> vss_branch_core(const Var<T>& x, const VssBranchParams<T>& p) {
  return p.merge(concat_last(vss_block_grid(p.norm(x), p.vss), x));
}

}  // namespace

template <typename T>
Var<T> vss_block_grid(const Var<T>& x, const VssParams<T>& p) {
  require_grid(x, "vss_block");
  require_width(x, p.in_proj.weight.dim(1), "vss_block");
  const Var<T> xp = silu(depthwise_conv3x3(p.in_proj(x), p.dw_weight, p.dw_bias));
  return p.out_proj(p.norm(ss2d_grid(xp, p.ss2d)));
}

template <typename T>
Var<T> mamba_block(const Var<T>& x, const MambaParams<T>& p) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("mamba_block: expected (L, D) or (S, L, D), got " + shape_str(s));
  require_width(x, p.in_proj.weight.dim(1), "mamba_block");
  const Var<T> seq = s.size() == 2 ? reshape(x, {1, s[0], s[1]}) : x;
  const Var<T> gate = silu(p.gate_proj(seq));
  const Var<T> inner = s6_forward(silu(causal_depthwise_conv1d(p.in_proj(seq), p.conv_weight, p.conv_bias)), p.s6);
  const Var<T> y = p.out_proj(add(gate, inner));
  return s.size() == 2 ? reshape(y, s) : y;
}

template <typename T>
Var<T> spatial_branch_grid(const Var<T>& x, const VssBranchParams<T>& p) {
  require_grid(x, "spatial_branch");
  return vss_branch_core(x, p);
}

template <typename T>
Var<T> frequency_branch_grid(const Var<T>& x, const VssBranchParams<T>& p, bool pad_odd) {
  require_grid(x, "frequency_branch");
  const std::size_t h = x.dim(1), w = x.dim(2);
  const bool odd = (h % 2) || (w % 2);
  if (odd && !pad_odd) {
    throw ShapeError("frequency_branch: spatial extents must be even, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const Var<T> even = odd ? pad_grid(x, h + h % 2, w + w % 2) : x;
  const Var<T> y = haar_idwt(vss_branch_core(haar_dwt(even), p));
  return odd ? crop_grid(y, h, w) : y;
}

template <typename T>
Var<T> spectral_branch_grid(const Var<T>& x, const SpectralParams<T>& p) {
  require_grid(x, "spectral_branch");
  if (p.groups < 1) throw ConfigError("spectral_branch: group count G must be >= 1");
  const std::size_t nb = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  // Expanded channel g * C + c is step c of group g's sequence.
  const Var<T> seq = reshape(p.expand(x), {nb * h * w * p.groups, c, 1});
  const Var<T> y = reshape(mamba_block(seq, p.mamba), {nb, h, w, c * p.groups});
  return p.project(y);
}

template <typename T>
MpfTrace<T> mpf_trace_grid(const Var<T>& x, const BlockParams<T>& p, bool pad_odd) {
  require_grid(x, "mpf_block");
  require_width(x, p.config.channels, "mpf_block");
  MpfTrace<T> tr;
  tr.input = x;
  std::vector<Var<T>> terms;
  if (p.config.spatial) {
    tr.spatial = spatial_branch_grid(x, p.spatial);
    terms.push_back(mul_scalar(p.omega_a, tr.spatial));
  }
  if (p.config.frequency) {
    tr.frequency = frequency_branch_grid(x, p.frequency, pad_odd);
    terms.push_back(mul_scalar(p.omega_f, tr.frequency));
  }
  if (p.config.spectral) {
    tr.spectral = spectral_branch_grid(x, p.spectral);
    terms.push_back(mul_scalar(p.omega_e, tr.spectral));
  }
  terms.push_back(x);
  tr.output = add_n(terms);
  return tr;
}

template <typename T>
Var<T> mpf_block_grid(const Var<T>& x, const BlockParams<T>& p, bool pad_odd) {
  return mpf_trace_grid(x, p, pad_odd).output;
}

template <typename T>
Var<T> vss_block(const Var<T>& f, const VssParams<T>& p) {
  return grid_to_chw(vss_block_grid(chw_to_grid(f), p));
}

template <typename T>
Var<T> spatial_branch(const Var<T>& f, const VssBranchParams<T>& p) {
  return grid_to_chw(spatial_branch_grid(chw_to_grid(f), p));
}

template <typename T>
Var<T> frequency_branch(const Var<T>& f, const VssBranchParams<T>& p) {
  return grid_to_chw(frequency_branch_grid(chw_to_grid(f), p, false));
}

template <typename T>
Var<T> spectral_branch(const Var<T>& f, const SpectralParams<T>& p) {
  return grid_to_chw(spectral_branch_grid(chw_to_grid(f), p));
}

template <typename T>
Var<T> mpf_block(const Var<T>& f, const BlockParams<T>& p) {
  return grid_to_chw(mpf_block_grid(chw_to_grid(f), p, false));
}

template <typename T>
MpfTrace<T> mpf_trace(const Var<T>& f, const BlockParams<T>& p) {
  MpfTrace<T> g = mpf_trace_grid(chw_to_grid(f), p, false);
  auto back = [](const Var<T>& v) { return v.defined() ? grid_to_chw(v) : Var<T>(); };
  return {f, back(g.spatial), back(g.frequency), back(g.spectral), back(g.output)};
}

#define M3SR_INSTANTIATE_BLOCKS(T)                                                  \
  template struct LinearParams<T>;                                                  \
  template struct LayerNormParams<T>;                                               \
  template struct ConvParams<T>;                                                    \
  template struct VssParams<T>;                                                     \
  template struct MambaParams<T>;                                                   \
  template struct VssBranchParams<T>;                                               \
  template struct SpectralParams<T>;                                                \
  template struct BlockParams<T>;                                                   \
  template Var<T> vss_block_grid(const Var<T>&, const VssParams<T>&);               \
  template Var<T> mamba_block(const Var<T>&, const MambaParams<T>&);                \
  template Var<T> spatial_branch_grid(const Var<T>&, const VssBranchParams<T>&);    \
  template Var<T> frequency_branch_grid(const Var<T>&, const VssBranchParams<T>&, bool); \
  template Var<T> spectral_branch_grid(const Var<T>&, const SpectralParams<T>&);    \
  template MpfTrace<T> mpf_trace_grid(const Var<T>&, const BlockParams<T>&, bool);  \
  template Var<T> mpf_block_grid(const Var<T>&, const BlockParams<T>&, bool);       \
  template Var<T> vss_block(const Var<T>&, const VssParams<T>&);                    \
  template Var<T> spatial_branch(const Var<T>&, const VssBranchParams<T>&);         \
  template Var<T> frequency_branch(const Var<T>&, const VssBranchParams<T>&);       \
  template Var<T> spectral_branch(const Var<T>&, const SpectralParams<T>&);         \
  template Var<T> mpf_block(const Var<T>&, const BlockParams<T>&);                  \
  template MpfTrace<T> mpf_trace(const Var<T>&, const BlockParams<T>&);

M3SR_INSTANTIATE_BLOCKS(float)
M3SR_INSTANTIATE_BLOCKS(double)

}  // namespace m3sr
