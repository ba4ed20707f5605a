#include "m3sr/network.hpp"

#include <cmath>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be >= 1");
  if (out_channels == 0) throw ConfigError("out_channels must be >= 1");
  if (base_width == 0) throw ConfigError("base_width must be >= 1");
  if (blocks_per_stage == 0) throw ConfigError("blocks_per_stage must be >= 1");
  block(base_width).validate();
}

BlockConfig ModelConfig::block(std::size_t channels) const {
  BlockConfig b;
  b.channels = channels;
  b.state = state;
  b.vss_expand = vss_expand;
  b.mamba_width = mamba_width;
  b.groups = groups;
  b.spatial = spatial;
  b.frequency = frequency;
  b.spectral = spectral;
  b.d_skip = d_skip;
  return b;
}

Variant parse_variant(const std::string& tag) {
  if (tag == "full") return Variant::kFull;
  if (tag == "V1" || tag == "v1") return Variant::kV1;
  if (tag == "V2" || tag == "v2") return Variant::kV2;
  if (tag == "V3" || tag == "v3") return Variant::kV3;
  throw ConfigError("unknown variant '" + tag + "' (expected full, V1, V2 or V3)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kV1: return "V1";
    case Variant::kV2: return "V2";
    case Variant::kV3: return "V3";
    default: return "full";
  }
}

ModelConfig apply_variant(ModelConfig cfg, Variant v) {
  if (v == Variant::kV1) cfg.spatial = false;
  if (v == Variant::kV2) cfg.frequency = false;
  if (v == Variant::kV3) cfg.spectral = false;
  return cfg;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out;
  embed.collect("embed", out);
  auto blocks = [&out](const std::string& stage, const std::vector<BlockParams<T>>& bs) {
    for (std::size_t i = 0; i < bs.size(); ++i) bs[i].collect(stage + ".block" + std::to_string(i), out);
  };
  for (std::size_t s = 0; s < encoder.size(); ++s) {
    blocks("enc" + std::to_string(s + 1), encoder[s]);
    down[s].collect("down" + std::to_string(s + 1), out);
  }
  blocks("bottleneck", bottleneck);
  for (std::size_t s = 0; s < up.size(); ++s) {
    const std::string name = "up" + std::to_string(up.size() - s);
    out.push_back({name + ".weight", up[s].weight});
    out.push_back({name + ".bias", up[s].bias});
    up[s].merge.collect(name + ".merge", out);
    blocks("dec" + std::to_string(up.size() - s), decoder[s]);
  }
  head.collect("head", out);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.var.size();
  return n;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Model<T> m;
  m.config = cfg;
  const std::size_t c0 = cfg.base_width;
  auto stage = [&](std::size_t width) {
    std::vector<BlockParams<T>> bs;
    for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) {
      Rng r = root.split();
      bs.push_back(BlockParams<T>::init(cfg.block(width), r));
    }
    return bs;
  };
  {
    Rng r = root.split();
    m.embed = ConvParams<T>::init(3, cfg.in_channels, c0, 1, 1, r);
  }
  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t width = c0 << s;
    m.encoder.push_back(stage(width));
    Rng r = root.split();
    m.down.push_back(ConvParams<T>::init(3, width, 2 * width, 2, 1, r));
  }
  m.bottleneck = stage(4 * c0);
  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t width = c0 << (1 - s);  // 2 C0, then C0
    Rng r = root.split();
    UpStage<T> u;
    const double bound = 1.0 / std::sqrt(double(4 * 2 * width));
    Tensor<T> w({2, 2, 2 * width, width}), b({width});
    for (auto& v : w.data()) v = T(r.uniform(-bound, bound));
    for (auto& v : b.data()) v = T(r.uniform(-bound, bound));
    u.weight = Var<T>::leaf(std::move(w));
    u.bias = Var<T>::leaf(std::move(b));
    u.merge = LinearParams<T>::init(2 * width, width, r);
    m.up.push_back(std::move(u));
    m.decoder.push_back(stage(width));
  }
  Rng r = root.split();
  m.head = ConvParams<T>::init(3, c0, cfg.out_channels, 1, 1, r);
  return m;
}

template <typename T>
Model<T> build_variant(ModelConfig cfg, Variant v) {
  return build_model<T>(apply_variant(cfg, v));
}

void require_divisible(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 4 || w % 4) {
    throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by 4; pad or crop height and width to multiples of 4");
  }
}

template <typename T>
Var<T> forward_grid(const Model<T>& m, const Var<T>& x) {
  if (x.shape().size() != 4 || x.dim(3) != m.config.in_channels) {
    throw ShapeError("forward: expected (B, H, W, " + std::to_string(m.config.in_channels) + "), got " +
                     shape_str(x.shape()));
  }
  require_divisible(x.dim(1), x.dim(2));
  auto run = [](Var<T> h, const std::vector<BlockParams<T>>& bs) {
    for (const auto& b : bs) h = mpf_block_grid(h, b, true);
    return h;
  };
  Var<T> h = m.embed(x);
  std::vector<Var<T>> skips;
  for (std::size_t s = 0; s < m.encoder.size(); ++s) {
    h = run(h, m.encoder[s]);
    skips.push_back(h);
    h = m.down[s](h);
  }
  h = run(h, m.bottleneck);
  for (std::size_t s = 0; s < m.up.size(); ++s) {
    const Var<T> up = conv_transpose2x2(h, m.up[s].weight, m.up[s].bias);
    h = m.up[s].merge(concat_last(up, skips[skips.size() - 1 - s]));
    h = run(h, m.decoder[s]);
  }
  return m.head(h);
}

template <typename T>
Var<T> forward(const Model<T>& m, const Var<T>& rgb) {
  if (rgb.shape().size() != 3) throw ShapeError("forward: expected (C, H, W), got " + shape_str(rgb.shape()));
  return grid_to_chw(forward_grid(m, chw_to_grid(rgb)));
}

namespace {

using u64 = std::uint64_t;

constexpr u64 kLayerNormFlops = 7;
constexpr u64 kSiluFlops = 4;
constexpr u64 kSoftplusFlops = 4;
constexpr u64 kHaarFlops = 4;
constexpr u64 kScanStateFlops = 8;

class CostWalker {
 public:
  explicit CostWalker(const ModelConfig& cfg) : cfg_(cfg) {}

  void add(const std::string& name, u64 params, u64 flops) { report.layers.push_back({name, params, flops}); }

  void linear(const std::string& name, u64 in, u64 out, u64 tokens) {
    add(name, in * out + out, 2 * in * out * tokens + out * tokens);
  }
  void conv(const std::string& name, u64 k, u64 ci, u64 co, u64 pixels_out) {
    add(name, k * k * ci * co + co, 2 * k * k * ci * co * pixels_out + co * pixels_out);
  }
  void layer_norm(const std::string& name, u64 c, u64 tokens) { add(name, 2 * c, kLayerNormFlops * c * tokens); }
  void elementwise(const std::string& name, u64 per_element, u64 elements) { add(name, 0, per_element * elements); }

  void s6(const std::string& name, u64 d, u64 tokens) {
    const u64 n = cfg_.state;
    linear(name + ".proj_b", d, n, tokens);
    linear(name + ".proj_c", d, n, tokens);
    linear(name + ".proj_delta", d, d, tokens);
    elementwise(name + ".softplus", kSoftplusFlops, d * tokens);
    const u64 skip = cfg_.d_skip ? d : 0;
    add(name + ".scan", d * n + skip, kScanStateFlops * tokens * d * n + (cfg_.d_skip ? 2 * d * tokens : 0));
  }

  void vss(const std::string& name, u64 c, u64 h, u64 w, u64 images) {
    const u64 e = cfg_.vss_expand * c, tokens = h * w * images;
    linear(name + ".in_proj", c, e, tokens);
    add(name + ".dwconv", 10 * e, 18 * e * tokens + e * tokens);
    elementwise(name + ".silu", kSiluFlops, e * tokens);
    for (int d = 0; d < 4; ++d) s6(name + ".ss2d.dir" + std::to_string(d), e, tokens);
    elementwise(name + ".ss2d.sum", 1, 3 * e * tokens);
    layer_norm(name + ".norm", e, tokens);
    linear(name + ".out_proj", e, c, tokens);
  }

  void vss_branch(const std::string& name, u64 c, u64 h, u64 w, u64 images) {
    const u64 tokens = h * w * images;
    layer_norm(name + ".norm", c, tokens);
    vss(name + ".vss", c, h, w, images);
    linear(name + ".merge", 2 * c, c, tokens);
  }

  void mamba(const std::string& name, u64 d, u64 sequences, u64 len) {
    const u64 e = cfg_.mamba_width, tokens = sequences * len;
    linear(name + ".gate_proj", d, e, tokens);
    elementwise(name + ".gate_silu", kSiluFlops, e * tokens);
    linear(name + ".in_proj", d, e, tokens);
    add(name + ".conv1d", 4 * e, 6 * e * tokens + e * tokens);
    elementwise(name + ".conv_silu", kSiluFlops, e * tokens);
    s6(name + ".s6", e, tokens);
    elementwise(name + ".sum", 1, e * tokens);
    linear(name + ".out_proj", e, d, tokens);
  }

  void block(const std::string& name, u64 c, u64 h, u64 w) {
    const u64 pixels = h * w, g = cfg_.groups;
    u64 branches = 0;
    if (cfg_.spatial) {
      vss_branch(name + ".spatial", c, h, w, 1);
      ++branches;
    }
    if (cfg_.frequency) {
      const u64 h2 = (h + 1) / 2, w2 = (w + 1) / 2;
      elementwise(name + ".frequency.dwt", kHaarFlops, 4 * h2 * w2 * c);
      vss_branch(name + ".frequency", c, h2, w2, 4);
      elementwise(name + ".frequency.idwt", kHaarFlops, 4 * h2 * w2 * c);
      ++branches;
    }
    if (cfg_.spectral) {
      linear(name + ".spectral.expand", c, c * g, pixels);
      mamba(name + ".spectral.mamba", 1, pixels * g, c);
      linear(name + ".spectral.project", c * g, c, pixels);
      ++branches;
    }
    add(name + ".fusion", branches, 2 * branches * c * pixels);
  }

  void stage(const std::string& name, u64 c, u64 h, u64 w) {
    for (std::size_t i = 0; i < cfg_.blocks_per_stage; ++i) block(name + ".block" + std::to_string(i), c, h, w);
  }

  CostReport report;

 private:
  const ModelConfig& cfg_;
};

}  // namespace

CostReport count_params_flops(const ModelConfig& cfg, std::size_t h, std::size_t w) {
  cfg.validate();
  require_divisible(h, w);
  CostWalker cw(cfg);
  const u64 c0 = cfg.base_width;
  cw.conv("embed", 3, cfg.in_channels, c0, u64(h) * w);
  for (u64 s = 0; s < 2; ++s) {
    const u64 c = c0 << s, hs = h >> s, ws = w >> s;
    cw.stage("enc" + std::to_string(s + 1), c, hs, ws);
    cw.conv("down" + std::to_string(s + 1), 3, c, 2 * c, (hs / 2) * (ws / 2));
  }
  cw.stage("bottleneck", 4 * c0, h / 4, w / 4);
  for (u64 s = 0; s < 2; ++s) {
    const u64 level = 2 - s, c = c0 << (level - 1), hs = h >> (level - 1), ws = w >> (level - 1);
    const std::string name = "up" + std::to_string(level);
    cw.add(name, 4 * 2 * c * c + c, 2 * 4 * 2 * c * c * (hs / 2) * (ws / 2) + c * hs * ws);
    cw.linear(name + ".merge", 2 * c, c, hs * ws);
    cw.stage("dec" + std::to_string(level), c, hs, ws);
  }
  cw.conv("head", 3, c0, cfg.out_channels, u64(h) * w);
  CostReport r = std::move(cw.report);
  for (const auto& l : r.layers) {
    r.parameter_count += l.params;
    r.flops += l.flops;
  }
  return r;
}

template struct Model<float>;
template struct Model<double>;
template Model<float> build_model(const ModelConfig&);
template Model<double> build_model(const ModelConfig&);
template Model<float> build_variant(ModelConfig, Variant);
template Model<double> build_variant(ModelConfig, Variant);
template Var<float> forward_grid(const Model<float>&, const Var<float>&);
template Var<double> forward_grid(const Model<double>&, const Var<double>&);
template Var<float> forward(const Model<float>&, const Var<float>&);
template Var<double> forward(const Model<double>&, const Var<double>&);

}  // namespace m3sr
