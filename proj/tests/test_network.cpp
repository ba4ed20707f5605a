#include <gtest/gtest.h>

#include "m3sr/errors.hpp"
#include "m3sr/network.hpp"
#include "test_util.hpp"

using namespace m3sr;
using namespace m3sr::test;

namespace {

using u64 = std::uint64_t;

ModelConfig tiny() {
  ModelConfig c;
  c.base_width = 4;
  c.state = 2;
  c.groups = 2;
  c.out_channels = 5;
  return c;
}

// Closed-form parameter count, written out term by term.
u64 lin(u64 i, u64 o) { return i * o + o; }
u64 s6(u64 d, u64 n, bool skip) { return 2 * (n * d + n) + d * d + d + d * n + (skip ? d : 0); }
u64 vss(u64 c, u64 e, u64 n, bool skip) { return lin(c, e) + 9 * e + e + 4 * s6(e, n, skip) + 2 * e + lin(e, c); }
u64 mamba(u64 c, u64 e, u64 n, bool skip) { return 2 * lin(c, e) + 3 * e + e + s6(e, n, skip) + lin(e, c); }
u64 conv(u64 k, u64 ci, u64 co) { return k * k * ci * co + co; }

u64 block(const ModelConfig& m, u64 c) {
  const u64 branch = 2 * c + vss(c, m.vss_expand * c, m.state, m.d_skip) + lin(2 * c, c);
  const u64 spectral = lin(c, c * m.groups) + mamba(1, m.mamba_width, m.state, m.d_skip) + lin(c * m.groups, c);
  return (m.spatial ? branch + 1 : 0) + (m.frequency ? branch + 1 : 0) + (m.spectral ? spectral + 1 : 0);
}

u64 expected_params(const ModelConfig& m) {
  const u64 c0 = m.base_width, b = m.blocks_per_stage;
  u64 n = conv(3, m.in_channels, c0) + conv(3, c0, m.out_channels);
  n += b * (block(m, c0) + block(m, 2 * c0) + block(m, 4 * c0));
  n += conv(3, c0, 2 * c0) + conv(3, 2 * c0, 4 * c0);
  for (u64 c : {2 * c0, c0}) n += 4 * 2 * c * c + c + lin(2 * c, c) + b * block(m, c);
  return n;
}

}  // namespace

TEST(Network, OutputShapes) {
  const Model<float> m = build_model<float>(ModelConfig{});
  NoGradGuard ng;
  for (std::size_t s : {4, 8, 64, 128}) {
    const Tensor<float> rgb(Shape{3, s, s}, 0.5f);
    EXPECT_EQ(forward(m, Var<float>::constant(rgb)).shape(), (Shape{31, s, s}));
  }
  const auto g = forward_grid(m, Var<float>::constant(Tensor<float>(Shape{2, 4, 8, 3}, 0.1f)));
  EXPECT_EQ(g.shape(), (Shape{2, 4, 8, 31}));
}

TEST(Network, RejectsIndivisibleInput) {
  const Model<double> m = build_model<double>(tiny());
  EXPECT_THROW(forward(m, Var<double>::constant(Tensor<double>(Shape{3, 66, 64}))), ShapeError);
  EXPECT_THROW(require_divisible(6, 8), ShapeError);
  EXPECT_NO_THROW(require_divisible(8, 12));
}

TEST(Network, DeterministicForSeed) {
  ModelConfig c = tiny();
  c.seed = 11;
  const Model<double> a = build_model<double>(c), b = build_model<double>(c);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].var.value().storage(), pb[i].var.value().storage());
  }
  Rng rng(1);
  const auto x = Var<double>::constant(uniform({3, 8, 8}, rng, 0, 1));
  NoGradGuard ng;
  EXPECT_EQ(forward(a, x).value().storage(), forward(b, x).value().storage());
  c.seed = 12;
  EXPECT_NE(build_model<double>(c).parameters()[0].var.value().storage(), pa[0].var.value().storage());
}

TEST(Network, ParameterCountMatchesClosedForm) {
  std::vector<ModelConfig> cfgs = {ModelConfig{}, tiny()};
  ModelConfig wide;
  wide.groups = 8;
  wide.blocks_per_stage = 2;
  wide.vss_expand = 2;
  wide.d_skip = false;
  cfgs.push_back(wide);
  for (const auto& c : cfgs) {
    const u64 expected = expected_params(c);
    EXPECT_EQ(build_model<float>(c).parameter_count(), expected);
    EXPECT_EQ(count_params_flops(c, 64, 64).parameter_count, expected);
  }
}

TEST(Network, VariantsRemoveOneBranch) {
  const ModelConfig base;
  EXPECT_EQ(apply_variant(base, Variant::kFull), base);
  EXPECT_FALSE(apply_variant(base, Variant::kV1).spatial);
  EXPECT_FALSE(apply_variant(base, Variant::kV2).frequency);
  EXPECT_FALSE(apply_variant(base, Variant::kV3).spectral);
  const u64 full = build_model<float>(base).parameter_count();
  for (Variant v : {Variant::kV1, Variant::kV2, Variant::kV3}) {
    const ModelConfig c = apply_variant(base, v);
    const u64 n = build_model<float>(c).parameter_count();
    EXPECT_LT(n, full) << variant_name(v);
    EXPECT_EQ(n, expected_params(c)) << variant_name(v);
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_EQ(parse_variant("full"), Variant::kFull);
  EXPECT_THROW(parse_variant("V4"), ConfigError);
}

TEST(Network, FullVariantOutputUnchangedByRebuild) {
  ModelConfig c = tiny();
  const Model<double> a = build_model<double>(c), b = build_variant<double>(c, Variant::kFull);
  Rng rng(2);
  const auto x = Var<double>::constant(uniform({3, 8, 4}, rng, 0, 1));
  NoGradGuard ng;
  EXPECT_EQ(forward(a, x).value().storage(), forward(b, x).value().storage());
}

TEST(Network, ConfigValidation) {
  ModelConfig c;
  c.groups = 0;
  EXPECT_THROW(build_model<float>(c), ConfigError);
  c = ModelConfig{};
  c.base_width = 0;
  EXPECT_THROW(count_params_flops(c, 8, 8), ConfigError);
}

TEST(Cost, FlopsScaleWithPixels) {
  const ModelConfig c;
  const u64 f = count_params_flops(c, 64, 64).flops;
  EXPECT_EQ(count_params_flops(c, 128, 64).flops, 2 * f);
  EXPECT_EQ(count_params_flops(c, 128, 128).flops, 4 * f);
}

TEST(Cost, FlopsIncreaseWithGroups) {
  ModelConfig c;
  u64 prev = 0;
  for (std::size_t g : {1, 2, 4, 8}) {
    c.groups = g;
    const CostReport r = count_params_flops(c, 64, 64);
    EXPECT_GT(r.flops, prev);
    prev = r.flops;
  }
}

TEST(Cost, LayerTableSumsToTotals) {
  const CostReport r = count_params_flops(ModelConfig{}, 64, 64);
  u64 p = 0, f = 0;
  for (const auto& l : r.layers) {
    p += l.params;
    f += l.flops;
  }
  EXPECT_EQ(p, r.parameter_count);
  EXPECT_EQ(f, r.flops);
  EXPECT_EQ(r.layers.front().name, "embed");
  EXPECT_EQ(r.layers.back().name, "head");
}

TEST(Network, EndToEndGradCheck) {
  ModelConfig c = tiny();
  c.state = 4;
  c.out_channels = 3;
  Model<double> m = build_model<double>(c);
  Rng rng(3);
  auto x = Var<double>::leaf(uniform({3, 8, 8}, rng, 0, 1));
  // Sampled coordinates keep the cost bounded on a model of this size.
  expect_gradients([&] { return forward(m, x); }, m.parameters(), {x}, 3);
}
