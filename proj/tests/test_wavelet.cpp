#include <gtest/gtest.h>

#include "m3sr/errors.hpp"
#include "m3sr/wavelet.hpp"
#include "test_util.hpp"

using namespace m3sr;
using namespace m3sr::test;

namespace {

Var<double> map(Shape s, std::vector<double> v) { return Var<double>::constant(Tensor<double>(std::move(s), std::move(v))); }

double energy(const Var<double>& v) {
  double e = 0;
  for (double x : v.value().data()) e += x * x;
  return e;
}

}  // namespace

TEST(Dwt, ConstantBlock) {
  const SubBands<double> s = dwt2(map({1, 2, 2}, {1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(s.ll.value()[0], 2.0);
  EXPECT_DOUBLE_EQ(s.lh.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(s.hl.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(s.hh.value()[0], 0.0);
}

TEST(Dwt, MatchesHaarMatrix) {
  // Rows of the orthonormal 4x4 Haar analysis matrix over (p00, p01, p10, p11).
  const double m[4][4] = {{0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, -0.5, -0.5}, {0.5, -0.5, 0.5, -0.5}, {0.5, -0.5, -0.5, 0.5}};
  const double p[4] = {1, 2, 3, 4};
  double ref[4] = {};
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) ref[r] += m[r][k] * p[k];
  const SubBands<double> s = dwt2(map({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(s.ll.value()[0], ref[0]);
  EXPECT_DOUBLE_EQ(s.lh.value()[0], ref[1]);
  EXPECT_DOUBLE_EQ(s.hl.value()[0], ref[2]);
  EXPECT_DOUBLE_EQ(s.hh.value()[0], ref[3]);
  EXPECT_DOUBLE_EQ(ref[0], 5.0);
  EXPECT_DOUBLE_EQ(ref[2], -1.0);
  EXPECT_DOUBLE_EQ(ref[1], -2.0);
  EXPECT_DOUBLE_EQ(ref[3], 0.0);
}

TEST(Idwt, InverseExamples) {
  SubBands<double> s{map({1, 1, 1}, {2}), map({1, 1, 1}, {0}), map({1, 1, 1}, {0}), map({1, 1, 1}, {0})};
  EXPECT_EQ(idwt2(s).value().storage(), (AlignedVector<double>{1, 1, 1, 1}));
  SubBands<double> z{map({2, 2, 3}, std::vector<double>(12)), map({2, 2, 3}, std::vector<double>(12)),
                     map({2, 2, 3}, std::vector<double>(12)), map({2, 2, 3}, std::vector<double>(12))};
  const Var<double> back = idwt2(z);
  EXPECT_EQ(back.shape(), (Shape{2, 4, 6}));
  for (double v : back.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Dwt, PerfectReconstructionAndEnergy) {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t c = 1 + rng.below(8), h = 2 * (1 + rng.below(16)), w = 2 * (1 + rng.below(16));
    const auto f = Var<double>::constant(randn({c, h, w}, rng));
    const SubBands<double> s = dwt2(f);
    for (const auto* b : {&s.ll, &s.lh, &s.hl, &s.hh}) EXPECT_EQ(b->shape(), (Shape{c, h / 2, w / 2}));
    EXPECT_LT(max_diff(idwt2(s).value(), f.value()), 1e-12);
    const double e = energy(s.ll) + energy(s.lh) + energy(s.hl) + energy(s.hh);
    EXPECT_NEAR(e, energy(f), 1e-9 * energy(f));
  }
}

TEST(Dwt, TwoSidedInverse) {
  Rng rng(2);
  SubBands<double> s;
  for (auto* b : {&s.ll, &s.lh, &s.hl, &s.hh}) *b = Var<double>::constant(randn({3, 4, 5}, rng));
  const SubBands<double> again = dwt2(idwt2(s));
  EXPECT_LT(max_diff(again.ll.value(), s.ll.value()), 1e-12);
  EXPECT_LT(max_diff(again.lh.value(), s.lh.value()), 1e-12);
  EXPECT_LT(max_diff(again.hl.value(), s.hl.value()), 1e-12);
  EXPECT_LT(max_diff(again.hh.value(), s.hh.value()), 1e-12);
}

TEST(Dwt, Linear) {
  Rng rng(3);
  const Tensor<double> f = randn({2, 6, 4}, rng), g = randn({2, 6, 4}, rng);
  const double a = 0.7, b = -1.3;
  Tensor<double> mix(f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) mix[i] = a * f[i] + b * g[i];
  const SubBands<double> sf = dwt2(Var<double>::constant(f)), sg = dwt2(Var<double>::constant(g));
  const SubBands<double> sm = dwt2(Var<double>::constant(mix));
  for (std::size_t i = 0; i < sm.ll.size(); ++i) {
    EXPECT_NEAR(sm.ll.value()[i], a * sf.ll.value()[i] + b * sg.ll.value()[i], 1e-12);
    EXPECT_NEAR(sm.hh.value()[i], a * sf.hh.value()[i] + b * sg.hh.value()[i], 1e-12);
  }
}

TEST(Dwt, Errors) {
  Rng rng(4);
  EXPECT_THROW(dwt2(Var<double>::constant(randn({1, 3, 4}, rng))), ShapeError);
  EXPECT_THROW(dwt2(Var<double>::constant(randn({1, 4, 5}, rng))), ShapeError);
  SubBands<double> s;
  for (auto* b : {&s.ll, &s.lh, &s.hl}) *b = Var<double>::constant(randn({1, 2, 2}, rng));
  s.hh = Var<double>::constant(randn({1, 2, 3}, rng));
  EXPECT_THROW(idwt2(s), ShapeError);
}

TEST(Dwt, GradCheck) {
  Rng rng(5);
  auto f = leaf({2, 4, 4}, rng);
  expect_gradients(
      [&] {
        const SubBands<double> s = dwt2(f);
        return add_n<double>({s.ll, scale(s.lh, 2.0), scale(s.hl, -1.0), scale(s.hh, 0.5)});
      },
      {f});
  SubBands<double> s;
  for (auto* b : {&s.ll, &s.lh, &s.hl, &s.hh}) *b = leaf({2, 2, 3}, rng);
  expect_gradients([&] { return idwt2(s); }, {s.ll, s.lh, s.hl, s.hh});
}
