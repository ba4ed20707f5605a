#include <gtest/gtest.h>

#include <cmath>

#include "m3sr/errors.hpp"
#include "test_util.hpp"

using namespace m3sr;
using namespace m3sr::test;

TEST(Tensor, RowMajorFlatIndex) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) {
        t.at({i, j, k}) = double(100 * i + 10 * j + k);
        EXPECT_EQ(t[(i * 3 + j) * 4 + k], double(100 * i + 10 * j + k));
      }
}

TEST(Tensor, ShapeDataMismatchThrows) {
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 3}).reshaped({4}), ShapeError);
}

TEST(GradCheck, SquareAtThree) {
  Tensor<double> x({1}, 3.0);
  auto f = [](const Var<double>& v) { return sum_squares(v); };
  const GradReport r = grad_check(f, x);
  EXPECT_TRUE(r.passed);
  auto leaf = Var<double>::leaf(x);
  sum_squares(leaf).backward();
  EXPECT_DOUBLE_EQ(leaf.grad()[0], 6.0);
}

TEST(GradCheck, MaeGradientIsSignOverN) {
  Rng rng(11);
  const Tensor<double> target = randn({12}, rng);
  Tensor<double> x = randn({12}, rng);
  auto f = [&](const Var<double>& v) { return mae_loss(v, Var<double>::constant(target)); };
  EXPECT_TRUE(grad_check(f, x).passed);
  auto leaf = Var<double>::leaf(x);
  f(leaf).backward();
  for (std::size_t i = 0; i < 12; ++i) {
    const double expect = (x[i] > target[i] ? 1.0 : -1.0) / 12.0;
    EXPECT_DOUBLE_EQ(leaf.grad()[i], expect);
  }
}

TEST(GradCheck, CorruptedGradientIsCaught) {
  Rng rng(12);
  const Tensor<double> x = randn({6}, rng);
  auto value = [](const Tensor<double>& v) {
    double s = 0;
    for (double e : v.data()) s += e * e * e;
    return s;
  };
  auto gradient = [](const Tensor<double>& v) {
    Tensor<double> g(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = 3 * v[i] * v[i];
    g[4] *= 2;
    return g;
  };
  const GradReport r = grad_check(value, gradient, x);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_index, 4u);
}

TEST(GradCheck, NonFiniteValueNamesCoordinate) {
  Tensor<double> x({3}, 1.0);
  x[2] = 1e-6;  // x - eps leaves the domain of log
  auto value = [](const Tensor<double>& v) { return std::log(v[2]); };
  auto gradient = [](const Tensor<double>& v) { return Tensor<double>(v.shape()); };
  try {
    grad_check(value, gradient, x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("e_2"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, ReportInvariant) {
  Rng rng(13);
  const Tensor<double> x = randn({5}, rng);
  const GradReport r = grad_check([](const Var<double>& v) { return sum(silu(v)); }, x);
  EXPECT_EQ(r.passed, r.max_rel_err <= 1e-4 || r.max_abs_err <= 1e-7);
}

// Elementwise and layout ops.
TEST(OpsGrad, Elementwise) {
  Rng rng(21);
  auto a = leaf({2, 3}, rng), b = leaf({2, 3}, rng), c = leaf({2, 3}, rng), w = leaf({1}, rng);
  expect_gradients([&] { return add(a, b); }, {a, b});
  expect_gradients([&] { return sub(a, b); }, {a, b});
  expect_gradients([&] { return mul(a, b); }, {a, b});
  expect_gradients([&] { return add_n<double>({a, b, c}); }, {a, b, c});
  expect_gradients([&] { return scale(a, 0.3); }, {a});
  expect_gradients([&] { return mul_scalar(w, a); }, {w, a});
  expect_gradients([&] { return silu(a); }, {a});
  expect_gradients([&] { return softplus(a); }, {a});
  expect_gradients([&] { return neg_exp(a); }, {a});
  expect_gradients([&] { return sum_squares(a); }, {a});
}

TEST(OpsGrad, Layout) {
  Rng rng(22);
  auto x = leaf({2, 3, 4}, rng), y = leaf({2, 3, 2}, rng), z = leaf({1, 3, 4}, rng);
  expect_gradients([&] { return reshape(x, {6, 4}); }, {x});
  expect_gradients([&] { return permute(x, {2, 0, 1}); }, {x});
  expect_gradients([&] { return gather_rows(x, {1, 0, 1}); }, {x});
  expect_gradients([&] { return concat_last(x, y); }, {x, y});
  expect_gradients([&] { return concat_rows<double>({x, z}); }, {x, z});
  auto g = leaf({1, 3, 5, 2}, rng);
  expect_gradients([&] { return pad_grid(g, 4, 6); }, {g});
  expect_gradients([&] { return crop_grid(g, 2, 3); }, {g});
  auto chw = leaf({2, 3, 4}, rng);
  expect_gradients([&] { return chw_to_grid(chw); }, {chw});
  expect_gradients([&] { return grid_to_chw(chw_to_grid(chw)); }, {chw});
}

TEST(OpsGrad, LinearAndNorm) {
  Rng rng(23);
  auto x = leaf({2, 3, 4}, rng), w = leaf({5, 4}, rng), b = leaf({5}, rng);
  expect_gradients([&] { return linear(x, w, b); }, {x, w, b});
  expect_gradients([&] { return linear(x, w, Var<double>()); }, {x, w});
  auto gamma = leaf({4}, rng), beta = leaf({4}, rng);
  expect_gradients([&] { return layer_norm(x, gamma, beta); }, {x, gamma, beta});
}

TEST(OpsGrad, Convolutions) {
  Rng rng(24);
  auto x = leaf({2, 5, 4, 3}, rng);
  auto w = leaf({3, 3, 3, 2}, rng), b = leaf({2}, rng);
  expect_gradients([&] { return conv2d(x, w, b, 1, 1); }, {x, w, b});
  expect_gradients([&] { return conv2d(x, w, b, 2, 1); }, {x, w, b});
  auto wt = leaf({2, 2, 3, 2}, rng);
  expect_gradients([&] { return conv_transpose2x2(x, wt, b); }, {x, wt, b});
  auto dw = leaf({3, 3, 3}, rng), db = leaf({3}, rng);
  expect_gradients([&] { return depthwise_conv3x3(x, dw, db); }, {x, dw, db});
  auto seq = leaf({2, 6, 3}, rng), cw = leaf({3, 3}, rng), cb = leaf({3}, rng);
  expect_gradients([&] { return causal_depthwise_conv1d(seq, cw, cb); }, {seq, cw, cb});
}

TEST(OpsGrad, HaarAndLosses) {
  Rng rng(25);
  auto x = leaf({2, 4, 6, 3}, rng);
  expect_gradients([&] { return haar_dwt(x); }, {x});
  auto bands = leaf({8, 2, 3, 3}, rng);
  expect_gradients([&] { return haar_idwt(bands); }, {bands});
  const Tensor<double> target = randn({2, 4, 6, 3}, rng);
  expect_gradients([&] { return mae_loss(x, Var<double>::constant(target)); }, {x});
}

TEST(OpsGrad, SelectiveScan) {
  Rng rng(26);
  const std::size_t s = 2, l = 7, d = 3, n = 4;
  auto u = leaf({s, l, d}, rng);
  auto delta = Var<double>::leaf(uniform({s, l, d}, rng, 0.05, 0.8));
  auto a = Var<double>::leaf(uniform({d, n}, rng, -2.0, -0.2));
  auto b = leaf({s, l, n}, rng), c = leaf({s, l, n}, rng), dskip = leaf({d}, rng);
  expect_gradients([&] { return selective_scan(u, delta, a, b, c, dskip); }, {u, delta, a, b, c, dskip});
  expect_gradients([&] { return selective_scan(u, delta, a, b, c, Var<double>()); }, {u, delta, a, b, c});
}

// Forward oracles written as plain loops.
TEST(OpsForward, Conv2dMatchesDirectSum) {
  Rng rng(31);
  const std::size_t h = 5, w = 6, ci = 2, co = 3, k = 3;
  const Tensor<double> x = randn({1, h, w, ci}, rng), wt = randn({k, k, ci, co}, rng), b = randn({co}, rng);
  for (std::size_t stride : {1, 2}) {
    const Tensor<double> y =
        conv2d(Var<double>::constant(x), Var<double>::constant(wt), Var<double>::constant(b), stride, 1).value();
    const std::size_t oh = (h + 2 - k) / stride + 1, ow = (w + 2 - k) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{1, oh, ow, co}));
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = b[o];
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(oy * stride + ky) - 1, ix = long(ox * stride + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
              for (std::size_t c = 0; c < ci; ++c) acc += x[(iy * w + ix) * ci + c] * wt[((ky * k + kx) * ci + c) * co + o];
            }
          EXPECT_NEAR(y[(oy * ow + ox) * co + o], acc, 1e-12);
        }
  }
}

TEST(OpsForward, TransposedConvScattersBlocks) {
  Rng rng(32);
  const std::size_t h = 2, w = 3, ci = 2, co = 2;
  const Tensor<double> x = randn({1, h, w, ci}, rng), wt = randn({2, 2, ci, co}, rng), b = randn({co}, rng);
  const Tensor<double> y =
      conv_transpose2x2(Var<double>::constant(x), Var<double>::constant(wt), Var<double>::constant(b)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2 * h, 2 * w, co}));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t bb = 0; bb < 2; ++bb)
          for (std::size_t o = 0; o < co; ++o) {
            double acc = b[o];
            for (std::size_t c = 0; c < ci; ++c) acc += x[(i * w + j) * ci + c] * wt[((a * 2 + bb) * ci + c) * co + o];
            EXPECT_NEAR(y[((2 * i + a) * 2 * w + 2 * j + bb) * co + o], acc, 1e-12);
          }
}

TEST(OpsForward, DepthwiseAndCausalConv) {
  Rng rng(33);
  const Tensor<double> x = randn({1, 3, 4, 2}, rng), wt = randn({3, 3, 2}, rng), b = randn({2}, rng);
  const Tensor<double> y =
      depthwise_conv3x3(Var<double>::constant(x), Var<double>::constant(wt), Var<double>::constant(b)).value();
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 2; ++c) {
        double acc = b[c];
        for (long di = -1; di <= 1; ++di)
          for (long dj = -1; dj <= 1; ++dj) {
            if (i + di < 0 || i + di >= 3 || j + dj < 0 || j + dj >= 4) continue;
            acc += wt[((di + 1) * 3 + (dj + 1)) * 2 + c] * x[((i + di) * 4 + (j + dj)) * 2 + c];
          }
        EXPECT_NEAR(y[(i * 4 + j) * 2 + c], acc, 1e-12);
      }

  const Tensor<double> s = randn({1, 5, 2}, rng), cw = randn({2, 3}, rng), cb = randn({2}, rng);
  const Tensor<double> z =
      causal_depthwise_conv1d(Var<double>::constant(s), Var<double>::constant(cw), Var<double>::constant(cb))
          .value();
  for (long t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = cb[c];
      for (long k = 0; k < 3; ++k) {
        const long src = t - 2 + k;
        if (src >= 0) acc += cw[c * 3 + k] * s[src * 2 + c];
      }
      EXPECT_NEAR(z[t * 2 + c], acc, 1e-12);
    }
}

TEST(OpsForward, LayerNormStandardizesEveryToken) {
  Rng rng(34);
  const std::size_t c = 7;
  const Tensor<double> x = randn({4, 3, c}, rng, 3.0);
  const Tensor<double> y = layer_norm(Var<double>::constant(x), Var<double>::constant(Tensor<double>({c}, 1.0)),
                                      Var<double>::constant(Tensor<double>({c})), 0.0)
                               .value();
  for (std::size_t t = 0; t < 12; ++t) {
    double m = 0, v = 0;
    for (std::size_t k = 0; k < c; ++k) m += y[t * c + k];
    m /= c;
    for (std::size_t k = 0; k < c; ++k) v += (y[t * c + k] - m) * (y[t * c + k] - m);
    v /= c;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(OpsForward, ShapeErrors) {
  Rng rng(35);
  auto a = leaf({2, 3}, rng), b = leaf({3, 2}, rng);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(linear(a, leaf({4, 2}, rng), Var<double>()), ShapeError);
  EXPECT_THROW(haar_dwt(leaf({1, 3, 4, 1}, rng)), ShapeError);
  EXPECT_THROW(mae_loss(a, b), ShapeError);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Rng rng(36);
  auto x = leaf({3}, rng);
  NoGradGuard guard;
  const Var<double> y = silu(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, GradientsAccumulateOverUses) {
  Tensor<double> v({1}, 2.0);
  auto x = Var<double>::leaf(v);
  add(mul(x, x), x).backward();  // d/dx (x^2 + x) = 2x + 1
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}
