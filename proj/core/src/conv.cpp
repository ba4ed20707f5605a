#include <Eigen/Core>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t nb, h, w, ci, co, k, stride, pad, ho, wo;
  std::size_t rows() const { return nb * ho * wo; }
  std::size_t patch() const { return k * k * ci; }
};

template <typename T>
void im2col(const T* x, T* col, const ConvGeometry& g) {
  for (std::size_t b = 0; b < g.nb; ++b)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        T* dst = col + ((b * g.ho + oy) * g.wo + ox) * g.patch();
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = long(oy * g.stride + ky) - long(g.pad);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = long(ox * g.stride + kx) - long(g.pad);
            T* d = dst + (ky * g.k + kx) * g.ci;
            if (iy < 0 || ix < 0 || iy >= long(g.h) || ix >= long(g.w)) {
              std::fill_n(d, g.ci, T(0));
            } else {
              std::copy_n(x + ((b * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.ci, g.ci, d);
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* col, T* x, const ConvGeometry& g) {
  for (std::size_t b = 0; b < g.nb; ++b)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const T* src = col + ((b * g.ho + oy) * g.wo + ox) * g.patch();
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = long(oy * g.stride + ky) - long(g.pad);
          if (iy < 0 || iy >= long(g.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = long(ox * g.stride + kx) - long(g.pad);
            if (ix < 0 || ix >= long(g.w)) continue;
            const T* s = src + (ky * g.k + kx) * g.ci;
            T* d = x + ((b * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.ci;
            for (std::size_t c = 0; c < g.ci; ++c) d[c] += s[c];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  if (x.shape().size() != 4) throw ShapeError("conv2d: expected (B, H, W, C), got " + shape_str(x.shape()));
  if (weight.shape().size() != 4 || weight.dim(0) != weight.dim(1) || weight.dim(2) != x.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(3), weight.dim(0), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) throw ShapeError("conv2d: input smaller than kernel");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (bias.defined() && bias.size() != g.co) throw ShapeError("conv2d: bias width mismatch");

  Tensor<T> col({g.rows(), g.patch()});
  im2col(x.value().data().data(), col.data().data(), g);
  Tensor<T> out({g.nb, g.ho, g.wo, g.co});
  {
    ConstMapMat<T> cm(col.data().data(), g.rows(), g.patch());
    ConstMapMat<T> wm(weight.value().data().data(), g.patch(), g.co);
    MapMat<T> ym(out.data().data(), g.rows(), g.co);
    ym.noalias() = cm * wm;
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.value().data().data(), g.co);
      ym.rowwise() += bv;
    }
  }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x, weight, bias}, [xn, wn, bn, g, col = std::move(col)](Node<T>& self) {
    ConstMapMat<T> gy(self.grad.data().data(), g.rows(), g.co);
    if (auto* gw = grad_sink(wn)) {
      ConstMapMat<T> cm(col.data().data(), g.rows(), g.patch());
      MapMat<T> gwm(gw->data().data(), g.patch(), g.co);
      gwm.noalias() += cm.transpose() * gy;
    }
    if (auto* gb = grad_sink(bn)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gbv(gb->data().data(), g.co);
      gbv += gy.colwise().sum();
    }
    if (auto* gx = grad_sink(xn)) {
      ConstMapMat<T> wm(wn->value.data().data(), g.patch(), g.co);
      RowMat<T> gcol = gy * wm.transpose();
      col2im(gcol.data(), gx->data().data(), g);
    }
  });
}

template <typename T>
Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.shape().size() != 4) throw ShapeError("conv_transpose2x2: expected (B, H, W, C)");
  if (weight.shape() != Shape{2, 2, x.dim(3), weight.dim(3)}) {
    throw ShapeError("conv_transpose2x2: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t nb = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3), co = weight.dim(3);
  if (bias.defined() && bias.size() != co) throw ShapeError("conv_transpose2x2: bias width mismatch");
  const std::size_t rows = nb * h * w;
  // Weight viewed as (Ci, 4 * Co) with column order (ky, kx, co).
  auto pack = [ci, co](const T* wsrc) {
    RowMat<T> wp(ci, 4 * co);
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t o = 0; o < co; ++o) wp(c, q * co + o) = wsrc[(q * ci + c) * co + o];
    return wp;
  };
  RowMat<T> wp = pack(weight.value().data().data());
  ConstMapMat<T> xm(x.value().data().data(), rows, ci);
  RowMat<T> z = xm * wp;
  Tensor<T> out({nb, 2 * h, 2 * w, co});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const T* zr = z.data() + ((b * h + y) * w + xx) * 4 * co;
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) {
            T* d = out.data().data() + ((b * 2 * h + 2 * y + ky) * 2 * w + 2 * xx + kx) * co;
            const T* s = zr + (ky * 2 + kx) * co;
            for (std::size_t o = 0; o < co; ++o) d[o] = s[o] + (bias.defined() ? bias.value()[o] : T(0));
          }
      }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    RowMat<T> gz(rows, 4 * co);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          T* zr = gz.data() + ((b * h + y) * w + xx) * 4 * co;
          for (std::size_t ky = 0; ky < 2; ++ky)
            for (std::size_t kx = 0; kx < 2; ++kx)
              std::copy_n(self.grad.data().data() + ((b * 2 * h + 2 * y + ky) * 2 * w + 2 * xx + kx) * co, co,
                          zr + (ky * 2 + kx) * co);
        }
    if (auto* gb = grad_sink(bn)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t q = 0; q < 4; ++q)
          for (std::size_t o = 0; o < co; ++o) (*gb)[o] += gz(r, q * co + o);
    }
    if (auto* gw = grad_sink(wn)) {
      ConstMapMat<T> xm(xn->value.data().data(), rows, ci);
      RowMat<T> gwp = xm.transpose() * gz;
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t o = 0; o < co; ++o) (*gw)[(q * ci + c) * co + o] += gwp(c, q * co + o);
    }
    if (auto* gx = grad_sink(xn)) {
      RowMat<T> wp = pack(wn->value.data().data());
      MapMat<T> gxm(gx->data().data(), rows, ci);
      gxm.noalias() += gz * wp.transpose();
    }
  });
}

template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.shape().size() != 4) throw ShapeError("depthwise_conv3x3: expected (B, H, W, C)");
  const std::size_t nb = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (weight.shape() != Shape{3, 3, c}) throw ShapeError("depthwise_conv3x3: weight must be (3, 3, C)");
  if (bias.defined() && bias.size() != c) throw ShapeError("depthwise_conv3x3: bias width mismatch");
  Tensor<T> out(x.shape());
  const T* xv = x.value().data().data();
  const T* wv = weight.value().data().data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        T* o = out.data().data() + ((b * h + y) * w + xx) * c;
        if (bias.defined()) std::copy_n(bias.value().data().data(), c, o);
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const long iy = long(y + ky) - 1;
          if (iy < 0 || iy >= long(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long ix = long(xx + kx) - 1;
            if (ix < 0 || ix >= long(w)) continue;
            const T* s = xv + ((b * h + std::size_t(iy)) * w + std::size_t(ix)) * c;
            const T* k = wv + (ky * 3 + kx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += k[ch] * s[ch];
          }
        }
      }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto* gx = grad_sink(xn);
    auto* gw = grad_sink(wn);
    auto* gb = grad_sink(bn);
    const T* xv = xn->value.data().data();
    const T* wv = wn->value.data().data();
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T* gy = self.grad.data().data() + ((b * h + y) * w + xx) * c;
          if (gb)
            for (std::size_t ch = 0; ch < c; ++ch) (*gb)[ch] += gy[ch];
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long iy = long(y + ky) - 1;
            if (iy < 0 || iy >= long(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long ix = long(xx + kx) - 1;
              if (ix < 0 || ix >= long(w)) continue;
              const std::size_t off = ((b * h + std::size_t(iy)) * w + std::size_t(ix)) * c;
              const std::size_t koff = (ky * 3 + kx) * c;
              if (gx)
                for (std::size_t ch = 0; ch < c; ++ch) (*gx)[off + ch] += wv[koff + ch] * gy[ch];
              if (gw)
                for (std::size_t ch = 0; ch < c; ++ch) (*gw)[koff + ch] += xv[off + ch] * gy[ch];
            }
          }
        }
  });
}

template <typename T>
Var<T> causal_depthwise_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.shape().size() != 3) throw ShapeError("causal_depthwise_conv1d: expected (S, L, D)");
  const std::size_t ns = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (weight.shape().size() != 2 || weight.dim(0) != d) {
    throw ShapeError("causal_depthwise_conv1d: weight must be (D, K)");
  }
  if (bias.defined() && bias.size() != d) throw ShapeError("causal_depthwise_conv1d: bias width mismatch");
  const std::size_t k = weight.dim(1);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data().data();
  const T* wv = weight.value().data().data();
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t ch = 0; ch < d; ++ch) {
        T acc = bias.defined() ? bias.value()[ch] : T(0);
        for (std::size_t j = 0; j < k; ++j) {
          const long src = long(t) - long(k - 1) + long(j);
          if (src >= 0) acc += wv[ch * k + j] * xv[(s * len + std::size_t(src)) * d + ch];
        }
        out[(s * len + t) * d + ch] = acc;
      }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto* gx = grad_sink(xn);
    auto* gw = grad_sink(wn);
    auto* gb = grad_sink(bn);
    const T* xv = xn->value.data().data();
    const T* wv = wn->value.data().data();
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t ch = 0; ch < d; ++ch) {
          const T gy = self.grad[(s * len + t) * d + ch];
          if (gb) (*gb)[ch] += gy;
          for (std::size_t j = 0; j < k; ++j) {
            const long src = long(t) - long(k - 1) + long(j);
            if (src < 0) continue;
            const std::size_t off = (s * len + std::size_t(src)) * d + ch;
            if (gx) (*gx)[off] += wv[ch * k + j] * gy;
            if (gw) (*gw)[ch * k + j] += xv[off] * gy;
          }
        }
  });
}

#define M3SR_INSTANTIATE_CONV(T)                                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> conv_transpose2x2(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> depthwise_conv3x3(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> causal_depthwise_conv1d(const Var<T>&, const Var<T>&, const Var<T>&);

M3SR_INSTANTIATE_CONV(float)
M3SR_INSTANTIATE_CONV(double)

}  // namespace m3sr
