#include "m3sr/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "m3sr/errors.hpp"

namespace m3sr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T, typename Fn, typename Dfn>
Var<T> unary(const Var<T>& x, Fn fn, Dfn dfn) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(xv[i]);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, dfn](Node<T>& self) {
    auto* gx = grad_sink(xn);
    if (!gx) return;
    const auto& xv = xn->value;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * dfn(xv[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (const auto& p : {an, bn}) {
      if (auto* g = grad_sink(p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (auto* g = grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_sink(bn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (auto* g = grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bn->value[i];
    }
    if (auto* g = grad_sink(bn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  Tensor<T> out(terms.front().shape());
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& t : terms) {
    require_same_shape(out.shape(), t.shape(), "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.value()[i];
    nodes.push_back(t.node());
  }
  return make_result<T>(std::move(out), terms, [nodes](Node<T>& self) {
    for (const auto& p : nodes) {
      if (auto* g = grad_sink(p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary<T>(
      x, [factor](T v) { return factor * v; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& w, const Var<T>& x) {
  if (w.size() != 1) throw ShapeError("mul_scalar: weight must hold one element");
  const T wv = w.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wv * x.value()[i];
  auto wn = w.node(), xn = x.node();
  return make_result<T>(std::move(out), {w, x}, [wn, xn](Node<T>& self) {
    if (auto* g = grad_sink(wn)) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->value[i];
      (*g)[0] += acc;
    }
    if (auto* g = grad_sink(xn)) {
      const T wv = wn->value[0];
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * wv;
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v * sigmoid(v); },
      [](T v, T) {
        const T s = sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) { return sigmoid(v); });
}

template <typename T>
Var<T> neg_exp(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return -std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

namespace {

// For each output flat index, the source flat index under `axes`.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes,
                                         Shape& out_shape) {
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch");
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  out_shape.assign(rank, 0);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || seen[axes[i]]) throw ShapeError("permute: invalid axes");
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    map[o] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes) {
  Shape out_shape;
  auto map = permutation_map(x.shape(), axes, out_shape);
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x.value()[map[o]];
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, map = std::move(map)](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t o = 0; o < map.size(); ++o) (*g)[map[o]] += self.grad[o];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index) {
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.size() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  Tensor<T> out(out_shape);
  const T* src = x.value().data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(src + index[i] * width, width, out.data().data() + i * width);
  }
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, index, width](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t i = 0; i < index.size(); ++i) {
        T* dst = g->data().data() + index[i] * width;
        const T* gy = self.grad.data().data() + i * width;
        for (std::size_t k = 0; k < width; ++k) dst[k] += gy[k];
      }
    }
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: leading shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t ca = sa.back(), cb = sb.back(), rows = a.size() / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor<T> out(so);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(b.value().data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn, ca, cb, rows](Node<T>& self) {
    const T* gy = self.grad.data().data();
    if (auto* g = grad_sink(an)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < ca; ++k) (*g)[r * ca + k] += gy[r * (ca + cb) + k];
    }
    if (auto* g = grad_sink(bn)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < cb; ++k) (*g)[r * cb + k] += gy[r * (ca + cb) + ca + k];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape so = parts.front().shape();
  std::size_t rows = 0;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) {
    if (p.shape().size() != so.size() || !std::equal(so.begin() + 1, so.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows: trailing shape mismatch " + shape_str(so) + " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    nodes.push_back(p.node());
  }
  so[0] = rows;
  Tensor<T> out(so);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
    off += p.size();
  }
  return make_result<T>(std::move(out), parts, [nodes](Node<T>& self) {
    std::size_t off = 0;
    for (const auto& p : nodes) {
      const std::size_t n = p->value.size();
      if (auto* g = grad_sink(p)) {
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (weight.shape().size() != 2) throw ShapeError("linear: weight must be (out, in)");
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.shape().back() != in_f) {
    throw ShapeError("linear: input width " + std::to_string(x.shape().back()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  if (bias.defined() && bias.size() != out_f) throw ShapeError("linear: bias width mismatch");
  const std::size_t rows = x.size() / in_f;
  Shape so = x.shape();
  so.back() = out_f;
  Tensor<T> out(so);
  {
    ConstMapMat<T> xm(x.value().data().data(), rows, in_f);
    ConstMapMat<T> wm(weight.value().data().data(), out_f, in_f);
    MapMat<T> ym(out.data().data(), rows, out_f);
    ym.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.value().data().data(), out_f);
      ym.rowwise() += bv;
    }
  }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x, weight, bias}, [xn, wn, bn, rows, in_f, out_f](Node<T>& self) {
    ConstMapMat<T> gy(self.grad.data().data(), rows, out_f);
    if (auto* g = grad_sink(xn)) {
      MapMat<T> gx(g->data().data(), rows, in_f);
      ConstMapMat<T> wm(wn->value.data().data(), out_f, in_f);
      gx.noalias() += gy * wm;
    }
    if (auto* g = grad_sink(wn)) {
      MapMat<T> gw(g->data().data(), out_f, in_f);
      ConstMapMat<T> xm(xn->value.data().data(), rows, in_f);
      gw.noalias() += gy.transpose() * xm;
    }
    if (auto* g = grad_sink(bn)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(g->data().data(), out_f);
      gb += gy.colwise().sum();
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm: affine width mismatch");
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  AlignedVector<T> rstd(rows);
  const T* xv = x.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * c;
    T mean = 0;
    for (std::size_t k = 0; k < c; ++k) mean += row[k];
    mean /= T(c);
    T var = 0;
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= T(c);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t k = 0; k < c; ++k) {
      const T h = (row[k] - mean) * rs;
      xhat[r * c + k] = h;
      out[r * c + k] = h * gamma.value()[k] + beta.value()[k];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), c, rows](Node<T>& self) {
    const T* gy = self.grad.data().data();
    auto* gg = grad_sink(gn);
    auto* gb = grad_sink(bn);
    auto* gx = grad_sink(xn);
    AlignedVector<T> dxhat(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = gy + r * c;
      const T* h = xhat.data().data() + r * c;
      if (gg)
        for (std::size_t k = 0; k < c; ++k) (*gg)[k] += g[k] * h[k];
      if (gb)
        for (std::size_t k = 0; k < c; ++k) (*gb)[k] += g[k];
      if (gx) {
        T m1 = 0, m2 = 0;
        for (std::size_t k = 0; k < c; ++k) {
          dxhat[k] = g[k] * gn->value[k];
          m1 += dxhat[k];
          m2 += dxhat[k] * h[k];
        }
        m1 /= T(c);
        m2 /= T(c);
        for (std::size_t k = 0; k < c; ++k) (*gx)[r * c + k] += rstd[r] * (dxhat[k] - m1 - h[k] * m2);
      }
    }
  });
}

namespace {

// Haar butterfly on one 2x2 block; the matrix is symmetric and involutory,
// so the same routine is analysis, synthesis and both adjoints.
//   (LL, HL, LH, HH) = H (p00, p01, p10, p11)
template <typename T>
inline void haar4(T p00, T p01, T p10, T p11, T& ll, T& hl, T& lh, T& hh) {
  ll = T(0.5) * (p00 + p01 + p10 + p11);
  hl = T(0.5) * (p00 - p01 + p10 - p11);
  lh = T(0.5) * (p00 + p01 - p10 - p11);
  hh = T(0.5) * (p00 - p01 - p10 + p11);
}

// Analysis: grid (B, H, W, C) -> bands (4B, H/2, W/2, C), band order LL, LH, HL, HH.
template <typename T>
void haar_forward(const T* grid, T* bands, std::size_t nb, std::size_t h, std::size_t w, std::size_t c) {
  const std::size_t hh2 = h / 2, ww2 = w / 2, band = nb * hh2 * ww2 * c;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < hh2; ++i)
      for (std::size_t j = 0; j < ww2; ++j) {
        const T* r0 = grid + ((b * h + 2 * i) * w + 2 * j) * c;
        const T* r1 = r0 + w * c;
        const std::size_t o = ((b * hh2 + i) * ww2 + j) * c;
        for (std::size_t k = 0; k < c; ++k) {
          T ll, hl, lh, hh;
          haar4(r0[k], r0[c + k], r1[k], r1[c + k], ll, hl, lh, hh);
          bands[o + k] += ll;
          bands[band + o + k] += lh;
          bands[2 * band + o + k] += hl;
          bands[3 * band + o + k] += hh;
        }
      }
}

// Synthesis: bands (4B, h, w, C) -> grid (B, 2h, 2w, C), accumulating.
template <typename T>
void haar_inverse(const T* bands, T* grid, std::size_t nb, std::size_t hh2, std::size_t ww2, std::size_t c) {
  const std::size_t h = 2 * hh2, w = 2 * ww2, band = nb * hh2 * ww2 * c;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < hh2; ++i)
      for (std::size_t j = 0; j < ww2; ++j) {
        T* r0 = grid + ((b * h + 2 * i) * w + 2 * j) * c;
        T* r1 = r0 + w * c;
        const std::size_t o = ((b * hh2 + i) * ww2 + j) * c;
        for (std::size_t k = 0; k < c; ++k) {
          T p00, p01, p10, p11;
          haar4(bands[o + k], bands[2 * band + o + k], bands[band + o + k], bands[3 * band + o + k], p00,
                p01, p10, p11);
          r0[k] += p00;
          r0[c + k] += p01;
          r1[k] += p10;
          r1[c + k] += p11;
        }
      }
}

}  // namespace

template <typename T>
Var<T> haar_dwt(const Var<T>& x) {
  if (x.shape().size() != 4) throw ShapeError("haar_dwt: expected (B, H, W, C)");
  const std::size_t nb = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 || w % 2) {
    throw ShapeError("haar_dwt: spatial extents must be even, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  Tensor<T> out({4 * nb, h / 2, w / 2, c});
  haar_forward(x.value().data().data(), out.data().data(), nb, h, w, c);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, nb, h, w, c](Node<T>& self) {
    if (auto* g = grad_sink(xn)) haar_inverse(self.grad.data().data(), g->data().data(), nb, h / 2, w / 2, c);
  });
}

template <typename T>
Var<T> haar_idwt(const Var<T>& x) {
  if (x.shape().size() != 4 || x.dim(0) % 4) throw ShapeError("haar_idwt: expected (4B, h, w, C)");
  const std::size_t nb = x.dim(0) / 4, h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor<T> out({nb, 2 * h, 2 * w, c});
  haar_inverse(x.value().data().data(), out.data().data(), nb, h, w, c);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, nb, h, w, c](Node<T>& self) {
    if (auto* g = grad_sink(xn)) haar_forward(self.grad.data().data(), g->data().data(), nb, 2 * h, 2 * w, c);
  });
}

template <typename T>
Var<T> pad_grid(const Var<T>& x, std::size_t h2, std::size_t w2) {
  const std::size_t nb = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h2 < h || w2 < w) throw ShapeError("pad_grid: target smaller than input");
  Tensor<T> out({nb, h2, w2, c});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x.value().data().data() + ((b * h + i) * w) * c, w * c,
                  out.data().data() + ((b * h2 + i) * w2) * c);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, nb, h, w, c, h2, w2](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t k = 0; k < w * c; ++k)
            (*g)[((b * h + i) * w) * c + k] += self.grad[((b * h2 + i) * w2) * c + k];
    }
  });
}

template <typename T>
Var<T> crop_grid(const Var<T>& x, std::size_t h, std::size_t w) {
  const std::size_t nb = x.dim(0), h2 = x.dim(1), w2 = x.dim(2), c = x.dim(3);
  if (h > h2 || w > w2) throw ShapeError("crop_grid: target larger than input");
  Tensor<T> out({nb, h, w, c});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x.value().data().data() + ((b * h2 + i) * w2) * c, w * c,
                  out.data().data() + ((b * h + i) * w) * c);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, nb, h, w, c, h2, w2](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t k = 0; k < w * c; ++k)
            (*g)[((b * h2 + i) * w2) * c + k] += self.grad[((b * h + i) * w) * c + k];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  auto xn = x.node();
  return make_result<T>(Tensor<T>({1}, acc), {x}, [xn](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0];
    }
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v * v;
  auto xn = x.node();
  return make_result<T>(Tensor<T>({1}, acc), {x}, [xn](Node<T>& self) {
    if (auto* g = grad_sink(xn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += T(2) * xn->value[i] * self.grad[0];
    }
  });
}

template <typename T>
Var<T> mae_loss(const Var<T>& prediction, const Var<T>& target) {
  require_same_shape(prediction.shape(), target.shape(), "mae_loss");
  const std::size_t n = prediction.size();
  // Accumulate in double so the float loss is not dominated by summation error.
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(double(prediction.value()[i]) - double(target.value()[i]));
  auto pn = prediction.node(), tn = target.node();
  return make_result<T>(Tensor<T>({1}, T(acc / double(n))), {prediction, target}, [pn, tn, n](Node<T>& self) {
    const T s = self.grad[0] / T(n);
    auto* gp = grad_sink(pn);
    auto* gt = grad_sink(tn);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = pn->value[i] - tn->value[i];
      const T sg = d > 0 ? s : (d < 0 ? -s : T(0));
      if (gp) (*gp)[i] += sg;
      if (gt) (*gt)[i] -= sg;
    }
  });
}

template <typename T>
Var<T> chw_to_grid(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("expected a (C, H, W) feature map, got " + shape_str(x.shape()));
  auto p = permute(x, {1, 2, 0});
  return reshape(p, {1, x.dim(1), x.dim(2), x.dim(0)});
}

template <typename T>
Var<T> grid_to_chw(const Var<T>& x) {
  if (x.shape().size() != 4 || x.dim(0) != 1) throw ShapeError("expected a (1, H, W, C) grid, got " + shape_str(x.shape()));
  auto r = reshape(x, {x.dim(1), x.dim(2), x.dim(3)});
  return permute(r, {2, 0, 1});
}

#define M3SR_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> add_n(const std::vector<Var<T>>&);                                         \
  template Var<T> scale(const Var<T>&, T);                                                   \
  template Var<T> mul_scalar(const Var<T>&, const Var<T>&);                                  \
  template Var<T> silu(const Var<T>&);                                                       \
  template Var<T> softplus(const Var<T>&);                                                   \
  template Var<T> neg_exp(const Var<T>&);                                                    \
  template Var<T> reshape(const Var<T>&, Shape);                                             \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                   \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&);               \
  template Var<T> concat_last(const Var<T>&, const Var<T>&);                                 \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
  template Var<T> haar_dwt(const Var<T>&);                                                   \
  template Var<T> haar_idwt(const Var<T>&);                                                  \
  template Var<T> pad_grid(const Var<T>&, std::size_t, std::size_t);                         \
  template Var<T> crop_grid(const Var<T>&, std::size_t, std::size_t);                        \
  template Var<T> sum(const Var<T>&);                                                        \
  template Var<T> sum_squares(const Var<T>&);                                                \
  template Var<T> mae_loss(const Var<T>&, const Var<T>&);                                    \
  template Var<T> chw_to_grid(const Var<T>&);                                                \
  template Var<T> grid_to_chw(const Var<T>&);

M3SR_INSTANTIATE_OPS(float)
M3SR_INSTANTIATE_OPS(double)

}  // namespace m3sr
