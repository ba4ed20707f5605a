#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

namespace {

// Cephes-style expf: range reduction by ln 2 and a degree-6 polynomial.
// Branch-free so the per-state loops vectorize; ~2 ulp on [-87, 88].
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  const float shifter = 12582912.0f;  // 1.5 * 2^23, rounds to nearest
  const float n = (x * 1.44269504088896341f + shifter) - shifter;
  const float r = (x - n * 0.693359375f) + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  const std::int32_t e = (static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(e);
}

template <typename T>
struct ScanMath;

template <>
struct ScanMath<float> {
  static constexpr float kSeries = 0.02f;
  static float exp(float x) { return exp_fast(x); }
  static float expm1_over(float dA, float, float) { return dA - 1.0f; }
};

template <>
struct ScanMath<double> {
  static constexpr double kSeries = 1e-4;
  static double exp(double x) { return std::exp(x); }
  static double expm1_over(double, double z, double) { return std::expm1(z); }
};

// Zero-order-hold input coefficient coef = (exp(z) - 1) / a with z = dt * a,
// and its partial derivative in a. Series branch covers a -> 0.
template <typename T>
inline void zoh_coef(T dt, T a, T z, T dA, T& coef, T& dcoef_da) {
  const T z2 = z * z;
  const T series = dt * (T(1) + z * T(0.5) + z2 * (T(1) / T(6)) + z2 * z * (T(1) / T(24)));
  const T series_da = dt * dt * (T(0.5) + z * (T(1) / T(3)) + z2 * T(0.125) + z2 * z * (T(1) / T(30)));
  const bool small = (z < T(0) ? -z : z) < ScanMath<T>::kSeries;
  const T safe_a = small ? T(1) : a;
  const T exact = ScanMath<T>::expm1_over(dA, z, a) / safe_a;
  const T exact_da = (dt * dA - exact) / safe_a;
  coef = small ? series : exact;
  dcoef_da = small ? series_da : exact_da;
}

struct Dims {
  std::size_t ns, len, d, n;
};

template <typename T>
void check_delta(const T* delta, const Dims& dm) {
  for (std::size_t s = 0; s < dm.ns; ++s)
    for (std::size_t t = 0; t < dm.len; ++t)
      for (std::size_t ch = 0; ch < dm.d; ++ch) {
        const T v = delta[(s * dm.len + t) * dm.d + ch];
        if (!std::isfinite(v)) {
          throw NumericError("selective_scan: non-finite delta at sequence " + std::to_string(s) + ", timestep " +
                             std::to_string(t) + ", channel " + std::to_string(ch));
        }
      }
}

// Per-timestep work runs on flat lanes (sequence q, channel, state) covering
// a block of sequences, so the inner loops stay wide even when D * N is
// small. Inputs that vary only by channel or only by state are broadcast
// into lane buffers first.
constexpr std::size_t kTargetLanes = 256;

struct Block {
  std::size_t dn, seqs;
  std::size_t lanes() const { return dn * seqs; }
};

inline Block block_for(const Dims& dm) {
  const std::size_t dn = dm.d * dm.n;
  return {dn, std::max<std::size_t>(1, std::min(dm.ns, kTargetLanes / dn))};
}

template <typename T>
struct Lanes {
  explicit Lanes(std::size_t n) : a(n), dt(n), u(n), b(n), c(n), t0(n), t1(n), t2(n), t3(n) {}
  AlignedVector<T> a, dt, u, b, c, t0, t1, t2, t3;
};

// NS > 0 fixes the state size at compile time so the per-state loops unroll;
// NS == 0 reads it from Dims.
template <std::size_t NS>
inline std::size_t states_of(const Dims& dm) {
  return NS ? NS : dm.n;
}

template <typename T, std::size_t NS>
inline void broadcast(const T* per_channel, const T* per_state, T* by_channel, T* by_state, const Dims& dm) {
  const std::size_t n = states_of<NS>(dm);
  for (std::size_t ch = 0; ch < dm.d; ++ch) {
    const T v = per_channel[ch];
    T* dst = by_channel + ch * n;
    T* tile = by_state + ch * n;
    for (std::size_t k = 0; k < n; ++k) {
      dst[k] = v;
      tile[k] = per_state[k];
    }
  }
}

template <typename T, std::size_t NS>
void scan_forward(const T* u, const T* delta, const T* a, const T* b, const T* c, const T* dskip, T* y,
                  T* states, const Dims& dm) {
  const std::size_t n = states_of<NS>(dm);
  const Block bk = block_for(dm);
  const std::size_t dn = bk.dn;
  AlignedVector<T> h(bk.lanes());
  Lanes<T> ln(bk.lanes());
  for (std::size_t q = 0; q < bk.seqs; ++q) std::copy_n(a, dn, ln.a.data() + q * dn);
  T* hp = h.data();
  const T* ax = ln.a.data();
  T* dtx = ln.dt.data();
  T* ux = ln.u.data();
  T* bx = ln.b.data();
  T* prod = ln.t0.data();
  for (std::size_t s0 = 0; s0 < dm.ns; s0 += bk.seqs) {
    const std::size_t nq = std::min(bk.seqs, dm.ns - s0), lanes = nq * dn;
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < dm.len; ++t) {
      for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t tok = (s0 + q) * dm.len + t;
        broadcast<T, NS>(delta + tok * dm.d, b + tok * n, dtx + q * dn, bx + q * dn, dm);
        broadcast<T, NS>(u + tok * dm.d, c + tok * n, ux + q * dn, prod + q * dn, dm);
      }
#pragma omp simd
      for (std::size_t j = 0; j < lanes; ++j) {
        const T z = dtx[j] * ax[j];
        const T dA = ScanMath<T>::exp(z);
        T coef, unused;
        zoh_coef(dtx[j], ax[j], z, dA, coef, unused);
        hp[j] = dA * hp[j] + coef * bx[j] * ux[j];
        prod[j] *= hp[j];
      }
      for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t tok = (s0 + q) * dm.len + t;
        if (states) std::copy_n(hp + q * dn, dn, states + tok * dn);
        const T* ut = u + tok * dm.d;
        const T* pq = prod + q * dn;
        T* yt = y + tok * dm.d;
        for (std::size_t ch = 0; ch < dm.d; ++ch) {
          T acc = 0;
          for (std::size_t k = 0; k < n; ++k) acc += pq[ch * n + k];
          yt[ch] = acc + (dskip ? dskip[ch] : T(0)) * ut[ch];
        }
      }
    }
  }
}

template <typename T>
struct ScanGrads {
  T* u = nullptr;
  T* delta = nullptr;
  T* a = nullptr;
  T* b = nullptr;
  T* c = nullptr;
  T* dskip = nullptr;
};

template <typename T, std::size_t NS>
void scan_backward(const T* u, const T* delta, const T* a, const T* b, const T* c, const T* dskip, const T* states,
                   const T* gy, ScanGrads<T> gr, const Dims& dm) {
  const std::size_t n = states_of<NS>(dm);
  const Block bk = block_for(dm);
  const std::size_t dn = bk.dn;
  AlignedVector<T> g(bk.lanes()), ga(bk.lanes(), T(0)), hprev(bk.lanes()), gskip(dm.d, T(0));
  Lanes<T> ln(bk.lanes());
  for (std::size_t q = 0; q < bk.seqs; ++q) std::copy_n(a, dn, ln.a.data() + q * dn);
  T* gp = g.data();
  T* gap = ga.data();
  T* hpv = hprev.data();
  const T* ax = ln.a.data();
  T* dtx = ln.dt.data();
  T* ux = ln.u.data();
  T* bx = ln.b.data();
  T* cx = ln.c.data();
  T* dyx = ln.t0.data();  // dy, then the C_t gradient lane
  T* t_du = ln.t1.data();
  T* t_ddt = ln.t2.data();
  T* t_gb = ln.t3.data();
  for (std::size_t s0 = 0; s0 < dm.ns; s0 += bk.seqs) {
    const std::size_t nq = std::min(bk.seqs, dm.ns - s0), lanes = nq * dn;
    std::fill(g.begin(), g.end(), T(0));
    for (std::size_t t = dm.len; t-- > 0;) {
      for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t tok = (s0 + q) * dm.len + t;
        broadcast<T, NS>(delta + tok * dm.d, b + tok * n, dtx + q * dn, bx + q * dn, dm);
        broadcast<T, NS>(u + tok * dm.d, c + tok * n, ux + q * dn, cx + q * dn, dm);
        for (std::size_t ch = 0; ch < dm.d; ++ch) std::fill_n(dyx + q * dn + ch * n, n, gy[tok * dm.d + ch]);
        if (t > 0) {
          std::copy_n(states + (tok - 1) * dn, dn, hpv + q * dn);
        } else {
          std::fill_n(hpv + q * dn, dn, T(0));
        }
      }
      for (std::size_t q = 0; q < nq; ++q) {
        // Gradient of C_t needs h_t; fold it into dyx before dyx is consumed.
        const T* ht = states + ((s0 + q) * dm.len + t) * dn;
        T* cg = t_gb + q * dn;
        for (std::size_t j = 0; j < dn; ++j) cg[j] = ht[j];
      }
#pragma omp simd
      for (std::size_t j = 0; j < lanes; ++j) {
        const T gn = gp[j] + dyx[j] * cx[j];
        const T z = dtx[j] * ax[j];
        const T dA = ScanMath<T>::exp(z);
        T coef, dcoef_da;
        zoh_coef(dtx[j], ax[j], z, dA, coef, dcoef_da);
        const T d_dA = gn * hpv[j];
        const T dbbar = gn * ux[j];
        const T dcoef = dbbar * bx[j];
        t_du[j] = gn * coef * bx[j];
        t_ddt[j] = d_dA * ax[j] * dA + dcoef * dA;
        gap[j] += d_dA * dtx[j] * dA + dcoef * dcoef_da;
        dyx[j] *= t_gb[j];
        t_gb[j] = dbbar * coef;
        gp[j] = gn * dA;
      }
      for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t tok = (s0 + q) * dm.len + t;
        const T* ut = u + tok * dm.d;
        const T* dyt = gy + tok * dm.d;
        const std::size_t o = q * dn;
        for (std::size_t ch = 0; ch < dm.d; ++ch) {
          T du = 0, ddt = 0;
          for (std::size_t k = 0; k < n; ++k) {
            du += t_du[o + ch * n + k];
            ddt += t_ddt[o + ch * n + k];
          }
          const std::size_t i = tok * dm.d + ch;
          if (gr.u) gr.u[i] += du + (dskip ? dskip[ch] : T(0)) * dyt[ch];
          if (gr.delta) gr.delta[i] += ddt;
          gskip[ch] += dyt[ch] * ut[ch];
        }
        T* gbt = gr.b ? gr.b + tok * n : nullptr;
        T* gct = gr.c ? gr.c + tok * n : nullptr;
        for (std::size_t ch = 0; ch < dm.d; ++ch)
          for (std::size_t k = 0; k < n; ++k) {
            if (gbt) gbt[k] += t_gb[o + ch * n + k];
            if (gct) gct[k] += dyx[o + ch * n + k];
          }
      }
    }
  }
  if (gr.a)
    for (std::size_t j = 0; j < bk.lanes(); ++j) gr.a[j % dn] += gap[j];
  if (gr.dskip)
    for (std::size_t ch = 0; ch < dm.d; ++ch) gr.dskip[ch] += gskip[ch];
}

template <typename T>
void scan_forward_any(const T* u, const T* delta, const T* a, const T* b, const T* c, const T* dskip, T* y, T* states,
                      const Dims& dm) {
  switch (dm.n) {
    case 4: return scan_forward<T, 4>(u, delta, a, b, c, dskip, y, states, dm);
    case 8: return scan_forward<T, 8>(u, delta, a, b, c, dskip, y, states, dm);
    case 16: return scan_forward<T, 16>(u, delta, a, b, c, dskip, y, states, dm);
    default: return scan_forward<T, 0>(u, delta, a, b, c, dskip, y, states, dm);
  }
}

template <typename T>
void scan_backward_any(const T* u, const T* delta, const T* a, const T* b, const T* c, const T* dskip,
                       const T* states, const T* gy, ScanGrads<T> gr, const Dims& dm) {
  switch (dm.n) {
    case 4: return scan_backward<T, 4>(u, delta, a, b, c, dskip, states, gy, gr, dm);
    case 8: return scan_backward<T, 8>(u, delta, a, b, c, dskip, states, gy, gr, dm);
    case 16: return scan_backward<T, 16>(u, delta, a, b, c, dskip, states, gy, gr, dm);
    default: return scan_backward<T, 0>(u, delta, a, b, c, dskip, states, gy, gr, dm);
  }
}

}  // namespace

template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& dskip) {
  if (u.shape().size() != 3) throw ShapeError("selective_scan: u must be (S, L, D), got " + shape_str(u.shape()));
  const Dims dm{u.dim(0), u.dim(1), u.dim(2), a.shape().size() == 2 ? a.dim(1) : 0};
  require_same_shape(u.shape(), delta.shape(), "selective_scan: delta");
  if (a.shape() != Shape{dm.d, dm.n} || dm.n == 0) {
    throw ShapeError("selective_scan: state matrix must be (D, N), got " + shape_str(a.shape()));
  }
  const Shape bc{dm.ns, dm.len, dm.n};
  require_same_shape(b.shape(), bc, "selective_scan: B");
  require_same_shape(c.shape(), bc, "selective_scan: C");
  if (dskip.defined() && dskip.size() != dm.d) throw ShapeError("selective_scan: skip width mismatch");
  check_delta(delta.value().data().data(), dm);

  const bool record = grad_mode_enabled() &&
                      (u.requires_grad() || delta.requires_grad() || a.requires_grad() || b.requires_grad() ||
                       c.requires_grad() || (dskip.defined() && dskip.requires_grad()));
  Tensor<T> out(u.shape());
  // Hidden states, (S, L, D, N); left uninitialized, the forward pass writes every entry.
  std::shared_ptr<T[]> states(record ? new T[dm.ns * dm.len * dm.d * dm.n] : nullptr);
  scan_forward_any(u.value().data().data(), delta.value().data().data(), a.value().data().data(),
               b.value().data().data(), c.value().data().data(),
               dskip.defined() ? dskip.value().data().data() : nullptr, out.data().data(),
               states.get(), dm);

  auto un = u.node(), dn = delta.node(), an = a.node(), bn = b.node(), cn = c.node();
  auto sn = dskip.defined() ? dskip.node() : nullptr;
  return make_result<T>(std::move(out), {u, delta, a, b, c, dskip},
                        [un, dn, an, bn, cn, sn, dm, states](Node<T>& self) {
    ScanGrads<T> gr;
    if (auto* g = grad_sink(un)) gr.u = g->data().data();
    if (auto* g = grad_sink(dn)) gr.delta = g->data().data();
    if (auto* g = grad_sink(an)) gr.a = g->data().data();
    if (auto* g = grad_sink(bn)) gr.b = g->data().data();
    if (auto* g = grad_sink(cn)) gr.c = g->data().data();
    if (auto* g = grad_sink(sn)) gr.dskip = g->data().data();
    scan_backward_any(un->value.data().data(), dn->value.data().data(), an->value.data().data(),
                  bn->value.data().data(), cn->value.data().data(), sn ? sn->value.data().data() : nullptr,
                  states.get(), self.grad.data().data(), gr, dm);
  });
}

template Var<float> selective_scan(const Var<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                                   const Var<float>&, const Var<float>&);
template Var<double> selective_scan(const Var<double>&, const Var<double>&, const Var<double>&,
                                    const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace m3sr
