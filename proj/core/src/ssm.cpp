#include "m3sr/ssm.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

SsmParams SsmParams::s4d_real(std::size_t n, double delta) {
  SsmParams p;
  p.n = n;
  p.diagonal = true;
  p.a.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.a[i] = -double(i + 1);
  p.b.assign(n, 1.0);
  p.c.assign(n, 1.0);
  p.delta = delta;
  return p;
}

void SsmParams::validate() const {
  if (n == 0) throw ConfigError("SsmParams: state size must be >= 1");
  if (a.size() != (diagonal ? n : n * n)) throw ShapeError("SsmParams: A has wrong size");
  if (b.size() != n || c.size() != n) throw ShapeError("SsmParams: B/C must have n entries");
  if (!(delta > 0) || !std::isfinite(delta)) throw DomainError("SsmParams: delta must be positive and finite");
}

DiscreteSsm zoh_discretize(const SsmParams& p) {
  p.validate();
  DiscreteSsm d;
  d.n = p.n;
  d.diagonal = p.diagonal;
  d.c = p.c;
  if (p.diagonal) {
    d.a_bar.resize(p.n);
    d.b_bar.resize(p.n);
    for (std::size_t i = 0; i < p.n; ++i) {
      const double z = p.delta * p.a[i];
      d.a_bar[i] = std::exp(z);
      d.b_bar[i] = p.a[i] == 0.0 ? p.delta * p.b[i] : std::expm1(z) / p.a[i] * p.b[i];
    }
    return d;
  }
  using Mat = Eigen::MatrixXd;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(p.a.data(), p.n, p.n);
  const Mat am = a;
  Eigen::FullPivLU<Mat> lu(am);
  if (!lu.isInvertible()) {
    throw SingularityError("zoh_discretize: dense A is singular; use diagonal mode for zero eigenvalues");
  }
  const Mat abar = (p.delta * am).exp();
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(p.b.data(), p.n);
  const Eigen::VectorXd bbar = lu.solve((abar - Mat::Identity(p.n, p.n)) * b);
  d.a_bar.resize(p.n * p.n);
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t j = 0; j < p.n; ++j) d.a_bar[i * p.n + j] = abar(i, j);
  d.b_bar.assign(bbar.data(), bbar.data() + p.n);
  return d;
}

namespace {

void require_consistent(const DiscreteSsm& d) {
  if (d.n == 0 || d.b_bar.size() != d.n || d.c.size() != d.n ||
      d.a_bar.size() != (d.diagonal ? d.n : d.n * d.n)) {
    throw ShapeError("DiscreteSsm: inconsistent sizes");
  }
}

// h <- abar h + bbar x, in place.
void step(const DiscreteSsm& d, std::vector<double>& h, std::vector<double>& tmp, double x) {
  if (d.diagonal) {
    for (std::size_t i = 0; i < d.n; ++i) h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * x;
    return;
  }
  for (std::size_t i = 0; i < d.n; ++i) {
    double acc = d.b_bar[i] * x;
    for (std::size_t j = 0; j < d.n; ++j) acc += d.a_bar[i * d.n + j] * h[j];
    tmp[i] = acc;
  }
  h.swap(tmp);
}

double readout(const DiscreteSsm& d, const std::vector<double>& h) {
  double y = 0;
  for (std::size_t i = 0; i < d.n; ++i) y += d.c[i] * h[i];
  return y;
}

}  // namespace

std::vector<double> ssm_scan(const DiscreteSsm& d, std::span<const double> x) {
  if (x.empty()) throw DomainError("ssm_scan: sequence length must be >= 1");
  require_consistent(d);
  std::vector<double> h(d.n, 0.0), tmp(d.n), y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    step(d, h, tmp, x[t]);
    y[t] = readout(d, h);
  }
  return y;
}

std::vector<double> ssm_scan(std::span<const DiscreteSsm> steps, std::span<const double> x) {
  if (x.empty()) throw DomainError("ssm_scan: sequence length must be >= 1");
  if (steps.size() != x.size()) {
    throw ShapeError("ssm_scan: " + std::to_string(steps.size()) + " per-step systems for " +
                     std::to_string(x.size()) + " inputs");
  }
  const std::size_t n = steps.front().n;
  std::vector<double> h(n, 0.0), tmp(n), y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    require_consistent(steps[t]);
    if (steps[t].n != n) throw ShapeError("ssm_scan: state size changes along the sequence");
    step(steps[t], h, tmp, x[t]);
    y[t] = readout(steps[t], h);
  }
  return y;
}

std::vector<double> ssm_kernel(const DiscreteSsm& d, std::size_t length) {
  if (length == 0) throw DomainError("ssm_kernel: length must be >= 1");
  require_consistent(d);
  std::vector<double> k(length);
  std::vector<double> v = d.b_bar, tmp(d.n);
  for (std::size_t t = 0; t < length; ++t) {
    k[t] = readout(d, v);
    step(d, v, tmp, 0.0);
  }
  return k;
}

std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> kernel) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0;
    const std::size_t upto = std::min(t + 1, kernel.size());
    for (std::size_t k = 0; k < upto; ++k) acc += kernel[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}

std::vector<double> blocked_scan(std::span<const DiscreteSsm> steps, std::span<const double> x,
                                 std::size_t chunk) {
  if (x.empty()) throw DomainError("blocked_scan: sequence length must be >= 1");
  if (chunk == 0) throw ConfigError("blocked_scan: chunk must be >= 1");
  if (steps.size() != x.size()) throw ShapeError("blocked_scan: per-step system count mismatch");
  const std::size_t n = steps.front().n;
  for (const auto& s : steps) {
    require_consistent(s);
    if (!s.diagonal || s.n != n) throw ConfigError("blocked_scan: requires diagonal systems of equal size");
  }
  const std::size_t len = x.size();
  const std::size_t chunks = (len + chunk - 1) / chunk;

  // Phase 1, independent per chunk: zero-state local states and the running
  // product of abar since the chunk start.
  std::vector<double> local(len * n), decay(len * n);
  for (std::size_t q = 0; q < chunks; ++q) {
    std::vector<double> h(n, 0.0), p(n, 1.0);
    for (std::size_t t = q * chunk; t < std::min(len, (q + 1) * chunk); ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        h[i] = steps[t].a_bar[i] * h[i] + steps[t].b_bar[i] * x[t];
        p[i] *= steps[t].a_bar[i];
        local[t * n + i] = h[i];
        decay[t * n + i] = p[i];
      }
    }
  }

  // Phase 2, sequential over chunks: fold the carried state in.
  std::vector<double> y(len), carry(n, 0.0);
  for (std::size_t q = 0; q < chunks; ++q) {
    const std::size_t end = std::min(len, (q + 1) * chunk);
    for (std::size_t t = q * chunk; t < end; ++t) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += steps[t].c[i] * (local[t * n + i] + decay[t * n + i] * carry[i]);
      }
      y[t] = acc;
    }
    for (std::size_t i = 0; i < n; ++i) {
      carry[i] = local[(end - 1) * n + i] + decay[(end - 1) * n + i] * carry[i];
    }
  }
  return y;
}

std::vector<double> blocked_scan(const DiscreteSsm& d, std::span<const double> x, std::size_t chunk) {
  std::vector<DiscreteSsm> steps(x.size(), d);
  return blocked_scan(steps, x, chunk);
}

template <typename T>
SelectiveParams<T> SelectiveParams<T>::init(std::size_t channels, std::size_t state, Rng& rng, bool skip) {
  if (channels == 0 || state == 0) throw ConfigError("SelectiveParams: channels and state must be >= 1");
  SelectiveParams p;
  p.channels = channels;
  p.state = state;
  const double bound = 1.0 / std::sqrt(double(channels));
  auto uniform = [&](Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = T(rng.uniform(lo, hi));
    return Var<T>::leaf(std::move(t));
  };
  p.w_b = uniform({state, channels}, -bound, bound);
  p.b_b = Var<T>::leaf(Tensor<T>({state}));
  p.w_c = uniform({state, channels}, -bound, bound);
  p.b_c = Var<T>::leaf(Tensor<T>({state}));
  p.w_delta = uniform({channels, channels}, -bound, bound);
  Tensor<T> bd({channels});
  for (auto& v : bd.data()) {
    const double target = rng.uniform(1e-3, 1e-1);
    v = T(std::log(std::expm1(target)));  // softplus^{-1}
  }
  p.b_delta = Var<T>::leaf(std::move(bd));
  Tensor<T> alog({channels, state});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < state; ++i) alog[c * state + i] = T(std::log(double(i + 1)));
  p.a_log = Var<T>::leaf(std::move(alog));
  if (skip) p.d_skip = Var<T>::leaf(Tensor<T>({channels}, T(1)));
  return p;
}

template <typename T>
void SelectiveParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".w_b", w_b});
  out.push_back({prefix + ".b_b", b_b});
  out.push_back({prefix + ".w_c", w_c});
  out.push_back({prefix + ".b_c", b_c});
  out.push_back({prefix + ".w_delta", w_delta});
  out.push_back({prefix + ".b_delta", b_delta});
  out.push_back({prefix + ".a_log", a_log});
  if (d_skip.defined()) out.push_back({prefix + ".d_skip", d_skip});
}

template <typename T>
std::size_t SelectiveParams<T>::parameter_count() const {
  const std::size_t d = channels, n = state;
  return 2 * (n * d + n) + d * d + d + d * n + (d_skip.defined() ? d : 0);
}

template <typename T>
Var<T> s6_forward(const Var<T>& x, const SelectiveParams<T>& p) {
  const auto& s = x.shape();
  if ((s.size() != 2 && s.size() != 3) || s.back() != p.channels) {
    throw ShapeError("s6_forward: expected (L, " + std::to_string(p.channels) + ") or (S, L, " +
                     std::to_string(p.channels) + "), got " + shape_str(s));
  }
  const Var<T> seq = s.size() == 2 ? reshape(x, {1, s[0], s[1]}) : x;
  const Var<T> b = linear(seq, p.w_b, p.b_b);
  const Var<T> c = linear(seq, p.w_c, p.b_c);
  const Var<T> delta = softplus(linear(seq, p.w_delta, p.b_delta));
  const Var<T> a = neg_exp(p.a_log);
  Var<T> y = selective_scan(seq, delta, a, b, c, p.d_skip);
  return s.size() == 2 ? reshape(y, s) : y;
}

template struct SelectiveParams<float>;
template struct SelectiveParams<double>;
template Var<float> s6_forward(const Var<float>&, const SelectiveParams<float>&);
template Var<double> s6_forward(const Var<double>&, const SelectiveParams<double>&);

}  // namespace m3sr
