#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "m3sr/autograd.hpp"
#include "m3sr/rng.hpp"

namespace m3sr {

// Continuous single-input single-output system h' = A h + B x, y = C h with
// time scale delta. A is either diagonal (n entries) or dense (n*n, row-major).
struct SsmParams {
  std::size_t n = 0;
  bool diagonal = true;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;
  double delta = 0;

  // Diagonal A with a_i = -(i + 1), B = C = 1.
  static SsmParams s4d_real(std::size_t n, double delta);
  void validate() const;
};

// Discretized system h_t = abar h_{t-1} + bbar x_t, y_t = c h_t.
struct DiscreteSsm {
  std::size_t n = 0;
  bool diagonal = true;
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;
};

// Zero-order hold: abar = exp(delta A), bbar = A^{-1}(abar - I) B. Diagonal
// entries with a_i = 0 use the limit bbar_i = delta b_i. A dense singular A
// throws SingularityError.
DiscreteSsm zoh_discretize(const SsmParams& p);

// Linear recurrence from h_0 = 0, returning y_1..y_L.
std::vector<double> ssm_scan(const DiscreteSsm& d, std::span<const double> x);
// Time-varying recurrence, one system per step.
std::vector<double> ssm_scan(std::span<const DiscreteSsm> steps, std::span<const double> x);

// K = (C bbar, C abar bbar, ..., C abar^{L-1} bbar).
std::vector<double> ssm_kernel(const DiscreteSsm& d, std::size_t length);

// Causal convolution y_t = sum_{k<=t} kernel_k x_{t-k}.
std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> kernel);

// Same result as ssm_scan for diagonal systems, evaluated chunk by chunk:
// each chunk is scanned from a zero state, then the carried state is folded
// in through the cumulative decay of that chunk.
std::vector<double> blocked_scan(std::span<const DiscreteSsm> steps, std::span<const double> x,
                                 std::size_t chunk);
std::vector<double> blocked_scan(const DiscreteSsm& d, std::span<const double> x, std::size_t chunk);

// Learned parameters of one selective (S6) layer over D channels with state
// size N. Per step t: B_t = W_B x_t + b_B, C_t = W_C x_t + b_C and
// delta_t = softplus(W_delta x_t + b_delta), one delta per channel. A is
// diagonal per channel, stored as log magnitudes (A = -exp(a_log)).
template <typename T>
struct SelectiveParams {
  std::size_t channels = 0;
  std::size_t state = 0;
  Var<T> w_b, b_b;
  Var<T> w_c, b_c;
  Var<T> w_delta, b_delta;
  Var<T> a_log;
  Var<T> d_skip;  // undefined when the skip term is disabled

  // a_i = -(i + 1); softplus(b_delta) uniform in [1e-3, 1e-1].
  static SelectiveParams init(std::size_t channels, std::size_t state, Rng& rng, bool skip = true);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  std::size_t parameter_count() const;
};

// Selective scan over x of shape (L, D) or (S, L, D); same shape out.
template <typename T>
Var<T> s6_forward(const Var<T>& x, const SelectiveParams<T>& p);

}  // namespace m3sr
