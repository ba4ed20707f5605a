#pragma once

#include <cstddef>
#include <vector>

#include "m3sr/autograd.hpp"

// Differentiable tensor operations. Spatial operations use the token-grid
// layout (B, H, W, C); sequence operations use (S, L, D): S independent
// sequences of L steps with D channels.
namespace m3sr {

// Elementwise.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add_n(const std::vector<Var<T>>& terms);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
// w holds one element; returns w * x.
template <typename T> Var<T> mul_scalar(const Var<T>& w, const Var<T>& x);
template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);
// -exp(x); maps log-magnitudes to strictly negative diagonal state matrices.
template <typename T> Var<T> neg_exp(const Var<T>& x);

// Layout.
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes);
// Row gather along axis 0: out[i] = x[index[i]].
template <typename T> Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index);
template <typename T> Var<T> concat_last(const Var<T>& a, const Var<T>& b);
// Stacks along axis 0; trailing shapes must agree.
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);

// Affine map over the last axis: y = x W^T + b with W (out, in). `bias` may
// be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Normalizes every token over the last axis, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// Dense convolution on (B, H, W, Ci) with weight (K, K, Ci, Co), zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad);
// Stride-2, kernel-2 transposed convolution: (B, H, W, Ci) -> (B, 2H, 2W, Co),
// weight (2, 2, Ci, Co).
template <typename T>
Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
// Per-channel 3x3 convolution, zero padding 1, weight (3, 3, C).
template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
// Causal per-channel convolution along L for (S, L, D) with weight (D, K):
// y[t] = b + sum_k w[k] x[t - (K - 1) + k], zero before t = 0.
template <typename T>
Var<T> causal_depthwise_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Orthonormal single-level Haar analysis of (B, H, W, C), H and W even.
// Output (4B, H/2, W/2, C) stacks LL, LH, HL, HH, each a block of B images.
template <typename T> Var<T> haar_dwt(const Var<T>& x);
// Exact inverse of haar_dwt: (4B, h, w, C) -> (B, 2h, 2w, C).
template <typename T> Var<T> haar_idwt(const Var<T>& x);

// Zero-pads (B, H, W, C) on the bottom/right to (B, H2, W2, C); crop undoes it.
template <typename T> Var<T> pad_grid(const Var<T>& x, std::size_t h2, std::size_t w2);
template <typename T> Var<T> crop_grid(const Var<T>& x, std::size_t h, std::size_t w);

// Diagonal selective scan with exact per-step zero-order hold:
//   abar = exp(delta * a), bbar = (abar - 1) / a * B_t   (delta * B_t as a -> 0)
//   h_t = abar * h_{t-1} + bbar * u_t,  y_t = <C_t, h_t> + dskip * u_t
// u, delta: (S, L, D); a: (D, N); b, c: (S, L, N); dskip: (D) or undefined.
template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& a, const Var<T>& b,
                      const Var<T>& c, const Var<T>& dskip);

// Reductions.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> sum_squares(const Var<T>& x);
// Mean absolute error; subgradient 0 where the difference is exactly 0.
template <typename T> Var<T> mae_loss(const Var<T>& prediction, const Var<T>& target);

// (C, H, W) <-> token grid (1, H, W, C).
template <typename T> Var<T> chw_to_grid(const Var<T>& x);
template <typename T> Var<T> grid_to_chw(const Var<T>& x);

}  // namespace m3sr
