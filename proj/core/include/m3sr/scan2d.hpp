#pragma once

#include <cstddef>
#include <vector>

#include "m3sr/ssm.hpp"

namespace m3sr {

// Token orders used to serialize an H x W grid.
enum class ScanDirection : int {
  kRowForward = 0,     // row-major
  kColumnForward = 1,  // column-major
  kRowReverse = 2,     // row-major, reversed
  kColumnReverse = 3,  // column-major, reversed
};

inline constexpr ScanDirection kScanDirections[4] = {ScanDirection::kRowForward, ScanDirection::kColumnForward,
                                                     ScanDirection::kRowReverse, ScanDirection::kColumnReverse};

// order[i] = row-major index (y * W + x) of the token visited at step i.
std::vector<std::size_t> scan_order(std::size_t h, std::size_t w, ScanDirection d);

// (C, H, W) -> (H*W, C) in the direction's token order, and its inverse.
template <typename T>
Var<T> flatten_direction(const Var<T>& f, ScanDirection d);
template <typename T>
Var<T> unflatten_direction(const Var<T>& seq, ScanDirection d, std::size_t h, std::size_t w);

// Grid form: (B, H, W, C) -> (B, H*W, C) sequences and back.
template <typename T>
Var<T> grid_to_sequence(const Var<T>& grid, ScanDirection d);
template <typename T>
Var<T> sequence_to_grid(const Var<T>& seq, ScanDirection d, std::size_t h, std::size_t w);

// Four independent S6 parameter sets, one per direction (0, 1, 2, 3).
template <typename T>
using Ss2dParams = std::vector<SelectiveParams<T>>;

template <typename T>
Ss2dParams<T> init_ss2d(std::size_t channels, std::size_t state, Rng& rng, bool skip = true);

// Sum over the four directions of unflatten(s6(flatten(F, d), params_d), d),
// reduced in direction order 0..3. F is (C, H, W).
template <typename T>
Var<T> ss2d(const Var<T>& f, const Ss2dParams<T>& params);
template <typename T>
Var<T> ss2d_grid(const Var<T>& grid, const Ss2dParams<T>& params);

}  // namespace m3sr
