#pragma once

#include "m3sr/autograd.hpp"

namespace m3sr {

// Single-level orthonormal Haar sub-bands of a (C, H, W) map, each
// (C, H/2, W/2). Per 2x2 block [[p00, p01], [p10, p11]]:
//   LL = (p00 + p01 + p10 + p11) / 2    HL = (p00 - p01 + p10 - p11) / 2
//   LH = (p00 + p01 - p10 - p11) / 2    HH = (p00 - p01 - p10 + p11) / 2
template <typename T>
struct SubBands {
  Var<T> ll, lh, hl, hh;
};

// Odd H or W throws ShapeError.
template <typename T>
SubBands<T> dwt2(const Var<T>& f);

// Exact inverse of dwt2; sub-band shapes must match.
template <typename T>
Var<T> idwt2(const SubBands<T>& s);

}  // namespace m3sr
