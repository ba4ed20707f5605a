#include "m3sr/wavelet.hpp"

#include <numeric>

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

template <typename T>
SubBands<T> dwt2(const Var<T>& f) {
  if (f.shape().size() != 3) throw ShapeError("dwt2: expected (C, H, W), got " + shape_str(f.shape()));
  auto bands = haar_dwt(chw_to_grid(f));  // (4, H/2, W/2, C)
  auto band = [&](std::size_t k) { return grid_to_chw(gather_rows(bands, {k})); };
  return {band(0), band(1), band(2), band(3)};
}

template <typename T>
Var<T> idwt2(const SubBands<T>& s) {
  for (const auto* v : {&s.ll, &s.lh, &s.hl, &s.hh}) {
    if (!v->defined()) throw ShapeError("idwt2: missing sub-band");
    if (v->shape().size() != 3) throw ShapeError("idwt2: sub-bands must be (C, H, W)");
  }
  require_same_shape(s.ll.shape(), s.lh.shape(), "idwt2: LH");
  require_same_shape(s.ll.shape(), s.hl.shape(), "idwt2: HL");
  require_same_shape(s.ll.shape(), s.hh.shape(), "idwt2: HH");
  auto stacked = concat_rows<T>({chw_to_grid(s.ll), chw_to_grid(s.lh), chw_to_grid(s.hl), chw_to_grid(s.hh)});
  return grid_to_chw(haar_idwt(stacked));
}

template SubBands<float> dwt2(const Var<float>&);
template SubBands<double> dwt2(const Var<double>&);
template Var<float> idwt2(const SubBands<float>&);
template Var<double> idwt2(const SubBands<double>&);

}  // namespace m3sr
