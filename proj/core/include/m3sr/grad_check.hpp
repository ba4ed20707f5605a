#pragma once

#include <cstddef>
#include <functional>

#include "m3sr/autograd.hpp"

namespace m3sr {

struct GradReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol_rel = 1e-4;
  double tol_abs = 1e-7;
  // Check at most this many coordinates, drawn with `seed`; 0 checks all.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

// Compares an analytic gradient against central differences
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate-wise.
//
// Per-coordinate relative error is |analytic - numeric| / max(|analytic|,
// |numeric|, tol_abs / tol_rel): below that magnitude floor the relative and
// absolute tolerances coincide. passed <=> max_rel_err <= tol_rel or
// max_abs_err <= tol_abs. worst_index is the coordinate with the largest
// relative error. Throws NumericError naming the coordinate when f is
// non-finite.
GradReport grad_check(const std::function<double(const Tensor<double>&)>& value,
                      const std::function<Tensor<double>(const Tensor<double>&)>& gradient,
                      const Tensor<double>& x, const GradCheckOptions& opts = {});

// Autograd form: the analytic gradient comes from backward() on f(leaf(x)).
GradReport grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                      const GradCheckOptions& opts = {});

// Checks d loss / d leaf for an existing leaf, perturbing it in place and
// restoring it afterwards. `loss` must rebuild the graph on every call.
GradReport grad_check_leaf(const std::function<Var<double>()>& loss, Var<double>& leaf,
                           const GradCheckOptions& opts = {});

}  // namespace m3sr
