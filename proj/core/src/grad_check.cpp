#include "m3sr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "m3sr/errors.hpp"
#include "m3sr/rng.hpp"

namespace m3sr {

namespace {

std::vector<std::size_t> coordinates(std::size_t n, const GradCheckOptions& opts) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (opts.max_coords == 0 || opts.max_coords >= n) return idx;
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < opts.max_coords; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(opts.max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double checked(double v, std::size_t coord, const char* side) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("grad_check: non-finite function value at x") + side + "eps*e_" +
                       std::to_string(coord));
  }
  return v;
}

template <typename Eval>
GradReport compare(const Tensor<double>& analytic, Tensor<double> x, Eval&& eval, const GradCheckOptions& opts) {
  if (!(opts.eps > 0)) throw DomainError("grad_check: eps must be positive");
  GradReport rep;
  const double floor = opts.tol_abs / opts.tol_rel;
  double worst = -1;
  for (std::size_t i : coordinates(x.size(), opts)) {
    const double x0 = x[i];
    x[i] = x0 + opts.eps;
    const double fp = checked(eval(x), i, "+");
    x[i] = x0 - opts.eps;
    const double fm = checked(eval(x), i, "-");
    x[i] = x0;
    const double numeric = (fp - fm) / (2 * opts.eps);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel_err = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    if (rel_err > worst) {
      worst = rel_err;
      rep.worst_index = i;
    }
  }
  rep.max_rel_err = std::max(worst, 0.0);
  rep.passed = rep.max_rel_err <= opts.tol_rel || rep.max_abs_err <= opts.tol_abs;
  return rep;
}

}  // namespace

GradReport grad_check(const std::function<double(const Tensor<double>&)>& value,
                      const std::function<Tensor<double>(const Tensor<double>&)>& gradient,
                      const Tensor<double>& x, const GradCheckOptions& opts) {
  checked(value(x), 0, "+0*");
  Tensor<double> analytic = gradient(x);
  require_same_shape(analytic.shape(), x.shape(), "grad_check: gradient");
  return compare(analytic, x, value, opts);
}

GradReport grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                      const GradCheckOptions& opts) {
  auto value = [&](const Tensor<double>& at) {
    NoGradGuard guard;
    return f(Var<double>::constant(at)).value()[0];
  };
  auto gradient = [&](const Tensor<double>& at) {
    auto leaf = Var<double>::leaf(at);
    auto out = f(leaf);
    if (out.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    out.backward();
    return leaf.grad();
  };
  return grad_check(value, gradient, x, opts);
}

GradReport grad_check_leaf(const std::function<Var<double>()>& loss, Var<double>& leaf,
                           const GradCheckOptions& opts) {
  leaf.zero_grad();
  {
    auto out = loss();
    if (out.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    checked(out.value()[0], 0, "+0*");
    out.backward();
  }
  Tensor<double> analytic = leaf.grad();
  leaf.zero_grad();
  const Tensor<double> original = leaf.value();
  auto eval = [&](const Tensor<double>& at) {
    leaf.mutable_value() = at;
    NoGradGuard guard;
    return loss().value()[0];
  };
  GradReport rep = compare(analytic, original, eval, opts);
  leaf.mutable_value() = original;
  return rep;
}

}  // namespace m3sr
