#include "m3sr/verify.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>

#include "m3sr/blocks.hpp"
#include "m3sr/grad_check.hpp"
#include "m3sr/network.hpp"
#include "m3sr/ops.hpp"
#include "m3sr/ssm.hpp"
#include "m3sr/wavelet.hpp"

namespace m3sr {

namespace {

std::string fmt(const char* f, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

SsmParams random_diagonal(Rng& rng, std::size_t n) {
  SsmParams p;
  p.n = n;
  p.diagonal = true;
  for (std::size_t i = 0; i < n; ++i) {
    p.a.push_back(-rng.uniform(0.05, 2.0));
    p.b.push_back(rng.normal());
    p.c.push_back(rng.normal());
  }
  p.delta = rng.uniform(0.01, 0.5);
  return p;
}

// Checks the input and every named leaf, a few coordinates each.
CheckResult gradient_check(const std::function<Var<double>(const Var<double>&)>& f, Var<double> input,
                           const ParamList<double>& params, std::uint64_t seed, std::size_t coords) {
  Rng wrng(seed);
  const Tensor<double> w = random_tensor(f(input).shape(), wrng);
  auto loss = [&] { return sum(mul(f(input), Var<double>::constant(w))); };
  GradCheckOptions opts;
  opts.max_coords = coords;
  opts.seed = seed;
  CheckResult r;
  r.passed = true;
  double worst = 0;
  std::string worst_name = "input";
  std::vector<NamedParam<double>> leaves{{"input", input}};
  leaves.insert(leaves.end(), params.begin(), params.end());
  for (auto& leaf : leaves) {
    Var<double> v = leaf.var;
    const GradReport g = grad_check_leaf(loss, v, opts);
    if (!g.passed) r.passed = false;
    if (g.max_rel_err > worst || !g.passed) {
      worst = g.max_rel_err;
      worst_name = leaf.name;
    }
    if (!g.passed) break;
  }
  r.detail = std::to_string(leaves.size()) + " leaves, worst rel err " + fmt("%.2e", worst) + " at " + worst_name;
  return r;
}

}  // namespace

CheckResult check_scan_duality(std::uint64_t seed, std::size_t systems) {
  return timed("scan duality", [&] {
    Rng rng(seed);
    double worst = 0;
    for (std::size_t s = 0; s < systems; ++s) {
      const DiscreteSsm d = zoh_discretize(random_diagonal(rng, 1 + rng.below(8)));
      std::vector<double> x(64);
      for (auto& v : x) v = rng.normal();
      const auto y_rec = ssm_scan(d, x);
      const auto y_conv = causal_convolve(x, ssm_kernel(d, x.size()));
      for (std::size_t t = 0; t < x.size(); ++t) worst = std::max(worst, std::abs(y_rec[t] - y_conv[t]));
    }
    return CheckResult{"", worst < 1e-10, fmt("max abs err %.2e over %g systems", worst, double(systems))};
  });
}

CheckResult check_zoh_consistency(std::uint64_t seed) {
  return timed("zoh consistency", [&] {
    Rng rng(seed);
    auto deviation = [](const SsmParams& p, double delta) {
      SsmParams q = p;
      q.delta = delta;
      const DiscreteSsm d = zoh_discretize(q);
      double m = 0;
      if (p.diagonal) {
        for (std::size_t i = 0; i < p.n; ++i) m = std::max(m, std::abs(d.a_bar[i] - (1 + delta * p.a[i])));
        return m;
      }
      for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t j = 0; j < p.n; ++j) {
          const double lin = (i == j ? 1.0 : 0.0) + delta * p.a[i * p.n + j];
          m = std::max(m, std::abs(d.a_bar[i * p.n + j] - lin));
        }
      return m;
    };
    SsmParams diag = random_diagonal(rng, 8);
    SsmParams dense;
    dense.n = 4;
    dense.diagonal = false;
    for (std::size_t i = 0; i < 16; ++i) dense.a.push_back((i % 5 == 0 ? -1.0 : 0.0) + 0.3 * rng.normal());
    dense.b.assign(4, 1.0);
    dense.c.assign(4, 1.0);
    dense.delta = 0.1;
    double lo = 1e300, hi = 0;
    for (const SsmParams* p : {&diag, &dense}) {
      double prev = deviation(*p, 1e-1);
      for (double delta = 1e-2; delta > 5e-6; delta /= 10) {
        const double cur = deviation(*p, delta);
        const double ratio = prev / cur;
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
        prev = cur;
      }
    }
    return CheckResult{"", lo >= 80 && hi <= 120, fmt("decade ratios in [%.1f, %.1f]", lo, hi)};
  });
}

CheckResult check_wavelet_exactness(std::uint64_t seed, std::size_t maps) {
  return timed("wavelet exactness", [&] {
    Rng rng(seed);
    double rec = 0, energy = 0;
    for (std::size_t k = 0; k < maps; ++k) {
      const std::size_t c = 1 + rng.below(8), h = 2 * (1 + rng.below(16)), w = 2 * (1 + rng.below(16));
      const auto f = Var<double>::constant(random_tensor({c, h, w}, rng));
      const SubBands<double> s = dwt2(f);
      const Tensor<double> back = idwt2(s).value();
      for (std::size_t i = 0; i < back.size(); ++i) rec = std::max(rec, std::abs(back[i] - f.value()[i]));
      const double e_in = sum_squares(f).value()[0];
      const double e_out = sum_squares(s.ll).value()[0] + sum_squares(s.lh).value()[0] +
                           sum_squares(s.hl).value()[0] + sum_squares(s.hh).value()[0];
      energy = std::max(energy, std::abs(e_out - e_in) / e_in);
    }
    return CheckResult{"", rec <= 1e-12 && energy <= 1e-9,
                       fmt("reconstruction err %.2e, energy rel err %.2e", rec, energy)};
  });
}

CheckResult check_selective_scan(std::uint64_t seed) {
  return timed("selective scan", [&] {
    Rng rng(seed);
    const std::size_t s = 3, l = 37, d = 5, n = 6;
    Tensor<double> u = random_tensor({s, l, d}, rng), delta({s, l, d}), a({d, n});
    for (auto& v : delta.data()) v = rng.uniform(1e-3, 1.0);
    for (auto& v : a.data()) v = -rng.uniform(0.1, 3.0);
    a[0] = -1e-12;  // exercises the small-|delta a| branch
    const Tensor<double> b = random_tensor({s, l, n}, rng), c = random_tensor({s, l, n}, rng);
    const Tensor<double> dskip = random_tensor({d}, rng);
    NoGradGuard guard;
    const Tensor<double> y = selective_scan(Var<double>::constant(u), Var<double>::constant(delta),
                                            Var<double>::constant(a), Var<double>::constant(b),
                                            Var<double>::constant(c), Var<double>::constant(dskip))
                                 .value();
    double worst = 0;
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t ch = 0; ch < d; ++ch) {
        std::vector<double> h(n, 0.0);
        for (std::size_t t = 0; t < l; ++t) {
          const std::size_t tok = q * l + t;
          const double dt = delta[tok * d + ch], x = u[tok * d + ch];
          double out = dskip[ch] * x;
          for (std::size_t i = 0; i < n; ++i) {
            const double ai = a[ch * n + i];
            const double bbar = std::expm1(dt * ai) / ai * b[tok * n + i];
            h[i] = std::exp(dt * ai) * h[i] + bbar * x;
            out += c[tok * n + i] * h[i];
          }
          worst = std::max(worst, std::abs(out - y[tok * d + ch]));
        }
      }
    // Carried-state evaluation of a time-varying system.
    std::vector<DiscreteSsm> steps;
    std::vector<double> x(100);
    for (auto& v : x) {
      v = rng.normal();
      SsmParams p = random_diagonal(rng, 4);
      steps.push_back(zoh_discretize(p));
    }
    const auto ref = ssm_scan(steps, x), blk = blocked_scan(steps, x, 16);
    double blocked = 0;
    for (std::size_t t = 0; t < x.size(); ++t) blocked = std::max(blocked, std::abs(ref[t] - blk[t]));
    return CheckResult{"", worst < 1e-12 && blocked < 1e-12,
                       fmt("selective err %.2e, blocked err %.2e", worst, blocked)};
  });
}

std::vector<CheckResult> check_gradients(std::uint64_t seed) {
  Rng rng(seed);
  BlockConfig bc;
  bc.channels = 3;
  bc.state = 2;
  bc.groups = 2;
  bc.mamba_width = 2;
  const std::size_t coords = 4;
  std::vector<CheckResult> out;
  auto run = [&](const std::string& name, auto f, Var<double> x, const ParamList<double>& params) {
    const std::uint64_t s = rng.next();
    out.push_back(timed("grad " + name, [&] { return gradient_check(f, x, params, s, coords); }));
  };
  auto grid = [&](std::size_t h, std::size_t w) { return Var<double>::leaf(random_tensor({1, h, w, 3}, rng, 0.5)); };

  {
    auto p = VssParams<double>::init(3, 3, 2, rng, true);
    ParamList<double> ps;
    p.collect("vss", ps);
    run("vss block", [p](const Var<double>& x) { return vss_block_grid(x, p); }, grid(3, 4), ps);
  }
  {
    auto p = MambaParams<double>::init(3, 4, 2, rng, true);
    ParamList<double> ps;
    p.collect("mamba", ps);
    run("mamba block", [p](const Var<double>& x) { return mamba_block(x, p); },
        Var<double>::leaf(random_tensor({2, 5, 3}, rng, 0.5)), ps);
  }
  {
    auto p = VssBranchParams<double>::init(bc, rng);
    ParamList<double> ps;
    p.collect("spatial", ps);
    run("spatial branch", [p](const Var<double>& x) { return spatial_branch_grid(x, p); }, grid(4, 3), ps);
  }
  {
    auto p = VssBranchParams<double>::init(bc, rng);
    ParamList<double> ps;
    p.collect("frequency", ps);
    run("frequency branch", [p](const Var<double>& x) { return frequency_branch_grid(x, p); }, grid(4, 6), ps);
  }
  {
    auto p = SpectralParams<double>::init(bc, rng);
    ParamList<double> ps;
    p.collect("spectral", ps);
    run("spectral branch", [p](const Var<double>& x) { return spectral_branch_grid(x, p); }, grid(2, 3), ps);
  }
  {
    auto p = BlockParams<double>::init(bc, rng);
    ParamList<double> ps;
    p.collect("mpf", ps);
    run("mpf block", [p](const Var<double>& x) { return mpf_block_grid(x, p); }, grid(4, 4), ps);
  }
  {
    ModelConfig mc;
    mc.base_width = 2;
    mc.out_channels = 4;
    mc.state = 2;
    mc.groups = 2;
    mc.seed = rng.next();
    const Model<double> m = build_model<double>(mc);
    run("tiny model", [&m](const Var<double>& x) { return forward_grid(m, x); }, grid(8, 8), m.parameters());
  }
  return out;
}

CheckResult check_fusion_degeneracy(std::uint64_t seed) {
  return timed("fusion degeneracy", [&] {
    Rng rng(seed);
    BlockConfig bc;
    bc.channels = 4;
    bc.state = 2;
    bc.groups = 2;
    auto p = BlockParams<double>::init(bc, rng);
    const auto x = Var<double>::constant(random_tensor({1, 6, 4, 4}, rng));
    NoGradGuard guard;
    auto set = [&](double a, double f, double e) {
      p.omega_a.mutable_value()[0] = a;
      p.omega_f.mutable_value()[0] = f;
      p.omega_e.mutable_value()[0] = e;
    };
    set(0, 0, 0);
    const MpfTrace<double> zero = mpf_trace_grid(x, p);
    bool identity = true;
    for (std::size_t i = 0; i < x.size(); ++i) {
      identity = identity && std::bit_cast<std::uint64_t>(zero.output.value()[i]) ==
                                 std::bit_cast<std::uint64_t>(x.value()[i]);
    }
    double worst = 0;
    for (int k = 0; k < 3; ++k) {
      set(k == 0, k == 1, k == 2);
      const MpfTrace<double> t = mpf_trace_grid(x, p);
      const Var<double>& branch = k == 0 ? t.spatial : k == 1 ? t.frequency : t.spectral;
      for (std::size_t i = 0; i < x.size(); ++i) {
        worst = std::max(worst, std::abs(t.output.value()[i] - (branch.value()[i] + x.value()[i])));
      }
    }
    return CheckResult{"", identity && worst <= 1e-12,
                       std::string(identity ? "omega=0 identity bitwise" : "omega=0 NOT identity") +
                           fmt(", single-branch err %.2e", worst)};
  });
}

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  out.push_back(check_scan_duality(rng.next()));
  out.push_back(check_zoh_consistency(rng.next()));
  out.push_back(check_wavelet_exactness(rng.next()));
  out.push_back(check_selective_scan(rng.next()));
  for (auto& r : check_gradients(rng.next())) out.push_back(std::move(r));
  out.push_back(check_fusion_degeneracy(rng.next()));
  return out;
}

}  // namespace m3sr
