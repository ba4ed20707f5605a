#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace m3sr {

// Outcome of one self-check; `detail` names the measured quantity.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

// Recurrence vs kernel convolution on random diagonal LTI systems
// (state <= 8, length 64); passes when the max abs difference < 1e-10.
CheckResult check_scan_duality(std::uint64_t seed, std::size_t systems = 100);

// |abar - (I + delta A)|_max over delta = 1e-1 .. 1e-5; consecutive decades
// must shrink by a factor within [80, 120].
CheckResult check_zoh_consistency(std::uint64_t seed);

// idwt2(dwt2(f)) == f to 1e-12 and energy preserved to 1e-9 relative on
// random maps with C <= 8 and extents <= 32.
CheckResult check_wavelet_exactness(std::uint64_t seed, std::size_t maps = 100);

// Selective scan against a plain per-step reference recurrence, forward
// and blocked (carried-state) evaluation.
CheckResult check_selective_scan(std::uint64_t seed);

// Central-difference gradient checks (eps 1e-5, rel tol 1e-4) in double for
// the VSS block, Mamba block, the three branches, the MPF block and a tiny
// full model.
std::vector<CheckResult> check_gradients(std::uint64_t seed);

// omega = 0 makes the MPF block the identity bitwise; a single omega = 1
// adds exactly that branch's output to the input (1e-12).
CheckResult check_fusion_degeneracy(std::uint64_t seed);

// Every suite above, in order.
std::vector<CheckResult> run_invariant_suite(std::uint64_t seed);

}  // namespace m3sr
