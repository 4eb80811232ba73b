#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "dmac/autodiff/tensor.hpp"

namespace dmac::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates probed per input; 0 probes all of them. A subset is drawn
  // deterministically from `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // Skip coordinates whose +-eps stencil changes a piecewise decision
  // somewhere in f; in subset mode the next drawn coordinate replaces it.
  bool avoid_kinks = false;
  // When > 0, coordinates where both |analytic| and |numeric| fall below
  // ulps * machine_eps * |f| / eps are skipped: there a rounding error of
  // that many ulps in f swamps the difference quotient.
  double roundoff_ulps = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  std::size_t coords_below_roundoff = 0;
};

inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Compares the tape gradient of the scalar f() with central differences.
// `inputs` must be the tensors f reads; they are marked as requiring grad.
template <typename F>
GradCheckResult gradcheck(F&& f, std::vector<Tensor<double>> inputs, GradCheckOptions opt = {}) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> out = f();
    if (out.numel() != 1) {
      throw ParameterError("gradcheck: function output has shape " + to_string(out.shape()) +
                           ", expected a scalar");
    }
    tape.backward(out);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  std::uint64_t base_print = 0;
  auto evaluate = [&](std::uint64_t* print) {
    NoGradScope<double> off;
    if (!print) return f().item();
    BranchTrace trace;
    const double v = f().item();
    *print = trace.fingerprint();
    return v;
  };
  const double f0 = evaluate(opt.avoid_kinks ? &base_print : nullptr);
  const double floor = opt.roundoff_ulps * std::numeric_limits<double>::epsilon() * std::abs(f0) / opt.eps;

  GradCheckResult result;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    const bool subset = opt.max_coords_per_input && coords.size() > opt.max_coords_per_input;
    if (subset) std::shuffle(coords.begin(), coords.end(), rng);
    std::size_t measured = 0;
    for (std::size_t i : coords) {
      if (subset && measured == opt.max_coords_per_input) break;
      std::uint64_t print_plus = 0, print_minus = 0;
      std::uint64_t* pp = opt.avoid_kinks ? &print_plus : nullptr;
      std::uint64_t* pm = opt.avoid_kinks ? &print_minus : nullptr;
      const double saved = t[i];
      t[i] = saved + opt.eps;
      const double plus = evaluate(pp);
      t[i] = saved - opt.eps;
      const double minus = evaluate(pm);
      t[i] = saved;
      if (opt.avoid_kinks && (print_plus != base_print || print_minus != base_print)) {
        ++result.coords_skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2 * opt.eps);
      if (std::abs(analytic[k][i]) < floor && std::abs(numeric) < floor) {
        ++result.coords_below_roundoff;
        continue;
      }
      ++measured;
      const double err = gradcheck_relative_error(analytic[k][i], numeric);
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = analytic[k][i];
        result.numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.drop_grad();
  return result;
}

}  // namespace dmac::ad
