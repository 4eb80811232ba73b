#pragma once

// Self-verification suite: central-difference gradient checks for every
// differentiable op and for the assembled training losses, plus exact
// oracle comparisons for the correlation layer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dmac/adversary/losses.hpp"
#include "dmac/adversary/networks.hpp"
#include "dmac/autodiff/gradcheck.hpp"
#include "dmac/autodiff/ops.hpp"
#include "dmac/autodiff/spectral.hpp"
#include "dmac/core/correlation.hpp"
#include "dmac/core/dmac_net.hpp"

namespace dmac::cli {

using ad::Shape;
using ad::Tensor;
using T = Tensor<double>;

struct CheckRow {
  std::string name;
  std::string metric;  // "max_rel_error" or "max_abs_diff"
  double value = 0;
  double tolerance = 0;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  std::size_t seeds = 100;
  double op_tolerance = 1e-6;
  double model_tolerance = 1e-4;
  bool include_model = true;
  // Adds a relu whose adjoint has the wrong sign; the suite must flag it.
  bool inject_wrong_sign = false;
  std::uint64_t seed = 20240601;
};

namespace detail {

using Rng = std::mt19937_64;

inline T uniform(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Uniform in [-hi, -lo] U [lo, hi]; keeps inputs of kinked ops off the kink.
inline T away_from_zero(Shape shape, Rng& rng, double lo = 0.05, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  T t(std::move(shape));
  for (auto& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

// Scalar <out, r> for a fixed random r, so no coordinate gets a symmetric
// (and possibly vanishing) gradient.
inline T project(const T& out, const T& r) { return ad::sum(ad::mul(out, r)); }

struct Problem {
  std::vector<T> inputs;
  std::function<T()> f;
};

using Builder = std::function<Problem(Rng&)>;

template <typename Op>
Builder unary_case(Shape shape, Op op, bool kinked, double lo = -1, double hi = 1) {
  return [=](Rng& rng) {
    T x = kinked ? away_from_zero(shape, rng) : uniform(shape, rng, lo, hi);
    T r = uniform(op(x).shape(), rng);
    return Problem{{x}, [=] { return project(op(x), r); }};
  };
}

// relu with a negated adjoint, recorded under the real op name.
inline T wrong_sign_relu(const T& x) {
  T out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  if (auto* tape = ad::detail::recording<double>({&x})) {
    out.set_requires_grad(true);
    tape->record("relu", out, {x}, [out, x]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= x[i] > 0 ? dy[i] : 0.0;
    });
  }
  return out;
}

inline std::vector<std::pair<std::string, Builder>> op_cases(bool inject_wrong_sign) {
  std::vector<std::pair<std::string, Builder>> cases;
  auto conv_case = [](std::size_t h, std::size_t k, ad::Conv2dOptions opt) -> Builder {
    return [=](Rng& rng) {
      T x = uniform({1, 2, h, h}, rng), w = uniform({3, 2, k, k}, rng), b = uniform({3}, rng);
      T probe = ad::conv2d(x, w, b, opt);
      T r = uniform(probe.shape(), rng);
      return Problem{{x, w, b}, [=] { return project(ad::conv2d(x, w, b, opt), r); }};
    };
  };
  cases.emplace_back("conv2d(rate=1)", conv_case(5, 3, {.stride = 1, .padding = 1, .rate = 1}));
  cases.emplace_back("conv2d(rate=2)", conv_case(6, 3, {.stride = 1, .padding = 0, .rate = 2}));
  cases.emplace_back("conv2d(rate=3,pad=3)", conv_case(6, 3, {.stride = 1, .padding = 3, .rate = 3}));
  cases.emplace_back("conv2d(stride=2)", conv_case(6, 3, {.stride = 2, .padding = 1, .rate = 1}));
  cases.emplace_back("conv2d(1x1)", conv_case(4, 1, {}));
  cases.emplace_back("maxpool2d", unary_case({1, 2, 4, 4}, [](const T& x) { return ad::maxpool2d(x, 2, 2); }, false));
  cases.emplace_back("avgpool2d", unary_case({1, 2, 4, 4}, [](const T& x) { return ad::avgpool2d(x, 2, 2); }, false));
  for (auto mode : {ad::Mode::Train, ad::Mode::Eval}) {
    cases.emplace_back(mode == ad::Mode::Train ? "batchnorm2d(train)" : "batchnorm2d(eval)", [mode](Rng& rng) {
      T x = uniform({3, 2, 3, 3}, rng), g = uniform({2}, rng, 0.5, 1.5), b = uniform({2}, rng);
      T rm = uniform({2}, rng), rv = uniform({2}, rng, 0.5, 2);
      T r = uniform(x.shape(), rng);
      return Problem{{x, g, b}, [=] {
                       // Running buffers are copies so repeated evaluation is pure.
                       return project(ad::batchnorm2d(x, g, b, rm.clone(), rv.clone(), mode), r);
                     }};
    });
  }
  cases.emplace_back("relu", unary_case({2, 3, 2, 2}, [](const T& x) { return ad::relu(x); }, true));
  cases.emplace_back("leaky_relu", unary_case({2, 3, 2, 2}, [](const T& x) { return ad::leaky_relu(x); }, true));
  cases.emplace_back("sigmoid", unary_case({2, 3}, [](const T& x) { return ad::sigmoid(x); }, false, -3, 3));
  cases.emplace_back("log_clamped", unary_case({2, 3}, [](const T& x) { return ad::log_clamped(x); }, false, 0.2, 2));
  cases.emplace_back("min_zero", unary_case({2, 3}, [](const T& x) { return ad::min_zero(x); }, true));
  cases.emplace_back("scale", unary_case({4}, [](const T& x) { return ad::scale(x, -1.7); }, false));
  cases.emplace_back("add_scalar", unary_case({4}, [](const T& x) { return ad::add_scalar(x, 0.3); }, false));
  cases.emplace_back("sum", unary_case({5}, [](const T& x) { return ad::sum(x); }, false));
  cases.emplace_back("mean", unary_case({5}, [](const T& x) { return ad::mean(x); }, false));
  const auto softmax = [](const T& x) { return ad::softmax_channels(x); };
  cases.emplace_back("softmax_channels(rank4)", unary_case({2, 3, 2, 2}, softmax, false, -2, 2));
  cases.emplace_back("softmax_channels(rank2)", unary_case({3, 4}, softmax, false, -2, 2));
  cases.emplace_back("reshape", unary_case({2, 3, 2}, [](const T& x) { return ad::reshape(x, Shape{3, 4}); }, false));
  cases.emplace_back("flatten", unary_case({2, 3, 2, 2}, [](const T& x) { return ad::flatten(x); }, false));
  cases.emplace_back("gather_batch",
                     unary_case({3, 2}, [](const T& x) { return ad::gather_batch(x, {2, 0, 2}); }, false));
  cases.emplace_back("slice_batch", unary_case({4, 2}, [](const T& x) { return ad::slice_batch(x, 1, 2); }, false));
  cases.emplace_back("select_channel",
                     unary_case({2, 3, 2, 2}, [](const T& x) { return ad::select_channel(x, 1); }, false));
  auto binary = [](Shape sa, Shape sb, auto op, bool kinked) -> Builder {
    return [=](Rng& rng) {
      T a = uniform(sa, rng), b = kinked ? a.clone() : uniform(sb, rng);
      if (kinked) {
        T d = away_from_zero(sa, rng);
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] += d[i];
      }
      T r = uniform(op(a, b).shape(), rng);
      return Problem{{a, b}, [=] { return project(op(a, b), r); }};
    };
  };
  cases.emplace_back("add", binary({2, 3}, {2, 3}, [](const T& a, const T& b) { return ad::add(a, b); }, false));
  cases.emplace_back("mul", binary({2, 3}, {2, 3}, [](const T& a, const T& b) { return ad::mul(a, b); }, false));
  cases.emplace_back("abs_diff",
                     binary({2, 3}, {2, 3}, [](const T& a, const T& b) { return ad::abs_diff(a, b); }, true));
  cases.emplace_back("concat_batch", binary({1, 2, 2, 2}, {2, 2, 2, 2},
                                            [](const T& a, const T& b) { return ad::concat_batch<double>({a, b}); },
                                            false));
  cases.emplace_back("concat_channels",
                     binary({2, 1, 2, 2}, {2, 3, 2, 2},
                            [](const T& a, const T& b) { return ad::concat_channels<double>({a, b, a}); }, false));
  cases.emplace_back("broadcast_mask_mul", binary({2, 1, 3, 3}, {2, 3, 3, 3}, [](const T& m, const T& x) { return ad::broadcast_mask_mul(m, x); }, false));
  cases.emplace_back("linear", [](Rng& rng) {
    T x = uniform({3, 5}, rng), w = uniform({4, 5}, rng), b = uniform({4}, rng), r = uniform({3, 4}, rng);
    return Problem{{x, w, b}, [=] { return project(ad::linear(x, w, b), r); }};
  });
  cases.emplace_back("spectral_normalize", [](Rng& rng) {
    T w = uniform({4, 2, 3, 3}, rng), r = uniform(w.shape(), rng);
    auto state = std::make_shared<ad::SpectralState<double>>(ad::make_spectral_state(w, rng));
    state->frozen = true;
    return Problem{{w}, [=] { return project(ad::spectral_normalize(w, *state), r); }};
  });
  cases.emplace_back("correlate", [](Rng& rng) {
    std::uniform_int_distribution<std::size_t> ext(1, 3), dep(1, 4);
    const std::size_t d = dep(rng), h = ext(rng), w = ext(rng);
    T a = uniform({2, d, h, w}, rng), b = uniform({2, d, h, w}, rng);
    T r = uniform(core::correlate(a, b).shape(), rng);
    return Problem{{a, b}, [=] { return project(core::correlate(a, b), r); }};
  });
  cases.emplace_back("correlate(self)", [](Rng& rng) {
    T a = uniform({1, 3, 3, 2}, rng);
    T r = uniform(core::correlate(a, a).shape(), rng);
    return Problem{{a}, [=] { return project(core::correlate(a, a), r); }};
  });
  if (inject_wrong_sign) {
    cases.emplace_back("injected wrong-sign adjoint", unary_case({2, 3}, wrong_sign_relu, true));
  }
  return cases;
}

inline CheckRow finish_row(std::string name, double value, double tol, const std::string& detail,
                           const std::string& metric = "max_rel_error") {
  const bool ok = metric == "max_abs_diff" ? value <= tol : value < tol;
  return CheckRow{std::move(name), metric, value, tol, ok, detail};
}

inline std::string describe(const ad::GradCheckResult& r, const std::vector<std::string>& ops) {
  std::string s = "input " + std::to_string(r.worst_input) + "[" + std::to_string(r.worst_index) +
                  "] analytic " + std::to_string(r.analytic) + " numeric " + std::to_string(r.numeric);
  s += "; " + std::to_string(r.coords_checked) + " coords";
  if (r.coords_skipped) s += ", " + std::to_string(r.coords_skipped) + " skipped at kinks";
  if (r.coords_below_roundoff) s += ", " + std::to_string(r.coords_below_roundoff) + " below roundoff";
  if (!ops.empty()) {
    s += "; ops:";
    for (const auto& op : ops) s += " " + op;
  }
  return s;
}

// Names of the ops a problem records, for failure reports.
inline std::vector<std::string> recorded_ops(Problem& p) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  for (auto& t : p.inputs) t.set_requires_grad(true);
  p.f();
  std::vector<std::string> ops;
  for (const auto& e : tape.entries()) {
    if (std::find(ops.begin(), ops.end(), e.op) == ops.end()) ops.push_back(e.op);
  }
  return ops;
}

}  // namespace detail

// correlate vs correlate_naive on random instances up to 6 x 6 x 8.
inline CheckRow correlation_oracle_check(std::size_t instances, std::uint64_t seed) {
  detail::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> ext(1, 6), dep(1, 8), top(1, 8);
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d = dep(rng), h = ext(rng), w = ext(rng), t = top(rng);
    T a = detail::uniform({1, d, h, w}, rng), b = detail::uniform({1, d, h, w}, rng);
    T fast = core::correlate(a, b, t), naive = core::correlate_naive(a, b, t);
    for (std::size_t k = 0; k < fast.numel(); ++k) worst = std::max(worst, std::abs(fast[k] - naive[k]));
  }
  return detail::finish_row("correlate vs correlate_naive", worst, 0.0,
                            std::to_string(instances) + " random instances", "max_abs_diff");
}

// Gradient of the assembled losses on a two-pair toy batch, probing a
// deterministic subset of parameter coordinates.
inline std::vector<CheckRow> model_checks(double tol, std::uint64_t seed) {
  std::vector<CheckRow> rows;
  detail::Rng rng(seed);
  core::DmacNet<double> net(core::DmacConfig::toy(), seed + 1);
  adversary::DetNet<double> det(net.config().feature_size(), seed + 2);
  const std::size_t S = net.config().input_size, s = net.config().feature_size();

  T raw_a = detail::uniform({2, 3, S, S}, rng, 0, 255), raw_b = detail::uniform({2, 3, S, S}, rng, 0, 255);
  T img_a = net.normalize(raw_a), img_b = net.normalize(raw_b);
  T pooled_a = adversary::pool_image(ad::scale(raw_a, 1.0 / 255)), pooled_b = adversary::pool_image(ad::scale(raw_b, 1.0 / 255));
  T labels_a({2, s, s}), labels_b({2, s, s});
  std::bernoulli_distribution coin(0.3);
  for (auto& v : labels_a.values()) v = coin(rng) ? 1.0 : 0.0;
  for (auto& v : labels_b.values()) v = coin(rng) ? 1.0 : 0.0;
  T gt_a = adversary::one_hot_mask(labels_a), gt_b = adversary::one_hot_mask(labels_b);
  T pair_labels({2, 2}, std::vector<double>{1, 0, 0, 1});

  auto pick = [](const ad::ParameterSet<double>& ps, std::initializer_list<const char*> names) {
    std::vector<T> out;
    for (const char* n : names) out.push_back(ps.get(n));
    return out;
  };
  const auto dmac_params = pick(net.parameters(), {"backbone.block1.conv1.weight", "backbone.block3.conv2.weight",
                                                   "backbone.block5.conv3.weight", "backbone.block5.conv3.bias",
                                                   "head.rate1.atrous.weight", "head.rate8.atrous.weight",
                                                   "head.rate2.mix.weight", "head.rate4.bn.gamma",
                                                   "head.rate1.out.weight", "head.rate2.out.bias"});
  ad::GradCheckOptions opt;
  opt.max_coords_per_input = 4;
  opt.seed = seed;
  opt.avoid_kinks = true;
  opt.roundoff_ulps = 1e4;

  for (auto variant : {adversary::LossVariant::Bce, adversary::LossVariant::Hinge}) {
    adversary::DisNet<double> dis(s, variant, seed + 3);
    dis.freeze_spectral(true);
    const adversary::LossWeights w{0.01, 0.01, variant};
    auto total = [&] {
      auto masks = net.forward(img_a, img_b, ad::Mode::Train);
      T ce = adversary::spatial_ce(masks, gt_a, gt_b);
      T ma = adversary::mask_image(masks.y_a, pooled_a), mb = adversary::mask_image(masks.y_b, pooled_b);
      T det_g = adversary::det_loss_G(det.forward(ma, mb, ad::Mode::Train), pair_labels);
      T dis_g = adversary::dis_loss_G<double>({dis.forward(ma), dis.forward(mb)}, variant);
      return adversary::dmac_total_loss(ce, det_g, dis_g, w);
    };
    auto r = ad::gradcheck(total, dmac_params, opt);
    rows.push_back(detail::finish_row("total loss (" + adversary::to_string(variant) + ") wrt network parameters",
                                      r.max_rel_error, tol, detail::describe(r, {})));

    const auto dis_params = pick(dis.parameters(), {"dis.conv1.weight", "dis.conv3.weight", "dis.conv4.bias", "dis.fc.weight", "dis.fc.bias"});
    core::MaskPair<double> fixed;
    {
      ad::NoGradScope<double> off;
      fixed = net.forward(img_a, img_b, ad::Mode::Eval);
    }
    auto dis_d = [&] {
      T real_a = adversary::mask_image(ad::reshape(labels_a, Shape{2, 1, s, s}), pooled_a);
      T real_b = adversary::mask_image(ad::reshape(labels_b, Shape{2, 1, s, s}), pooled_b);
      T fake_a = adversary::mask_image(fixed.y_a, pooled_a), fake_b = adversary::mask_image(fixed.y_b, pooled_b);
      return adversary::dis_loss_D<double>({dis.forward(real_a), dis.forward(real_b)},
                                           {dis.forward(fake_a), dis.forward(fake_b)}, variant);
    };
    r = ad::gradcheck(dis_d, dis_params, opt);
    rows.push_back(detail::finish_row("critic loss (" + adversary::to_string(variant) + ") wrt critic parameters",
                                      r.max_rel_error, tol, detail::describe(r, {})));
    dis.parameters().zero_grad();
  }

  const auto det_params = pick(det.parameters(), {"det.conv1.weight", "det.conv2.bn.gamma", "det.conv4.weight", "det.fc1.weight", "det.fc2.bias"});
  core::MaskPair<double> fixed;
  {
    ad::NoGradScope<double> off;
    fixed = net.forward(img_a, img_b, ad::Mode::Eval);
  }
  auto det_d = [&] {
    T real_a = adversary::mask_image(ad::reshape(labels_a, Shape{2, 1, s, s}), pooled_a);
    T real_b = adversary::mask_image(ad::reshape(labels_b, Shape{2, 1, s, s}), pooled_b);
    T fake_a = adversary::mask_image(fixed.y_a, pooled_a), fake_b = adversary::mask_image(fixed.y_b, pooled_b);
    return adversary::det_loss_D(det.forward(real_a, real_b, ad::Mode::Train),
                                 det.forward(fake_a, fake_b, ad::Mode::Train), pair_labels);
  };
  auto r = ad::gradcheck(det_d, det_params, opt);
  rows.push_back(detail::finish_row("detector loss wrt detector parameters", r.max_rel_error, tol,
                                    detail::describe(r, {})));
  net.parameters().zero_grad();
  det.parameters().zero_grad();
  return rows;
}

inline std::vector<CheckRow> run_verification_suite(const SuiteOptions& opt) {
  std::vector<CheckRow> rows;
  rows.push_back(correlation_oracle_check(100, opt.seed));
  for (auto& [name, build] : detail::op_cases(opt.inject_wrong_sign)) {
    detail::Rng rng(opt.seed ^ std::hash<std::string>{}(name));
    ad::GradCheckResult worst;
    std::vector<std::string> ops;
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      auto problem = build(rng);
      auto r = ad::gradcheck(problem.f, problem.inputs);
      if (s == 0 || r.max_rel_error > worst.max_rel_error) {
        worst = r;
        ops = detail::recorded_ops(problem);
        for (auto& t : problem.inputs) t.drop_grad();
      }
    }
    rows.push_back(detail::finish_row(name, worst.max_rel_error, opt.op_tolerance, detail::describe(worst, ops)));
  }
  if (opt.include_model) {
    for (auto& row : model_checks(opt.model_tolerance, opt.seed)) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dmac::cli
