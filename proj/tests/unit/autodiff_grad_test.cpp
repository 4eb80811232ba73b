#include <gtest/gtest.h>

#include "dmac/autodiff/gradcheck.hpp"
#include "dmac/autodiff/ops.hpp"
#include "dmac/cli/verification.hpp"

using namespace dmac;
using namespace dmac::ad;

TEST(GradCheck, SquareAtThree) {
  Tensor<double> x({1}, 3.0);
  auto r = gradcheck([&] { return mul(x, x); }, {x});
  EXPECT_NEAR(r.analytic, 6.0, 1e-8);
  EXPECT_NEAR(r.numeric, 6.0, 1e-8);
}

TEST(GradCheck, NonScalarOutputRejected) {
  Tensor<double> x({2}, 1.0);
  EXPECT_THROW(gradcheck([&] { return scale(x, 2.0); }, {x}), ParameterError);
}

TEST(GradCheck, ActivationGradientsAtMinusOne) {
  Tensor<double> x({1}, -1.0);
  auto r = gradcheck([&] { return relu(x); }, {x});
  EXPECT_EQ(r.analytic, 0.0);
  EXPECT_NEAR(r.numeric, 0.0, 1e-10);
  r = gradcheck([&] { return leaky_relu(x); }, {x});
  EXPECT_NEAR(r.analytic, 0.2, 1e-12);
  EXPECT_NEAR(r.numeric, 0.2, 1e-8);
}

TEST(GradCheck, RateTwoConvolution) {
  std::mt19937_64 rng(21);
  auto x = cli::detail::uniform({1, 2, 6, 6}, rng);
  auto w = cli::detail::uniform({1, 2, 3, 3}, rng);
  auto r = gradcheck([&] { return sum(conv2d(x, w, Tensor<double>{}, {.stride = 1, .padding = 0, .rate = 2})); }, {x, w});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, EveryOperationOverManySeeds) {
  cli::SuiteOptions opt;
  opt.include_model = false;
  for (const auto& row : cli::run_verification_suite(opt)) {
    EXPECT_TRUE(row.passed) << row.name << ": " << row.value << " (" << row.detail << ")";
  }
}

TEST(GradCheck, WrongSignAdjointIsReportedWithOpName) {
  cli::SuiteOptions opt;
  opt.include_model = false;
  opt.seeds = 3;
  opt.inject_wrong_sign = true;
  auto rows = cli::run_verification_suite(opt);
  const auto& last = rows.back();
  EXPECT_FALSE(last.passed);
  EXPECT_NE(last.detail.find("relu"), std::string::npos);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) EXPECT_TRUE(rows[i].passed) << rows[i].name;
}

TEST(GradCheck, StencilAcrossReluKinkIsSkippedOnRequest) {
  Tensor<double> x({2}, std::vector<double>{4e-6, 0.5});
  auto f = [&] { return sum(relu(x)); };
  auto plain = gradcheck(f, {x});
  EXPECT_GT(plain.max_rel_error, 0.1);

  GradCheckOptions opt;
  opt.avoid_kinks = true;
  auto guarded = gradcheck(f, {x}, opt);
  EXPECT_EQ(guarded.coords_skipped, 1u);
  EXPECT_EQ(guarded.coords_checked, 1u);
  EXPECT_LT(guarded.max_rel_error, 1e-8);
}

TEST(GradCheck, BranchTraceSeesPoolingWinner) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto print = [&] {
    BranchTrace trace;
    maxpool2d(x, 2, 2);
    return trace.fingerprint();
  };
  const auto before = print();
  EXPECT_EQ(print(), before);
  x[0] = 5;
  EXPECT_NE(print(), before);
}

TEST(GradCheck, TinyGradientsBelowRoundoffAreSkipped) {
  Tensor<double> x({2}, std::vector<double>{1.0, 1.0});
  Tensor<double> w({2}, std::vector<double>{1e-12, 1.0});
  GradCheckOptions opt;
  opt.roundoff_ulps = 1e4;
  auto r = gradcheck([&] { return sum(mul(x, w)); }, {x}, opt);
  EXPECT_EQ(r.coords_below_roundoff, 1u);
  EXPECT_EQ(r.coords_checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, RoundoffFloorDoesNotHideWrongSign) {
  Tensor<double> x({1}, 2.0);
  GradCheckOptions opt;
  opt.roundoff_ulps = 1e4;
  auto r = gradcheck([&] { return cli::detail::wrong_sign_relu(x); }, {x}, opt);
  EXPECT_EQ(r.coords_below_roundoff, 0u);
  EXPECT_GT(r.max_rel_error, 0.5);
}
