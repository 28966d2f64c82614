#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "mwn/audit.hpp"
#include "mwn/gradcheck.hpp"

using namespace mwn;

TEST(FiniteDiff, Quadratic) {
  const Tensor g = finite_diff([](const Tensor& x) { return x[0] * x[0] + x[1] * x[1]; }, Tensor({2}, {1, 2}));
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, LinearIsExactToRounding) {
  const Tensor w({3}, {0.5, -2.0, 3.0});
  auto f = [&](const Tensor& x) { return w[0] * x[0] + w[1] * x[1] + w[2] * x[2]; };
  for (double eps : {1e-3, 1e-5, 1e-1}) {
    const Tensor g = finite_diff(f, Tensor({3}, {0.1, 0.2, 0.3}), eps);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], w[i], 1e-9) << "eps " << eps;
  }
}

TEST(FiniteDiff, AbortsOnNonFiniteValues) {
  auto f = [](const Tensor& x) { return std::log(x[0]); };
  EXPECT_THROW(finite_diff(f, Tensor({1}, {0.0})), NonFiniteEvaluation);
}

TEST(GradComparison, AbsoluteFallbackNearZero) {
  GradComparison c("x", {}, false);
  c.compare(Tensor({2}, {1e-12, 1.0}), Tensor({2}, {3e-12, 1.0 + 5e-5}));
  EXPECT_TRUE(c.report().pass);
  GradComparison d("y", {}, false);
  d.compare(Tensor({1}, {1.0}), Tensor({1}, {1.001}));
  EXPECT_FALSE(d.report().pass);
}

TEST(CheckAll, EveryOpPassesForTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& r : check_all(seed)) {
      EXPECT_TRUE(r.pass) << r.op << " seed " << seed << " rel " << r.max_rel_error << " abs " << r.max_abs_error;
      EXPECT_GT(r.checked, 0u) << r.op;
    }
  }
}

TEST(CheckAll, ListsEveryOpOnceInNameOrder) {
  const auto reports = check_all(3);
  std::vector<std::string> names;
  for (const auto& r : reports) names.push_back(r.op);
  EXPECT_EQ(names, gradcheck_ops());
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  for (const char* required : {"conv2d", "fc", "relu", "global_max_pool", "roi_avg_pool", "apply_masks",
                               "softmax_cross_entropy", "smooth_l1", "encode_l", "encode_g", "encode_lg",
                               "tiny_backbone"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), required), names.end()) << required;
  }
}

TEST(CheckAll, DeterministicForSeed) { EXPECT_EQ(check_all(7), check_all(7)); }

TEST(CheckAll, CorruptedBackwardFailsOnlyThatOp) {
  for (const std::string& op : gradcheck_ops()) {
    for (const auto& r : check_all(1, op)) EXPECT_EQ(r.pass, r.op != op) << "corrupting " << op << ", " << r.op;
  }
}

TEST(MergedGradcheck, MergesAcrossSeedsByName) {
  const auto merged = merged_gradcheck(0, 3);
  const auto single = check_all(0);
  ASSERT_EQ(merged.size(), single.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    EXPECT_EQ(merged[i].op, single[i].op);
    EXPECT_GE(merged[i].max_rel_error, single[i].max_rel_error);
    EXPECT_TRUE(merged[i].pass);
  }
}
