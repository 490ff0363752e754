#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "t2drisk/evaluation.hpp"

using namespace t2drisk;

TEST(Concordance, PerfectAndReversedRanking) {
  const std::vector<double> t{1, 2, 3, 4, 5};
  const std::vector<std::uint8_t> e{1, 1, 1, 1, 1};
  EXPECT_EQ(concordance_index(t, e, std::vector<double>{5, 4, 3, 2, 1}), 1.0);
  EXPECT_EQ(concordance_index(t, e, std::vector<double>{1, 2, 3, 4, 5}), 0.0);
}

TEST(Concordance, ConstantScoresGiveHalf) {
  const std::vector<double> t{1, 2, 2, 4, 5};
  const std::vector<std::uint8_t> e{1, 0, 1, 1, 0};
  EXPECT_EQ(concordance_index(t, e, std::vector<double>(5, 0.3)), 0.5);
}

TEST(Concordance, EightSubjectEnumeration) {
  const std::vector<double> t{3, 1, 4, 1, 5, 9, 2, 6};
  const std::vector<std::uint8_t> e{1, 0, 1, 1, 0, 1, 1, 0};
  const std::vector<double> s{0.2, 0.9, 0.1, 0.7, 0.2, 0.05, 0.6, 0.2};
  const auto fast = concordance_counts(t, e, s);
  const auto slow = oracle::harrell_pairs(t, e, s);
  EXPECT_EQ(fast.concordant, slow.concordant);
  EXPECT_EQ(fast.tied, slow.tied);
  EXPECT_EQ(fast.comparable, slow.comparable);
}

TEST(Concordance, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(1);
  const auto d = oracle::random_survival(rng, 300, 1, 30);
  std::vector<double> s(d.x.data(), d.x.data() + 300), ts;
  for (double v : s) ts.push_back(std::exp(3.0 * v) + 2.0);
  EXPECT_EQ(concordance_index(d.t, d.e, s), concordance_index(d.t, d.e, ts));
}

TEST(Concordance, NegatedScoresComplement) {
  std::mt19937_64 rng(2);
  const auto d = oracle::random_survival(rng, 200, 1, 15);
  std::vector<double> s(d.x.data(), d.x.data() + 200), neg;
  for (double v : s) neg.push_back(-v);
  EXPECT_NEAR(concordance_index(d.t, d.e, s) + concordance_index(d.t, d.e, neg), 1.0, 1e-15);
}

TEST(Concordance, NoComparablePairs) {
  const std::vector<double> t{1, 2};
  const std::vector<std::uint8_t> e{0, 0};
  EXPECT_THROW(concordance_index(t, e, std::vector<double>{1, 2}), DataError);
}

TEST(Bootstrap, ConstantMetricCollapses) {
  const auto ci = bootstrap_ci([](std::span<const std::size_t>) { return 0.73; }, 100, 50, 4);
  EXPECT_EQ(ci.low, 0.73);
  EXPECT_EQ(ci.high, 0.73);
  EXPECT_EQ(ci.rounds, 50u);
}

TEST(Bootstrap, DeterministicAndSeeded) {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto mean = [&](std::span<const std::size_t> rows) {
    double s = 0;
    for (auto r : rows) s += v[r];
    return s / static_cast<double>(rows.size());
  };
  const auto a = bootstrap_ci(mean, v.size(), 200, 7), b = bootstrap_ci(mean, v.size(), 200, 7);
  const auto c = bootstrap_ci(mean, v.size(), 200, 8);
  EXPECT_EQ(a.replicates, b.replicates);
  EXPECT_NE(a.replicates, c.replicates);
  EXPECT_LT(a.low, 49.5);
  EXPECT_GT(a.high, 49.5);
  EXPECT_THROW(bootstrap_ci(mean, v.size(), 1, 7), UsageError);
}

TEST(KaplanMeier, NoCensoringIsEmpiricalFraction) {
  const std::vector<double> t{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<std::uint8_t> e(10, 1);
  EXPECT_NEAR(kaplan_meier_at(t, e, 3.5), 0.7, 1e-15);
  EXPECT_THROW(kaplan_meier_at(t, e, 11.0), DataError);
  EXPECT_THROW(kaplan_meier_at(t, e, 0.0), UsageError);
}

TEST(KaplanMeier, HandComputedWithCensoring) {
  // Risk sets 5, 3, 1: S = (4/5)(2/3)(0/1) at t = 5.
  const std::vector<double> t{1, 2, 3, 4, 5};
  const std::vector<std::uint8_t> e{1, 0, 1, 0, 1};
  EXPECT_NEAR(kaplan_meier_at(t, e, 3.0), 0.8 * 2.0 / 3.0, 1e-15);
  EXPECT_EQ(kaplan_meier_at(t, e, 5.0), 0.0);
}

TEST(Calibration, ConstantPredictionGap) {
  // No censoring before the horizon: observed risk is the event fraction 0.3.
  std::vector<double> t;
  std::vector<std::uint8_t> e;
  for (int i = 0; i < 100; ++i) {
    t.push_back(i < 30 ? 1.0 + i * 0.01 : 12.0);
    e.push_back(i < 30 ? 1 : 0);
  }
  const auto off = calibration(std::vector<double>(100, 0.2), t, e, 10.0);
  EXPECT_NEAR(off.mean_observed, 0.3, 1e-12);
  EXPECT_NEAR(off.mean_predicted, 0.2, 1e-12);
  EXPECT_NEAR(off.ici, 0.1, 1e-9);
  EXPECT_NEAR(calibration(std::vector<double>(100, 0.3), t, e, 10.0).ici, 0.0, 1e-9);
}

TEST(Calibration, WellCalibratedSimulationHasSmallIci) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.02, 0.4);
  std::vector<double> p, t;
  std::vector<std::uint8_t> e;
  for (int i = 0; i < 20000; ++i) {
    const double pi = u(rng);
    const bool event = std::bernoulli_distribution(pi)(rng);
    p.push_back(pi);
    t.push_back(event ? 5.0 : 11.0);
    e.push_back(event);
  }
  const auto r = calibration(p, t, e, 10.0);
  EXPECT_LT(r.ici, 0.01);
  EXPECT_FALSE(r.curve.empty());
  const auto shifted_p = [&] {
    auto q = p;
    for (double& v : q) v = std::min(1.0, v * 1.5);
    return q;
  }();
  EXPECT_GT(calibration(shifted_p, t, e, 10.0).ici, 0.05);
}

TEST(Calibration, RejectsBadArguments) {
  const std::vector<double> t{1, 2};
  const std::vector<std::uint8_t> e{1, 0};
  EXPECT_THROW(calibration(std::vector<double>{0.1}, t, e, 1.0), UsageError);
  EXPECT_THROW(calibration(std::vector<double>{0.1, 0.2}, t, e, -1.0), UsageError);
}
