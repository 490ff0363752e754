#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "t2drisk/cox.hpp"

using namespace t2drisk;

namespace {

EncodedCohort cohort_of(const Eigen::MatrixXd& x, std::vector<double> t, std::vector<std::uint8_t> e,
                        bool continuous = false) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j));
  return make_cohort(names, names, std::vector<bool>(names.size(), continuous), x, std::move(t),
                     std::move(e));
}

EncodedCohort random_cohort(std::uint64_t seed, std::size_t n, Eigen::Index p, double effect) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::exponential_distribution<double> expo(1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
  std::vector<double> t;
  std::vector<std::uint8_t> e;
  for (std::size_t i = 0; i < n; ++i) {
    double lp = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      x(static_cast<Eigen::Index>(i), j) = normal(rng);
      lp += effect * x(static_cast<Eigen::Index>(i), j);
    }
    const double ti = expo(rng) / std::exp(lp), ci = 2.0 * expo(rng);
    t.push_back(std::min(ti, ci));
    e.push_back(ti <= ci ? 1 : 0);
  }
  return cohort_of(x, t, e, true);
}

}  // namespace

TEST(PartialLikelihood, ThreeDistinctEventsAtZero) {
  Eigen::MatrixXd x(3, 1);
  x << 0.3, -1.0, 2.0;
  const PartialLikelihood lik(x, {1, 2, 3}, {1, 1, 1});
  EXPECT_NEAR(lik.evaluate(Eigen::VectorXd::Zero(1)).value, std::log(6.0), 1e-14);
}

TEST(PartialLikelihood, SingleSubjectIsZero) {
  Eigen::MatrixXd x(1, 2);
  x << 0.7, -0.2;
  const PartialLikelihood lik(x, {4.0}, {1});
  Eigen::VectorXd b(2);
  b << 1.3, 2.1;
  EXPECT_NEAR(lik.evaluate(b).value, 0.0, 1e-14);
}

TEST(PartialLikelihood, MatchesDirectSummationWithTies) {
  Eigen::MatrixXd x(6, 2);
  x << 0.5, 1, -1.2, 0, 0.3, 1, 2.0, 0, -0.7, 1, 0.1, 0;
  const std::vector<double> t{2, 2, 3, 5, 5, 5};
  const std::vector<std::uint8_t> e{1, 1, 0, 1, 0, 1};
  const PartialLikelihood lik(x, t, e);
  Eigen::VectorXd b(2);
  b << 0.4, -0.9;
  const auto v = lik.evaluate(b, true);
  EXPECT_NEAR(v.value, oracle::neg_log_pl(x, t, e, b), 1e-12);
  auto f = [&](const Eigen::VectorXd& beta) { return oracle::neg_log_pl(x, t, e, beta); };
  EXPECT_LT(oracle::max_rel_error(v.gradient, oracle::numeric_gradient(f, b)), 1e-8);
}

TEST(PartialLikelihood, HessianSymmetricPsdAndMatchesGradient) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = oracle::random_survival(rng, 40, 3, 8);
    const PartialLikelihood lik(d.x, d.t, d.e);
    Eigen::VectorXd b = Eigen::VectorXd::Random(3);
    const auto v = lik.evaluate(b, true);
    EXPECT_LT((v.hessian - v.hessian.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v.hessian);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    for (Eigen::Index k = 0; k < 3; ++k) {
      auto gk = [&](const Eigen::VectorXd& beta) { return lik.evaluate(beta).gradient[k]; };
      const Eigen::VectorXd row = oracle::numeric_gradient(gk, b);
      EXPECT_LT(oracle::max_rel_error(v.hessian.row(k).transpose().eval(), row), 1e-6);
    }
  }
}

TEST(Fit, SymmetricDesignGivesZero) {
  Eigen::MatrixXd x(8, 1);
  x << 1, -1, 1, -1, 1, -1, 1, -1;
  const auto r = fit(cohort_of(x, {1, 1, 2, 2, 3, 3, 4, 4}, {1, 1, 1, 1, 0, 0, 1, 1}));
  EXPECT_TRUE(r.diagnostics.converged);
  EXPECT_NEAR(r.model.coefficients[0], 0.0, 1e-10);
}

TEST(Fit, MatchesGoldenSectionMinimum) {
  std::mt19937_64 rng(5);
  const auto d = oracle::random_survival(rng, 20, 1, 12);
  const auto r = fit(cohort_of(d.x, d.t, d.e));
  const double ref = oracle::golden_section(
      [&](double b) { return oracle::neg_log_pl(d.x, d.t, d.e, Eigen::VectorXd::Constant(1, b)); },
      -10.0, 10.0, 1e-12);
  EXPECT_NEAR(r.model.coefficients[0], ref, 1e-6);
}

TEST(Fit, RecoversSimulatedEffects) {
  const auto r = fit(random_cohort(3, 4000, 2, 0.5));
  // Standardized columns have SD ~1, so coefficients stay near the truth.
  for (double b : r.model.coefficients) EXPECT_NEAR(b, 0.5, 0.08);
  const auto& d = r.diagnostics;
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(d.ci95_low[k], r.model.coefficients[k] - 1.959963984540054 * d.standard_errors[k], 1e-12);
    EXPECT_GT(d.neg_log2_p[k], 50.0);
  }
}

TEST(Fit, StandardErrorsFromInverseInformation) {
  const auto c = random_cohort(4, 500, 2, 0.3);
  const auto r = fit(c);
  Eigen::VectorXd b(2);
  b << r.model.coefficients[0], r.model.coefficients[1];
  const Eigen::MatrixXd cov = PartialLikelihood(c).evaluate(b, true).hessian.inverse();
  EXPECT_NEAR(r.diagnostics.standard_errors[0], std::sqrt(cov(0, 0)), 1e-10);
  EXPECT_NEAR(r.diagnostics.standard_errors[1], std::sqrt(cov(1, 1)), 1e-10);
}

TEST(Fit, SeparationIsReported) {
  Eigen::MatrixXd x(6, 1);
  x << 6, 5, 4, 3, 2, 1;
  EXPECT_THROW(fit(cohort_of(x, {1, 2, 3, 4, 5, 6}, {1, 1, 1, 1, 1, 1})), NumericError);
  EXPECT_NO_THROW(fit(cohort_of(x, {1, 2, 3, 4, 5, 6}, {1, 1, 1, 1, 1, 1}), {.ridge = 1.0}));
}

TEST(Fit, ZeroEventsRejected) {
  Eigen::MatrixXd x(4, 1);
  x << 1, 0, 1, 0;
  EXPECT_THROW(fit(cohort_of(x, {1, 2, 3, 4}, {0, 0, 0, 0})), DataError);
}

TEST(Fit, RidgeShrinks) {
  const auto c = random_cohort(6, 300, 3, 0.6);
  const auto plain = fit(c), ridged = fit(c, {.ridge = 20.0});
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return s;
  };
  EXPECT_LT(norm(ridged.model.coefficients), norm(plain.model.coefficients));
  EXPECT_THROW(fit(c, {.ridge = -1.0}), UsageError);
}

TEST(Fit, InvariantToAffineFeatureTransform) {
  const auto c = random_cohort(7, 400, 2, 0.4);
  Eigen::MatrixXd raw = c.raw_matrix();
  raw.col(0) = (raw.col(0).array() * 3.0 + 7.0).matrix();
  const auto shifted = cohort_of(raw, c.times, c.events, true);
  const auto a = predict_risk(fit(c).model, c, 1.0);
  const auto b = predict_risk(fit(shifted).model, shifted, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-10);
}

TEST(Prediction, UsesModelScalingForForeignCohorts) {
  const auto c = random_cohort(8, 400, 2, 0.4);
  const auto m = fit(c).model;
  const auto other = rescale(c, {{1.0, 2.0}, {-3.0, 0.5}});
  const auto a = linear_predictor(m, c), b = linear_predictor(m, other);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-10);
}

TEST(Baseline, CensoredFirstThenEvent) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
  const auto h = breslow_baseline(cohort_of(x, {1, 2}, {0, 1}), Eigen::VectorXd::Zero(1));
  EXPECT_EQ(h.at(1.5), 0.0);
  EXPECT_NEAR(h.at(2.0), 1.0, 1e-15);
  EXPECT_THROW((void)h.at(2.5), UsageError);
}

TEST(Baseline, ReducesToNelsonAalenAtZero) {
  std::mt19937_64 rng(9);
  const auto d = oracle::random_survival(rng, 60, 1, 10);
  const auto h = breslow_baseline(cohort_of(d.x, d.t, d.e), Eigen::VectorXd::Zero(1));
  double na = 0.0;
  for (int s = 1; s <= 10; ++s) {
    double at_risk = 0, died = 0;
    for (std::size_t i = 0; i < d.t.size(); ++i) {
      at_risk += d.t[i] >= s;
      died += d.t[i] == s && d.e[i];
    }
    if (at_risk > 0) na += died / at_risk;
    if (s <= h.max_time) {
      EXPECT_NEAR(h.at(s), na, 1e-12) << "t=" << s;
    }
  }
}

TEST(Prediction, RiskFromCumulativeHazard) {
  CoxModel m;
  m.baseline.table = {{0.0, 0.0}, {10.0, 0.03}};
  m.baseline.max_time = 10.0;
  EXPECT_NEAR(risk_from_lp(m, 0.0, 10.0), 1.0 - std::exp(-0.03), 1e-15);
  EXPECT_NEAR(risk_from_lp(m, 0.0, 10.0), 0.02955, 1e-5);
  EXPECT_NEAR(risk_from_lp(m, std::log(2.0), 10.0), 1.0 - std::exp(-0.06), 1e-15);
}

TEST(Prediction, MonotoneInHorizon) {
  const auto c = random_cohort(10, 300, 2, 0.5);
  const auto m = fit(c).model;
  const auto early = predict_risk(m, c, 0.2), late = predict_risk(m, c, 0.8);
  for (std::size_t i = 0; i < early.size(); ++i) {
    ASSERT_LE(early[i], late[i]);
    ASSERT_GE(early[i], 0.0);
    ASSERT_LE(late[i], 1.0);
  }
}

TEST(Serialization, RoundTrip) {
  const auto m = fit(random_cohort(12, 200, 3, 0.3)).model;
  const auto back = cox_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back, m);
  nlohmann::json bad = to_json(m);
  bad["format"] = "something else";
  EXPECT_THROW(cox_model_from_json(bad), DataError);
}

TEST(Wald, NegLog2P) {
  EXPECT_NEAR(wald_neg_log2_p(1.959963984540054), -std::log2(0.05), 1e-9);
  EXPECT_NEAR(wald_neg_log2_p(0.0), 0.0, 1e-15);
  const double huge = wald_neg_log2_p(60.0);
  EXPECT_TRUE(std::isfinite(huge));
  EXPECT_GT(huge, wald_neg_log2_p(40.0));
}
