#pragma once

// Cox proportional-hazards regression: Breslow-tied partial likelihood with
// exact derivatives, Newton fitting, Breslow baseline cumulative hazard and
// horizon risk prediction.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/error.hpp"

namespace t2drisk {

struct LikelihoodValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// Negative log partial likelihood of one data set, with the descending-time
/// ordering and tie groups computed once so repeated evaluations (Newton
/// iterations, finite differences) only pay for the sweep.
class PartialLikelihood {
 public:
  PartialLikelihood(Eigen::MatrixXd x, std::vector<double> times, std::vector<std::uint8_t> events)
      : x_(std::move(x)), times_(std::move(times)), events_(std::move(events)) {
    const auto n = times_.size();
    if (static_cast<std::size_t>(x_.rows()) != n || events_.size() != n)
      throw UsageError("design matrix and outcomes differ in length");
    if (n == 0) throw DataError("partial likelihood of an empty cohort");
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return times_[a] > times_[b]; });
    for (std::size_t k = 0; k < n;) {
      std::size_t e = k;
      while (e < n && times_[order_[e]] == times_[order_[k]]) ++e;
      groups_.push_back({k, e});
      k = e;
    }
    event_count_ = static_cast<std::size_t>(std::count(events_.begin(), events_.end(), 1));
  }

  explicit PartialLikelihood(const EncodedCohort& c)
      : PartialLikelihood(c.matrix, c.times, c.events) {}

  std::size_t rows() const { return times_.size(); }
  Eigen::Index cols() const { return x_.cols(); }
  std::size_t event_count() const { return event_count_; }
  const Eigen::MatrixXd& design() const { return x_; }

  /// value = -sum_{events i} [x_i b - log sum_{j: t_j >= t_i} exp(x_j b)].
  /// The Hessian is assembled as X' diag(w * A) X - sum_k d_k m_k m_k', where
  /// A_j accumulates d_k / S0_k over event times t_k <= t_j and m_k is the
  /// risk-set weighted mean covariate.
  LikelihoodValue evaluate(const Eigen::VectorXd& beta, bool with_hessian = true) const {
    if (event_count_ == 0) throw DataError("partial likelihood needs at least one event");
    if (beta.size() != x_.cols()) throw UsageError("coefficient vector has wrong length");
    if (!beta.allFinite()) throw NumericError("non-finite coefficients");
    const auto n = rows();
    const auto p = x_.cols();

    const Eigen::VectorXd eta = x_ * beta;
    if (!eta.allFinite())
      throw NumericError("linear predictor overflow; standardize the covariates");
    const double shift = p > 0 ? eta.maxCoeff() : 0.0;
    const Eigen::VectorXd w = (eta.array() - shift).exp().matrix();

    LikelihoodValue out;
    out.gradient = Eigen::VectorXd::Zero(p);
    if (with_hessian) out.hessian = Eigen::MatrixXd::Zero(p, p);

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    std::vector<double> increment(groups_.size(), 0.0);  // d_k / S0_k
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const auto [begin, end] = groups_[g];
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order_[k];
        s0 += w[i];
        s1.noalias() += w[i] * x_.row(static_cast<Eigen::Index>(i)).transpose();
      }
      std::size_t d = 0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order_[k];
        if (!events_[i]) continue;
        ++d;
        out.value -= eta[i];
        out.gradient.noalias() -= x_.row(static_cast<Eigen::Index>(i)).transpose();
      }
      if (d == 0) continue;
      const double dd = static_cast<double>(d);
      out.value += dd * (std::log(s0) + shift);
      const Eigen::VectorXd mean = s1 / s0;
      out.gradient.noalias() += dd * mean;
      increment[g] = dd / s0;
      if (with_hessian) out.hessian.selfadjointView<Eigen::Lower>().rankUpdate(mean, -dd);
    }
    if (!std::isfinite(out.value) || !out.gradient.allFinite())
      throw NumericError("partial likelihood is not finite; standardize the covariates");

    if (with_hessian) {
      // Ascending sweep: subject j belongs to the risk set of every event time <= t_j.
      Eigen::VectorXd weight(static_cast<Eigen::Index>(n));
      double acc = 0.0;
      for (std::size_t g = groups_.size(); g-- > 0;) {
        acc += increment[g];
        const auto [begin, end] = groups_[g];
        for (std::size_t k = begin; k < end; ++k) weight[order_[k]] = w[order_[k]] * acc;
      }
      Eigen::MatrixXd quad = Eigen::MatrixXd::Zero(p, p);
      quad.selfadjointView<Eigen::Lower>().rankUpdate(
          x_.transpose() * weight.cwiseSqrt().asDiagonal());
      out.hessian += quad;
      out.hessian = out.hessian.selfadjointView<Eigen::Lower>();
    }
    return out;
  }

 private:
  struct Group {
    std::size_t begin, end;
  };
  Eigen::MatrixXd x_;
  std::vector<double> times_;
  std::vector<std::uint8_t> events_;
  std::vector<std::size_t> order_;  // descending time
  std::vector<Group> groups_;       // runs of equal time in `order_`
  std::size_t event_count_ = 0;
};

inline LikelihoodValue neg_log_partial_likelihood(const Eigen::VectorXd& beta,
                                                  const EncodedCohort& cohort,
                                                  bool with_hessian = true) {
  return PartialLikelihood(cohort).evaluate(beta, with_hessian);
}

// ---------------------------------------------------------------------------
// Model

struct BaselinePoint {
  double time = 0.0;
  double cumhaz = 0.0;

  friend bool operator==(const BaselinePoint&, const BaselinePoint&) = default;
};

/// Right-continuous step function H0(t), starting at (0, 0). `max_time` is
/// the largest follow-up time of the fitting data, beyond which the table
/// says nothing.
struct BaselineHazard {
  std::vector<BaselinePoint> table{{0.0, 0.0}};
  double max_time = 0.0;

  /// Last tabulated value at or before t.
  double at(double t) const {
    if (t > max_time) throw UsageError("time beyond baseline hazard coverage");
    auto it = std::upper_bound(table.begin(), table.end(), t,
                               [](double v, const BaselinePoint& b) { return v < b.time; });
    if (it == table.begin()) return 0.0;
    return std::prev(it)->cumhaz;
  }

  friend bool operator==(const BaselineHazard&, const BaselineHazard&) = default;
};

struct FitDiagnostics {
  bool converged = false;
  int iterations = 0;
  double final_loglik = 0.0;  // log partial likelihood at the optimum
  std::vector<double> standard_errors;
  std::vector<double> ci95_low;
  std::vector<double> ci95_high;
  std::vector<double> neg_log2_p;

  friend bool operator==(const FitDiagnostics&, const FitDiagnostics&) = default;
};

struct CoxModel {
  std::vector<std::string> feature_names;
  std::vector<double> coefficients;   // per standardized unit
  std::vector<bool> continuous;
  std::vector<ColumnScaling> scaling;
  BaselineHazard baseline;
  double horizon = 10.0;
  std::optional<FitDiagnostics> diagnostics;

  friend bool operator==(const CoxModel&, const CoxModel&) = default;
};

/// H0(t) = sum over event times t_i <= t of d_i / sum_{j at risk} exp(x_j b).
inline BaselineHazard breslow_baseline(const EncodedCohort& cohort, const Eigen::VectorXd& beta) {
  if (beta.size() != static_cast<Eigen::Index>(cohort.cols()))
    throw UsageError("coefficient vector has wrong length");
  const auto n = cohort.rows();
  if (n == 0) throw DataError("baseline hazard of an empty cohort");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cohort.times[a] > cohort.times[b]; });
  const Eigen::VectorXd eta = cohort.cols() > 0 ? Eigen::VectorXd(cohort.matrix * beta)
                                                : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

  std::vector<BaselinePoint> jumps;  // (time, d / S0), descending time
  double s0 = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    const double t = cohort.times[order[k]];
    std::size_t d = 0;
    for (; e < n && cohort.times[order[e]] == t; ++e) {
      s0 += std::exp(eta[static_cast<Eigen::Index>(order[e])]);
      d += cohort.events[order[e]];
    }
    if (d > 0) jumps.push_back({t, static_cast<double>(d) / s0});
    k = e;
  }
  if (!std::isfinite(s0)) throw NumericError("risk-set sum overflow; standardize the covariates");

  BaselineHazard h;
  h.max_time = cohort.times[order.front()];
  double acc = 0.0;
  for (auto it = jumps.rbegin(); it != jumps.rend(); ++it) {
    acc += it->cumhaz;
    if (it->time == 0.0)
      h.table.front().cumhaz = acc;
    else
      h.table.push_back({it->time, acc});
  }
  return h;
}

// ---------------------------------------------------------------------------
// Fitting

/// Two-sided 95% normal quantile.
inline constexpr double kZ975 = 1.959963984540054;

struct FitOptions {
  double tol = 1e-8;
  int max_iter = 100;
  double ridge = 0.0;
  /// |b| beyond this (standardized units) is treated as monotone likelihood.
  double beta_bound = 30.0;
  double horizon = 10.0;
};

/// log of erfc(x) for x >= 0, with the asymptotic series once erfc underflows.
inline double log_erfc(double x) {
  const double direct = std::erfc(x);
  if (direct > 1e-300) return std::log(direct);
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
  return -x2 - std::log(x) - 0.5 * std::log(std::numbers::pi) + std::log(series);
}

/// -log2 of the two-sided Wald p-value for z = b / se.
inline double wald_neg_log2_p(double z) {
  return -log_erfc(std::abs(z) / std::numbers::sqrt2) / std::numbers::ln2;
}

struct FitResult {
  CoxModel model;
  FitDiagnostics diagnostics;
};

/// Newton iterations from b = 0 with step halving whenever the objective
/// fails to decrease.
inline FitResult fit(const EncodedCohort& cohort, const FitOptions& opts = {}) {
  const auto p = static_cast<Eigen::Index>(cohort.cols());
  if (cohort.rows() <= cohort.cols()) throw DataError("need more subjects than features to fit");
  if (cohort.event_count() == 0) throw DataError("cannot fit a cohort with zero events");
  if (opts.ridge < 0.0) throw UsageError("ridge penalty must be >= 0");

  const PartialLikelihood lik(cohort);
  auto objective = [&](const Eigen::VectorXd& b) {
    LikelihoodValue v = lik.evaluate(b, true);
    if (opts.ridge > 0.0) {
      v.value += 0.5 * opts.ridge * b.squaredNorm();
      v.gradient += opts.ridge * b;
      v.hessian.diagonal().array() += opts.ridge;
    }
    return v;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  LikelihoodValue cur = objective(beta);
  FitDiagnostics diag;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    diag.iterations = iter;
    Eigen::VectorXd step(p);
    if (p > 0) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.hessian);
      if (ldlt.info() != Eigen::Success || ldlt.isNegative())
        throw NumericError("singular information matrix; drop collinear columns or set a ridge");
      step = ldlt.solve(cur.gradient);
    }
    double scale = 1.0;
    Eigen::VectorXd next = beta - step;
    LikelihoodValue nv;
    for (int halving = 0;; ++halving) {
      bool ok = true;
      try {
        nv = objective(next);
      } catch (const NumericError&) {
        ok = false;
      }
      if (ok && nv.value <= cur.value + 1e-12 * std::abs(cur.value)) break;
      if (halving >= 40) throw NumericError("line search failed to decrease the objective");
      scale *= 0.5;
      next = beta - scale * step;
    }
    const double max_change = p > 0 ? (next - beta).cwiseAbs().maxCoeff() : 0.0;
    const double rel_change = std::abs(nv.value - cur.value) / std::max(1.0, std::abs(nv.value));
    beta = next;
    cur = std::move(nv);
    if (p > 0 && beta.cwiseAbs().maxCoeff() > opts.beta_bound)
      throw NumericError(
          "coefficients diverge (monotone likelihood / separation); refit with a ridge penalty");
    if (max_change < opts.tol && rel_change < 1e-10) {
      diag.converged = true;
      break;
    }
  }

  // Unpenalized log partial likelihood at the optimum.
  const LikelihoodValue at_opt = lik.evaluate(beta, true);
  diag.final_loglik = -at_opt.value;
  Eigen::MatrixXd info = at_opt.hessian;
  if (opts.ridge > 0.0) info.diagonal().array() += opts.ridge;
  const Eigen::MatrixXd cov = p > 0 ? Eigen::MatrixXd(info.inverse()) : Eigen::MatrixXd();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double se = std::sqrt(std::max(0.0, cov(j, j)));
    diag.standard_errors.push_back(se);
    diag.ci95_low.push_back(beta[j] - kZ975 * se);
    diag.ci95_high.push_back(beta[j] + kZ975 * se);
    diag.neg_log2_p.push_back(se > 0.0 ? wald_neg_log2_p(beta[j] / se) : 0.0);
  }

  FitResult out;
  out.model.feature_names = cohort.feature_names;
  out.model.coefficients.assign(beta.data(), beta.data() + p);
  out.model.continuous = cohort.continuous;
  out.model.scaling = cohort.scaling;
  out.model.baseline = breslow_baseline(cohort, beta);
  out.model.horizon = opts.horizon;
  out.model.diagnostics = diag;
  out.diagnostics = std::move(diag);
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

/// Linear predictor for every row of `cohort`, matching columns by name and
/// converting each cohort's standardization into the model's.
inline std::vector<double> linear_predictor(const CoxModel& model, const EncodedCohort& cohort) {
  std::vector<double> lp(cohort.rows(), 0.0);
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    const auto idx = cohort.column_index(model.feature_names[j]);
    if (!idx) throw UsageError("cohort lacks model feature " + model.feature_names[j]);
    const auto col = cohort.matrix.col(static_cast<Eigen::Index>(*idx));
    const auto& src = cohort.scaling[*idx];
    const auto& dst = model.scaling[j];
    for (std::size_t i = 0; i < cohort.rows(); ++i) {
      const double raw = col[static_cast<Eigen::Index>(i)] * src.scale + src.center;
      lp[i] += model.coefficients[j] * (raw - dst.center) / dst.scale;
    }
  }
  return lp;
}

inline double linear_predictor(const CoxModel& model, const SubjectRecord& record) {
  double lp = 0.0;
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    const double raw = raw_term_value(record, model.feature_names[j]);
    lp += model.coefficients[j] * (raw - model.scaling[j].center) / model.scaling[j].scale;
  }
  return lp;
}

/// 1 - exp(-H0(horizon) exp(lp)).
inline double risk_from_lp(const CoxModel& model, double lp, double horizon) {
  const double h0 = model.baseline.at(horizon);
  return -std::expm1(-h0 * std::exp(lp));
}

inline double predict_risk(const CoxModel& model, const SubjectRecord& record, double horizon) {
  return risk_from_lp(model, linear_predictor(model, record), horizon);
}

inline double predict_risk(const CoxModel& model, const SubjectRecord& record) {
  return predict_risk(model, record, model.horizon);
}

inline std::vector<double> predict_risk(const CoxModel& model, const EncodedCohort& cohort,
                                        double horizon) {
  auto lp = linear_predictor(model, cohort);
  const double h0 = model.baseline.at(horizon);
  for (double& v : lp) v = -std::expm1(-h0 * std::exp(v));
  return lp;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kCoxModelVersion = 1;

inline nlohmann::json to_json(const FitDiagnostics& d) {
  return {{"converged", d.converged},         {"iterations", d.iterations},
          {"final_loglik", d.final_loglik},   {"standard_errors", d.standard_errors},
          {"ci95_low", d.ci95_low},           {"ci95_high", d.ci95_high},
          {"neg_log2_p", d.neg_log2_p}};
}

inline FitDiagnostics fit_diagnostics_from_json(const nlohmann::json& j) {
  FitDiagnostics d;
  d.converged = j.at("converged").get<bool>();
  d.iterations = j.at("iterations").get<int>();
  d.final_loglik = j.at("final_loglik").get<double>();
  d.standard_errors = j.at("standard_errors").get<std::vector<double>>();
  d.ci95_low = j.at("ci95_low").get<std::vector<double>>();
  d.ci95_high = j.at("ci95_high").get<std::vector<double>>();
  d.neg_log2_p = j.at("neg_log2_p").get<std::vector<double>>();
  return d;
}

inline nlohmann::json to_json(const CoxModel& m) {
  nlohmann::json j;
  j["format"] = "t2drisk.cox_model";
  j["version"] = kCoxModelVersion;
  j["horizon"] = m.horizon;
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t k = 0; k < m.feature_names.size(); ++k)
    features.push_back({{"name", m.feature_names[k]},
                        {"coefficient", m.coefficients[k]},
                        {"continuous", static_cast<bool>(m.continuous[k])},
                        {"center", m.scaling[k].center},
                        {"scale", m.scaling[k].scale}});
  j["features"] = std::move(features);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& b : m.baseline.table) table.push_back({b.time, b.cumhaz});
  j["baseline"] = {{"max_time", m.baseline.max_time}, {"cumhaz", std::move(table)}};
  if (m.diagnostics) j["diagnostics"] = to_json(*m.diagnostics);
  return j;
}

inline CoxModel cox_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "t2drisk.cox_model")
      throw DataError("not a Cox model document");
    if (j.at("version").get<int>() != kCoxModelVersion)
      throw DataError("unsupported Cox model version " + j.at("version").dump());
    CoxModel m;
    m.horizon = j.at("horizon").get<double>();
    for (const auto& f : j.at("features")) {
      m.feature_names.push_back(f.at("name").get<std::string>());
      m.coefficients.push_back(f.at("coefficient").get<double>());
      m.continuous.push_back(f.at("continuous").get<bool>());
      m.scaling.push_back({f.at("center").get<double>(), f.at("scale").get<double>()});
      if (!(m.scaling.back().scale > 0.0)) throw DataError("non-positive scale in Cox model");
      if (!std::isfinite(m.coefficients.back())) throw DataError("non-finite coefficient");
    }
    m.baseline.max_time = j.at("baseline").at("max_time").get<double>();
    m.baseline.table.clear();
    double prev = 0.0;
    for (const auto& row : j.at("baseline").at("cumhaz")) {
      BaselinePoint b{row.at(0).get<double>(), row.at(1).get<double>()};
      if (b.cumhaz < prev || (!m.baseline.table.empty() && b.time <= m.baseline.table.back().time))
        throw DataError("baseline hazard table is not monotone");
      prev = b.cumhaz;
      m.baseline.table.push_back(b);
    }
    if (m.baseline.table.empty() || m.baseline.table.front().time != 0.0)
      throw DataError("baseline hazard table must start at time 0");
    if (j.contains("diagnostics")) m.diagnostics = fit_diagnostics_from_json(j.at("diagnostics"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed Cox model document: ") + e.what());
  }
}

}  // namespace t2drisk
