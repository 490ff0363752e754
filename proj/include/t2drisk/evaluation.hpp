#pragma once

// Discrimination (Harrell's concordance), percentile bootstrap intervals and
// horizon calibration (Kaplan-Meier observed risk, smoothed calibration curve,
// Integrated Calibration Index).

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "t2drisk/cox.hpp"
#include "t2drisk/csv.hpp"
#include "t2drisk/error.hpp"
#include "t2drisk/random.hpp"

namespace t2drisk {

struct ConcordanceCounts {
  std::int64_t concordant = 0;
  std::int64_t tied = 0;  // comparable pairs with equal scores
  std::int64_t comparable = 0;

  double index() const {
    if (comparable == 0) throw DataError("no comparable pairs for the concordance index");
    return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
           static_cast<double>(comparable);
  }
};

/// Pair (i, j) is comparable when i has an event and t_i < t_j, or t_i == t_j
/// with j censored. It is concordant when score_i > score_j. O(n log n):
/// subjects are swept in descending time while a Fenwick tree over score
/// ranks counts those already known to outlive the current event.
inline ConcordanceCounts concordance_counts(std::span<const double> times,
                                            std::span<const std::uint8_t> events,
                                            std::span<const double> scores) {
  const std::size_t n = times.size();
  if (events.size() != n || scores.size() != n)
    throw UsageError("times, events and scores must have equal length");

  std::vector<double> sorted_scores(scores.begin(), scores.end());
  std::sort(sorted_scores.begin(), sorted_scores.end());
  sorted_scores.erase(std::unique(sorted_scores.begin(), sorted_scores.end()), sorted_scores.end());
  auto rank_of = [&](double s) {
    return static_cast<std::size_t>(
               std::lower_bound(sorted_scores.begin(), sorted_scores.end(), s) -
               sorted_scores.begin()) + 1;
  };

  std::vector<std::int64_t> tree(sorted_scores.size() + 1, 0);
  auto add = [&](std::size_t r) {
    for (; r < tree.size(); r += r & (~r + 1)) ++tree[r];
  };
  auto prefix = [&](std::size_t r) {
    std::int64_t s = 0;
    for (; r > 0; r -= r & (~r + 1)) s += tree[r];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return times[a] > times[b] || (times[a] == times[b] && a < b);
  });

  ConcordanceCounts c;
  std::int64_t inserted = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e < n && times[order[e]] == times[order[k]]) ++e;
    for (std::size_t m = k; m < e; ++m)
      if (!events[order[m]]) add(rank_of(scores[order[m]])), ++inserted;
    for (std::size_t m = k; m < e; ++m) {
      const std::size_t i = order[m];
      if (!events[i]) continue;
      const std::size_t r = rank_of(scores[i]);
      const std::int64_t below = prefix(r - 1);
      const std::int64_t equal = prefix(r) - below;
      c.concordant += below;
      c.tied += equal;
      c.comparable += inserted;
    }
    for (std::size_t m = k; m < e; ++m)
      if (events[order[m]]) add(rank_of(scores[order[m]])), ++inserted;
    k = e;
  }
  return c;
}

inline double concordance_index(std::span<const double> times, std::span<const std::uint8_t> events,
                                std::span<const double> scores) {
  return concordance_counts(times, events, scores).index();
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapInterval {
  double low = 0.0;
  double high = 0.0;
  std::size_t rounds = 0;
  std::size_t failures = 0;
  std::vector<double> replicates;
};

/// Quantile with linear interpolation between order statistics.
inline double quantile_linear(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline constexpr std::size_t kDefaultBootstrapRounds = 50;

/// Percentile (2.5%, 97.5%) interval of `metric` over row resamples drawn
/// with replacement. Replicate r uses its own stream derived from (seed, r);
/// a resample on which the metric throws is redrawn and counted.
template <class Metric>
BootstrapInterval bootstrap_ci(Metric&& metric, std::size_t n_rows, std::size_t rounds,
                               std::uint64_t seed) {
  if (rounds < 2) throw UsageError("bootstrap needs at least 2 rounds");
  if (n_rows == 0) throw DataError("bootstrap of an empty data set");
  BootstrapInterval out;
  out.rounds = rounds;
  std::vector<std::size_t> rows(n_rows);
  for (std::size_t r = 0; r < rounds; ++r) {
    Rng rng = derive_rng(seed, r);
    std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
    for (;;) {
      for (auto& v : rows) v = pick(rng);
      try {
        out.replicates.push_back(metric(std::span<const std::size_t>(rows)));
        break;
      } catch (const std::exception&) {
        if (++out.failures > rounds)
          throw NumericError("bootstrap metric failed on more than half of the resamples");
      }
    }
  }
  out.low = quantile_linear(out.replicates, 0.025);
  out.high = quantile_linear(out.replicates, 0.975);
  return out;
}

// ---------------------------------------------------------------------------
// Kaplan-Meier and calibration

/// Product-limit survival at `horizon` (events at t counted before
/// censorings at t).
inline double kaplan_meier_at(std::span<const double> times, std::span<const std::uint8_t> events,
                              double horizon) {
  if (times.empty()) throw DataError("Kaplan-Meier of an empty sample");
  if (!(horizon > 0.0)) throw UsageError("horizon must be > 0");
  if (horizon > *std::max_element(times.begin(), times.end()))
    throw DataError("horizon lies beyond all observed times");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  double surv = 1.0;
  std::size_t at_risk = times.size();
  for (std::size_t k = 0; k < order.size();) {
    const double t = times[order[k]];
    if (t > horizon) break;
    std::size_t e = k, d = 0;
    for (; e < order.size() && times[order[e]] == t; ++e) d += events[order[e]];
    if (d > 0) surv *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
    at_risk -= e - k;
    k = e;
  }
  return surv;
}

struct CalibrationPoint {
  double predicted = 0.0;
  double observed = 0.0;
};

struct CalibrationResult {
  double mean_predicted = 0.0;
  double mean_observed = 0.0;
  double ici = 0.0;
  std::vector<CalibrationPoint> curve;
};

struct CalibrationOptions {
  double span = 0.75;
  std::size_t max_curve_points = 500;
};

namespace eval_detail {

/// Inverse-probability-of-censoring weights for the horizon event indicator.
/// Events by the horizon get 1 / G(T-), subjects followed past it 1 / G(h),
/// subjects censored before it 0, where G is the censoring-time
/// Kaplan-Meier curve.
inline void ipcw_response(std::span<const double> times, std::span<const std::uint8_t> events,
                          double horizon, std::vector<double>& y, std::vector<double>& w) {
  const std::size_t n = times.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  y.assign(n, 0.0);
  w.assign(n, 0.0);
  double g = 1.0;  // censoring survival just before the current time
  std::size_t at_risk = n;
  double g_at_horizon = 1.0;
  bool horizon_passed = false;
  for (std::size_t k = 0; k < n;) {
    const double t = times[order[k]];
    if (t > horizon && !horizon_passed) {
      g_at_horizon = g;
      horizon_passed = true;
    }
    std::size_t e = k, censored = 0;
    for (; e < n && times[order[e]] == t; ++e) {
      const std::size_t i = order[e];
      if (events[i]) {
        if (t <= horizon) {
          y[i] = 1.0;
          w[i] = 1.0 / g;
        }
      } else {
        ++censored;
      }
    }
    if (censored > 0) g *= 1.0 - static_cast<double>(censored) / static_cast<double>(at_risk);
    at_risk -= e - k;
    k = e;
  }
  if (!horizon_passed) g_at_horizon = g;
  for (std::size_t i = 0; i < n; ++i)
    if (times[i] > horizon) w[i] = 1.0 / g_at_horizon;
}

/// Weighted local-linear fit at x0 with tricube kernel over the nearest
/// span fraction of points.
inline double local_linear(std::span<const double> x, std::span<const double> y,
                           std::span<const double> w, double x0, std::size_t k,
                           std::vector<double>& scratch) {
  scratch.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) scratch[i] = std::abs(x[i] - x0);
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   scratch.end());
  const double h = scratch[k - 1];
  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - x0);
    double kern;
    if (h > 0.0) {
      if (d >= h) continue;
      const double u = d / h;
      const double c = 1.0 - u * u * u;
      kern = c * c * c;
    } else {
      if (d > 0.0) continue;
      kern = 1.0;
    }
    const double wt = kern * w[i];
    const double dx = x[i] - x0;
    s += wt;
    sx += wt * dx;
    sy += wt * y[i];
    sxx += wt * dx * dx;
    sxy += wt * dx * y[i];
  }
  if (!(s > 0.0)) return 0.0;
  const double denom = s * sxx - sx * sx;
  if (denom <= 1e-12 * s * sxx || denom <= 0.0) return sy / s;
  // Intercept of the local line at dx = 0.
  return (sy * sxx - sx * sxy) / denom;
}

}  // namespace eval_detail

/// Observed horizon risk is the Kaplan-Meier complement. The calibration
/// curve smooths the censoring-weighted horizon event indicator against the
/// predicted risk with a local-linear tricube smoother (span 0.75); ICI is
/// the mean absolute gap between each prediction and the curve.
inline CalibrationResult calibration(std::span<const double> predicted,
                                     std::span<const double> times,
                                     std::span<const std::uint8_t> events, double horizon,
                                     const CalibrationOptions& opts = {}) {
  const std::size_t n = predicted.size();
  if (times.size() != n || events.size() != n)
    throw UsageError("predicted, times and events must have equal length");
  if (!(horizon > 0.0)) throw UsageError("horizon must be > 0");
  CalibrationResult out;
  out.mean_observed = 1.0 - kaplan_meier_at(times, events, horizon);
  out.mean_predicted = std::accumulate(predicted.begin(), predicted.end(), 0.0) / static_cast<double>(n);

  std::vector<double> y, w;
  eval_detail::ipcw_response(times, events, horizon, y, w);
  std::vector<double> xs, ys, ws;
  for (std::size_t i = 0; i < n; ++i)
    if (w[i] > 0.0) xs.push_back(predicted[i]), ys.push_back(y[i]), ws.push_back(w[i]);
  if (xs.empty()) throw DataError("no subject informative at the horizon");
  const std::size_t k =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(opts.span * double(xs.size()))), 1,
                              xs.size());

  std::vector<double> grid(predicted.begin(), predicted.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.size() > opts.max_curve_points) {
    std::vector<double> sorted(predicted.begin(), predicted.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> q;
    for (std::size_t g = 0; g < opts.max_curve_points; ++g) {
      const double pos = static_cast<double>(g) / double(opts.max_curve_points - 1) * double(n - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, n - 1);
      q.push_back(sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]));
    }
    q.erase(std::unique(q.begin(), q.end()), q.end());
    grid = std::move(q);
  }

  std::vector<double> scratch;
  for (double g : grid) {
    const double fitted = eval_detail::local_linear(xs, ys, ws, g, k, scratch);
    out.curve.push_back({g, std::clamp(fitted, 0.0, 1.0)});
  }

  auto smoothed = [&](double p) {
    auto it = std::lower_bound(out.curve.begin(), out.curve.end(), p,
                               [](const CalibrationPoint& c, double v) { return c.predicted < v; });
    if (it == out.curve.end()) return out.curve.back().observed;
    if (it->predicted == p || it == out.curve.begin()) return it->observed;
    const auto prev = std::prev(it);
    const double f = (p - prev->predicted) / (it->predicted - prev->predicted);
    return prev->observed + f * (it->observed - prev->observed);
  };
  double gap = 0.0;
  for (double p : predicted) gap += std::abs(p - smoothed(p));
  out.ici = gap / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct EvaluationReport {
  double c_index = 0.0;
  double c_index_low = 0.0;
  double c_index_high = 0.0;
  std::size_t n_bootstrap = 0;
  std::size_t bootstrap_failures = 0;
  double horizon = 10.0;
  std::size_t n_subjects = 0;
  std::size_t n_events = 0;
  CalibrationResult calibration;
};

struct EvaluateOptions {
  double horizon = 10.0;
  std::size_t bootstrap_rounds = kDefaultBootstrapRounds;
  std::uint64_t seed = 0;
};

/// Scores a Cox model on an evaluation cohort; the bootstrap resamples rows of
/// that cohort only.
inline EvaluationReport evaluate(const CoxModel& model, const EncodedCohort& cohort,
                                 const EvaluateOptions& opts) {
  EvaluationReport r;
  const auto lp = linear_predictor(model, cohort);
  r.n_subjects = cohort.rows();
  r.n_events = cohort.event_count();
  r.horizon = opts.horizon;
  r.c_index = concordance_index(cohort.times, cohort.events, lp);

  std::vector<double> t, s;
  std::vector<std::uint8_t> e;
  auto metric = [&](std::span<const std::size_t> rows) {
    t.resize(rows.size()), s.resize(rows.size()), e.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k)
      t[k] = cohort.times[rows[k]], e[k] = cohort.events[rows[k]], s[k] = lp[rows[k]];
    return concordance_index(t, e, s);
  };
  const auto ci = bootstrap_ci(metric, cohort.rows(), opts.bootstrap_rounds, opts.seed);
  r.c_index_low = ci.low;
  r.c_index_high = ci.high;
  r.n_bootstrap = ci.rounds;
  r.bootstrap_failures = ci.failures;

  const auto risk = predict_risk(model, cohort, opts.horizon);
  r.calibration = calibration(risk, cohort.times, cohort.events, opts.horizon);
  return r;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  return {{"c_index", r.c_index},
          {"c_index_ci", {r.c_index_low, r.c_index_high}},
          {"n_bootstrap", r.n_bootstrap},
          {"bootstrap_failures", r.bootstrap_failures},
          {"horizon", r.horizon},
          {"n_subjects", r.n_subjects},
          {"n_events", r.n_events},
          {"mean_predicted_risk", r.calibration.mean_predicted},
          {"mean_observed_risk", r.calibration.mean_observed},
          {"ici", r.calibration.ici}};
}

inline void write_calibration_csv(std::ostream& out, const CalibrationResult& c) {
  out << "predicted,smoothed_observed\n";
  for (const auto& p : c.curve) out << format_double(p.predicted) << ',' << format_double(p.observed) << '\n';
}

/// Coefficient table shaped like a forest plot: log HR with its 95% interval
/// and -log2(p).
inline void write_forest_csv(std::ostream& out, const CoxModel& m) {
  out << "covariate,log_hr,ci95_low,ci95_high,neg_log2_p\n";
  for (std::size_t j = 0; j < m.feature_names.size(); ++j) {
    out << m.feature_names[j] << ',' << format_double(m.coefficients[j]);
    if (m.diagnostics)
      out << ',' << format_double(m.diagnostics->ci95_low[j]) << ','
          << format_double(m.diagnostics->ci95_high[j]) << ','
          << format_double(m.diagnostics->neg_log2_p[j]);
    else
      out << ",,,";
    out << '\n';
  }
}

}  // namespace t2drisk
