#pragma once

// Synthetic cohorts drawn from published marginals, with event times from a
// ground-truth proportional-hazards model with constant baseline hazard.

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/error.hpp"
#include "t2drisk/random.hpp"

namespace t2drisk {

enum class MarginalKind { Binary, LogNormal, ZeroInflatedLogNormal };

/// One feature's marginal distribution. Continuous marginals are described by
/// their quartile triple [Q1, median, Q3]. The zero-inflated form is used for
/// pack-years, whose median is 0: a fraction `nonzero_fraction` of subjects
/// are ever-smokers with log-normal exposure of log-sd `log_sd`, scaled so the
/// overall third quartile matches.
struct Marginal {
  MarginalKind kind = MarginalKind::Binary;
  double prevalence = 0.0;
  std::array<double, 3> quartiles{};
  double nonzero_fraction = 0.0;
  double log_sd = 1.0;
};

struct FollowUp {
  double median = 11.2;
  double q1 = 10.8;
  double q3 = 12.3;
};

struct GeneratorConfig {
  std::size_t n = 472830;
  std::uint64_t seed = 2020;
  /// Keyed by encoded column name (ethnicity_asian / ethnicity_black are
  /// drawn jointly as one categorical).
  std::map<std::string, Marginal> marginals;
  /// Log hazard ratios per encoded column, continuous columns per reference SD.
  std::map<std::string, double> truth_coefficients;
  /// Events per person-year for a subject with linear predictor 0. When
  /// absent it is solved so the cohort's mean risk at `target_horizon`
  /// equals `target_risk`.
  std::optional<double> baseline_rate;
  double target_risk = 0.0403;
  double target_horizon = 10.0;
  FollowUp followup;
};

inline constexpr double kUpperQuartileZ = 0.6744897501960817;  // standard normal 75th percentile

struct LogNormalParams {
  double mu = 0.0;
  double sigma = 0.0;

  double sd() const {
    const double s2 = sigma * sigma;
    return std::sqrt(std::expm1(s2)) * std::exp(mu + 0.5 * s2);
  }
};

/// Log-normal with the given median whose interquartile range Q3 - Q1 equals
/// `iqr` (median * 2 sinh(z sigma) = iqr).
inline LogNormalParams lognormal_from_median_iqr(double median, double iqr) {
  if (!(median > 0.0) || !(iqr > 0.0))
    throw UsageError("log-normal matching needs a positive median and IQR");
  return {std::log(median), std::asinh(iqr / (2.0 * median)) / kUpperQuartileZ};
}

/// Conditional (non-zero) log-normal of a zero-inflated marginal.
inline LogNormalParams zero_inflated_component(const Marginal& m) {
  const double pi = m.nonzero_fraction;
  const double q_cond = (0.75 - (1.0 - pi)) / pi;
  if (!(q_cond > 0.0 && q_cond < 1.0))
    throw UsageError("zero-inflated marginal needs nonzero_fraction in (0.25, 1)");
  const boost::math::normal_distribution<double> std_normal;
  const double z = boost::math::quantile(std_normal, q_cond);
  return {std::log(m.quartiles[2]) - m.log_sd * z, m.log_sd};
}

/// Standard deviation of a continuous marginal; used as the reference scale.
inline double marginal_sd(const Marginal& m) {
  switch (m.kind) {
    case MarginalKind::LogNormal:
      return lognormal_from_median_iqr(m.quartiles[1], m.quartiles[2] - m.quartiles[0]).sd();
    case MarginalKind::ZeroInflatedLogNormal: {
      const auto c = zero_inflated_component(m);
      const double pi = m.nonzero_fraction;
      const double mean = pi * std::exp(c.mu + 0.5 * c.sigma * c.sigma);
      const double second = pi * std::exp(2.0 * c.mu + 2.0 * c.sigma * c.sigma);
      return std::sqrt(second - mean * mean);
    }
    case MarginalKind::Binary: break;
  }
  throw UsageError("binary marginal has no reference scale");
}

inline void validate(const GeneratorConfig& c) {
  if (c.n == 0) throw UsageError("cohort size n must be positive");
  for (const auto& term : model_terms()) {
    const std::string col(term.column);
    const auto it = c.marginals.find(col);
    if (it == c.marginals.end()) throw UsageError("generator config lacks marginal for " + col);
    const Marginal& m = it->second;
    const bool continuous = term.kind == TermKind::Continuous;
    if (continuous == (m.kind == MarginalKind::Binary))
      throw UsageError("marginal kind does not match feature type for " + col);
    if (m.kind == MarginalKind::Binary && !(m.prevalence >= 0.0 && m.prevalence <= 1.0))
      throw UsageError("prevalence outside [0,1] for " + col);
    if (continuous && !(m.quartiles[0] <= m.quartiles[1] && m.quartiles[1] <= m.quartiles[2]))
      throw UsageError("quartiles must satisfy Q1 <= median <= Q3 for " + col);
    if (m.kind == MarginalKind::LogNormal) (void)marginal_sd(m);
    if (m.kind == MarginalKind::ZeroInflatedLogNormal) (void)zero_inflated_component(m);
    if (!c.truth_coefficients.count(col)) throw UsageError("no truth coefficient for " + col);
  }
  for (const auto& [name, beta] : c.truth_coefficients) {
    if (!find_term(name)) throw UsageError("truth coefficient for unknown feature " + name);
    if (!std::isfinite(beta)) throw UsageError("non-finite truth coefficient for " + name);
  }
  if (c.marginals.at("ethnicity_asian").prevalence + c.marginals.at("ethnicity_black").prevalence >
      1.0)
    throw UsageError("ethnicity prevalences sum above 1");
  const auto& smoke = c.marginals.at("pack_years");
  if (smoke.kind == MarginalKind::ZeroInflatedLogNormal &&
      c.marginals.at("currently_smoking").prevalence > smoke.nonzero_fraction)
    throw UsageError("currently_smoking prevalence exceeds the ever-smoker fraction");
  if (c.baseline_rate && !(*c.baseline_rate > 0.0)) throw UsageError("baseline_rate must be > 0");
  if (!(c.target_risk > 0.0 && c.target_risk < 1.0)) throw UsageError("target_risk must be in (0,1)");
  if (!(c.target_horizon > 0.0)) throw UsageError("target_horizon must be > 0");
  if (!(c.followup.q1 <= c.followup.median && c.followup.median <= c.followup.q3 &&
        c.followup.q3 > c.followup.q1 && c.followup.q1 > 0.0))
    throw UsageError("follow-up quartiles must satisfy 0 < Q1 <= median <= Q3, Q1 < Q3");
}

/// Demographics of the 472,830-subject final cohort and coefficients of the
/// reduced 19-term model.
inline GeneratorConfig cohort_preset() {
  GeneratorConfig c;
  auto binary = [](double p) { return Marginal{MarginalKind::Binary, p, {}, 0.0, 1.0}; };
  auto lognormal = [](double q1, double med, double q3) {
    return Marginal{MarginalKind::LogNormal, 0.0, {q1, med, q3}, 0.0, 1.0};
  };
  c.marginals = {
      {"age", lognormal(50.0, 58.0, 63.0)},
      {"waist_hip_ratio", lognormal(0.80, 0.87, 0.93)},
      {"bmi", lognormal(24.03, 26.57, 29.64)},
      {"ethnicity_asian", binary(0.0200)},
      {"ethnicity_black", binary(0.0149)},
      {"degree", binary(0.3255)},
      {"cvd_diagnosis", binary(0.2780)},
      {"cholesterol_meds", binary(0.1413)},
      {"other_meds", binary(0.4513)},
      {"stomach_pain", binary(0.0864)},
      {"daytime_dozing", binary(0.2372)},
      {"breathless_level_ground", binary(0.0350)},
      {"diabetes_father", binary(0.0843)},
      {"diabetes_mother", binary(0.0867)},
      {"diabetes_siblings", binary(0.0644)},
      {"alcohol_monthly_plus", binary(0.8108)},
      {"currently_smoking", binary(0.1049)},
      {"pack_years", Marginal{MarginalKind::ZeroInflatedLogNormal, 0.0, {0.0, 0.0, 6.5}, 0.30, 1.0}},
      {"good_health", binary(0.7587)},
  };
  c.truth_coefficients = {
      {"ethnicity_asian", 0.844},      {"ethnicity_black", 0.532},
      {"diabetes_mother", 0.489},      {"waist_hip_ratio", 0.440},
      {"diabetes_siblings", 0.422},    {"bmi", 0.399},
      {"diabetes_father", 0.385},      {"cvd_diagnosis", 0.368},
      {"cholesterol_meds", 0.285},     {"currently_smoking", 0.278},
      {"other_meds", 0.250},           {"age", 0.242},
      {"stomach_pain", 0.177},         {"daytime_dozing", 0.176},
      {"pack_years", 0.086},           {"breathless_level_ground", 0.031},
      {"degree", -0.217},              {"good_health", -0.323},
      {"alcohol_monthly_plus", -0.375},
  };
  c.followup = {11.2, 10.8, 12.3};
  c.target_risk = 0.0403;
  c.target_horizon = 10.0;
  return c;
}

/// Centers (marginal medians) and scales (marginal SDs) of the continuous
/// columns, in model-term order. This is the convention the truth
/// coefficients are expressed in.
inline std::vector<ColumnScaling> reference_scaling(const GeneratorConfig& c) {
  std::vector<ColumnScaling> out;
  for (const auto& term : model_terms()) {
    if (term.kind != TermKind::Continuous) {
      out.push_back({});
      continue;
    }
    const Marginal& m = c.marginals.at(std::string(term.column));
    out.push_back({m.quartiles[1], marginal_sd(m)});
  }
  return out;
}

inline constexpr std::size_t kGeneratorChunk = 4096;

namespace synth_detail {

inline double draw_lognormal(Rng& rng, const LogNormalParams& p) {
  const boost::math::normal_distribution<double> std_normal;
  return std::exp(p.mu + p.sigma * boost::math::quantile(std_normal, uniform_open(rng)));
}

}  // namespace synth_detail

/// Draws feature vectors. Features are independent except for the smoking
/// block: when pack-years is zero-inflated, ever-smokers are exactly the
/// subjects with positive pack-years and current smokers are a subset of them.
inline std::vector<SubjectRecord> sample_features(const GeneratorConfig& config) {
  validate(config);
  const auto& M = config.marginals;
  const auto age = lognormal_from_median_iqr(M.at("age").quartiles[1],
                                             M.at("age").quartiles[2] - M.at("age").quartiles[0]);
  const auto whr = lognormal_from_median_iqr(
      M.at("waist_hip_ratio").quartiles[1],
      M.at("waist_hip_ratio").quartiles[2] - M.at("waist_hip_ratio").quartiles[0]);
  const auto bmi = lognormal_from_median_iqr(M.at("bmi").quartiles[1],
                                             M.at("bmi").quartiles[2] - M.at("bmi").quartiles[0]);
  const Marginal& packs = M.at("pack_years");
  const bool linked_smoking = packs.kind == MarginalKind::ZeroInflatedLogNormal;
  const LogNormalParams pack_ln =
      linked_smoking ? zero_inflated_component(packs)
                     : lognormal_from_median_iqr(packs.quartiles[1],
                                                 packs.quartiles[2] - packs.quartiles[0]);
  const double p_asian = M.at("ethnicity_asian").prevalence;
  const double p_black = M.at("ethnicity_black").prevalence;
  auto prevalence = [&](const char* name) { return M.at(name).prevalence; };

  std::vector<SubjectRecord> out(config.n);
  for (std::size_t chunk = 0; chunk * kGeneratorChunk < config.n; ++chunk) {
    Rng rng = derive_rng(config.seed, chunk);
    const std::size_t end = std::min(config.n, (chunk + 1) * kGeneratorChunk);
    for (std::size_t i = chunk * kGeneratorChunk; i < end; ++i) {
      auto bern = [&](double p) { return uniform_open(rng) < p; };
      SubjectRecord& r = out[i];
      r.age = std::max(18, static_cast<int>(std::lround(synth_detail::draw_lognormal(rng, age))));
      r.waist_hip_ratio = synth_detail::draw_lognormal(rng, whr);
      r.bmi = synth_detail::draw_lognormal(rng, bmi);
      const double u = uniform_open(rng);
      r.ethnicity = u < p_asian            ? Ethnicity::Asian
                    : u < p_asian + p_black ? Ethnicity::Black
                                            : Ethnicity::WhiteOther;
      r.degree = bern(prevalence("degree"));
      r.cvd_diagnosis = bern(prevalence("cvd_diagnosis"));
      r.cholesterol_meds = bern(prevalence("cholesterol_meds"));
      r.other_meds = bern(prevalence("other_meds"));
      r.stomach_pain = bern(prevalence("stomach_pain"));
      r.daytime_dozing = bern(prevalence("daytime_dozing"));
      r.breathless_level_ground = bern(prevalence("breathless_level_ground"));
      r.diabetes_father = bern(prevalence("diabetes_father"));
      r.diabetes_mother = bern(prevalence("diabetes_mother"));
      r.diabetes_siblings = bern(prevalence("diabetes_siblings"));
      r.alcohol_monthly_plus = bern(prevalence("alcohol_monthly_plus"));
      if (linked_smoking) {
        const bool ever = bern(packs.nonzero_fraction);
        r.currently_smoking = ever && bern(prevalence("currently_smoking") / packs.nonzero_fraction);
        r.previous_smoker = ever && !r.currently_smoking;
        r.pack_years = ever ? synth_detail::draw_lognormal(rng, pack_ln) : 0.0;
      } else {
        r.currently_smoking = bern(prevalence("currently_smoking"));
        r.pack_years = synth_detail::draw_lognormal(rng, pack_ln);
        r.previous_smoker = !r.currently_smoking;
      }
      r.good_health = bern(prevalence("good_health"));
    }
  }
  return out;
}

/// Ground-truth linear predictor under the reference scaling convention.
inline std::vector<double> truth_linear_predictor(std::span<const SubjectRecord> records,
                                                  const GeneratorConfig& config) {
  const auto scaling = reference_scaling(config);
  const auto& terms = model_terms();
  std::vector<double> beta(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const auto it = config.truth_coefficients.find(std::string(terms[j].column));
    if (it == config.truth_coefficients.end())
      throw UsageError("no truth coefficient for " + std::string(terms[j].column));
    beta[j] = it->second;
  }
  std::vector<double> lp(records.size(), 0.0);
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = 0; j < terms.size(); ++j)
      lp[i] += beta[j] * (raw_term_value(records[i], terms[j]) - scaling[j].center) /
               scaling[j].scale;
  return lp;
}

/// Constant baseline rate r such that mean_i [1 - exp(-r * horizon * e^{lp_i})]
/// equals `target`. The objective is increasing in r, so the root is unique.
inline double solve_baseline_rate(std::span<const double> lp, double horizon, double target) {
  if (lp.empty()) throw UsageError("cannot solve a baseline rate for an empty cohort");
  if (!(target > 0.0 && target < 1.0)) throw UsageError("target risk must be in (0,1)");
  auto mean_risk = [&](double log_rate) {
    const double rate = std::exp(log_rate);
    double s = 0.0;
    for (double v : lp) s += -std::expm1(-rate * horizon * std::exp(v));
    return s / static_cast<double>(lp.size());
  };
  double lo = std::log(1e-15), hi = std::log(1e3);
  if (mean_risk(lo) > target || mean_risk(hi) < target)
    throw NumericError("baseline rate target not bracketed");
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_risk(mid) < target ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

/// Inverse-transform event times T = -log U / (rate * e^{lp}) against
/// log-normal censoring times matched to the follow-up median and IQR.
inline std::vector<Outcome> sample_outcomes_from_lp(std::span<const double> lp, double baseline_rate,
                                                    const FollowUp& followup, std::uint64_t seed) {
  if (!(baseline_rate > 0.0)) throw UsageError("baseline_rate must be > 0");
  const auto censor = lognormal_from_median_iqr(followup.median, followup.q3 - followup.q1);
  std::vector<Outcome> out(lp.size());
  for (std::size_t chunk = 0; chunk * kGeneratorChunk < lp.size(); ++chunk) {
    Rng rng = derive_rng(seed, (std::uint64_t{1} << 40) + chunk);
    const std::size_t end = std::min(lp.size(), (chunk + 1) * kGeneratorChunk);
    for (std::size_t i = chunk * kGeneratorChunk; i < end; ++i) {
      const double event_time = -std::log(uniform_open(rng)) / (baseline_rate * std::exp(lp[i]));
      const double censor_time = synth_detail::draw_lognormal(rng, censor);
      out[i] = event_time <= censor_time ? Outcome{event_time, true} : Outcome{censor_time, false};
    }
  }
  return out;
}

struct SyntheticCohort {
  std::vector<Subject> subjects;
  std::vector<double> truth_lp;
  double baseline_rate = 0.0;
};

inline SyntheticCohort generate(const GeneratorConfig& config) {
  const auto records = sample_features(config);
  SyntheticCohort out;
  out.truth_lp = truth_linear_predictor(records, config);
  out.baseline_rate = config.baseline_rate
                          ? *config.baseline_rate
                          : solve_baseline_rate(out.truth_lp, config.target_horizon, config.target_risk);
  const auto outcomes = sample_outcomes_from_lp(out.truth_lp, out.baseline_rate, config.followup,
                                                config.seed);
  out.subjects.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.subjects[i] = {records[i], outcomes[i]};
  return out;
}

// ---------------------------------------------------------------------------
// Generic linear cohorts (arbitrary named features) for method checks.

struct LinearFeature {
  std::string name;
  double coefficient = 0.0;
  /// Bernoulli prevalence for binary features; continuous features are
  /// standard normal when this is absent.
  std::optional<double> prevalence;
};

struct LinearCohortSpec {
  std::vector<LinearFeature> features;
  std::size_t n = 10000;
  double target_risk = 0.2;
  double target_horizon = 10.0;
  FollowUp followup;
};

inline EncodedCohort simulate_linear_cohort(const LinearCohortSpec& spec, std::uint64_t seed,
                                            std::vector<double>* truth_lp = nullptr) {
  const auto p = spec.features.size();
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(p));
  std::vector<double> lp(spec.n, 0.0);
  const boost::math::normal_distribution<double> std_normal;
  for (std::size_t chunk = 0; chunk * kGeneratorChunk < spec.n; ++chunk) {
    Rng rng = derive_rng(seed, chunk);
    const std::size_t end = std::min(spec.n, (chunk + 1) * kGeneratorChunk);
    for (std::size_t i = chunk * kGeneratorChunk; i < end; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        const auto& f = spec.features[j];
        const double u = uniform_open(rng);
        const double x = f.prevalence ? (u < *f.prevalence ? 1.0 : 0.0)
                                      : boost::math::quantile(std_normal, u);
        raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
        lp[i] += f.coefficient * x;
      }
    }
  }
  const double rate = solve_baseline_rate(lp, spec.target_horizon, spec.target_risk);
  const auto outcomes = sample_outcomes_from_lp(lp, rate, spec.followup, seed);
  std::vector<std::string> names, groups;
  std::vector<bool> continuous;
  for (const auto& f : spec.features) {
    names.push_back(f.name);
    groups.push_back(f.name);
    continuous.push_back(!f.prevalence.has_value());
  }
  std::vector<double> times(spec.n);
  std::vector<std::uint8_t> events(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    times[i] = outcomes[i].time;
    events[i] = outcomes[i].event ? 1 : 0;
  }
  if (truth_lp) *truth_lp = lp;
  return make_cohort(std::move(names), std::move(groups), std::move(continuous), raw,
                     std::move(times), std::move(events));
}

// ---------------------------------------------------------------------------
// Config file (JSON)

inline nlohmann::json to_json(const GeneratorConfig& c) {
  nlohmann::json j;
  j["n"] = c.n;
  j["seed"] = c.seed;
  for (const auto& [name, m] : c.marginals) {
    nlohmann::json mj;
    switch (m.kind) {
      case MarginalKind::Binary:
        mj["prevalence"] = m.prevalence;
        break;
      case MarginalKind::LogNormal:
        mj["quartiles"] = m.quartiles;
        break;
      case MarginalKind::ZeroInflatedLogNormal:
        mj["quartiles"] = m.quartiles;
        mj["nonzero_fraction"] = m.nonzero_fraction;
        mj["log_sd"] = m.log_sd;
        break;
    }
    j["marginals"][name] = mj;
  }
  j["truth_coefficients"] = c.truth_coefficients;
  if (c.baseline_rate) j["baseline_rate"] = *c.baseline_rate;
  j["target_risk"] = c.target_risk;
  j["target_horizon"] = c.target_horizon;
  j["followup"] = {{"median", c.followup.median}, {"q1", c.followup.q1}, {"q3", c.followup.q3}};
  return j;
}

/// Reads a generator config. Keys absent from the document keep the
/// preset's values, so a config may override only what it needs.
inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"n",           "seed",          "marginals",
                                                 "truth_coefficients", "baseline_rate",
                                                 "target_risk", "target_horizon", "followup"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("unknown generator config key '" + key + "'");
  GeneratorConfig c = cohort_preset();
  try {
    if (j.contains("n")) c.n = j.at("n").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("marginals")) {
      for (const auto& [name, mj] : j.at("marginals").items()) {
        Marginal m;
        if (mj.contains("prevalence")) {
          m.kind = MarginalKind::Binary;
          m.prevalence = mj.at("prevalence").get<double>();
        } else {
          m.quartiles = mj.at("quartiles").get<std::array<double, 3>>();
          if (mj.contains("nonzero_fraction")) {
            m.kind = MarginalKind::ZeroInflatedLogNormal;
            m.nonzero_fraction = mj.at("nonzero_fraction").get<double>();
            m.log_sd = mj.value("log_sd", 1.0);
          } else {
            m.kind = MarginalKind::LogNormal;
          }
        }
        c.marginals[name] = m;
      }
    }
    if (j.contains("truth_coefficients"))
      for (const auto& [name, v] : j.at("truth_coefficients").items())
        c.truth_coefficients[name] = v.get<double>();
    if (j.contains("baseline_rate")) c.baseline_rate = j.at("baseline_rate").get<double>();
    if (j.contains("target_risk")) c.target_risk = j.at("target_risk").get<double>();
    if (j.contains("target_horizon")) c.target_horizon = j.at("target_horizon").get<double>();
    if (j.contains("followup")) {
      const auto& f = j.at("followup");
      c.followup = {f.at("median").get<double>(), f.at("q1").get<double>(),
                    f.at("q3").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed generator config: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace t2drisk
