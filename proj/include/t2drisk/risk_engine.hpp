#pragma once

// Fixed 19-term published model: scoring with additive log-hazard
// breakdowns, what-if deltas, and baseline-survival calibration.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/error.hpp"
#include "t2drisk/synthetic.hpp"

namespace t2drisk {

/// Request field problems (HTTP 400).
class FieldError : public UsageError {
 public:
  explicit FieldError(std::map<std::string, std::string> problems)
      : UsageError(describe(problems)), problems_(std::move(problems)) {}
  FieldError(const std::string& field, const std::string& message)
      : FieldError(std::map<std::string, std::string>{{field, message}}) {}
  const std::map<std::string, std::string>& problems() const { return problems_; }

 private:
  static std::string describe(const std::map<std::string, std::string>& p) {
    std::string s = "invalid fields:";
    for (const auto& [k, v] : p) s += " " + k + " (" + v + ")";
    return s;
  }
  std::map<std::string, std::string> problems_;
};

/// Well-formed value outside its valid range (HTTP 422).
class RangeError : public DataError {
 public:
  using DataError::DataError;
};

/// What-if touched a feature outside the modifiable set (HTTP 409).
class NotModifiableError : public UsageError {
 public:
  using UsageError::UsageError;
};

inline constexpr const char* kDisclaimer =
    "Estimated 10-year type 2 diabetes risk for information only. Not a diagnosis and not "
    "medical advice; continuous-feature effects assume a documented standardization convention.";

struct PublishedTerm {
  std::string name;   // encoded column
  std::string label;  // as printed in the coefficient table
  double log_hr = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  bool modifiable = false;
};

struct PublishedModel {
  std::string version = "t2d-reduced-19/1";
  double horizon = 10.0;
  std::vector<PublishedTerm> terms;      // model_terms() order
  std::vector<ColumnScaling> scaling;    // model_terms() order
  double baseline_survival = 0.0;        // S0(horizon)
  nlohmann::json calibration;            // provenance of baseline_survival
};

/// Lifestyle fields a what-if may change.
inline const std::vector<std::string>& default_modifiable_fields() {
  static const std::vector<std::string> fields = {"bmi",           "waist_hip_ratio",
                                                  "currently_smoking", "pack_years",
                                                  "alcohol_monthly_plus", "daytime_dozing"};
  return fields;
}

/// Log hazard ratios and 95% intervals of the reduced model, verbatim.
inline std::vector<PublishedTerm> published_terms() {
  const std::map<std::string, PublishedTerm> table = {
      {"ethnicity_asian", {"ethnicity_asian", "Ethnicity - Asian", 0.844, 0.764, 0.925}},
      {"ethnicity_black", {"ethnicity_black", "Ethnicity - Black", 0.532, 0.436, 0.628}},
      {"diabetes_mother", {"diabetes_mother", "Diabetes in mother", 0.489, 0.443, 0.535}},
      {"waist_hip_ratio", {"waist_hip_ratio", "Waist/hip ratio", 0.440, 0.423, 0.458}},
      {"diabetes_siblings", {"diabetes_siblings", "Diabetes in siblings", 0.422, 0.372, 0.471}},
      {"bmi", {"bmi", "BMI", 0.399, 0.386, 0.413}},
      {"diabetes_father", {"diabetes_father", "Diabetes in father", 0.385, 0.334, 0.436}},
      {"cvd_diagnosis",
       {"cvd_diagnosis", "Ever diagnosed Heart attack / Angina / Stroke / High blood pressure",
        0.368, 0.330, 0.405}},
      {"cholesterol_meds", {"cholesterol_meds", "Medications for cholesterol", 0.285, 0.244, 0.325}},
      {"currently_smoking", {"currently_smoking", "Currently smoking", 0.278, 0.229, 0.328}},
      {"other_meds",
       {"other_meds", "Other prescription medications (excl. diabetes/cholesterol/blood pressure)",
        0.250, 0.212, 0.287}},
      {"age", {"age", "Age", 0.242, 0.222, 0.262}},
      {"stomach_pain", {"stomach_pain", "Stomach or abdominal pain in last month", 0.177, 0.125, 0.228}},
      {"daytime_dozing", {"daytime_dozing", "Daytime dozing (tabulated as \"Narcolepsy\")", 0.176, 0.141, 0.211}},
      {"pack_years", {"pack_years", "Smoking pack-years", 0.086, 0.074, 0.098}},
      {"breathless_level_ground",
       {"breathless_level_ground", "Shortness of breath walking on level ground", 0.031, -0.031, 0.093}},
      {"degree", {"degree", "College/university degree", -0.217, -0.258, -0.175}},
      {"good_health", {"good_health", "Good or excellent health (self-reported)", -0.323, -0.360, -0.286}},
      {"alcohol_monthly_plus",
       {"alcohol_monthly_plus", "Drinks alcohol once a month or more", -0.375, -0.413, -0.337}},
  };
  std::vector<PublishedTerm> out;
  const auto& modifiable = default_modifiable_fields();
  for (const auto& t : model_terms()) {
    PublishedTerm p = table.at(std::string(t.column));
    p.modifiable = std::find(modifiable.begin(), modifiable.end(), std::string(t.field)) != modifiable.end();
    out.push_back(p);
  }
  return out;
}

/// Published coefficients under the per-SD convention: centers are the
/// cohort medians, scales the SDs of the quartile-matched marginals. The
/// baseline survival is left unset until `calibrate_baseline` runs.
inline PublishedModel uncalibrated_published_model() {
  PublishedModel m;
  m.terms = published_terms();
  m.scaling = reference_scaling(cohort_preset());
  return m;
}

struct Contribution {
  std::string feature;
  double value = 0.0;          // raw (unstandardized) encoded value
  double encoded_value = 0.0;  // standardized value the coefficient multiplies
  double coefficient = 0.0;
  double contribution = 0.0;
  bool modifiable = false;
};

struct RiskBreakdown {
  double total_risk = 0.0;
  double linear_predictor = 0.0;
  std::vector<Contribution> contributions;
};

inline double linear_predictor(const PublishedModel& m, const SubjectRecord& r) {
  const auto& terms = model_terms();
  double lp = 0.0;
  for (std::size_t j = 0; j < terms.size(); ++j)
    lp += m.terms[j].log_hr * (raw_term_value(r, terms[j]) - m.scaling[j].center) / m.scaling[j].scale;
  return lp;
}

/// 1 - S0^exp(lp).
inline double risk_from_lp(double baseline_survival, double lp) {
  return -std::expm1(std::exp(lp) * std::log(baseline_survival));
}

inline RiskBreakdown score(const PublishedModel& m, const SubjectRecord& r) {
  if (!(m.baseline_survival > 0.0 && m.baseline_survival < 1.0))
    throw UsageError("published model has no calibrated baseline survival");
  if (auto why = range_violation(r)) throw RangeError(*why);
  const auto& terms = model_terms();
  RiskBreakdown b;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    Contribution c;
    c.feature = m.terms[j].name;
    c.value = raw_term_value(r, terms[j]);
    c.encoded_value = (c.value - m.scaling[j].center) / m.scaling[j].scale;
    c.coefficient = m.terms[j].log_hr;
    c.contribution = c.coefficient * c.encoded_value;
    c.modifiable = m.terms[j].modifiable;
    b.linear_predictor += c.contribution;
    b.contributions.push_back(std::move(c));
  }
  b.total_risk = risk_from_lp(m.baseline_survival, b.linear_predictor);
  return b;
}

struct WhatIfResult {
  RiskBreakdown before;
  RiskBreakdown after;
  double delta = 0.0;
};

/// Field name -> new value (booleans as 0/1, ethnicity as its level index).
using Modifications = std::map<std::string, double>;

inline SubjectRecord apply_modifications(const SubjectRecord& base, const Modifications& mods,
                                         bool allow_non_modifiable = false) {
  const auto& modifiable = default_modifiable_fields();
  SubjectRecord r = base;
  for (const auto& [name, value] : mods) {
    const FieldInfo* f = find_field(name);
    if (f == nullptr) throw FieldError(name, "unknown field");
    if (!allow_non_modifiable && std::find(modifiable.begin(), modifiable.end(), name) == modifiable.end())
      throw NotModifiableError("field '" + name + "' is not modifiable");
    f->set(r, value);
  }
  // Someone who stops smoking keeps their exposure history as a former smoker.
  if (r.pack_years > 0.0 && !r.currently_smoking) r.previous_smoker = true;
  return r;
}

inline WhatIfResult whatif(const PublishedModel& m, const SubjectRecord& base, const Modifications& mods,
                           bool allow_non_modifiable = false) {
  WhatIfResult w;
  w.before = score(m, base);
  w.after = score(m, apply_modifications(base, mods, allow_non_modifiable));
  w.delta = w.after.total_risk - w.before.total_risk;
  return w;
}

/// S0 in (1e-9, 1 - 1e-9) such that the mean predicted risk over `reference`
/// equals `target_mean_risk`. Mean risk decreases strictly in S0, so
/// bisection finds the unique root.
inline double calibrate_baseline(const PublishedModel& m, std::span<const SubjectRecord> reference,
                                 double target_mean_risk = 0.0359) {
  if (reference.empty()) throw DataError("calibration needs a non-empty reference cohort");
  std::vector<double> hr(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) hr[i] = std::exp(linear_predictor(m, reference[i]));
  auto mean_risk = [&](double s0) {
    const double log_s0 = std::log(s0);
    double s = 0.0;
    for (double h : hr) s += -std::expm1(h * log_s0);
    return s / static_cast<double>(hr.size());
  };
  double lo = 1e-9, hi = 1.0 - 1e-9;
  if (!(mean_risk(hi) <= target_mean_risk && target_mean_risk <= mean_risk(lo)))
    throw NumericError("target mean risk is not attainable with S0 in (1e-9, 1 - 1e-9)");
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (mean_risk(mid) > target_mean_risk ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct ReferenceCohortSpec {
  std::size_t n = 100000;
  std::uint64_t seed = 2020;
  double target_mean_risk = 0.0359;
};

/// Calibrates S0 on a synthetic cohort drawn from the preset marginals and
/// records how it was obtained.
inline PublishedModel calibrated_published_model(const ReferenceCohortSpec& spec = {}) {
  PublishedModel m = uncalibrated_published_model();
  GeneratorConfig cfg = cohort_preset();
  cfg.n = spec.n;
  cfg.seed = spec.seed;
  const auto records = sample_features(cfg);
  m.baseline_survival = calibrate_baseline(m, records, spec.target_mean_risk);
  double achieved = 0.0;
  for (const auto& r : records) achieved += risk_from_lp(m.baseline_survival, linear_predictor(m, r));
  achieved /= static_cast<double>(records.size());
  m.calibration = {{"method", "bisection on mean predicted risk"},
                   {"target_mean_risk", spec.target_mean_risk},
                   {"achieved_mean_risk", achieved},
                   {"reference_cohort", {{"generator", "cohort_preset"}, {"n", spec.n}, {"seed", spec.seed}}}};
  return m;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SubjectRecord& r) {
  nlohmann::json j;
  for (const auto& f : subject_fields()) {
    switch (f.kind) {
      case FieldKind::Categorical: j[std::string(f.name)] = std::string(to_string(r.ethnicity)); break;
      case FieldKind::Binary: j[std::string(f.name)] = f.get(r) != 0.0; break;
      case FieldKind::Integer: j[std::string(f.name)] = r.age; break;
      case FieldKind::Continuous: j[std::string(f.name)] = f.get(r); break;
    }
  }
  return j;
}

/// Strict parse: every non-optional field present with the right JSON type,
/// no unknown keys. Range rules are checked separately (RangeError).
inline SubjectRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FieldError("(body)", "expected a JSON object");
  std::map<std::string, std::string> problems;
  for (const auto& [key, _] : j.items())
    if (!find_field(key)) problems[key] = "unknown field";
  SubjectRecord r;
  bool previous_given = false;
  for (const auto& f : subject_fields()) {
    const std::string name(f.name);
    if (!j.contains(name)) {
      if (!f.optional_column) problems[name] = "missing";
      continue;
    }
    const auto& v = j.at(name);
    switch (f.kind) {
      case FieldKind::Categorical:
        if (!v.is_string()) problems[name] = "expected string";
        else if (auto e = parse_ethnicity(v.get<std::string>())) r.ethnicity = *e;
        else problems[name] = "expected one of white_other, asian, black";
        break;
      case FieldKind::Binary:
        if (!v.is_boolean()) problems[name] = "expected boolean";
        else f.set(r, v.get<bool>() ? 1.0 : 0.0);
        if (f.optional_column) previous_given = true;
        break;
      case FieldKind::Integer:
        if (!v.is_number_integer()) problems[name] = "expected integer";
        else r.age = v.get<int>();
        break;
      case FieldKind::Continuous:
        if (!v.is_number()) problems[name] = "expected number";
        else f.set(r, v.get<double>());
        break;
    }
  }
  if (!problems.empty()) throw FieldError(std::move(problems));
  if (!previous_given) r.previous_smoker = r.pack_years > 0.0 && !r.currently_smoking;
  return r;
}

/// What-if modification values use the same JSON types as the record.
inline Modifications modifications_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FieldError("modifications", "expected a JSON object");
  Modifications out;
  std::map<std::string, std::string> problems;
  for (const auto& [name, v] : j.items()) {
    const FieldInfo* f = find_field(name);
    if (!f) {
      problems[name] = "unknown field";
      continue;
    }
    switch (f->kind) {
      case FieldKind::Categorical:
        if (auto e = v.is_string() ? parse_ethnicity(v.get<std::string>()) : std::nullopt)
          out[name] = static_cast<int>(*e);
        else
          problems[name] = "expected one of white_other, asian, black";
        break;
      case FieldKind::Binary:
        if (v.is_boolean()) out[name] = v.get<bool>() ? 1.0 : 0.0;
        else problems[name] = "expected boolean";
        break;
      case FieldKind::Integer:
        if (v.is_number_integer()) out[name] = v.get<double>();
        else problems[name] = "expected integer";
        break;
      case FieldKind::Continuous:
        if (v.is_number()) out[name] = v.get<double>();
        else problems[name] = "expected number";
        break;
    }
  }
  if (!problems.empty()) throw FieldError(std::move(problems));
  return out;
}

inline nlohmann::json to_json(const RiskBreakdown& b) {
  nlohmann::json contributions = nlohmann::json::array();
  for (const auto& c : b.contributions)
    contributions.push_back({{"feature", c.feature},
                             {"value", c.value},
                             {"encoded_value", c.encoded_value},
                             {"coefficient", c.coefficient},
                             {"contribution", c.contribution},
                             {"modifiable", c.modifiable}});
  return {{"total_risk", b.total_risk},
          {"linear_predictor", b.linear_predictor},
          {"contributions", std::move(contributions)}};
}

inline constexpr int kPublishedModelVersion = 1;

inline nlohmann::json to_json(const PublishedModel& m) {
  nlohmann::json coefficients = nlohmann::json::array();
  nlohmann::json standardization = nlohmann::json::object();
  const auto& terms = model_terms();
  for (std::size_t j = 0; j < m.terms.size(); ++j) {
    const auto& t = m.terms[j];
    coefficients.push_back({{"name", t.name},
                            {"label", t.label},
                            {"log_hr", t.log_hr},
                            {"ci95_low", t.ci95_low},
                            {"ci95_high", t.ci95_high},
                            {"modifiable", t.modifiable}});
    if (terms[j].kind == TermKind::Continuous)
      standardization[t.name] = {{"center", m.scaling[j].center}, {"scale", m.scaling[j].scale}};
  }
  return {{"format", "t2drisk.published_model"},
          {"format_version", kPublishedModelVersion},
          {"model_version", m.version},
          {"horizon_years", m.horizon},
          {"baseline_survival", m.baseline_survival},
          {"coefficients", std::move(coefficients)},
          {"standardization",
           {{"convention",
             "continuous log hazard ratios are per standard deviation; center = cohort median, "
             "scale = SD of the log-normal (pack-years: zero-inflated log-normal) matched to the "
             "cohort quartiles. The coefficients are reported without units, so this convention is an interpretation."},
            {"features", std::move(standardization)}}},
          {"calibration", m.calibration},
          {"disclaimer", kDisclaimer}};
}

inline PublishedModel published_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "t2drisk.published_model")
      throw DataError("not a published model artifact");
    if (j.at("format_version").get<int>() != kPublishedModelVersion)
      throw DataError("unsupported published model version");
    PublishedModel m;
    m.version = j.at("model_version").get<std::string>();
    m.horizon = j.at("horizon_years").get<double>();
    m.baseline_survival = j.at("baseline_survival").get<double>();
    if (!(m.baseline_survival > 0.0 && m.baseline_survival < 1.0))
      throw DataError("baseline_survival must lie in (0,1)");
    m.calibration = j.at("calibration");
    const auto& terms = model_terms();
    const auto& coefs = j.at("coefficients");
    if (coefs.size() != terms.size()) throw DataError("artifact must list exactly 19 coefficients");
    const auto& stdz = j.at("standardization").at("features");
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const auto& c = coefs.at(k);
      PublishedTerm t;
      t.name = c.at("name").get<std::string>();
      if (t.name != terms[k].column) throw DataError("coefficient " + std::to_string(k) + " should be " + std::string(terms[k].column));
      t.label = c.at("label").get<std::string>();
      t.log_hr = c.at("log_hr").get<double>();
      t.ci95_low = c.at("ci95_low").get<double>();
      t.ci95_high = c.at("ci95_high").get<double>();
      t.modifiable = c.at("modifiable").get<bool>();
      if (!std::isfinite(t.log_hr)) throw DataError("non-finite coefficient " + t.name);
      m.terms.push_back(t);
      if (terms[k].kind == TermKind::Continuous) {
        const auto& s = stdz.at(t.name);
        m.scaling.push_back({s.at("center").get<double>(), s.at("scale").get<double>()});
        if (!(m.scaling.back().scale > 0.0)) throw DataError("non-positive scale for " + t.name);
      } else {
        m.scaling.push_back({});
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed published model artifact: ") + e.what());
  }
}

/// Response documents shared by the library and the HTTP service.
inline nlohmann::json render_score(const PublishedModel& m, const SubjectRecord& r) {
  nlohmann::json j = to_json(score(m, r));
  j["model_version"] = m.version;
  j["horizon_years"] = m.horizon;
  j["disclaimer"] = kDisclaimer;
  return j;
}

inline nlohmann::json render_whatif(const PublishedModel& m, const SubjectRecord& base,
                                    const Modifications& mods, bool allow_non_modifiable = false) {
  const WhatIfResult w = whatif(m, base, mods, allow_non_modifiable);
  return {{"before", to_json(w.before)},
          {"after", to_json(w.after)},
          {"delta", w.delta},
          {"model_version", m.version},
          {"horizon_years", m.horizon},
          {"disclaimer", kDisclaimer}};
}

inline PublishedModel load_published_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model artifact " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model artifact is not valid JSON: ") + e.what());
  }
  return published_model_from_json(j);
}

}  // namespace t2drisk
