#pragma once

// Subject records, outcome encoding, design-matrix construction and the
// outcome-stratified train/test split.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "t2drisk/error.hpp"
#include "t2drisk/random.hpp"

namespace t2drisk {

enum class Ethnicity : int { WhiteOther = 0, Asian = 1, Black = 2 };

inline std::string_view to_string(Ethnicity e) {
  switch (e) {
    case Ethnicity::Asian: return "asian";
    case Ethnicity::Black: return "black";
    case Ethnicity::WhiteOther: break;
  }
  return "white_other";
}

inline std::optional<Ethnicity> parse_ethnicity(std::string_view token) {
  if (token == "white_other") return Ethnicity::WhiteOther;
  if (token == "asian") return Ethnicity::Asian;
  if (token == "black") return Ethnicity::Black;
  return std::nullopt;
}

/// Raw answers for one participant. `daytime_dozing` is the item tabulated
/// as "Narcolepsy" (23.7% prevalence, i.e. dozing, not the
/// clinical diagnosis). `previous_smoker` is carried for completeness but is
/// not a model term.
struct SubjectRecord {
  int age = 58;
  double waist_hip_ratio = 0.87;
  double bmi = 26.57;
  Ethnicity ethnicity = Ethnicity::WhiteOther;
  bool degree = false;
  bool cvd_diagnosis = false;
  bool cholesterol_meds = false;
  bool other_meds = false;
  bool stomach_pain = false;
  bool daytime_dozing = false;
  bool breathless_level_ground = false;
  bool diabetes_father = false;
  bool diabetes_mother = false;
  bool diabetes_siblings = false;
  bool alcohol_monthly_plus = false;
  bool currently_smoking = false;
  bool previous_smoker = false;
  double pack_years = 0.0;
  bool good_health = false;

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

/// Years since enrollment; event is incident disease, every other exit is a
/// censoring.
struct Outcome {
  double time = 0.0;
  bool event = false;

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Subject {
  SubjectRecord record;
  Outcome outcome;

  friend bool operator==(const Subject&, const Subject&) = default;
};

// ---------------------------------------------------------------------------
// Field schema

enum class FieldKind { Continuous, Integer, Binary, Categorical };

struct FieldInfo {
  std::string_view name;
  FieldKind kind;
  double (*get)(const SubjectRecord&);
  void (*set)(SubjectRecord&, double);
  bool optional_column = false;
};

#define T2DRISK_BOOL_FIELD(member)                                                   \
  FieldInfo {                                                                        \
    #member, FieldKind::Binary,                                                      \
        [](const SubjectRecord& r) { return r.member ? 1.0 : 0.0; },                 \
        [](SubjectRecord& r, double v) { r.member = v != 0.0; }                      \
  }

/// Every raw field in CSV/JSON order. Names are the on-disk column names.
inline const std::array<FieldInfo, 19>& subject_fields() {
  static const std::array<FieldInfo, 19> fields = {{
      {"age", FieldKind::Integer, [](const SubjectRecord& r) { return double(r.age); },
       [](SubjectRecord& r, double v) { r.age = static_cast<int>(std::lround(v)); }},
      {"waist_hip_ratio", FieldKind::Continuous,
       [](const SubjectRecord& r) { return r.waist_hip_ratio; },
       [](SubjectRecord& r, double v) { r.waist_hip_ratio = v; }},
      {"bmi", FieldKind::Continuous, [](const SubjectRecord& r) { return r.bmi; },
       [](SubjectRecord& r, double v) { r.bmi = v; }},
      {"ethnicity", FieldKind::Categorical,
       [](const SubjectRecord& r) { return double(static_cast<int>(r.ethnicity)); },
       [](SubjectRecord& r, double v) { r.ethnicity = static_cast<Ethnicity>(std::lround(v)); }},
      T2DRISK_BOOL_FIELD(degree),
      T2DRISK_BOOL_FIELD(cvd_diagnosis),
      T2DRISK_BOOL_FIELD(cholesterol_meds),
      T2DRISK_BOOL_FIELD(other_meds),
      T2DRISK_BOOL_FIELD(stomach_pain),
      T2DRISK_BOOL_FIELD(daytime_dozing),
      T2DRISK_BOOL_FIELD(breathless_level_ground),
      T2DRISK_BOOL_FIELD(diabetes_father),
      T2DRISK_BOOL_FIELD(diabetes_mother),
      T2DRISK_BOOL_FIELD(diabetes_siblings),
      T2DRISK_BOOL_FIELD(alcohol_monthly_plus),
      T2DRISK_BOOL_FIELD(currently_smoking),
      FieldInfo{"previous_smoker", FieldKind::Binary,
                [](const SubjectRecord& r) { return r.previous_smoker ? 1.0 : 0.0; },
                [](SubjectRecord& r, double v) { r.previous_smoker = v != 0.0; }, true},
      {"pack_years", FieldKind::Continuous, [](const SubjectRecord& r) { return r.pack_years; },
       [](SubjectRecord& r, double v) { r.pack_years = v; }},
      T2DRISK_BOOL_FIELD(good_health),
  }};
  return fields;
}

#undef T2DRISK_BOOL_FIELD

inline const FieldInfo* find_field(std::string_view name) {
  for (const auto& f : subject_fields())
    if (f.name == name) return &f;
  return nullptr;
}

/// Checks the per-field range rules. Returns a message for the first
/// violation, or nothing when the record is valid.
inline std::optional<std::string> range_violation(const SubjectRecord& r) {
  if (r.age < 18) return "age must be an integer >= 18";
  if (!(r.waist_hip_ratio > 0.0) || !std::isfinite(r.waist_hip_ratio))
    return "waist_hip_ratio must be > 0";
  if (!(r.bmi > 0.0) || !std::isfinite(r.bmi)) return "bmi must be > 0";
  if (!(r.pack_years >= 0.0) || !std::isfinite(r.pack_years)) return "pack_years must be >= 0";
  if (r.pack_years > 0.0 && !r.currently_smoking && !r.previous_smoker)
    return "pack_years must be 0 for a subject who never smoked";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Model terms

enum class TermKind { Continuous, Binary, Indicator };

struct ModelTerm {
  std::string_view column;  // encoded column name
  std::string_view field;   // source field
  TermKind kind;
  int level = 0;            // ethnicity level for indicators
  std::string_view group;   // elimination group
};

/// The 19 encoded columns of the reduced model. Ethnicity expands to two
/// indicators with white/other as the omitted reference level.
inline const std::array<ModelTerm, 19>& model_terms() {
  static const std::array<ModelTerm, 19> terms = {{
      {"age", "age", TermKind::Continuous, 0, "age"},
      {"waist_hip_ratio", "waist_hip_ratio", TermKind::Continuous, 0, "waist_hip_ratio"},
      {"bmi", "bmi", TermKind::Continuous, 0, "bmi"},
      {"ethnicity_asian", "ethnicity", TermKind::Indicator, 1, "ethnicity"},
      {"ethnicity_black", "ethnicity", TermKind::Indicator, 2, "ethnicity"},
      {"degree", "degree", TermKind::Binary, 0, "degree"},
      {"cvd_diagnosis", "cvd_diagnosis", TermKind::Binary, 0, "cvd_diagnosis"},
      {"cholesterol_meds", "cholesterol_meds", TermKind::Binary, 0, "cholesterol_meds"},
      {"other_meds", "other_meds", TermKind::Binary, 0, "other_meds"},
      {"stomach_pain", "stomach_pain", TermKind::Binary, 0, "stomach_pain"},
      {"daytime_dozing", "daytime_dozing", TermKind::Binary, 0, "daytime_dozing"},
      {"breathless_level_ground", "breathless_level_ground", TermKind::Binary, 0,
       "breathless_level_ground"},
      {"diabetes_father", "diabetes_father", TermKind::Binary, 0, "diabetes_father"},
      {"diabetes_mother", "diabetes_mother", TermKind::Binary, 0, "diabetes_mother"},
      {"diabetes_siblings", "diabetes_siblings", TermKind::Binary, 0, "diabetes_siblings"},
      {"alcohol_monthly_plus", "alcohol_monthly_plus", TermKind::Binary, 0,
       "alcohol_monthly_plus"},
      {"currently_smoking", "currently_smoking", TermKind::Binary, 0, "currently_smoking"},
      {"pack_years", "pack_years", TermKind::Continuous, 0, "pack_years"},
      {"good_health", "good_health", TermKind::Binary, 0, "good_health"},
  }};
  return terms;
}

inline const ModelTerm* find_term(std::string_view column) {
  for (const auto& t : model_terms())
    if (t.column == column) return &t;
  return nullptr;
}

/// Unstandardized value of one encoded column for a record.
inline double raw_term_value(const SubjectRecord& r, const ModelTerm& term) {
  const FieldInfo* f = find_field(term.field);
  const double v = f->get(r);
  if (term.kind == TermKind::Indicator) return std::lround(v) == term.level ? 1.0 : 0.0;
  return v;
}

inline double raw_term_value(const SubjectRecord& r, std::string_view column) {
  const ModelTerm* term = find_term(column);
  if (term == nullptr) throw UsageError("unknown feature name: " + std::string(column));
  return raw_term_value(r, *term);
}

/// Inverse of the indicator expansion.
inline Ethnicity decode_ethnicity(double asian, double black) {
  if (asian != 0.0 && black != 0.0) throw DataError("both ethnicity indicators set");
  if (asian != 0.0) return Ethnicity::Asian;
  if (black != 0.0) return Ethnicity::Black;
  return Ethnicity::WhiteOther;
}

// ---------------------------------------------------------------------------
// Encoded cohort

struct ColumnScaling {
  double center = 0.0;
  double scale = 1.0;

  friend bool operator==(const ColumnScaling&, const ColumnScaling&) = default;
};

/// Numeric design matrix with per-row survival outcome. Continuous columns
/// hold (raw - center) / scale; every other column is passed through as is.
struct EncodedCohort {
  std::vector<std::string> feature_names;
  std::vector<std::string> groups;
  std::vector<bool> continuous;
  std::vector<ColumnScaling> scaling;
  Eigen::MatrixXd matrix;  // rows x cols
  std::vector<double> times;
  std::vector<std::uint8_t> events;

  std::size_t rows() const { return times.size(); }
  std::size_t cols() const { return feature_names.size(); }
  std::size_t event_count() const {
    return static_cast<std::size_t>(std::count(events.begin(), events.end(), std::uint8_t{1}));
  }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t j = 0; j < feature_names.size(); ++j)
      if (feature_names[j] == name) return j;
    return std::nullopt;
  }

  /// Design matrix with standardization undone.
  Eigen::MatrixXd raw_matrix() const {
    Eigen::MatrixXd raw = matrix;
    for (std::size_t j = 0; j < cols(); ++j)
      raw.col(static_cast<Eigen::Index>(j)) =
          raw.col(static_cast<Eigen::Index>(j)).array() * scaling[j].scale + scaling[j].center;
    return raw;
  }
};

/// Mean and sample standard deviation of every continuous column (identity
/// scaling elsewhere) computed from the cohort's raw values.
inline std::vector<ColumnScaling> fit_scaling(const Eigen::MatrixXd& raw,
                                              const std::vector<bool>& continuous,
                                              const std::vector<std::string>& names) {
  std::vector<ColumnScaling> out(continuous.size());
  const auto n = raw.rows();
  for (std::size_t j = 0; j < continuous.size(); ++j) {
    if (!continuous[j]) continue;
    if (n < 2) throw DataError("cannot standardize " + names[j] + ": fewer than two rows");
    const auto col = raw.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    const double ss = (col.array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || !std::isfinite(sd))
      throw DataError("cannot standardize " + names[j] + ": zero variance");
    out[j] = {mean, sd};
  }
  return out;
}

/// Builds a cohort from a raw (unstandardized) matrix. When `scaling` is
/// empty, it is fitted on this matrix.
inline EncodedCohort make_cohort(std::vector<std::string> names, std::vector<std::string> groups,
                                 std::vector<bool> continuous, const Eigen::MatrixXd& raw,
                                 std::vector<double> times, std::vector<std::uint8_t> events,
                                 std::vector<ColumnScaling> scaling = {}) {
  const auto p = names.size();
  if (groups.size() != p || continuous.size() != p || static_cast<std::size_t>(raw.cols()) != p)
    throw UsageError("column metadata does not match matrix width");
  if (static_cast<std::size_t>(raw.rows()) != times.size() || times.size() != events.size())
    throw UsageError("row count mismatch between matrix and outcomes");
  if (scaling.empty()) scaling = fit_scaling(raw, continuous, names);
  if (scaling.size() != p) throw UsageError("scaling does not match matrix width");

  EncodedCohort c;
  c.matrix = raw;
  for (std::size_t j = 0; j < p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    c.matrix.col(jj) = (raw.col(jj).array() - scaling[j].center) / scaling[j].scale;
  }
  c.feature_names = std::move(names);
  c.groups = std::move(groups);
  c.continuous = std::move(continuous);
  c.scaling = std::move(scaling);
  c.times = std::move(times);
  c.events = std::move(events);
  return c;
}

inline EncodedCohort encode(std::span<const Subject> subjects,
                            std::vector<ColumnScaling> scaling = {}) {
  if (subjects.empty()) throw DataError("cannot encode an empty record list");
  const auto& terms = model_terms();
  const auto n = static_cast<Eigen::Index>(subjects.size());
  const auto p = static_cast<Eigen::Index>(terms.size());

  Eigen::MatrixXd raw(n, p);
  std::vector<double> times(subjects.size());
  std::vector<std::uint8_t> events(subjects.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Subject& s = subjects[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) raw(i, j) = raw_term_value(s.record, terms[j]);
    times[i] = s.outcome.time;
    events[i] = s.outcome.event ? 1 : 0;
  }

  std::vector<std::string> names, groups;
  std::vector<bool> continuous;
  for (const auto& t : terms) {
    names.emplace_back(t.column);
    groups.emplace_back(t.group);
    continuous.push_back(t.kind == TermKind::Continuous);
  }
  return make_cohort(std::move(names), std::move(groups), std::move(continuous), raw,
                     std::move(times), std::move(events), std::move(scaling));
}

/// Same rows and raw values, different standardization.
inline EncodedCohort rescale(const EncodedCohort& c, std::vector<ColumnScaling> scaling) {
  return make_cohort(c.feature_names, c.groups, c.continuous, c.raw_matrix(), c.times, c.events,
                     std::move(scaling));
}

/// Standardization refitted on this cohort's own raw values.
inline EncodedCohort restandardize(const EncodedCohort& c) {
  return make_cohort(c.feature_names, c.groups, c.continuous, c.raw_matrix(), c.times, c.events);
}

inline EncodedCohort subset_rows(const EncodedCohort& c, std::span<const std::size_t> rows) {
  EncodedCohort out;
  out.feature_names = c.feature_names;
  out.groups = c.groups;
  out.continuous = c.continuous;
  out.scaling = c.scaling;
  out.matrix.resize(static_cast<Eigen::Index>(rows.size()), c.matrix.cols());
  out.times.reserve(rows.size());
  out.events.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.matrix.row(static_cast<Eigen::Index>(k)) = c.matrix.row(static_cast<Eigen::Index>(rows[k]));
    out.times.push_back(c.times[rows[k]]);
    out.events.push_back(c.events[rows[k]]);
  }
  return out;
}

inline EncodedCohort select_columns(const EncodedCohort& c, std::span<const std::size_t> cols) {
  EncodedCohort out;
  out.matrix.resize(c.matrix.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const std::size_t j = cols[k];
    out.feature_names.push_back(c.feature_names[j]);
    out.groups.push_back(c.groups[j]);
    out.continuous.push_back(c.continuous[j]);
    out.scaling.push_back(c.scaling[j]);
    out.matrix.col(static_cast<Eigen::Index>(k)) = c.matrix.col(static_cast<Eigen::Index>(j));
  }
  out.times = c.times;
  out.events = c.events;
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Partitions row indices so that each outcome stratum (event / non-event)
/// contributes round(test_fraction * stratum size) rows to the test side.
/// Both index lists are returned in ascending order.
inline SplitIndices stratified_split_indices(std::span<const std::uint8_t> events,
                                             double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw UsageError("test fraction must lie strictly between 0 and 1");
  std::array<std::vector<std::size_t>, 2> strata;
  for (std::size_t i = 0; i < events.size(); ++i) strata[events[i] ? 1 : 0].push_back(i);

  SplitIndices out;
  for (std::size_t s = 0; s < 2; ++s) {
    auto& idx = strata[s];
    if (idx.size() < 2)
      throw DataError(std::string("stratum '") + (s ? "event" : "non-event") +
                      "' has fewer than 2 rows");
    Rng rng = derive_rng(seed, s);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<EncodedCohort, EncodedCohort> stratified_split(const EncodedCohort& cohort,
                                                                double test_fraction,
                                                                std::uint64_t seed) {
  const SplitIndices idx = stratified_split_indices(cohort.events, test_fraction, seed);
  return {subset_rows(cohort, idx.train), subset_rows(cohort, idx.test)};
}

}  // namespace t2drisk
