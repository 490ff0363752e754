#pragma once

// Stepwise backward elimination on cross-validated concordance, plus the
// manual review overrides applied afterwards.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/cox.hpp"
#include "t2drisk/evaluation.hpp"
#include "t2drisk/random.hpp"

namespace t2drisk {

struct CvScore {
  std::vector<double> folds;
  double mean = 0.0;
  double sd = 0.0;  // sample SD across folds
};

enum class StepDecision { Kept, Removed, Skipped };

inline std::string_view to_string(StepDecision d) {
  switch (d) {
    case StepDecision::Removed: return "removed";
    case StepDecision::Skipped: return "skipped";
    case StepDecision::Kept: break;
  }
  return "kept";
}

struct EliminationStep {
  int pass = 0;
  std::string candidate;  // elimination group
  CvScore baseline;
  CvScore without;
  double degradation = 0.0;  // baseline.mean - without.mean
  double threshold = 0.0;
  StepDecision decision = StepDecision::Kept;
  std::string note;
};

struct ReviewOverride {
  std::string feature;
  bool keep = false;  // true: force back in; false: block
  std::string reason;
};

struct EliminationLedger {
  std::vector<EliminationStep> steps;
  std::vector<ReviewOverride> overrides;
};

/// Which fold SD bounds an acceptable degradation.
enum class SdRule { Baseline, Candidate };

struct EliminationOptions {
  std::size_t folds = 2;
  std::uint64_t seed = 0;
  SdRule sd_rule = SdRule::Baseline;
  FitOptions fit;
};

struct EliminationResult {
  std::vector<std::string> kept;  // elimination groups, input order
  EliminationLedger ledger;
};

/// Outcome-stratified fold labels, deterministic in the seed.
inline std::vector<std::size_t> stratified_folds(std::span<const std::uint8_t> events,
                                                 std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw UsageError("cross-validation needs at least 2 folds");
  std::vector<std::size_t> label(events.size());
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < events.size(); ++i)
      if ((events[i] != 0) == (s == 1)) idx.push_back(i);
    Rng rng = derive_rng(seed, 0xF01D + s);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) label[idx[k]] = k % folds;
  }
  return label;
}

namespace select_detail {

struct Fold {
  EncodedCohort train, test;
};

inline std::vector<std::string> group_order(const EncodedCohort& c) {
  std::vector<std::string> out;
  for (const auto& g : c.groups)
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  return out;
}

inline CvScore summarize(std::vector<double> folds) {
  CvScore s;
  s.folds = std::move(folds);
  const double k = static_cast<double>(s.folds.size());
  s.mean = std::accumulate(s.folds.begin(), s.folds.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : s.folds) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.folds.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  return s;
}

/// Cross-validated c-index using only the columns of `groups`. A model with
/// no columns ranks everyone equally (0.5).
inline CvScore cv_score(const std::vector<Fold>& folds, const std::vector<std::string>& groups,
                        const FitOptions& fit_opts) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < folds.front().train.cols(); ++j)
    if (std::find(groups.begin(), groups.end(), folds.front().train.groups[j]) != groups.end())
      cols.push_back(j);
  std::vector<double> values;
  for (const auto& f : folds) {
    if (cols.empty()) {
      values.push_back(0.5);
      continue;
    }
    const auto train = select_columns(f.train, cols);
    const auto test = select_columns(f.test, cols);
    const auto result = fit(train, fit_opts);
    const auto lp = linear_predictor(result.model, test);
    values.push_back(concordance_index(test.times, test.events, lp));
  }
  return summarize(std::move(values));
}

}  // namespace select_detail

/// Each pass scores the current set and every set with one group left out.
/// The group whose exclusion degrades the mean CV c-index least is removed,
/// provided that degradation does not exceed one fold SD; otherwise the
/// procedure stops. Indicator columns of one categorical share a group and
/// leave together.
inline EliminationResult backward_eliminate(const EncodedCohort& cohort,
                                            const EliminationOptions& opts = {}) {
  const auto labels = stratified_folds(cohort.events, opts.folds, opts.seed);
  std::vector<select_detail::Fold> folds(opts.folds);
  for (std::size_t f = 0; f < opts.folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == f ? te : tr).push_back(i);
    folds[f] = {subset_rows(cohort, tr), subset_rows(cohort, te)};
    if (folds[f].test.event_count() == 0 || folds[f].train.event_count() == 0)
      throw DataError("fold " + std::to_string(f) + " has no events");
  }

  EliminationResult out;
  std::vector<std::string> current = select_detail::group_order(cohort);
  const std::size_t max_passes = current.size();
  for (int pass = 1; static_cast<std::size_t>(pass) <= max_passes && !current.empty(); ++pass) {
    const CvScore baseline = select_detail::cv_score(folds, current, opts.fit);
    std::optional<std::size_t> best;
    for (const auto& g : current) {
      EliminationStep step;
      step.pass = pass;
      step.candidate = g;
      step.baseline = baseline;
      std::vector<std::string> reduced;
      for (const auto& h : current)
        if (h != g) reduced.push_back(h);
      try {
        step.without = select_detail::cv_score(folds, reduced, opts.fit);
      } catch (const std::exception& e) {
        step.decision = StepDecision::Skipped;
        step.note = std::string("fit failed: ") + e.what();
        out.ledger.steps.push_back(std::move(step));
        continue;
      }
      step.degradation = baseline.mean - step.without.mean;
      step.threshold = opts.sd_rule == SdRule::Baseline ? baseline.sd : step.without.sd;
      out.ledger.steps.push_back(std::move(step));
      const auto& s = out.ledger.steps.back();
      if (s.degradation <= s.threshold &&
          (!best || s.degradation < out.ledger.steps[*best].degradation))
        best = out.ledger.steps.size() - 1;
    }
    if (!best) break;
    out.ledger.steps[*best].decision = StepDecision::Removed;
    const std::string removed = out.ledger.steps[*best].candidate;
    current.erase(std::find(current.begin(), current.end(), removed));
  }
  out.kept = current;
  return out;
}

/// Applies manual overrides to the kept set: blocked features are dropped,
/// forced ones are added back. Every override is appended to the ledger.
inline std::vector<std::string> clinical_review_filter(const std::vector<std::string>& kept,
                                                       const std::vector<std::string>& known,
                                                       const std::vector<ReviewOverride>& overrides,
                                                       EliminationLedger* ledger = nullptr) {
  for (const auto& o : overrides)
    if (std::find(known.begin(), known.end(), o.feature) == known.end())
      throw UsageError("review override names unknown feature '" + o.feature + "'");
  std::vector<std::string> out;
  for (const auto& f : known) {
    bool keep = std::find(kept.begin(), kept.end(), f) != kept.end();
    for (const auto& o : overrides)
      if (o.feature == f) keep = o.keep;
    if (keep) out.push_back(f);
  }
  if (ledger) ledger->overrides.insert(ledger->overrides.end(), overrides.begin(), overrides.end());
  return out;
}

inline nlohmann::json to_json(const CvScore& s) {
  return {{"folds", s.folds}, {"mean", s.mean}, {"sd", s.sd}};
}

/// One JSON object per line: elimination steps first, then overrides.
inline void write_ledger(std::ostream& out, const EliminationLedger& ledger) {
  for (const auto& s : ledger.steps) {
    nlohmann::json j = {{"pass", s.pass},
                        {"candidate", s.candidate},
                        {"baseline", to_json(s.baseline)},
                        {"decision", to_string(s.decision)}};
    if (s.decision != StepDecision::Skipped) {
      j["without"] = to_json(s.without);
      j["degradation"] = s.degradation;
      j["threshold"] = s.threshold;
    }
    if (!s.note.empty()) j["note"] = s.note;
    out << j.dump() << '\n';
  }
  for (const auto& o : ledger.overrides)
    out << nlohmann::json{{"override", o.feature},
                          {"action", o.keep ? "force_keep" : "block"},
                          {"reason", o.reason}}
               .dump()
        << '\n';
}

}  // namespace t2drisk
