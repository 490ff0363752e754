#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "t2drisk/risk_engine.hpp"

using namespace t2drisk;

namespace {

PublishedModel model_with_s0(double s0) {
  PublishedModel m = uncalibrated_published_model();
  m.baseline_survival = s0;
  return m;
}

double contribution_of(const RiskBreakdown& b, const std::string& name) {
  for (const auto& c : b.contributions)
    if (c.feature == name) return c.contribution;
  throw std::out_of_range(name);
}

}  // namespace

TEST(PublishedTerms, CoefficientTable) {
  const auto terms = published_terms();
  ASSERT_EQ(terms.size(), 19u);
  std::map<std::string, double> by_name;
  for (const auto& t : terms) {
    by_name[t.name] = t.log_hr;
    EXPECT_LE(t.ci95_low, t.log_hr);
    EXPECT_GE(t.ci95_high, t.log_hr);
  }
  EXPECT_EQ(by_name.at("ethnicity_asian"), 0.844);
  EXPECT_EQ(by_name.at("bmi"), 0.399);
  EXPECT_EQ(by_name.at("pack_years"), 0.086);
  EXPECT_EQ(by_name.at("alcohol_monthly_plus"), -0.375);
  EXPECT_EQ(by_name.at("good_health"), -0.323);
}

TEST(PublishedTerms, ModifiableSet) {
  std::vector<std::string> modifiable;
  for (const auto& t : published_terms())
    if (t.modifiable) modifiable.push_back(t.name);
  std::sort(modifiable.begin(), modifiable.end());
  EXPECT_EQ(modifiable, (std::vector<std::string>{"alcohol_monthly_plus", "bmi", "currently_smoking",
                                                  "daytime_dozing", "pack_years", "waist_hip_ratio"}));
}

TEST(Score, ReferenceSubjectCarriesBaselineRisk) {
  const auto m = model_with_s0(0.97);
  const SubjectRecord reference;
  const auto b = score(m, reference);
  EXPECT_NEAR(b.linear_predictor, 0.0, 1e-12);
  EXPECT_NEAR(b.total_risk, 0.03, 1e-12);
}

TEST(Score, BinaryToggleMultipliesHazard) {
  const auto m = model_with_s0(0.97);
  SubjectRecord r;
  const double base = score(m, r).linear_predictor;
  r.diabetes_mother = true;
  const auto b = score(m, r);
  EXPECT_NEAR(b.linear_predictor - base, 0.489, 1e-12);
  EXPECT_NEAR(b.total_risk, 1.0 - std::pow(0.97, std::exp(0.489)), 1e-12);
}

TEST(Score, ContinuousEffectPerStandardDeviation) {
  const auto m = model_with_s0(0.97);
  const auto bmi = static_cast<std::size_t>(find_term("bmi") - model_terms().data());
  SubjectRecord r;
  r.bmi = m.scaling[bmi].center - m.scaling[bmi].scale;
  EXPECT_NEAR(contribution_of(score(m, r), "bmi"), -0.399, 1e-12);
}

TEST(Score, ContributionsSumToLinearPredictor) {
  const auto m = model_with_s0(0.96);
  SubjectRecord r;
  r.age = 66;
  r.bmi = 33.0;
  r.ethnicity = Ethnicity::Asian;
  r.currently_smoking = true;
  r.pack_years = 20;
  r.degree = true;
  const auto b = score(m, r);
  double sum = 0;
  for (const auto& c : b.contributions) sum += c.contribution;
  EXPECT_NEAR(sum, b.linear_predictor, 1e-12);
  EXPECT_NEAR(contribution_of(b, "ethnicity_asian"), 0.844, 1e-15);
  EXPECT_EQ(contribution_of(b, "ethnicity_black"), 0.0);
  EXPECT_EQ(score(m, r).total_risk, b.total_risk);
}

TEST(Score, RiskMonotoneInLinearPredictor) {
  double prev = 0.0;
  for (double lp = -5.0; lp <= 5.0; lp += 0.25) {
    const double risk = risk_from_lp(0.97, lp);
    EXPECT_GT(risk, prev);
    EXPECT_LT(risk, 1.0);
    prev = risk;
  }
}

TEST(Score, RangeAndCalibrationErrors) {
  SubjectRecord r;
  r.bmi = -3.0;
  EXPECT_THROW(score(model_with_s0(0.97), r), RangeError);
  EXPECT_THROW(score(model_with_s0(0.0), SubjectRecord{}), UsageError);
}

TEST(WhatIf, EmptyModificationsLeaveRiskUnchanged) {
  const auto w = whatif(model_with_s0(0.97), SubjectRecord{}, {});
  EXPECT_EQ(w.delta, 0.0);
  EXPECT_EQ(w.before.total_risk, w.after.total_risk);
}

TEST(WhatIf, StoppingDrinkingRaisesModelledRisk) {
  SubjectRecord r;
  r.alcohol_monthly_plus = true;
  const auto w = whatif(model_with_s0(0.97), r, {{"alcohol_monthly_plus", 0.0}});
  EXPECT_NEAR(w.after.linear_predictor - w.before.linear_predictor, 0.375, 1e-12);
  EXPECT_GT(w.delta, 0.0);
}

TEST(WhatIf, QuittingKeepsSmokingHistory) {
  SubjectRecord r;
  r.currently_smoking = true;
  r.pack_years = 12;
  const auto after = apply_modifications(r, {{"currently_smoking", 0.0}});
  EXPECT_TRUE(after.previous_smoker);
  EXPECT_EQ(after.pack_years, 12);
}

TEST(WhatIf, NonModifiableFieldsGuarded) {
  const auto m = model_with_s0(0.97);
  EXPECT_THROW(whatif(m, SubjectRecord{}, {{"age", 70}}), NotModifiableError);
  EXPECT_THROW(whatif(m, SubjectRecord{}, {{"shoe_size", 9}}), FieldError);
  const auto w = whatif(m, SubjectRecord{}, {{"age", 70}}, true);
  EXPECT_GT(w.delta, 0.0);
}

TEST(WhatIf, BaseRecordUntouched) {
  SubjectRecord r;
  const SubjectRecord copy = r;
  (void)whatif(model_with_s0(0.97), r, {{"bmi", 35.0}});
  EXPECT_EQ(r, copy);
}

TEST(Calibrate, RecoversBaselineOnItsOwnOutput) {
  auto m = model_with_s0(0.5);
  GeneratorConfig cfg = cohort_preset();
  cfg.n = 5000;
  cfg.seed = 3;
  const auto records = sample_features(cfg);
  const double target = 0.05;
  m.baseline_survival = calibrate_baseline(m, records, target);
  double mean = 0;
  for (const auto& r : records) mean += score(m, r).total_risk;
  EXPECT_NEAR(mean / 5000, target, 1e-10);
  EXPECT_THROW(calibrate_baseline(m, records, 0.0), NumericError);
  EXPECT_THROW(calibrate_baseline(m, std::vector<SubjectRecord>{}, 0.05), DataError);
}

TEST(Artifact, RoundTripAndValidation) {
  auto m = model_with_s0(0.9721);
  m.calibration = {{"method", "fixed"}};
  const auto j = to_json(m);
  const auto back = published_model_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back), j);
  SubjectRecord r;
  r.bmi = 31.2;
  EXPECT_EQ(score(back, r).total_risk, score(m, r).total_risk);

  auto bad = j;
  bad["coefficients"].erase(3);
  EXPECT_THROW(published_model_from_json(bad), DataError);
  bad = j;
  bad["baseline_survival"] = 1.5;
  EXPECT_THROW(published_model_from_json(bad), DataError);
  bad = j;
  bad.erase("standardization");
  EXPECT_THROW(published_model_from_json(bad), DataError);
}

TEST(Artifact, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "t2drisk_test_model.json";
  {
    std::ofstream out(path);
    out << to_json(model_with_s0(0.97)).dump(2);
  }
  EXPECT_EQ(load_published_model(path.string()).baseline_survival, 0.97);
  {
    std::ofstream out(path);
    out << "{not json";
  }
  EXPECT_THROW(load_published_model(path.string()), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_published_model(path.string()), DataError);
}

TEST(RecordJson, RoundTripAndStrictness) {
  SubjectRecord r;
  r.ethnicity = Ethnicity::Black;
  r.currently_smoking = true;
  r.pack_years = 4.5;
  EXPECT_EQ(record_from_json(to_json(r)), r);

  auto j = to_json(r);
  j.erase("bmi");
  j["favourite_colour"] = "green";
  j["age"] = "old";
  try {
    record_from_json(j);
    FAIL();
  } catch (const FieldError& e) {
    EXPECT_EQ(e.problems().at("bmi"), "missing");
    EXPECT_EQ(e.problems().at("favourite_colour"), "unknown field");
    EXPECT_EQ(e.problems().at("age"), "expected integer");
  }
}

TEST(RecordJson, PreviousSmokerInferredWhenAbsent) {
  SubjectRecord r;
  r.pack_years = 8;
  auto j = to_json(r);
  j.erase("previous_smoker");
  EXPECT_TRUE(record_from_json(j).previous_smoker);
}

TEST(RecordJson, ModificationsTyped) {
  const auto mods = modifications_from_json({{"bmi", 24.0}, {"currently_smoking", false}});
  EXPECT_EQ(mods.at("bmi"), 24.0);
  EXPECT_EQ(mods.at("currently_smoking"), 0.0);
  EXPECT_THROW(modifications_from_json({{"bmi", "low"}}), FieldError);
  EXPECT_THROW(modifications_from_json(nlohmann::json::array()), FieldError);
}

TEST(Render, ResponsesCarryVersionAndDisclaimer) {
  const auto m = model_with_s0(0.97);
  const auto s = render_score(m, SubjectRecord{});
  EXPECT_EQ(s.at("model_version"), m.version);
  EXPECT_EQ(s.at("disclaimer"), kDisclaimer);
  EXPECT_EQ(s.at("contributions").size(), 19u);
  const auto w = render_whatif(m, SubjectRecord{}, {{"bmi", 30.0}});
  EXPECT_GT(w.at("delta").get<double>(), 0.0);
}

TEST(Artifact, ShippedModelMatchesFreshCalibration) {
  const auto shipped = load_published_model(T2DRISK_MODEL_ARTIFACT);
  const auto fresh = calibrated_published_model();
  EXPECT_EQ(to_json(shipped), to_json(fresh));
  EXPECT_NEAR(shipped.calibration.at("achieved_mean_risk").get<double>(), 0.0359, 1e-12);
}

TEST(WhatIf, CombinedChangeIsSumOfSingleChanges) {
  const auto m = model_with_s0(0.97);
  SubjectRecord r;
  r.bmi = 32.0;
  r.currently_smoking = true;
  r.pack_years = 15;
  auto lp_delta = [&](const Modifications& mods) {
    const auto w = whatif(m, r, mods);
    return w.after.linear_predictor - w.before.linear_predictor;
  };
  const double both = lp_delta({{"bmi", 25.0}, {"currently_smoking", 0.0}});
  EXPECT_NEAR(both, lp_delta({{"bmi", 25.0}}) + lp_delta({{"currently_smoking", 0.0}}), 1e-12);
}
