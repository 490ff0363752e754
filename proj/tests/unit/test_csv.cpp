#include <gtest/gtest.h>

#include <sstream>

#include "t2drisk/csv.hpp"
#include "t2drisk/synthetic.hpp"

using namespace t2drisk;

namespace {

const std::string kHeader =
    "age,waist_hip_ratio,bmi,ethnicity,degree,cvd_diagnosis,cholesterol_meds,other_meds,stomach_pain,"
    "daytime_dozing,breathless_level_ground,diabetes_father,diabetes_mother,diabetes_siblings,"
    "alcohol_monthly_plus,currently_smoking,pack_years,good_health";

std::string row(const std::string& bmi = "26.5", const std::string& ethnicity = "white_other") {
  return "58,0.87," + bmi + "," + ethnicity + ",0,1,0,0,0,1,0,0,1,0,1,0,0,1";
}

IngestResult parse(const std::string& text) {
  std::istringstream in(text);
  return ingest_csv(in);
}

}  // namespace

TEST(Ingest, WellFormedRows) {
  const auto r = parse(kHeader + ",time,event\n" + row() + ",5.5,1\n" + row("30", "asian") + ",11,0\n" +
                       row("22.1", "black") + ",3,0\n");
  ASSERT_EQ(r.subjects.size(), 3u);
  EXPECT_EQ(r.excluded_missing, 0u);
  EXPECT_EQ(r.subjects[1].record.ethnicity, Ethnicity::Asian);
  EXPECT_EQ(r.subjects[1].record.bmi, 30.0);
  EXPECT_TRUE(r.subjects[0].outcome.event);
  EXPECT_EQ(r.subjects[0].outcome.time, 5.5);
  EXPECT_TRUE(r.subjects[0].record.diabetes_mother);
}

TEST(Ingest, MissingCellDropsRow) {
  const auto r = parse(kHeader + ",time,event\n" + row() + ",5.5,1\n" + row("") + ",11,0\n" + row("NA") + ",3,0\n");
  EXPECT_EQ(r.subjects.size(), 1u);
  EXPECT_EQ(r.excluded_missing, 2u);
}

TEST(Ingest, MalformedCellNamesRowAndColumn) {
  try {
    parse(kHeader + ",time,event\n" + row() + ",5.5,1\n" + row("heavy") + ",11,0\n");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'bmi'"), std::string::npos) << msg;
  }
}

TEST(Ingest, UnknownEthnicityToken) {
  EXPECT_THROW(parse(kHeader + ",time,event\n" + row("26", "martian") + ",5,1\n"), DataError);
}

TEST(Ingest, HeaderProblems) {
  EXPECT_THROW(parse(""), DataError);
  EXPECT_THROW(parse("age,bmi,time,event\n"), DataError);
  EXPECT_THROW(parse(kHeader + ",event\n"), DataError);
  EXPECT_THROW(parse(kHeader + ",time,event,bmi\n"), DataError);
}

TEST(Ingest, RangeViolationIsDataError) {
  EXPECT_THROW(parse(kHeader + ",time,event\n" + row("-2") + ",5,1\n"), DataError);
}

TEST(Ingest, DatesAfterStudyEndAreCensored) {
  const auto r = parse(kHeader + ",enrollment_date,exit_date,event\n" + row() + ",2008-01-01,2021-06-01,1\n" + row() +
                       ",2008-01-01,2015-01-01,1\n");
  ASSERT_EQ(r.subjects.size(), 2u);
  EXPECT_EQ(r.censored_at_study_end, 1u);
  EXPECT_FALSE(r.subjects[0].outcome.event);
  const double days = static_cast<double>(
      (std::chrono::sys_days{std::chrono::year{2020} / 9 / 30} - std::chrono::sys_days{std::chrono::year{2008} / 1 / 1})
          .count());
  EXPECT_DOUBLE_EQ(r.subjects[0].outcome.time, days / 365.25);
  EXPECT_TRUE(r.subjects[1].outcome.event);
}

TEST(Ingest, PreviousSmokerInferredWhenAbsent) {
  std::string smoker = "58,0.87,26,white_other,0,0,0,0,0,0,0,0,0,0,0,0,12.5,1";
  const auto r = parse(kHeader + ",time,event\n" + smoker + ",5,0\n");
  EXPECT_TRUE(r.subjects[0].record.previous_smoker);
}

TEST(Ingest, RoundTripThroughWriter) {
  GeneratorConfig cfg = cohort_preset();
  cfg.n = 300;
  cfg.seed = 12;
  const auto subjects = generate(cfg).subjects;
  std::stringstream buf;
  write_csv(buf, subjects);
  const auto back = ingest_csv(buf);
  EXPECT_EQ(back.subjects, subjects);
}

TEST(Ingest, MissingFileIsDataError) { EXPECT_THROW(ingest_csv(std::string("/nonexistent/cohort.csv")), DataError); }

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(26.57), "26.57");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
