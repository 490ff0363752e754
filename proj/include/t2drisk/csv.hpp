#pragma once

// Cohort CSV reader/writer. Column layout is documented in docs/cohort-format.md.

#include <charconv>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/error.hpp"

namespace t2drisk {

namespace csv_detail {

inline std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "na"; }

inline bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "1" || s == "true") return out = true, true;
  if (s == "0" || s == "false") return out = false, true;
  return false;
}

inline bool parse_date(std::string_view s, std::chrono::sys_days& out) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::from_chars(s.data(), s.data() + 4, y).ec != std::errc()) return false;
  if (std::from_chars(s.data() + 5, s.data() + 7, m).ec != std::errc()) return false;
  if (std::from_chars(s.data() + 8, s.data() + 10, d).ec != std::errc()) return false;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return false;
  out = std::chrono::sys_days{ymd};
  return true;
}

}  // namespace csv_detail

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// 30 September 2020, the administrative end of follow-up.
inline constexpr std::chrono::sys_days kStudyEnd =
    std::chrono::sys_days{std::chrono::year{2020} / std::chrono::September / 30};

inline constexpr double kDaysPerYear = 365.25;

struct IngestResult {
  std::vector<Subject> subjects;
  std::size_t excluded_missing = 0;
  std::size_t censored_at_study_end = 0;
};

struct IngestOptions {
  std::chrono::sys_days study_end = kStudyEnd;
};

/// Parses a cohort CSV. Rows with any missing cell are dropped and counted.
inline IngestResult ingest_csv(std::istream& in, const IngestOptions& opts = {}) {
  using namespace csv_detail;
  std::string line;
  if (!std::getline(in, line)) throw DataError("cohort file is empty");

  std::unordered_map<std::string, std::size_t> col;
  std::vector<std::string> header;
  for (auto tok : split_line(line)) {
    std::string name(trim(tok));
    if (col.count(name)) throw DataError("duplicate column '" + name + "' in header");
    col.emplace(name, header.size());
    header.push_back(std::move(name));
  }
  for (const auto& f : subject_fields())
    if (!f.optional_column && !col.count(std::string(f.name)))
      throw DataError("header is missing column '" + std::string(f.name) + "'");
  if (!col.count("event")) throw DataError("header is missing column 'event'");
  const bool has_time = col.count("time") > 0;
  const bool has_dates = col.count("enrollment_date") && col.count("exit_date");
  if (!has_time && !has_dates)
    throw DataError("header needs either 'time' or both 'enrollment_date' and 'exit_date'");
  const bool has_previous = col.count("previous_smoker") > 0;

  IngestResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " columns, found " +
                      std::to_string(cells.size()));

    auto cell = [&](std::string_view name) { return trim(cells[col.at(std::string(name))]); };
    auto malformed = [&](std::string_view name, std::string_view value) {
      return DataError("row " + std::to_string(line_no) + ", column '" + std::string(name) +
                       "': cannot parse '" + std::string(value) + "'");
    };

    bool missing = false;
    for (std::size_t k = 0; k < cells.size(); ++k)
      if (is_missing(trim(cells[k]))) missing = true;
    if (missing) {
      ++result.excluded_missing;
      continue;
    }

    Subject s;
    for (const auto& f : subject_fields()) {
      if (f.optional_column && !col.count(std::string(f.name))) continue;
      const auto v = cell(f.name);
      switch (f.kind) {
        case FieldKind::Categorical: {
          const auto e = parse_ethnicity(v);
          if (!e)
            throw DataError("row " + std::to_string(line_no) + ", column 'ethnicity': unknown token '" +
                            std::string(v) + "'");
          s.record.ethnicity = *e;
          break;
        }
        case FieldKind::Binary: {
          bool b = false;
          if (!parse_bool(v, b)) throw malformed(f.name, v);
          f.set(s.record, b ? 1.0 : 0.0);
          break;
        }
        case FieldKind::Integer: {
          double d = 0.0;
          if (!parse_double(v, d) || d != std::floor(d)) throw malformed(f.name, v);
          f.set(s.record, d);
          break;
        }
        case FieldKind::Continuous: {
          double d = 0.0;
          if (!parse_double(v, d)) throw malformed(f.name, v);
          f.set(s.record, d);
          break;
        }
      }
    }
    if (!has_previous)
      s.record.previous_smoker = s.record.pack_years > 0.0 && !s.record.currently_smoking;
    if (auto why = range_violation(s.record))
      throw DataError("row " + std::to_string(line_no) + ": " + *why);

    bool event = false;
    if (!parse_bool(cell("event"), event)) throw malformed("event", cell("event"));
    if (has_time) {
      double t = 0.0;
      if (!parse_double(cell("time"), t) || !(t > 0.0)) throw malformed("time", cell("time"));
      s.outcome = {t, event};
    } else {
      std::chrono::sys_days enrolled, exited;
      if (!parse_date(cell("enrollment_date"), enrolled))
        throw malformed("enrollment_date", cell("enrollment_date"));
      if (!parse_date(cell("exit_date"), exited)) throw malformed("exit_date", cell("exit_date"));
      if (exited > opts.study_end) {
        exited = opts.study_end;
        event = false;
        ++result.censored_at_study_end;
      }
      const double t = static_cast<double>((exited - enrolled).count()) / kDaysPerYear;
      if (!(t > 0.0))
        throw DataError("row " + std::to_string(line_no) +
                        ", column 'exit_date': exit must be after enrollment");
      s.outcome = {t, event};
    }
    result.subjects.push_back(s);
  }
  return result;
}

inline IngestResult ingest_csv(const std::string& path, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cohort file " + path);
  return ingest_csv(in, opts);
}

/// Writes subjects in the canonical column order with `time,event` outcome
/// columns. Numbers use the shortest round-trip representation.
inline void write_csv(std::ostream& out, std::span<const Subject> subjects) {
  for (const auto& f : subject_fields()) out << f.name << ',';
  out << "time,event\n";
  for (const auto& s : subjects) {
    for (const auto& f : subject_fields()) {
      const double v = f.get(s.record);
      switch (f.kind) {
        case FieldKind::Categorical: out << to_string(s.record.ethnicity); break;
        case FieldKind::Binary: out << (v != 0.0 ? '1' : '0'); break;
        case FieldKind::Integer: out << s.record.age; break;
        case FieldKind::Continuous: out << format_double(v); break;
      }
      out << ',';
    }
    out << format_double(s.outcome.time) << ',' << (s.outcome.event ? '1' : '0') << '\n';
  }
}

inline void write_csv(const std::string& path, std::span<const Subject> subjects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, subjects);
}

}  // namespace t2drisk
