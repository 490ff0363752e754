// Command-line front end: synthetic cohorts, Cox fitting, selection,
// evaluation, neural training, model publishing and the scoring server.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "t2drisk/cohort.hpp"
#include "t2drisk/cox.hpp"
#include "t2drisk/csv.hpp"
#include "t2drisk/evaluation.hpp"
#include "t2drisk/hash.hpp"
#include "t2drisk/neural.hpp"
#include "t2drisk/risk_engine.hpp"
#include "t2drisk/selection.hpp"
#include "t2drisk/service.hpp"
#include "t2drisk/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace t2drisk;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr std::uint64_t kDefaultSeed = 2020;

struct Common {
  std::optional<std::uint64_t> seed;
  bool strict = false;
  std::string out;

  std::uint64_t resolved_seed() const {
    if (strict && !seed) throw UsageError("--seed is required in --strict mode");
    return seed.value_or(kDefaultSeed);
  }
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--seed", c.seed, "Seed for every random stream of the command");
  cmd->add_flag("--strict", c.strict, "Fail when --seed is absent");
  if (needs_out) cmd->add_option("--out", c.out, "Run directory for all outputs")->required();
}

/// Collects outputs under one directory and lists them with their hashes in
/// manifest.json.
class RunDir {
 public:
  RunDir(const std::string& dir, std::string command, std::uint64_t seed) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create run directory " + dir + ": " + ec.message());
    manifest_ = {{"tool", "t2drisk"},
                 {"tool_version", kToolVersion},
                 {"command", std::move(command)},
                 {"seed", seed},
                 {"inputs", json::object()},
                 {"outputs", json::object()},
                 {"parameters", json::object()}};
  }

  void input(const std::string& role, const std::string& path) {
    manifest_["inputs"][role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }

  json& parameters() { return manifest_["parameters"]; }

  void write(const std::string& name, const std::string& bytes) {
    const fs::path p = dir_ / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << bytes;
    if (!f) throw DataError("write failed for " + p.string());
    manifest_["outputs"][name] = sha256_hex(bytes);
  }

  void finish() {
    std::ofstream f(dir_ / "manifest.json", std::ios::binary);
    f << manifest_.dump(2) << '\n';
    if (!f) throw DataError("cannot write manifest");
  }

 private:
  fs::path dir_;
  json manifest_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + " is not valid JSON: " + e.what());
  }
}

IngestResult load_cohort(const std::string& path) {
  auto r = ingest_csv(path);
  if (r.subjects.empty()) throw DataError("cohort " + path + " has no complete rows");
  return r;
}

std::string csv_string(std::span<const Subject> subjects) {
  std::ostringstream s;
  write_csv(s, subjects);
  return s.str();
}

std::vector<std::uint8_t> event_flags(std::span<const Subject> subjects) {
  std::vector<std::uint8_t> e(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) e[i] = subjects[i].outcome.event ? 1 : 0;
  return e;
}

std::vector<Subject> pick(std::span<const Subject> subjects, std::span<const std::size_t> rows) {
  std::vector<Subject> out;
  out.reserve(rows.size());
  for (auto i : rows) out.push_back(subjects[i]);
  return out;
}

json ingest_json(const IngestResult& r) {
  return {{"rows", r.subjects.size()},
          {"excluded_missing", r.excluded_missing},
          {"censored_at_study_end", r.censored_at_study_end}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string config;
  std::optional<std::size_t> n;
};

void run_synth(const SynthArgs& a) {
  GeneratorConfig cfg = a.config.empty() ? cohort_preset() : generator_config_from_json(read_json_file(a.config));
  if (a.n) cfg.n = *a.n;
  cfg.seed = a.common.resolved_seed();
  validate(cfg);
  RunDir run(a.common.out, "synth", cfg.seed);
  if (!a.config.empty()) run.input("config", a.config);
  const auto cohort = generate(cfg);
  std::size_t events = 0;
  for (const auto& s : cohort.subjects) events += s.outcome.event;
  run.write("cohort.csv", csv_string(cohort.subjects));
  const json provenance = {{"generator", to_json(cfg)},
                           {"baseline_rate", cohort.baseline_rate},
                           {"rows", cohort.subjects.size()},
                           {"events", events}};
  run.write("cohort.provenance.json", provenance.dump(2) + "\n");
  run.parameters() = {{"n", cfg.n}};
  run.finish();
  std::cout << "wrote " << cohort.subjects.size() << " subjects (" << events << " events)\n";
}

struct FitArgs {
  Common common;
  std::string cohort;
  double test_fraction = 0.25;
  double ridge = 0.0;
  double horizon = 10.0;
};

void run_fit(const FitArgs& a) {
  const std::uint64_t seed = a.common.resolved_seed();
  const auto data = load_cohort(a.cohort);
  const auto events = event_flags(data.subjects);
  if (std::count(events.begin(), events.end(), 1) == 0)
    throw DataError("cohort has no events; a Cox model cannot be fitted");
  const auto split = stratified_split_indices(events, a.test_fraction, seed);
  const auto train_rows = pick(data.subjects, split.train);
  const auto test_rows = pick(data.subjects, split.test);
  const auto train = encode(train_rows);

  FitOptions opts;
  opts.ridge = a.ridge;
  opts.horizon = a.horizon;
  const auto result = fit(train, opts);

  RunDir run(a.common.out, "fit", seed);
  run.input("cohort", a.cohort);
  run.parameters() = {{"test_fraction", a.test_fraction}, {"ridge", a.ridge}, {"horizon", a.horizon}};
  run.write("model.json", to_json(result.model).dump(2) + "\n");
  std::ostringstream coef;
  write_forest_csv(coef, result.model);
  run.write("coefficients.csv", coef.str());
  run.write("test_split.csv", csv_string(test_rows));
  const json report = {{"ingest", ingest_json(data)},
                       {"train_rows", train.rows()},
                       {"train_events", train.event_count()},
                       {"test_rows", test_rows.size()},
                       {"diagnostics", to_json(*result.model.diagnostics)}};
  run.write("fit_report.json", report.dump(2) + "\n");
  run.finish();
  std::cout << "fitted " << result.model.feature_names.size() << " coefficients in "
            << result.model.diagnostics->iterations << " iterations\n";
}

struct EvalArgs {
  Common common;
  std::string model;
  std::string cohort;
  std::size_t bootstrap_rounds = kDefaultBootstrapRounds;
  double horizon = 10.0;
};

void run_eval(const EvalArgs& a) {
  const std::uint64_t seed = a.common.resolved_seed();
  CoxModel model;
  try {
    model = cox_model_from_json(read_json_file(a.model));
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  }
  const auto data = load_cohort(a.cohort);
  const auto cohort = encode(data.subjects, model.scaling);
  EvaluateOptions opts;
  opts.horizon = a.horizon;
  opts.bootstrap_rounds = a.bootstrap_rounds;
  opts.seed = seed;
  const auto report = evaluate(model, cohort, opts);

  RunDir run(a.common.out, "eval", seed);
  run.input("model", a.model);
  run.input("cohort", a.cohort);
  run.parameters() = {{"bootstrap_rounds", a.bootstrap_rounds}, {"horizon", a.horizon}};
  run.write("report.json", to_json(report).dump(2) + "\n");
  std::ostringstream cal, forest;
  write_calibration_csv(cal, report.calibration);
  write_forest_csv(forest, model);
  run.write("calibration.csv", cal.str());
  run.write("forest.csv", forest.str());
  run.finish();
  std::cout << "c-index " << report.c_index << " [" << report.c_index_low << ", " << report.c_index_high
            << "], ICI " << report.calibration.ici << "\n";
}

struct SelectArgs {
  Common common;
  std::string cohort;
  std::size_t folds = 2;
  std::string sd_rule = "baseline";
  std::string overrides;
  double ridge = 0.0;
};

void run_select(const SelectArgs& a) {
  const std::uint64_t seed = a.common.resolved_seed();
  EliminationOptions opts;
  opts.folds = a.folds;
  opts.seed = seed;
  opts.fit.ridge = a.ridge;
  if (a.sd_rule == "baseline") opts.sd_rule = SdRule::Baseline;
  else if (a.sd_rule == "candidate") opts.sd_rule = SdRule::Candidate;
  else throw UsageError("--sd-rule must be baseline or candidate");

  std::vector<ReviewOverride> overrides;
  if (!a.overrides.empty()) {
    const auto j = read_json_file(a.overrides);
    try {
      for (const auto& o : j.at("overrides")) {
        const auto action = o.at("action").get<std::string>();
        if (action != "force_keep" && action != "block")
          throw UsageError("override action must be force_keep or block, got '" + action + "'");
        overrides.push_back({o.at("feature").get<std::string>(), action == "force_keep",
                             o.value("reason", std::string{})});
      }
    } catch (const json::exception& e) {
      throw UsageError(std::string("malformed overrides file: ") + e.what());
    }
  }

  const auto data = load_cohort(a.cohort);
  const auto cohort = encode(data.subjects);
  auto result = backward_eliminate(cohort, opts);
  const auto final_groups =
      clinical_review_filter(result.kept, select_detail::group_order(cohort), overrides, &result.ledger);

  RunDir run(a.common.out, "select", seed);
  run.input("cohort", a.cohort);
  if (!a.overrides.empty()) run.input("overrides", a.overrides);
  run.parameters() = {{"folds", a.folds}, {"sd_rule", a.sd_rule}, {"ridge", a.ridge}};
  std::ostringstream ledger;
  write_ledger(ledger, result.ledger);
  run.write("ledger.jsonl", ledger.str());
  run.write("features.json",
            json{{"after_elimination", result.kept}, {"final", final_groups}}.dump(2) + "\n");
  std::string listing;
  for (const auto& g : final_groups) listing += g + "\n";
  run.write("features.txt", listing);
  run.finish();
  std::cout << "kept " << final_groups.size() << " of " << select_detail::group_order(cohort).size()
            << " feature groups\n";
}

struct TrainArgs {
  Common common;
  std::string cohort;
  std::string config;
  double test_fraction = 0.25;
};

void run_traindl(const TrainArgs& a) {
  const std::uint64_t seed = a.common.resolved_seed();
  NetConfig cfg = a.config.empty() ? NetConfig{} : net_config_from_json(read_json_file(a.config));
  cfg.seed = seed;
  validate(cfg);
  const auto data = load_cohort(a.cohort);
  const auto events = event_flags(data.subjects);
  const auto split = stratified_split_indices(events, a.test_fraction, seed);
  const auto train_rows = pick(data.subjects, split.train);
  const auto test_rows = pick(data.subjects, split.test);
  const auto train_set = encode(train_rows);
  const auto test_set = encode(test_rows, train_set.scaling);
  const auto result = train(train_set, cfg);
  const auto lr = predict_log_risk(result.model, test_set);

  RunDir run(a.common.out, "traindl", seed);
  run.input("cohort", a.cohort);
  if (!a.config.empty()) run.input("config", a.config);
  run.parameters() = {{"test_fraction", a.test_fraction}, {"net", to_json(cfg)}};
  std::ostringstream weights(std::ios::binary);
  save_weights(weights, result.model);
  run.write("weights.bin", weights.str());
  std::ostringstream trace;
  trace << "epoch,loss,skipped_batches\n";
  for (const auto& e : result.trace)
    trace << e.epoch << ',' << format_double(e.loss) << ',' << e.skipped_batches << '\n';
  run.write("loss_trace.csv", trace.str());
  const double c = concordance_index(test_set.times, test_set.events, lr);
  run.write("train_report.json", json{{"test_c_index", c},
                                      {"train_rows", train_set.rows()},
                                      {"test_rows", test_set.rows()},
                                      {"skipped_batches", result.skipped_batches}}
                                         .dump(2) + "\n");
  run.finish();
  std::cout << "test c-index " << c << "\n";
}

struct PublishArgs {
  Common common;
  std::size_t reference_n = 100000;
  double target = 0.0359;
};

void run_publish(const PublishArgs& a) {
  ReferenceCohortSpec spec;
  spec.n = a.reference_n;
  spec.seed = a.common.resolved_seed();
  spec.target_mean_risk = a.target;
  if (spec.n == 0) throw UsageError("--reference-n must be positive");
  const auto model = calibrated_published_model(spec);
  RunDir run(a.common.out, "publish", spec.seed);
  run.parameters() = {{"reference_n", spec.n}, {"target_mean_risk", spec.target_mean_risk}};
  run.write("published_model.json", to_json(model).dump(2) + "\n");
  run.finish();
  std::cout << "S0(" << model.horizon << ") = " << model.baseline_survival << "\n";
}

struct ServeArgs {
  std::string model;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin;
  bool access_log = false;
};

void run_serve(const ServeArgs& a) {
  ServiceOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  if (!a.cors_origin.empty()) opts.cors_origin = a.cors_origin;
  if (a.access_log) opts.access_log = &std::clog;
  ScoringService service(load_published_model(a.model), opts);
  httplib::Server server;
  std::cout << "serving " << service.model().version << " on " << a.host << ":" << a.port << std::endl;
  if (!service.listen(server)) throw DataError("cannot listen on " + a.host + ":" + std::to_string(a.port));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Type 2 diabetes 10-year risk modelling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic cohort CSV");
  add_common(c_synth, synth.common);
  c_synth->add_option("--config", synth.config, "Generator config JSON (default: built-in preset)");
  c_synth->add_option("--n", synth.n, "Number of subjects (overrides the config)");

  FitArgs fitargs;
  auto* c_fit = app.add_subcommand("fit", "Split, fit a Cox model, write model and coefficient report");
  add_common(c_fit, fitargs.common);
  c_fit->add_option("cohort", fitargs.cohort, "Cohort CSV")->required();
  c_fit->add_option("--test-fraction", fitargs.test_fraction, "Held-out fraction")->capture_default_str();
  c_fit->add_option("--ridge", fitargs.ridge, "L2 penalty on the coefficients")->capture_default_str();
  c_fit->add_option("--horizon", fitargs.horizon, "Prediction horizon in years")->capture_default_str();

  EvalArgs evalargs;
  auto* c_eval = app.add_subcommand("eval", "Concordance, bootstrap interval and calibration report");
  add_common(c_eval, evalargs.common);
  c_eval->add_option("model", evalargs.model, "model.json written by fit")->required();
  c_eval->add_option("cohort", evalargs.cohort, "Evaluation cohort CSV")->required();
  c_eval->add_option("--bootstrap-rounds", evalargs.bootstrap_rounds)->capture_default_str();
  c_eval->add_option("--horizon", evalargs.horizon)->capture_default_str();

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select", "Backward elimination on cross-validated c-index");
  add_common(c_sel, sel.common);
  c_sel->add_option("cohort", sel.cohort, "Cohort CSV")->required();
  c_sel->add_option("--folds", sel.folds)->capture_default_str();
  c_sel->add_option("--sd-rule", sel.sd_rule, "baseline or candidate")->capture_default_str();
  c_sel->add_option("--overrides", sel.overrides, "Review overrides JSON");
  c_sel->add_option("--ridge", sel.ridge, "L2 penalty for every cross-validated fit")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("traindl", "Train a neural Cox model");
  add_common(c_tr, tr.common);
  c_tr->add_option("cohort", tr.cohort, "Cohort CSV")->required();
  c_tr->add_option("--config", tr.config, "Network config JSON (default: tuned optimum)");
  c_tr->add_option("--test-fraction", tr.test_fraction)->capture_default_str();

  PublishArgs pub;
  auto* c_pub = app.add_subcommand("publish", "Calibrate S0(10) and write the published-model artifact");
  add_common(c_pub, pub.common);
  c_pub->add_option("--reference-n", pub.reference_n)->capture_default_str();
  c_pub->add_option("--target", pub.target, "Target mean predicted risk")->capture_default_str();

  ServeArgs srv;
  auto* c_srv = app.add_subcommand("serve", "Serve the published model over HTTP");
  c_srv->add_option("model", srv.model, "published_model.json")->required();
  c_srv->add_option("--host", srv.host)->capture_default_str();
  c_srv->add_option("--port", srv.port)->capture_default_str();
  c_srv->add_option("--cors-origin", srv.cors_origin);
  c_srv->add_flag("--access-log", srv.access_log, "Log method, path and status to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) run_synth(synth);
    else if (c_fit->parsed()) run_fit(fitargs);
    else if (c_eval->parsed()) run_eval(evalargs);
    else if (c_sel->parsed()) run_select(sel);
    else if (c_tr->parsed()) run_traindl(tr);
    else if (c_pub->parsed()) run_publish(pub);
    else if (c_srv->parsed()) run_serve(srv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
