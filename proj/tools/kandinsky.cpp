// kandinsky: conformal prediction with group-conditional coverage.
//
// Subcommands: calibrate, predict, evaluate, synth, experiment.
// Exit codes: 0 ok, 1 I/O or parse error, 2 validation error, 3 solver error,
// 4 internal invariant breach. See docs/cli.md.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "kandinsky/eval.hpp"
#include "kandinsky/io.hpp"
#include "kandinsky/methods.hpp"
#include "kandinsky/pinball.hpp"
#include "kandinsky/rng.hpp"

using namespace kandinsky;
namespace kio = kandinsky::io;

namespace {

uint64_t resolve_seed(std::optional<uint64_t> flag_seed, const kio::Json& config,
                      const char* key = "seed") {
  if (flag_seed) return *flag_seed;
  if (config.contains(key)) return config.at(key).get<uint64_t>();
  if (const char* env = std::getenv("KANDINSKY_SEED")) return std::strtoull(env, nullptr, 10);
  return 1;
}

ScoreSpec make_score(const std::string& kind, bool jitter, double eta) {
  ScoreSpec s;
  if (kind == "abs_residual")
    s.kind = ScoreSpec::Kind::AbsResidual;
  else if (kind == "cqr")
    s.kind = ScoreSpec::Kind::Cqr;
  else if (kind == "aps")
    s.kind = ScoreSpec::Kind::Aps;
  else
    throw ValidationError("unknown score '" + kind + "' (abs_residual|cqr|aps)");
  s.jittered = jitter;
  s.eta = eta;
  s.validate();
  return s;
}

struct CalibrateArgs {
  std::string data_path, groups_path, output = "model.json";
  std::optional<std::string> method, score_kind, timestamp;
  bool jitter = false;
  std::optional<double> eta, alpha;
  std::optional<uint64_t> seed;
  bool adjust = false;
  std::optional<int> grid_bins;
  std::string config_path;
};

int run_calibrate(const CalibrateArgs& a) {
  kio::Json cfg = kio::Json::object();
  if (!a.config_path.empty()) cfg = kio::load_json_file(a.config_path);

  // flags override config file values; the file supplies defaults
  ScoreSpec score;
  if (a.score_kind)
    score = make_score(*a.score_kind, a.jitter, a.eta.value_or(0.0));
  else if (cfg.contains("score"))
    score = kio::score_from_json(cfg.at("score"));
  if (a.jitter) score.jittered = true;
  if (a.eta) score.eta = *a.eta;

  GroupSpec groups;
  if (!a.groups_path.empty())
    groups = kio::group_spec_from_json(kio::load_json_file(a.groups_path));
  else if (cfg.contains("groups"))
    groups = kio::group_spec_from_json(cfg.at("groups"));
  else {
    groups.kind = GroupSpec::Kind::Indicator;  // intercept-only marginal basis
    groups.include_intercept = true;
  }

  double alpha = a.alpha.value_or(cfg.value("alpha", 0.1));
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha outside (0,1)");
  uint64_t seed = resolve_seed(a.seed, cfg);
  int grid_bins = a.grid_bins.value_or(cfg.value("grid_bins", 100));
  bool adjust = a.adjust || cfg.value("adjust", false);
  bool with_timestamp = a.timestamp.value_or(cfg.value("timestamp", true) ? "on" : "off") != "off";

  Task task = score.task();
  Dataset data = kio::read_csv(a.data_path, task);
  if (task == Task::Classification && score.kind == ScoreSpec::Kind::Aps)
    data.n_classes = data.base_arity();  // probability vector length is authoritative
  if (task == Task::Regression && data.label_grid.empty())
    data.label_grid = default_label_grid(data, grid_bins);

  CalibratedPredictor pred;
  std::string method = a.method.value_or(cfg.value("method", "kandinsky"));
  if (method == "kandinsky")
    pred = kandinsky_calibrate(data, groups, score, alpha, seed);
  else if (method == "split")
    pred = split_calibrate(data, score, alpha, seed, adjust);
  else if (method == "mondrian")
    pred = mondrian_calibrate(data, groups, score, alpha, seed, adjust);
  else if (method == "class_conditional")
    pred = class_conditional_calibrate(data, score, alpha, seed, adjust);
  else if (method == "conservative")
    pred = conservative_calibrate(data, groups, score, alpha, seed, adjust);
  else
    throw ValidationError("unknown method '" + method + "'");

  kio::save_json_file(a.output, kio::model_to_json(pred, with_timestamp));
  std::printf("calibrate ok method=%s n=%d d=%d objective=%.12g interpolated_count=%d "
              "max_subgradient_residual=%.3e pivots=%d rank_deficient=%d\n",
              method.c_str(), data.size(), pred.basis.dim(), pred.diagnostics.objective,
              pred.diagnostics.interpolated_count, pred.diagnostics.max_subgradient_residual,
              pred.diagnostics.pivots, pred.diagnostics.rank_deficient ? 1 : 0);
  return 0;
}

struct PredictArgs {
  std::string model_path, data_path, output = "predictions.jsonl";
  std::optional<std::string> method;  // "testtime" switches to test-time regression
  std::optional<std::string> calibration_path;
  std::optional<uint64_t> seed;
  std::string config_path;
};

int run_predict(const PredictArgs& args) {
  kio::Json cfg = kio::Json::object();
  if (!args.config_path.empty()) cfg = kio::load_json_file(args.config_path);
  struct {
    std::string method, calibration;
    std::optional<uint64_t> seed;
  } a;
  a.method = args.method.value_or(cfg.value("method", ""));
  a.calibration = args.calibration_path.value_or(cfg.value("calibration", ""));
  a.seed = args.seed;
  if (!a.seed && cfg.contains("seed")) a.seed = cfg.at("seed").get<uint64_t>();

  auto model = kio::model_from_json(kio::load_json_file(args.model_path));
  if (a.seed) model.seed = *a.seed;
  Dataset test = kio::read_csv(args.data_path, model.task, model.n_classes);
  if (static_cast<int>(test.base_arity()) != model.score.arity(model.n_classes))
    throw ValidationError("test base_outputs arity does not match the model's score function");

  std::ofstream out(args.output);
  if (!out) throw ParseError("cannot write '" + args.output + "'");

  if (a.method == "testtime") {
    if (a.calibration.empty())
      throw ValidationError("--method testtime needs --calibration <csv>");
    Dataset calib = kio::read_csv(a.calibration, model.task, model.n_classes);
    TesttimePlan plan;
    plan.calibration = &calib;
    plan.basis = model.basis;
    plan.score = model.score;
    plan.eta = model.eta;
    plan.alpha = model.alpha;
    plan.seed = model.seed;
    plan.task = model.task;
    plan.n_classes = model.n_classes;
    plan.label_grid = model.label_grid;
    if (model.task == Task::Regression && model.label_grid.empty())
      throw ValidationError("test-time prediction on regression needs a label grid in the model");
    plan.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
    for (int i = 0; i < test.size(); ++i) {
      const auto& e = test.examples[i];
      auto set = testtime_qr_predict(plan, e.x, e.base_outputs, static_cast<uint64_t>(i));
      out << kio::prediction_to_json(set, i, model.label_grid, model.n_classes).dump() << "\n";
    }
  } else if (a.method.empty()) {
    for (int i = 0; i < test.size(); ++i) {
      const auto& e = test.examples[i];
      double eps = predict_eps(model, static_cast<uint64_t>(i));
      auto set = predict(model, e.x, e.base_outputs, eps);
      out << kio::prediction_to_json(set, i, model.label_grid, model.n_classes).dump() << "\n";
    }
  } else {
    throw ValidationError("predict --method accepts only 'testtime'");
  }
  std::printf("predict ok rows=%d output=%s\n", test.size(), args.output.c_str());
  return 0;
}

struct EvaluateArgs {
  std::string predictions_path, data_path, model_path;
  std::optional<std::string> groups_path, timestamp;
  std::string output = "evaluation.json";
  std::optional<double> alpha;
  std::optional<int> min_group_count;
  std::string config_path;
};

int run_evaluate(const EvaluateArgs& args) {
  kio::Json cfg = kio::Json::object();
  if (!args.config_path.empty()) cfg = kio::load_json_file(args.config_path);
  struct {
    std::string groups_path, timestamp;
    double alpha;
    int min_group_count;
  } a;
  a.groups_path = args.groups_path.value_or(cfg.value("groups", ""));
  a.timestamp = args.timestamp.value_or(cfg.value("timestamp", true) ? "on" : "off");
  a.alpha = args.alpha.value_or(cfg.value("alpha", -1.0));
  a.min_group_count = args.min_group_count.value_or(cfg.value("min_group_count", 1));

  auto model = kio::model_from_json(kio::load_json_file(args.model_path));
  double alpha = a.alpha > 0 ? a.alpha : model.alpha;
  Dataset test = kio::read_csv(args.data_path, model.task, model.n_classes);

  std::ifstream in(args.predictions_path);
  if (!in) throw ParseError("cannot open '" + args.predictions_path + "'");
  std::vector<kio::Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      rows.push_back(kio::Json::parse(line));
    } catch (const std::exception& e) {
      throw ParseError("predictions line " + std::to_string(rows.size() + 1) + ": " + e.what());
    }
  }
  if (static_cast<int>(rows.size()) != test.size())
    throw ValidationError("prediction count " + std::to_string(rows.size()) +
                          " does not match test rows " + std::to_string(test.size()));

  const auto& grid = model.label_grid;
  std::vector<std::uint8_t> covered(test.size(), 0);
  double size_acc = 0.0;
  for (int i = 0; i < test.size(); ++i) {
    const auto& j = rows[i];
    double y = test.examples[i].y;
    bool cov = false;
    if (j.contains("labels")) {
      for (const auto& v : j.at("labels")) cov = cov || v.get<int>() == static_cast<int>(y);
    } else if (j.contains("intervals")) {
      for (const auto& iv : j.at("intervals"))
        cov = cov || (y >= iv[0].get<double>() && y <= iv[1].get<double>());
    } else if (j.contains("grid_included")) {
      if (grid.size() < 2) throw ValidationError("model lacks the grid these predictions use");
      double w = grid[1] - grid[0];
      int idx = static_cast<int>(std::floor((y - (grid.front() - 0.5 * w)) / w));
      idx = std::clamp(idx, 0, static_cast<int>(grid.size()) - 1);
      for (const auto& v : j.at("grid_included")) cov = cov || v.get<int>() == idx;
    } else {
      throw ParseError("prediction row " + std::to_string(i) + " has no recognized set");
    }
    covered[i] = cov ? 1 : 0;
    size_acc += j.value("size", 0.0);
  }

  EvalGroups groups;
  if (!a.groups_path.empty()) groups = kio::eval_groups_from_json(kio::load_json_file(a.groups_path));
  if (groups.empty()) groups.defs.push_back({"all", {}});

  auto membership = groups.membership(test);
  TrialRecord rec;
  rec.per_group = miscoverage(covered, membership, groups.names());
  rec.cd = coverage_deviation(rec.per_group, alpha, a.min_group_count);
  rec.gap = minmax_gap(rec.per_group, a.min_group_count);
  rec.mean_size = size_acc / test.size();

  CoverageReport report;
  report.alpha = alpha;
  report.trials = 1;
  report.seed = model.seed;
  report.n_test = test.size();
  report.mc_band_marginal = 2.0 * std::sqrt(alpha * (1 - alpha) / test.size());
  MethodReport mr;
  mr.method = method_name(model.method);
  mr.group_names = groups.names();
  for (const auto& g : rec.per_group) {
    mr.group_mean.push_back(g.miscoverage);
    mr.group_std.push_back(0.0);
    mr.group_min.push_back(g.miscoverage);
    mr.group_max.push_back(g.miscoverage);
    mr.group_count_mean.push_back(g.count);
    mr.group_mc_band.push_back(g.count > 0 ? 2.0 * std::sqrt(alpha * (1 - alpha) / g.count) : 0.0);
  }
  mr.cd_mean = rec.cd;
  mr.gap_mean = rec.gap;
  mr.size_mean = rec.mean_size;
  mr.trials.push_back(rec);
  report.methods.push_back(std::move(mr));

  kio::Json echo;
  echo["predictions"] = args.predictions_path;
  echo["data"] = args.data_path;
  echo["model"] = args.model_path;
  echo["alpha"] = alpha;
  echo["min_group_count"] = a.min_group_count;
  kio::save_json_file(args.output, kio::report_to_json(report, echo, a.timestamp != "off"));
  std::printf("evaluate ok rows=%d cd=%.6f output=%s\n", test.size(), rec.cd,
              args.output.c_str());
  return 0;
}

struct SynthArgs {
  std::string config_path;
  std::string out_calib = "calibration.csv", out_test = "test.csv";
  std::optional<uint64_t> seed;
  std::optional<int> n_calib, n_test;
};

int run_synth(const SynthArgs& a) {
  kio::Json j = kio::Json::object();
  if (!a.config_path.empty()) j = kio::load_json_file(a.config_path);
  if (a.n_calib) j["n_calib"] = *a.n_calib;
  if (a.n_test) j["n_test"] = *a.n_test;
  if (a.seed) j["seed"] = *a.seed;
  if (!j.contains("seed")) j["seed"] = resolve_seed(std::nullopt, j);
  SynthConfig cfg = kio::synth_from_json(j);
  auto data = synth_generate(cfg);
  kio::write_csv(a.out_calib, data.calibration);
  kio::write_csv(a.out_test, data.test);
  std::printf("synth ok calibration=%s test=%s n_calib=%d n_test=%d\n", a.out_calib.c_str(),
              a.out_test.c_str(), cfg.n_calib, cfg.n_test);
  return 0;
}

struct ExperimentArgs {
  std::string config_path;
  std::optional<int> trials, jobs;
  std::optional<uint64_t> seed;
  std::string output, tsv_output, csv_output;
  std::string timestamp;
};

int run_experiment_cmd(const ExperimentArgs& a) {
  auto j = kio::load_json_file(a.config_path);
  if (a.trials) j["trials"] = *a.trials;
  if (a.jobs) j["jobs"] = *a.jobs;
  if (a.seed) j["seed"] = *a.seed;
  if (!a.output.empty()) j["output"] = a.output;
  if (!a.timestamp.empty()) j["timestamp"] = a.timestamp != "off";
  auto ef = kio::experiment_from_json(j);
  auto report = run_experiment(ef.config);
  kio::save_json_file(ef.output_path, kio::report_to_json(report, ef.echo, ef.with_timestamp));
  if (!a.tsv_output.empty()) {
    std::ofstream out(a.tsv_output);
    if (!out) throw ParseError("cannot write '" + a.tsv_output + "'");
    out << kio::report_to_tsv(report);
  }
  if (!a.csv_output.empty()) {
    std::ofstream out(a.csv_output);
    if (!out) throw ParseError("cannot write '" + a.csv_output + "'");
    out << kio::report_to_csv(report);
  }
  std::printf("experiment ok trials=%d methods=%zu output=%s\n", report.trials,
              report.methods.size(), ef.output_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kandinsky conformal prediction toolkit"};
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "fit a conformal predictor from a calibration CSV");
  c->add_option("data", cal.data_path, "calibration CSV")->required();
  c->add_option("--method", cal.method, "kandinsky|split|mondrian|class_conditional|conservative");
  c->add_option("--alpha", cal.alpha, "target miscoverage in (0,1)");
  c->add_option("--groups", cal.groups_path, "group spec JSON");
  c->add_option("--scores", cal.score_kind, "abs_residual|cqr|aps");
  c->add_flag("--jitter", cal.jitter, "add centered tie-breaking noise to the score");
  c->add_option("--eta", cal.eta, "jitter width (0 = auto from score scale)");
  c->add_option("--seed,-s", cal.seed, "rng seed (env KANDINSKY_SEED as fallback)");
  c->add_flag("--adjust", cal.adjust, "finite-sample (n+1) quantile adjustment for baselines");
  c->add_option("--grid-bins", cal.grid_bins, "regression label grid resolution");
  c->add_option("--timestamp", cal.timestamp, "on|off");
  c->add_option("--config", cal.config_path, "JSON config; flags override file values");
  c->add_option("-o,--output", cal.output, "model output path");

  PredictArgs pre;
  auto* p = app.add_subcommand("predict", "emit prediction sets for a test CSV");
  p->add_option("model", pre.model_path, "model JSON")->required();
  p->add_option("data", pre.data_path, "test CSV (labels optional)")->required();
  p->add_option("--method", pre.method, "optional: 'testtime' for test-time quantile regression");
  p->add_option("--calibration", pre.calibration_path, "calibration CSV (testtime only)");
  p->add_option("--seed,-s", pre.seed, "override the model seed");
  p->add_option("--config", pre.config_path, "JSON config; flags override file values");
  p->add_option("-o,--output", pre.output, "JSONL output path");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "join predictions with labels and report coverage");
  e->add_option("predictions", ev.predictions_path, "predictions JSONL")->required();
  e->add_option("data", ev.data_path, "labeled test CSV")->required();
  e->add_option("--model", ev.model_path, "model JSON (grid, alpha)")->required();
  e->add_option("--groups", ev.groups_path, "evaluation groups JSON");
  e->add_option("--alpha", ev.alpha, "target miscoverage (default: model alpha)");
  e->add_option("--min-group-count", ev.min_group_count, "groups below this size are n/a");
  e->add_option("--timestamp", ev.timestamp, "on|off");
  e->add_option("--config", ev.config_path, "JSON config; flags override file values");
  e->add_option("-o,--output", ev.output, "report output path");

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "generate synthetic calibration/test CSVs");
  s->add_option("--config", sy.config_path, "synth config JSON");
  s->add_option("--n-calib", sy.n_calib, "calibration size override");
  s->add_option("--n-test", sy.n_test, "test size override");
  s->add_option("--seed,-s", sy.seed, "rng seed");
  s->add_option("--out-calib", sy.out_calib, "calibration CSV path");
  s->add_option("--out-test", sy.out_test, "test CSV path");

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "run the multi-trial evaluation protocol");
  x->add_option("--config", ex.config_path, "experiment config JSON")->required();
  x->add_option("--trials", ex.trials, "trial count override");
  x->add_option("--jobs", ex.jobs, "parallel trial workers");
  x->add_option("--seed,-s", ex.seed, "master seed override");
  x->add_option("--timestamp", ex.timestamp, "on|off");
  x->add_option("-o,--output", ex.output, "report output path override");
  x->add_option("--tsv", ex.tsv_output, "also write a gnuplot-friendly TSV table");
  x->add_option("--csv", ex.csv_output, "also write per-trial rows as flat CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(c)) return run_calibrate(cal);
    if (app.got_subcommand(p)) return run_predict(pre);
    if (app.got_subcommand(e)) return run_evaluate(ev);
    if (app.got_subcommand(s)) return run_synth(sy);
    if (app.got_subcommand(x)) return run_experiment_cmd(ex);
  } catch (const ParseError& err) {
    std::cerr << "error: parse: " << err.what() << "\n";
    return 1;
  } catch (const ValidationError& err) {
    std::cerr << "error: validation: " << err.what() << "\n";
    return 2;
  } catch (const SolverError& err) {
    std::cerr << "error: solver: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: internal: " << err.what() << "\n";
    return 4;
  }
  return 2;
}
