#include "kandinsky/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace kandinsky::io {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line_no) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
  }
}

}  // namespace

Dataset read_csv(const std::string& path, Task task, int n_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  auto header = split_line(line);

  int p = 0, m = 0, y_col = -1, z_col = -1;
  std::vector<int> x_cols, b_cols;
  for (size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "y")
      y_col = static_cast<int>(c);
    else if (h == "z")
      z_col = static_cast<int>(c);
    else if (!h.empty() && h[0] == 'x')
      x_cols.push_back(static_cast<int>(c)), ++p;
    else if (!h.empty() && h[0] == 'b')
      b_cols.push_back(static_cast<int>(c)), ++m;
    else
      throw ParseError("unknown CSV column '" + h + "' (expected x<i>, y, z, b<i>)");
  }
  if (y_col < 0) throw ParseError("'" + path + "' has no y column");

  Dataset d;
  d.task = task;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    LabeledExample e;
    e.x.reserve(p);
    for (int c : x_cols) e.x.push_back(parse_double(cells[c], line_no));
    for (int c : b_cols) e.base_outputs.push_back(parse_double(cells[c], line_no));
    e.y = parse_double(cells[y_col], line_no);
    if (task == Task::Classification) {
      double r = std::round(e.y);
      if (e.y != r || r < 0)
        throw ParseError("line " + std::to_string(line_no) +
                         ": classification label must be a nonnegative integer");
    }
    if (z_col >= 0) {
      double zv = parse_double(cells[z_col], line_no);
      if (zv != std::round(zv))
        throw ParseError("line " + std::to_string(line_no) + ": z tag must be an integer");
      e.z = static_cast<int>(zv);
    }
    d.examples.push_back(std::move(e));
  }
  if (d.examples.empty()) throw ParseError("'" + path + "' has a header but no rows");
  if (task == Task::Classification) {
    int maxy = 0;
    for (const auto& e : d.examples) maxy = std::max(maxy, static_cast<int>(e.y));
    d.n_classes = n_classes > 0 ? n_classes : maxy + 1;
  }
  return d;
}

void write_csv(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  const int p = dataset.x_dim();
  const int m = dataset.base_arity();
  const bool has_z = dataset.has_z();
  for (int j = 0; j < p; ++j) out << "x" << j << ",";
  out << "y";
  if (has_z) out << ",z";
  for (int j = 0; j < m; ++j) out << ",b" << j;
  out << "\n";
  for (const auto& e : dataset.examples) {
    for (int j = 0; j < p; ++j) out << fmt_double(e.x[j]) << ",";
    out << fmt_double(e.y);
    if (has_z) out << "," << *e.z;
    for (int j = 0; j < m; ++j) out << "," << fmt_double(e.base_outputs[j]);
    out << "\n";
  }
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const std::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

std::string timestamp_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------------------
// score spec
// ---------------------------------------------------------------------------

Json score_to_json(const ScoreSpec& s) {
  Json j;
  switch (s.kind) {
    case ScoreSpec::Kind::AbsResidual: j["kind"] = "abs_residual"; break;
    case ScoreSpec::Kind::Cqr: j["kind"] = "cqr"; break;
    case ScoreSpec::Kind::Aps: j["kind"] = "aps"; break;
  }
  j["jittered"] = s.jittered;
  j["eta"] = s.eta;
  return j;
}

ScoreSpec score_from_json(const Json& j) {
  ScoreSpec s;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "abs_residual")
    s.kind = ScoreSpec::Kind::AbsResidual;
  else if (kind == "cqr")
    s.kind = ScoreSpec::Kind::Cqr;
  else if (kind == "aps")
    s.kind = ScoreSpec::Kind::Aps;
  else
    throw ParseError("unknown score kind '" + kind + "'");
  s.jittered = j.value("jittered", false);
  s.eta = j.value("eta", 0.0);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// group specs
// ---------------------------------------------------------------------------

namespace {

const char* op_name(Condition::Op op) {
  switch (op) {
    case Condition::Op::Ge: return "ge";
    case Condition::Op::Gt: return "gt";
    case Condition::Op::Le: return "le";
    case Condition::Op::Lt: return "lt";
    case Condition::Op::Eq: return "eq";
    case Condition::Op::In: return "in";
  }
  return "ge";
}

Condition::Op op_from_name(const std::string& s) {
  if (s == "ge") return Condition::Op::Ge;
  if (s == "gt") return Condition::Op::Gt;
  if (s == "le") return Condition::Op::Le;
  if (s == "lt") return Condition::Op::Lt;
  if (s == "eq") return Condition::Op::Eq;
  if (s == "in") return Condition::Op::In;
  throw ParseError("unknown predicate op '" + s + "'");
}

Json group_def_to_json(const GroupDef& g) {
  Json j;
  j["name"] = g.name;
  Json all = Json::array();
  for (const auto& c : g.all) {
    Json cj;
    cj["col"] = c.col;
    cj["op"] = op_name(c.op);
    if (c.op == Condition::Op::In)
      cj["values"] = c.values;
    else
      cj["value"] = c.value;
    all.push_back(cj);
  }
  j["all"] = all;
  return j;
}

GroupDef group_def_from_json(const Json& j) {
  GroupDef g;
  g.name = j.at("name").get<std::string>();
  if (j.contains("all")) {
    for (const auto& cj : j.at("all")) {
      Condition c;
      c.col = cj.at("col").get<std::string>();
      c.op = op_from_name(cj.at("op").get<std::string>());
      if (c.op == Condition::Op::In)
        c.values = cj.at("values").get<std::vector<double>>();
      else
        c.value = cj.at("value").get<double>();
      g.all.push_back(c);
    }
  }
  return g;
}

Json z_group_to_json(const ZGroup& g) {
  Json j;
  j["name"] = g.name;
  j["values"] = g.values;
  return j;
}

ZGroup z_group_from_json(const Json& j) {
  return {j.at("name").get<std::string>(), j.at("values").get<std::vector<int>>()};
}

Json estimator_to_json(const EstimatorSpec& e) {
  Json j;
  j["kind"] = e.kind == EstimatorSpec::Kind::Histogram ? "histogram" : "logistic";
  j["bins"] = e.bins;
  j["learning_rate"] = e.learning_rate;
  j["iterations"] = e.iterations;
  j["seed"] = e.seed;
  return j;
}

EstimatorSpec estimator_from_json(const Json& j) {
  EstimatorSpec e;
  std::string kind = j.value("kind", "histogram");
  if (kind == "histogram")
    e.kind = EstimatorSpec::Kind::Histogram;
  else if (kind == "logistic")
    e.kind = EstimatorSpec::Kind::Logistic;
  else
    throw ParseError("unknown estimator kind '" + kind + "'");
  e.bins = j.value("bins", 8);
  e.learning_rate = j.value("learning_rate", 0.5);
  e.iterations = j.value("iterations", 500);
  e.seed = j.value("seed", static_cast<uint64_t>(0));
  e.validate();
  return e;
}

}  // namespace

Json group_spec_to_json(const GroupSpec& g) {
  Json j;
  switch (g.kind) {
    case GroupSpec::Kind::Indicator: j["kind"] = "indicator"; break;
    case GroupSpec::Kind::ClassConditional: j["kind"] = "class_conditional"; break;
    case GroupSpec::Kind::Mondrian: j["kind"] = "mondrian"; break;
    case GroupSpec::Kind::Fractional: j["kind"] = "fractional"; break;
    case GroupSpec::Kind::Raw: j["kind"] = "raw"; break;
  }
  if (g.include_intercept.has_value()) j["include_intercept"] = *g.include_intercept;
  if (!g.groups.empty()) {
    Json arr = Json::array();
    for (const auto& gd : g.groups) arr.push_back(group_def_to_json(gd));
    j["groups"] = arr;
  }
  if (g.kind == GroupSpec::Kind::Fractional) {
    Json arr = Json::array();
    for (const auto& zg : g.z_groups) arr.push_back(z_group_to_json(zg));
    j["z_groups"] = arr;
    j["statistic"] = g.statistic == GroupSpec::Statistic::XY ? "XY" : "FY";
    j["estimator"] = estimator_to_json(g.estimator);
    j["fit_on_separate_split"] = g.fit_on_separate_split;
  }
  if (g.kind == GroupSpec::Kind::Raw) j["columns"] = g.raw_columns;
  return j;
}

GroupSpec group_spec_from_json(const Json& j) {
  GroupSpec g;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "indicator")
    g.kind = GroupSpec::Kind::Indicator;
  else if (kind == "class_conditional")
    g.kind = GroupSpec::Kind::ClassConditional;
  else if (kind == "mondrian")
    g.kind = GroupSpec::Kind::Mondrian;
  else if (kind == "fractional")
    g.kind = GroupSpec::Kind::Fractional;
  else if (kind == "raw")
    g.kind = GroupSpec::Kind::Raw;
  else
    throw ParseError("unknown group spec kind '" + kind + "'");
  if (j.contains("include_intercept")) g.include_intercept = j.at("include_intercept").get<bool>();
  if (j.contains("groups"))
    for (const auto& gj : j.at("groups")) g.groups.push_back(group_def_from_json(gj));
  if (j.contains("z_groups"))
    for (const auto& zj : j.at("z_groups")) g.z_groups.push_back(z_group_from_json(zj));
  if (j.contains("statistic")) {
    std::string st = j.at("statistic").get<std::string>();
    if (st == "XY")
      g.statistic = GroupSpec::Statistic::XY;
    else if (st == "FY")
      g.statistic = GroupSpec::Statistic::FY;
    else
      throw ParseError("unknown statistic '" + st + "'");
  }
  if (j.contains("estimator")) g.estimator = estimator_from_json(j.at("estimator"));
  g.fit_on_separate_split = j.value("fit_on_separate_split", false);
  if (j.contains("columns")) g.raw_columns = j.at("columns").get<std::vector<std::string>>();
  return g;
}

// ---------------------------------------------------------------------------
// basis recipes (including fitted fractional estimators)
// ---------------------------------------------------------------------------

Json recipe_to_json(const BasisRecipe& r) {
  Json j;
  j["spec"] = group_spec_to_json(r.spec);
  j["n_classes"] = r.n_classes;
  j["x_dim"] = r.x_dim;
  j["b_arity"] = r.b_arity;
  j["column_names"] = r.column_names;
  j["warnings"] = r.warnings;
  if (r.fractional) {
    const auto& fe = *r.fractional;
    Json f;
    f["kind"] = fe.kind == EstimatorSpec::Kind::Histogram ? "histogram" : "logistic";
    f["statistic"] = fe.statistic == GroupSpec::Statistic::XY ? "XY" : "FY";
    f["group_names"] = fe.group_names;
    if (fe.kind == EstimatorSpec::Kind::Histogram) {
      f["dim"] = fe.hist.dim;
      f["bins"] = fe.hist.bins;
      f["lo"] = fe.hist.lo;
      f["width"] = fe.hist.width;
      f["cell_rate"] = fe.hist.cell_rate;
      f["cell_count"] = fe.hist.cell_count;
      f["fallback"] = fe.hist.fallback;
    } else {
      f["dim"] = fe.logit.dim;
      f["mean"] = fe.logit.mean;
      f["sd"] = fe.logit.sd;
      f["weights"] = fe.logit.weights;
    }
    j["fractional"] = f;
  }
  return j;
}

BasisRecipe recipe_from_json(const Json& j) {
  BasisRecipe r;
  r.spec = group_spec_from_json(j.at("spec"));
  r.n_classes = j.at("n_classes").get<int>();
  r.x_dim = j.at("x_dim").get<int>();
  r.b_arity = j.at("b_arity").get<int>();
  r.column_names = j.at("column_names").get<std::vector<std::string>>();
  r.warnings = j.value("warnings", std::vector<std::string>{});
  if (j.contains("fractional")) {
    const auto& f = j.at("fractional");
    FractionalEstimator fe;
    fe.kind = f.at("kind").get<std::string>() == "histogram" ? EstimatorSpec::Kind::Histogram
                                                             : EstimatorSpec::Kind::Logistic;
    fe.statistic = f.at("statistic").get<std::string>() == "XY" ? GroupSpec::Statistic::XY
                                                                : GroupSpec::Statistic::FY;
    fe.group_names = f.at("group_names").get<std::vector<std::string>>();
    if (fe.kind == EstimatorSpec::Kind::Histogram) {
      fe.hist.dim = f.at("dim").get<int>();
      fe.hist.bins = f.at("bins").get<int>();
      fe.hist.lo = f.at("lo").get<std::vector<double>>();
      fe.hist.width = f.at("width").get<std::vector<double>>();
      fe.hist.cell_rate = f.at("cell_rate").get<std::vector<std::vector<double>>>();
      fe.hist.cell_count = f.at("cell_count").get<std::vector<std::vector<int>>>();
      fe.hist.fallback = f.at("fallback").get<std::vector<double>>();
    } else {
      fe.logit.dim = f.at("dim").get<int>();
      fe.logit.mean = f.at("mean").get<std::vector<double>>();
      fe.logit.sd = f.at("sd").get<std::vector<double>>();
      fe.logit.weights = f.at("weights").get<std::vector<std::vector<double>>>();
    }
    r.fractional = std::move(fe);
  }
  return r;
}

// ---------------------------------------------------------------------------
// calibrated predictors
// ---------------------------------------------------------------------------

Json model_to_json(const CalibratedPredictor& p, bool with_timestamp) {
  Json j;
  j["format"] = "kandinsky-model";
  j["version"] = 1;
  j["method"] = method_name(p.method);
  j["alpha"] = p.alpha;
  j["task"] = p.task == Task::Regression ? "regression" : "classification";
  j["n_classes"] = p.n_classes;
  j["score"] = score_to_json(p.score);
  j["eta"] = p.eta;
  j["seed"] = p.seed;
  j["finite_sample_adjust"] = p.finite_sample_adjust;
  j["basis"] = recipe_to_json(p.basis);
  j["beta"] = p.beta;
  j["group_thresholds"] = p.group_thresholds;
  j["label_grid"] = p.label_grid;
  Json diag;
  diag["objective"] = p.diagnostics.objective;
  diag["interpolated_count"] = p.diagnostics.interpolated_count;
  diag["max_subgradient_residual"] = p.diagnostics.max_subgradient_residual;
  diag["rank_deficient"] = p.diagnostics.rank_deficient;
  diag["pivots"] = p.diagnostics.pivots;
  j["diagnostics"] = diag;
  if (with_timestamp) j["timestamp"] = timestamp_now();
  return j;
}

CalibratedPredictor model_from_json(const Json& j) {
  if (j.value("format", "") != "kandinsky-model") throw ParseError("not a kandinsky model file");
  if (j.value("version", 0) != 1) throw ParseError("unsupported model version");
  CalibratedPredictor p;
  p.method = method_from_name(j.at("method").get<std::string>());
  p.alpha = j.at("alpha").get<double>();
  p.task = j.at("task").get<std::string>() == "classification" ? Task::Classification
                                                               : Task::Regression;
  p.n_classes = j.at("n_classes").get<int>();
  p.score = score_from_json(j.at("score"));
  p.eta = j.at("eta").get<double>();
  p.seed = j.at("seed").get<uint64_t>();
  p.finite_sample_adjust = j.value("finite_sample_adjust", false);
  p.basis = recipe_from_json(j.at("basis"));
  p.beta = j.at("beta").get<std::vector<double>>();
  p.group_thresholds = j.value("group_thresholds", std::vector<double>{});
  p.label_grid = j.value("label_grid", std::vector<double>{});
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    p.diagnostics.objective = d.value("objective", 0.0);
    p.diagnostics.interpolated_count = d.value("interpolated_count", 0);
    p.diagnostics.max_subgradient_residual = d.value("max_subgradient_residual", 0.0);
    p.diagnostics.rank_deficient = d.value("rank_deficient", false);
    p.diagnostics.pivots = d.value("pivots", 0);
  }
  if (static_cast<int>(p.beta.size()) != p.basis.dim())
    throw ParseError("model beta length does not match its basis");
  return p;
}

Json prediction_to_json(const PredictionSet& set, uint64_t row, const std::vector<double>& grid,
                        int n_classes) {
  Json j;
  j["row"] = row;
  if (set.label_mask) {
    Json labels = Json::array();
    for (int k = 0; k < static_cast<int>(set.label_mask->size()); ++k)
      if ((*set.label_mask)[k]) labels.push_back(k);
    j["labels"] = labels;
  } else if (set.intervals) {
    Json arr = Json::array();
    for (const auto& iv : *set.intervals) arr.push_back(Json::array({iv.lo, iv.hi}));
    j["intervals"] = arr;
  } else if (set.grid_mask) {
    Json idx = Json::array();
    for (size_t m = 0; m < set.grid_mask->size(); ++m)
      if ((*set.grid_mask)[m]) idx.push_back(m);
    j["grid_included"] = idx;
  }
  j["size"] = set_size(set, grid, n_classes);
  return j;
}

// ---------------------------------------------------------------------------
// synth config and eval groups
// ---------------------------------------------------------------------------

Json synth_to_json(const SynthConfig& c) {
  Json j;
  j["n_calib"] = c.n_calib;
  j["n_test"] = c.n_test;
  j["p"] = c.p;
  switch (c.structure) {
    case SynthConfig::Structure::Overlapping: j["structure"] = "overlapping"; break;
    case SynthConfig::Structure::Mondrian: j["structure"] = "mondrian"; break;
    case SynthConfig::Structure::Fractional: j["structure"] = "fractional"; break;
  }
  j["k"] = c.k;
  j["sigma_mult"] = c.sigma_mult;
  j["sigma_base"] = c.sigma_base;
  j["frac_flip"] = c.frac_flip;
  j["task"] = c.task == Task::Regression ? "regression" : "classification";
  j["n_classes"] = c.n_classes;
  switch (c.base_for) {
    case ScoreSpec::Kind::AbsResidual: j["base_for"] = "abs_residual"; break;
    case ScoreSpec::Kind::Cqr: j["base_for"] = "cqr"; break;
    case ScoreSpec::Kind::Aps: j["base_for"] = "aps"; break;
  }
  j["linear_fit"] = c.linear_fit;
  j["oracle_alpha"] = c.oracle_alpha;
  j["seed"] = c.seed;
  return j;
}

SynthConfig synth_from_json(const Json& j) {
  SynthConfig c;
  c.n_calib = j.value("n_calib", 1000);
  c.n_test = j.value("n_test", 1000);
  c.p = j.value("p", 2);
  std::string st = j.value("structure", "overlapping");
  if (st == "overlapping")
    c.structure = SynthConfig::Structure::Overlapping;
  else if (st == "mondrian")
    c.structure = SynthConfig::Structure::Mondrian;
  else if (st == "fractional")
    c.structure = SynthConfig::Structure::Fractional;
  else
    throw ParseError("unknown synth structure '" + st + "'");
  c.k = j.value("k", 2);
  c.sigma_mult = j.value("sigma_mult", std::vector<double>{});
  c.sigma_base = j.value("sigma_base", 1.0);
  c.frac_flip = j.value("frac_flip", 0.2);
  c.task = j.value("task", "regression") == "classification" ? Task::Classification
                                                             : Task::Regression;
  c.n_classes = j.value("n_classes", 0);
  std::string bf = j.value("base_for", "abs_residual");
  if (bf == "abs_residual")
    c.base_for = ScoreSpec::Kind::AbsResidual;
  else if (bf == "cqr")
    c.base_for = ScoreSpec::Kind::Cqr;
  else if (bf == "aps")
    c.base_for = ScoreSpec::Kind::Aps;
  else
    throw ParseError("unknown base_for '" + bf + "'");
  c.linear_fit = j.value("linear_fit", false);
  c.oracle_alpha = j.value("oracle_alpha", 0.1);
  c.seed = j.value("seed", static_cast<uint64_t>(1));
  c.validate();
  return c;
}

Json eval_groups_to_json(const EvalGroups& g) {
  Json j;
  Json defs = Json::array();
  for (const auto& d : g.defs) defs.push_back(group_def_to_json(d));
  j["defs"] = defs;
  Json zg = Json::array();
  for (const auto& z : g.z_groups) zg.push_back(z_group_to_json(z));
  j["z_groups"] = zg;
  return j;
}

EvalGroups eval_groups_from_json(const Json& j) {
  EvalGroups g;
  if (j.contains("defs"))
    for (const auto& dj : j.at("defs")) g.defs.push_back(group_def_from_json(dj));
  if (j.contains("z_groups"))
    for (const auto& zj : j.at("z_groups")) g.z_groups.push_back(z_group_from_json(zj));
  return g;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

Json report_to_json(const CoverageReport& r, const Json& config_echo, bool with_timestamp) {
  Json j;
  j["format"] = "kandinsky-report";
  j["version"] = 1;
  j["alpha"] = r.alpha;
  j["trials"] = r.trials;
  j["seed"] = r.seed;
  j["n_test"] = r.n_test;
  j["mc_band_marginal"] = r.mc_band_marginal;
  j["config"] = config_echo;
  Json methods = Json::array();
  for (const auto& m : r.methods) {
    Json mj;
    mj["method"] = m.method;
    Json groups = Json::array();
    for (size_t g = 0; g < m.group_names.size(); ++g) {
      Json gj;
      gj["name"] = m.group_names[g];
      gj["miscoverage_mean"] = m.group_mean[g];
      gj["miscoverage_std"] = m.group_std[g];
      gj["miscoverage_min"] = m.group_min[g];
      gj["miscoverage_max"] = m.group_max[g];
      gj["count_mean"] = m.group_count_mean[g];
      gj["mc_band"] = m.group_mc_band[g];
      groups.push_back(gj);
    }
    mj["groups"] = groups;
    mj["cd_mean"] = m.cd_mean;
    mj["cd_std"] = m.cd_std;
    mj["minmax_gap_mean"] = m.gap_mean;
    mj["set_size_mean"] = m.size_mean;
    mj["set_size_std"] = m.size_std;
    Json diag;
    diag["objective"] = m.diagnostics.objective;
    diag["interpolated_count"] = m.diagnostics.interpolated_count;
    diag["max_subgradient_residual"] = m.diagnostics.max_subgradient_residual;
    diag["rank_deficient"] = m.diagnostics.rank_deficient;
    diag["pivots"] = m.diagnostics.pivots;
    mj["diagnostics"] = diag;
    Json trials = Json::array();
    for (const auto& t : m.trials) {
      Json tj;
      Json pg = Json::array();
      for (const auto& g : t.per_group) {
        Json gj;
        gj["name"] = g.name;
        gj["miscoverage"] = g.miscoverage;
        gj["count"] = g.count;
        gj["observed"] = g.observed;
        pg.push_back(gj);
      }
      tj["per_group"] = pg;
      tj["cd"] = t.cd;
      tj["minmax_gap"] = t.gap;
      tj["mean_size"] = t.mean_size;
      trials.push_back(tj);
    }
    mj["trials"] = trials;
    methods.push_back(mj);
  }
  j["methods"] = methods;
  if (with_timestamp) j["timestamp"] = timestamp_now();
  return j;
}

std::string report_to_tsv(const CoverageReport& r) {
  std::ostringstream out;
  out << "method\tgroup\tmiscoverage_mean\tmiscoverage_std\tcount_mean\tmc_band\n";
  for (const auto& m : r.methods)
    for (size_t g = 0; g < m.group_names.size(); ++g)
      out << m.method << "\t" << m.group_names[g] << "\t" << fmt_double(m.group_mean[g]) << "\t"
          << fmt_double(m.group_std[g]) << "\t" << fmt_double(m.group_count_mean[g]) << "\t"
          << fmt_double(m.group_mc_band[g]) << "\n";
  return out.str();
}

std::string report_to_csv(const CoverageReport& r) {
  std::ostringstream out;
  out << "method,trial,group,miscoverage,count,cd,minmax_gap,mean_size\n";
  for (const auto& m : r.methods)
    for (size_t t = 0; t < m.trials.size(); ++t)
      for (const auto& g : m.trials[t].per_group) {
        if (!g.observed) continue;
        out << m.method << "," << t << "," << g.name << "," << fmt_double(g.miscoverage) << ","
            << g.count << "," << fmt_double(m.trials[t].cd) << ","
            << fmt_double(m.trials[t].gap) << "," << fmt_double(m.trials[t].mean_size) << "\n";
      }
  return out.str();
}

// ---------------------------------------------------------------------------
// experiment files
// ---------------------------------------------------------------------------

ExperimentFile experiment_from_json(const Json& j) {
  ExperimentFile out;
  ExperimentConfig& cfg = out.config;

  const auto& data = j.at("data");
  if (data.contains("synth")) {
    cfg.synth = synth_from_json(data.at("synth"));
  } else if (data.contains("csv")) {
    cfg.from_csv = true;
    const auto& csv = data.at("csv");
    Task task = j.value("task", "regression") == "classification" ? Task::Classification
                                                                  : Task::Regression;
    cfg.csv_calibration = read_csv(csv.at("calibration").get<std::string>(), task);
    cfg.csv_test = read_csv(csv.at("test").get<std::string>(), task);
  } else {
    throw ParseError("experiment data must name 'synth' or 'csv'");
  }

  cfg.score = score_from_json(j.at("score"));
  cfg.alpha = j.value("alpha", 0.1);
  cfg.trials = j.value("trials", 1);
  cfg.seed = j.value("seed", static_cast<uint64_t>(1));
  cfg.jobs = j.value("jobs", 1);
  cfg.min_group_count = j.value("min_group_count", 1);
  cfg.compute_sizes = j.value("compute_sizes", true);
  cfg.grid_bins = j.value("grid_bins", 100);

  for (const auto& mj : j.at("methods")) {
    MethodSpec m;
    m.name = mj.at("name").get<std::string>();
    if (mj.contains("groups")) m.groups = group_spec_from_json(mj.at("groups"));
    m.finite_sample_adjust = mj.value("finite_sample_adjust", false);
    cfg.methods.push_back(std::move(m));
  }

  if (j.contains("report_groups") && !j.at("report_groups").is_string())
    cfg.report_groups = eval_groups_from_json(j.at("report_groups"));

  out.output_path = j.value("output", "report.json");
  out.with_timestamp = j.value("timestamp", false);
  out.echo = j;
  out.echo.erase("output");  // artifact location is not semantic config
  return out;
}

}  // namespace kandinsky::io
