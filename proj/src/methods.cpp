#include "kandinsky/methods.hpp"

#include <algorithm>
#include <cmath>

#include "kandinsky/pinball.hpp"
#include "kandinsky/rng.hpp"

namespace kandinsky {

namespace {

void check_task(const Dataset& dataset, const ScoreSpec& score) {
  score.validate();
  if (score.task() != dataset.task)
    throw ValidationError("score function task does not match the dataset task");
  validate_dataset(dataset, score.arity(dataset.n_classes));
}

std::vector<double> calibration_scores(const Dataset& dataset, const ScoreSpec& score, double eta,
                                       uint64_t seed) {
  std::vector<double> s(dataset.size());
  for (int i = 0; i < dataset.size(); ++i) {
    const auto& e = dataset.examples[i];
    double eps = score.rng_required() ? rng::unit(seed, rng::kCalibEps, i) : 0.0;
    s[i] = score_value(score, eta, e.base_outputs, e.y, eps);
  }
  return s;
}

double threshold_quantile(const std::vector<double>& scores, double alpha, bool adjust) {
  double tau = 1.0 - alpha;
  if (adjust) {
    // classical split-CP correction: the ceil((n+1)(1-alpha))-th of n scores
    double n = static_cast<double>(scores.size());
    tau = std::min(1.0, std::ceil((n + 1.0) * (1.0 - alpha) - 1e-9) / n);
  }
  return empirical_quantile(scores, tau);
}

BasisRecipe intercept_recipe(const Dataset& dataset) {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Indicator;
  spec.include_intercept = true;
  return fit_basis(spec, dataset);
}

void stamp_common(CalibratedPredictor& p, const Dataset& dataset, const ScoreSpec& score,
                  double alpha, uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha outside (0,1)");
  p.alpha = alpha;
  p.task = dataset.task;
  p.n_classes = dataset.n_classes;
  p.score = score;
  p.seed = seed;
  if (dataset.task == Task::Regression)
    p.label_grid = dataset.label_grid.empty() ? default_label_grid(dataset) : dataset.label_grid;
}

}  // namespace

double CalibratedPredictor::qhat(const std::vector<double>& x, double y,
                                 const std::vector<double>& b) const {
  auto phi = basis.eval(x, y, b);
  double acc = 0.0;
  for (size_t j = 0; j < phi.size(); ++j) acc += phi[j] * beta[j];
  return acc;
}

const char* method_name(CalibratedPredictor::Method m) {
  switch (m) {
    case CalibratedPredictor::Method::Kandinsky: return "kandinsky";
    case CalibratedPredictor::Method::Split: return "split";
    case CalibratedPredictor::Method::Mondrian: return "mondrian";
    case CalibratedPredictor::Method::ClassConditional: return "class_conditional";
    case CalibratedPredictor::Method::Conservative: return "conservative";
  }
  return "unknown";
}

CalibratedPredictor::Method method_from_name(const std::string& name) {
  if (name == "kandinsky") return CalibratedPredictor::Method::Kandinsky;
  if (name == "split") return CalibratedPredictor::Method::Split;
  if (name == "mondrian") return CalibratedPredictor::Method::Mondrian;
  if (name == "class_conditional") return CalibratedPredictor::Method::ClassConditional;
  if (name == "conservative") return CalibratedPredictor::Method::Conservative;
  throw ValidationError("unknown method '" + name + "'");
}

CalibratedPredictor kandinsky_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                        const ScoreSpec& score, double alpha, uint64_t seed) {
  check_task(dataset, score);
  CalibratedPredictor p;
  p.method = CalibratedPredictor::Method::Kandinsky;
  stamp_common(p, dataset, score, alpha, seed);
  p.eta = resolve_eta(score, dataset);
  p.basis = fit_basis(groups, dataset);

  // with a separate fractional fitting split, calibrate on the held-out half
  const Dataset* calib = &dataset;
  Dataset tail;
  if (groups.kind == GroupSpec::Kind::Fractional && groups.fit_on_separate_split) {
    tail = dataset;
    tail.examples.assign(dataset.examples.begin() + dataset.size() / 2, dataset.examples.end());
    calib = &tail;
  }

  auto matrix = build_matrix(p.basis, *calib);
  auto scores = calibration_scores(*calib, score, p.eta, seed);
  auto sol = fit_linear_quantile(matrix, scores, alpha);
  if (score.rng_required() && static_cast<int>(sol.interpolated_indices.size()) > matrix.cols) {
    std::string rows;
    for (int i : sol.interpolated_indices) rows += (rows.empty() ? "" : ",") + std::to_string(i);
    throw SolverError("interpolation bound exceeded with randomized scores (degenerate rows " +
                      rows + "); this event has probability zero under continuous noise");
  }
  p.beta = sol.beta;
  p.diagnostics.objective = sol.objective;
  p.diagnostics.interpolated_count = static_cast<int>(sol.interpolated_indices.size());
  double worst = 0.0;
  for (double v : sol.subgradient_residual) worst = std::max(worst, std::abs(v));
  p.diagnostics.max_subgradient_residual = worst;
  p.diagnostics.rank_deficient = sol.rank_deficient;
  p.diagnostics.pivots = sol.pivots;
  return p;
}

CalibratedPredictor split_calibrate(const Dataset& dataset, const ScoreSpec& score, double alpha,
                                    uint64_t seed, bool finite_sample_adjust) {
  check_task(dataset, score);
  CalibratedPredictor p;
  p.method = CalibratedPredictor::Method::Split;
  stamp_common(p, dataset, score, alpha, seed);
  p.eta = resolve_eta(score, dataset);
  p.finite_sample_adjust = finite_sample_adjust;
  p.basis = intercept_recipe(dataset);
  auto scores = calibration_scores(dataset, score, p.eta, seed);
  double t = threshold_quantile(scores, alpha, finite_sample_adjust);
  p.beta = {t};
  p.group_thresholds = {t};
  return p;
}

namespace {

CalibratedPredictor partition_calibrate(CalibratedPredictor::Method method, const Dataset& dataset,
                                        const GroupSpec& groups, const ScoreSpec& score,
                                        double alpha, uint64_t seed, bool adjust) {
  check_task(dataset, score);
  CalibratedPredictor p;
  p.method = method;
  stamp_common(p, dataset, score, alpha, seed);
  p.eta = resolve_eta(score, dataset);
  p.finite_sample_adjust = adjust;
  p.basis = fit_basis(groups, dataset);
  auto matrix = build_matrix(p.basis, dataset);
  auto scores = calibration_scores(dataset, score, p.eta, seed);

  const int d = matrix.cols;
  p.beta.assign(d, 0.0);
  for (int j = 0; j < d; ++j) {
    std::vector<double> cell;
    for (int i = 0; i < matrix.rows; ++i)
      if (matrix.at(i, j) == 1.0) cell.push_back(scores[i]);
    if (cell.empty())
      throw ValidationError("cell '" + matrix.column_names[j] + "' has no calibration examples");
    p.beta[j] = threshold_quantile(cell, alpha, adjust);
  }
  p.group_thresholds = p.beta;
  return p;
}

}  // namespace

CalibratedPredictor mondrian_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                       const ScoreSpec& score, double alpha, uint64_t seed,
                                       bool finite_sample_adjust) {
  GroupSpec spec = groups;
  spec.kind = GroupSpec::Kind::Mondrian;  // force the partition checks
  if (!spec.include_intercept.has_value()) spec.include_intercept = false;
  if (*spec.include_intercept)
    throw ValidationError("mondrian thresholds are per-cell; intercept not supported");
  return partition_calibrate(CalibratedPredictor::Method::Mondrian, dataset, spec, score, alpha,
                             seed, finite_sample_adjust);
}

CalibratedPredictor class_conditional_calibrate(const Dataset& dataset, const ScoreSpec& score,
                                                double alpha, uint64_t seed,
                                                bool finite_sample_adjust) {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::ClassConditional;
  return partition_calibrate(CalibratedPredictor::Method::ClassConditional, dataset, spec, score,
                             alpha, seed, finite_sample_adjust);
}

CalibratedPredictor conservative_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                           const ScoreSpec& score, double alpha, uint64_t seed,
                                           bool finite_sample_adjust) {
  check_task(dataset, score);
  if (groups.groups.empty()) throw ValidationError("conservative method needs a group list");
  CalibratedPredictor p;
  p.method = CalibratedPredictor::Method::Conservative;
  stamp_common(p, dataset, score, alpha, seed);
  p.eta = resolve_eta(score, dataset);
  p.finite_sample_adjust = finite_sample_adjust;
  auto scores = calibration_scores(dataset, score, p.eta, seed);

  GroupSpec membership = groups;
  membership.kind = GroupSpec::Kind::Indicator;
  membership.include_intercept = false;
  auto member_recipe = fit_basis(membership, dataset);
  double tmax = 0.0;
  bool first = true;
  for (int g = 0; g < member_recipe.dim(); ++g) {
    std::vector<double> cell;
    for (int i = 0; i < dataset.size(); ++i) {
      const auto& e = dataset.examples[i];
      if (member_recipe.eval(e.x, e.y, e.base_outputs)[g] == 1.0) cell.push_back(scores[i]);
    }
    if (cell.empty())
      throw ValidationError("group '" + member_recipe.column_names[g] +
                            "' has no calibration examples");
    double t = threshold_quantile(cell, alpha, finite_sample_adjust);
    p.group_thresholds.push_back(t);
    tmax = first ? t : std::max(tmax, t);
    first = false;
  }
  p.basis = intercept_recipe(dataset);
  p.beta = {tmax};
  return p;
}

double predict_eps(const CalibratedPredictor& pred, uint64_t row_id) {
  return pred.score.rng_required() ? rng::unit(pred.seed, rng::kPredictEps, row_id) : 0.0;
}

PredictionSet predict_classification(const CalibratedPredictor& pred,
                                     const std::vector<double>& x, const std::vector<double>& b,
                                     double eps) {
  if (pred.task != Task::Classification)
    throw ValidationError("predict_classification on a regression predictor");
  if (static_cast<int>(b.size()) != pred.score.arity(pred.n_classes))
    throw ValidationError("base_outputs arity does not match the score function");
  PredictionSet out;
  std::vector<std::uint8_t> mask(pred.n_classes, 0);
  for (int k = 0; k < pred.n_classes; ++k) {
    double s = score_value(pred.score, pred.eta, b, k, eps);
    mask[k] = s <= pred.qhat(x, k, b) ? 1 : 0;
  }
  out.label_mask = std::move(mask);
  return out;
}

namespace {

PredictionSet analytic_cqr_interval(const CalibratedPredictor& pred, const std::vector<double>& x,
                                    const std::vector<double>& b, double eps) {
  // S~ <= q  <=>  cqr(y) <= q - jitter; the CQR sublevel set is an interval
  double q = pred.qhat(x, 0.0, b);
  if (pred.score.jittered) q -= pred.eta * (eps - 0.5);
  PredictionSet out;
  std::vector<Interval> iv;
  double lo = b[0] - q, hi = b[1] + q;
  if (lo <= hi) iv.push_back({lo, hi});
  out.intervals = std::move(iv);
  return out;
}

}  // namespace

PredictionSet predict_regression_grid(const CalibratedPredictor& pred,
                                      const std::vector<double>& x, const std::vector<double>& b,
                                      double eps) {
  if (pred.task != Task::Regression)
    throw ValidationError("predict_regression on a classification predictor");
  if (pred.label_grid.empty())
    throw ValidationError("regression prediction needs a label grid");
  if (static_cast<int>(b.size()) != pred.score.arity(pred.n_classes))
    throw ValidationError("base_outputs arity does not match the score function");
  PredictionSet out;
  std::vector<std::uint8_t> mask(pred.label_grid.size(), 0);
  for (size_t m = 0; m < pred.label_grid.size(); ++m) {
    double y = pred.label_grid[m];
    double s = score_value(pred.score, pred.eta, b, y, eps);
    mask[m] = s <= pred.qhat(x, y, b) ? 1 : 0;
  }
  out.grid_mask = std::move(mask);
  return out;
}

PredictionSet predict_regression(const CalibratedPredictor& pred, const std::vector<double>& x,
                                 const std::vector<double>& b, double eps) {
  if (pred.task != Task::Regression)
    throw ValidationError("predict_regression on a classification predictor");
  if (pred.score.kind == ScoreSpec::Kind::Cqr && !pred.basis.depends_on_y())
    return analytic_cqr_interval(pred, x, b, eps);
  return predict_regression_grid(pred, x, b, eps);
}

PredictionSet predict(const CalibratedPredictor& pred, const std::vector<double>& x,
                      const std::vector<double>& b, double eps) {
  return pred.task == Task::Classification ? predict_classification(pred, x, b, eps)
                                           : predict_regression(pred, x, b, eps);
}

bool covers(const CalibratedPredictor& pred, const std::vector<double>& x, double y,
            const std::vector<double>& b, double eps) {
  double s = score_value(pred.score, pred.eta, b, y, eps);
  return s <= pred.qhat(x, y, b);
}

PredictionSet testtime_qr_predict(const TesttimePlan& plan, const std::vector<double>& x,
                                  const std::vector<double>& b, uint64_t test_id) {
  if (!plan.calibration) throw ValidationError("test-time QR needs a calibration dataset");
  if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) throw ValidationError("alpha outside (0,1)");
  plan.score.validate();
  const Dataset& cal = *plan.calibration;
  const int n = cal.size();
  const int d = plan.basis.dim();

  std::vector<double> candidates;
  if (plan.task == Task::Classification) {
    if (plan.n_classes < 1) throw ValidationError("test-time QR: label cardinality missing");
    for (int k = 0; k < plan.n_classes; ++k) candidates.push_back(k);
  } else {
    if (plan.label_grid.empty())
      throw ValidationError("test-time QR on regression needs a label grid");
    candidates = plan.label_grid;
  }
  long long cost = static_cast<long long>(candidates.size()) * (n + 1);
  if (cost > plan.cost_budget && plan.on_warning)
    plan.on_warning("test-time QR cost " + std::to_string(cost) + " exceeds budget " +
                    std::to_string(plan.cost_budget));

  // fresh draws for this invocation: calibration noise and one test draw
  auto eps_cal = [&](int i) {
    return plan.score.rng_required()
               ? rng::unit(plan.seed, rng::kTestTime, (test_id << 32) ^ static_cast<uint64_t>(i))
               : 0.0;
  };
  const double eps_test = plan.score.rng_required()
                              ? rng::unit(plan.seed, rng::kTestTime, (test_id << 32) ^ 0xffffffffULL)
                              : 0.0;

  BasisMatrix aug;
  aug.rows = n + 1;
  aug.cols = d;
  aug.column_names = plan.basis.column_names;
  aug.kind = BasisMatrix::Kind::Raw;
  aug.values.assign(static_cast<size_t>(n + 1) * d, 0.0);
  std::vector<double> scores(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& e = cal.examples[i];
    auto row = plan.basis.eval(e.x, e.y, e.base_outputs);
    std::copy(row.begin(), row.end(), aug.values.begin() + static_cast<size_t>(i) * d);
    scores[i] = score_value(plan.score, plan.eta, e.base_outputs, e.y, eps_cal(i));
  }

  std::vector<std::uint8_t> mask(candidates.size(), 0);
  for (size_t c = 0; c < candidates.size(); ++c) {
    double y = candidates[c];
    auto row = plan.basis.eval(x, y, b);
    std::copy(row.begin(), row.end(), aug.values.begin() + static_cast<size_t>(n) * d);
    double s_test = score_value(plan.score, plan.eta, b, y, eps_test);
    scores[n] = s_test;
    auto sol = fit_linear_quantile(aug, scores, plan.alpha);
    double q = 0.0;
    for (int j = 0; j < d; ++j) q += row[j] * sol.beta[j];
    // candidates whose own point is interpolated sit exactly on the boundary;
    // a relative band keeps the mathematically-included case included
    mask[c] = s_test <= q + 1e-9 * (1.0 + std::abs(s_test)) ? 1 : 0;
  }

  PredictionSet out;
  if (plan.task == Task::Classification)
    out.label_mask = std::move(mask);
  else
    out.grid_mask = std::move(mask);
  return out;
}

}  // namespace kandinsky
