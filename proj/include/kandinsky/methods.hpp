#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kandinsky/core.hpp"
#include "kandinsky/groups.hpp"
#include "kandinsky/scores.hpp"

namespace kandinsky {

struct FitDiagnostics {
  double objective = 0.0;
  int interpolated_count = 0;
  double max_subgradient_residual = 0.0;
  bool rank_deficient = false;
  int pivots = 0;
};

// Every method is represented through the same quantile surface
// q(x,y) = Phi(x,y)^T beta; the baselines use indicator bases whose
// coefficients are plain empirical quantiles.
struct CalibratedPredictor {
  enum class Method { Kandinsky, Split, Mondrian, ClassConditional, Conservative };

  Method method = Method::Kandinsky;
  double alpha = 0.1;
  Task task = Task::Regression;
  int n_classes = 0;
  BasisRecipe basis;
  std::vector<double> beta;
  std::vector<double> group_thresholds;  // per-group view for threshold methods
  ScoreSpec score;
  double eta = 0.0;  // resolved jitter width
  uint64_t seed = 0;
  std::vector<double> label_grid;  // regression prediction grid
  FitDiagnostics diagnostics;
  bool finite_sample_adjust = false;

  double qhat(const std::vector<double>& x, double y, const std::vector<double>& b) const;
};

const char* method_name(CalibratedPredictor::Method m);
CalibratedPredictor::Method method_from_name(const std::string& name);

CalibratedPredictor kandinsky_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                        const ScoreSpec& score, double alpha, uint64_t seed);
CalibratedPredictor split_calibrate(const Dataset& dataset, const ScoreSpec& score, double alpha,
                                    uint64_t seed, bool finite_sample_adjust = false);
CalibratedPredictor mondrian_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                       const ScoreSpec& score, double alpha, uint64_t seed,
                                       bool finite_sample_adjust = false);
CalibratedPredictor class_conditional_calibrate(const Dataset& dataset, const ScoreSpec& score,
                                                double alpha, uint64_t seed,
                                                bool finite_sample_adjust = false);
CalibratedPredictor conservative_calibrate(const Dataset& dataset, const GroupSpec& groups,
                                           const ScoreSpec& score, double alpha, uint64_t seed,
                                           bool finite_sample_adjust = false);

/// One noise draw per test point, shared across every candidate label.
double predict_eps(const CalibratedPredictor& pred, uint64_t row_id);

PredictionSet predict_classification(const CalibratedPredictor& pred,
                                     const std::vector<double>& x, const std::vector<double>& b,
                                     double eps);

/// Grid mask over the label grid; emits the exact analytic interval instead when
/// the basis is covariate-only and the score is CQR (the sublevel set in closed form).
PredictionSet predict_regression(const CalibratedPredictor& pred, const std::vector<double>& x,
                                 const std::vector<double>& b, double eps);

/// Grid representation unconditionally (cross-checks the analytic path).
PredictionSet predict_regression_grid(const CalibratedPredictor& pred,
                                      const std::vector<double>& x, const std::vector<double>& b,
                                      double eps);

PredictionSet predict(const CalibratedPredictor& pred, const std::vector<double>& x,
                      const std::vector<double>& b, double eps);

/// Membership of the true label without materializing the whole set.
bool covers(const CalibratedPredictor& pred, const std::vector<double>& x, double y,
            const std::vector<double>& b, double eps);

struct TesttimePlan {
  const Dataset* calibration = nullptr;  // may be empty
  BasisRecipe basis;                     // fitted recipe
  ScoreSpec score;
  double eta = 0.0;
  double alpha = 0.1;
  uint64_t seed = 0;
  Task task = Task::Classification;
  int n_classes = 0;
  std::vector<double> label_grid;             // regression candidates
  long long cost_budget = 100'000'000;        // |candidates| * (n+1) warning threshold
  std::function<void(const std::string&)> on_warning;
};

/// Test-time quantile regression: one augmented (n+1)-point fit per candidate
/// label, fresh calibration noise per invocation, one test draw shared across
/// candidates. Every per-candidate solution carries an optimality certificate.
PredictionSet testtime_qr_predict(const TesttimePlan& plan, const std::vector<double>& x,
                                  const std::vector<double>& b, uint64_t test_id);

}  // namespace kandinsky
