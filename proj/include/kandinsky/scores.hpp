#pragma once
#include <string>
#include <vector>

#include "kandinsky/core.hpp"

namespace kandinsky {

// Non-conformity scores. The randomized variants consume one noise value
// eps in [0,1]; deterministic scores ignore it.
struct ScoreSpec {
  enum class Kind { AbsResidual, Cqr, Aps };

  Kind kind = Kind::AbsResidual;
  bool jittered = false;  // wrap a deterministic score with centered noise
  double eta = 0.0;       // jitter width; 0 means resolve from the score scale

  Task task() const { return kind == Kind::Aps ? Task::Classification : Task::Regression; }
  bool rng_required() const { return jittered || kind == Kind::Aps; }
  int arity(int n_classes) const {
    switch (kind) {
      case Kind::AbsResidual: return 1;
      case Kind::Cqr: return 2;
      case Kind::Aps: return n_classes;
    }
    return 0;
  }
  void validate() const;
};

/// |y - f(x)| for a single point prediction.
double abs_residual(const std::vector<double>& base_outputs, double y);

/// CQR score max(y - f_hi, f_lo - y); negative strictly inside the band.
double cqr_score(const std::vector<double>& base_outputs, double y);

/// Randomized APS score: prefix of the descending-sorted probabilities up to the
/// label's rank plus eps times the label's own probability. Sort ties break by
/// ascending class index, so the value is a deterministic function of inputs.
double aps_score(const std::vector<double>& probs, int label, double eps);

/// Centered jitter: inner + eta * (eps - 0.5); strictly monotone in eps.
double jittered(double inner_score, double eps, double eta);

/// Evaluate a score spec on one example; eta must already be resolved.
double score_value(const ScoreSpec& spec, double eta, const std::vector<double>& base_outputs,
                   double y, double eps);

/// Jitter width when spec.eta == 0: 1e-6 times the raw score scale of the data.
double resolve_eta(const ScoreSpec& spec, const Dataset& dataset);

}  // namespace kandinsky
