#pragma once
#include <vector>

#include "kandinsky/core.hpp"

namespace kandinsky {

/// Pinball loss l_alpha(theta, s): (1-alpha)(s-theta) if s >= theta, else alpha(theta-s).
double pinball_loss(double theta, double s, double alpha);

// |phi_i^T beta - s_i| <= kInterpTol * (1 + |s_i|) counts as interpolated.
inline constexpr double kInterpTol = 1e-8;

struct QrSolution {
  std::vector<double> beta;
  double objective = 0.0;                   // mean pinball loss at beta
  std::vector<int> interpolated_indices;    // rows fit exactly (within tolerance)
  std::vector<double> subgradient_residual; // per-coordinate optimality residual
  bool rank_deficient = false;
  int pivots = 0;
};

struct OptimalityCheck {
  std::vector<double> residual;  // residual_j = (1/n) sum_i phi_ij (alpha - 1{s_i > phi_i^T beta})
  int interpolated_count = 0;
  bool ok = false;
};

/// Subgradient optimality certificate: ok iff every |residual_j| is within the
/// slack contributed by interpolated rows, |residual_j| <= (1/n) sum_{i interp} |phi_ij| + tol.
OptimalityCheck check_optimality(const BasisMatrix& basis, const std::vector<double>& scores,
                                 double alpha, const std::vector<double>& beta);

/// Exact minimizer of (1/n) sum_i l_alpha(phi_i^T beta, s_i) over beta in R^d.
///
/// Solves the equivalent linear program with an active-set simplex whose vertices
/// are interpolation sets of <= d rows, using long (multi-breakpoint) steps.
/// Among optimal vertices, ties are resolved toward the solution selected by an
/// infinitesimally larger alpha; on a one-dimensional constant basis this returns
/// the ceil(n(1-alpha))-th order statistic of the scores, matching
/// empirical_quantile(scores, 1-alpha).
///
/// The objective is positively homogeneous in the scores, so the solve runs on
/// scores normalized to unit scale and the gating optimality certificate is
/// verified there; a SolverError means no certified optimum was reached. When
/// scores span many orders of magnitude, check_optimality on the raw inputs can
/// reject even a true optimum (the relative interpolation band at near-zero
/// scores drops below evaluation noise); certify such data on scores/max|s|.
QrSolution fit_linear_quantile(const BasisMatrix& basis, const std::vector<double>& scores,
                               double alpha);

}  // namespace kandinsky
