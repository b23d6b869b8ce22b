#include "kandinsky/scores.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kandinsky {

void ScoreSpec::validate() const {
  if (jittered && kind == Kind::Aps)
    throw ValidationError("aps is already randomized; jitter applies to deterministic scores");
  if (eta < 0.0) throw ValidationError("jitter width eta must be nonnegative");
}

double abs_residual(const std::vector<double>& base_outputs, double y) {
  if (base_outputs.size() != 1)
    throw ValidationError("abs_residual expects base_outputs of length 1");
  return std::abs(y - base_outputs[0]);
}

double cqr_score(const std::vector<double>& base_outputs, double y) {
  if (base_outputs.size() != 2)
    throw ValidationError("cqr_score expects base_outputs of length 2 (lower, upper)");
  return std::max(y - base_outputs[1], base_outputs[0] - y);
}

double aps_score(const std::vector<double>& probs, int label, double eps) {
  const int k = static_cast<int>(probs.size());
  if (label < 0 || label >= k) throw ValidationError("aps_score: label out of range");
  if (!(eps >= 0.0 && eps <= 1.0)) throw ValidationError("aps_score: eps outside [0,1]");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ValidationError("aps_score: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ValidationError("aps_score: probabilities sum to " + std::to_string(total));

  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  double prefix = 0.0;
  for (int idx : order) {
    if (idx == label) break;
    prefix += probs[idx];
  }
  return prefix + eps * probs[label];
}

double jittered(double inner_score, double eps, double eta) {
  if (!(eta > 0.0)) throw ValidationError("jittered: eta must be positive");
  return inner_score + eta * (eps - 0.5);
}

double score_value(const ScoreSpec& spec, double eta, const std::vector<double>& base_outputs,
                   double y, double eps) {
  switch (spec.kind) {
    case ScoreSpec::Kind::AbsResidual: {
      double s = abs_residual(base_outputs, y);
      return spec.jittered ? jittered(s, eps, eta) : s;
    }
    case ScoreSpec::Kind::Cqr: {
      double s = cqr_score(base_outputs, y);
      return spec.jittered ? jittered(s, eps, eta) : s;
    }
    case ScoreSpec::Kind::Aps:
      return aps_score(base_outputs, static_cast<int>(std::llround(y)), eps);
  }
  throw ValidationError("score_value: unknown score kind");
}

double resolve_eta(const ScoreSpec& spec, const Dataset& dataset) {
  if (!spec.jittered) return 0.0;
  if (spec.eta > 0.0) return spec.eta;
  double scale = 1.0;
  for (const auto& e : dataset.examples) {
    double raw = spec.kind == ScoreSpec::Kind::AbsResidual ? abs_residual(e.base_outputs, e.y)
                                                           : cqr_score(e.base_outputs, e.y);
    scale = std::max(scale, std::abs(raw));
  }
  return 1e-6 * scale;
}

}  // namespace kandinsky
