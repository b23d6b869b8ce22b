#include "kandinsky/core.hpp"

#include <algorithm>
#include <cmath>

namespace kandinsky {

bool Dataset::has_z() const {
  if (examples.empty()) return false;
  for (const auto& e : examples)
    if (!e.z.has_value()) return false;
  return true;
}

void validate_dataset(const Dataset& dataset, int score_arity) {
  if (dataset.examples.empty()) throw ValidationError("dataset is empty");
  const int p = dataset.x_dim();
  const int m = dataset.base_arity();
  if (dataset.task == Task::Classification && dataset.n_classes <= 0)
    throw ValidationError("classification dataset must declare a positive label cardinality");
  for (size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& e = dataset.examples[i];
    if (static_cast<int>(e.x.size()) != p)
      throw ValidationError("example " + std::to_string(i) + ": covariate dimension " +
                            std::to_string(e.x.size()) + " != " + std::to_string(p));
    if (static_cast<int>(e.base_outputs.size()) != m)
      throw ValidationError("example " + std::to_string(i) + ": base_outputs arity " +
                            std::to_string(e.base_outputs.size()) + " != " + std::to_string(m));
    for (double v : e.x)
      if (!std::isfinite(v))
        throw ValidationError("example " + std::to_string(i) + ": non-finite covariate");
    for (double v : e.base_outputs)
      if (!std::isfinite(v))
        throw ValidationError("example " + std::to_string(i) + ": non-finite base output");
    if (!std::isfinite(e.y))
      throw ValidationError("example " + std::to_string(i) + ": non-finite label");
    if (dataset.task == Task::Classification) {
      double r = std::round(e.y);
      if (std::abs(e.y - r) > 0 || r < 0 || r >= dataset.n_classes)
        throw ValidationError("example " + std::to_string(i) + ": label " + std::to_string(e.y) +
                              " outside [0, " + std::to_string(dataset.n_classes) + ")");
    }
  }
  if (m != score_arity)
    throw ValidationError("base_outputs arity " + std::to_string(m) +
                          " does not match score arity " + std::to_string(score_arity));
  if (!dataset.label_grid.empty()) {
    for (size_t i = 1; i < dataset.label_grid.size(); ++i)
      if (!(dataset.label_grid[i] > dataset.label_grid[i - 1]))
        throw ValidationError("label_grid must be strictly increasing");
  }
}

double empirical_quantile(const std::vector<double>& values, double tau) {
  if (values.empty()) throw ValidationError("empirical_quantile: empty input");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("empirical_quantile: tau outside [0,1]");
  const size_t n = values.size();
  size_t k = 1;
  if (tau > 0.0) {
    // ceil(tau*n), nudged so that an exact integer product computed in floating
    // point (e.g. 0.9*10) does not round up to the next order statistic
    double t = tau * static_cast<double>(n);
    double kk = std::ceil(t - 1e-9 * std::max(1.0, t));
    k = static_cast<size_t>(std::max(1.0, std::min(kk, static_cast<double>(n))));
  }
  std::vector<double> tmp(values);
  std::nth_element(tmp.begin(), tmp.begin() + (k - 1), tmp.end());
  return tmp[k - 1];
}

std::vector<double> make_label_grid(double lo, double hi, int bins) {
  if (bins < 1) throw ValidationError("grid bins must be >= 1");
  if (!(hi >= lo)) throw ValidationError("grid range is empty");
  if (hi == lo) hi = lo + 1.0;  // degenerate label range, give the grid some width
  std::vector<double> mids(bins);
  double w = (hi - lo) / bins;
  for (int i = 0; i < bins; ++i) mids[i] = lo + (i + 0.5) * w;
  return mids;
}

std::vector<double> default_label_grid(const Dataset& dataset, int bins) {
  if (dataset.examples.empty()) throw ValidationError("cannot build grid from empty dataset");
  double lo = dataset.examples[0].y, hi = lo;
  for (const auto& e : dataset.examples) {
    lo = std::min(lo, e.y);
    hi = std::max(hi, e.y);
  }
  return make_label_grid(lo, hi, bins);
}

void BasisMatrix::validate() const {
  if (rows <= 0 || cols <= 0) throw ValidationError("basis matrix must be nonempty");
  if (values.size() != static_cast<size_t>(rows) * cols)
    throw ValidationError("basis matrix storage size mismatch");
  std::vector<bool> nonzero(cols, false);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double v = at(i, j);
      if (!std::isfinite(v))
        throw ValidationError("basis entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is not finite");
      if (kind == Kind::Indicator && v != 0.0 && v != 1.0)
        throw ValidationError("indicator basis entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") not in {0,1}");
      if (kind == Kind::Fractional && (v < 0.0 || v > 1.0))
        throw ValidationError("fractional basis entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") not in [0,1]");
      if (v != 0.0) nonzero[j] = true;
    }
  }
  for (int j = 0; j < cols; ++j)
    if (!nonzero[j]) {
      std::string name = j < static_cast<int>(column_names.size()) ? column_names[j]
                                                                   : std::to_string(j);
      throw ValidationError("basis column '" + name + "' is identically zero");
    }
}

}  // namespace kandinsky
