#pragma once
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kandinsky {

// Error taxonomy mirrors the CLI exit codes: parse/IO = 1, validation = 2, solver = 3.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Task { Regression, Classification };

struct LabeledExample {
  std::vector<double> x;
  double y = 0.0;                   // class index for classification tasks
  std::optional<int> z;             // latent group tag, evaluation / fractional fitting only
  std::vector<double> base_outputs; // attached base-predictor outputs
};

struct Dataset {
  std::vector<LabeledExample> examples;
  Task task = Task::Regression;
  int n_classes = 0;               // classification only
  std::vector<double> label_grid;  // regression prediction-set grid; may be empty

  int size() const { return static_cast<int>(examples.size()); }
  int x_dim() const { return examples.empty() ? 0 : static_cast<int>(examples[0].x.size()); }
  int base_arity() const {
    return examples.empty() ? 0 : static_cast<int>(examples[0].base_outputs.size());
  }
  bool has_z() const;
};

/// Validates dataset invariants; throws ValidationError naming the first offending example.
void validate_dataset(const Dataset& dataset, int score_arity);

/// tau-quantile of the empirical distribution: inf{x : #{v <= x}/n >= tau},
/// i.e. the ceil(tau*n)-th order statistic (the minimum at tau = 0).
double empirical_quantile(const std::vector<double>& values, double tau);

/// 100 evenly spaced bins over [lo, hi]; returns the bin midpoints.
std::vector<double> make_label_grid(double lo, double hi, int bins = 100);

/// Default regression grid from calibration labels (100 bins over the label range).
std::vector<double> default_label_grid(const Dataset& dataset, int bins = 100);

struct BasisMatrix {
  enum class Kind { Indicator, Fractional, Raw };

  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major, rows x cols
  std::vector<std::string> column_names;
  Kind kind = Kind::Indicator;

  double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
  const double* row(int i) const { return values.data() + static_cast<size_t>(i) * cols; }

  // entries finite; indicator in {0,1}; fractional in [0,1]; no all-zero column
  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
};

// Exactly one representation is populated, matching the task and basis.
struct PredictionSet {
  std::optional<std::vector<std::uint8_t>> label_mask;  // classification, length K
  std::optional<std::vector<Interval>> intervals;       // regression, disjoint and sorted
  std::optional<std::vector<std::uint8_t>> grid_mask;   // regression, aligned to label_grid
};

}  // namespace kandinsky
