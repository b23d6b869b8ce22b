#pragma once
#include <optional>
#include <string>
#include <vector>

#include "kandinsky/core.hpp"

namespace kandinsky {

// Atomic predicate on a named dataset column: "x0".."x{p-1}", "y", "z", "b0"..
struct Condition {
  enum class Op { Ge, Gt, Le, Lt, Eq, In };

  std::string col;
  Op op = Op::Ge;
  double value = 0.0;
  std::vector<double> values;  // for In

  bool references_y() const { return col == "y"; }
  bool references_z() const { return col == "z"; }
  bool matches(const std::vector<double>& x, double y, const std::vector<double>& b,
               std::optional<int> z) const;
};

// Conjunction of conditions; an empty list matches everything.
struct GroupDef {
  std::string name;
  std::vector<Condition> all;

  bool references_y() const;
  bool references_z() const;
  bool matches(const std::vector<double>& x, double y, const std::vector<double>& b,
               std::optional<int> z) const;
};

struct ZGroup {
  std::string name;
  std::vector<int> values;
  bool contains(int z) const;
};

struct EstimatorSpec {
  enum class Kind { Histogram, Logistic };
  Kind kind = Kind::Histogram;
  int bins = 8;
  double learning_rate = 0.5;
  int iterations = 500;
  uint64_t seed = 0;
  void validate() const;
};

struct GroupSpec {
  enum class Kind { Indicator, ClassConditional, Mondrian, Fractional, Raw };
  enum class Statistic { XY, FY };

  Kind kind = Kind::Indicator;
  // resolved default: on for indicator/fractional/raw, off for partitions
  std::optional<bool> include_intercept;
  std::vector<GroupDef> groups;    // indicator / mondrian
  std::vector<ZGroup> z_groups;    // fractional
  Statistic statistic = Statistic::XY;
  EstimatorSpec estimator;
  bool fit_on_separate_split = false;
  std::vector<std::string> raw_columns;

  bool intercept_resolved() const;
};

struct HistogramModel {
  int dim = 0;
  int bins = 1;
  std::vector<double> lo, width;              // per phi coordinate
  std::vector<std::vector<double>> cell_rate; // per group, flattened cells
  std::vector<std::vector<int>> cell_count;
  std::vector<double> fallback;               // global group rates

  int cell_of(const std::vector<double>& phi) const;
};

struct LogisticModel {
  int dim = 0;
  std::vector<double> mean, sd;               // feature standardization
  std::vector<std::vector<double>> weights;   // per group, dim+1 with intercept last
};

// Maps the statistic phi(x,y) to estimated membership probabilities per z-group.
struct FractionalEstimator {
  EstimatorSpec::Kind kind = EstimatorSpec::Kind::Histogram;
  GroupSpec::Statistic statistic = GroupSpec::Statistic::XY;
  std::vector<std::string> group_names;
  HistogramModel hist;
  LogisticModel logit;

  std::vector<double> phi_of(const std::vector<double>& x, double y,
                             const std::vector<double>& b) const;
  // probabilities per surviving group, clipped to [0,1]
  std::vector<double> eval(const std::vector<double>& x, double y,
                           const std::vector<double>& b) const;
};

FractionalEstimator fit_fractional_basis(const Dataset& dataset,
                                         const std::vector<ZGroup>& z_groups,
                                         GroupSpec::Statistic statistic,
                                         const EstimatorSpec& est,
                                         std::vector<std::string>* warnings = nullptr);

// Serializable recipe that evaluates Phi(x,y) identically at fit and test time.
struct BasisRecipe {
  GroupSpec spec;
  int n_classes = 0;
  int x_dim = 0;
  int b_arity = 0;
  std::optional<FractionalEstimator> fractional;
  std::vector<std::string> column_names;
  std::vector<std::string> warnings;

  int dim() const { return static_cast<int>(column_names.size()); }
  bool depends_on_y() const;
  std::vector<double> eval(const std::vector<double>& x, double y,
                           const std::vector<double>& b) const;
};

/// Fits the basis recipe on the calibration dataset (checks Mondrian partitions,
/// trains fractional estimators) so that test-time evaluation is a pure lookup.
BasisRecipe fit_basis(const GroupSpec& spec, const Dataset& dataset);

/// Row-per-example basis matrix via the recipe; validates BasisMatrix invariants.
BasisMatrix build_matrix(const BasisRecipe& recipe, const Dataset& dataset);

}  // namespace kandinsky
