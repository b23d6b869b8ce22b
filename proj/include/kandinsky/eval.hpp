#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kandinsky/core.hpp"
#include "kandinsky/groups.hpp"
#include "kandinsky/methods.hpp"

namespace kandinsky {

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct GroupStat {
  std::string name;
  double miscoverage = 0.0;  // M(G,C)
  int count = 0;             // test members
  bool observed = false;     // false: empty intersection, reported n/a
};

/// Per-group empirical miscoverage from coverage flags and membership columns.
std::vector<GroupStat> miscoverage(const std::vector<std::uint8_t>& covered,
                                   const std::vector<std::vector<std::uint8_t>>& membership,
                                   const std::vector<std::string>& names);

/// CD(C) = mean |M(G,C) - alpha| over groups with at least min_group_count members.
double coverage_deviation(const std::vector<GroupStat>& per_group, double alpha,
                          int min_group_count = 1);

double minmax_gap(const std::vector<GroupStat>& per_group, int min_group_count = 1);

/// Classification: included label count. Grid: midpoint count times bin width.
/// Intervals: total length.
double set_size(const PredictionSet& set, const std::vector<double>& grid, int n_classes);

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

double normal_quantile(double p);  // inverse standard normal CDF

struct SynthConfig {
  enum class Structure { Overlapping, Mondrian, Fractional };

  int n_calib = 1000;
  int n_test = 1000;
  int p = 2;  // covariate dimension
  Structure structure = Structure::Overlapping;
  int k = 2;                       // group count / cells / latent bits
  std::vector<double> sigma_mult;  // group noise multipliers; default {4,1,1,...}
  double sigma_base = 1.0;
  double frac_flip = 0.2;  // fractional structure: latent bit flip probability
  Task task = Task::Regression;
  int n_classes = 0;
  ScoreSpec::Kind base_for = ScoreSpec::Kind::AbsResidual;  // which base outputs to attach
  bool linear_fit = false;  // fit the base model on a held-out split instead of the oracle
  double oracle_alpha = 0.1;
  uint64_t seed = 1;

  void validate() const;
  double sigma_of(const std::vector<double>& x) const;
};

struct SynthData {
  Dataset calibration;
  Dataset test;
};

SynthData synth_generate(const SynthConfig& cfg);

/// Basis group spec matching the generator's structure.
GroupSpec synth_group_spec(const SynthConfig& cfg);

// Reporting groups: either predicates over (x, y, z is allowed here) or z-value sets.
struct EvalGroups {
  std::vector<GroupDef> defs;
  std::vector<ZGroup> z_groups;

  bool empty() const { return defs.empty() && z_groups.empty(); }
  std::vector<std::string> names() const;
  std::vector<std::vector<std::uint8_t>> membership(const Dataset& test) const;
};

/// Evaluation groups matching the generator (z-groups for the fractional structure).
EvalGroups synth_eval_groups(const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// distribution shift
// ---------------------------------------------------------------------------

struct TiltSpec {
  enum class Kind { Identity, Group };
  Kind kind = Kind::Identity;
  GroupDef group;       // unnormalized indicator weight for Kind::Group
  double bound = 2.0;   // rejection envelope B for the self-normalized weight
};

struct ShiftResult {
  double coverage_shifted = 0.0;
  double coverage_unshifted = 0.0;
  int n_shifted = 0;
  int n_unshifted = 0;
  double mc_se = 0.0;  // combined Monte-Carlo standard error of the difference
};

/// Draws test points from the tilted distribution by rejection sampling with
/// envelope B and evaluates marginal coverage of the predictor under the shift.
/// Throws when an observed weight exceeds the envelope.
ShiftResult shift_harness(const CalibratedPredictor& pred, const SynthConfig& cfg,
                          const TiltSpec& tilt, int n_test, uint64_t seed);

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct MethodSpec {
  std::string name;  // kandinsky | split | mondrian | class_conditional | conservative | testtime
  GroupSpec groups;
  bool finite_sample_adjust = false;
};

struct ExperimentConfig {
  std::optional<SynthConfig> synth;
  Dataset csv_calibration;  // CSV mode: pools reshuffled per trial
  Dataset csv_test;
  bool from_csv = false;

  std::vector<MethodSpec> methods;
  ScoreSpec score;
  double alpha = 0.1;
  int trials = 1;
  uint64_t seed = 1;
  int jobs = 1;
  EvalGroups report_groups;  // empty: use synth defaults
  int min_group_count = 1;
  bool compute_sizes = true;
  int grid_bins = 100;
};

struct TrialRecord {
  std::vector<GroupStat> per_group;
  double cd = 0.0;
  double gap = 0.0;
  double mean_size = 0.0;
};

struct MethodReport {
  std::string method;
  std::vector<std::string> group_names;
  std::vector<double> group_mean, group_std, group_min, group_max, group_count_mean;
  std::vector<double> group_mc_band;  // 2 sqrt(alpha(1-alpha)/mean count)
  double cd_mean = 0.0, cd_std = 0.0;
  double gap_mean = 0.0;
  double size_mean = 0.0, size_std = 0.0;
  FitDiagnostics diagnostics;  // from the first trial's fit
  std::vector<TrialRecord> trials;
};

struct CoverageReport {
  double alpha = 0.0;
  int trials = 0;
  uint64_t seed = 0;
  int n_test = 0;
  double mc_band_marginal = 0.0;
  std::vector<MethodReport> methods;
};

/// Multi-trial protocol: per-trial reshuffle (or regeneration), per-method
/// calibrate/predict/evaluate, aggregation. Deterministic given the master
/// seed, independent of the job count.
CoverageReport run_experiment(const ExperimentConfig& cfg);

}  // namespace kandinsky
