#include "kandinsky/eval.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "kandinsky/rng.hpp"
#include "kandinsky/scores.hpp"

namespace kandinsky {

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::vector<GroupStat> miscoverage(const std::vector<std::uint8_t>& covered,
                                   const std::vector<std::vector<std::uint8_t>>& membership,
                                   const std::vector<std::string>& names) {
  if (membership.size() != names.size())
    throw ValidationError("miscoverage: group name count does not match membership columns");
  std::vector<GroupStat> out;
  for (size_t g = 0; g < membership.size(); ++g) {
    if (membership[g].size() != covered.size())
      throw ValidationError("miscoverage: membership column length mismatch");
    GroupStat st;
    st.name = names[g];
    int misses = 0;
    for (size_t i = 0; i < covered.size(); ++i) {
      if (!membership[g][i]) continue;
      ++st.count;
      misses += covered[i] ? 0 : 1;
    }
    st.observed = st.count > 0;
    st.miscoverage = st.observed ? static_cast<double>(misses) / st.count : 0.0;
    out.push_back(st);
  }
  return out;
}

double coverage_deviation(const std::vector<GroupStat>& per_group, double alpha,
                          int min_group_count) {
  double acc = 0.0;
  int used = 0;
  for (const auto& g : per_group) {
    if (!g.observed || g.count < min_group_count) continue;
    acc += std::abs(g.miscoverage - alpha);
    ++used;
  }
  if (used == 0) throw ValidationError("coverage_deviation: every group is empty");
  return acc / used;
}

double minmax_gap(const std::vector<GroupStat>& per_group, int min_group_count) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& g : per_group) {
    if (!g.observed || g.count < min_group_count) continue;
    if (first) {
      lo = hi = g.miscoverage;
      first = false;
    } else {
      lo = std::min(lo, g.miscoverage);
      hi = std::max(hi, g.miscoverage);
    }
  }
  if (first) throw ValidationError("minmax_gap: every group is empty");
  return hi - lo;
}

double set_size(const PredictionSet& set, const std::vector<double>& grid, int n_classes) {
  if (set.label_mask) {
    if (static_cast<int>(set.label_mask->size()) != n_classes)
      throw ValidationError("set_size: label mask length does not match the class count");
    return static_cast<double>(std::count(set.label_mask->begin(), set.label_mask->end(), 1));
  }
  if (set.grid_mask) {
    if (grid.size() != set.grid_mask->size() || grid.size() < 2)
      throw ValidationError("set_size: grid mask needs a matching grid");
    double width = grid[1] - grid[0];
    return width * std::count(set.grid_mask->begin(), set.grid_mask->end(), 1);
  }
  if (set.intervals) {
    double acc = 0.0;
    for (const auto& iv : *set.intervals) acc += iv.length();
    return acc;
  }
  throw ValidationError("set_size: empty prediction set representation");
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

double normal_quantile(double p) {
  // Acklam's rational approximation, |relative error| < 1.2e-9
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

void SynthConfig::validate() const {
  if (n_calib < 1 || n_test < 1) throw ValidationError("synth sizes must be >= 1");
  if (p < 1) throw ValidationError("synth covariate dimension must be >= 1");
  if (k < 1) throw ValidationError("synth group count must be >= 1");
  if (!(sigma_base > 0.0)) throw ValidationError("synth noise scale must be positive");
  for (double m : sigma_mult)
    if (!(m > 0.0)) throw ValidationError("synth noise multipliers must be positive");
  if (structure == Structure::Overlapping && p < k)
    throw ValidationError("overlapping structure needs p >= k sign covariates");
  if (structure == Structure::Fractional && k > 6)
    throw ValidationError("fractional structure supports at most 6 latent bits");
  if (!(frac_flip >= 0.0 && frac_flip < 0.5))
    throw ValidationError("fractional flip probability must lie in [0, 0.5)");
  if (task == Task::Classification) {
    if (n_classes < 2) throw ValidationError("classification synth needs n_classes >= 2");
    if (base_for != ScoreSpec::Kind::Aps)
      throw ValidationError("classification synth attaches class probabilities (aps)");
    if (linear_fit) throw ValidationError("classification synth supports the oracle model only");
  } else if (base_for == ScoreSpec::Kind::Aps) {
    throw ValidationError("aps base outputs need a classification synth");
  }
  if (!(oracle_alpha > 0.0 && oracle_alpha < 1.0))
    throw ValidationError("oracle band level outside (0,1)");
}

namespace {

double mult_at(const SynthConfig& cfg, int j) {
  if (j < static_cast<int>(cfg.sigma_mult.size())) return cfg.sigma_mult[j];
  return j == 0 ? 4.0 : 1.0;  // default contrast: group 0 carries the noise
}

std::vector<double> synth_theta(int p) {
  return std::vector<double>(p, 1.0 / std::sqrt(static_cast<double>(p)));
}

int mondrian_cell(const SynthConfig& cfg, double x0) {
  int cell = 0;
  for (int j = 1; j < cfg.k; ++j)
    if (x0 >= normal_quantile(static_cast<double>(j) / cfg.k)) cell = j;
  return cell;
}

// fixed deterministic logit pattern for the classification generator
double class_weight(int c, int j) {
  static const double pattern[] = {-1.4, -0.9, -0.4, -0.1, 0.2, 0.6, 1.0, 1.5};
  return 0.9 * pattern[(3 * c + 5 * j) % 8];
}

}  // namespace

double SynthConfig::sigma_of(const std::vector<double>& x) const {
  double s = sigma_base;
  switch (structure) {
    case Structure::Overlapping:
      for (int j = 0; j < k; ++j)
        if (x[j] >= 0.0) s *= mult_at(*this, j);
      break;
    case Structure::Mondrian:
      s *= mult_at(*this, mondrian_cell(*this, x[0]));
      break;
    case Structure::Fractional: {
      auto th = synth_theta(p);
      double f = 0.0;
      for (int j = 0; j < p; ++j) f += th[j] * x[j];
      if (f >= 0.0) s *= mult_at(*this, 0) == 4.0 ? 2.0 : mult_at(*this, 0);
      break;
    }
  }
  return s;
}

namespace {

// least squares with intercept; returns p+1 coefficients (intercept last)
std::vector<double> least_squares(const std::vector<std::vector<double>>& xs,
                                  const std::vector<double>& ys) {
  const int n = static_cast<int>(xs.size());
  const int p = static_cast<int>(xs[0].size());
  const int q = p + 1;
  std::vector<double> a(static_cast<size_t>(q) * q, 0.0), b(q, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(xs[i]);
    row.push_back(1.0);
    for (int r = 0; r < q; ++r) {
      b[r] += row[r] * ys[i];
      for (int c = 0; c < q; ++c) a[static_cast<size_t>(r) * q + c] += row[r] * row[c];
    }
  }
  // plain Gaussian elimination; the Gram matrix is well conditioned here
  for (int c = 0; c < q; ++c) {
    int best = c;
    for (int r = c + 1; r < q; ++r)
      if (std::abs(a[static_cast<size_t>(r) * q + c]) >
          std::abs(a[static_cast<size_t>(best) * q + c]))
        best = r;
    for (int j = 0; j < q; ++j)
      std::swap(a[static_cast<size_t>(best) * q + j], a[static_cast<size_t>(c) * q + j]);
    std::swap(b[best], b[c]);
    double pivot = a[static_cast<size_t>(c) * q + c];
    if (std::abs(pivot) < 1e-12) throw SolverError("least_squares: singular design");
    for (int r = c + 1; r < q; ++r) {
      double f = a[static_cast<size_t>(r) * q + c] / pivot;
      for (int j = c; j < q; ++j)
        a[static_cast<size_t>(r) * q + j] -= f * a[static_cast<size_t>(c) * q + j];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> w(q, 0.0);
  for (int c = q - 1; c >= 0; --c) {
    double v = b[c];
    for (int j = c + 1; j < q; ++j) v -= a[static_cast<size_t>(c) * q + j] * w[j];
    w[c] = v / a[static_cast<size_t>(c) * q + c];
  }
  return w;
}

class Sampler {
 public:
  Sampler(const SynthConfig& cfg, uint64_t substream)
      : cfg_(cfg), gen_(rng::derive(cfg.seed, rng::kSynth, substream)), theta_(synth_theta(cfg.p)) {
    if (cfg_.linear_fit) fit_base_model();
  }

  LabeledExample draw() {
    LabeledExample e;
    e.x.resize(cfg_.p);
    for (auto& v : e.x) v = gen_.normal();
    if (cfg_.task == Task::Classification) {
      draw_classification(e);
    } else {
      draw_regression(e);
    }
    return e;
  }

 private:
  void draw_regression(LabeledExample& e) {
    double f = 0.0;
    for (int j = 0; j < cfg_.p; ++j) f += theta_[j] * e.x[j];
    double sigma = cfg_.sigma_of(e.x);
    e.y = f + sigma * gen_.normal();

    if (cfg_.structure == SynthConfig::Structure::Fractional) {
      int z = 0;
      for (int bit = 0; bit < cfg_.k; ++bit) {
        double flip = std::min(0.45, cfg_.frac_flip + 0.12 * bit);
        bool base = f >= 0.0;
        bool flipped = gen_.unit() < flip;
        if (base != flipped) z |= 1 << bit;
      }
      e.z = z;
    }

    double mu = f, lo_off, hi_off;
    if (cfg_.linear_fit) {
      mu = base_w_[cfg_.p];
      for (int j = 0; j < cfg_.p; ++j) mu += base_w_[j] * e.x[j];
      lo_off = hi_off = band_;
    } else {
      double zq = normal_quantile(1.0 - cfg_.oracle_alpha / 2.0);
      lo_off = hi_off = zq * cfg_.sigma_of(e.x);
    }
    if (cfg_.base_for == ScoreSpec::Kind::AbsResidual)
      e.base_outputs = {mu};
    else
      e.base_outputs = {mu - lo_off, mu + hi_off};
  }

  void draw_classification(LabeledExample& e) {
    const int K = cfg_.n_classes;
    std::vector<double> logits(K, 0.0);
    for (int c = 0; c < K; ++c)
      for (int j = 0; j < cfg_.p; ++j) logits[c] += class_weight(c, j) * e.x[j];
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(K);
    double zsum = 0.0;
    for (int c = 0; c < K; ++c) zsum += probs[c] = std::exp(logits[c] - mx);
    for (int c = 0; c < K; ++c) probs[c] /= zsum;
    double u = gen_.unit(), acc = 0.0;
    int label = K - 1;
    for (int c = 0; c < K; ++c) {
      acc += probs[c];
      if (u < acc) {
        label = c;
        break;
      }
    }
    e.y = label;
    e.base_outputs = probs;
  }

  void fit_base_model() {
    const int m = 1024;
    std::vector<std::vector<double>> xs(m);
    std::vector<double> ys(m);
    for (int i = 0; i < m; ++i) {
      std::vector<double> x(cfg_.p);
      for (auto& v : x) v = gen_.normal();
      double f = 0.0;
      for (int j = 0; j < cfg_.p; ++j) f += theta_[j] * x[j];
      ys[i] = f + cfg_.sigma_of(x) * gen_.normal();
      xs[i] = std::move(x);
    }
    base_w_ = least_squares(xs, ys);
    std::vector<double> absres(m);
    for (int i = 0; i < m; ++i) {
      double mu = base_w_[cfg_.p];
      for (int j = 0; j < cfg_.p; ++j) mu += base_w_[j] * xs[i][j];
      absres[i] = std::abs(ys[i] - mu);
    }
    band_ = empirical_quantile(absres, 1.0 - cfg_.oracle_alpha);
  }

  const SynthConfig& cfg_;
  rng::Stream gen_;
  std::vector<double> theta_;
  std::vector<double> base_w_;
  double band_ = 1.0;
};

Dataset draw_dataset(const SynthConfig& cfg, int n, uint64_t substream) {
  Dataset d;
  d.task = cfg.task;
  d.n_classes = cfg.n_classes;
  Sampler sampler(cfg, substream);
  d.examples.reserve(n);
  for (int i = 0; i < n; ++i) d.examples.push_back(sampler.draw());
  return d;
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData out;
  out.calibration = draw_dataset(cfg, cfg.n_calib, 1);
  out.test = draw_dataset(cfg, cfg.n_test, 2);
  return out;
}

GroupSpec synth_group_spec(const SynthConfig& cfg) {
  GroupSpec spec;
  switch (cfg.structure) {
    case SynthConfig::Structure::Overlapping:
      spec.kind = GroupSpec::Kind::Indicator;
      spec.include_intercept = true;
      for (int j = 0; j < cfg.k; ++j)
        spec.groups.push_back(
            {"g" + std::to_string(j), {{"x" + std::to_string(j), Condition::Op::Ge, 0.0, {}}}});
      break;
    case SynthConfig::Structure::Mondrian: {
      spec.kind = GroupSpec::Kind::Mondrian;
      spec.include_intercept = false;
      for (int j = 0; j < cfg.k; ++j) {
        GroupDef g;
        g.name = "cell" + std::to_string(j);
        if (j > 0)
          g.all.push_back({"x0", Condition::Op::Ge,
                           normal_quantile(static_cast<double>(j) / cfg.k), {}});
        if (j + 1 < cfg.k)
          g.all.push_back({"x0", Condition::Op::Lt,
                           normal_quantile(static_cast<double>(j + 1) / cfg.k), {}});
        spec.groups.push_back(g);
      }
      break;
    }
    case SynthConfig::Structure::Fractional: {
      spec.kind = GroupSpec::Kind::Fractional;
      spec.include_intercept = true;
      spec.statistic = GroupSpec::Statistic::FY;
      for (int bit = 0; bit < cfg.k; ++bit) {
        ZGroup g;
        g.name = "zbit" + std::to_string(bit);
        for (int z = 0; z < (1 << cfg.k); ++z)
          if (z & (1 << bit)) g.values.push_back(z);
        spec.z_groups.push_back(g);
      }
      spec.estimator.kind = EstimatorSpec::Kind::Histogram;
      spec.estimator.bins = 16;
      break;
    }
  }
  return spec;
}

std::vector<std::string> EvalGroups::names() const {
  std::vector<std::string> out;
  for (const auto& g : defs) out.push_back(g.name);
  for (const auto& g : z_groups) out.push_back(g.name);
  return out;
}

std::vector<std::vector<std::uint8_t>> EvalGroups::membership(const Dataset& test) const {
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& g : defs) {
    std::vector<std::uint8_t> col(test.size(), 0);
    for (int i = 0; i < test.size(); ++i) {
      const auto& e = test.examples[i];
      col[i] = g.matches(e.x, e.y, e.base_outputs, e.z) ? 1 : 0;
    }
    out.push_back(std::move(col));
  }
  for (const auto& g : z_groups) {
    std::vector<std::uint8_t> col(test.size(), 0);
    for (int i = 0; i < test.size(); ++i) {
      const auto& e = test.examples[i];
      if (!e.z.has_value())
        throw ValidationError("evaluation z-group '" + g.name + "' needs z tags on the test set");
      col[i] = g.contains(*e.z) ? 1 : 0;
    }
    out.push_back(std::move(col));
  }
  return out;
}

EvalGroups synth_eval_groups(const SynthConfig& cfg) {
  EvalGroups out;
  if (cfg.structure == SynthConfig::Structure::Fractional) {
    out.z_groups = synth_group_spec(cfg).z_groups;
  } else {
    out.defs = synth_group_spec(cfg).groups;
  }
  return out;
}

// ---------------------------------------------------------------------------
// distribution shift
// ---------------------------------------------------------------------------

ShiftResult shift_harness(const CalibratedPredictor& pred, const SynthConfig& cfg,
                          const TiltSpec& tilt, int n_test, uint64_t seed) {
  cfg.validate();
  if (!(tilt.bound >= 1.0)) throw ValidationError("shift envelope must be >= 1");
  if (n_test < 1) throw ValidationError("shift harness needs n_test >= 1");

  auto weight = [&](const LabeledExample& e) -> double {
    if (tilt.kind == TiltSpec::Kind::Identity) return 1.0;
    return tilt.group.matches(e.x, e.y, e.base_outputs, e.z) ? 1.0 : 0.0;
  };

  ShiftResult res;

  // unshifted control on the same candidate stream
  {
    Sampler sampler(cfg, rng::derive(seed, rng::kShift, 0));
    int cov = 0;
    for (int i = 0; i < n_test; ++i) {
      auto e = sampler.draw();
      cov += covers(pred, e.x, e.y, e.base_outputs, predict_eps(pred, i)) ? 1 : 0;
    }
    res.coverage_unshifted = static_cast<double>(cov) / n_test;
    res.n_unshifted = n_test;
  }

  // rejection sampling against the envelope, self-normalizing the tilt
  {
    Sampler sampler(cfg, rng::derive(seed, rng::kShift, 0));
    rng::Stream accept(rng::derive(seed, rng::kShift, 1));
    int cov = 0, got = 0;
    long long attempts = 0;
    const long long cap = std::max<long long>(10'000'000, 200LL * n_test);
    while (got < n_test) {
      if (++attempts > cap)
        throw ValidationError("shift harness: tilt mass too small under the envelope");
      auto e = sampler.draw();
      double w = weight(e);
      if (w > tilt.bound + 1e-12)
        throw ValidationError("shift harness: observed weight exceeds the envelope B");
      if (accept.unit() * tilt.bound >= w) continue;
      cov += covers(pred, e.x, e.y, e.base_outputs, predict_eps(pred, got)) ? 1 : 0;
      ++got;
    }
    res.coverage_shifted = static_cast<double>(cov) / n_test;
    res.n_shifted = n_test;
  }

  double c1 = res.coverage_shifted, c2 = res.coverage_unshifted;
  res.mc_se = std::sqrt(std::max(c1 * (1 - c1), 1e-12) / res.n_shifted +
                        std::max(c2 * (1 - c2), 1e-12) / res.n_unshifted);
  return res;
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

namespace {

CalibratedPredictor calibrate_by_name(const MethodSpec& m, const Dataset& calib,
                                      const ScoreSpec& score, double alpha, uint64_t seed) {
  if (m.name == "kandinsky") return kandinsky_calibrate(calib, m.groups, score, alpha, seed);
  if (m.name == "split") return split_calibrate(calib, score, alpha, seed, m.finite_sample_adjust);
  if (m.name == "mondrian")
    return mondrian_calibrate(calib, m.groups, score, alpha, seed, m.finite_sample_adjust);
  if (m.name == "class_conditional")
    return class_conditional_calibrate(calib, score, alpha, seed, m.finite_sample_adjust);
  if (m.name == "conservative")
    return conservative_calibrate(calib, m.groups, score, alpha, seed, m.finite_sample_adjust);
  throw ValidationError("unknown method '" + m.name + "' in experiment config");
}

int grid_index(const std::vector<double>& grid, double y) {
  if (grid.size() < 2) return 0;
  double lo = grid.front() - 0.5 * (grid[1] - grid[0]);
  double w = grid[1] - grid[0];
  int idx = static_cast<int>(std::floor((y - lo) / w));
  return std::clamp(idx, 0, static_cast<int>(grid.size()) - 1);
}

struct TrialOutput {
  std::vector<TrialRecord> per_method;
  std::vector<FitDiagnostics> diagnostics;
};

TrialOutput run_trial(const ExperimentConfig& cfg, const EvalGroups& groups, int trial) {
  uint64_t trial_seed = rng::derive(cfg.seed, rng::kTrial, trial);

  Dataset calib, test;
  if (cfg.from_csv) {
    // reshuffle the pooled rows, keep the original split sizes
    std::vector<LabeledExample> pool(cfg.csv_calibration.examples);
    pool.insert(pool.end(), cfg.csv_test.examples.begin(), cfg.csv_test.examples.end());
    rng::Stream shuffle(trial_seed);
    for (size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[shuffle.below(i)]);
    calib = cfg.csv_calibration;
    test = cfg.csv_test;
    calib.examples.assign(pool.begin(), pool.begin() + cfg.csv_calibration.size());
    test.examples.assign(pool.begin() + cfg.csv_calibration.size(), pool.end());
  } else {
    SynthConfig sc = *cfg.synth;
    sc.seed = trial_seed;
    auto data = synth_generate(sc);
    calib = std::move(data.calibration);
    test = std::move(data.test);
  }
  if (calib.task == Task::Regression && calib.label_grid.empty())
    calib.label_grid = default_label_grid(calib, cfg.grid_bins);

  auto membership = groups.membership(test);
  auto names = groups.names();

  TrialOutput out;
  for (const auto& mspec : cfg.methods) {
    std::vector<std::uint8_t> covered(test.size(), 0);
    double size_acc = 0.0;

    FitDiagnostics diag;
    if (mspec.name == "testtime") {
      TesttimePlan plan;
      plan.calibration = &calib;
      plan.basis = fit_basis(mspec.groups, calib);
      plan.score = cfg.score;
      plan.eta = resolve_eta(cfg.score, calib);
      plan.alpha = cfg.alpha;
      plan.seed = trial_seed;
      plan.task = calib.task;
      plan.n_classes = calib.n_classes;
      plan.label_grid = calib.label_grid;
      for (int i = 0; i < test.size(); ++i) {
        const auto& e = test.examples[i];
        auto set = testtime_qr_predict(plan, e.x, e.base_outputs, static_cast<uint64_t>(i));
        if (calib.task == Task::Classification) {
          covered[i] = (*set.label_mask)[static_cast<int>(e.y)];
        } else {
          covered[i] = (*set.grid_mask)[grid_index(calib.label_grid, e.y)];
        }
        if (cfg.compute_sizes) size_acc += set_size(set, calib.label_grid, calib.n_classes);
      }
    } else {
      auto pred = calibrate_by_name(mspec, calib, cfg.score, cfg.alpha, trial_seed);
      diag = pred.diagnostics;
      for (int i = 0; i < test.size(); ++i) {
        const auto& e = test.examples[i];
        double eps = predict_eps(pred, static_cast<uint64_t>(i));
        covered[i] = covers(pred, e.x, e.y, e.base_outputs, eps) ? 1 : 0;
        if (cfg.compute_sizes) {
          auto set = predict(pred, e.x, e.base_outputs, eps);
          size_acc += set_size(set, pred.label_grid, pred.n_classes);
        }
      }
    }

    TrialRecord rec;
    rec.per_group = miscoverage(covered, membership, names);
    rec.cd = coverage_deviation(rec.per_group, cfg.alpha, cfg.min_group_count);
    rec.gap = minmax_gap(rec.per_group, cfg.min_group_count);
    rec.mean_size = cfg.compute_sizes ? size_acc / test.size() : 0.0;
    out.per_method.push_back(std::move(rec));
    out.diagnostics.push_back(diag);
  }
  return out;
}

}  // namespace

CoverageReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.methods.empty()) throw ValidationError("experiment lists no methods");
  if (cfg.trials < 1) throw ValidationError("experiment needs trials >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ValidationError("alpha outside (0,1)");
  if (!cfg.from_csv && !cfg.synth.has_value())
    throw ValidationError("experiment needs a data source (synth or csv)");
  if (cfg.from_csv && cfg.csv_calibration.examples.empty())
    throw ValidationError("experiment csv mode needs calibration rows");

  EvalGroups groups = cfg.report_groups;
  if (groups.empty()) {
    if (cfg.from_csv)
      throw ValidationError("csv experiments need explicit report groups");
    groups = synth_eval_groups(*cfg.synth);
  }

  std::vector<TrialOutput> results(cfg.trials);
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (int t = 0; t < cfg.trials; ++t) results[t] = run_trial(cfg, groups, t);
  } else {
    std::vector<std::thread> workers;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        for (int t = w; t < cfg.trials; t += jobs) {
          try {
            results[t] = run_trial(cfg, groups, t);
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : workers) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  CoverageReport report;
  report.alpha = cfg.alpha;
  report.trials = cfg.trials;
  report.seed = cfg.seed;
  report.n_test = cfg.from_csv ? cfg.csv_test.size() : cfg.synth->n_test;
  report.mc_band_marginal = 2.0 * std::sqrt(cfg.alpha * (1 - cfg.alpha) / report.n_test);

  auto names = groups.names();
  for (size_t m = 0; m < cfg.methods.size(); ++m) {
    MethodReport mr;
    mr.method = cfg.methods[m].name;
    mr.diagnostics = results[0].diagnostics[m];
    mr.group_names = names;
    const int G = static_cast<int>(names.size());
    mr.group_mean.assign(G, 0.0);
    mr.group_std.assign(G, 0.0);
    mr.group_min.assign(G, 0.0);
    mr.group_max.assign(G, 0.0);
    mr.group_count_mean.assign(G, 0.0);
    mr.group_mc_band.assign(G, 0.0);
    std::vector<int> seen(G, 0);

    double cd_acc = 0.0, cd_sq = 0.0, gap_acc = 0.0, size_acc = 0.0, size_sq = 0.0;
    for (int t = 0; t < cfg.trials; ++t) {
      const auto& rec = results[t].per_method[m];
      mr.trials.push_back(rec);
      cd_acc += rec.cd;
      cd_sq += rec.cd * rec.cd;
      gap_acc += rec.gap;
      size_acc += rec.mean_size;
      size_sq += rec.mean_size * rec.mean_size;
      for (int g = 0; g < G; ++g) {
        const auto& st = rec.per_group[g];
        if (!st.observed) continue;
        if (seen[g] == 0) {
          mr.group_min[g] = mr.group_max[g] = st.miscoverage;
        } else {
          mr.group_min[g] = std::min(mr.group_min[g], st.miscoverage);
          mr.group_max[g] = std::max(mr.group_max[g], st.miscoverage);
        }
        mr.group_mean[g] += st.miscoverage;
        mr.group_std[g] += st.miscoverage * st.miscoverage;
        mr.group_count_mean[g] += st.count;
        ++seen[g];
      }
    }
    const double T = cfg.trials;
    mr.cd_mean = cd_acc / T;
    mr.cd_std = std::sqrt(std::max(0.0, cd_sq / T - mr.cd_mean * mr.cd_mean));
    mr.gap_mean = gap_acc / T;
    mr.size_mean = size_acc / T;
    mr.size_std = std::sqrt(std::max(0.0, size_sq / T - mr.size_mean * mr.size_mean));
    for (int g = 0; g < G; ++g) {
      if (seen[g] == 0) continue;
      mr.group_mean[g] /= seen[g];
      mr.group_std[g] =
          std::sqrt(std::max(0.0, mr.group_std[g] / seen[g] - mr.group_mean[g] * mr.group_mean[g]));
      mr.group_count_mean[g] /= seen[g];
      if (mr.group_count_mean[g] > 0)
        mr.group_mc_band[g] =
            2.0 * std::sqrt(cfg.alpha * (1 - cfg.alpha) / mr.group_count_mean[g]);
    }
    report.methods.push_back(std::move(mr));
  }
  return report;
}

}  // namespace kandinsky
