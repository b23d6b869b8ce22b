#include <vector>

#include "doctest.h"
#include "kandinsky/core.hpp"
#include "kandinsky/rng.hpp"

using namespace kandinsky;

namespace {

Dataset tiny_regression(int n, int arity) {
  Dataset d;
  d.task = Task::Regression;
  for (int i = 0; i < n; ++i) {
    LabeledExample e;
    e.x = {static_cast<double>(i), 1.0};
    e.y = i * 0.5;
    e.base_outputs.assign(arity, 0.25);
    d.examples.push_back(e);
  }
  return d;
}

}  // namespace

TEST_CASE("validate_dataset accepts well-formed input") {
  auto d = tiny_regression(5, 2);
  CHECK_NOTHROW(validate_dataset(d, 2));
}

TEST_CASE("validate_dataset reports arity mismatches with the example index") {
  auto d = tiny_regression(5, 2);
  d.examples[3].base_outputs.pop_back();
  try {
    validate_dataset(d, 2);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("validate_dataset rejects empty datasets") {
  Dataset d;
  CHECK_THROWS_AS(validate_dataset(d, 1), ValidationError);
}

TEST_CASE("validate_dataset checks classification labels") {
  Dataset d = tiny_regression(3, 1);
  d.task = Task::Classification;
  d.n_classes = 2;
  d.examples[0].y = 0;
  d.examples[1].y = 1;
  d.examples[2].y = 2;  // out of range
  CHECK_THROWS_AS(validate_dataset(d, 1), ValidationError);
}

TEST_CASE("empirical quantile follows the ceil convention") {
  std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(empirical_quantile(v, 0.9) == 9.0);
  CHECK(empirical_quantile({5.0}, 0.5) == 5.0);
  CHECK(empirical_quantile({3, 1, 2}, 1.0) == 3.0);
  CHECK(empirical_quantile(v, 0.0) == 1.0);
  CHECK(empirical_quantile(v, 0.91) == 10.0);
  CHECK_THROWS_AS(empirical_quantile({}, 0.5), ValidationError);
}

TEST_CASE("empirical quantile properties") {
  rng::Stream gen(17);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 1 + static_cast<int>(gen.below(40));
    std::vector<double> v(n);
    for (auto& x : v) x = gen.normal() * 5.0;
    double tau1 = gen.unit(), tau2 = gen.unit();
    if (tau1 > tau2) std::swap(tau1, tau2);

    double q1 = empirical_quantile(v, tau1);
    double q2 = empirical_quantile(v, tau2);
    CHECK(q1 <= q2);  // monotone in tau

    // element of v for tau > 0
    bool found = false;
    for (double x : v) found = found || x == q2;
    CHECK(found);

    // permutation invariance
    std::vector<double> shuffled(v);
    for (int i = n - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[gen.below(static_cast<uint64_t>(i) + 1)]);
    CHECK(empirical_quantile(shuffled, tau2) == q2);

    // translation equivariance
    std::vector<double> shifted(v);
    for (auto& x : shifted) x += 11.5;
    CHECK(empirical_quantile(shifted, tau2) == doctest::Approx(q2 + 11.5));
  }
}

TEST_CASE("label grid covers the range with midpoints") {
  auto g = make_label_grid(0.0, 1.0, 100);
  CHECK(g.size() == 100);
  CHECK(g.front() == doctest::Approx(0.005));
  CHECK(g.back() == doctest::Approx(0.995));
}

TEST_CASE("basis matrix invariants") {
  BasisMatrix b;
  b.rows = 2;
  b.cols = 2;
  b.kind = BasisMatrix::Kind::Indicator;
  b.values = {1, 0, 1, 0};
  b.column_names = {"a", "b"};
  CHECK_THROWS_AS(b.validate(), ValidationError);  // all-zero column
  b.values = {1, 0.5, 0, 1};
  CHECK_THROWS_AS(b.validate(), ValidationError);  // non-binary indicator
  b.kind = BasisMatrix::Kind::Fractional;
  b.values = {1, 0.5, 0, 1};
  CHECK_NOTHROW(b.validate());
}
