#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "kandinsky/core.hpp"
#include "kandinsky/pinball.hpp"
#include "kandinsky/rng.hpp"

using namespace kandinsky;

namespace {

BasisMatrix make_basis(int n, int d, std::vector<double> v,
                       BasisMatrix::Kind kind = BasisMatrix::Kind::Raw) {
  BasisMatrix b;
  b.rows = n;
  b.cols = d;
  b.values = std::move(v);
  b.kind = kind;
  for (int j = 0; j < d; ++j) b.column_names.push_back("c" + std::to_string(j));
  return b;
}

BasisMatrix constant_basis(int n) { return make_basis(n, 1, std::vector<double>(n, 1.0)); }

double objective_at(const BasisMatrix& b, const std::vector<double>& s, double alpha,
                    const std::vector<double>& beta) {
  double acc = 0.0;
  for (int i = 0; i < b.rows; ++i) {
    double theta = 0.0;
    for (int j = 0; j < b.cols; ++j) theta += b.at(i, j) * beta[j];
    acc += pinball_loss(theta, s[i], alpha);
  }
  return acc / b.rows;
}

// independent oracle: enumerate LP vertices as interpolation d-subsets
double brute_force_min(const BasisMatrix& b, const std::vector<double>& s, double alpha) {
  const int n = b.rows, d = b.cols;
  double best = objective_at(b, s, alpha, std::vector<double>(d, 0.0));
  if (d == 1) {
    for (int i = 0; i < n; ++i) {
      if (b.at(i, 0) == 0.0) continue;
      best = std::min(best, objective_at(b, s, alpha, {s[i] / b.at(i, 0)}));
    }
  } else if (d == 2) {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double a11 = b.at(i, 0), a12 = b.at(i, 1), a21 = b.at(j, 0), a22 = b.at(j, 1);
        double det = a11 * a22 - a12 * a21;
        if (std::abs(det) < 1e-12) continue;
        double b1 = (a22 * s[i] - a12 * s[j]) / det;
        double b2 = (-a21 * s[i] + a11 * s[j]) / det;
        best = std::min(best, objective_at(b, s, alpha, {b1, b2}));
      }
      // vertices with a single tight row arise when one coordinate stays free
      if (b.at(i, 0) != 0.0)
        best = std::min(best, objective_at(b, s, alpha, {s[i] / b.at(i, 0), 0.0}));
      if (b.at(i, 1) != 0.0)
        best = std::min(best, objective_at(b, s, alpha, {0.0, s[i] / b.at(i, 1)}));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("pinball loss definition") {
  CHECK(pinball_loss(0.0, 1.0, 0.1) == doctest::Approx(0.9));
  CHECK(pinball_loss(1.0, 0.0, 0.1) == doctest::Approx(0.1));
  CHECK(pinball_loss(3.7, 3.7, 0.42) == 0.0);
  CHECK(pinball_loss(3.7, 3.7, 0.999) == 0.0);
  CHECK_THROWS_AS(pinball_loss(0, 1, 0.0), ValidationError);
  CHECK_THROWS_AS(pinball_loss(0, 1, 1.0), ValidationError);
}

TEST_CASE("constant basis recovers the empirical quantile") {
  std::vector<double> s = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto sol = fit_linear_quantile(constant_basis(10), s, 0.1);
  CHECK(sol.beta[0] == 9.0);  // ceil(0.9*10)-th order statistic, not the flat upper end
  CHECK(sol.objective == doctest::Approx(brute_force_min(constant_basis(10), s, 0.1)));
}

TEST_CASE("constant basis, constant scores") {
  std::vector<double> s(7, 3.25);
  auto sol = fit_linear_quantile(constant_basis(7), s, 0.3);
  CHECK(sol.beta[0] == 3.25);
  CHECK(sol.objective == doctest::Approx(0.0));
}

TEST_CASE("single observation") {
  auto sol = fit_linear_quantile(constant_basis(1), {4.5}, 0.1);
  CHECK(sol.beta[0] == 4.5);
}

TEST_CASE("two disjoint groups split into independent medians") {
  const int n = 20;
  std::vector<double> phi(n * 2, 0.0);
  std::vector<double> s(n);
  rng::Stream gen(7);
  std::vector<double> g0, g1;
  for (int i = 0; i < n; ++i) {
    bool first = i < 10;
    phi[i * 2 + (first ? 0 : 1)] = 1.0;
    s[i] = gen.normal() * (first ? 1.0 : 5.0) + (first ? 0.0 : 2.0);
    (first ? g0 : g1).push_back(s[i]);
  }
  auto sol = fit_linear_quantile(make_basis(n, 2, phi, BasisMatrix::Kind::Indicator), s, 0.5);
  CHECK(sol.beta[0] == empirical_quantile(g0, 0.5));
  CHECK(sol.beta[1] == empirical_quantile(g1, 0.5));
}

TEST_CASE("intercept-only fit equals empirical quantile bit-for-bit") {
  rng::Stream gen(42);
  const double alphas[] = {0.05, 0.1, 0.2, 0.25, 1.0 / 3.0, 0.5};
  for (int rep = 0; rep < 120; ++rep) {
    int n = 1 + static_cast<int>(gen.below(50));
    double alpha = alphas[gen.below(6)];
    std::vector<double> s(n);
    for (auto& v : s) v = gen.normal() * 3.0 + (gen.unit() < 0.3 ? -2.0 : 1.0);
    auto sol = fit_linear_quantile(constant_basis(n), s, alpha);
    double q = empirical_quantile(s, 1.0 - alpha);
    CHECK(sol.beta[0] == q);
  }
}

TEST_CASE("mondrian bases separate into per-group quantiles exactly") {
  rng::Stream gen(99);
  const double alphas[] = {0.1, 0.25, 0.5, 0.05};
  for (int rep = 0; rep < 60; ++rep) {
    int k = 2 + static_cast<int>(gen.below(3));
    std::vector<int> sizes(k);
    int n = 0;
    for (auto& sz : sizes) {
      sz = 1 + static_cast<int>(gen.below(30));
      n += sz;
    }
    std::vector<double> phi(static_cast<size_t>(n) * k, 0.0);
    std::vector<double> s(n);
    std::vector<std::vector<double>> per_group(k);
    int row = 0;
    for (int g = 0; g < k; ++g) {
      for (int t = 0; t < sizes[g]; ++t, ++row) {
        phi[static_cast<size_t>(row) * k + g] = 1.0;
        s[row] = gen.normal() * (1.0 + g);
        per_group[g].push_back(s[row]);
      }
    }
    double alpha = alphas[gen.below(4)];
    auto sol = fit_linear_quantile(make_basis(n, k, phi, BasisMatrix::Kind::Indicator), s, alpha);
    for (int g = 0; g < k; ++g) CHECK(sol.beta[g] == empirical_quantile(per_group[g], 1.0 - alpha));
  }
}

TEST_CASE("solver objective matches brute-force vertex enumeration") {
  rng::Stream gen(1234);
  for (int rep = 0; rep < 250; ++rep) {
    int d = 1 + static_cast<int>(gen.below(2));
    int n = d + static_cast<int>(gen.below(12 - d + 1));
    std::vector<double> phi(static_cast<size_t>(n) * d);
    std::vector<double> s(n);
    for (auto& v : phi) v = gen.unit() < 0.25 ? 0.0 : gen.normal();
    for (auto& v : s) v = gen.normal() * 2.0;
    // keep at least one nonzero entry per column
    for (int j = 0; j < d; ++j) {
      bool any = false;
      for (int i = 0; i < n; ++i) any = any || phi[static_cast<size_t>(i) * d + j] != 0.0;
      if (!any) phi[static_cast<size_t>(gen.below(n)) * d + j] = 1.0;
    }
    double alpha = 0.05 + 0.9 * gen.unit();
    auto b = make_basis(n, d, phi);
    auto sol = fit_linear_quantile(b, s, alpha);
    double bf = brute_force_min(b, s, alpha);
    CHECK(sol.objective <= bf + 1e-9 * (1.0 + std::abs(bf)));
    CHECK(sol.objective >= bf - 1e-9 * (1.0 + std::abs(bf)));
    auto chk = check_optimality(b, s, alpha, sol.beta);
    CHECK(chk.ok);
  }
}

TEST_CASE("interpolation bound holds for continuous scores") {
  rng::Stream gen(555);
  for (int rep = 0; rep < 40; ++rep) {
    int d = 1 + static_cast<int>(gen.below(4));
    int n = 5 * d + static_cast<int>(gen.below(80));
    std::vector<double> phi(static_cast<size_t>(n) * d);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j)
        phi[static_cast<size_t>(i) * d + j] = (j == 0) ? 1.0 : (gen.unit() < 0.5 ? 0.0 : 1.0);
      s[i] = gen.normal();
    }
    auto sol = fit_linear_quantile(make_basis(n, d, phi), s, 0.1);
    CHECK(static_cast<int>(sol.interpolated_indices.size()) <= d);
  }
}

TEST_CASE("scale equivariance") {
  rng::Stream gen(31);
  std::vector<double> phi = {1, 1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 1};
  std::vector<double> s(6);
  for (auto& v : s) v = gen.normal();
  auto b = make_basis(6, 2, phi);
  auto sol1 = fit_linear_quantile(b, s, 0.2);
  std::vector<double> s2(s);
  for (auto& v : s2) v *= 7.5;
  auto sol2 = fit_linear_quantile(b, s2, 0.2);
  for (int j = 0; j < 2; ++j) CHECK(sol2.beta[j] == doctest::Approx(7.5 * sol1.beta[j]));
}

TEST_CASE("check_optimality flags a perturbed solution") {
  rng::Stream gen(8);
  std::vector<double> s(15);
  for (auto& v : s) v = gen.normal() * 4.0;
  auto b = constant_basis(15);
  auto sol = fit_linear_quantile(b, s, 0.2);
  CHECK(check_optimality(b, s, 0.2, sol.beta).ok);
  CHECK_FALSE(check_optimality(b, s, 0.2, {sol.beta[0] + 1.0}).ok);
}

TEST_CASE("full interpolation absorbs any subgradient") {
  std::vector<double> s(9, 0.0);
  auto b = constant_basis(9);
  auto chk = check_optimality(b, s, 0.37, {0.0});
  CHECK(chk.ok);
  CHECK(chk.interpolated_count == 9);
}

TEST_CASE("rank-deficient basis is solved and flagged") {
  // duplicated column: the span is one-dimensional
  std::vector<double> phi = {1, 1, 1, 1, 1, 1, 1, 1};
  std::vector<double> s = {1, 2, 3, 4};
  auto b = make_basis(4, 2, phi);
  auto sol = fit_linear_quantile(b, s, 0.5);
  CHECK(sol.rank_deficient);
  CHECK(check_optimality(b, s, 0.5, sol.beta).ok);
  CHECK(sol.objective == doctest::Approx(brute_force_min(b, s, 0.5)));
}

TEST_CASE("heavy ties and duplicated rows still yield certified optima") {
  rng::Stream gen(777);
  for (int rep = 0; rep < 150; ++rep) {
    int d = 1 + static_cast<int>(gen.below(4));
    int n = d + static_cast<int>(gen.below(40));
    std::vector<double> phi(static_cast<size_t>(n) * d);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j)
        phi[static_cast<size_t>(i) * d + j] = j == 0 ? 1.0 : (gen.unit() < 0.5 ? 0.0 : 1.0);
      s[i] = static_cast<double>(gen.below(5));  // integer scores, many ties
    }
    double alpha = 0.1 + 0.2 * gen.below(4);  // includes resonant combinations
    auto b = make_basis(n, d, phi);
    auto sol = fit_linear_quantile(b, s, alpha);
    CHECK(check_optimality(b, s, alpha, sol.beta).ok);
    double again = fit_linear_quantile(b, s, alpha).objective;
    CHECK(sol.objective == again);  // deterministic replay
  }
}

TEST_CASE("lattice bases with tied scores solve at any magnitude") {
  // half-integer basis entries and integer scores produce degenerate optimal
  // vertices (more rows interpolated than coordinates); the certificate of
  // the returned coefficients must hold at unit scale regardless of the
  // data's magnitude
  rng::Stream gen(2025);
  const double scales[] = {1.0, 1e8, 1e-8};
  for (int rep = 0; rep < 120; ++rep) {
    int d = 2 + static_cast<int>(gen.below(6));
    int n = d + static_cast<int>(gen.below(80));
    double mag = scales[gen.below(3)];
    std::vector<double> phi(static_cast<size_t>(n) * d);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j)
        phi[static_cast<size_t>(i) * d + j] =
            gen.unit() < 0.4 ? 0.0 : std::round(gen.normal() * 2.0) / 2.0;
      s[i] = static_cast<double>(gen.below(7)) * mag;
    }
    for (int j = 0; j < d; ++j) {
      bool any = false;
      for (int i = 0; i < n; ++i) any = any || phi[static_cast<size_t>(i) * d + j] != 0.0;
      if (!any) phi[static_cast<size_t>(gen.below(n)) * d + j] = 1.0;
    }
    double alpha = 0.02 + 0.96 * gen.unit();
    auto b = make_basis(n, d, phi);
    auto sol = fit_linear_quantile(b, s, alpha);

    double sc = 0.0;
    for (double v : s) sc = std::max(sc, std::abs(v));
    if (sc == 0.0) sc = 1.0;
    std::vector<double> sn(s), bn(sol.beta);
    for (auto& v : sn) v /= sc;
    for (auto& v : bn) v /= sc;
    CHECK(check_optimality(b, sn, alpha, bn).ok);
  }
}

TEST_CASE("dimension mismatches are rejected") {
  auto b = constant_basis(4);
  CHECK_THROWS_AS(fit_linear_quantile(b, {1.0, 2.0}, 0.1), ValidationError);
  CHECK_THROWS_AS(check_optimality(b, {1, 2, 3, 4}, 0.1, {1.0, 2.0}), ValidationError);
  CHECK_THROWS_AS(fit_linear_quantile(b, {1, 2, 3, 4}, 1.2), ValidationError);
}
