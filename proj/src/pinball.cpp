#include "kandinsky/pinball.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kandinsky/rng.hpp"

namespace kandinsky {

double pinball_loss(double theta, double s, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("pinball_loss: alpha outside (0,1)");
  return s >= theta ? (1.0 - alpha) * (s - theta) : alpha * (theta - s);
}

namespace {

// dense solve with partial pivoting; a is k x k row-major, consumed
bool solve_dense(std::vector<double> a, std::vector<double> b, int k, std::vector<double>& out) {
  double amax = 0.0;
  for (double v : a) amax = std::max(amax, std::abs(v));
  const double tiny = 1e-12 * std::max(1.0, amax);
  for (int c = 0; c < k; ++c) {
    int best = c;
    double bv = std::abs(a[static_cast<size_t>(c) * k + c]);
    for (int rr = c + 1; rr < k; ++rr) {
      double v = std::abs(a[static_cast<size_t>(rr) * k + c]);
      if (v > bv) {
        bv = v;
        best = rr;
      }
    }
    if (bv <= tiny) return false;
    if (best != c) {
      for (int j = 0; j < k; ++j)
        std::swap(a[static_cast<size_t>(best) * k + j], a[static_cast<size_t>(c) * k + j]);
      std::swap(b[best], b[c]);
    }
    const double pivot = a[static_cast<size_t>(c) * k + c];
    for (int rr = c + 1; rr < k; ++rr) {
      double f = a[static_cast<size_t>(rr) * k + c] / pivot;
      if (f == 0.0) continue;
      for (int j = c; j < k; ++j)
        a[static_cast<size_t>(rr) * k + j] -= f * a[static_cast<size_t>(c) * k + j];
      b[rr] -= f * b[c];
    }
  }
  out.assign(k, 0.0);
  for (int c = k - 1; c >= 0; --c) {
    double v = b[c];
    for (int j = c + 1; j < k; ++j) v -= a[static_cast<size_t>(c) * k + j] * out[j];
    out[c] = v / a[static_cast<size_t>(c) * k + c];
  }
  return true;
}

int matrix_rank(const double* phi, int n, int d) {
  // Gram of columns, eliminated with full pivoting on the diagonal
  std::vector<double> g(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = phi + static_cast<size_t>(i) * d;
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) g[static_cast<size_t>(a) * d + b] += row[a] * row[b];
  }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < a; ++b) g[static_cast<size_t>(a) * d + b] = g[static_cast<size_t>(b) * d + a];
  double gmax = 0.0;
  for (double v : g) gmax = std::max(gmax, std::abs(v));
  const double tol = 1e-10 * std::max(1.0, gmax);
  std::vector<char> used(d, 0);
  int rank = 0;
  for (int step = 0; step < d; ++step) {
    int best = -1;
    double bv = tol;
    for (int a = 0; a < d; ++a)
      if (!used[a] && g[static_cast<size_t>(a) * d + a] > bv) {
        bv = g[static_cast<size_t>(a) * d + a];
        best = a;
      }
    if (best < 0) break;
    used[best] = 1;
    ++rank;
    const double pivot = g[static_cast<size_t>(best) * d + best];
    for (int a = 0; a < d; ++a) {
      if (used[a]) continue;
      double f = g[static_cast<size_t>(a) * d + best] / pivot;
      for (int b = 0; b < d; ++b)
        g[static_cast<size_t>(a) * d + b] -= f * g[static_cast<size_t>(best) * d + b];
    }
  }
  return rank;
}

struct LineStep {
  bool moved = false;
  double t = 0.0;
  int enter = -1;
  double slope0 = 0.0;
};

// Active-set simplex on the quantile-regression LP. A vertex is an interpolation
// set h of at most d rows with independent phi rows; long steps cross every
// breakpoint whose crossing keeps the directional derivative negative.
struct ActiveSet {
  int n, d;
  const double* phi;
  const double* s;
  double alpha;

  std::vector<double> beta, r, u;
  std::vector<int> h;
  std::vector<char> inh;
  double sscale = 1.0;
  int pivots = 0;
  int max_pivots = 0;

  ActiveSet(const double* phi_, const double* s_, int n_, int d_, double alpha_)
      : n(n_), d(d_), phi(phi_), s(s_), alpha(alpha_) {
    beta.assign(d, 0.0);
    r.assign(s, s + n);
    u.assign(n, 0.0);
    inh.assign(n, 0);
    for (int i = 0; i < n; ++i) sscale = std::max(sscale, std::abs(s[i]));
    max_pivots = 2000 + 20 * d + 2 * n;
  }

  // kink classification band, relative like the interpolation tolerance
  double ktol_at(int i) const { return 1e-11 * (1.0 + std::abs(s[i])); }

  double dot_row(int i, const std::vector<double>& v) const {
    const double* row = phi + static_cast<size_t>(i) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += row[j] * v[j];
    return acc;
  }

  void refresh_residuals() {
    for (int i = 0; i < n; ++i) r[i] = s[i] - dot_row(i, beta);
  }

  // subgradient of the smooth part: strictly-sided rows not in h; rows sitting
  // on a kink take coefficient 0, a valid subgradient choice
  void gradient(std::vector<double>& g) const {
    g.assign(d, 0.0);
    for (int i = 0; i < n; ++i) {
      if (inh[i]) continue;
      double w;
      if (r[i] > ktol_at(i))
        w = -(1.0 - alpha);
      else if (r[i] < -ktol_at(i))
        w = alpha;
      else
        continue;
      const double* row = phi + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) g[j] += w * row[j];
    }
    for (int j = 0; j < d; ++j) g[j] /= n;
  }

  bool gram_solve(const std::vector<double>& rhs, std::vector<double>& out) const {
    const int k = static_cast<int>(h.size());
    std::vector<double> gram(static_cast<size_t>(k) * k, 0.0);
    for (int a = 0; a < k; ++a) {
      const double* ra = phi + static_cast<size_t>(h[a]) * d;
      for (int b = a; b < k; ++b) {
        const double* rb = phi + static_cast<size_t>(h[b]) * d;
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += ra[j] * rb[j];
        gram[static_cast<size_t>(a) * k + b] = acc;
        gram[static_cast<size_t>(b) * k + a] = acc;
      }
    }
    return solve_dense(std::move(gram), rhs, k, out);
  }

  // project v onto the null space of the h rows
  bool project_null(const std::vector<double>& v, std::vector<double>& out) const {
    out = v;
    const int k = static_cast<int>(h.size());
    if (k == 0) return true;
    std::vector<double> rhs(k, 0.0);
    for (int a = 0; a < k; ++a) rhs[a] = dot_row(h[a], v);
    std::vector<double> lam;
    if (!gram_solve(rhs, lam)) return false;
    for (int a = 0; a < k; ++a) {
      const double* row = phi + static_cast<size_t>(h[a]) * d;
      for (int j = 0; j < d; ++j) out[j] -= lam[a] * row[j];
    }
    return true;
  }

  // minimum-norm direction with phi_{h[m]} . delta = rhs[m]
  bool edge_direction(const std::vector<double>& rhs, std::vector<double>& delta) const {
    std::vector<double> w;
    if (!gram_solve(rhs, w)) return false;
    delta.assign(d, 0.0);
    const int k = static_cast<int>(h.size());
    for (int a = 0; a < k; ++a) {
      const double* row = phi + static_cast<size_t>(h[a]) * d;
      for (int j = 0; j < d; ++j) delta[j] += w[a] * row[j];
    }
    return true;
  }

  // duals for the current interpolation set via (P P^T) gamma = P(-n g);
  // valid once the projected gradient vanishes
  bool duals(const std::vector<double>& g, std::vector<double>& gamma) const {
    const int k = static_cast<int>(h.size());
    std::vector<double> rhs(k, 0.0);
    for (int a = 0; a < k; ++a) rhs[a] = -static_cast<double>(n) * dot_row(h[a], g);
    return gram_solve(rhs, gamma);
  }

  // directional slope at t=0 along delta, rows in h excluded (their u is 0)
  double slope_at_origin() const {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      if (inh[i]) continue;
      double ui = u[i];
      if (r[i] > ktol_at(i))
        acc += -(1.0 - alpha) * ui;
      else if (r[i] < -ktol_at(i))
        acc += alpha * ui;
      else {
        // kink: moving off it always resists
        if (ui > 0)
          acc += alpha * ui;
        else
          acc += -(1.0 - alpha) * ui;
      }
    }
    return acc / n;
  }

  void fill_direction_products(const std::vector<double>& delta) {
    for (int i = 0; i < n; ++i) u[i] = dot_row(i, delta);
  }

  // long step: walk breakpoints while the directional derivative stays negative
  LineStep long_step(const std::vector<double>& delta) {
    fill_direction_products(delta);
    LineStep out;
    double umax = 0.0;
    for (int i = 0; i < n; ++i)
      if (!inh[i]) umax = std::max(umax, std::abs(u[i]));
    if (umax == 0.0) return out;
    const double utol = 1e-13 * umax;

    double slope = slope_at_origin();
    out.slope0 = slope;
    double mag = std::abs(slope);
    if (slope >= -1e-12 * std::max(1.0, mag)) return out;

    std::vector<std::pair<double, int>> bps;
    bps.reserve(64);
    for (int i = 0; i < n; ++i) {
      if (inh[i]) continue;
      double ui = u[i];
      if (std::abs(ui) <= utol) continue;
      if (r[i] > ktol_at(i) && ui > 0)
        bps.emplace_back(r[i] / ui, i);
      else if (r[i] < -ktol_at(i) && ui < 0)
        bps.emplace_back(r[i] / ui, i);
    }
    std::sort(bps.begin(), bps.end());
    for (auto& [t, i] : bps) {
      slope += std::abs(u[i]) / n;
      mag += std::abs(u[i]) / n;
      if (slope >= -1e-12 * std::max(1.0, mag)) {
        out.moved = true;
        out.t = t;
        out.enter = i;
        return out;
      }
    }
    throw SolverError("pinball LP: descent ray escaped every breakpoint (unbounded problem)");
  }

  // single step to the first breakpoint: flat-edge walk for tie polishing
  LineStep first_breakpoint_step(const std::vector<double>& delta) {
    fill_direction_products(delta);
    LineStep out;
    double umax = 0.0;
    for (int i = 0; i < n; ++i)
      if (!inh[i]) umax = std::max(umax, std::abs(u[i]));
    if (umax == 0.0) return out;
    const double utol = 1e-13 * umax;
    out.slope0 = slope_at_origin();
    double tbest = 0.0;
    int ibest = -1;
    for (int i = 0; i < n; ++i) {
      if (inh[i]) continue;
      double ui = u[i];
      if (std::abs(ui) <= utol) continue;
      double t = 0.0;
      if (r[i] > ktol_at(i) && ui > 0)
        t = r[i] / ui;
      else if (r[i] < -ktol_at(i) && ui < 0)
        t = r[i] / ui;
      else
        continue;
      if (ibest < 0 || t < tbest) {
        tbest = t;
        ibest = i;
      }
    }
    if (ibest < 0) return out;
    out.moved = true;
    out.t = tbest;
    out.enter = ibest;
    return out;
  }

  void apply(const std::vector<double>& delta, double t, int enter) {
    for (int j = 0; j < d; ++j) beta[j] += t * delta[j];
    refresh_residuals();
    if (enter >= 0) {
      h.push_back(enter);
      inh[enter] = 1;
    }
    ++pivots;
  }

  void drop(int pos) {
    inh[h[pos]] = 0;
    h.erase(h.begin() + pos);
  }

  void check_budget() const {
    if (pivots > max_pivots) throw SolverError("pinball LP: pivot budget exhausted");
  }

  // promote the kink row most resistant to the last attempted direction
  bool promote_kink() {
    int pick = -1;
    double best = 0.0;
    for (int i = 0; i < n; ++i) {
      if (inh[i] || std::abs(r[i]) > ktol_at(i)) continue;
      if (std::abs(u[i]) > best) {
        best = std::abs(u[i]);
        pick = i;
      }
    }
    if (pick < 0) return false;
    h.push_back(pick);
    inh[pick] = 1;
    ++pivots;
    return true;
  }

  // returns false when numerical factorizations fail and a restart is warranted
  bool optimize() {
    std::vector<double> g, gproj, delta, gamma, colsum(d, 0.0), c2proj;
    for (int i = 0; i < n; ++i) {
      const double* row = phi + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) colsum[j] += row[j];
    }
    while (true) {
      check_budget();
      gradient(g);
      const int k = static_cast<int>(h.size());
      if (k < d) {
        if (!project_null(g, gproj)) return false;
        double gnorm = 0.0;
        for (double v : gproj) gnorm = std::max(gnorm, std::abs(v));
        double gref = 1.0;
        for (double v : g) gref = std::max(gref, std::abs(v));
        if (gnorm > 1e-10 * gref) {
          delta.assign(d, 0.0);
          for (int j = 0; j < d; ++j) delta[j] = -gproj[j] / gnorm;
          LineStep st = long_step(delta);
          if (st.moved) {
            apply(delta, st.t, st.enter);
            continue;
          }
          if (promote_kink()) continue;
          return false;
        }
        // the subgradient vanishes on the null space: walk flat edges toward a
        // vertex, preferring the direction that lowers sum_i phi_i^T beta (the
        // selection an infinitesimally larger alpha would make)
        if (!project_null(colsum, c2proj)) return false;
        double cnorm = 0.0;
        for (double v : c2proj) cnorm = std::max(cnorm, std::abs(v));
        double cref = 1.0;
        for (double v : colsum) cref = std::max(cref, std::abs(v));
        if (cnorm > 1e-10 * cref) {
          bool advanced = false;
          for (double sign : {-1.0, 1.0}) {
            delta.assign(d, 0.0);
            for (int j = 0; j < d; ++j) delta[j] = sign * c2proj[j] / cnorm;
            LineStep st = first_breakpoint_step(delta);
            double uabs = 0.0;
            for (int i = 0; i < n; ++i)
              if (!inh[i]) uabs += std::abs(u[i]);
            double band = 1e-9 * std::max(1.0, uabs / n);
            if (st.moved && st.slope0 <= band) {
              apply(delta, st.t, st.enter);
              advanced = true;
              break;
            }
            if (st.slope0 > band && promote_kink()) {
              advanced = true;
              break;
            }
          }
          if (advanced) continue;
        }
      }
      if (h.empty()) return true;  // flat everywhere, nothing to pin
      if (!duals(g, gamma)) return false;

      // most violating first
      int pick = -1;
      double worst = 1e-9;
      for (size_t a = 0; a < h.size(); ++a) {
        double over = std::max(gamma[a] - alpha, (alpha - 1.0) - gamma[a]);
        if (over > worst) {
          worst = over;
          pick = static_cast<int>(a);
        }
      }
      if (pick < 0) return true;  // dual feasible: optimal

      bool moved = false;
      // try candidates from most violating; a violation can be spurious when
      // kink rows outside h supply the missing subgradient mass
      std::vector<std::pair<double, int>> cands;
      for (size_t a = 0; a < h.size(); ++a) {
        double over = std::max(gamma[a] - alpha, (alpha - 1.0) - gamma[a]);
        if (over > 1e-9) cands.emplace_back(-over, static_cast<int>(a));
      }
      std::sort(cands.begin(), cands.end());
      for (auto& [negover, a] : cands) {
        (void)negover;
        double sign = gamma[a] > alpha ? 1.0 : -1.0;
        int j = h[a];
        std::vector<double> rhs(h.size(), 0.0);
        rhs[a] = sign;
        if (!edge_direction(rhs, delta)) return false;
        drop(a);
        LineStep st = long_step(delta);
        if (st.moved) {
          apply(delta, st.t, st.enter);
          moved = true;
          break;
        }
        // restore and try the next candidate
        h.insert(h.begin() + a, j);
        inh[j] = 1;
      }
      if (!moved) return true;
    }
  }

  // walk flat edges toward the vertex an infinitesimally larger alpha selects;
  // keeps the objective, lowers sum_i phi_i^T beta
  bool polish() {
    std::vector<double> g, gamma, delta;
    while (true) {
      check_budget();
      if (h.empty()) return true;
      gradient(g);
      if (!duals(g, gamma)) return true;
      bool moved = false;
      std::vector<std::pair<double, int>> cands;
      for (size_t a = 0; a < h.size(); ++a)
        if (gamma[a] <= (alpha - 1.0) + 1e-8) cands.emplace_back(gamma[a], static_cast<int>(a));
      std::sort(cands.begin(), cands.end());
      for (auto& [gv, a] : cands) {
        (void)gv;
        int j = h[a];
        std::vector<double> rhs(h.size(), 0.0);
        rhs[a] = -1.0;
        if (!edge_direction(rhs, delta)) return true;
        double c2 = 0.0, c2abs = 0.0;
        for (int i = 0; i < n; ++i) {
          double ui = dot_row(i, delta);
          c2 += ui;
          c2abs += std::abs(ui);
        }
        if (!(c2 < -1e-9 * std::max(1.0, c2abs))) continue;
        drop(a);
        LineStep st = first_breakpoint_step(delta);
        double flat_band = 1e-9 * std::max(1.0, c2abs / n);
        if (st.moved && std::abs(st.slope0) <= flat_band) {
          apply(delta, st.t, st.enter);
          moved = true;
          break;
        }
        if (st.moved && st.slope0 < -flat_band) {
          // genuinely improving edge surfaced by tolerance noise: take it and
          // report that optimization has to resume
          apply(delta, st.t, st.enter);
          return false;
        }
        h.insert(h.begin() + a, j);
        inh[j] = 1;
      }
      if (!moved) return true;
    }
  }

  bool run() {
    for (int round = 0; round < 64; ++round) {
      if (!optimize()) return false;
      if (polish()) return true;
    }
    return false;
  }
};

double mean_pinball(const double* phi, const double* s, int n, int d, double alpha,
                    const std::vector<double>& beta) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = phi + static_cast<size_t>(i) * d;
    double theta = 0.0;
    for (int j = 0; j < d; ++j) theta += row[j] * beta[j];
    acc += pinball_loss(theta, s[i], alpha);
  }
  return acc / n;
}

}  // namespace

OptimalityCheck check_optimality(const BasisMatrix& basis, const std::vector<double>& scores,
                                 double alpha, const std::vector<double>& beta) {
  if (basis.rows != static_cast<int>(scores.size()))
    throw ValidationError("check_optimality: scores length does not match basis rows");
  if (basis.cols != static_cast<int>(beta.size()))
    throw ValidationError("check_optimality: beta length does not match basis columns");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("check_optimality: alpha outside (0,1)");
  const int n = basis.rows, d = basis.cols;

  OptimalityCheck out;
  out.residual.assign(d, 0.0);
  std::vector<double> slack(d, 0.0);
  double phimax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = basis.row(i);
    double theta = 0.0;
    for (int j = 0; j < d; ++j) theta += row[j] * beta[j];
    const double gap = scores[i] - theta;
    const bool interp = std::abs(gap) <= kInterpTol * (1.0 + std::abs(scores[i]));
    const double coeff = alpha - (gap > 0.0 ? 1.0 : 0.0);
    for (int j = 0; j < d; ++j) {
      out.residual[j] += row[j] * coeff;
      if (interp) slack[j] += std::abs(row[j]);
      phimax = std::max(phimax, std::abs(row[j]));
    }
    if (interp) ++out.interpolated_count;
  }
  out.ok = true;
  const double tol = 1e-9 * std::max(1.0, phimax);
  for (int j = 0; j < d; ++j) {
    out.residual[j] /= n;
    if (std::abs(out.residual[j]) > slack[j] / n + tol) out.ok = false;
  }
  return out;
}

QrSolution fit_linear_quantile(const BasisMatrix& basis, const std::vector<double>& scores,
                               double alpha) {
  const int n = basis.rows, d = basis.cols;
  if (n < 1 || d < 1) throw ValidationError("fit_linear_quantile: empty problem");
  if (static_cast<int>(scores.size()) != n)
    throw ValidationError("fit_linear_quantile: scores length does not match basis rows");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("fit_linear_quantile: alpha outside (0,1)");
  for (double v : scores)
    if (!std::isfinite(v)) throw ValidationError("fit_linear_quantile: non-finite score");
  for (double v : basis.values)
    if (!std::isfinite(v)) throw ValidationError("fit_linear_quantile: non-finite basis entry");

  // the pinball objective is positively homogeneous, so the solve runs on
  // scores normalized to unit scale (minimizers map back exactly); this keeps
  // every internal tolerance meaningful regardless of the data's magnitude
  double scale = 0.0;
  for (double v : scores) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;
  std::vector<double> snorm(scores);
  for (auto& v : snorm) v /= scale;

  // resolve the vertex h against a given score vector; the certificate that
  // gates acceptance is evaluated at the normalized scale, where the relative
  // interpolation band matches the arithmetic's precision
  auto resolve_beta = [&](const std::vector<int>& h, const std::vector<double>& sc,
                          std::vector<double>& out) {
    std::vector<double> a(static_cast<size_t>(d) * d, 0.0), b(d, 0.0);
    for (int m = 0; m < d; ++m) {
      const double* row = basis.row(h[m]);
      for (int j = 0; j < d; ++j) a[static_cast<size_t>(m) * d + j] = row[j];
      b[m] = sc[h[m]];
    }
    return solve_dense(std::move(a), std::move(b), d, out);
  };

  auto finalize = [&](const ActiveSet& as) {
    QrSolution sol;
    std::vector<double> exact;
    const bool full_vertex = static_cast<int>(as.h.size()) == d;

    // public coefficients: on a full vertex, re-solve against the original
    // scores so coordinates reproduce score values bit-exactly
    sol.beta.assign(d, 0.0);
    if (full_vertex && resolve_beta(as.h, scores, exact)) {
      sol.beta = exact;
    } else {
      for (int j = 0; j < d; ++j) sol.beta[j] = as.beta[j] * scale;
    }

    // gate on the certificate of the coefficients actually returned, at unit
    // scale; an external recheck of beta/max|s| reproduces these exact numbers
    std::vector<double> bn(sol.beta);
    for (auto& v : bn) v /= scale;
    bool ok = check_optimality(basis, snorm, alpha, bn).ok;
    sol.pivots = as.pivots;
    sol.objective = mean_pinball(basis.values.data(), scores.data(), n, d, alpha, sol.beta);
    OptimalityCheck pub = check_optimality(basis, scores, alpha, sol.beta);
    sol.subgradient_residual = pub.residual;
    sol.interpolated_indices.clear();
    for (int i = 0; i < n; ++i) {
      const double* row = basis.row(i);
      double theta = 0.0;
      for (int j = 0; j < d; ++j) theta += row[j] * sol.beta[j];
      if (std::abs(scores[i] - theta) <= kInterpTol * (1.0 + std::abs(scores[i])))
        sol.interpolated_indices.push_back(i);
    }
    sol.rank_deficient =
        static_cast<int>(as.h.size()) < d && matrix_rank(basis.values.data(), n, d) < d;
    return std::make_pair(sol, ok);
  };

  ActiveSet as(basis.values.data(), snorm.data(), n, d, alpha);
  bool clean = false;
  try {
    clean = as.run();
  } catch (const SolverError&) {
    clean = false;
  }
  if (clean) {
    auto [sol, ok] = finalize(as);
    if (ok) return sol;
  }

  // deterministic micro-perturbation breaks tie degeneracy (several rows
  // interpolated at once); it clears the kink band but stays an order of
  // magnitude inside the interpolation tolerance, and the vertex found is
  // re-evaluated against the unperturbed scores
  std::vector<double> jit(snorm);
  for (int i = 0; i < n; ++i)
    jit[i] += 1e-9 * (1.0 + std::abs(snorm[i])) * (rng::unit(0x9e3779b9, 0x70627278, i) - 0.5);
  ActiveSet as2(basis.values.data(), jit.data(), n, d, alpha);
  if (!as2.run()) throw SolverError("fit_linear_quantile: failed to reach a certified optimum");
  as2.pivots += as.pivots;
  auto [sol, ok] = finalize(as2);
  if (!ok) throw SolverError("fit_linear_quantile: optimality certificate failed");
  return sol;
}

}  // namespace kandinsky
