#include "kandinsky/groups.hpp"

#include <algorithm>
#include <cmath>

namespace kandinsky {

namespace {

double column_value(const std::string& col, const std::vector<double>& x, double y,
                    const std::vector<double>& b, std::optional<int> z) {
  if (col == "y") return y;
  if (col == "z") {
    if (!z.has_value()) throw ValidationError("predicate references z but the example has no z tag");
    return static_cast<double>(*z);
  }
  if (!col.empty() && col[0] == 'x') {
    int idx = std::stoi(col.substr(1));
    if (idx < 0 || idx >= static_cast<int>(x.size()))
      throw ValidationError("predicate references missing column " + col);
    return x[idx];
  }
  if (!col.empty() && col[0] == 'b') {
    int idx = std::stoi(col.substr(1));
    if (idx < 0 || idx >= static_cast<int>(b.size()))
      throw ValidationError("predicate references missing column " + col);
    return b[idx];
  }
  throw ValidationError("unknown column reference '" + col + "'");
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

bool Condition::matches(const std::vector<double>& x, double y, const std::vector<double>& b,
                        std::optional<int> z) const {
  double v = column_value(col, x, y, b, z);
  switch (op) {
    case Op::Ge: return v >= value;
    case Op::Gt: return v > value;
    case Op::Le: return v <= value;
    case Op::Lt: return v < value;
    case Op::Eq: return v == value;
    case Op::In:
      for (double w : values)
        if (v == w) return true;
      return false;
  }
  return false;
}

bool GroupDef::references_y() const {
  for (const auto& c : all)
    if (c.references_y()) return true;
  return false;
}

bool GroupDef::references_z() const {
  for (const auto& c : all)
    if (c.references_z()) return true;
  return false;
}

bool GroupDef::matches(const std::vector<double>& x, double y, const std::vector<double>& b,
                       std::optional<int> z) const {
  for (const auto& c : all)
    if (!c.matches(x, y, b, z)) return false;
  return true;
}

bool ZGroup::contains(int z) const {
  return std::find(values.begin(), values.end(), z) != values.end();
}

void EstimatorSpec::validate() const {
  if (bins < 1) throw ValidationError("estimator bins must be >= 1");
  if (iterations < 1) throw ValidationError("estimator iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("estimator learning rate must be positive");
}

bool GroupSpec::intercept_resolved() const {
  if (include_intercept.has_value()) return *include_intercept;
  return kind == Kind::Indicator || kind == Kind::Fractional || kind == Kind::Raw;
}

int HistogramModel::cell_of(const std::vector<double>& phi) const {
  int cell = 0, stride = 1;
  for (int j = 0; j < dim; ++j) {
    int idx = static_cast<int>(std::floor((phi[j] - lo[j]) / width[j]));
    idx = std::clamp(idx, 0, bins - 1);
    cell += idx * stride;
    stride *= bins;
  }
  return cell;
}

std::vector<double> FractionalEstimator::phi_of(const std::vector<double>& x, double y,
                                                const std::vector<double>& b) const {
  std::vector<double> phi;
  if (statistic == GroupSpec::Statistic::XY) {
    phi = x;
  } else {
    phi = b;
  }
  phi.push_back(y);
  return phi;
}

std::vector<double> FractionalEstimator::eval(const std::vector<double>& x, double y,
                                              const std::vector<double>& b) const {
  std::vector<double> phi = phi_of(x, y, b);
  std::vector<double> out(group_names.size(), 0.0);
  if (kind == EstimatorSpec::Kind::Histogram) {
    int cell = hist.cell_of(phi);
    for (size_t g = 0; g < out.size(); ++g) {
      double v = hist.cell_count[g][cell] > 0 ? hist.cell_rate[g][cell] : hist.fallback[g];
      out[g] = std::clamp(v, 0.0, 1.0);
    }
  } else {
    for (size_t g = 0; g < out.size(); ++g) {
      double t = logit.weights[g][logit.dim];
      for (int j = 0; j < logit.dim; ++j)
        t += logit.weights[g][j] * (phi[j] - logit.mean[j]) / logit.sd[j];
      out[g] = std::clamp(sigmoid(t), 0.0, 1.0);
    }
  }
  return out;
}

FractionalEstimator fit_fractional_basis(const Dataset& dataset,
                                         const std::vector<ZGroup>& z_groups,
                                         GroupSpec::Statistic statistic,
                                         const EstimatorSpec& est,
                                         std::vector<std::string>* warnings) {
  est.validate();
  if (z_groups.empty()) throw ValidationError("fractional basis needs at least one z-group");
  if (dataset.examples.empty()) throw ValidationError("fractional basis: empty fitting split");
  for (size_t i = 0; i < dataset.examples.size(); ++i)
    if (!dataset.examples[i].z.has_value())
      throw ValidationError("fractional basis: example " + std::to_string(i) + " has no z tag");

  FractionalEstimator fe;
  fe.kind = est.kind;
  fe.statistic = statistic;

  const int n = dataset.size();
  std::vector<std::vector<double>> phis(n);
  for (int i = 0; i < n; ++i) {
    const auto& e = dataset.examples[i];
    phis[i] = fe.phi_of(e.x, e.y, e.base_outputs);
  }
  const int q = static_cast<int>(phis[0].size());

  // drop groups with no member on the fitting split
  std::vector<ZGroup> kept;
  for (const auto& g : z_groups) {
    bool any = false;
    for (const auto& e : dataset.examples) any = any || g.contains(*e.z);
    if (any) {
      kept.push_back(g);
      fe.group_names.push_back(g.name);
    } else if (warnings) {
      warnings->push_back("z-group '" + g.name + "' is empty on the fitting split; column dropped");
    }
  }
  if (kept.empty()) throw ValidationError("all z-groups are empty on the fitting split");
  const int G = static_cast<int>(kept.size());

  std::vector<std::vector<char>> member(G, std::vector<char>(n, 0));
  for (int g = 0; g < G; ++g)
    for (int i = 0; i < n; ++i) member[g][i] = kept[g].contains(*dataset.examples[i].z) ? 1 : 0;

  if (est.kind == EstimatorSpec::Kind::Histogram) {
    HistogramModel& hm = fe.hist;
    hm.dim = q;
    hm.bins = est.bins;
    double cells = std::pow(static_cast<double>(est.bins), q);
    if (cells > (1 << 22))
      throw ValidationError("histogram estimator: bins^dim too large; use FY or fewer bins");
    hm.lo.assign(q, 0.0);
    hm.width.assign(q, 1.0);
    for (int j = 0; j < q; ++j) {
      double lo = phis[0][j], hi = lo;
      for (int i = 1; i < n; ++i) {
        lo = std::min(lo, phis[i][j]);
        hi = std::max(hi, phis[i][j]);
      }
      hm.lo[j] = lo;
      hm.width[j] = hi > lo ? (hi - lo) / est.bins : 1.0;
    }
    const int ncells = static_cast<int>(cells);
    hm.cell_rate.assign(G, std::vector<double>(ncells, 0.0));
    hm.cell_count.assign(G, std::vector<int>(ncells, 0));
    hm.fallback.assign(G, 0.0);
    std::vector<int> counts(ncells, 0);
    for (int i = 0; i < n; ++i) {
      int c = hm.cell_of(phis[i]);
      ++counts[c];
      for (int g = 0; g < G; ++g) hm.cell_rate[g][c] += member[g][i];
    }
    for (int g = 0; g < G; ++g) {
      double tot = 0.0;
      for (int i = 0; i < n; ++i) tot += member[g][i];
      hm.fallback[g] = tot / n;
      for (int c = 0; c < ncells; ++c) {
        hm.cell_count[g][c] = counts[c];
        if (counts[c] > 0) hm.cell_rate[g][c] /= counts[c];
      }
    }
  } else {
    LogisticModel& lm = fe.logit;
    lm.dim = q;
    lm.mean.assign(q, 0.0);
    lm.sd.assign(q, 1.0);
    for (int j = 0; j < q; ++j) {
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += phis[i][j];
      m /= n;
      double v = 0.0;
      for (int i = 0; i < n; ++i) v += (phis[i][j] - m) * (phis[i][j] - m);
      lm.mean[j] = m;
      lm.sd[j] = std::max(std::sqrt(v / n), 1e-12);
    }
    lm.weights.assign(G, std::vector<double>(q + 1, 0.0));
    std::vector<double> std_phi(static_cast<size_t>(n) * q);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < q; ++j)
        std_phi[static_cast<size_t>(i) * q + j] = (phis[i][j] - lm.mean[j]) / lm.sd[j];
    for (int g = 0; g < G; ++g) {
      auto& w = lm.weights[g];
      std::vector<double> grad(q + 1);
      for (int it = 0; it < est.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n; ++i) {
          const double* f = std_phi.data() + static_cast<size_t>(i) * q;
          double t = w[q];
          for (int j = 0; j < q; ++j) t += w[j] * f[j];
          double err = sigmoid(t) - member[g][i];
          for (int j = 0; j < q; ++j) grad[j] += err * f[j];
          grad[q] += err;
        }
        for (int j = 0; j <= q; ++j) w[j] -= est.learning_rate * grad[j] / n;
      }
    }
  }
  return fe;
}

bool BasisRecipe::depends_on_y() const {
  switch (spec.kind) {
    case GroupSpec::Kind::ClassConditional:
    case GroupSpec::Kind::Fractional:
      return true;  // the statistic always includes y
    case GroupSpec::Kind::Indicator:
    case GroupSpec::Kind::Mondrian:
      for (const auto& g : spec.groups)
        if (g.references_y()) return true;
      return false;
    case GroupSpec::Kind::Raw:
      for (const auto& c : spec.raw_columns)
        if (c == "y") return true;
      return false;
  }
  return true;
}

std::vector<double> BasisRecipe::eval(const std::vector<double>& x, double y,
                                      const std::vector<double>& b) const {
  std::vector<double> out;
  out.reserve(dim());
  switch (spec.kind) {
    case GroupSpec::Kind::Indicator:
    case GroupSpec::Kind::Mondrian:
      for (const auto& g : spec.groups)
        out.push_back(g.matches(x, y, b, std::nullopt) ? 1.0 : 0.0);
      break;
    case GroupSpec::Kind::ClassConditional: {
      int label = static_cast<int>(std::llround(y));
      if (label < 0 || label >= n_classes)
        throw ValidationError("class-conditional basis: label out of range");
      for (int k = 0; k < n_classes; ++k) out.push_back(k == label ? 1.0 : 0.0);
      break;
    }
    case GroupSpec::Kind::Fractional: {
      auto probs = fractional->eval(x, y, b);
      out.insert(out.end(), probs.begin(), probs.end());
      break;
    }
    case GroupSpec::Kind::Raw:
      for (const auto& c : spec.raw_columns) out.push_back(column_value(c, x, y, b, std::nullopt));
      break;
  }
  if (spec.intercept_resolved()) out.push_back(1.0);
  return out;
}

BasisRecipe fit_basis(const GroupSpec& spec, const Dataset& dataset) {
  if (dataset.examples.empty()) throw ValidationError("cannot fit basis on an empty dataset");
  BasisRecipe recipe;
  recipe.spec = spec;
  recipe.n_classes = dataset.n_classes;
  recipe.x_dim = dataset.x_dim();
  recipe.b_arity = dataset.base_arity();

  switch (spec.kind) {
    case GroupSpec::Kind::Indicator:
    case GroupSpec::Kind::Mondrian: {
      // indicator with no groups and an intercept is the marginal (split) basis
      if (spec.groups.empty() &&
          !(spec.kind == GroupSpec::Kind::Indicator && spec.intercept_resolved()))
        throw ValidationError("group spec lists no groups");
      for (const auto& g : spec.groups)
        if (g.references_z())
          throw ValidationError("basis group '" + g.name + "' references z; latent tags cannot "
                                "enter the basis directly (use a fractional spec)");
      if (spec.kind == GroupSpec::Kind::Mondrian) {
        for (size_t i = 0; i < dataset.examples.size(); ++i) {
          const auto& e = dataset.examples[i];
          int hits = 0;
          std::string names;
          for (const auto& g : spec.groups)
            if (g.matches(e.x, e.y, e.base_outputs, std::nullopt)) {
              ++hits;
              names += (names.empty() ? "" : ",") + g.name;
            }
          if (hits != 1)
            throw ValidationError("mondrian partition violated at example " + std::to_string(i) +
                                  (hits == 0 ? ": no cell matches" : ": cells {" + names + "} overlap"));
        }
      }
      for (const auto& g : spec.groups) recipe.column_names.push_back(g.name);
      break;
    }
    case GroupSpec::Kind::ClassConditional: {
      if (dataset.task != Task::Classification)
        throw ValidationError("class-conditional groups need a classification dataset");
      for (int k = 0; k < dataset.n_classes; ++k)
        recipe.column_names.push_back("class_" + std::to_string(k));
      break;
    }
    case GroupSpec::Kind::Fractional: {
      Dataset fit_split = dataset;
      if (spec.fit_on_separate_split) {
        int half = dataset.size() / 2;
        if (half < 1) throw ValidationError("separate fractional split needs >= 2 examples");
        fit_split.examples.assign(dataset.examples.begin(), dataset.examples.begin() + half);
      }
      recipe.fractional = fit_fractional_basis(fit_split, spec.z_groups, spec.statistic,
                                               spec.estimator, &recipe.warnings);
      for (const auto& nm : recipe.fractional->group_names) recipe.column_names.push_back(nm);
      break;
    }
    case GroupSpec::Kind::Raw: {
      if (spec.raw_columns.empty()) throw ValidationError("raw basis lists no columns");
      for (const auto& c : spec.raw_columns) recipe.column_names.push_back(c);
      break;
    }
  }
  if (spec.intercept_resolved()) recipe.column_names.push_back("intercept");

  // evaluating one row surfaces bad column references early
  const auto& e0 = dataset.examples.front();
  recipe.eval(e0.x, e0.y, e0.base_outputs);
  return recipe;
}

BasisMatrix build_matrix(const BasisRecipe& recipe, const Dataset& dataset) {
  BasisMatrix m;
  m.rows = dataset.size();
  m.cols = recipe.dim();
  m.column_names = recipe.column_names;
  switch (recipe.spec.kind) {
    case GroupSpec::Kind::Fractional:
      m.kind = BasisMatrix::Kind::Fractional;
      break;
    case GroupSpec::Kind::Raw:
      m.kind = BasisMatrix::Kind::Raw;
      break;
    default:
      m.kind = BasisMatrix::Kind::Indicator;
      break;
  }
  m.values.resize(static_cast<size_t>(m.rows) * m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const auto& e = dataset.examples[i];
    auto row = recipe.eval(e.x, e.y, e.base_outputs);
    std::copy(row.begin(), row.end(), m.values.begin() + static_cast<size_t>(i) * m.cols);
  }
  m.validate();
  return m;
}

}  // namespace kandinsky
