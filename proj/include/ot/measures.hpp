#pragma once

// Measure and cost data model: weighted point clouds, 1-D grid densities,
// couplings, cost matrices, push-forwards and cumulative/quantile functions.

#include "ot/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

namespace ot {

/// Weighted point cloud in R^d. Rows of `points` are the atoms. Weights are
/// nonnegative but not necessarily normalized; see normalized().
class DiscreteMeasure {
 public:
  DiscreteMeasure(Matrix points, Vector weights)
      : points_(std::move(points)), weights_(std::move(weights)) {
    detail::require(points_.rows() == weights_.size(), ErrorCode::dimension_mismatch,
                    "DiscreteMeasure: points and weights have different lengths");
    detail::require(points_.cols() >= 1, ErrorCode::invalid_argument,
                    "DiscreteMeasure: dimension must be >= 1");
    detail::require(points_.allFinite(), ErrorCode::invalid_argument,
                    "DiscreteMeasure: non-finite point coordinate");
    for (Index i = 0; i < weights_.size(); ++i) {
      detail::require(std::isfinite(weights_[i]) && weights_[i] >= 0.0,
                      ErrorCode::invalid_argument,
                      "DiscreteMeasure: weights must be finite and nonnegative");
    }
  }

  static DiscreteMeasure uniform(Matrix points) {
    const Index n = points.rows();
    detail::require(n > 0, ErrorCode::invalid_argument, "uniform: empty support");
    return DiscreteMeasure(std::move(points), Vector::Constant(n, 1.0 / double(n)));
  }

  /// 1-D convenience constructor.
  static DiscreteMeasure on_line(const std::vector<double>& xs, const std::vector<double>& ws) {
    detail::require(xs.size() == ws.size(), ErrorCode::dimension_mismatch,
                    "on_line: size mismatch");
    Matrix p(Index(xs.size()), 1);
    Vector w(Index(ws.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      p(Index(i), 0) = xs[i];
      w[Index(i)] = ws[i];
    }
    return DiscreteMeasure(std::move(p), std::move(w));
  }

  const Matrix& points() const noexcept { return points_; }
  const Vector& weights() const noexcept { return weights_; }
  Index size() const noexcept { return weights_.size(); }
  Index dim() const noexcept { return points_.cols(); }
  Vector point(Index i) const { return points_.row(i).transpose(); }
  double total_mass() const { return weights_.sum(); }

  bool is_probability(const Tolerances& tol = default_tolerances()) const {
    return std::abs(total_mass() - 1.0) <= tol.normalization;
  }

  DiscreteMeasure normalized() const {
    const double mass = total_mass();
    detail::require(mass > 0.0, ErrorCode::invalid_argument,
                    "normalized: measure has zero mass");
    return DiscreteMeasure(points_, weights_ / mass);
  }

  bool operator==(const DiscreteMeasure& o) const {
    return points_.rows() == o.points_.rows() && points_.cols() == o.points_.cols() &&
           points_ == o.points_ && weights_ == o.weights_;
  }

 private:
  Matrix points_;
  Vector weights_;
};

/// Density on a strictly increasing 1-D grid. `density` holds nodal values;
/// cell k = [x_k, x_{k+1}] carries the trapezoid mass h_k (rho_k + rho_{k+1}) / 2
/// and is treated as having the constant density (rho_k + rho_{k+1}) / 2, so the
/// cumulative function is piecewise linear.
class GridDensity1D {
 public:
  GridDensity1D(Vector grid, Vector density) : grid_(std::move(grid)), density_(std::move(density)) {
    detail::require(grid_.size() >= 2, ErrorCode::invalid_argument,
                    "GridDensity1D: need at least two grid nodes");
    detail::require(grid_.size() == density_.size(), ErrorCode::dimension_mismatch,
                    "GridDensity1D: grid and density lengths differ");
    for (Index k = 0; k + 1 < grid_.size(); ++k) {
      detail::require(grid_[k] < grid_[k + 1], ErrorCode::invalid_argument,
                      "GridDensity1D: grid must be strictly increasing");
    }
    for (Index k = 0; k < density_.size(); ++k) {
      detail::require(std::isfinite(density_[k]) && density_[k] >= 0.0,
                      ErrorCode::invalid_argument, "GridDensity1D: density must be >= 0");
    }
    const double mass = total_mass();
    detail::require(mass > 0.0 && std::isfinite(mass), ErrorCode::invalid_argument,
                    "GridDensity1D: total mass must be in (0, inf)");
  }

  /// Samples `f` on a uniform grid of `n` nodes over [lo, hi].
  static GridDensity1D sample(double lo, double hi, Index n, const std::function<double(double)>& f) {
    Vector x = Vector::LinSpaced(n, lo, hi);
    Vector rho(n);
    for (Index k = 0; k < n; ++k) rho[k] = f(x[k]);
    return GridDensity1D(std::move(x), std::move(rho));
  }

  const Vector& grid() const noexcept { return grid_; }
  const Vector& density() const noexcept { return density_; }
  Index size() const noexcept { return grid_.size(); }

  Vector cell_masses() const {
    Vector m(grid_.size() - 1);
    for (Index k = 0; k + 1 < grid_.size(); ++k)
      m[k] = 0.5 * (grid_[k + 1] - grid_[k]) * (density_[k] + density_[k + 1]);
    return m;
  }

  double total_mass() const { return cell_masses().sum(); }

  double max_step() const {
    double h = 0.0;
    for (Index k = 0; k + 1 < grid_.size(); ++k) h = std::max(h, grid_[k + 1] - grid_[k]);
    return h;
  }

  bool is_probability(const Tolerances& tol = default_tolerances()) const {
    return std::abs(total_mass() - 1.0) <= tol.normalization;
  }

  GridDensity1D normalized() const { return GridDensity1D(grid_, density_ / total_mass()); }

  /// Cell midpoints carrying the cell masses.
  DiscreteMeasure to_discrete() const {
    const Vector m = cell_masses();
    Matrix p(m.size(), 1);
    for (Index k = 0; k < m.size(); ++k) p(k, 0) = 0.5 * (grid_[k] + grid_[k + 1]);
    return DiscreteMeasure(std::move(p), m);
  }

 private:
  Vector grid_;
  Vector density_;
};

enum class CostKind { sq_euclidean, euclidean, p_power, zero_one, explicit_matrix };

struct CostSpec {
  CostKind kind = CostKind::sq_euclidean;
  double p = 2.0;
  std::optional<Matrix> matrix;

  static CostSpec sq_euclidean() { return {CostKind::sq_euclidean, 2.0, std::nullopt}; }
  static CostSpec euclidean() { return {CostKind::euclidean, 1.0, std::nullopt}; }
  static CostSpec p_power(double p) {
    detail::require(p >= 1.0, ErrorCode::invalid_argument, "p_power cost requires p >= 1");
    return {CostKind::p_power, p, std::nullopt};
  }
  static CostSpec zero_one() { return {CostKind::zero_one, 1.0, std::nullopt}; }
  static CostSpec explicit_matrix(Matrix m) {
    detail::require(m.allFinite(), ErrorCode::invalid_argument,
                    "explicit cost matrix must be finite");
    return {CostKind::explicit_matrix, 1.0, std::move(m)};
  }
};

/// c(x, y) for the pointwise cost kinds.
inline double evaluate_cost(const CostSpec& spec, const Eigen::Ref<const Vector>& x,
                            const Eigen::Ref<const Vector>& y,
                            const Tolerances& tol = default_tolerances()) {
  switch (spec.kind) {
    case CostKind::sq_euclidean: return (x - y).squaredNorm();
    case CostKind::euclidean: return (x - y).norm();
    case CostKind::p_power: return std::pow((x - y).norm(), spec.p);
    case CostKind::zero_one: return (x - y).lpNorm<Eigen::Infinity>() <= tol.equality ? 0.0 : 1.0;
    case CostKind::explicit_matrix: break;
  }
  detail::fail(ErrorCode::invalid_argument, "evaluate_cost: explicit matrices have no pointwise form");
}

inline Matrix build_cost_matrix(const DiscreteMeasure& a, const DiscreteMeasure& b,
                                const CostSpec& spec,
                                const Tolerances& tol = default_tolerances()) {
  if (spec.kind == CostKind::explicit_matrix) {
    detail::require(spec.matrix.has_value(), ErrorCode::invalid_argument,
                    "explicit_matrix cost without a matrix");
    detail::require(spec.matrix->rows() == a.size() && spec.matrix->cols() == b.size(),
                    ErrorCode::dimension_mismatch, "explicit cost matrix has the wrong shape");
    return *spec.matrix;
  }
  detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch,
                  "build_cost_matrix: point dimensions differ");
  Matrix c(a.size(), b.size());
  for (Index i = 0; i < a.size(); ++i) {
    const Vector x = a.point(i);
    for (Index j = 0; j < b.size(); ++j) c(i, j) = evaluate_cost(spec, x, b.point(j), tol);
  }
  return c;
}

/// Pairwise Euclidean distances between the atoms of one cloud.
inline Matrix pairwise_distances(const Matrix& points) {
  const Index n = points.rows();
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d(i, j) = (points.row(i) - points.row(j)).norm();
  return d;
}

/// Nonnegative transport plan together with its marginals.
class Coupling {
 public:
  Coupling(Matrix plan, Vector row_marginal, Vector col_marginal,
           const Tolerances& tol = default_tolerances())
      : plan_(std::move(plan)), row_(std::move(row_marginal)), col_(std::move(col_marginal)) {
    detail::require(plan_.rows() == row_.size() && plan_.cols() == col_.size(),
                    ErrorCode::dimension_mismatch, "Coupling: marginal sizes do not match plan");
    detail::require(plan_.allFinite() && (plan_.size() == 0 || plan_.minCoeff() >= 0.0),
                    ErrorCode::invalid_argument, "Coupling: plan must be finite and nonnegative");
    const double row_err = (plan_.rowwise().sum() - row_).lpNorm<Eigen::Infinity>();
    const double col_err = (plan_.colwise().sum().transpose() - col_).lpNorm<Eigen::Infinity>();
    detail::require(plan_.size() == 0 || (row_err <= tol.marginal && col_err <= tol.marginal),
                    ErrorCode::infeasible, "Coupling: plan marginals do not match");
  }

  /// Coupling whose marginals are read off the plan.
  static Coupling from_plan(Matrix plan) {
    Vector r = plan.rowwise().sum();
    Vector c = plan.colwise().sum().transpose();
    return Coupling(std::move(plan), std::move(r), std::move(c));
  }

  const Matrix& plan() const noexcept { return plan_; }
  const Vector& row_marginal() const noexcept { return row_; }
  const Vector& col_marginal() const noexcept { return col_; }
  Index rows() const noexcept { return plan_.rows(); }
  Index cols() const noexcept { return plan_.cols(); }

  double cost(const Matrix& c) const { return (plan_.array() * c.array()).sum(); }

  Index nonzeros() const { return (plan_.array() > 0.0).count(); }

  Coupling transpose() const { return Coupling(Unchecked{}, plan_.transpose(), col_, row_); }

 private:
  struct Unchecked {};
  Coupling(Unchecked, Matrix plan, Vector row, Vector col)
      : plan_(std::move(plan)), row_(std::move(row)), col_(std::move(col)) {}

  Matrix plan_;
  Vector row_;
  Vector col_;
};

/// Dual variables (f, g). epsilon == 0 means the unregularized problem.
struct DualPotentials {
  Vector f;
  Vector g;
  double epsilon = 0.0;
};

/// T#a: atoms move, weights stay. Atoms landing within tol.equality of each
/// other (sup norm) are merged, keeping first-occurrence order.
inline DiscreteMeasure pushforward(const DiscreteMeasure& a,
                                   const std::function<Vector(const Vector&)>& map,
                                   const Tolerances& tol = default_tolerances()) {
  std::vector<Vector> pts;
  std::vector<double> ws;
  for (Index i = 0; i < a.size(); ++i) {
    Vector y = map(a.point(i));
    bool merged = false;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (pts[k].size() == y.size() && (pts[k] - y).lpNorm<Eigen::Infinity>() <= tol.equality) {
        ws[k] += a.weights()[i];
        merged = true;
        break;
      }
    }
    if (!merged) {
      pts.push_back(std::move(y));
      ws.push_back(a.weights()[i]);
    }
  }
  detail::require(!pts.empty(), ErrorCode::invalid_argument, "pushforward: empty measure");
  const Index d = pts.front().size();
  Matrix p(Index(pts.size()), d);
  Vector w(Index(ws.size()));
  for (std::size_t k = 0; k < pts.size(); ++k) {
    detail::require(pts[k].size() == d, ErrorCode::dimension_mismatch,
                    "pushforward: map returned vectors of varying dimension");
    p.row(Index(k)) = pts[k].transpose();
    w[Index(k)] = ws[k];
  }
  return DiscreteMeasure(std::move(p), std::move(w));
}

/// Cumulative function and its pseudo-inverse for a normalized 1-D measure.
/// Discrete measures give a right-continuous step cdf; grid densities give a
/// piecewise-linear cdf.
class Distribution1D {
 public:
  explicit Distribution1D(const DiscreteMeasure& m, const Tolerances& tol = default_tolerances())
      : linear_(false) {
    detail::require(m.dim() == 1, ErrorCode::dimension_mismatch,
                    "cdf_and_quantile: measure is not 1-D");
    detail::require(m.is_probability(tol), ErrorCode::invalid_argument,
                    "cdf_and_quantile: measure is not normalized");
    std::vector<Index> order(static_cast<std::size_t>(m.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index i, Index j) { return m.points()(i, 0) < m.points()(j, 0); });
    double acc = 0.0;
    for (Index i : order) {
      const double x = m.points()(i, 0);
      acc += m.weights()[i];
      if (!knots_.empty() && knots_.back() == x) {
        cum_.back() = acc;
      } else {
        knots_.push_back(x);
        cum_.push_back(acc);
      }
    }
    cum_.back() = 1.0;
  }

  explicit Distribution1D(const GridDensity1D& g, const Tolerances& tol = default_tolerances())
      : linear_(true) {
    detail::require(g.is_probability(tol), ErrorCode::invalid_argument,
                    "cdf_and_quantile: grid density is not normalized");
    const Vector masses = g.cell_masses();
    knots_.assign(g.grid().data(), g.grid().data() + g.size());
    cum_.resize(knots_.size());
    cum_[0] = 0.0;
    for (Index k = 0; k < masses.size(); ++k) cum_[std::size_t(k) + 1] = cum_[std::size_t(k)] + masses[k];
    cum_.back() = 1.0;
  }

  double cdf(double x) const {
    if (x < knots_.front()) return 0.0;
    if (x >= knots_.back()) return 1.0;
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    const std::size_t k = std::size_t(it - knots_.begin()) - 1;
    if (!linear_) return cum_[k];
    const double t = (x - knots_[k]) / (knots_[k + 1] - knots_[k]);
    return cum_[k] + t * (cum_[k + 1] - cum_[k]);
  }

  /// min { x : cdf(x) >= r }, with r clamped to [0, 1].
  double quantile(double r) const {
    if (r <= cum_.front()) return knots_.front();
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), r);
    if (it == cum_.end()) return knots_.back();
    const std::size_t k = std::size_t(it - cum_.begin());
    if (!linear_ || k == 0) return knots_[k];
    const double t = (r - cum_[k - 1]) / (cum_[k] - cum_[k - 1]);
    return knots_[k - 1] + t * (knots_[k] - knots_[k - 1]);
  }

  bool piecewise_linear() const noexcept { return linear_; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& cumulative() const noexcept { return cum_; }

 private:
  bool linear_;
  std::vector<double> knots_;
  std::vector<double> cum_;
};

inline Distribution1D cdf_and_quantile(const DiscreteMeasure& m) { return Distribution1D(m); }
inline Distribution1D cdf_and_quantile(const GridDensity1D& g) { return Distribution1D(g); }

inline Coupling product_coupling(const Vector& a, const Vector& b) {
  return Coupling(a * b.transpose(), a, b);
}

inline Coupling product_coupling(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  return product_coupling(a.weights(), b.weights());
}

struct GlueResult {
  /// slabs[j](i, k) = S_{ijk} = P_ij Q_jk / b_j (all zero when b_j = 0).
  std::vector<Matrix> slabs;
  Coupling composed;
};

inline GlueResult glue(const Coupling& p, const Coupling& q,
                       const Tolerances& tol = default_tolerances()) {
  detail::require(p.cols() == q.rows(), ErrorCode::dimension_mismatch,
                  "glue: inner dimensions differ");
  const Vector& b = p.col_marginal();
  detail::require((b - q.row_marginal()).lpNorm<Eigen::Infinity>() <= tol.marginal,
                  ErrorCode::infeasible, "glue: inner marginals do not agree");
  std::vector<Matrix> slabs;
  slabs.reserve(std::size_t(b.size()));
  Matrix composed = Matrix::Zero(p.rows(), q.cols());
  for (Index j = 0; j < b.size(); ++j) {
    if (b[j] > 0.0) {
      Matrix s = p.plan().col(j) * q.plan().row(j) / b[j];
      composed += s;
      slabs.push_back(std::move(s));
    } else {
      slabs.push_back(Matrix::Zero(p.rows(), q.cols()));
    }
  }
  Coupling r(composed, p.row_marginal(), q.col_marginal(), tol);
  return {std::move(slabs), std::move(r)};
}

}  // namespace ot
