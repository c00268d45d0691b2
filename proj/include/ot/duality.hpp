#pragma once

// c-transforms on discrete supports, dual objectives and optimality
// certificates, plus a 1-D monotone-map check.

#include "ot/exact.hpp"
#include "ot/measures.hpp"

#include <limits>
#include <optional>

namespace ot {

/// f^c(y_j) = min_i C_ij - f_i.
inline Vector c_transform(const Vector& f, const Matrix& cost) {
  detail::require(cost.rows() == f.size(), ErrorCode::dimension_mismatch, "c_transform: size mismatch");
  detail::require(f.allFinite() && cost.allFinite(), ErrorCode::invalid_argument, "c_transform: non-finite input");
  Vector g(cost.cols());
  for (Index j = 0; j < cost.cols(); ++j) g[j] = (cost.col(j) - f).minCoeff();
  return g;
}

/// g^cbar(x_i) = min_j C_ij - g_j.
inline Vector cbar_transform(const Vector& g, const Matrix& cost) {
  detail::require(cost.cols() == g.size(), ErrorCode::dimension_mismatch, "cbar_transform: size mismatch");
  detail::require(g.allFinite() && cost.allFinite(), ErrorCode::invalid_argument,
                  "cbar_transform: non-finite input");
  Vector f(cost.rows());
  for (Index i = 0; i < cost.rows(); ++i) f[i] = (cost.row(i).transpose() - g).minCoeff();
  return f;
}

/// Iterates f -> f^c -> f^{c cbar} -> ... for `sweeps` full sweeps and returns
/// the final pair (f, g) with g = f^c. After one sweep the pair is stationary.
inline DualPotentials alternate_c_transforms(Vector f, const Matrix& cost, int sweeps = 1) {
  detail::require(sweeps >= 1, ErrorCode::invalid_argument, "alternate_c_transforms: sweeps must be >= 1");
  Vector g = c_transform(f, cost);
  for (int s = 0; s < sweeps; ++s) {
    f = cbar_transform(g, cost);
    g = c_transform(f, cost);
  }
  return {std::move(f), std::move(g), 0.0};
}

/// Largest f_i + g_j - C_ij with its location.
struct FeasibilityReport {
  double max_excess = -std::numeric_limits<double>::infinity();
  Index i = -1;
  Index j = -1;
};

inline FeasibilityReport feasibility(const DualPotentials& pot, const Matrix& cost) {
  detail::require(cost.rows() == pot.f.size() && cost.cols() == pot.g.size(), ErrorCode::dimension_mismatch,
                  "feasibility: potentials do not match the cost matrix");
  FeasibilityReport r;
  for (Index j = 0; j < cost.cols(); ++j)
    for (Index i = 0; i < cost.rows(); ++i) {
      const double e = pot.f[i] + pot.g[j] - cost(i, j);
      if (e > r.max_excess) r = {e, i, j};
    }
  return r;
}

/// Throws FeasibilityViolation at the worst pair when f + g exceeds C by more
/// than tol.feasibility.
inline void require_feasible(const DualPotentials& pot, const Matrix& cost,
                             const Tolerances& tol = default_tolerances()) {
  const auto r = feasibility(pot, cost);
  if (r.max_excess > tol.feasibility)
    throw FeasibilityViolation("dual potentials violate f_i + g_j <= C_ij", r.i, r.j, r.max_excess);
}

inline double dual_objective(const Vector& a, const Vector& b, const DualPotentials& pot) {
  detail::require(a.size() == pot.f.size() && b.size() == pot.g.size(), ErrorCode::dimension_mismatch,
                  "dual_objective: potentials do not match the marginals");
  return pot.f.dot(a) + pot.g.dot(b);
}

/// Primal cost minus dual value, after checking feasibility.
inline double duality_gap(const TransportResult& result, const DualPotentials& pot, const Matrix& cost,
                          const Tolerances& tol = default_tolerances()) {
  detail::require(pot.epsilon == 0.0, ErrorCode::invalid_argument,
                  "duality_gap: potentials must be unregularized");
  require_feasible(pot, cost, tol);
  const Coupling& p = result.coupling;
  return result.cost - dual_objective(p.row_marginal(), p.col_marginal(), pot);
}

inline double duality_gap(const TransportResult& result, const Matrix& cost,
                          const Tolerances& tol = default_tolerances()) {
  detail::require(result.potentials.has_value(), ErrorCode::invalid_argument, "duality_gap: result has no potentials");
  return duality_gap(result, *result.potentials, cost, tol);
}

/// Largest |f_i + g_j - C_ij| over entries where the plan exceeds `mass_tol`;
/// complementary slackness asks for zero.
inline double support_slack(const Coupling& plan, const DualPotentials& pot, const Matrix& cost,
                            double mass_tol = 0.0) {
  double worst = 0.0;
  for (Index j = 0; j < plan.cols(); ++j)
    for (Index i = 0; i < plan.rows(); ++i)
      if (plan.plan()(i, j) > mass_tol) worst = std::max(worst, std::abs(pot.f[i] + pot.g[j] - cost(i, j)));
  return worst;
}

/// <f, a> + <f^c, b>.
inline double semi_dual_energy(const Vector& f, const Vector& a, const Vector& b, const Matrix& cost) {
  detail::require(a.size() == f.size() && b.size() == cost.cols(), ErrorCode::dimension_mismatch,
                  "semi_dual_energy: size mismatch");
  return f.dot(a) + c_transform(f, cost).dot(b);
}

struct BrenierReport {
  bool monotone = true;
  /// First decreasing step [x0, x1] on the support, when not monotone.
  std::optional<std::pair<double, double>> violation;
  double w1_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return monotone && w1_error <= tolerance; }
};

/// Checks a candidate 1-D map against the optimality criterion: T must be
/// nondecreasing on the support of a, and T#a must match b to within one grid
/// step in W1. The source is discretized at cell midpoints with cell masses.
inline BrenierReport w2_brenier_check(const GridDensity1D& a, const DiscreteMeasure& b,
                                      const std::function<double(double)>& map,
                                      const Tolerances& tol = default_tolerances()) {
  detail::require(b.dim() == 1, ErrorCode::dimension_mismatch, "w2_brenier_check: target is not 1-D");
  const GridDensity1D an = a.normalized();
  const DiscreteMeasure bn = b.normalized();
  const Vector& x = an.grid();
  const Vector mass = an.cell_masses();

  BrenierReport r;
  r.tolerance = an.max_step();
  // Sample each cell with positive mass at its ends and midpoint.
  std::vector<double> xs;
  for (Index k = 0; k < mass.size(); ++k) {
    if (mass[k] <= 0.0) continue;
    const double mid = 0.5 * (x[k] + x[k + 1]);
    for (double s : {x[k], mid, x[k + 1]})
      if (xs.empty() || s > xs.back()) xs.push_back(s);
  }
  double prev = map(xs.front());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const double t = map(xs[k]);
    detail::require(std::isfinite(t), ErrorCode::invalid_argument, "w2_brenier_check: map returned non-finite value");
    if (t < prev - tol.equality * std::max(1.0, std::abs(prev))) {
      r.monotone = false;
      r.violation = std::make_pair(xs[k - 1], xs[k]);
      break;
    }
    prev = t;
  }

  const DiscreteMeasure src = an.to_discrete();
  Matrix moved(src.size(), 1);
  for (Index k = 0; k < src.size(); ++k) moved(k, 0) = map(src.points()(k, 0));
  const DiscreteMeasure pushed(std::move(moved), src.weights() / src.weights().sum());
  r.w1_error = w1_1d_cdf(pushed, bn, tol);
  return r;
}

inline BrenierReport w2_brenier_check(const GridDensity1D& a, const GridDensity1D& b,
                                      const std::function<double(double)>& map,
                                      const Tolerances& tol = default_tolerances()) {
  return w2_brenier_check(a, b.normalized().to_discrete().normalized(), map, tol);
}

}  // namespace ot
