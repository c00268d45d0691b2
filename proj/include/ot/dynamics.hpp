#pragma once

// Evolutions of measures: particle gradient flows (explicit and proximal),
// nonlinear diffusion on a 1-D grid, flow matching along coupling
// interpolations, 1-D velocity recovery from a density path, attention
// dynamics on tokens, and the training flow of a two-layer network.

#include "ot/measures.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace ot {

struct ParticleTrajectory {
  std::vector<double> times;
  std::vector<Matrix> states;  // n x d each
  Vector weights;
  std::vector<double> energy;  // F at each recorded state, when defined
  long halvings = 0;           // step halvings used to keep F nonincreasing
};

enum class Activation { linear, relu, tanh, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  detail::fail(ErrorCode::invalid_argument, "unknown activation: " + s);
}

namespace detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::linear: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

inline double activate_prime(Activation a, double z) {
  switch (a) {
    case Activation::linear: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

/// Deterministic probe points for derivative checks.
inline std::vector<Vector> probe_points(Index dim, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<Vector> out;
  for (int k = 0; k < count; ++k) out.push_back(Vector::NullaryExpr(dim, [&] { return z(rng); }));
  return out;
}

inline void check_gradient(const std::function<double(const Vector&)>& f, const std::function<Vector(const Vector&)>& g,
                           const Vector& x, const char* who) {
  const Vector gx = g(x);
  require(gx.size() == x.size(), ErrorCode::dimension_mismatch, std::string(who) + ": gradient has wrong size");
  for (Index k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const double fd = (f(xp) - f(xm)) / (2.0 * h);
    require(std::abs(fd - gx[k]) <= 1e-5 * std::max(1.0, std::abs(gx[k])), ErrorCode::invalid_argument,
            std::string(who) + ": gradient does not match finite differences");
  }
}

}  // namespace detail

/// Training data and activation for psi(theta, u) = a * sigma(<u, w>) with
/// theta = (w, a) stored as one row of length p + 1.
struct MlpModel {
  Matrix u;  // N x p
  Vector y;  // N
  Activation activation = Activation::linear;

  Index input_dim() const { return u.cols(); }

  /// Predictions (1/n) sum_i psi(theta_i, u_k).
  Vector predict(const Matrix& theta) const {
    const Index n = theta.rows(), p = u.cols();
    Vector out = Vector::Zero(u.rows());
    for (Index i = 0; i < n; ++i) {
      const Vector z = u * theta.row(i).head(p).transpose();
      for (Index k = 0; k < u.rows(); ++k) out[k] += theta(i, p) * detail::activate(activation, z[k]);
    }
    return out / double(n);
  }

  /// (1 / 2N) sum_k (prediction_k - y_k)^2.
  double risk(const Matrix& theta) const { return 0.5 * (predict(theta) - y).squaredNorm() / double(u.rows()); }

  /// grad_theta psi(theta, u_k) as a row of length p + 1.
  Eigen::RowVectorXd psi_gradient(const Eigen::Ref<const Eigen::RowVectorXd>& theta, Index k) const {
    const Index p = u.cols();
    const double z = u.row(k).dot(theta.head(p));
    Eigen::RowVectorXd g(p + 1);
    g.head(p) = theta[p] * detail::activate_prime(activation, z) * u.row(k);
    g[p] = detail::activate(activation, z);
    return g;
  }

  double psi(const Eigen::Ref<const Eigen::RowVectorXd>& theta, Index k) const {
    return theta[u.cols()] * detail::activate(activation, u.row(k).dot(theta.head(u.cols())));
  }
};

/// F(X) = f((1/n) sum_i delta_{x_i}) for one of three functional families.
struct FunctionalSpec {
  enum class Kind { linear, interaction, mlp_risk };

  Kind kind = Kind::linear;
  Index dim = 0;
  std::function<double(const Vector&)> h;
  std::function<Vector(const Vector&)> grad_h;
  std::function<double(const Vector&, const Vector&)> k;
  std::function<Vector(const Vector&, const Vector&)> grad_k;  // in the first argument
  MlpModel mlp;

  /// f(a) = integral of h.
  static FunctionalSpec linear(Index dim, std::function<double(const Vector&)> h,
                               std::function<Vector(const Vector&)> grad_h) {
    FunctionalSpec s;
    s.kind = Kind::linear;
    s.dim = dim;
    s.h = std::move(h);
    s.grad_h = std::move(grad_h);
    for (const auto& x : detail::probe_points(dim, 3, 1)) detail::check_gradient(s.h, s.grad_h, x, "linear functional");
    return s;
  }

  /// f(a) = double integral of a symmetric kernel k.
  static FunctionalSpec interaction(Index dim, std::function<double(const Vector&, const Vector&)> k,
                                    std::function<Vector(const Vector&, const Vector&)> grad_k) {
    FunctionalSpec s;
    s.kind = Kind::interaction;
    s.dim = dim;
    s.k = std::move(k);
    s.grad_k = std::move(grad_k);
    const auto pts = detail::probe_points(dim, 6, 2);
    for (int t = 0; t < 3; ++t) {
      const Vector& x = pts[std::size_t(2 * t)];
      const Vector& y = pts[std::size_t(2 * t + 1)];
      const double kxy = s.k(x, y), kyx = s.k(y, x);
      detail::require(std::abs(kxy - kyx) <= 1e-12 * std::max(1.0, std::abs(kxy)), ErrorCode::invalid_argument,
                      "interaction functional: kernel must be symmetric");
      detail::check_gradient([&](const Vector& z) { return s.k(z, y); }, [&](const Vector& z) { return s.grad_k(z, y); },
                             x, "interaction functional");
    }
    return s;
  }

  /// Square-loss risk of the mean-field two-layer network.
  static FunctionalSpec mlp_risk(MlpModel model) {
    detail::require(model.u.rows() >= 1 && model.u.rows() == model.y.size(), ErrorCode::dimension_mismatch,
                    "mlp_risk: one label per sample required");
    FunctionalSpec s;
    s.kind = Kind::mlp_risk;
    s.dim = model.u.cols() + 1;
    s.mlp = std::move(model);
    return s;
  }

  double energy(const Matrix& x) const {
    const Index n = x.rows();
    switch (kind) {
      case Kind::linear: {
        double e = 0.0;
        for (Index i = 0; i < n; ++i) e += h(x.row(i).transpose());
        return e / double(n);
      }
      case Kind::interaction: {
        double e = 0.0;
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j) e += k(x.row(i).transpose(), x.row(j).transpose());
        return e / (double(n) * double(n));
      }
      case Kind::mlp_risk: return mlp.risk(x);
    }
    return 0.0;
  }

  /// Gradient of F with respect to the particle positions (n x dim).
  Matrix gradient(const Matrix& x) const {
    const Index n = x.rows();
    Matrix g(n, x.cols());
    switch (kind) {
      case Kind::linear:
        for (Index i = 0; i < n; ++i) g.row(i) = grad_h(x.row(i).transpose()).transpose() / double(n);
        break;
      case Kind::interaction:
        for (Index i = 0; i < n; ++i) {
          Vector acc = Vector::Zero(x.cols());
          for (Index j = 0; j < n; ++j) acc += grad_k(x.row(i).transpose(), x.row(j).transpose());
          g.row(i) = 2.0 * acc.transpose() / (double(n) * double(n));
        }
        break;
      case Kind::mlp_risk: {
        const Vector resid = mlp.predict(x) - mlp.y;
        const double scale = 1.0 / (double(mlp.u.rows()) * double(n));
        for (Index i = 0; i < n; ++i) {
          Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
          for (Index k2 = 0; k2 < mlp.u.rows(); ++k2) acc += resid[k2] * mlp.psi_gradient(x.row(i), k2);
          g.row(i) = scale * acc;
        }
        break;
      }
    }
    return g;
  }
};

/// For the network risk: int grad_1 k(theta, .) d alpha + grad g(theta) with
/// k(t, t') = (1/N) sum_k psi(t, u_k) psi(t', u_k) and g(t) = -(1/N) sum_k y_k psi(t, u_k).
/// Equals n times the particle gradient.
inline Matrix mlp_wasserstein_gradient(const MlpModel& m, const Matrix& theta) {
  const Index n = theta.rows(), big_n = m.u.rows();
  Matrix out(n, theta.cols());
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd kernel_part = Eigen::RowVectorXd::Zero(theta.cols());
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < big_n; ++k) kernel_part += m.psi_gradient(theta.row(i), k) * m.psi(theta.row(j), k);
    kernel_part /= double(big_n) * double(n);
    Eigen::RowVectorXd potential_part = Eigen::RowVectorXd::Zero(theta.cols());
    for (Index k = 0; k < big_n; ++k) potential_part -= m.y[k] * m.psi_gradient(theta.row(i), k);
    potential_part /= double(big_n);
    out.row(i) = kernel_part + potential_part;
  }
  return out;
}

enum class FlowScheme { explicit_euler, explicit_rk4, implicit };

/// particle_gradient: dx_i/dt = -grad_{x_i} F(X).
/// wasserstein: dx_i/dt = -n grad_{x_i} F(X), the velocity of the measure flow
/// (gradient of the first variation), which removes the 1/n time scale.
enum class FlowVelocity { particle_gradient, wasserstein };

struct GradientFlowConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  FlowScheme scheme = FlowScheme::explicit_euler;
  FlowVelocity velocity = FlowVelocity::particle_gradient;
  int max_halvings = 3;  // explicit schemes: halve a step while F increases
  double inner_tol = 1e-10;
  long inner_max_iter = 100000;
  long record_every = 1;
};

namespace detail {

inline long step_count(double dt, double horizon) {
  require(std::isfinite(dt) && dt > 0.0, ErrorCode::invalid_argument, "flow: dt must be positive");
  require(std::isfinite(horizon) && horizon >= 0.0, ErrorCode::invalid_argument, "flow: horizon must be >= 0");
  return long(std::ceil(horizon / dt - 1e-9));
}

/// argmin_y |y - x|^2 / (2 dt) + s F(y) by gradient descent with backtracking.
inline Matrix proximal_step(const FunctionalSpec& f, double s, const Matrix& x, double dt, double tol, long max_iter) {
  auto phi = [&](const Matrix& y) { return 0.5 * (y - x).squaredNorm() / dt + s * f.energy(y); };
  Matrix y = x - dt * s * f.gradient(x);
  double value = phi(y);
  double eta = dt;
  for (long it = 0; it < max_iter; ++it) {
    const Matrix gf = s * f.gradient(y);
    const Matrix g = (y - x) / dt + gf;
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm <= tol * std::max(1.0, gf.lpNorm<Eigen::Infinity>())) return y;
    while (true) {
      const Matrix cand = y - eta * g;
      const double cv = phi(cand);
      // Near the minimizer objective decreases drown in rounding; fall back
      // to requiring a smaller gradient there.
      const bool flat = std::abs(cv - value) <= 1e-14 * std::max(1.0, std::abs(value));
      const bool ok = cv <= value - 0.5 * eta * g.squaredNorm() ||
                      (flat && ((cand - x) / dt + s * f.gradient(cand)).lpNorm<Eigen::Infinity>() < 0.5 * gnorm);
      if (ok) {
        y = cand;
        value = cv;
        eta *= 1.5;
        break;
      }
      eta *= 0.5;
      if (eta < 1e-30 * dt) {
        require(gnorm <= 1e-8 * std::max(1.0, gf.lpNorm<Eigen::Infinity>()), ErrorCode::non_convergence,
                "gradient_flow: proximal inner solve stalled");
        return y;
      }
    }
  }
  fail(ErrorCode::non_convergence, "gradient_flow: proximal inner solve did not converge");
}

inline Matrix explicit_step(const FunctionalSpec& f, double s, const Matrix& x, double dt, FlowScheme scheme) {
  if (scheme == FlowScheme::explicit_euler) return x - dt * s * f.gradient(x);
  const Matrix k1 = -s * f.gradient(x);
  const Matrix k2 = -s * f.gradient(x + 0.5 * dt * k1);
  const Matrix k3 = -s * f.gradient(x + 0.5 * dt * k2);
  const Matrix k4 = -s * f.gradient(x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Particle gradient flow sampled every dt up to the horizon (the last step
/// is shortened so that the horizon is hit exactly).
inline ParticleTrajectory gradient_flow(const FunctionalSpec& f, const Matrix& x0, const GradientFlowConfig& cfg) {
  detail::require(x0.rows() >= 1 && x0.cols() == f.dim, ErrorCode::dimension_mismatch,
                  "gradient_flow: particles do not match the functional dimension");
  detail::require(x0.allFinite(), ErrorCode::invalid_argument, "gradient_flow: non-finite initial particles");
  detail::require(cfg.max_halvings >= 0 && cfg.record_every >= 1, ErrorCode::invalid_argument,
                  "gradient_flow: invalid step controls");
  const long steps = detail::step_count(cfg.dt, cfg.horizon);
  const double s = cfg.velocity == FlowVelocity::wasserstein ? double(x0.rows()) : 1.0;

  ParticleTrajectory traj;
  traj.weights = Vector::Constant(x0.rows(), 1.0 / double(x0.rows()));
  Matrix x = x0;
  double e = f.energy(x);
  traj.times.push_back(0.0);
  traj.states.push_back(x);
  traj.energy.push_back(e);
  for (long step = 0; step < steps; ++step) {
    const double t0 = double(step) * cfg.dt;
    const double h = std::min(cfg.dt, cfg.horizon - t0);
    Matrix next;
    double e_next = e;
    if (cfg.scheme == FlowScheme::implicit) {
      next = detail::proximal_step(f, s, x, h, cfg.inner_tol, cfg.inner_max_iter);
      e_next = f.energy(next);
    } else {
      for (int halving = 0;; ++halving) {
        const int pieces = 1 << halving;
        next = x;
        for (int p = 0; p < pieces; ++p) next = detail::explicit_step(f, s, next, h / pieces, cfg.scheme);
        e_next = f.energy(next);
        if (e_next <= e + 1e-14 * std::max(1.0, std::abs(e)) || halving == cfg.max_halvings) {
          traj.halvings += halving;
          break;
        }
      }
    }
    detail::require(next.allFinite(), ErrorCode::non_convergence, "gradient_flow: particles left floating-point range");
    x = std::move(next);
    e = e_next;
    if ((step + 1) % cfg.record_every == 0 || step + 1 == steps) {
      traj.times.push_back(step + 1 == steps ? cfg.horizon : t0 + h);
      traj.states.push_back(x);
      traj.energy.push_back(e);
    }
  }
  return traj;
}

/// g(s) with pressure p(s) = s g'(s) - g(s); the flow is d rho/dt = (p(rho))''.
struct GeneralizedEntropy {
  std::string name;
  std::function<double(double)> g;
  std::function<double(double)> pressure;
  std::function<double(double)> pressure_prime;

  /// g(s) = s log s: pressure s, the heat equation.
  static GeneralizedEntropy shannon() {
    return {"shannon", [](double s) { return s > 0.0 ? s * std::log(s) : 0.0; }, [](double s) { return s; },
            [](double) { return 1.0; }};
  }

  /// g(s) = s^m, m > 1: pressure (m - 1) s^m, the porous-medium equation.
  static GeneralizedEntropy power(double m) {
    detail::require(m > 1.0, ErrorCode::invalid_argument, "power entropy: exponent must exceed 1");
    return {"power", [m](double s) { return std::pow(s, m); }, [m](double s) { return (m - 1.0) * std::pow(s, m); },
            [m](double s) { return m * (m - 1.0) * std::pow(s, m - 1.0); }};
  }
};

struct DensityPath {
  Vector grid;
  std::vector<double> times;
  std::vector<Vector> densities;

  GridDensity1D at(std::size_t k) const { return GridDensity1D(grid, densities.at(k)); }
};

struct EntropyFlowConfig {
  double dt = 1e-5;
  double horizon = 0.1;
  long record_every = 1;
};

/// Explicit zero-flux finite volumes on a uniform grid: node k owns a control
/// volume of width h (h/2 at the ends), so the discrete mass is the trapezoid
/// mass and is conserved up to rounding.
inline DensityPath entropy_flow_1d(const GridDensity1D& rho0, const GeneralizedEntropy& ent,
                                   const EntropyFlowConfig& cfg) {
  const Vector& x = rho0.grid();
  const Index n = x.size();
  const double h = (x[n - 1] - x[0]) / double(n - 1);
  for (Index k = 0; k + 1 < n; ++k)
    detail::require(std::abs(x[k + 1] - x[k] - h) <= 1e-9 * h, ErrorCode::invalid_argument,
                    "entropy_flow_1d: grid must be uniform");
  const long steps = detail::step_count(cfg.dt, cfg.horizon);
  detail::require(cfg.record_every >= 1, ErrorCode::invalid_argument, "entropy_flow_1d: record_every must be >= 1");

  Vector rho = rho0.density();
  double max_slope = 0.0;
  // The scheme is monotone under the bound, so the density range never grows.
  const double lo = rho.minCoeff(), hi = rho.maxCoeff();
  for (int q = 0; q <= 64; ++q) max_slope = std::max(max_slope, ent.pressure_prime(lo + (hi - lo) * q / 64.0));
  detail::require(max_slope <= 0.0 || cfg.dt <= h * h / (2.0 * max_slope), ErrorCode::invalid_argument,
                  "entropy_flow_1d: dt violates the stability bound h^2 / (2 max p')");

  DensityPath path{x, {0.0}, {rho}};
  Vector volume = Vector::Constant(n, h);
  volume[0] = volume[n - 1] = 0.5 * h;
  Vector p(n), flux(n - 1);
  for (long step = 0; step < steps; ++step) {
    const double t0 = double(step) * cfg.dt;
    const double tau = std::min(cfg.dt, cfg.horizon - t0);
    for (Index k = 0; k < n; ++k) p[k] = ent.pressure(rho[k]);
    for (Index k = 0; k + 1 < n; ++k) flux[k] = (p[k + 1] - p[k]) / h;
    for (Index k = 0; k < n; ++k) {
      const double in = (k + 1 < n ? flux[k] : 0.0) - (k > 0 ? flux[k - 1] : 0.0);
      rho[k] += tau * in / volume[k];
    }
    if ((step + 1) % cfg.record_every == 0 || step + 1 == steps) {
      path.times.push_back(step + 1 == steps ? cfg.horizon : t0 + tau);
      path.densities.push_back(rho);
    }
  }
  return path;
}

/// Latent coupling pi between atoms x_i and y_j, interpolated linearly:
/// P_t(x, y) = (1 - t) x + t y.
struct CouplingPath {
  Matrix x;     // n x d
  Matrix y;     // m x d
  Matrix plan;  // n x m, nonnegative

  void validate() const {
    detail::require(x.cols() == y.cols(), ErrorCode::dimension_mismatch, "CouplingPath: dimensions differ");
    detail::require(plan.rows() == x.rows() && plan.cols() == y.rows(), ErrorCode::dimension_mismatch,
                    "CouplingPath: plan shape does not match the atoms");
    detail::require((plan.array() >= 0.0).all() && plan.sum() > 0.0, ErrorCode::invalid_argument,
                    "CouplingPath: plan must be nonnegative with positive mass");
  }

  /// Monge pairing x_i -> y_i with weights w.
  static CouplingPath paired(const Matrix& x, const Matrix& y, const Vector& w) {
    detail::require(x.rows() == y.rows() && w.size() == x.rows(), ErrorCode::dimension_mismatch,
                    "CouplingPath::paired: sizes differ");
    return {x, y, Matrix(w.asDiagonal())};
  }

  Vector position(Index i, Index j, double t) const {
    return ((1.0 - t) * x.row(i) + t * y.row(j)).transpose();
  }
  Vector velocity(Index i, Index j) const { return (y.row(j) - x.row(i)).transpose(); }
};

/// The interpolated measure: one atom per positive plan entry, coincident
/// atoms merged.
inline DiscreteMeasure interpolate(const CouplingPath& path, double t, const Tolerances& tol = default_tolerances()) {
  path.validate();
  std::vector<Index> is, js;
  for (Index i = 0; i < path.plan.rows(); ++i)
    for (Index j = 0; j < path.plan.cols(); ++j)
      if (path.plan(i, j) > 0.0) {
        is.push_back(i);
        js.push_back(j);
      }
  Matrix pts(Index(is.size()), path.x.cols());
  Vector w(Index(is.size()));
  for (std::size_t k = 0; k < is.size(); ++k) {
    pts.row(Index(k)) = path.position(is[k], js[k], t).transpose();
    w[Index(k)] = path.plan(is[k], js[k]);
  }
  return pushforward(DiscreteMeasure(std::move(pts), std::move(w)), [](const Vector& v) { return v; }, tol);
}

/// E[velocity | P_t(u) = z]: plan-weighted mean of y_j - x_i over atoms whose
/// interpolated position lies within `bandwidth` of z.
inline Vector flow_match_velocity(const CouplingPath& path, double t, const Vector& z, double bandwidth = 1e-9) {
  path.validate();
  detail::require(t >= 0.0 && t <= 1.0, ErrorCode::invalid_argument, "flow_match_velocity: t must lie in [0, 1]");
  detail::require(z.size() == path.x.cols(), ErrorCode::dimension_mismatch, "flow_match_velocity: query dimension");
  Vector v = Vector::Zero(z.size());
  double mass = 0.0;
  for (Index i = 0; i < path.plan.rows(); ++i)
    for (Index j = 0; j < path.plan.cols(); ++j) {
      const double w = path.plan(i, j);
      if (w <= 0.0 || (path.position(i, j, t) - z).norm() > bandwidth) continue;
      v += w * path.velocity(i, j);
      mass += w;
    }
  detail::require(mass > 0.0, ErrorCode::no_support, "flow_match_velocity: no atom within bandwidth of the query");
  return v / mass;
}

/// Euler integration of dz/dt = v_t(z) from t = 0 to 1 for each row of x0,
/// with dt rounded down to 1 / ceil(1 / dt).
inline ParticleTrajectory flow_match_trajectory(const CouplingPath& path, const Matrix& x0, double dt,
                                                double bandwidth = 1e-9) {
  const long steps = detail::step_count(dt, 1.0);
  ParticleTrajectory traj;
  traj.weights = Vector::Constant(x0.rows(), 1.0 / double(x0.rows()));
  Matrix z = x0;
  traj.times.push_back(0.0);
  traj.states.push_back(z);
  for (long s = 0; s < steps; ++s) {
    const double t = double(s) / double(steps);
    for (Index r = 0; r < z.rows(); ++r)
      z.row(r) += flow_match_velocity(path, t, z.row(r).transpose(), bandwidth).transpose() / double(steps);
    traj.times.push_back(double(s + 1) / double(steps));
    traj.states.push_back(z);
  }
  return traj;
}

inline Matrix integrate_flow_match(const CouplingPath& path, const Matrix& x0, double dt, double bandwidth = 1e-9) {
  return flow_match_trajectory(path, x0, dt, bandwidth).states.back();
}

/// Midpoint-in-time quadrature of the integral over [0, 1] of int |v_t|^2 d alpha_t.
inline double path_kinetic_energy(const CouplingPath& path, long steps = 16, double bandwidth = 1e-9) {
  path.validate();
  detail::require(steps >= 1, ErrorCode::invalid_argument, "path_kinetic_energy: steps must be >= 1");
  double total = 0.0;
  for (long s = 0; s < steps; ++s) {
    const double t = (double(s) + 0.5) / double(steps);
    double inner = 0.0;
    for (Index i = 0; i < path.plan.rows(); ++i)
      for (Index j = 0; j < path.plan.cols(); ++j)
        if (path.plan(i, j) > 0.0)
          inner += path.plan(i, j) * flow_match_velocity(path, t, path.position(i, j, t), bandwidth).squaredNorm();
    total += inner / double(steps);
  }
  return total;
}

namespace detail {

inline Vector cumulative_trapezoid(const Vector& grid, const Vector& rho) {
  Vector c(grid.size());
  c[0] = 0.0;
  for (Index k = 0; k + 1 < grid.size(); ++k) c[k + 1] = c[k] + 0.5 * (grid[k + 1] - grid[k]) * (rho[k] + rho[k + 1]);
  return c;
}

}  // namespace detail

/// v = -(d/dt C_t) / rho_t at time index k, with C_t the cumulative mass and
/// the time derivative taken by central differences (one-sided at the ends).
inline Vector dacorogna_moser_1d(const DensityPath& path, std::size_t k) {
  const std::size_t count = path.times.size();
  detail::require(count >= 2 && path.densities.size() == count && k < count, ErrorCode::invalid_argument,
                  "dacorogna_moser_1d: need at least two densities and a valid index");
  const Vector& rho = path.densities[k];
  detail::require((rho.array() > 0.0).all(), ErrorCode::no_support,
                  "dacorogna_moser_1d: density vanishes on the grid, velocity undefined");
  const std::size_t lo = k == 0 ? 0 : k - 1;
  const std::size_t hi = k + 1 == count ? k : k + 1;
  const double dt = path.times[hi] - path.times[lo];
  detail::require(dt > 0.0, ErrorCode::invalid_argument, "dacorogna_moser_1d: times must increase");
  const Vector dc = (detail::cumulative_trapezoid(path.grid, path.densities[hi]) -
                     detail::cumulative_trapezoid(path.grid, path.densities[lo])) /
                    dt;
  return -dc.cwiseQuotient(rho);
}

/// d rho/dt + d(rho v)/dx at interior nodes, central differences in both.
inline Vector continuity_residual(const DensityPath& path, std::size_t k, const Vector& v) {
  detail::require(k >= 1 && k + 1 < path.times.size(), ErrorCode::invalid_argument,
                  "continuity_residual: needs an interior time index");
  const Vector& x = path.grid;
  const Vector& rho = path.densities[k];
  const double dt = path.times[k + 1] - path.times[k - 1];
  Vector r = Vector::Zero(x.size());
  for (Index i = 1; i + 1 < x.size(); ++i) {
    const double drho = (path.densities[k + 1][i] - path.densities[k - 1][i]) / dt;
    const double dflux = (rho[i + 1] * v[i + 1] - rho[i - 1] * v[i - 1]) / (x[i + 1] - x[i - 1]);
    r[i] = drho + dflux;
  }
  return r;
}

struct AttentionParams {
  Matrix q;
  Matrix k;
  Matrix v;
};

namespace detail {

/// Lexicographic order of the rows; sums over tokens run in this order so the
/// result does not depend on how the tokens were listed.
inline std::vector<Index> canonical_order(const Matrix& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index c = 0; c < x.cols(); ++c)
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    return false;
  });
  return order;
}

}  // namespace detail

/// Gamma[alpha](z) = sum_j w_j e^{<Qz, K x_j>} V x_j / sum_j w_j e^{<Qz, K x_j>}
/// for the token measure alpha = sum_j w_j delta_{x_j}.
inline Vector attention_field(const Matrix& tokens, const Vector& weights, const AttentionParams& p, const Vector& z) {
  const auto order = detail::canonical_order(tokens);
  const Vector qz = p.q * z;
  std::vector<double> logits(order.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < order.size(); ++r) {
    logits[r] = qz.dot(p.k * tokens.row(order[r]).transpose());
    mx = std::max(mx, logits[r]);
  }
  Vector num = Vector::Zero(p.v.rows());
  double den = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const double w = weights[order[r]] * std::exp(logits[r] - mx);
    num += w * (p.v * tokens.row(order[r]).transpose());
    den += w;
  }
  return num / den;
}

/// Residual attention layers x_i <- x_i + (1/T) Gamma[alpha](x_i), T times,
/// with alpha uniform on the current tokens.
inline ParticleTrajectory transformer_flow(const Matrix& tokens, const AttentionParams& p, long depth) {
  const Index d = tokens.cols();
  detail::require(depth >= 1, ErrorCode::invalid_argument, "transformer_flow: depth must be >= 1");
  detail::require(tokens.rows() >= 1, ErrorCode::invalid_argument, "transformer_flow: need at least one token");
  detail::require(p.q.cols() == d && p.k.cols() == d && p.q.rows() == p.k.rows() && p.v.rows() == d && p.v.cols() == d,
                  ErrorCode::dimension_mismatch, "transformer_flow: parameter shapes do not match the tokens");
  ParticleTrajectory traj;
  const Vector w = Vector::Constant(tokens.rows(), 1.0 / double(tokens.rows()));
  traj.weights = w;
  Matrix x = tokens;
  traj.times.push_back(0.0);
  traj.states.push_back(x);
  for (long layer = 0; layer < depth; ++layer) {
    Matrix next = x;
    for (Index i = 0; i < x.rows(); ++i)
      next.row(i) += attention_field(x, w, p, x.row(i).transpose()).transpose() / double(depth);
    x = std::move(next);
    traj.times.push_back(double(layer + 1) / double(depth));
    traj.states.push_back(x);
  }
  return traj;
}

struct MlpFlowConfig {
  Index n_neurons = 16;
  Activation activation = Activation::tanh;
  double dt = 1e-2;
  double horizon = 1.0;
  std::uint64_t seed = 0;
  double init_w_scale = 1.0;
  double init_a_scale = 0.0;
  FlowVelocity velocity = FlowVelocity::particle_gradient;
  int max_halvings = 3;
};

struct MlpFlowResult {
  ParticleTrajectory trajectory;  // rows theta_i = (w_i, a_i)
  std::vector<double> risk;
};

/// Gradient flow of the mean-field network risk over neuron parameters,
/// initialized with w ~ N(0, init_w_scale^2 I) and a ~ N(0, init_a_scale^2).
inline MlpFlowResult mlp_flow(const Matrix& u, const Vector& y, const MlpFlowConfig& cfg) {
  detail::require(cfg.n_neurons >= 1, ErrorCode::invalid_argument, "mlp_flow: need at least one neuron");
  const auto f = FunctionalSpec::mlp_risk({u, y, cfg.activation});
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> z;
  Matrix theta(cfg.n_neurons, u.cols() + 1);
  for (Index i = 0; i < theta.rows(); ++i) {
    for (Index c = 0; c < u.cols(); ++c) theta(i, c) = cfg.init_w_scale * z(rng);
    theta(i, u.cols()) = cfg.init_a_scale * z(rng);
  }
  GradientFlowConfig gf;
  gf.dt = cfg.dt;
  gf.horizon = cfg.horizon;
  gf.velocity = cfg.velocity;
  gf.max_halvings = cfg.max_halvings;
  MlpFlowResult out{gradient_flow(f, theta, gf), {}};
  out.risk = out.trajectory.energy;
  return out;
}

}  // namespace ot
