#pragma once

// Semi-discrete transport from a sampled source to finitely many targets:
// Laguerre cells by exhaustive argmin, Monte Carlo semi-dual energy and
// gradient, stochastic ascent on the dual weights, and Lloyd quantization.

#include "ot/measures.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ot {

/// Draws i.i.d. rows from the source measure.
struct Sampler {
  std::string name;
  Index dim = 0;
  std::function<Matrix(Index, std::mt19937_64&)> draw;

  Matrix operator()(Index n, std::mt19937_64& rng) const { return draw(n, rng); }

  static Sampler uniform_box(const Vector& lo, const Vector& hi) {
    detail::require(lo.size() == hi.size() && lo.size() > 0, ErrorCode::dimension_mismatch,
                    "uniform_box: bounds differ in size");
    detail::require(((hi - lo).array() > 0.0).all(), ErrorCode::invalid_argument, "uniform_box: empty box");
    return {"uniform_box", lo.size(), [lo, hi](Index n, std::mt19937_64& rng) {
              std::uniform_real_distribution<double> u(0.0, 1.0);
              Matrix x(n, lo.size());
              for (Index i = 0; i < n; ++i)
                for (Index k = 0; k < lo.size(); ++k) x(i, k) = lo[k] + (hi[k] - lo[k]) * u(rng);
              return x;
            }};
  }

  static Sampler uniform_interval(double lo, double hi) {
    return uniform_box(Vector::Constant(1, lo), Vector::Constant(1, hi));
  }

  static Sampler gaussian(const Vector& mean, const Matrix& cov) {
    return mixture({1.0}, {mean}, {cov});
  }

  static Sampler mixture(const std::vector<double>& weights, const std::vector<Vector>& means,
                         const std::vector<Matrix>& covs) {
    detail::require(!weights.empty() && weights.size() == means.size() && weights.size() == covs.size(),
                    ErrorCode::dimension_mismatch, "mixture: component lists differ in length");
    const Index d = means.front().size();
    std::vector<Matrix> factors;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      detail::require(weights[k] >= 0.0 && std::isfinite(weights[k]), ErrorCode::invalid_argument,
                      "mixture: weights must be nonnegative");
      detail::require(means[k].size() == d && covs[k].rows() == d && covs[k].cols() == d,
                      ErrorCode::dimension_mismatch, "mixture: component dimensions differ");
      const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (covs[k] + covs[k].transpose()));
      const Vector lam = es.eigenvalues();
      detail::require(lam.minCoeff() >= -1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff()), ErrorCode::invalid_argument,
                      "mixture: covariance is not positive semi-definite");
      factors.push_back(es.eigenvectors() * lam.cwiseMax(0.0).cwiseSqrt().asDiagonal());
    }
    const std::discrete_distribution<std::size_t> pick_proto(weights.begin(), weights.end());
    return {weights.size() == 1 ? "gaussian" : "mixture", d,
            [means, factors, pick_proto, d](Index n, std::mt19937_64& rng) {
              auto pick = pick_proto;
              std::normal_distribution<double> z;
              Matrix x(n, d);
              Vector e(d);
              for (Index i = 0; i < n; ++i) {
                const std::size_t k = pick(rng);
                for (Index t = 0; t < d; ++t) e[t] = z(rng);
                x.row(i) = (means[k] + factors[k] * e).transpose();
              }
              return x;
            }};
  }
};

struct SemiDiscreteProblem {
  Sampler source;
  Matrix targets;  // m x d
  Vector weights;  // b
  CostSpec cost = CostSpec::sq_euclidean();

  void validate(const Tolerances& tol = default_tolerances()) const {
    detail::require(static_cast<bool>(source.draw), ErrorCode::invalid_argument, "semidiscrete: no source sampler");
    detail::require(targets.rows() >= 1, ErrorCode::invalid_argument, "semidiscrete: need at least one target");
    detail::require(targets.cols() == source.dim, ErrorCode::dimension_mismatch,
                    "semidiscrete: target and source dimensions differ");
    detail::require(weights.size() == targets.rows(), ErrorCode::dimension_mismatch,
                    "semidiscrete: one weight per target required");
    detail::require((weights.array() >= 0.0).all() && std::abs(weights.sum() - 1.0) <= tol.normalization,
                    ErrorCode::invalid_argument, "semidiscrete: target weights must be a probability vector");
    detail::require(cost.kind != CostKind::explicit_matrix, ErrorCode::invalid_argument,
                    "semidiscrete: cost must be a ground cost, not a matrix");
  }
};

namespace detail {

inline std::pair<Index, double> laguerre_locate(const Matrix& targets, const CostSpec& cost, const Vector& g,
                                                const Eigen::Ref<const Vector>& x) {
  Index best = 0;
  double value = evaluate_cost(cost, x, targets.row(0).transpose()) - g[0];
  for (Index j = 1; j < targets.rows(); ++j) {
    const double v = evaluate_cost(cost, x, targets.row(j).transpose()) - g[j];
    if (v < value) {
      value = v;
      best = j;
    }
  }
  return {best, value};
}

}  // namespace detail

/// Cells Lag_j(g) = { x : c(x, y_j) - g_j is minimal }, ties to the lowest j.
class LaguerreAssignment {
 public:
  LaguerreAssignment(const Matrix& targets, CostSpec cost, Vector g)
      : targets_(targets), cost_(std::move(cost)), g_(std::move(g)) {
    detail::require(g_.size() == targets_.rows(), ErrorCode::dimension_mismatch,
                    "LaguerreAssignment: one weight per target required");
  }

  const Vector& g() const noexcept { return g_; }

  /// Cell index and the value c(x, y_j) - g_j there.
  std::pair<Index, double> locate(const Eigen::Ref<const Vector>& x) const {
    return detail::laguerre_locate(targets_, cost_, g_, x);
  }

  Index membership(const Eigen::Ref<const Vector>& x) const { return locate(x).first; }

  /// Fraction of the rows of `x` in each cell.
  Vector cell_masses(const Matrix& x) const {
    Vector counts = Vector::Zero(targets_.rows());
    for (Index i = 0; i < x.rows(); ++i) counts[membership(x.row(i).transpose())] += 1.0;
    return counts / double(x.rows());
  }

 private:
  Matrix targets_;
  CostSpec cost_;
  Vector g_;
};

struct MonteCarloEstimate {
  double value = 0.0;
  double std_err = 0.0;
};

struct GradientEstimate {
  Vector gradient;  // b_j - alpha(Lag_j)
  Vector std_err;
};

/// E(g) = E_x[ min_j c(x, y_j) - g_j ] + <g, b>, averaged over n_samples
/// draws from a generator seeded with `seed`.
inline MonteCarloEstimate semi_discrete_energy_mc(const SemiDiscreteProblem& p, const Vector& g, Index n_samples,
                                                  std::uint64_t seed) {
  p.validate();
  detail::require(n_samples >= 1, ErrorCode::invalid_argument, "semi_discrete_energy_mc: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  const Matrix x = p.source(n_samples, rng);
  const LaguerreAssignment lag(p.targets, p.cost, g);
  const double gb = g.dot(p.weights);
  double mean = 0.0, m2 = 0.0;
  for (Index i = 0; i < n_samples; ++i) {
    const double v = lag.locate(x.row(i).transpose()).second + gb;
    const double delta = v - mean;
    mean += delta / double(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = n_samples > 1 ? m2 / double(n_samples - 1) : 0.0;
  return {mean, std::sqrt(var / double(n_samples))};
}

inline GradientEstimate semi_discrete_gradient_mc(const SemiDiscreteProblem& p, const Vector& g, Index n_samples,
                                                  std::uint64_t seed) {
  p.validate();
  detail::require(n_samples >= 1, ErrorCode::invalid_argument,
                  "semi_discrete_gradient_mc: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  const Matrix x = p.source(n_samples, rng);
  const Vector mass = LaguerreAssignment(p.targets, p.cost, g).cell_masses(x);
  const Vector se = (mass.array() * (1.0 - mass.array()) / double(n_samples)).sqrt();
  return {p.weights - mass, se};
}

struct SgdConfig {
  double tau0 = 1.0;
  double ell0 = 100.0;
  long n_iter = 10000;
  std::uint64_t seed = 0;
  Index holdout_samples = 4000;
  long trace_every = 100;
};

struct SgdTraceRecord {
  long iter;
  double marginal_error;  // || alpha_hat(Lag_j) - b ||_1 on the held-out batch
  double tau;
};

struct SgdResult {
  Vector g;
  std::vector<SgdTraceRecord> trace;
};

/// Stochastic ascent g <- g + tau_l (b - 1_{Lag(g)}(x_l)) with
/// tau_l = tau0 / (1 + l / ell0), one fresh sample per step.
inline SgdResult sgd_solve(const SemiDiscreteProblem& p, const SgdConfig& cfg, Vector g0 = Vector()) {
  p.validate();
  detail::require(cfg.tau0 > 0.0 && cfg.ell0 >= 1.0, ErrorCode::invalid_argument,
                  "sgd_solve: need tau0 > 0 and ell0 >= 1");
  detail::require(cfg.n_iter >= 0 && cfg.holdout_samples >= 1 && cfg.trace_every >= 1,
                  ErrorCode::invalid_argument, "sgd_solve: invalid iteration settings");
  const Index m = p.targets.rows();
  Vector g = g0.size() == 0 ? Vector::Zero(m) : std::move(g0);
  detail::require(g.size() == m, ErrorCode::dimension_mismatch, "sgd_solve: initial g has wrong size");

  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 holdout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const Matrix holdout = p.source(cfg.holdout_samples, holdout_rng);

  SgdResult out;
  auto record = [&](long iter, double tau) {
    const Vector mass = LaguerreAssignment(p.targets, p.cost, g).cell_masses(holdout);
    out.trace.push_back({iter, (mass - p.weights).lpNorm<1>(), tau});
  };
  record(0, cfg.tau0);
  const long batch = 1024;
  for (long done = 0; done < cfg.n_iter;) {
    const long count = std::min(batch, cfg.n_iter - done);
    const Matrix x = p.source(count, rng);
    for (long k = 0; k < count; ++k, ++done) {
      const double tau = cfg.tau0 / (1.0 + double(done) / cfg.ell0);
      const Index j = detail::laguerre_locate(p.targets, p.cost, g, x.row(k).transpose()).first;
      g += tau * p.weights;
      g[j] -= tau;
      if ((done + 1) % cfg.trace_every == 0 || done + 1 == cfg.n_iter) record(done + 1, tau);
    }
  }
  out.g = std::move(g);
  return out;
}

enum class LloydInit { kmeanspp, random };

struct LloydConfig {
  long n_iter = 100;
  std::uint64_t seed = 0;
  Index n_samples = 20000;
  LloydInit init = LloydInit::kmeanspp;
};

struct LloydResult {
  Matrix targets;
  Vector masses;
  double quant_cost = 0.0;
  std::vector<double> cost_history;
  long reseeds = 0;
};

namespace detail {

inline Vector nearest_sq_distance(const Matrix& x, const Matrix& y, Index upto, std::vector<Index>* label) {
  Vector best = Vector::Constant(x.rows(), std::numeric_limits<double>::infinity());
  if (label) label->assign(std::size_t(x.rows()), 0);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < upto; ++j) {
      const double d = (x.row(i) - y.row(j)).squaredNorm();
      if (d < best[i]) {
        best[i] = d;
        if (label) (*label)[std::size_t(i)] = j;
      }
    }
  return best;
}

/// k-means++: first center uniform, then proportional to squared distance.
inline Matrix kmeanspp_seed(const Matrix& x, Index m, std::mt19937_64& rng) {
  Matrix y(m, x.cols());
  std::uniform_int_distribution<Index> first(0, x.rows() - 1);
  y.row(0) = x.row(first(rng));
  for (Index j = 1; j < m; ++j) {
    const Vector d = nearest_sq_distance(x, y, j, nullptr);
    if (d.sum() <= 0.0) {
      y.row(j) = x.row(first(rng));
      continue;
    }
    std::discrete_distribution<Index> pick(d.data(), d.data() + d.size());
    y.row(j) = x.row(pick(rng));
  }
  return y;
}

}  // namespace detail

/// Lloyd iterations for quadratic quantization of the source by m points on a
/// fixed sample set (common random numbers across iterations). Empty cells are
/// reseeded at a random sample.
inline LloydResult lloyd_quantize(const Sampler& source, Index m, const LloydConfig& cfg) {
  detail::require(m >= 1, ErrorCode::invalid_argument, "lloyd_quantize: m must be >= 1");
  detail::require(cfg.n_samples >= m && cfg.n_iter >= 0, ErrorCode::invalid_argument,
                  "lloyd_quantize: need at least m samples");
  std::mt19937_64 rng(cfg.seed);
  const Matrix x = source(cfg.n_samples, rng);
  Matrix y;
  if (cfg.init == LloydInit::kmeanspp) {
    y = detail::kmeanspp_seed(x, m, rng);
  } else {
    y.resize(m, x.cols());
    std::uniform_int_distribution<Index> pick(0, x.rows() - 1);
    for (Index j = 0; j < m; ++j) y.row(j) = x.row(pick(rng));
  }
  std::uniform_int_distribution<Index> pick(0, x.rows() - 1);

  LloydResult out;
  std::vector<Index> label;
  for (long it = 0; it <= cfg.n_iter; ++it) {
    const Vector d = detail::nearest_sq_distance(x, y, m, &label);
    out.cost_history.push_back(d.mean());
    if (it == cfg.n_iter) break;
    Matrix sums = Matrix::Zero(m, x.cols());
    Vector counts = Vector::Zero(m);
    for (Index i = 0; i < x.rows(); ++i) {
      sums.row(label[std::size_t(i)]) += x.row(i);
      counts[label[std::size_t(i)]] += 1.0;
    }
    Matrix next = y;
    for (Index j = 0; j < m; ++j) {
      if (counts[j] > 0.0) {
        next.row(j) = sums.row(j) / counts[j];
      } else {
        next.row(j) = x.row(pick(rng));
        ++out.reseeds;
      }
    }
    const bool fixed = next == y;
    y = std::move(next);
    if (fixed) break;
  }
  const Vector d = detail::nearest_sq_distance(x, y, m, &label);
  Vector counts = Vector::Zero(m);
  for (Index l : label) counts[l] += 1.0;
  out.targets = std::move(y);
  out.masses = counts / double(x.rows());
  out.quant_cost = d.mean();
  return out;
}

}  // namespace ot
