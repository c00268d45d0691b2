#pragma once

// Deterministic invariant battery behind `ot selftest`. Each case reports a
// measured discrepancy against its tolerance.

#include "ot/divergences.hpp"
#include "ot/duality.hpp"
#include "ot/dynamics.hpp"
#include "ot/entropic.hpp"
#include "ot/exact.hpp"
#include "ot/gaussian.hpp"
#include "ot/semidiscrete.hpp"
#include "ot/w1.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace ot {

struct SelftestCase {
  std::string name;
  double value = 0.0;  // discrepancy; the case passes when value <= tolerance
  double tolerance = 0.0;
  bool passed = false;
};

namespace detail {

inline Vector st_simplex(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector w = Vector::NullaryExpr(n, [&] { return u(rng); });
  return w / w.sum();
}

inline Matrix st_points(Index n, Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return Matrix::NullaryExpr(n, d, [&] { return u(rng); });
}

inline double st_brute_assignment(const Matrix& c) {
  std::vector<Index> perm(std::size_t(c.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Index i = 0; i < c.rows(); ++i) s += c(i, perm[std::size_t(i)]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / double(c.rows());
}

}  // namespace detail

inline std::vector<SelftestCase> run_selftest(std::uint64_t seed) {
  std::vector<SelftestCase> out;
  std::mt19937_64 rng(seed);
  auto record = [&](std::string name, double value, double tol) {
    out.push_back({std::move(name), value, tol, std::isfinite(value) && value <= tol});
  };
  auto guarded = [&](const std::string& name, double tol, const std::function<double()>& body) {
    try {
      record(name, body(), tol);
    } catch (const std::exception&) {
      out.push_back({name, std::numeric_limits<double>::infinity(), tol, false});
    }
  };

  guarded("exact_vs_permutations", 1e-8, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + t % 5;
      const auto a = DiscreteMeasure::uniform(detail::st_points(n, 2, rng));
      const auto b = DiscreteMeasure::uniform(detail::st_points(n, 2, rng));
      const Matrix c = build_cost_matrix(a, b, CostSpec::sq_euclidean());
      worst = std::max(worst, std::abs(solve_kantorovich(a.weights(), b.weights(), c).cost - detail::st_brute_assignment(c)));
    }
    return worst;
  });

  guarded("one_d_closed_forms", 1e-8, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const DiscreteMeasure a(detail::st_points(1 + t % 6, 1, rng), detail::st_simplex(1 + t % 6, rng));
      const DiscreteMeasure b(detail::st_points(1 + t % 5, 1, rng), detail::st_simplex(1 + t % 5, rng));
      const double lp = solve_kantorovich(a, b, CostSpec::euclidean()).cost;
      worst = std::max({worst, std::abs(lp - w1_1d_cdf(a, b)), std::abs(lp - solve_1d_sorted(a, b, 1.0).cost)});
    }
    return worst;
  });

  guarded("wasserstein_triangle", 1e-9, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Matrix d = pairwise_distances(detail::st_points(5, 2, rng));
      const Vector a = detail::st_simplex(5, rng), b = detail::st_simplex(5, rng), c = detail::st_simplex(5, rng);
      worst = std::max(worst, wasserstein_p(a, c, d, 2) - wasserstein_p(a, b, d, 2) - wasserstein_p(b, c, d, 2));
    }
    return std::max(worst, 0.0);
  });

  guarded("zero_one_cost_is_half_tv", 1e-10, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + t % 5;
      const Vector a = detail::st_simplex(n, rng), b = detail::st_simplex(n, rng);
      const Matrix c = Matrix::Ones(n, n) - Matrix::Identity(n, n);
      worst = std::max(worst, std::abs(solve_kantorovich(a, b, c).cost - 0.5 * (a - b).lpNorm<1>()));
    }
    return worst;
  });

  guarded("gaussian_1d_closed_form", 1e-12, [&] {
    std::uniform_real_distribution<double> u(0.1, 2.0);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const double ma = u(rng), mb = u(rng), sa = u(rng), sb = u(rng);
      const double w2 = gaussian_w2_squared(GaussianMeasure::scalar(ma, sa), GaussianMeasure::scalar(mb, sb));
      worst = std::max(worst, std::abs(w2 - (ma - mb) * (ma - mb) - (sa - sb) * (sa - sb)));
    }
    return worst;
  });

  guarded("exact_duality_gap", 1e-8, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + t % 6, m = 2 + (t / 6) % 5;
      const Vector a = detail::st_simplex(n, rng), b = detail::st_simplex(m, rng);
      const Matrix c = detail::st_points(n, m, rng);
      worst = std::max(worst, std::abs(duality_gap(solve_kantorovich(a, b, c), c)));
    }
    return worst;
  });

  guarded("c_transform_idempotence", 0.0, [&] {
    double worst = 0.0;
    std::uniform_int_distribution<int> dy(-64, 64);
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + t % 5, m = 2 + t % 4;
      const Vector f = Vector::NullaryExpr(n, [&] { return dy(rng) / 16.0; });
      const Matrix c = Matrix::NullaryExpr(n, m, [&] { return dy(rng) / 16.0; });
      const Vector fc = c_transform(f, c);
      worst = std::max(worst, (c_transform(cbar_transform(fc, c), c) - fc).cwiseAbs().maxCoeff());
    }
    return worst;
  });

  guarded("sinkhorn_marginals", 1e-8, [&] {
    const Vector a = detail::st_simplex(6, rng), b = detail::st_simplex(7, rng);
    const Matrix c = detail::st_points(6, 7, rng);
    SinkhornConfig cfg;
    cfg.epsilon = 0.05;
    cfg.marginal_tol = 1e-10;
    const auto r = sinkhorn(a, b, c, cfg);
    return std::max((r.coupling.plan().rowwise().sum() - a).lpNorm<1>(),
                    (r.coupling.plan().colwise().sum().transpose() - b).lpNorm<1>());
  });

  guarded("sinkhorn_divergence_self", 1e-9, [&] {
    const DiscreteMeasure a(detail::st_points(6, 2, rng), detail::st_simplex(6, rng));
    SinkhornConfig cfg;
    cfg.epsilon = 0.1;
    cfg.marginal_tol = 1e-12;
    return std::abs(sinkhorn_divergence(a, a, CostSpec::sq_euclidean(), cfg));
  });

  guarded("semidiscrete_gradient_balance", 1e-12, [&] {
    const SemiDiscreteProblem p{Sampler::uniform_interval(0, 1), Matrix(Eigen::Vector3d(0.1, 0.5, 0.8)),
                                Eigen::Vector3d(0.2, 0.3, 0.5)};
    return std::abs(semi_discrete_gradient_mc(p, Eigen::Vector3d(0.01, -0.02, 0.0), 2000, seed).gradient.sum());
  });

  guarded("w1_kr_vs_kantorovich", 1e-8, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const DiscreteMeasure a(detail::st_points(4, 2, rng), detail::st_simplex(4, rng));
      const DiscreteMeasure b(detail::st_points(3, 2, rng), detail::st_simplex(3, rng));
      worst = std::max(worst, std::abs(w1_kr_lp(SignedDiscreteMeasure::difference(a, b)).value -
                                       solve_kantorovich(a, b, CostSpec::euclidean()).cost));
    }
    return worst;
  });

  guarded("flat_norm_two_points", 1e-9, [&] {
    double worst = 0.0;
    for (double gap : {0.5, 1.5, 2.0, 3.0}) {
      Matrix p(2, 1);
      p << 0.0, gap;
      worst = std::max(worst, std::abs(flat_norm(SignedDiscreteMeasure(p, Eigen::Vector2d(1, -1))).value - std::min(2.0, gap)));
    }
    return worst;
  });

  guarded("kl_dual_plug_in", 1e-10, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Vector a = detail::st_simplex(5, rng), b = detail::st_simplex(5, rng);
      worst = std::max(worst, std::abs(phi_dual_gap(a, b, (a.array() / b.array()).log().matrix(), EntropyFunction::kl())));
    }
    return worst;
  });

  guarded("mmd_nonnegative", 1e-10, [&] {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const DiscreteMeasure a(detail::st_points(5, 2, rng), detail::st_simplex(5, rng));
      const DiscreteMeasure b(detail::st_points(4, 2, rng), detail::st_simplex(4, rng));
      worst = std::max(worst, -mmd_squared(a, b, KernelSpec::gaussian(0.5)));
    }
    return std::max(worst, 0.0);
  });

  guarded("interaction_mean_conservation", 1e-9, [&] {
    const auto f = FunctionalSpec::interaction(
        2, [](const Vector& x, const Vector& y) { return 0.5 * (x - y).squaredNorm(); },
        [](const Vector& x, const Vector& y) { return Vector(x - y); });
    const Matrix x0 = detail::st_points(6, 2, rng);
    GradientFlowConfig cfg;
    cfg.dt = 1e-2;
    cfg.velocity = FlowVelocity::wasserstein;
    const auto traj = gradient_flow(f, x0, cfg);
    return (traj.states.back().colwise().mean() - x0.colwise().mean()).lpNorm<Eigen::Infinity>();
  });

  guarded("heat_flow_mass", 1e-12, [&] {
    const auto rho = GridDensity1D::sample(-3, 3, 121, [](double x) { return std::exp(-x * x); });
    EntropyFlowConfig cfg;
    cfg.dt = 1e-3;
    cfg.horizon = 0.05;
    const auto path = entropy_flow_1d(rho, GeneralizedEntropy::shannon(), cfg);
    return std::abs(path.at(path.times.size() - 1).total_mass() - rho.total_mass());
  });

  guarded("transformer_equivariance", 0.0, [&] {
    const Matrix x = detail::st_points(5, 2, rng);
    const AttentionParams p{detail::st_points(2, 2, rng), detail::st_points(2, 2, rng), detail::st_points(2, 2, rng)};
    const std::vector<Index> perm{2, 4, 0, 3, 1};
    Matrix xp(5, 2);
    for (Index i = 0; i < 5; ++i) xp.row(i) = x.row(perm[std::size_t(i)]);
    const Matrix y = transformer_flow(x, p, 4).states.back();
    const Matrix yp = transformer_flow(xp, p, 4).states.back();
    double worst = 0.0;
    for (Index i = 0; i < 5; ++i) worst = std::max(worst, (yp.row(i) - y.row(perm[std::size_t(i)])).cwiseAbs().maxCoeff());
    return worst;
  });

  guarded("kinetic_energy_equals_w2", 1e-8, [&] {
    const DiscreteMeasure a(detail::st_points(4, 2, rng), detail::st_simplex(4, rng));
    const DiscreteMeasure b(detail::st_points(5, 2, rng), detail::st_simplex(5, rng));
    const auto r = solve_kantorovich(a, b, CostSpec::sq_euclidean());
    return std::abs(path_kinetic_energy(CouplingPath{a.points(), b.points(), r.coupling.plan()}) - r.cost);
  });

  return out;
}

/// Fixed-width table, one case per line, discrepancies in full precision.
inline std::string format_selftest(const std::vector<SelftestCase>& cases) {
  std::string s;
  char line[256];
  for (const auto& c : cases) {
    std::snprintf(line, sizeof line, "%-32s %-4s %.17g <= %.3g\n", c.name.c_str(), c.passed ? "PASS" : "FAIL", c.value,
                  c.tolerance);
    s += line;
  }
  return s;
}

}  // namespace ot
