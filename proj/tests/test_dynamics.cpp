#include "ot/dynamics.hpp"
#include "ot/exact.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

using namespace ot;

namespace {

FunctionalSpec half_square(Index d) {
  return FunctionalSpec::linear(d, [](const Vector& x) { return 0.5 * x.squaredNorm(); },
                                [](const Vector& x) { return x; });
}

FunctionalSpec quartic(Index d) {
  return FunctionalSpec::linear(
      d, [](const Vector& x) { return 0.5 * x.squaredNorm() + 0.25 * x.squaredNorm() * x.squaredNorm(); },
      [](const Vector& x) { return Vector((1.0 + x.squaredNorm()) * x); });
}

FunctionalSpec quadratic_interaction(Index d) {
  return FunctionalSpec::interaction(d, [](const Vector& x, const Vector& y) { return 0.5 * (x - y).squaredNorm(); },
                                     [](const Vector& x, const Vector& y) { return Vector(x - y); });
}

double spread(const Matrix& x) { return (x.rowwise() - x.colwise().mean()).norm(); }

double gaussian_pdf(double x, double var) { return std::exp(-x * x / (2 * var)) / std::sqrt(2 * M_PI * var); }

DensityPath sampled_path(const Vector& grid, const std::vector<double>& times,
                         const std::function<double(double, double)>& rho) {
  DensityPath p{grid, times, {}};
  for (double t : times) p.densities.push_back(grid.unaryExpr([&](double x) { return rho(t, x); }));
  return p;
}

Matrix permute_rows(const Matrix& x, const std::vector<Index>& perm) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[std::size_t(i)]);
  return out;
}

}  // namespace

TEST(Dynamics, LinearFlowDecaysExponentially) {
  std::mt19937_64 rng(1);
  const Index n = 5;
  const Matrix x0 = oracle::random_matrix(int(n), 2, rng, -2, 2);
  GradientFlowConfig cfg;
  cfg.dt = 1e-3;
  cfg.horizon = 2.0;
  const auto traj = gradient_flow(half_square(2), x0, cfg);
  ASSERT_EQ(traj.times.size(), 2001u);
  for (std::size_t k = 0; k < traj.times.size(); k += 100) {
    const Matrix expected = std::exp(-traj.times[k] / double(n)) * x0;
    EXPECT_LE((traj.states[k] - expected).norm(), 1e-3 * expected.norm()) << traj.times[k];
  }
  EXPECT_DOUBLE_EQ(traj.times.back(), 2.0);
  EXPECT_EQ(traj.halvings, 0);
}

TEST(Dynamics, InteractionFlowKeepsMeanAndContracts) {
  std::mt19937_64 rng(2);
  const Matrix x0 = oracle::random_matrix(6, 3, rng, -1, 1);
  GradientFlowConfig cfg;
  cfg.dt = 1e-3;
  cfg.horizon = 1.0;
  cfg.velocity = FlowVelocity::wasserstein;
  const auto traj = gradient_flow(quadratic_interaction(3), x0, cfg);
  const Eigen::RowVectorXd mean0 = x0.colwise().mean();
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    EXPECT_LE((traj.states[k].colwise().mean() - mean0).lpNorm<Eigen::Infinity>(), 1e-9 * std::max(1.0, traj.times[k]));
    EXPECT_NEAR(spread(traj.states[k]) / spread(x0), std::exp(-2 * traj.times[k]), 1e-2 * std::exp(-2 * traj.times[k]));
  }
  // Particle velocity carries the 1/n of F(X) = f(empirical measure).
  cfg.velocity = FlowVelocity::particle_gradient;
  const auto slow = gradient_flow(quadratic_interaction(3), x0, cfg);
  EXPECT_NEAR(spread(slow.states.back()) / spread(x0), std::exp(-2.0 / 6.0), 1e-2 * std::exp(-2.0 / 6.0));
}

TEST(Dynamics, ConstantFunctionalFreezes) {
  std::mt19937_64 rng(3);
  const Matrix x0 = oracle::random_matrix(4, 2, rng);
  const auto f = FunctionalSpec::linear(2, [](const Vector&) { return 3.0; }, [](const Vector&) { return Vector::Zero(2); });
  for (auto scheme : {FlowScheme::explicit_euler, FlowScheme::explicit_rk4, FlowScheme::implicit}) {
    GradientFlowConfig cfg;
    cfg.dt = 0.1;
    cfg.scheme = scheme;
    const auto traj = gradient_flow(f, x0, cfg);
    for (const auto& s : traj.states) EXPECT_EQ(s, x0);
  }
}

TEST(Dynamics, FunctionalGradientsAreChecked) {
  EXPECT_THROW(FunctionalSpec::linear(2, [](const Vector& x) { return x.squaredNorm(); },
                                      [](const Vector& x) { return x; }),
               Error);
  EXPECT_THROW(FunctionalSpec::interaction(
                   1, [](const Vector& x, const Vector& y) { return x[0] * x[0] + y[0]; },
                   [](const Vector& x, const Vector&) { return Vector(2 * x); }),
               Error);
  GradientFlowConfig cfg;
  cfg.dt = 0.0;
  EXPECT_THROW(gradient_flow(half_square(1), Matrix::Ones(2, 1), cfg), Error);
  cfg.dt = 0.1;
  EXPECT_THROW(gradient_flow(half_square(2), Matrix::Ones(2, 1), cfg), Error);
}

TEST(Dynamics, ImplicitAndExplicitConvergeAtFirstOrder) {
  std::mt19937_64 rng(4);
  const Matrix x0 = oracle::random_matrix(3, 2, rng, -1, 1);
  const auto f = quartic(2);
  GradientFlowConfig cfg;
  cfg.horizon = 1.0;
  cfg.velocity = FlowVelocity::wasserstein;
  cfg.scheme = FlowScheme::explicit_rk4;
  cfg.dt = 1e-4;
  const Matrix ref = gradient_flow(f, x0, cfg).states.back();
  for (auto scheme : {FlowScheme::explicit_euler, FlowScheme::implicit}) {
    cfg.scheme = scheme;
    std::vector<double> err;
    for (double dt : {0.04, 0.02, 0.01}) {
      cfg.dt = dt;
      err.push_back((gradient_flow(f, x0, cfg).states.back() - ref).norm());
    }
    for (std::size_t k = 0; k + 1 < err.size(); ++k) EXPECT_GE(std::log2(err[k] / err[k + 1]), 0.9);
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double dt : {0.04, 0.02, 0.01, 0.005}) {
    cfg.dt = dt;
    cfg.scheme = FlowScheme::explicit_euler;
    const Matrix e = gradient_flow(f, x0, cfg).states.back();
    cfg.scheme = FlowScheme::implicit;
    const double gap = (gradient_flow(f, x0, cfg).states.back() - e).norm();
    EXPECT_LT(gap, prev);
    prev = gap;
  }
}

TEST(Dynamics, ExplicitStepsHalveUntilEnergyDecreases) {
  std::mt19937_64 rng(5);
  const Matrix x0 = oracle::random_matrix(5, 2, rng, -1, 1);
  GradientFlowConfig cfg;
  cfg.velocity = FlowVelocity::wasserstein;
  cfg.dt = 1.2;  // a full Euler step overshoots: x - mean is scaled by -1.4
  cfg.horizon = 6.0;
  const auto traj = gradient_flow(quadratic_interaction(2), x0, cfg);
  EXPECT_GT(traj.halvings, 0);
  EXPECT_LE(traj.halvings, 3 * 5);
  for (std::size_t k = 0; k + 1 < traj.energy.size(); ++k) EXPECT_LE(traj.energy[k + 1], traj.energy[k]);
}

TEST(Dynamics, MlpGradientMatchesKernelAssembly) {
  std::mt19937_64 rng(6);
  for (auto act : {Activation::linear, Activation::tanh, Activation::sigmoid, Activation::relu}) {
    const MlpModel m{oracle::random_matrix(7, 3, rng, -1, 1), oracle::random_matrix(7, 1, rng, -1, 1), act};
    const Matrix theta = oracle::random_matrix(5, 4, rng, -1, 1);
    const auto f = FunctionalSpec::mlp_risk(m);
    EXPECT_LE((f.gradient(theta) - mlp_wasserstein_gradient(m, theta) / 5.0).lpNorm<Eigen::Infinity>(), 1e-8);
    // Finite differences on the risk itself.
    const Matrix g = f.gradient(theta);
    for (Index i = 0; i < theta.rows(); ++i)
      for (Index c = 0; c < theta.cols(); ++c) {
        Matrix tp = theta, tm = theta;
        tp(i, c) += 1e-6;
        tm(i, c) -= 1e-6;
        EXPECT_NEAR((f.energy(tp) - f.energy(tm)) / 2e-6, g(i, c), 1e-7);
      }
  }
}

TEST(Dynamics, MlpRiskStartsAtHalfMeanSquareAndDecreases) {
  std::mt19937_64 rng(7);
  const Matrix u = oracle::random_matrix(20, 2, rng, -1, 1);
  const Vector y = oracle::random_matrix(20, 1, rng, -1, 1);
  MlpFlowConfig cfg;
  cfg.n_neurons = 8;
  cfg.dt = 0.05;
  cfg.horizon = 5.0;
  const auto r = mlp_flow(u, y, cfg);
  EXPECT_NEAR(r.risk.front(), 0.5 * y.squaredNorm() / 20.0, 1e-15);
  for (std::size_t k = 0; k + 1 < r.risk.size(); ++k) EXPECT_LE(r.risk[k + 1], r.risk[k]);
  EXPECT_LT(r.risk.back(), r.risk.front());

  cfg.activation = Activation::linear;
  cfg.init_a_scale = 1.0;
  const auto zero = mlp_flow(u, Vector::Zero(20), cfg);
  for (std::size_t k = 0; k + 1 < zero.risk.size(); ++k) EXPECT_LE(zero.risk[k + 1], zero.risk[k]);
  EXPECT_GE(zero.risk.back(), 0.0);
  EXPECT_EQ(zero.trajectory.states.front().rows(), 8);
}

TEST(Dynamics, SingleNeuronMatchesFineReference) {
  // F(w, a) = (a w u - y)^2 / 2 for one sample and one linear neuron.
  const double u = 1.5, y = 1.0, horizon = 1.0;
  auto rhs = [&](const Eigen::Vector2d& th) {
    const double r = th[1] * th[0] * u - y;
    return Eigen::Vector2d(-r * th[1] * u, -r * th[0] * u);
  };
  Eigen::Vector2d ref(0.8, 0.3);
  const double h = 1e-6;
  for (long s = 0; s < long(horizon / h); ++s) {
    const Eigen::Vector2d k1 = rhs(ref), k2 = rhs(ref + 0.5 * h * k1), k3 = rhs(ref + 0.5 * h * k2),
                          k4 = rhs(ref + h * k3);
    ref += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  const auto f = FunctionalSpec::mlp_risk({Matrix::Constant(1, 1, u), Vector::Constant(1, y), Activation::linear});
  Matrix theta0(1, 2);
  theta0 << 0.8, 0.3;
  GradientFlowConfig cfg;
  cfg.dt = 1e-4;
  cfg.horizon = horizon;
  const Vector got = gradient_flow(f, theta0, cfg).states.back().row(0).transpose();
  EXPECT_LE((got - ref).norm(), 1e-3 * ref.norm());
}

TEST(Dynamics, HeatFlowMatchesHeatKernel) {
  const double var0 = 0.25;
  const auto rho0 = GridDensity1D::sample(-6, 6, 601, [&](double x) { return gaussian_pdf(x, var0); });
  EntropyFlowConfig cfg;
  cfg.dt = 1e-4;
  cfg.horizon = 0.1;
  cfg.record_every = 250;
  const auto path = entropy_flow_1d(rho0, GeneralizedEntropy::shannon(), cfg);
  ASSERT_EQ(path.times.size(), 5u);
  EXPECT_DOUBLE_EQ(path.times.back(), 0.1);
  const auto last = path.at(path.times.size() - 1);
  const Vector exact = rho0.grid().unaryExpr([&](double x) { return gaussian_pdf(x, var0 + 2 * 0.1); });
  const double l1 = GridDensity1D(rho0.grid(), (last.density() - exact).cwiseAbs()).total_mass();
  EXPECT_LE(l1, 0.02);
  for (std::size_t k = 0; k < path.times.size(); ++k)
    EXPECT_NEAR(path.at(k).total_mass(), rho0.total_mass(), 1e-12);
}

TEST(Dynamics, PorousMediumConservesMass) {
  const auto rho0 = GridDensity1D::sample(-2, 2, 201, [](double x) { return std::max(0.0, 1.0 - x * x); });
  const double h = 0.02;
  EntropyFlowConfig cfg;
  cfg.dt = 0.9 * h * h / (2 * 2.0 * 1.0);
  cfg.horizon = 0.2;
  cfg.record_every = 50;
  const auto path = entropy_flow_1d(rho0, GeneralizedEntropy::power(2.0), cfg);
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    EXPECT_NEAR(path.at(k).total_mass(), rho0.total_mass(), 1e-12);
    EXPECT_GE(path.densities[k].minCoeff(), 0.0);
  }
  // Spreads: the peak drops.
  EXPECT_LT(path.densities.back().maxCoeff(), 1.0);
}

TEST(Dynamics, EntropyFlowGuards) {
  const auto flat = GridDensity1D::sample(0, 1, 51, [](double) { return 1.0; });
  EntropyFlowConfig cfg;
  cfg.dt = 1e-4;
  cfg.horizon = 0.05;
  const auto path = entropy_flow_1d(flat, GeneralizedEntropy::shannon(), cfg);
  for (const auto& rho : path.densities) EXPECT_EQ(rho, flat.density());

  cfg.dt = 0.51 * 0.02 * 0.02 / 2 * 2;  // just above h^2 / 2
  EXPECT_THROW(entropy_flow_1d(flat, GeneralizedEntropy::shannon(), cfg), Error);
  EXPECT_THROW(entropy_flow_1d(GridDensity1D(Eigen::Vector3d(0, 0.5, 2), Eigen::Vector3d(1, 1, 1)),
                               GeneralizedEntropy::shannon(), EntropyFlowConfig{}),
               Error);
  EXPECT_THROW(GeneralizedEntropy::power(1.0), Error);
}

TEST(Dynamics, FlowMatchVelocityExamples) {
  Matrix x(3, 2), y(3, 2);
  x << 0, 0, 1, 0, 0, 1;
  y << 2, 1, 1, 3, -1, 1;
  const auto paired = CouplingPath::paired(x, y, Vector::Constant(3, 1.0 / 3));
  for (double t : {0.0, 0.3, 1.0})
    for (Index i = 0; i < 3; ++i)
      EXPECT_LE((flow_match_velocity(paired, t, paired.position(i, i, t)) - paired.velocity(i, i)).norm(), 1e-15);

  const CouplingPath fan{Matrix::Zero(1, 1), (Matrix(2, 1) << -1, 1).finished(), Matrix::Constant(1, 2, 0.5)};
  EXPECT_EQ(flow_match_velocity(fan, 0.0, Vector::Zero(1))[0], 0.0);
  EXPECT_EQ(flow_match_velocity(fan, 0.5, Vector::Constant(1, 0.5))[0], 1.0);
  try {
    flow_match_velocity(fan, 0.5, Vector::Constant(1, 0.2));
    ADD_FAILURE() << "expected no_support";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::no_support);
  }
  EXPECT_THROW(flow_match_velocity(fan, 1.5, Vector::Zero(1)), Error);
}

TEST(Dynamics, ProductCouplingHasProductAtoms) {
  std::mt19937_64 rng(8);
  const int n = 3, m = 4;
  const Matrix x = oracle::random_matrix(n, 2, rng), y = oracle::random_matrix(m, 2, rng);
  const Vector a = oracle::random_simplex(n, rng), b = oracle::random_simplex(m, rng);
  const CouplingPath path{x, y, a * b.transpose()};
  EXPECT_EQ(interpolate(path, 0.5).size(), n * m);
  const auto at0 = interpolate(path, 0.0), at1 = interpolate(path, 1.0);
  ASSERT_EQ(at0.size(), n);
  ASSERT_EQ(at1.size(), m);
  for (Index i = 0; i < n; ++i) {
    EXPECT_EQ(at0.point(i), Vector(x.row(i).transpose()));
    EXPECT_NEAR(at0.weights()[i], a[i], 1e-15);
  }
  for (Index j = 0; j < m; ++j) {
    EXPECT_EQ(at1.point(j), Vector(y.row(j).transpose()));
    EXPECT_NEAR(at1.weights()[j], b[j], 1e-15);
  }
}

TEST(Dynamics, IntegratedFlowReachesMatchedTargets) {
  std::mt19937_64 rng(9);
  const Matrix x = oracle::random_matrix(4, 2, rng);
  EXPECT_EQ(integrate_flow_match(CouplingPath::paired(x, x, Vector::Constant(4, 0.25)), x, 0.01), x);

  const auto a = DiscreteMeasure::uniform(oracle::random_matrix(5, 1, rng));
  const auto b = DiscreteMeasure::uniform(oracle::random_matrix(5, 1, rng));
  const auto res = solve_kantorovich(a, b, CostSpec::sq_euclidean());
  const CouplingPath path{a.points(), b.points(), res.coupling.plan()};
  const Matrix end = integrate_flow_match(path, a.points(), 0.01);
  for (Index i = 0; i < 5; ++i) {
    Index j;
    res.coupling.plan().row(i).maxCoeff(&j);
    EXPECT_NEAR(end(i, 0), b.points()(j, 0), 1e-6);
  }
}

TEST(Dynamics, KineticEnergyEqualsSquaredWasserstein) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5, m = 2 + (trial / 5) % 4;
    const DiscreteMeasure a(oracle::random_matrix(n, 2, rng), oracle::random_simplex(n, rng));
    const DiscreteMeasure b(oracle::random_matrix(m, 2, rng), oracle::random_simplex(m, rng));
    const auto res = solve_kantorovich(a, b, CostSpec::sq_euclidean());
    const CouplingPath path{a.points(), b.points(), res.coupling.plan()};
    EXPECT_NEAR(path_kinetic_energy(path), res.cost, 1e-8);
  }
}

TEST(Dynamics, WeakContinuityOnQuadraticTests) {
  std::mt19937_64 rng(11);
  const int n = 3, m = 3;
  const Matrix x = oracle::random_matrix(n, 2, rng), y = oracle::random_matrix(m, 2, rng);
  const CouplingPath path{x, y, oracle::random_simplex(n, rng) * oracle::random_simplex(m, rng).transpose()};
  Matrix q(2, 2);
  q << 1.0, 0.3, 0.3, 2.0;
  const Eigen::Vector2d l(0.5, -1.0);
  auto phi = [&](const Vector& z) { return 0.5 * z.dot(q * z) + l.dot(z); };
  auto integral = [&](double t) {
    const auto alpha = interpolate(path, t);
    double s = 0;
    for (Index k = 0; k < alpha.size(); ++k) s += alpha.weights()[k] * phi(alpha.point(k));
    return s;
  };
  for (double t : {0.2, 0.5, 0.8}) {
    const double h = 1e-4;
    const double lhs = (integral(t + h) - integral(t - h)) / (2 * h);
    const auto alpha = interpolate(path, t);
    double rhs = 0;
    for (Index k = 0; k < alpha.size(); ++k) {
      const Vector z = alpha.point(k);
      rhs += alpha.weights()[k] * flow_match_velocity(path, t, z).dot(q * z + l);
    }
    EXPECT_NEAR(lhs, rhs, 1e-6);
  }
}

TEST(Dynamics, DacorognaMoserTranslation) {
  const double c = 0.7, dt = 0.01, h = 0.01;
  const Vector grid = Vector::LinSpaced(1001, -5, 5);
  const auto path = sampled_path(grid, {0.0, dt, 2 * dt}, [&](double t, double x) { return gaussian_pdf(x - c * t, 0.25); });
  const Vector v = dacorogna_moser_1d(path, 1);
  const double peak = path.densities[1].maxCoeff();
  for (Index i = 0; i < grid.size(); ++i)
    if (path.densities[1][i] > 1e-3 * peak) {
      EXPECT_NEAR(v[i], c, 0.05 * c) << grid[i];
    }
  const Vector r = continuity_residual(path, 1, v);
  EXPECT_LE(r.cwiseAbs().maxCoeff(), h + dt);

  const auto still = sampled_path(grid, {0.0, 0.5}, [&](double, double x) { return gaussian_pdf(x, 1.0); });
  EXPECT_EQ(dacorogna_moser_1d(still, 0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dynamics, DacorognaMoserRecoversScoreOnHeatPath) {
  const double s0 = 0.5, dt = 1e-3;
  const Vector grid = Vector::LinSpaced(801, -4, 4);
  const auto path = sampled_path(grid, {0.1 - dt, 0.1, 0.1 + dt},
                                 [&](double t, double x) { return gaussian_pdf(x, s0 + 2 * t); });
  const Vector v = dacorogna_moser_1d(path, 1);
  const double var = s0 + 0.2;
  const double sd = std::sqrt(var);
  double scale = 0;
  for (Index i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i]) <= 2 * sd) scale = std::max(scale, std::abs(grid[i]) / var);
  for (Index i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i]) <= 2 * sd) {
      EXPECT_NEAR(v[i], grid[i] / var, 0.05 * scale) << grid[i];
    }

  DensityPath holes = path;
  holes.densities[1][0] = 0.0;
  EXPECT_THROW(dacorogna_moser_1d(holes, 1), Error);
}

TEST(Dynamics, TransformerIsPermutationEquivariant) {
  std::mt19937_64 rng(12);
  const Matrix x = oracle::random_matrix(7, 3, rng, -1, 1);
  const AttentionParams p{oracle::random_matrix(3, 3, rng, -1, 1), oracle::random_matrix(3, 3, rng, -1, 1),
                          oracle::random_matrix(3, 3, rng, -1, 1)};
  const auto base = transformer_flow(x, p, 5);
  std::vector<Index> perm{3, 0, 6, 1, 5, 2, 4};
  const auto shuffled = transformer_flow(permute_rows(x, perm), p, 5);
  for (std::size_t k = 0; k < base.states.size(); ++k) EXPECT_EQ(shuffled.states[k], permute_rows(base.states[k], perm));
}

TEST(Dynamics, TransformerSpecialCases) {
  std::mt19937_64 rng(13);
  const Matrix x = oracle::random_matrix(5, 2, rng, -1, 1);
  const Matrix id = Matrix::Identity(2, 2), zero = Matrix::Zero(2, 2);
  const auto toward_mean = transformer_flow(x, {zero, zero, id}, 4);
  const Matrix one_layer = x.rowwise() + x.colwise().mean() / 4.0;
  EXPECT_LE((toward_mean.states[1] - one_layer).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_LT(spread(toward_mean.states.back() ), spread(x) + 1e-15);

  const auto frozen = transformer_flow(x, {id, id, zero}, 10);
  EXPECT_EQ(frozen.states.back(), x);

  Matrix v(2, 2);
  v << 0.2, -0.7, 0.5, 0.1;
  const Matrix single = Matrix::Constant(1, 2, 0.8);
  const Vector out = transformer_flow(single, {id, id, v}, 1000).states.back().row(0).transpose();
  const Vector expected = v.exp() * single.row(0).transpose();
  EXPECT_LE((out - expected).norm(), 1e-3 * expected.norm());
  EXPECT_THROW(transformer_flow(x, {id, id, v}, 0), Error);
}

TEST(Dynamics, AttentionFieldJacobianSymmetricForGradientCase) {
  std::mt19937_64 rng(14);
  const Matrix tokens = oracle::random_matrix(6, 3, rng, -1, 1);
  const Vector w = Vector::Constant(6, 1.0 / 6);
  const Matrix q = oracle::random_matrix(3, 3, rng, -1, 1), k = oracle::random_matrix(3, 3, rng, -1, 1);
  auto jacobian = [&](const AttentionParams& p, const Vector& z) {
    Matrix j(3, 3);
    for (Index c = 0; c < 3; ++c) {
      Vector zp = z, zm = z;
      zp[c] += 1e-6;
      zm[c] -= 1e-6;
      j.col(c) = (attention_field(tokens, w, p, zp) - attention_field(tokens, w, p, zm)) / 2e-6;
    }
    return j;
  };
  double asym_general = 0;
  for (int s = 0; s < 10; ++s) {
    const Vector z = oracle::random_matrix(3, 1, rng, -1, 1);
    const Matrix j = jacobian({q, k, q.transpose() * k}, z);
    EXPECT_LE((j - j.transpose()).cwiseAbs().maxCoeff(), 1e-6);
    const Matrix jg = jacobian({q, k, oracle::random_matrix(3, 3, rng, -1, 1)}, z);
    asym_general = std::max(asym_general, (jg - jg.transpose()).cwiseAbs().maxCoeff());
  }
  EXPECT_GT(asym_general, 1e-3);
}
