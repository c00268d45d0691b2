#include "ot/divergences.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ot;

namespace {

const std::vector<EntropyFunction>& presets() {
  static const std::vector<EntropyFunction> all{EntropyFunction::kl(), EntropyFunction::tv(), EntropyFunction::chi2()};
  return all;
}

double mmd_quadruple_loop(const DiscreteMeasure& a, const DiscreteMeasure& b, const KernelSpec& k) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    for (Index i2 = 0; i2 < a.size(); ++i2)
      for (Index j = 0; j < b.size(); ++j)
        for (Index j2 = 0; j2 < b.size(); ++j2)
          s += a.weights()[i] * a.weights()[i2] * b.weights()[j] * b.weights()[j2] *
               (k(a.point(i), a.point(i2)) + k(b.point(j), b.point(j2)) - 2.0 * k(a.point(i), b.point(j)));
  return s;
}

DiscreteMeasure dirac(double x) { return DiscreteMeasure(Matrix::Constant(1, 1, x), Vector::Ones(1)); }

}  // namespace

TEST(Divergences, Examples) {
  const Eigen::Vector2d half(0.5, 0.5);
  EXPECT_EQ(phi_divergence(half, half, EntropyFunction::kl()), 0.0);
  EXPECT_NEAR(phi_divergence(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), EntropyFunction::tv()), 2.0, 1e-15);
  EXPECT_EQ(phi_divergence(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, 0), EntropyFunction::kl()),
            std::numeric_limits<double>::infinity());
  EXPECT_EQ(phi_divergence(Eigen::Vector2d(1, 0), Eigen::Vector2d(0.5, 0.5), EntropyFunction::kl()), std::log(2.0));
  EXPECT_THROW(phi_divergence(Eigen::Vector2d(-0.1, 1.1), half, EntropyFunction::kl()), Error);
  EXPECT_THROW(EntropyFunction::by_name("hellinger"), Error);
}

TEST(Divergences, TvIsL1OnProbabilities) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 7;
    const Vector a = oracle::random_simplex(n, rng), b = oracle::random_simplex(n, rng);
    EXPECT_NEAR(phi_divergence(a, b, EntropyFunction::tv()), (a - b).lpNorm<1>(), 1e-14);
  }
}

TEST(Divergences, JensenPositivity) {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution holes(0.2);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 9;
    Vector a = oracle::random_simplex(n, rng), b = oracle::random_simplex(n, rng);
    for (int i = 0; i < n; ++i) {
      if (holes(rng)) a[i] = 0.0;
      if (holes(rng)) b[i] = 0.0;
    }
    if (a.sum() == 0.0 || b.sum() == 0.0) continue;
    a /= a.sum();
    b /= b.sum();
    for (const auto& phi : presets()) EXPECT_GE(phi_divergence(a, b, phi), -1e-14) << phi.name;
    EXPECT_NEAR(phi_divergence(a, a, EntropyFunction::kl()), 0.0, 1e-15);
  }
}

TEST(Divergences, HomogeneityAndConvexity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 6;
    const Vector a = oracle::random_simplex(n, rng, 0.05), b = oracle::random_simplex(n, rng, 0.05);
    const Vector a2 = oracle::random_simplex(n, rng, 0.05), b2 = oracle::random_simplex(n, rng, 0.05);
    for (const auto& phi : presets()) {
      const double d = phi_divergence(a, b, phi);
      for (double s : {0.1, 2.0, 7.5}) EXPECT_NEAR(phi_divergence(s * a, s * b, phi), s * d, 1e-12 * s) << phi.name;
      EXPECT_LE(phi_divergence(0.5 * (a + a2), 0.5 * (b + b2), phi),
                0.5 * d + 0.5 * phi_divergence(a2, b2, phi) + 1e-14)
          << phi.name;
    }
  }
}

TEST(Divergences, UnionSupportAlignment) {
  Matrix pa(2, 1), pb(2, 1);
  pa << 0, 1;
  pb << 1, 2;
  const DiscreteMeasure a(pa, Eigen::Vector2d(0.5, 0.5)), b(pb, Eigen::Vector2d(0.5, 0.5));
  const auto al = align_supports(a, b);
  ASSERT_EQ(al.points.rows(), 3);
  EXPECT_EQ(al.a, Eigen::Vector3d(0.5, 0.5, 0));
  EXPECT_EQ(al.b, Eigen::Vector3d(0, 0.5, 0.5));
  EXPECT_NEAR(phi_divergence(a, b, EntropyFunction::tv()), 1.0, 1e-15);
  EXPECT_EQ(phi_divergence(a, b, EntropyFunction::kl()), std::numeric_limits<double>::infinity());
}

TEST(Divergences, KlDualPlugInIsTight) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 8;
    const Vector a = oracle::random_simplex(n, rng, 0.01), b = oracle::random_simplex(n, rng, 0.01);
    const Vector f = (a.array() / b.array()).log();
    const double gap = phi_dual_gap(a, b, f, EntropyFunction::kl());
    EXPECT_GE(gap, -1e-10);
    EXPECT_LE(gap, 1e-10);
    EXPECT_EQ(phi_dual_value(a, b, Vector::Zero(n), EntropyFunction::kl()), 0.0);
  }
}

TEST(Divergences, WeakDualityForAllPresets) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const Vector a = oracle::random_simplex(n, rng), b = oracle::random_simplex(n, rng, 0.01);
    const Vector f = Vector::NullaryExpr(n, [&] { return u(rng); });
    for (const auto& phi : presets()) EXPECT_GE(phi_dual_gap(a, b, f, phi), -1e-10) << phi.name;
    // Plug-in phi'(a/b) closes the gap for the differentiable presets.
    for (const auto& phi : {EntropyFunction::kl(), EntropyFunction::chi2()}) {
      Vector star(n);
      for (int i = 0; i < n; ++i) star[i] = phi.derivative(a[i] / b[i]);
      EXPECT_NEAR(phi_dual_gap(a, b, star, phi), 0.0, 1e-10) << phi.name;
    }
  }
}

TEST(Divergences, TvDualWithSign) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 6;
    const Vector a = oracle::random_simplex(n, rng), b = oracle::random_simplex(n, rng);
    const Vector f = (a - b).array().sign();
    EXPECT_NEAR(phi_dual_value(a, b, f, EntropyFunction::tv()), phi_divergence(a, b, EntropyFunction::tv()), 1e-14);
    Vector outside = f;
    outside[0] = 1.5;
    EXPECT_EQ(phi_dual_value(a, b, outside, EntropyFunction::tv()), -std::numeric_limits<double>::infinity());
  }
}

TEST(Divergences, KlReferenceShift) {
  std::mt19937_64 rng(7);
  const auto kl = EntropyFunction::kl();
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 4, m = 2 + trial % 5;
    const Matrix raw = oracle::random_matrix(n, m, rng, 0.05, 1);
    const Matrix p = raw / raw.sum();
    const Vector a = p.rowwise().sum(), b = p.colwise().sum().transpose();
    const Vector a2 = oracle::random_simplex(n, rng, 0.05), b2 = oracle::random_simplex(m, rng, 0.05);
    auto flat = [](const Matrix& x) { return Vector(Eigen::Map<const Vector>(x.data(), x.size())); };
    const double lhs = phi_divergence(flat(p), flat(a * b.transpose()), kl);
    const double rhs = phi_divergence(flat(p), flat(a2 * b2.transpose()), kl) - phi_divergence(a, a2, kl) -
                       phi_divergence(b, b2, kl);
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Divergences, MmdExamples) {
  std::mt19937_64 rng(8);
  const DiscreteMeasure a(oracle::random_matrix(4, 2, rng), oracle::random_simplex(4, rng));
  EXPECT_NEAR(mmd_squared(a, a, KernelSpec::gaussian(0.7)), 0.0, 1e-15);
  EXPECT_NEAR(mmd_squared(a, a, KernelSpec::energy()), 0.0, 1e-15);
  for (double d : {0.1, 1.0, 4.0}) EXPECT_NEAR(mmd_squared(dirac(0), dirac(d), KernelSpec::energy()), 2 * d, 1e-15);
  EXPECT_THROW(KernelSpec::gaussian(0), Error);
  EXPECT_THROW(KernelSpec::energy(2.0), Error);
  EXPECT_TRUE(KernelSpec::energy().conditionally_positive());
}

TEST(Divergences, MmdMatchesQuadrupleLoop) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const DiscreteMeasure a(oracle::random_matrix(5, 2, rng), oracle::random_simplex(5, rng));
    const DiscreteMeasure b(oracle::random_matrix(5, 2, rng), oracle::random_simplex(5, rng));
    for (const auto& k : {KernelSpec::gaussian(0.3), KernelSpec::gaussian(2.0), KernelSpec::energy(1.0),
                          KernelSpec::energy(0.5)}) {
      const double v = mmd_squared(a, b, k);
      EXPECT_NEAR(v, mmd_quadruple_loop(a, b, k), 1e-12);
      EXPECT_GE(v, -1e-10);
    }
    Matrix both(10, 2);
    both << a.points(), b.points();
    const auto custom = KernelSpec::custom(KernelSpec::gaussian(0.3).gram(both, both));
    EXPECT_NEAR(mmd_squared(a, b, custom), mmd_squared(a, b, KernelSpec::gaussian(0.3)), 1e-12);
  }
}

TEST(Divergences, MmdMetrizesConvergenceOfDiracs) {
  const auto k = KernelSpec::gaussian(1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double h : {1.0, 0.5, 0.1, 0.01, 1e-4}) {
    const double v = mmd_squared(dirac(h), dirac(0), k);
    EXPECT_LT(v, prev);
    prev = v;
    EXPECT_NEAR(phi_divergence(dirac(h), dirac(0), EntropyFunction::tv()), 2.0, 1e-15);
  }
  EXPECT_LT(prev, 1e-7);
}
