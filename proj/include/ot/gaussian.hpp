#pragma once

// Transport between Gaussian measures: Bures metric on covariances, W2 in
// closed form and the optimal affine map.

#include "ot/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace ot {

namespace detail {

inline void require_symmetric(const Matrix& s, const Tolerances& tol, const char* who) {
  require(s.rows() == s.cols(), ErrorCode::dimension_mismatch, std::string(who) + ": matrix is not square");
  require(s.allFinite(), ErrorCode::invalid_argument, std::string(who) + ": non-finite entry");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  require((s - s.transpose()).cwiseAbs().maxCoeff() <= tol.equality * scale, ErrorCode::invalid_argument,
          std::string(who) + ": matrix is not symmetric");
}

}  // namespace detail

/// Eigenvalues clamped at zero; the unique PSD square root.
inline Matrix sqrtm_psd(const Matrix& s) {
  const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

class GaussianMeasure {
 public:
  GaussianMeasure(Vector mean, Matrix covariance, const Tolerances& tol = default_tolerances())
      : mean_(std::move(mean)), cov_(std::move(covariance)) {
    detail::require(mean_.size() >= 1 && cov_.rows() == mean_.size(), ErrorCode::dimension_mismatch,
                    "GaussianMeasure: covariance size does not match the mean");
    detail::require(mean_.allFinite(), ErrorCode::invalid_argument, "GaussianMeasure: non-finite mean");
    detail::require_symmetric(cov_, tol, "GaussianMeasure");
    cov_ = 0.5 * (cov_ + cov_.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> es(cov_);
    detail::require(es.eigenvalues().minCoeff() >= -tol.equality * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()),
                    ErrorCode::invalid_argument, "GaussianMeasure: covariance is not positive semi-definite");
    if (es.eigenvalues().minCoeff() < 0.0) {
      cov_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    }
  }

  /// 1-D N(m, s^2) from the standard deviation s.
  static GaussianMeasure scalar(double mean, double stddev) {
    return GaussianMeasure(Vector::Constant(1, mean), Matrix::Constant(1, 1, stddev * stddev));
  }

  const Vector& mean() const noexcept { return mean_; }
  const Matrix& covariance() const noexcept { return cov_; }
  Index dim() const noexcept { return mean_.size(); }

 private:
  Vector mean_;
  Matrix cov_;
};

/// tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), clamped at 0.
inline double bures_distance_squared(const Matrix& sa, const Matrix& sb,
                                     const Tolerances& tol = default_tolerances()) {
  detail::require_symmetric(sa, tol, "bures_distance");
  detail::require_symmetric(sb, tol, "bures_distance");
  detail::require(sa.rows() == sb.rows(), ErrorCode::dimension_mismatch, "bures_distance: sizes differ");
  const Matrix ra = sqrtm_psd(sa);
  const Matrix cross = sqrtm_psd(ra * sb * ra);
  const double b2 = sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, b2);
}

inline double bures_distance(const Matrix& sa, const Matrix& sb, const Tolerances& tol = default_tolerances()) {
  return std::sqrt(bures_distance_squared(sa, sb, tol));
}

inline double gaussian_w2_squared(const GaussianMeasure& a, const GaussianMeasure& b) {
  detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch, "gaussian_w2: dimensions differ");
  return (a.mean() - b.mean()).squaredNorm() + bures_distance_squared(a.covariance(), b.covariance());
}

inline double gaussian_w2(const GaussianMeasure& a, const GaussianMeasure& b) {
  return std::sqrt(gaussian_w2_squared(a, b));
}

/// x -> target_mean + A (x - source_mean).
struct AffineMap {
  Matrix a;
  Vector source_mean;
  Vector target_mean;

  Vector operator()(const Vector& x) const { return target_mean + a * (x - source_mean); }
};

inline AffineMap gaussian_monge_map(const GaussianMeasure& a, const GaussianMeasure& b,
                                    const Tolerances& tol = default_tolerances()) {
  detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch, "gaussian_monge_map: dimensions differ");
  const Eigen::SelfAdjointEigenSolver<Matrix> es(a.covariance());
  const Vector lam = es.eigenvalues();
  detail::require(lam.minCoeff() > tol.equality * std::max(1.0, lam.maxCoeff()), ErrorCode::invalid_argument,
                  "gaussian_monge_map: source covariance is singular");
  const Matrix& u = es.eigenvectors();
  const Matrix root = u * lam.cwiseSqrt().asDiagonal() * u.transpose();
  const Matrix inv_root = u * lam.cwiseSqrt().cwiseInverse().asDiagonal() * u.transpose();
  Matrix m = inv_root * sqrtm_psd(root * b.covariance() * root) * inv_root;
  m = 0.5 * (m + m.transpose());
  return {std::move(m), a.mean(), b.mean()};
}

}  // namespace ot
