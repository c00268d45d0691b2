#pragma once

// phi-divergences between histograms (with the recession term for mass
// outside the reference support), their Legendre dual bound, and kernel
// discrepancies (MMD).

#include "ot/measures.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace ot {

/// Convex phi on [0, inf) with phi(1) = 0 for the presets. `conjugate` is
/// the Legendre transform restricted to s >= 0, sup_{s>=0} t s - phi(s).
struct EntropyFunction {
  std::string name;
  std::function<double(double)> phi;
  double phi_prime_inf = std::numeric_limits<double>::infinity();
  std::function<double(double)> conjugate;
  /// phi' where it exists; used for the plug-in dual certificate.
  std::function<double(double)> derivative;

  static EntropyFunction kl() {
    return {"kl",
            [](double s) {
              if (s < 0.0) return std::numeric_limits<double>::infinity();
              return s > 0.0 ? s * std::log(s) - s + 1.0 : 1.0;
            },
            std::numeric_limits<double>::infinity(), [](double t) { return std::expm1(t); },
            [](double s) { return std::log(s); }};
  }

  static EntropyFunction tv() {
    return {"tv",
            [](double s) { return s < 0.0 ? std::numeric_limits<double>::infinity() : std::abs(s - 1.0); }, 1.0,
            [](double t) {
              if (t > 1.0) return std::numeric_limits<double>::infinity();
              return t < -1.0 ? -1.0 : t;
            },
            [](double s) { return s > 1.0 ? 1.0 : (s < 1.0 ? -1.0 : 0.0); }};
  }

  static EntropyFunction chi2() {
    return {"chi2",
            [](double s) { return s < 0.0 ? std::numeric_limits<double>::infinity() : (s - 1.0) * (s - 1.0); },
            std::numeric_limits<double>::infinity(), [](double t) { return t >= -2.0 ? t + 0.25 * t * t : -1.0; },
            [](double s) { return 2.0 * (s - 1.0); }};
  }

  static EntropyFunction by_name(const std::string& name) {
    if (name == "kl") return kl();
    if (name == "tv") return tv();
    if (name == "chi2") return chi2();
    detail::fail(ErrorCode::invalid_argument, "unknown entropy function: " + name);
  }
};

namespace detail {

inline void require_nonnegative(const Vector& w, const char* who) {
  require(w.allFinite(), ErrorCode::invalid_argument, std::string(who) + ": non-finite weight");
  require((w.array() >= 0.0).all(), ErrorCode::invalid_argument, std::string(who) + ": negative weight");
}

}  // namespace detail

/// sum_{b_i > 0} phi(a_i / b_i) b_i + phi'_inf sum_{b_i = 0} a_i, with 0 * inf = 0.
inline double phi_divergence(const Vector& a, const Vector& b, const EntropyFunction& phi) {
  detail::require(a.size() == b.size(), ErrorCode::dimension_mismatch, "phi_divergence: sizes differ");
  detail::require_nonnegative(a, "phi_divergence");
  detail::require_nonnegative(b, "phi_divergence");
  double total = 0.0, singular = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    if (b[i] > 0.0) {
      total += phi.phi(a[i] / b[i]) * b[i];
    } else {
      singular += a[i];
    }
  }
  if (singular > 0.0) total += phi.phi_prime_inf * singular;
  return total;
}

/// Both measures re-expressed on the union of their supports (atoms equal
/// within tol.equality in sup norm are identified), zero-padded.
struct AlignedPair {
  Matrix points;
  Vector a;
  Vector b;
};

inline AlignedPair align_supports(const DiscreteMeasure& a, const DiscreteMeasure& b,
                                  const Tolerances& tol = default_tolerances()) {
  detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch, "align_supports: dimensions differ");
  std::vector<Vector> pts;
  std::vector<double> wa, wb;
  auto add = [&](const Vector& x, double w, bool first) {
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if ((pts[k] - x).lpNorm<Eigen::Infinity>() <= tol.equality) {
        (first ? wa : wb)[k] += w;
        return;
      }
    }
    pts.push_back(x);
    wa.push_back(first ? w : 0.0);
    wb.push_back(first ? 0.0 : w);
  };
  for (Index i = 0; i < a.size(); ++i) add(a.point(i), a.weights()[i], true);
  for (Index j = 0; j < b.size(); ++j) add(b.point(j), b.weights()[j], false);
  AlignedPair out{Matrix(Index(pts.size()), a.dim()), Vector(Index(pts.size())), Vector(Index(pts.size()))};
  for (std::size_t k = 0; k < pts.size(); ++k) {
    out.points.row(Index(k)) = pts[k].transpose();
    out.a[Index(k)] = wa[k];
    out.b[Index(k)] = wb[k];
  }
  return out;
}

inline double phi_divergence(const DiscreteMeasure& a, const DiscreteMeasure& b, const EntropyFunction& phi,
                             const Tolerances& tol = default_tolerances()) {
  const auto al = align_supports(a, b, tol);
  return phi_divergence(al.a, al.b, phi);
}

/// <f, a> - sum_i conj(f_i) b_i, a lower bound on D_phi(a | b). Every f_i
/// must lie in the domain of the conjugate (f_i <= phi'_inf), otherwise the
/// bound is -inf.
inline double phi_dual_value(const Vector& a, const Vector& b, const Vector& f, const EntropyFunction& phi) {
  detail::require(a.size() == b.size() && f.size() == a.size(), ErrorCode::dimension_mismatch,
                  "phi_dual_value: sizes differ");
  detail::require(f.allFinite(), ErrorCode::invalid_argument, "phi_dual_value: non-finite potential");
  double total = f.dot(a);
  for (Index i = 0; i < f.size(); ++i) {
    const double c = phi.conjugate(f[i]);
    if (!std::isfinite(c)) return -std::numeric_limits<double>::infinity();
    total -= c * b[i];
  }
  return total;
}

inline double phi_dual_gap(const Vector& a, const Vector& b, const Vector& f, const EntropyFunction& phi) {
  return phi_divergence(a, b, phi) - phi_dual_value(a, b, f, phi);
}

enum class KernelKind { gaussian, energy, custom_matrix };

struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  double sigma = 1.0;  // gaussian bandwidth
  double p = 1.0;      // energy exponent
  /// For custom_matrix: the kernel on the concatenated support [a; b].
  std::optional<Matrix> matrix;

  static KernelSpec gaussian(double sigma) {
    detail::require(std::isfinite(sigma) && sigma > 0.0, ErrorCode::invalid_argument, "gaussian kernel: sigma must be > 0");
    return {KernelKind::gaussian, sigma, 1.0, std::nullopt};
  }

  /// k(x, y) = -|x - y|^p, conditionally positive definite for p in (0, 2).
  static KernelSpec energy(double p = 1.0) {
    detail::require(p > 0.0 && p < 2.0, ErrorCode::invalid_argument, "energy kernel: p must lie in (0, 2)");
    return {KernelKind::energy, 1.0, p, std::nullopt};
  }

  static KernelSpec custom(Matrix k) {
    detail::require(k.rows() == k.cols() && k.allFinite(), ErrorCode::invalid_argument,
                    "custom kernel: matrix must be square and finite");
    return {KernelKind::custom_matrix, 1.0, 1.0, std::move(k)};
  }

  bool conditionally_positive() const { return kind == KernelKind::energy; }

  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
    switch (kind) {
      case KernelKind::gaussian: return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
      case KernelKind::energy: return -std::pow((x - y).norm(), p);
      case KernelKind::custom_matrix: break;
    }
    detail::fail(ErrorCode::invalid_argument, "custom kernels have no pointwise form");
  }

  Matrix gram(const Matrix& x, const Matrix& y) const {
    Matrix k(x.rows(), y.rows());
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < y.rows(); ++j) k(i, j) = (*this)(x.row(i).transpose(), y.row(j).transpose());
    return k;
  }
};

/// sum a a' k + sum b b' k - 2 sum a b k.
inline double mmd_squared(const DiscreteMeasure& a, const DiscreteMeasure& b, const KernelSpec& k) {
  detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch, "mmd_squared: dimensions differ");
  if (k.kind == KernelKind::custom_matrix) {
    const Index n = a.size(), m = b.size();
    detail::require(k.matrix && k.matrix->rows() == n + m, ErrorCode::dimension_mismatch,
                    "mmd_squared: custom kernel must cover both supports");
    Vector w(n + m);
    w << a.weights(), -b.weights();
    return w.dot(*k.matrix * w);
  }
  const Vector& wa = a.weights();
  const Vector& wb = b.weights();
  return wa.dot(k.gram(a.points(), a.points()) * wa) + wb.dot(k.gram(b.points(), b.points()) * wb) -
         2.0 * wa.dot(k.gram(a.points(), b.points()) * wb);
}

}  // namespace ot
