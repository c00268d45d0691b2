#pragma once

// Shared vocabulary: Eigen aliases, the tolerance bundle and the error type
// every module throws.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace ot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr const char* kVersion = "0.1.0";

/// Central tolerance bundle. Every validating constructor and solver takes one
/// of these (defaulted) so that a test can tighten or loosen all checks at once.
struct Tolerances {
  double marginal = 1e-9;       ///< coupling row/column sums
  double equality = 1e-12;      ///< coincident atoms, symmetric matrices
  double normalization = 1e-12; ///< |sum(weights) - 1| for probability measures
  double feasibility = 1e-9;    ///< f_i + g_j <= C_ij
};

inline const Tolerances& default_tolerances() {
  static const Tolerances tol{};
  return tol;
}

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  axiom_violation,
  infeasible,
  non_convergence,
  malformed_input,
  no_support,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::axiom_violation: return "axiom_violation";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::malformed_input: return "malformed_input";
    case ErrorCode::no_support: return "no_support";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A metric axiom failed; the witness names the offending index triple
/// (i, j, k). Identity and symmetry failures repeat indices.
class AxiomViolation : public Error {
 public:
  AxiomViolation(const std::string& what, Index i, Index j, Index k)
      : Error(ErrorCode::axiom_violation, what), i_(i), j_(j), k_(k) {}

  Index i() const noexcept { return i_; }
  Index j() const noexcept { return j_; }
  Index k() const noexcept { return k_; }

 private:
  Index i_, j_, k_;
};

/// Dual potentials violate f_i + g_j <= C_ij at (i, j).
class FeasibilityViolation : public Error {
 public:
  FeasibilityViolation(const std::string& what, Index i, Index j, double excess)
      : Error(ErrorCode::infeasible, what), i_(i), j_(j), excess_(excess) {}

  Index i() const noexcept { return i_; }
  Index j() const noexcept { return j_; }
  double excess() const noexcept { return excess_; }

 private:
  Index i_, j_;
  double excess_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace detail
}  // namespace ot
