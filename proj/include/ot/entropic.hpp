#pragma once

// Entropic transport. The plan is parameterized as
//   P_ij = ra_i rb_j exp((f_i + g_j - C_ij) / eps)
// where (ra, rb) is the KL reference (by default the marginals themselves).
// Log-domain iterations are the default; the scaling form u = e^{f/eps},
// v = e^{g/eps} is kept for large eps and for cross-checks.

#include "ot/exact.hpp"
#include "ot/measures.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ot {

struct SinkhornConfig {
  double epsilon = 0.1;
  long max_iter = 10000;
  double marginal_tol = 1e-8;  ///< L1 violation of the row marginal
  bool log_domain = true;
  /// Decreasing epsilons run before the target, each to tolerance, warm-started.
  std::vector<double> epsilon_schedule;
  std::optional<Vector> reference_a;
  std::optional<Vector> reference_b;
  bool keep_iterates = false;
};

struct SinkhornTraceRecord {
  long iter;
  double viol_a;        ///< ||P 1 - a||_1 entering the iteration
  double viol_b;        ///< ||P^T 1 - b||_1 after the row update
  double dual;          ///< dual objective after the iteration
  double hilbert_step;  ///< ||(f_new - f_old) / eps||_V
  double kl_a;
  double kl_b;
  double epsilon;
};

struct SinkhornState {
  Vector f;
  Vector g;
  double epsilon = 0.0;
  long iteration = 0;
  std::vector<SinkhornTraceRecord> trace;
  SolveStatus status = SolveStatus::optimal;
  double final_violation = 0.0;
  /// (f, g) after each iteration of the last stage, when keep_iterates is set.
  std::vector<Vector> f_iterates;
  std::vector<Vector> g_iterates;

  DualPotentials potentials() const { return {f, g, epsilon}; }
};

struct SinkhornResult {
  SinkhornState state;
  Coupling coupling;
  double cost_reg;
  double cost_linear;
};

inline Matrix gibbs_kernel(const Matrix& c, double eps) {
  detail::require(eps > 0.0, ErrorCode::invalid_argument, "gibbs_kernel: epsilon must be positive");
  return (-c.array() / eps).exp().matrix();
}

/// Soft minimum -eps log sum_j w_j exp(-h_j / eps), shifted by min(h).
inline double softmin(const Vector& h, const Vector& w, double eps) {
  const double m = h.minCoeff();
  return m - eps * std::log(w.dot((-(h.array() - m) / eps).exp().matrix()));
}

namespace detail {

/// exp() arguments are clamped here: terms below e^-700 relative to the
/// leading one are dropped, which keeps subnormals out of the hot loop.
inline constexpr double kExpFloor = -700.0;

/// out_k = softmin_w(ct.col(k) - g). Works column by column so each pass stays
/// in cache and no n x m temporaries are formed.
inline Vector softmin_columns(const Matrix& ct, const Vector& g, const Vector& w, double eps) {
  Vector out(ct.cols());
  Vector h(ct.rows());
  for (Index k = 0; k < ct.cols(); ++k) {
    h = ct.col(k) - g;
    const double m = h.minCoeff();
    out[k] = m - eps * std::log(w.dot((-(h.array() - m) / eps).max(kExpFloor).exp().matrix()));
  }
  return out;
}

}  // namespace detail

/// f_i = softmin_w(C_i. - g), rows of C against weights w on the columns.
inline Vector soft_c_transform(const Matrix& c, const Vector& g, const Vector& w, double eps) {
  return detail::softmin_columns(c.transpose(), g, w, eps);
}

/// Plan for given potentials and reference weights.
inline Matrix entropic_plan(const Matrix& c, const Vector& f, const Vector& g, double eps, const Vector& ra,
                            const Vector& rb) {
  Matrix p = (((c.colwise() - f).rowwise() - g.transpose()).array() * (-1.0 / eps)).exp().matrix();
  return ra.asDiagonal() * p * rb.asDiagonal();
}

/// Generalized KL(x | y) = sum x log(x/y) - x + y with 0 log 0 = 0.
inline double generalized_kl(const Vector& x, const Vector& y) {
  double s = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) s += x[i] * std::log(x[i] / y[i]);
    s += y[i] - x[i];
  }
  return s;
}

/// ||log u - log u'||_V: the Hilbert projective metric.
inline double hilbert_metric(const Vector& u, const Vector& v) {
  detail::require(u.size() == v.size() && u.size() > 0, ErrorCode::dimension_mismatch,
                  "hilbert_metric: sizes differ");
  detail::require((u.array() > 0.0).all() && (v.array() > 0.0).all(), ErrorCode::invalid_argument,
                  "hilbert_metric: entries must be positive");
  const Vector d = (u.array().log() - v.array().log()).matrix();
  return d.maxCoeff() - d.minCoeff();
}

struct Contraction {
  double log_eta;
  double eta;
  double lambda;
};

/// eta(K) = max K_ik K_jl / (K_jk K_il) and lambda = (sqrt(eta) - 1) / (sqrt(eta) + 1),
/// evaluated on log K.
inline Contraction contraction_eta_lambda(const Matrix& k) {
  detail::require(k.size() > 0 && (k.array() > 0.0).all(), ErrorCode::invalid_argument,
                  "contraction_eta_lambda: kernel must be strictly positive");
  const Matrix l = k.array().log().matrix();
  const Index n = l.rows(), m = l.cols();
  double best = 0.0;
  if (n * m <= 64) {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        for (Index a = 0; a < m; ++a)
          for (Index b = 0; b < m; ++b) best = std::max(best, l(i, a) + l(j, b) - l(j, a) - l(i, b));
  } else {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const auto diff = (l.row(i) - l.row(j)).eval();
        best = std::max(best, diff.maxCoeff() - diff.minCoeff());
      }
  }
  return {best, std::exp(best), std::tanh(best / 4.0)};
}

/// eps_0, eps_0 r, eps_0 r^2, ... stopping before the target (which the
/// solver appends).
inline std::vector<double> geometric_schedule(double eps_start, double eps_target, double ratio = 0.5) {
  detail::require(eps_start > 0.0 && eps_target > 0.0 && ratio > 0.0 && ratio < 1.0, ErrorCode::invalid_argument,
                  "geometric_schedule: invalid parameters");
  std::vector<double> out;
  for (double e = eps_start; e > eps_target * (1.0 + 1e-12); e *= ratio) out.push_back(e);
  return out;
}

inline Coupling kl_projection_row(const Matrix& p, const Vector& a) {
  detail::require(p.rows() == a.size(), ErrorCode::dimension_mismatch, "kl_projection_row: size mismatch");
  const Vector r = p.rowwise().sum();
  Vector s(a.size());
  for (Index i = 0; i < a.size(); ++i) {
    detail::require(r[i] > 0.0 || a[i] == 0.0, ErrorCode::infeasible,
                    "kl_projection_row: zero row with a nonzero target");
    s[i] = a[i] == 0.0 ? 0.0 : a[i] / r[i];
  }
  return Coupling::from_plan(s.asDiagonal() * p);
}

inline Coupling kl_projection_col(const Matrix& p, const Vector& b) {
  return kl_projection_row(p.transpose(), b).transpose();
}

namespace detail {

struct EntropicProblem {
  Vector a, b, ra, rb;
  Matrix c;
};

inline double dual_value(const EntropicProblem& pb, const Vector& f, const Vector& g, double plan_mass,
                         double eps) {
  return f.dot(pb.a) + g.dot(pb.b) - eps * (plan_mass - pb.ra.sum() * pb.rb.sum());
}

inline void run_log_stage(const EntropicProblem& pb, double eps, const SinkhornConfig& cfg, SinkhornState& st,
                          bool last_stage) {
  const Vector log_ra_ratio = (pb.a.array() / pb.ra.array()).log();
  const Vector log_rb_ratio = (pb.b.array() / pb.rb.array()).log();
  const Matrix ct = pb.c.transpose();
  st.status = SolveStatus::max_iter;
  for (long it = 0; it < cfg.max_iter; ++it) {
    const Vector srow = softmin_columns(ct, st.g, pb.rb, eps);
    const Vector p1 = (pb.ra.array() * ((st.f - srow).array() / eps).exp()).matrix();
    const double viol_a = (p1 - pb.a).lpNorm<1>();
    st.final_violation = viol_a;
    if (viol_a <= cfg.marginal_tol) {
      st.status = SolveStatus::optimal;
      return;
    }
    const Vector f_new = eps * log_ra_ratio + srow;
    const double kl_a = generalized_kl(pb.a, p1);
    const Vector step = (f_new - st.f) / eps;
    st.f = f_new;

    const Vector scol = softmin_columns(pb.c, st.f, pb.ra, eps);
    const Vector p2 = (pb.rb.array() * ((st.g - scol).array() / eps).exp()).matrix();
    const double viol_b = (p2 - pb.b).lpNorm<1>();
    const double kl_b = generalized_kl(pb.b, p2);
    st.g = eps * log_rb_ratio + scol;

    ++st.iteration;
    st.trace.push_back({st.iteration, viol_a, viol_b, dual_value(pb, st.f, st.g, pb.b.sum(), eps),
                        step.maxCoeff() - step.minCoeff(), kl_a, kl_b, eps});
    if (last_stage && cfg.keep_iterates) {
      st.f_iterates.push_back(st.f);
      st.g_iterates.push_back(st.g);
    }
  }
}

inline void run_scaling_stage(const EntropicProblem& pb, double eps, const SinkhornConfig& cfg, SinkhornState& st,
                              bool last_stage) {
  const Matrix k = pb.ra.asDiagonal() * gibbs_kernel(pb.c, eps) * pb.rb.asDiagonal();
  Vector u = (st.f / eps).array().exp();
  Vector v = (st.g / eps).array().exp();
  st.status = SolveStatus::max_iter;
  auto sync = [&] {
    st.f = eps * u.array().log();
    st.g = eps * v.array().log();
    require(st.f.allFinite() && st.g.allFinite(), ErrorCode::non_convergence,
            "sinkhorn: scaling iterations left floating-point range; use the log domain");
  };
  for (long it = 0; it < cfg.max_iter; ++it) {
    const Vector kv = k * v;
    const Vector p1 = u.cwiseProduct(kv);
    const double viol_a = (p1 - pb.a).lpNorm<1>();
    st.final_violation = viol_a;
    if (viol_a <= cfg.marginal_tol) {
      st.status = SolveStatus::optimal;
      break;
    }
    const Vector u_new = pb.a.cwiseQuotient(kv);
    const double kl_a = generalized_kl(pb.a, p1);
    const Vector step = (u_new.array().log() - u.array().log()).matrix();
    u = u_new;
    const Vector ktu = k.transpose() * u;
    const Vector p2 = v.cwiseProduct(ktu);
    const double viol_b = (p2 - pb.b).lpNorm<1>();
    const double kl_b = generalized_kl(pb.b, p2);
    v = pb.b.cwiseQuotient(ktu);
    sync();
    ++st.iteration;
    st.trace.push_back({st.iteration, viol_a, viol_b, dual_value(pb, st.f, st.g, pb.b.sum(), eps),
                        step.maxCoeff() - step.minCoeff(), kl_a, kl_b, eps});
    if (last_stage && cfg.keep_iterates) {
      st.f_iterates.push_back(st.f);
      st.g_iterates.push_back(st.g);
    }
  }
  sync();
}

inline std::vector<Index> positive_indices(const Vector& w) {
  std::vector<Index> idx;
  for (Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) idx.push_back(i);
  return idx;
}

}  // namespace detail

/// Entropic transport between histograms a and b with cost C.
inline SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& c, const SinkhornConfig& cfg,
                               const Tolerances& tol = default_tolerances()) {
  detail::require(cfg.epsilon > 0.0 && std::isfinite(cfg.epsilon), ErrorCode::invalid_argument,
                  "sinkhorn: epsilon must be positive");
  detail::require(cfg.max_iter >= 1, ErrorCode::invalid_argument, "sinkhorn: max_iter must be >= 1");
  detail::require(c.rows() == a.size() && c.cols() == b.size(), ErrorCode::dimension_mismatch,
                  "sinkhorn: cost shape does not match marginals");
  detail::require(c.allFinite(), ErrorCode::invalid_argument, "sinkhorn: non-finite cost");
  detail::check_histogram(a, "sinkhorn");
  detail::check_histogram(b, "sinkhorn");
  detail::require(std::abs(a.sum() - 1.0) <= tol.marginal && std::abs(b.sum() - 1.0) <= tol.marginal,
                  ErrorCode::invalid_argument, "sinkhorn: marginals must be normalized");

  std::vector<double> stages = cfg.epsilon_schedule;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    detail::require(stages[k] > 0.0 && (k == 0 || stages[k] < stages[k - 1]), ErrorCode::invalid_argument,
                    "sinkhorn: epsilon schedule must be strictly decreasing and positive");
    detail::require(stages[k] >= cfg.epsilon, ErrorCode::invalid_argument,
                    "sinkhorn: epsilon schedule goes below the target epsilon");
  }
  if (stages.empty() || stages.back() != cfg.epsilon) stages.push_back(cfg.epsilon);

  const auto ia = detail::positive_indices(a), ib = detail::positive_indices(b);
  detail::EntropicProblem pb;
  pb.a = a(ia);
  pb.b = b(ib);
  pb.c = c(ia, ib);
  pb.ra = pb.a;
  pb.rb = pb.b;
  if (cfg.reference_a) {
    detail::require(cfg.reference_a->size() == a.size(), ErrorCode::dimension_mismatch,
                    "sinkhorn: reference_a has the wrong size");
    pb.ra = (*cfg.reference_a)(ia);
  }
  if (cfg.reference_b) {
    detail::require(cfg.reference_b->size() == b.size(), ErrorCode::dimension_mismatch,
                    "sinkhorn: reference_b has the wrong size");
    pb.rb = (*cfg.reference_b)(ib);
  }
  detail::require((pb.ra.array() > 0.0).all() && (pb.rb.array() > 0.0).all(), ErrorCode::invalid_argument,
                  "sinkhorn: reference measures must charge the support of the marginals");

  SinkhornState st;
  st.f = Vector::Zero(pb.a.size());
  st.g = Vector::Zero(pb.b.size());
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const bool last = k + 1 == stages.size();
    const double eps = stages[k];
    if (k == 0) {
      const Matrix p0 = entropic_plan(pb.c, st.f, st.g, eps, pb.ra, pb.rb);
      st.trace.push_back({0, (p0.rowwise().sum() - pb.a).lpNorm<1>(),
                          (p0.colwise().sum().transpose() - pb.b).lpNorm<1>(),
                          detail::dual_value(pb, st.f, st.g, p0.sum(), eps), 0.0, 0.0, 0.0, eps});
    }
    if (cfg.log_domain) {
      detail::run_log_stage(pb, eps, cfg, st, last);
    } else {
      detail::run_scaling_stage(pb, eps, cfg, st, last);
    }
  }
  st.epsilon = cfg.epsilon;

  // Gauge: <f, a> = <g, b>.
  const double shift = 0.5 * (st.f.dot(pb.a) - st.g.dot(pb.b));
  st.f.array() -= shift;
  st.g.array() += shift;
  for (auto& v : st.f_iterates) v.array() -= shift;
  for (auto& v : st.g_iterates) v.array() += shift;

  const Matrix sub_plan = entropic_plan(pb.c, st.f, st.g, cfg.epsilon, pb.ra, pb.rb);
  Matrix plan = Matrix::Zero(a.size(), b.size());
  plan(ia, ib) = sub_plan;

  // Dropped atoms get the soft c-transform value against the other side.
  Vector f_full = Vector::Zero(a.size()), g_full = Vector::Zero(b.size());
  f_full(ia) = st.f;
  g_full(ib) = st.g;
  if (Index(ia.size()) < a.size()) {
    const Vector fs = soft_c_transform(c(Eigen::all, ib), st.g, pb.rb, cfg.epsilon);
    for (Index i = 0; i < a.size(); ++i)
      if (a[i] == 0.0) f_full[i] = fs[i];
  }
  if (Index(ib.size()) < b.size()) {
    const Vector gs = soft_c_transform(c(ia, Eigen::all).transpose(), st.f, pb.ra, cfg.epsilon);
    for (Index j = 0; j < b.size(); ++j)
      if (b[j] == 0.0) g_full[j] = gs[j];
  }

  const double cost_reg = detail::dual_value(pb, st.f, st.g, sub_plan.sum(), cfg.epsilon);
  const double cost_linear = (sub_plan.array() * pb.c.array()).sum();
  st.f = std::move(f_full);
  st.g = std::move(g_full);
  return {std::move(st), Coupling::from_plan(std::move(plan)), cost_reg, cost_linear};
}

inline SinkhornResult sinkhorn(const DiscreteMeasure& a, const DiscreteMeasure& b, const CostSpec& spec,
                               const SinkhornConfig& cfg) {
  return sinkhorn(a.weights(), b.weights(), build_cost_matrix(a, b, spec), cfg);
}

/// Debiased divergence OT_eps(a,b) - OT_eps(a,a)/2 - OT_eps(b,b)/2, each term
/// the dual value at the Sinkhorn fixed point.
inline double sinkhorn_divergence(const Vector& a, const Vector& b, const Matrix& c_ab, const Matrix& c_aa,
                                  const Matrix& c_bb, const SinkhornConfig& cfg) {
  const double ab = sinkhorn(a, b, c_ab, cfg).cost_reg;
  const double aa = sinkhorn(a, a, c_aa, cfg).cost_reg;
  const double bb = sinkhorn(b, b, c_bb, cfg).cost_reg;
  return ab - 0.5 * aa - 0.5 * bb;
}

inline double sinkhorn_divergence(const DiscreteMeasure& a, const DiscreteMeasure& b, const CostSpec& spec,
                                  const SinkhornConfig& cfg) {
  return sinkhorn_divergence(a.weights(), b.weights(), build_cost_matrix(a, b, spec), build_cost_matrix(a, a, spec),
                             build_cost_matrix(b, b, spec), cfg);
}

}  // namespace ot
