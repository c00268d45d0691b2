#pragma once

// W1 as a dual norm on signed measures: the Kantorovich-Rubinstein norm, the
// flat norm, and Beckmann flows on weighted graphs, all through min-cost flow.

#include "ot/exact.hpp"
#include "ot/min_cost_flow.hpp"

#include <limits>
#include <vector>

namespace ot {

/// sum_k m_k delta_{z_k}; masses may have either sign.
class SignedDiscreteMeasure {
 public:
  SignedDiscreteMeasure(Matrix points, Vector masses) : points_(std::move(points)), masses_(std::move(masses)) {
    detail::require(points_.rows() == masses_.size(), ErrorCode::dimension_mismatch,
                    "SignedDiscreteMeasure: one mass per point required");
    detail::require(points_.allFinite() && masses_.allFinite(), ErrorCode::invalid_argument,
                    "SignedDiscreteMeasure: non-finite entry");
  }

  /// a - b on the concatenated supports.
  static SignedDiscreteMeasure difference(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    detail::require(a.dim() == b.dim(), ErrorCode::dimension_mismatch, "difference: dimensions differ");
    Matrix p(a.size() + b.size(), a.dim());
    p << a.points(), b.points();
    Vector m(a.size() + b.size());
    m << a.weights(), -b.weights();
    return {std::move(p), std::move(m)};
  }

  const Matrix& points() const noexcept { return points_; }
  const Vector& masses() const noexcept { return masses_; }
  Index size() const noexcept { return masses_.size(); }
  double total() const { return masses_.sum(); }
  double tv_norm() const { return masses_.lpNorm<1>(); }

  bool is_balanced(double tol = 1e-12) const { return std::abs(total()) <= tol * std::max(1.0, tv_norm()); }

 private:
  Matrix points_;
  Vector masses_;
};

struct DualNormResult {
  double value = 0.0;
  Vector f;  // optimal potential on the support
};

namespace detail {

/// Integer supplies for signed masses; positive and negative parts are scaled
/// separately so each keeps its own cumulative rounding.
inline std::vector<std::int64_t> scaled_supplies(const Vector& m, double scale) {
  const auto pos = scale_masses(m.cwiseMax(0.0), scale);
  const auto neg = scale_masses((-m).cwiseMax(0.0), scale);
  std::vector<std::int64_t> out(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) out[k] = pos[k] - neg[k];
  return out;
}

/// f_k <- min_l f_l + d_kl. Exactly 1-Lipschitz for a metric d; a no-op up to
/// rounding when f already is.
inline Vector lipschitz_envelope(const Vector& f, const Matrix& d) {
  Vector out(f.size());
  for (Index k = 0; k < f.size(); ++k) out[k] = (f + d.col(k)).minCoeff();
  return out;
}

}  // namespace detail

/// max sum_k f_k m_k over 1-Lipschitz f, as a transshipment on the complete
/// support graph. Masses must sum to zero.
inline DualNormResult w1_kr_lp(const SignedDiscreteMeasure& m, const Matrix& dist,
                               const Tolerances& tol = default_tolerances()) {
  const Index n = m.size();
  detail::require(dist.rows() == n && dist.cols() == n, ErrorCode::dimension_mismatch,
                  "w1_kr_lp: distance matrix does not match the support");
  validate_metric(dist, tol);
  detail::require(m.is_balanced(), ErrorCode::infeasible, "w1_kr_lp: masses do not sum to zero");
  if (n == 0 || m.tv_norm() == 0.0) return {0.0, Vector::Zero(n)};

  const double scale = kFlowScale / (0.5 * m.tv_norm());
  auto supply = detail::scaled_supplies(m.masses(), scale);
  std::int64_t total = 0;
  for (auto s : supply) total += s;
  *std::max_element(supply.begin(), supply.end(), [](auto x, auto y) { return std::abs(x) < std::abs(y); }) -= total;

  MinCostFlow flow{int(n)};
  for (Index k = 0; k < n; ++k) flow.set_supply(int(k), supply[std::size_t(k)]);
  for (Index k = 0; k < n; ++k)
    for (Index l = 0; l < n; ++l)
      if (k != l) flow.add_arc(int(k), int(l), dist(k, l));
  flow.solve();

  double value = 0.0;
  int arc = 0;
  for (Index k = 0; k < n; ++k)
    for (Index l = 0; l < n; ++l)
      if (k != l) value += dist(k, l) * double(flow.flow(arc++));
  value /= scale;

  Vector f(n);
  for (Index k = 0; k < n; ++k) f[k] = -flow.potential(int(k));
  f = detail::lipschitz_envelope(f, dist);
  return {value, std::move(f)};
}

/// max sum_k f_k m_k over 1-Lipschitz f with |f| <= 1. A virtual node at
/// distance 1 from every atom absorbs any mass imbalance.
inline DualNormResult flat_norm(const SignedDiscreteMeasure& m, const Matrix& dist,
                                const Tolerances& tol = default_tolerances()) {
  const Index n = m.size();
  detail::require(dist.rows() == n && dist.cols() == n, ErrorCode::dimension_mismatch,
                  "flat_norm: distance matrix does not match the support");
  validate_metric(dist, tol);
  if (n == 0 || m.tv_norm() == 0.0) return {0.0, Vector::Zero(n)};

  const double scale = kFlowScale / m.tv_norm();
  const auto supply = detail::scaled_supplies(m.masses(), scale);
  std::int64_t total = 0;
  for (auto s : supply) total += s;

  const int sink = int(n);
  MinCostFlow flow(int(n) + 1);
  for (Index k = 0; k < n; ++k) flow.set_supply(int(k), supply[std::size_t(k)]);
  flow.set_supply(sink, -total);
  std::vector<double> arc_cost;
  for (Index k = 0; k < n; ++k)
    for (Index l = 0; l < n; ++l)
      if (k != l) {
        flow.add_arc(int(k), int(l), dist(k, l));
        arc_cost.push_back(dist(k, l));
      }
  for (Index k = 0; k < n; ++k) {
    flow.add_arc(int(k), sink, 1.0);
    flow.add_arc(sink, int(k), 1.0);
    arc_cost.push_back(1.0);
    arc_cost.push_back(1.0);
  }
  flow.solve();

  double value = 0.0;
  for (std::size_t a = 0; a < arc_cost.size(); ++a) value += arc_cost[a] * double(flow.flow(int(a)));
  value /= scale;

  Vector f(n);
  for (Index k = 0; k < n; ++k) f[k] = flow.potential(sink) - flow.potential(int(k));
  // Same envelope on the support plus the virtual node, then clip.
  Matrix d_ext(n + 1, n + 1);
  d_ext.topLeftCorner(n, n) = dist;
  d_ext.col(n).setOnes();
  d_ext.row(n).setOnes();
  d_ext(n, n) = 0.0;
  Vector f_ext(n + 1);
  f_ext << f, 0.0;
  f_ext = detail::lipschitz_envelope(f_ext, d_ext);
  f = (f_ext.head(n).array() - f_ext[n]).cwiseMax(-1.0).cwiseMin(1.0);
  return {value, std::move(f)};
}

inline DualNormResult flat_norm(const SignedDiscreteMeasure& m, const Tolerances& tol = default_tolerances()) {
  return flat_norm(m, pairwise_distances(m.points()), tol);
}

inline DualNormResult w1_kr_lp(const SignedDiscreteMeasure& m, const Tolerances& tol = default_tolerances()) {
  return w1_kr_lp(m, pairwise_distances(m.points()), tol);
}

struct GraphEdge {
  Index u;
  Index v;
  double length;
};

/// Undirected graph with positive edge lengths and node imbalances (sources
/// positive, sinks negative).
struct FlowGraph {
  Index nodes = 0;
  std::vector<GraphEdge> edges;
  Vector imbalance;

  void validate() const {
    detail::require(nodes >= 1 && imbalance.size() == nodes, ErrorCode::dimension_mismatch,
                    "FlowGraph: one imbalance per node required");
    detail::require(imbalance.allFinite(), ErrorCode::invalid_argument, "FlowGraph: non-finite imbalance");
    for (const auto& e : edges) {
      detail::require(e.u >= 0 && e.u < nodes && e.v >= 0 && e.v < nodes && e.u != e.v,
                      ErrorCode::invalid_argument, "FlowGraph: edge endpoint out of range");
      detail::require(std::isfinite(e.length) && e.length > 0.0, ErrorCode::invalid_argument,
                      "FlowGraph: edge lengths must be positive");
    }
  }

  /// All-pairs shortest path lengths (Floyd-Warshall); +inf between components.
  Matrix shortest_paths() const {
    validate();
    Matrix d = Matrix::Constant(nodes, nodes, std::numeric_limits<double>::infinity());
    d.diagonal().setZero();
    for (const auto& e : edges) {
      d(e.u, e.v) = std::min(d(e.u, e.v), e.length);
      d(e.v, e.u) = d(e.u, e.v);
    }
    for (Index k = 0; k < nodes; ++k)
      for (Index j = 0; j < nodes; ++j)
        for (Index i = 0; i < nodes; ++i) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
    return d;
  }
};

struct BeckmannResult {
  double value = 0.0;
  /// Signed flow on each edge, positive from u to v.
  Vector edge_flows;
};

/// min sum_e length_e |flow_e| subject to net outflow = imbalance at every
/// node. Throws infeasible if some connected component does not balance.
inline BeckmannResult w1_graph_beckmann(const FlowGraph& g) {
  g.validate();
  const SignedDiscreteMeasure m(Matrix::Zero(g.nodes, 1), g.imbalance);
  detail::require(m.is_balanced(), ErrorCode::infeasible, "w1_graph_beckmann: imbalances do not sum to zero");
  BeckmannResult out{0.0, Vector::Zero(Index(g.edges.size()))};
  if (m.tv_norm() == 0.0) return out;

  const double scale = kFlowScale / (0.5 * m.tv_norm());
  auto supply = detail::scaled_supplies(g.imbalance, scale);
  std::int64_t total = 0;
  for (auto s : supply) total += s;
  *std::max_element(supply.begin(), supply.end(), [](auto x, auto y) { return std::abs(x) < std::abs(y); }) -= total;

  MinCostFlow flow{int(g.nodes)};
  for (Index v = 0; v < g.nodes; ++v) flow.set_supply(int(v), supply[std::size_t(v)]);
  for (const auto& e : g.edges) {
    flow.add_arc(int(e.u), int(e.v), e.length);
    flow.add_arc(int(e.v), int(e.u), e.length);
  }
  flow.solve();
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const double net = double(flow.flow(int(2 * k)) - flow.flow(int(2 * k + 1)));
    out.edge_flows[Index(k)] = net / scale;
    out.value += g.edges[k].length * std::abs(net);
  }
  out.value /= scale;
  return out;
}

/// Net outflow minus imbalance at each node.
inline Vector conservation_residual(const FlowGraph& g, const Vector& edge_flows) {
  Vector r = -g.imbalance;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    r[g.edges[k].u] += edge_flows[Index(k)];
    r[g.edges[k].v] -= edge_flows[Index(k)];
  }
  return r;
}

}  // namespace ot
