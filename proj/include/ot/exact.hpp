#pragma once

// Exact discrete transport: 1-D monotone sweep, assignment, the Kantorovich
// linear program via min-cost flow, extremality of couplings and W_p on
// validated distance matrices.

#include "ot/measures.hpp"
#include "ot/min_cost_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

namespace ot {

enum class SolveStatus { optimal, max_iter, infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

struct TransportResult {
  double cost;
  Coupling coupling;
  std::optional<DualPotentials> potentials;
  long iterations = 0;
  SolveStatus status = SolveStatus::optimal;
};

struct AssignmentResult {
  std::vector<Index> permutation;  ///< row i is matched to column permutation[i]
  double cost;                     ///< sum_i C(i, permutation[i])
  double mean_cost() const { return permutation.empty() ? 0.0 : cost / double(permutation.size()); }
};

namespace detail {

inline void check_histogram(const Vector& w, const char* who) {
  for (Index i = 0; i < w.size(); ++i) {
    require(std::isfinite(w[i]) && w[i] >= 0.0, ErrorCode::invalid_argument,
            std::string(who) + ": weights must be finite and nonnegative");
  }
}

struct SupportEdge {
  Index i, j;
  std::int64_t flow;
};

class UnionFind {
 public:
  explicit UnionFind(Index n) : parent_(std::size_t(n)) { std::iota(parent_.begin(), parent_.end(), Index{0}); }
  Index find(Index x) {
    while (parent_[std::size_t(x)] != x) {
      parent_[std::size_t(x)] = parent_[std::size_t(parent_[std::size_t(x)])];
      x = parent_[std::size_t(x)];
    }
    return x;
  }
  bool unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[std::size_t(std::max(a, b))] = std::min(a, b);
    return true;
  }

 private:
  std::vector<Index> parent_;
};

/// Path between two nodes of a forest given as adjacency over edge ids.
/// Returns the edge ids along the path from `from` to `to`.
inline std::vector<std::size_t> forest_path(const std::vector<std::vector<std::pair<Index, std::size_t>>>& adj,
                                            Index from, Index to) {
  std::vector<std::ptrdiff_t> via(adj.size(), -1);
  std::vector<Index> prev(adj.size(), -1);
  std::vector<char> seen(adj.size(), 0);
  std::vector<Index> stack{from};
  seen[std::size_t(from)] = 1;
  while (!stack.empty()) {
    const Index u = stack.back();
    stack.pop_back();
    if (u == to) break;
    for (const auto& [v, e] : adj[std::size_t(u)]) {
      if (seen[std::size_t(v)]) continue;
      seen[std::size_t(v)] = 1;
      via[std::size_t(v)] = std::ptrdiff_t(e);
      prev[std::size_t(v)] = u;
      stack.push_back(v);
    }
  }
  std::vector<std::size_t> path;
  for (Index v = to; v != from; v = prev[std::size_t(v)]) path.push_back(std::size_t(via[std::size_t(v)]));
  std::reverse(path.begin(), path.end());
  return path;
}

/// Removes cycles from the support of an integer bipartite flow without
/// increasing its cost. Nodes: rows 0..n-1, columns n..n+m-1.
inline void cancel_support_cycles(std::vector<SupportEdge>& edges, Index n, Index m, const Matrix& cost) {
  while (true) {
    std::vector<std::vector<std::pair<Index, std::size_t>>> adj(std::size_t(n + m));
    UnionFind uf(n + m);
    std::ptrdiff_t closing = -1;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (edges[e].flow <= 0) continue;
      const Index u = edges[e].i, v = n + edges[e].j;
      if (!uf.unite(u, v)) {
        closing = std::ptrdiff_t(e);
        break;
      }
      adj[std::size_t(u)].push_back({v, e});
      adj[std::size_t(v)].push_back({u, e});
    }
    if (closing < 0) break;

    // Cycle: closing edge (row -> col), then the forest path col -> row.
    const SupportEdge& ce = edges[std::size_t(closing)];
    std::vector<std::size_t> cycle{std::size_t(closing)};
    for (std::size_t e : forest_path(adj, n + ce.j, ce.i)) cycle.push_back(e);

    // Even positions share one orientation, odd positions the other.
    double alternating = 0.0;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const double c = cost(edges[cycle[k]].i, edges[cycle[k]].j);
      alternating += (k % 2 == 0) ? c : -c;
    }
    const int shrink_parity = alternating > 0.0 ? 0 : 1;
    std::int64_t delta = MinCostFlow::kInfinite;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      if (int(k % 2) == shrink_parity) delta = std::min(delta, edges[cycle[k]].flow);
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      edges[cycle[k]].flow += (int(k % 2) == shrink_parity) ? -delta : delta;
    }
  }
  edges.erase(std::remove_if(edges.begin(), edges.end(), [](const SupportEdge& e) { return e.flow <= 0; }),
              edges.end());
}

/// Real flows on a forest support reproducing the marginals (a, b) by
/// repeatedly settling leaves.
inline Matrix peel_forest(const std::vector<SupportEdge>& edges, const Vector& a, const Vector& b) {
  const Index n = a.size(), m = b.size();
  std::vector<double> residual(std::size_t(n + m));
  for (Index i = 0; i < n; ++i) residual[std::size_t(i)] = a[i];
  for (Index j = 0; j < m; ++j) residual[std::size_t(n + j)] = b[j];
  std::vector<std::vector<std::size_t>> incident(std::size_t(n + m));
  std::vector<int> degree(std::size_t(n + m), 0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    incident[std::size_t(edges[e].i)].push_back(e);
    incident[std::size_t(n + edges[e].j)].push_back(e);
    ++degree[std::size_t(edges[e].i)];
    ++degree[std::size_t(n + edges[e].j)];
  }
  std::vector<char> used(edges.size(), 0);
  std::vector<Index> leaves;
  for (Index v = n + m - 1; v >= 0; --v)
    if (degree[std::size_t(v)] == 1) leaves.push_back(v);

  Matrix plan = Matrix::Zero(n, m);
  while (!leaves.empty()) {
    const Index u = leaves.back();
    leaves.pop_back();
    if (degree[std::size_t(u)] != 1) continue;
    std::size_t e = 0;
    for (std::size_t cand : incident[std::size_t(u)]) {
      if (!used[cand]) {
        e = cand;
        break;
      }
    }
    used[e] = 1;
    const Index v = (u < n) ? n + edges[e].j : edges[e].i;
    const double mass = std::max(0.0, residual[std::size_t(u)]);
    plan(edges[e].i, edges[e].j) = mass;
    residual[std::size_t(u)] -= mass;
    residual[std::size_t(v)] -= mass;
    --degree[std::size_t(u)];
    if (--degree[std::size_t(v)] == 1) leaves.push_back(v);
  }
  return plan;
}

}  // namespace detail

/// Optimal coupling of two equal-mass histograms for the cost matrix C.
/// The returned plan is a vertex of the transport polytope (forest support,
/// at most n + m - 1 nonzeros); potentials are feasible and tight on it.
inline TransportResult solve_kantorovich(const Vector& a, const Vector& b, const Matrix& cost,
                                         const Tolerances& tol = default_tolerances()) {
  const Index n = a.size(), m = b.size();
  detail::require(n > 0 && m > 0, ErrorCode::invalid_argument, "solve_kantorovich: empty marginal");
  detail::require(cost.rows() == n && cost.cols() == m, ErrorCode::dimension_mismatch,
                  "solve_kantorovich: cost matrix shape does not match marginals");
  detail::require(cost.allFinite(), ErrorCode::invalid_argument, "solve_kantorovich: non-finite cost");
  detail::check_histogram(a, "solve_kantorovich");
  detail::check_histogram(b, "solve_kantorovich");
  const double mass = a.sum();
  detail::require(mass > 0.0 && std::abs(mass - b.sum()) <= tol.marginal * std::max(1.0, mass),
                  ErrorCode::infeasible, "solve_kantorovich: marginals have different total mass");

  const double scale = kFlowScale / mass;
  const auto sa = detail::scale_masses(a, scale);
  auto sb = detail::scale_masses(b, scale);
  detail::balance_masses(sa, sb);

  MinCostFlow flow(int(n + m));
  for (Index i = 0; i < n; ++i) flow.set_supply(int(i), sa[std::size_t(i)]);
  for (Index j = 0; j < m; ++j) flow.set_supply(int(n + j), -sb[std::size_t(j)]);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) flow.add_arc(int(i), int(n + j), cost(i, j));
  flow.solve();

  std::vector<detail::SupportEdge> edges;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) {
      const auto x = flow.flow(int(i * m + j));
      if (x > 0) edges.push_back({i, j, x});
    }
  detail::cancel_support_cycles(edges, n, m, cost);
  Matrix plan = detail::peel_forest(edges, a, b);

  DualPotentials pot;
  pot.f.resize(n);
  pot.g.resize(m);
  for (Index i = 0; i < n; ++i) pot.f[i] = -flow.potential(int(i));
  for (Index j = 0; j < m; ++j) pot.g[j] = flow.potential(int(n + j));
  // Tighten: g <- f^c, f <- g^cbar removes rounding-level infeasibility.
  for (Index j = 0; j < m; ++j) pot.g[j] = (cost.col(j) - pot.f).minCoeff();
  for (Index i = 0; i < n; ++i) pot.f[i] = (cost.row(i).transpose() - pot.g).minCoeff();

  const double total = (plan.array() * cost.array()).sum();
  Coupling coupling(std::move(plan), a, b, Tolerances{std::max(tol.marginal, 1e-12 * mass), tol.equality,
                                                      tol.normalization, tol.feasibility});
  return {total, std::move(coupling), std::move(pot), flow.augmentations(), SolveStatus::optimal};
}

inline TransportResult solve_kantorovich(const DiscreteMeasure& a, const DiscreteMeasure& b,
                                         const CostSpec& spec,
                                         const Tolerances& tol = default_tolerances()) {
  return solve_kantorovich(a.weights(), b.weights(), build_cost_matrix(a, b, spec, tol), tol);
}

/// Minimum-cost perfect matching on a square cost matrix.
inline AssignmentResult solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  detail::require(cost.cols() == n, ErrorCode::dimension_mismatch, "solve_assignment: matrix is not square");
  detail::require(cost.allFinite(), ErrorCode::invalid_argument, "solve_assignment: non-finite cost");
  AssignmentResult out{std::vector<Index>(std::size_t(n), -1), 0.0};
  if (n == 0) return out;
  MinCostFlow flow(int(2 * n));
  for (Index i = 0; i < n; ++i) {
    flow.set_supply(int(i), 1);
    flow.set_supply(int(n + i), -1);
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) flow.add_arc(int(i), int(n + j), cost(i, j));
  flow.solve();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (flow.flow(int(i * n + j)) > 0) {
        out.permutation[std::size_t(i)] = j;
        out.cost += cost(i, j);
      }
  return out;
}

/// Monotone (north-west corner) coupling of two 1-D measures; the cost is
/// W_p^p for |x - y|^p. Ties in position keep input order.
inline TransportResult solve_1d_sorted(const DiscreteMeasure& a, const DiscreteMeasure& b, double p,
                                       const Tolerances& tol = default_tolerances()) {
  detail::require(p >= 1.0, ErrorCode::invalid_argument, "solve_1d_sorted: p must be >= 1");
  detail::require(a.dim() == 1 && b.dim() == 1, ErrorCode::dimension_mismatch,
                  "solve_1d_sorted: supports must be 1-D");
  detail::require(a.is_probability(tol) && b.is_probability(tol), ErrorCode::invalid_argument,
                  "solve_1d_sorted: measures must be normalized");
  auto order_of = [](const DiscreteMeasure& m) {
    std::vector<Index> o(std::size_t(m.size()));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index x, Index y) { return m.points()(x, 0) < m.points()(y, 0); });
    return o;
  };
  const auto oa = order_of(a), ob = order_of(b);
  Matrix plan = Matrix::Zero(a.size(), b.size());
  double cost = 0.0;
  std::size_t i = 0, j = 0;
  double ra = a.weights()[oa[0]], rb = b.weights()[ob[0]];
  long steps = 0;
  while (i < oa.size() && j < ob.size()) {
    const double mass = std::min(ra, rb);
    const Index ii = oa[i], jj = ob[j];
    if (mass > 0.0) {
      plan(ii, jj) += mass;
      cost += mass * std::pow(std::abs(a.points()(ii, 0) - b.points()(jj, 0)), p);
    }
    ++steps;
    ra -= mass;
    rb -= mass;
    // One of the two is exactly zero after subtracting the minimum.
    const bool next_a = ra <= 0.0, next_b = rb <= 0.0;
    if (next_a && ++i < oa.size()) ra = a.weights()[oa[i]];
    if (next_b && ++j < ob.size()) rb = b.weights()[ob[j]];
  }
  Coupling coupling(std::move(plan), a.weights(), b.weights(), tol);
  return {cost, std::move(coupling), std::nullopt, steps, SolveStatus::optimal};
}

/// Integral of |F_a - F_b| over the real line.
inline double w1_1d_cdf(const DiscreteMeasure& a, const DiscreteMeasure& b,
                        const Tolerances& tol = default_tolerances()) {
  const Distribution1D fa(a, tol), fb(b, tol);
  std::vector<double> xs = fa.knots();
  xs.insert(xs.end(), fb.knots().begin(), fb.knots().end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    total += std::abs(fa.cdf(xs[k]) - fb.cdf(xs[k])) * (xs[k + 1] - xs[k]);
  }
  return total;
}

/// True iff the bipartite graph of positive entries has no cycle.
inline bool is_extremal_coupling(const Coupling& p) {
  const Index n = p.rows(), m = p.cols();
  detail::UnionFind uf(n + m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      if (p.plan()(i, j) > 0.0 && !uf.unite(i, n + j)) return false;
  return true;
}

/// Throws AxiomViolation naming the first failing index triple.
inline void validate_metric(const Matrix& d, const Tolerances& tol = default_tolerances()) {
  const Index n = d.rows();
  detail::require(d.cols() == n, ErrorCode::dimension_mismatch, "distance matrix is not square");
  detail::require(d.allFinite(), ErrorCode::invalid_argument, "distance matrix has non-finite entries");
  const double slack = tol.equality * std::max(1.0, n > 0 ? d.cwiseAbs().maxCoeff() : 0.0);
  for (Index i = 0; i < n; ++i) {
    if (std::abs(d(i, i)) > slack) throw AxiomViolation("distance: nonzero diagonal", i, i, i);
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!(d(i, j) > 0.0)) throw AxiomViolation("distance: separation fails", i, j, j);
      if (std::abs(d(i, j) - d(j, i)) > slack) throw AxiomViolation("distance: not symmetric", i, j, i);
    }
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k)
        if (d(i, k) > d(i, j) + d(j, k) + slack)
          throw AxiomViolation("distance: triangle inequality fails", i, j, k);
}

/// W_p between two histograms on one support with ground distance `dist`.
inline double wasserstein_p(const Vector& a, const Vector& b, const Matrix& dist, double p,
                            const Tolerances& tol = default_tolerances()) {
  detail::require(p >= 1.0, ErrorCode::invalid_argument, "wasserstein_p: p must be >= 1");
  detail::require(a.size() == dist.rows() && b.size() == dist.rows(), ErrorCode::dimension_mismatch,
                  "wasserstein_p: histogram sizes do not match the distance matrix");
  validate_metric(dist, tol);
  const Matrix c = dist.array().pow(p).matrix();
  const double value = solve_kantorovich(a, b, c, tol).cost;
  return std::pow(std::max(0.0, value), 1.0 / p);
}

}  // namespace ot
