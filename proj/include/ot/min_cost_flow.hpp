#pragma once

// Uncapacitated / capacitated min-cost flow with integer supplies and real
// arc costs, solved by successive shortest augmenting paths (Dijkstra on
// reduced costs). Shared by the exact transport solver and the W1 solvers.

#include "ot/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace ot {

/// Masses are converted to integers on this common denominator before any
/// flow computation.
inline constexpr double kFlowScale = 1e15;

class MinCostFlow {
 public:
  static constexpr std::int64_t kInfinite = std::numeric_limits<std::int64_t>::max() / 4;

  explicit MinCostFlow(int num_nodes)
      : adjacency_(std::size_t(num_nodes)), supply_(std::size_t(num_nodes), 0),
        potential_(std::size_t(num_nodes), 0.0) {}

  int num_nodes() const noexcept { return int(adjacency_.size()); }
  int num_arcs() const noexcept { return int(arcs_.size() / 2); }

  /// Returns the arc id (0-based, in insertion order).
  int add_arc(int tail, int head, double cost, std::int64_t capacity = kInfinite) {
    detail::require(std::isfinite(cost), ErrorCode::invalid_argument, "MinCostFlow: non-finite arc cost");
    const int id = int(arcs_.size());
    arcs_.push_back({head, capacity, cost});
    arcs_.push_back({tail, 0, -cost});
    adjacency_[std::size_t(tail)].push_back(id);
    adjacency_[std::size_t(head)].push_back(id + 1);
    capacity_.push_back(capacity);
    return id / 2;
  }

  void set_supply(int node, std::int64_t supply) { supply_[std::size_t(node)] = supply; }

  /// Runs to optimality. Throws Error(infeasible) if supplies cannot be routed.
  void solve() {
    std::int64_t total = 0;
    for (auto s : supply_) total += s;
    detail::require(total == 0, ErrorCode::infeasible, "MinCostFlow: supplies do not balance");

    const std::size_t n = adjacency_.size();
    std::vector<std::int64_t> excess = supply_;
    std::vector<double> dist(n);
    std::vector<int> parent_arc(n);
    std::vector<char> done(n);
    constexpr double inf = std::numeric_limits<double>::infinity();
    using Item = std::pair<double, int>;

    augmentations_ = 0;
    while (true) {
      bool any = false;
      std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
      std::fill(dist.begin(), dist.end(), inf);
      std::fill(parent_arc.begin(), parent_arc.end(), -1);
      std::fill(done.begin(), done.end(), 0);
      for (std::size_t v = 0; v < n; ++v) {
        if (excess[v] > 0) {
          dist[v] = 0.0;
          heap.emplace(0.0, int(v));
          any = true;
        }
      }
      if (!any) break;

      int target = -1;
      while (!heap.empty()) {
        const auto [d, u] = heap.top();
        heap.pop();
        if (done[std::size_t(u)]) continue;
        done[std::size_t(u)] = 1;
        if (excess[std::size_t(u)] < 0) {
          target = u;
          break;
        }
        for (int a : adjacency_[std::size_t(u)]) {
          const Arc& arc = arcs_[std::size_t(a)];
          if (arc.residual <= 0) continue;
          const double reduced =
              std::max(0.0, arc.cost + potential_[std::size_t(u)] - potential_[std::size_t(arc.head)]);
          const double nd = d + reduced;
          if (nd < dist[std::size_t(arc.head)]) {
            dist[std::size_t(arc.head)] = nd;
            parent_arc[std::size_t(arc.head)] = a;
            heap.emplace(nd, arc.head);
          }
        }
      }
      detail::require(target >= 0, ErrorCode::infeasible,
                      "MinCostFlow: no augmenting path to a deficit node");

      const double dt = dist[std::size_t(target)];
      for (std::size_t v = 0; v < n; ++v) potential_[v] += std::min(dist[v], dt);

      std::int64_t delta = -excess[std::size_t(target)];
      int v = target;
      while (parent_arc[std::size_t(v)] >= 0) {
        const int a = parent_arc[std::size_t(v)];
        delta = std::min(delta, arcs_[std::size_t(a)].residual);
        v = arcs_[std::size_t(a ^ 1)].head;
      }
      delta = std::min(delta, excess[std::size_t(v)]);

      v = target;
      while (parent_arc[std::size_t(v)] >= 0) {
        const int a = parent_arc[std::size_t(v)];
        arcs_[std::size_t(a)].residual -= delta;
        arcs_[std::size_t(a ^ 1)].residual += delta;
        v = arcs_[std::size_t(a ^ 1)].head;
      }
      excess[std::size_t(v)] -= delta;
      excess[std::size_t(target)] += delta;
      ++augmentations_;
    }
  }

  std::int64_t flow(int arc) const { return arcs_[std::size_t(2 * arc + 1)].residual; }

  /// Node potentials pi with reduced costs c(u,v) + pi(u) - pi(v) >= 0 on every
  /// residual arc (up to rounding) and == 0 on arcs carrying flow.
  double potential(int node) const { return potential_[std::size_t(node)]; }

  long augmentations() const noexcept { return augmentations_; }

 private:
  struct Arc {
    int head;
    std::int64_t residual;
    double cost;
  };

  std::vector<Arc> arcs_;
  std::vector<std::int64_t> capacity_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<std::int64_t> supply_;
  std::vector<double> potential_;
  long augmentations_ = 0;
};

namespace detail {

/// Integer masses on kFlowScale by cumulative rounding: every prefix sum is
/// rounded, so the integer total equals round(scale * total).
inline std::vector<std::int64_t> scale_masses(const Vector& w, double scale = kFlowScale) {
  std::vector<std::int64_t> out(std::size_t(w.size()));
  double acc = 0.0;
  std::int64_t prev = 0;
  for (Index i = 0; i < w.size(); ++i) {
    acc += w[i];
    const auto cur = static_cast<std::int64_t>(std::llround(acc * scale));
    out[std::size_t(i)] = cur - prev;
    prev = cur;
  }
  return out;
}

/// Balances two integer mass vectors by moving the total discrepancy onto the
/// largest entry of `b`.
inline void balance_masses(const std::vector<std::int64_t>& a, std::vector<std::int64_t>& b) {
  std::int64_t sa = 0, sb = 0;
  for (auto x : a) sa += x;
  for (auto x : b) sb += x;
  if (sa == sb || b.empty()) return;
  const auto it = std::max_element(b.begin(), b.end());
  *it += sa - sb;
  require(*it >= 0, ErrorCode::infeasible, "balance_masses: total masses differ too much");
}

}  // namespace detail
}  // namespace ot
