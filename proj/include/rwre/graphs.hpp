#pragma once

// Combinatorics of the expansion: set-partition counts, the series bound on
// K_L, and exhaustive evaluation of the graph amplitudes A_G on tiny
// instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwre/error.hpp"

namespace rwre {

/// Number of partitions of {1..n} into r nonempty blocks,
/// Pi(n, r) = Pi(n-1, r-1) + r Pi(n-1, r). Zero when r > n.
inline std::uint64_t stirling_pi(int n, int r) {
  if (n < 0 || r < 0) throw ParameterDomainError("stirling_pi requires n, r >= 0");
  if (r > n) return 0;
  if (r == 0) return n == 0 ? 1 : 0;
  std::vector<std::uint64_t> row(static_cast<std::size_t>(r) + 1, 0), next(row.size());
  row[0] = 1;  // Pi(0, 0)
  for (int i = 1; i <= n; ++i) {
    next[0] = 0;
    for (int k = 1; k <= std::min(i, r); ++k) {
      std::uint64_t grow = 0, sum = 0;
      if (__builtin_mul_overflow(static_cast<std::uint64_t>(k), row[k], &grow) ||
          __builtin_add_overflow(row[k - 1], grow, &sum))
        throw CapExceededError("stirling_pi overflows 64 bits");
      next[k] = sum;
    }
    for (int k = i + 1; k <= r; ++k) next[k] = 0;
    row.swap(next);
  }
  return row[r];
}

struct KLBound {
  double delta_prime = 0;  // 4 (1 + C) delta
  double bound = 0;        // C delta' / (1 - delta')
  double rho_bound = 0;    // 4 delta C (1 + C) / (1 - 4 delta (1 + C))
};

inline KLBound kl_series_bound(double delta, double C) {
  if (!(delta >= 0) || !(C >= 0)) throw ParameterDomainError("kl_series_bound requires delta >= 0 and C >= 0");
  KLBound b;
  b.delta_prime = 4.0 * (1.0 + C) * delta;
  if (!(b.delta_prime < 1.0)) throw DivergenceError("delta' = 4(1+C)delta >= 1: series bound inapplicable");
  b.bound = C * b.delta_prime / (1.0 - b.delta_prime);
  b.rho_bound = 4.0 * delta * C * (1.0 + C) / (1.0 - 4.0 * delta * (1.0 + C));
  return b;
}

/// Moments m_k = E alpha^k, k = 0..k_max (m_0 = 1).
class MomentModel {
public:
  /// `moments` lists m_1, m_2, ...; m_1 must vanish unless `centered` is false.
  explicit MomentModel(std::vector<double> moments, bool centered = true) : m_{1.0} {
    m_.insert(m_.end(), moments.begin(), moments.end());
    if (centered && m_.size() > 1 && m_[1] != 0.0) throw ParameterDomainError("moment model requires m_1 = 0");
  }

  /// Centered model from (m_2, m_3, ...).
  static MomentModel centered(const std::vector<double>& from_second) {
    std::vector<double> m{0.0};
    m.insert(m.end(), from_second.begin(), from_second.end());
    return MomentModel(std::move(m));
  }

  /// alpha uniform on [-delta, delta]: m_k = delta^k / (k + 1) for even k, 0 for odd k.
  static MomentModel uniform(double delta, int k_max) {
    std::vector<double> m;
    for (int k = 1; k <= k_max; ++k) m.push_back(k % 2 ? 0.0 : std::pow(delta, k) / (k + 1));
    return MomentModel(std::move(m));
  }

  int max_order() const noexcept { return static_cast<int>(m_.size()) - 1; }
  double operator()(int k) const {
    if (k < 0 || k > max_order()) throw GuardExceededError("moment order beyond the model");
    return m_[static_cast<std::size_t>(k)];
  }
  /// |m_k| <= delta^k for every stored k.
  bool bounded_by(double delta) const {
    for (int k = 1; k <= max_order(); ++k)
      if (std::abs(m_[k]) > std::pow(delta, k) * (1 + 1e-12)) return false;
    return true;
  }

private:
  std::vector<double> m_;
};

struct GraphEdge {
  int u = 0, v = 0;  // u <= v; u == v is a loop
  int multiplicity = 0;
};

struct AdmissibleGraphReport {
  int length = 0;  // number of steps n of the contributing paths
  int first = 0;   // b_1
  int last = 0;    // b_n
  std::vector<int> vertices;
  std::vector<GraphEdge> edges;
  std::size_t paths = 0;
  double amplitude = 0;  // A_G
  bool bridged = false;
};

inline constexpr int kMaxPathLength = 8;
inline constexpr int kMaxAbstractBonds = 4;

namespace detail {
inline bool has_bridge(const std::vector<int>& vertices, const std::vector<GraphEdge>& edges) {
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].u == edges[e].v || edges[e].multiplicity != 1) continue;
    // Connectivity of the vertex set without edge e.
    std::map<int, int> seen;
    for (int v : vertices) seen[v] = 0;
    std::vector<int> stack{vertices.front()};
    seen[vertices.front()] = 1;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      for (std::size_t f = 0; f < edges.size(); ++f) {
        if (f == e) continue;
        int y = -1;
        if (edges[f].u == x) y = edges[f].v;
        else if (edges[f].v == x) y = edges[f].u;
        if (y >= 0 && !seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
      }
    }
    for (const auto& [v, s] : seen)
      if (!s) return true;
  }
  return false;
}
}  // namespace detail

/// Enumerates every path (b_1..b_n), 2 <= n <= n_max, over m abstract bonds
/// in which each used bond occurs at least twice, groups paths by
/// (n, b_1, b_n, edge multiset) and sums, per group,
///   A_G = sum_paths sum_{contiguous splits into s pieces} (-1)^{s+1} prod_j weight(piece_j).
/// `weight` receives the piece as a sequence of bonds.
template <class Weight>
std::vector<AdmissibleGraphReport> cancellation_check_with(int n_max, int m, Weight&& weight) {
  if (n_max < 2 || m < 1) throw ParameterDomainError("cancellation_check needs n_max >= 2 and m >= 1");
  if (n_max > kMaxPathLength || m > kMaxAbstractBonds)
    throw GuardExceededError("cancellation_check limited to n_max <= 8 and m <= 4");
  using Key = std::tuple<int, int, int, std::vector<std::tuple<int, int, int>>>;
  std::map<Key, AdmissibleGraphReport> groups;
  for (int n = 2; n <= n_max; ++n) {
    std::vector<int> path(n, 0);
    while (true) {
      std::vector<int> count(m, 0);
      for (int b : path) ++count[b];
      bool admissible = true;
      for (int c : count) admissible = admissible && c != 1;
      if (admissible) {
        std::map<std::pair<int, int>, int> mult;
        for (int k = 0; k + 1 < n; ++k) ++mult[{std::min(path[k], path[k + 1]), std::max(path[k], path[k + 1])}];
        std::vector<std::tuple<int, int, int>> edges;
        for (const auto& [e, c] : mult) edges.emplace_back(e.first, e.second, c);
        Key key{n, path.front(), path.back(), edges};
        auto [it, fresh] = groups.try_emplace(key);
        AdmissibleGraphReport& rep = it->second;
        if (fresh) {
          rep.length = n;
          rep.first = path.front();
          rep.last = path.back();
          for (int b = 0; b < m; ++b)
            if (count[b]) rep.vertices.push_back(b);
          for (const auto& [u, v, c] : edges) rep.edges.push_back({u, v, c});
          rep.bridged = detail::has_bridge(rep.vertices, rep.edges);
        }
        ++rep.paths;
        // g[k]: signed sum over splits of the first k steps, g[0] = -1.
        std::vector<double> g(n + 1, 0.0);
        g[0] = -1.0;
        for (int k = 1; k <= n; ++k)
          for (int j = 0; j < k; ++j)
            g[k] -= g[j] * weight(std::vector<int>(path.begin() + j, path.begin() + k));
        rep.amplitude += g[n];
      }
      int k = n - 1;
      while (k >= 0 && path[k] == m - 1) path[k--] = 0;
      if (k < 0) break;
      ++path[k];
    }
  }
  std::vector<AdmissibleGraphReport> out;
  out.reserve(groups.size());
  for (auto& [k, v] : groups) out.push_back(std::move(v));
  return out;
}

/// Amplitudes with the factorized weight alpha-bar(piece) = prod_v m_{mult_v(piece)}.
inline std::vector<AdmissibleGraphReport> cancellation_check(int n_max, int m, const MomentModel& moments) {
  if (n_max > moments.max_order()) throw GuardExceededError("moment model shorter than the longest path");
  return cancellation_check_with(n_max, m, [&](const std::vector<int>& piece) {
    int count[kMaxAbstractBonds] = {0, 0, 0, 0};
    for (int b : piece) ++count[b];
    double w = 1;
    for (int c : count)
      if (c) w *= moments(c);
    return w;
  });
}

inline nlohmann::json to_json(const AdmissibleGraphReport& r) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : r.edges) edges.push_back({e.u, e.v, e.multiplicity});
  return {{"length", r.length}, {"first", r.first},      {"last", r.last},
          {"vertices", r.vertices}, {"edges", edges},     {"paths", r.paths},
          {"amplitude", r.amplitude}, {"bridged", r.bridged}};
}

inline nlohmann::json to_json(const KLBound& b) {
  return {{"delta_prime", b.delta_prime}, {"bound", b.bound}, {"rho_bound", b.rho_bound}};
}

}  // namespace rwre
