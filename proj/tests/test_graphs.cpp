#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "rwre/graphs.hpp"

using namespace rwre;

namespace {

// Counts set partitions of {0..n-1} into r blocks by restricted growth strings.
std::uint64_t brute_partitions(int n, int r) {
  if (n == 0) return r == 0;
  std::uint64_t count = 0;
  std::function<void(int, int)> rec = [&](int k, int blocks) {
    if (k == n) {
      count += blocks == r;
      return;
    }
    for (int v = 0; v <= blocks && v < r; ++v) rec(k + 1, std::max(blocks, v + 1));
  };
  rec(1, 1);
  return count;
}

// A_G for one path by summing over all 2^(n-1) cut sets.
double amplitude_by_cuts(const std::vector<int>& path, const MomentModel& m) {
  const int n = static_cast<int>(path.size());
  double total = 0;
  for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
    double prod = 1;
    int pieces = 0, begin = 0;
    for (int k = 1; k <= n; ++k) {
      if (k == n || (mask >> (k - 1) & 1)) {
        std::map<int, int> mult;
        for (int i = begin; i < k; ++i) ++mult[path[i]];
        for (auto [b, c] : mult) prod *= m(c);
        ++pieces;
        begin = k;
      }
    }
    total += (pieces % 2 ? 1 : -1) * prod;
  }
  return total;
}

}  // namespace

TEST(Stirling, KnownValuesAndEdgeCases) {
  EXPECT_EQ(stirling_pi(0, 0), 1u);
  EXPECT_EQ(stirling_pi(3, 0), 0u);
  EXPECT_EQ(stirling_pi(2, 3), 0u);
  EXPECT_EQ(stirling_pi(5, 2), 15u);
  EXPECT_EQ(stirling_pi(10, 3), 9330u);
  EXPECT_EQ(stirling_pi(7, 7), 1u);
  std::uint64_t bell = 0;
  for (int r = 0; r <= 10; ++r) bell += stirling_pi(10, r);
  EXPECT_EQ(bell, 115975u);
  EXPECT_THROW(stirling_pi(-1, 0), ParameterDomainError);
  EXPECT_THROW(stirling_pi(100, 50), CapExceededError);
}

TEST(Stirling, MatchesEnumerationAndRecursion) {
  for (int n = 1; n <= 10; ++n)
    for (int r = 1; r <= n; ++r) {
      EXPECT_EQ(stirling_pi(n, r), brute_partitions(n, r)) << n << ',' << r;
      EXPECT_EQ(stirling_pi(n, r), stirling_pi(n - 1, r - 1) + r * stirling_pi(n - 1, r));
    }
}

TEST(Stirling, LowerBoundProperty) {
  for (int n = 1; n <= 12; ++n)
    for (int r = 1; r <= n; ++r) EXPECT_GE(static_cast<double>(stirling_pi(n, r)), std::pow(r, n - r));
}

TEST(SeriesBound, FormulaAndDivergence) {
  const KLBound b = kl_series_bound(0.05, 1.0);
  EXPECT_DOUBLE_EQ(b.delta_prime, 0.4);
  EXPECT_DOUBLE_EQ(b.bound, 0.4 / 0.6);
  EXPECT_DOUBLE_EQ(b.rho_bound, 0.05 * 4 * 2 / (1 - 0.4));
  EXPECT_EQ(kl_series_bound(0.0, 3.0).bound, 0.0);
  EXPECT_THROW(kl_series_bound(0.2, 1.0), DivergenceError);
  EXPECT_THROW(kl_series_bound(-0.1, 1.0), ParameterDomainError);
}

TEST(Moments, ModelsAndBounds) {
  const MomentModel u = MomentModel::uniform(0.3, 6);
  EXPECT_EQ(u.max_order(), 6);
  EXPECT_EQ(u(0), 1.0);
  EXPECT_EQ(u(3), 0.0);
  EXPECT_NEAR(u(2), 0.09 / 3, 1e-16);
  EXPECT_TRUE(u.bounded_by(0.3));
  EXPECT_FALSE(MomentModel::centered({0.5}).bounded_by(0.3));
  EXPECT_THROW(MomentModel({0.1, 0.2}), ParameterDomainError);
  EXPECT_NO_THROW(MomentModel({0.1, 0.2}, false));
  EXPECT_THROW(u(7), GuardExceededError);
}

TEST(Cancellation, SingleBondRepeatedGivesSecondMoment) {
  const auto graphs = cancellation_check(2, 1, MomentModel::centered({0.1}));
  ASSERT_EQ(graphs.size(), 1u);
  EXPECT_EQ(graphs[0].length, 2);
  EXPECT_EQ(graphs[0].edges.size(), 1u);
  EXPECT_EQ(graphs[0].edges[0].u, graphs[0].edges[0].v);
  EXPECT_FALSE(graphs[0].bridged);
  EXPECT_DOUBLE_EQ(graphs[0].amplitude, 0.1);
}

TEST(Cancellation, BridgedGraphsVanish) {
  const MomentModel m = MomentModel::centered({0.1, 0.01, 0.02, 0.003, 0.004});
  const auto graphs = cancellation_check(6, 3, m);
  std::size_t bridged = 0;
  bool nonzero_open = false;
  for (const auto& g : graphs) {
    for (int v : g.vertices) EXPECT_GE(v, 0);
    if (g.bridged) {
      ++bridged;
      EXPECT_LT(std::abs(g.amplitude), 1e-12);
    } else if (std::abs(g.amplitude) > 1e-12) {
      nonzero_open = true;
    }
  }
  EXPECT_GT(bridged, 0u);
  EXPECT_TRUE(nonzero_open);
}

TEST(Cancellation, PrefixRecursionMatchesCutEnumeration) {
  const MomentModel m({0.07, 0.1, 0.01, 0.02, 0.003}, false);
  // Every path of length 5 over 2 bonds with each bond used at least twice.
  const auto graphs = cancellation_check_with(5, 2, [&](const std::vector<int>& piece) {
    int c[2] = {0, 0};
    for (int b : piece) ++c[b];
    return (c[0] ? m(c[0]) : 1.0) * (c[1] ? m(c[1]) : 1.0);
  });
  double via_groups = 0, via_cuts = 0;
  for (const auto& g : graphs)
    if (g.length == 5) via_groups += g.amplitude;
  for (unsigned code = 0; code < 32; ++code) {
    std::vector<int> p(5);
    int ones = 0;
    for (int k = 0; k < 5; ++k) ones += p[k] = (code >> (4 - k)) & 1;
    if (ones == 1 || ones == 4) continue;
    via_cuts += amplitude_by_cuts(p, m);
  }
  EXPECT_NEAR(via_groups, via_cuts, 1e-15);
}

TEST(Cancellation, BridgeDetection) {
  // Path 0,0,1,1: loop at 0, single edge 0-1, loop at 1 -> bridged.
  // Path 0,1,0,1: edge 0-1 with multiplicity 3 -> not bridged.
  const auto graphs = cancellation_check(4, 2, MomentModel::centered({0.1, 0.01, 0.02}));
  bool saw_bridge = false, saw_multi = false;
  for (const auto& g : graphs) {
    if (g.length != 4 || g.first != 0 || g.last != 1) continue;
    if (g.edges.size() == 3) {
      saw_bridge = true;
      EXPECT_TRUE(g.bridged);
    }
    if (g.edges.size() == 1 && g.edges[0].multiplicity == 3) {
      saw_multi = true;
      EXPECT_FALSE(g.bridged);
    }
  }
  EXPECT_TRUE(saw_bridge);
  EXPECT_TRUE(saw_multi);
}

TEST(Cancellation, NonFactorizingWeightBreaksCancellation) {
  const auto graphs = cancellation_check_with(5, 3, [](const std::vector<int>& piece) {
    return 0.1 * static_cast<double>(piece.size() * piece.size());
  });
  double worst = 0;
  for (const auto& g : graphs)
    if (g.bridged) worst = std::max(worst, std::abs(g.amplitude));
  EXPECT_GT(worst, 1e-6);
}

TEST(Cancellation, FirstMomentDoesNotRescueBridges) {
  const auto graphs = cancellation_check(6, 3, MomentModel({0.05, 0.1, 0.01, 0.02, 0.003, 0.004}, false));
  for (const auto& g : graphs)
    if (g.bridged) {
      EXPECT_LT(std::abs(g.amplitude), 1e-12);
    }
}

TEST(Cancellation, Guards) {
  const MomentModel m = MomentModel::uniform(0.1, 10);
  EXPECT_THROW(cancellation_check(9, 2, m), GuardExceededError);
  EXPECT_THROW(cancellation_check(4, 5, m), GuardExceededError);
  EXPECT_THROW(cancellation_check(1, 2, m), ParameterDomainError);
  EXPECT_THROW(cancellation_check(6, 2, MomentModel::centered({0.1})), GuardExceededError);
}

TEST(Cancellation, JsonReport) {
  const auto graphs = cancellation_check(2, 1, MomentModel::centered({0.1}));
  const auto j = to_json(graphs.front());
  EXPECT_EQ(j["amplitude"], 0.1);
  EXPECT_EQ(j["bridged"], false);
  EXPECT_EQ(to_json(kl_series_bound(0.05, 1.0))["delta_prime"], 0.4);
}
