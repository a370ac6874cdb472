#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rwre/env.hpp"

using namespace rwre;

namespace {

EnvironmentSpec spec_of(Family f, int d, int L, std::uint64_t seed = 1) {
  EnvironmentSpec s;
  s.family = f;
  s.dimension = d;
  s.half_size = L;
  s.seed = seed;
  return s;
}

// Composite Simpson on [a, b].
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

}  // namespace

TEST(Lattice, CountsAndIndexRoundTrip) {
  for (auto [d, L] : {std::pair{1, 1}, std::pair{1, 5}, std::pair{2, 3}, std::pair{3, 2}}) {
    const Lattice lat(d, L);
    EXPECT_EQ(lat.site_count(), static_cast<std::size_t>(std::pow(2 * L - 1, d)));
    EXPECT_EQ(lat.bond_count(), static_cast<std::size_t>(d * 2 * L * std::pow(2 * L - 1, d - 1)));
    for (std::size_t s = 0; s < lat.site_count(); ++s) EXPECT_EQ(lat.site_index(lat.site(s)), s);
    for (std::size_t b = 0; b < lat.bond_count(); ++b) {
      const Bond bd = lat.bond(b);
      EXPECT_EQ(lat.bond_index(bd.direction, bd.tail), b);
    }
  }
}

TEST(Lattice, BondOrderIsDimensionMajor) {
  const Lattice lat(2, 2);
  const Bond first = lat.bond(0);
  EXPECT_EQ(first.direction, 0);
  EXPECT_EQ(first.tail, (Point{-2, -1}));
  const Bond second = lat.bond(1);
  EXPECT_EQ(second.tail, (Point{-2, 0}));
  const Bond y0 = lat.bond(lat.bonds_per_direction());
  EXPECT_EQ(y0.direction, 1);
  EXPECT_EQ(y0.tail, (Point{-1, -2}));
}

TEST(Lattice, BoundaryBondsTouchOneSite) {
  const Lattice lat(1, 3);
  EXPECT_EQ(lat.tail_site(0), kOutside);
  EXPECT_EQ(lat.head_site(0), lat.site_index(Point{-2}));
  EXPECT_EQ(lat.head_site(5), kOutside);
  EXPECT_EQ(lat.site_bond(lat.site_index(Point{0}), 0, true), 3u);
  EXPECT_EQ(lat.site_index(Point{3}), kOutside);
}

TEST(Lattice, RejectsBadArguments) {
  EXPECT_THROW(Lattice(0, 3), ParameterDomainError);
  EXPECT_THROW(Lattice(1, 0), ParameterDomainError);
  const Lattice lat(2, 2);
  EXPECT_THROW(lat.site_index(Point{0}), ShapeError);
  EXPECT_THROW(lat.bond(lat.bond_count()), ShapeError);
}

TEST(Family, MomentsMatchQuadrature) {
  const family::UniformInterval u{0.5, 1.5};
  EXPECT_NEAR(family_mean(u), 1.0, 1e-15);
  EXPECT_NEAR(1.0 / family_harmonic_mean(u), simpson([](double w) { return 1.0 / w; }, 0.5, 1.5), 1e-12);
  EXPECT_NEAR(family_harmonic_mean(u), 1.0 / std::log(3.0), 1e-15);

  const family::BoundedPerturbation bp{2.0, 0.3};
  const double inv = simpson([&](double a) { return 1.0 / (2.0 * (1 + a)) / 0.6; }, -0.3, 0.3);
  EXPECT_NEAR(family_harmonic_mean(bp), 1.0 / inv, 1e-12);
  EXPECT_EQ(family_harmonic_mean(family::BoundedPerturbation{2.0, 0.0}), 2.0);

  // w = cap U^(1/gamma): E w = cap gamma/(gamma+1), E 1/w = gamma/(cap (gamma-1)) for gamma > 1.
  const family::HeavyTailNearZero ht{3.0, 2.0};
  EXPECT_NEAR(family_mean(ht), simpson([&](double u) { return 2.0 * std::cbrt(u); }, 0.0, 1.0), 1e-6);
  EXPECT_NEAR(family_harmonic_mean(ht), 2.0 * 2.0 / 3.0, 1e-15);
  EXPECT_EQ(family_harmonic_mean(family::HeavyTailNearZero{0.5, 1.0}), 0.0);
}

TEST(Family, ValidationRejectsBadParameters) {
  EXPECT_THROW(validate_family(family::Constant{0.0}), ParameterDomainError);
  EXPECT_THROW(validate_family(family::UniformInterval{1.0, 1.0}), ParameterDomainError);
  EXPECT_THROW(validate_family(family::UniformInterval{-1.0, 1.0}), ParameterDomainError);
  EXPECT_THROW(validate_family(family::BoundedPerturbation{1.0, 0.5}), ParameterDomainError);
  EXPECT_THROW(validate_family(family::HeavyTailNearZero{0.0, 1.0}), ParameterDomainError);
  EXPECT_THROW(sample_environment(spec_of(family::Constant{1.0}, 0, 3)), ParameterDomainError);
}

TEST(Sampling, DeterministicPerSeed) {
  const auto s = spec_of(family::UniformInterval{0.5, 1.5}, 2, 6, 42);
  const Environment a = sample_environment(s), b = sample_environment(s);
  EXPECT_TRUE(std::equal(a.rates().begin(), a.rates().end(), b.rates().begin()));
  auto s2 = s;
  s2.seed = 43;
  const Environment c = sample_environment(s2);
  EXPECT_FALSE(std::equal(a.rates().begin(), a.rates().end(), c.rates().begin()));
}

TEST(Sampling, RatesRespectFamilySupport) {
  const Environment u = sample_environment(spec_of(family::UniformInterval{0.5, 1.5}, 1, 200));
  for (double w : u.rates()) EXPECT_TRUE(w >= 0.5 && w <= 1.5);
  const Environment bp = sample_environment(spec_of(family::BoundedPerturbation{2.0, 0.2}, 2, 10));
  for (double w : bp.rates()) EXPECT_TRUE(w >= 1.6 && w <= 2.4);
  for (double a : alpha_field(bp, 2.0)) EXPECT_LE(std::abs(a), 0.2 + 1e-15);
  const Environment c = sample_environment(spec_of(family::Constant{0.7}, 3, 2));
  for (double w : c.rates()) EXPECT_EQ(w, 0.7);
}

TEST(Sampling, EmpiricalMeanWithinFourSigma) {
  const Environment env = sample_environment(spec_of(family::UniformInterval{0.5, 1.5}, 1, 50000, 7));
  double m = 0;
  for (double w : env.rates()) m += w;
  m /= env.bond_count();
  const double sigma = std::sqrt(1.0 / 12.0 / env.bond_count());
  EXPECT_NEAR(m, 1.0, 4 * sigma);
}

TEST(Sampling, HeavyTailLowerCdf) {
  const family::HeavyTailNearZero f{0.5, 1.0};
  const Environment env = sample_environment(spec_of(f, 1, 50000, 9));
  for (double x : {0.01, 0.1, 0.5}) {
    const double p = std::pow(x, 0.5);
    const double emp = static_cast<double>(std::count_if(env.rates().begin(), env.rates().end(),
                                                         [&](double w) { return w <= x; })) / env.bond_count();
    EXPECT_NEAR(emp, p, 4 * std::sqrt(p * (1 - p) / env.bond_count()));
  }
}

TEST(Sampling, ReplicaSeedsDiffer) {
  const auto base = spec_of(family::UniformInterval{0.5, 1.5}, 1, 4, 3);
  EXPECT_NE(replica_spec(base, 0).seed, replica_spec(base, 1).seed);
  EXPECT_NE(replica_spec(base, 0).seed, base.seed);
}

TEST(Harmonic, PartialSumsAndEstimator) {
  const Environment c = sample_environment(spec_of(family::Constant{2.0}, 1, 8));
  EXPECT_DOUBLE_EQ(partial_sum_s(c, 3), 0.5);
  EXPECT_DOUBLE_EQ(harmonic_kappa(c), 2.0);
  const Environment env(spec_of(family::Constant{1.0}, 1, 1), {1.0, 3.0});
  EXPECT_DOUBLE_EQ(partial_sum_s(env, 2), (1.0 + 1.0 / 3.0) / 2);
  EXPECT_THROW(partial_sum_s(env, 3), ParameterDomainError);
  EXPECT_THROW(partial_sum_s(env, 0), ParameterDomainError);
  const Environment two = sample_environment(spec_of(family::Constant{1.0}, 2, 2));
  EXPECT_THROW(harmonic_kappa(two), DimensionError);
}

TEST(Harmonic, ConvergesToFamilyValue) {
  const auto f = family::UniformInterval{0.5, 1.5};
  const Environment env = sample_environment(spec_of(f, 1, 100000, 11));
  EXPECT_NEAR(harmonic_kappa(env), family_harmonic_mean(f), 5e-3);
}

TEST(Environment, RejectsBadRates) {
  const auto s = spec_of(family::Constant{1.0}, 1, 2);
  EXPECT_THROW(Environment(s, {1.0, 1.0}), ShapeError);
  EXPECT_THROW(Environment(s, {1.0, 0.0, 1.0, 1.0}), ParameterDomainError);
  EXPECT_THROW(Environment(s, {1.0, NAN, 1.0, 1.0}), ParameterDomainError);
}

TEST(Serialization, RoundTripIsExact) {
  for (const Family& f : std::vector<Family>{family::Constant{1.5}, family::UniformInterval{0.25, 2.0},
                                             family::BoundedPerturbation{1.0, 0.2}, family::HeavyTailNearZero{0.5, 1.0}}) {
    const Environment env = sample_environment(spec_of(f, 2, 4, 5));
    const auto text = environment_to_json(env).dump();
    const Environment back = environment_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back.spec().seed, 5u);
    EXPECT_EQ(family_name(back.spec().family), family_name(f));
    ASSERT_EQ(back.bond_count(), env.bond_count());
    for (std::size_t b = 0; b < env.bond_count(); ++b) EXPECT_EQ(back.rate(b), env.rate(b));
  }
}

TEST(Serialization, RejectsMalformedDocuments) {
  const Environment env = sample_environment(spec_of(family::Constant{1.0}, 1, 2));
  nlohmann::json j = environment_to_json(env);
  auto bad = j;
  bad["format"] = "other";
  EXPECT_THROW(environment_from_json(bad), FormatError);
  bad = j;
  bad["version"] = 99;
  EXPECT_THROW(environment_from_json(bad), FormatError);
  bad = j;
  bad["rates"].push_back(1.0);
  EXPECT_THROW(environment_from_json(bad), ShapeError);
  bad = j;
  bad["family"]["kind"] = "Nope";
  EXPECT_THROW(environment_from_json(bad), FormatError);
  bad = j;
  bad.erase("L");
  EXPECT_THROW(environment_from_json(bad), FormatError);
}

TEST(Rng, CounterStreamIsPureAndInRange) {
  const CounterStream s(123);
  EXPECT_EQ(s.bits(7), CounterStream(123).bits(7));
  EXPECT_NE(s.bits(7), s.bits(8));
  EXPECT_NE(s.split(1).key(), s.split(2).key());
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = s.uniform(i);
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
  EXPECT_EQ(unit_open_closed(~0ULL), 1.0);
  EXPECT_GT(unit_open_closed(0), 0.0);
}

TEST(Rng, ExponentialMean) {
  WalkStream w(99);
  double m = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) m += w.exponential(2.0);
  EXPECT_NEAR(m / n, 0.5, 4 * 0.5 / std::sqrt(n));
}
