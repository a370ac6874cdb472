#pragma once

// Random symmetric environments: one positive rate per unordered bond of
// Lambda_L, drawn i.i.d. from one of a few families.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwre/error.hpp"
#include "rwre/geometry.hpp"
#include "rwre/rng.hpp"

namespace rwre {

namespace family {
struct Constant {
  double value = 1.0;
};
/// Uniform on [a, b], 0 < a < b.
struct UniformInterval {
  double a = 0.5;
  double b = 1.5;
};
/// w = mean * (1 + alpha), alpha uniform on [-delta, delta].
struct BoundedPerturbation {
  double mean = 1.0;
  double delta = 0.0;
};
/// w = cap * U^(1/gamma), U uniform on (0, 1]; P(w <= x) ~ x^gamma near 0.
struct HeavyTailNearZero {
  double gamma = 0.5;
  double cap = 1.0;
};
}  // namespace family

using Family = std::variant<family::Constant, family::UniformInterval,
                            family::BoundedPerturbation, family::HeavyTailNearZero>;

inline void validate_family(const Family& f) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, family::Constant>) {
          if (!(p.value > 0)) throw ParameterDomainError("Constant rate must be > 0");
        } else if constexpr (std::is_same_v<T, family::UniformInterval>) {
          if (!(p.a > 0 && p.a < p.b))
            throw ParameterDomainError("UniformInterval requires 0 < a < b");
        } else if constexpr (std::is_same_v<T, family::BoundedPerturbation>) {
          if (!(p.mean > 0)) throw ParameterDomainError("BoundedPerturbation requires mean > 0");
          if (!(p.delta >= 0 && p.delta < 0.5))
            throw ParameterDomainError("BoundedPerturbation requires 0 <= delta < 1/2");
        } else {
          if (!(p.gamma > 0 && p.cap > 0))
            throw ParameterDomainError("HeavyTailNearZero requires gamma > 0 and cap > 0");
        }
      },
      f);
}

/// E w for the family.
inline double family_mean(const Family& f) {
  return std::visit(
      [](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, family::Constant>) return p.value;
        else if constexpr (std::is_same_v<T, family::UniformInterval>) return 0.5 * (p.a + p.b);
        else if constexpr (std::is_same_v<T, family::BoundedPerturbation>) return p.mean;
        else return p.cap * p.gamma / (p.gamma + 1.0);
      },
      f);
}

/// (E w^-1)^-1, the d=1 effective diffusion coefficient; 0 when E w^-1 = inf.
inline double family_harmonic_mean(const Family& f) {
  return std::visit(
      [](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, family::Constant>) return p.value;
        else if constexpr (std::is_same_v<T, family::UniformInterval>)
          return (p.b - p.a) / std::log(p.b / p.a);
        else if constexpr (std::is_same_v<T, family::BoundedPerturbation>) {
          if (p.delta == 0) return p.mean;
          return p.mean * 2 * p.delta / std::log((1 + p.delta) / (1 - p.delta));
        } else {
          if (p.gamma <= 1) return 0.0;
          return p.cap * (p.gamma - 1) / p.gamma;
        }
      },
      f);
}

inline std::string family_name(const Family& f) {
  static const char* names[] = {"Constant", "UniformInterval", "BoundedPerturbation",
                                "HeavyTailNearZero"};
  return names[f.index()];
}

struct EnvironmentSpec {
  Family family = family::Constant{};
  int dimension = 1;
  int half_size = 1;
  std::uint64_t seed = 0;

  void validate() const {
    validate_family(family);
    if (dimension < 1) throw ParameterDomainError("dimension must be >= 1");
    if (half_size < 1) throw ParameterDomainError("half-size L must be >= 1");
  }
};

/// Immutable assignment of rates to the bonds of Lambda_L.
class Environment {
public:
  Environment(EnvironmentSpec spec, std::vector<double> rates)
      : spec_(std::move(spec)),
        lattice_(std::make_shared<const Lattice>(spec_.dimension, spec_.half_size)),
        rates_(std::move(rates)) {
    if (rates_.size() != lattice_->bond_count())
      throw ShapeError("rate array does not match the bond count of the lattice");
    for (double w : rates_)
      if (!(w > 0) || !std::isfinite(w)) throw ParameterDomainError("rates must be finite and > 0");
  }

  const EnvironmentSpec& spec() const noexcept { return spec_; }
  const Lattice& lattice() const noexcept { return *lattice_; }
  std::shared_ptr<const Lattice> lattice_ptr() const noexcept { return lattice_; }
  int dimension() const noexcept { return spec_.dimension; }
  int half_size() const noexcept { return spec_.half_size; }
  std::span<const double> rates() const noexcept { return rates_; }
  double rate(std::size_t bond) const { return rates_.at(bond); }
  std::size_t bond_count() const noexcept { return rates_.size(); }

private:
  EnvironmentSpec spec_;
  std::shared_ptr<const Lattice> lattice_;
  std::vector<double> rates_;
};

/// Draw for bond b depends only on (seed, b).
inline Environment sample_environment(const EnvironmentSpec& spec) {
  spec.validate();
  const Lattice lat(spec.dimension, spec.half_size);
  const CounterStream stream(derive_key(spec.seed, 0x656e76ULL));
  std::vector<double> rates(lat.bond_count());
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        for (std::size_t b = 0; b < rates.size(); ++b) {
          if constexpr (std::is_same_v<T, family::Constant>) {
            rates[b] = p.value;
          } else {
            const double u = stream.uniform(b);
            if constexpr (std::is_same_v<T, family::UniformInterval>)
              rates[b] = p.a + (p.b - p.a) * u;
            else if constexpr (std::is_same_v<T, family::BoundedPerturbation>)
              rates[b] = p.mean * (1.0 + p.delta * (2.0 * u - 1.0));
            else
              rates[b] = p.cap * std::pow(u, 1.0 / p.gamma);
          }
        }
      },
      spec.family);
  return Environment(spec, std::move(rates));
}

/// Spec with the same family and geometry but replica-specific seed.
inline EnvironmentSpec replica_spec(const EnvironmentSpec& base, std::uint64_t replica) {
  EnvironmentSpec s = base;
  s.seed = derive_key(base.seed, replica + 1);
  return s;
}

inline void require_1d(const Environment& env) {
  if (env.dimension() != 1) throw DimensionError("operation requires d = 1");
}

/// s_x = (1/x) sum of 1/w over the first x bonds, left to right.
inline double partial_sum_s(const Environment& env, int x) {
  require_1d(env);
  if (x < 1 || x > 2 * env.half_size())
    throw ParameterDomainError("partial_sum_s requires 1 <= x <= 2L");
  const auto w = env.rates();
  double s = 0;
  for (int z = 0; z < x; ++z) s += 1.0 / w[z];
  return s / x;
}

/// Finite-volume harmonic-mean estimator 1 / s_{2L}.
inline double harmonic_kappa(const Environment& env) {
  require_1d(env);
  return 1.0 / partial_sum_s(env, 2 * env.half_size());
}

/// alpha_b = w_b / wbar - 1.
inline std::vector<double> alpha_field(const Environment& env, double wbar) {
  if (!(wbar > 0)) throw ParameterDomainError("alpha_field requires wbar > 0");
  std::vector<double> a(env.bond_count());
  const auto w = env.rates();
  for (std::size_t b = 0; b < a.size(); ++b) a[b] = w[b] / wbar - 1.0;
  return a;
}

// ---------------------------------------------------------------------------
// Serialization. Format "rwre-environment", version 1:
//   { "format", "version", "d", "L", "seed", "family": {"kind", params...},
//     "rates": [...] }   with rates in canonical bond order.

inline constexpr int kEnvironmentFormatVersion = 1;

inline nlohmann::json family_to_json(const Family& f) {
  nlohmann::json j;
  j["kind"] = family_name(f);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, family::Constant>) j["value"] = p.value;
        else if constexpr (std::is_same_v<T, family::UniformInterval>) { j["a"] = p.a; j["b"] = p.b; }
        else if constexpr (std::is_same_v<T, family::BoundedPerturbation>) { j["mean"] = p.mean; j["delta"] = p.delta; }
        else { j["gamma"] = p.gamma; j["cap"] = p.cap; }
      },
      f);
  return j;
}

inline Family family_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    Family f;
    if (kind == "Constant") f = family::Constant{j.at("value").get<double>()};
    else if (kind == "UniformInterval") f = family::UniformInterval{j.at("a").get<double>(), j.at("b").get<double>()};
    else if (kind == "BoundedPerturbation") f = family::BoundedPerturbation{j.at("mean").get<double>(), j.at("delta").get<double>()};
    else if (kind == "HeavyTailNearZero") f = family::HeavyTailNearZero{j.at("gamma").get<double>(), j.at("cap").get<double>()};
    else throw FormatError("unknown environment family '" + kind + "'");
    validate_family(f);
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad family description: ") + e.what());
  }
}

inline nlohmann::json spec_to_json(const EnvironmentSpec& s) {
  return {{"d", s.dimension}, {"L", s.half_size}, {"seed", s.seed}, {"family", family_to_json(s.family)}};
}

inline EnvironmentSpec spec_from_json(const nlohmann::json& j) {
  try {
    EnvironmentSpec s;
    s.family = family_from_json(j.at("family"));
    s.dimension = j.at("d").get<int>();
    s.half_size = j.at("L").get<int>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad environment spec: ") + e.what());
  }
}

inline nlohmann::json environment_to_json(const Environment& env) {
  nlohmann::json j = spec_to_json(env.spec());
  j["format"] = "rwre-environment";
  j["version"] = kEnvironmentFormatVersion;
  j["rates"] = std::vector<double>(env.rates().begin(), env.rates().end());
  return j;
}

inline Environment environment_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "rwre-environment")
    throw FormatError("not an rwre-environment document");
  if (j.value("version", 0) != kEnvironmentFormatVersion)
    throw FormatError("unsupported environment format version");
  EnvironmentSpec s = spec_from_json(j);
  try {
    return Environment(std::move(s), j.at("rates").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad rate array: ") + e.what());
  }
}

}  // namespace rwre
