#pragma once

// Batch experiments behind the command-line tool. Each experiment reads a
// RunConfig, writes plotting-ready CSV/JSON files into the output directory
// and a manifest.json listing them.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "rwre/dipole.hpp"
#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/graphs.hpp"
#include "rwre/green.hpp"
#include "rwre/spectral.hpp"
#include "rwre/walker.hpp"

namespace rwre {

inline constexpr const char* kToolVersion = "1.0.0";

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"gen-env", "kernel-compare", "spectrum", "walk",
                                              "kappa",   "dipole",         "bounds"};
  return names;
}

struct RunConfig {
  std::string experiment;
  EnvironmentSpec environment;
  std::uint64_t seed = 0;
  std::vector<int> L_sweep;
  std::vector<double> t_grid;  // microscopic times
  std::vector<double> fit_window;
  std::size_t ensemble_size = 10000;
  std::size_t replicas = 10;
  std::size_t seeds_per_L = 1;
  int cutoff = 4;
  int order = 8;
  int grid_points = kDefaultGridPoints;
  int histogram_bins = 0;
  std::size_t environments = 100;  // bounds: M
  std::size_t test_vectors = 50;   // bounds: K
  double series_constant = 1.0;    // bounds: C
  int path_length = 6;             // bounds: n_max
  int abstract_bonds = 3;          // bounds: m
  std::vector<double> moments;     // bounds: m_2, m_3, ...
  std::vector<int> distances;      // dipole decay offsets
  std::string output_dir = "rwre-out";
};

// ---------------------------------------------------------------------------
// Config (de)serialization

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.experiment;
  j["seed"] = c.seed;
  j["environment"] = spec_to_json(c.environment);
  j["environment"].erase("seed");
  j["L_sweep"] = c.L_sweep;
  j["t_grid"] = c.t_grid;
  j["fit_window"] = c.fit_window;
  j["ensemble_size"] = c.ensemble_size;
  j["replicas"] = c.replicas;
  j["seeds_per_L"] = c.seeds_per_L;
  j["cutoff"] = c.cutoff;
  j["order"] = c.order;
  j["grid_points"] = c.grid_points;
  j["histogram_bins"] = c.histogram_bins;
  j["environments"] = c.environments;
  j["test_vectors"] = c.test_vectors;
  j["series_constant"] = c.series_constant;
  j["path_length"] = c.path_length;
  j["abstract_bonds"] = c.abstract_bonds;
  j["moments"] = c.moments;
  j["distances"] = c.distances;
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {
/// t grid either as an explicit list or {"start", "stop", "count", "scale"}.
inline std::vector<double> parse_t_grid(const nlohmann::json& j) {
  if (j.is_array()) return j.get<std::vector<double>>();
  const double a = j.at("start").get<double>(), b = j.at("stop").get<double>();
  const int n = j.at("count").get<int>();
  const std::string scale = j.value("scale", std::string("linear"));
  if (n < 2 || !(a > 0) || !(b > a)) throw ConfigError("t_grid needs 0 < start < stop and count >= 2");
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / (n - 1);
    if (scale == "log") t[i] = a * std::pow(b / a, f);
    else if (scale == "linear") t[i] = a + (b - a) * f;
    else throw ConfigError("t_grid scale must be 'linear' or 'log'");
  }
  return t;
}
}  // namespace detail

/// Parses a config document. Missing keys take defaults that depend on the
/// experiment; the resolved config is what the manifest records.
inline RunConfig config_from_json(const nlohmann::json& j, const std::string& experiment) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::vector<std::string> known{
        "experiment", "seed", "environment", "L_sweep", "t_grid", "fit_window", "ensemble_size",
        "replicas", "seeds_per_L", "cutoff", "order", "grid_points", "histogram_bins", "environments",
        "test_vectors", "series_constant", "path_length", "abstract_bonds", "moments", "distances",
        "output_dir"};
    for (const auto& [k, v] : j.items())
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
    c.experiment = experiment;
    if (j.contains("experiment") && j["experiment"].get<std::string>() != experiment)
      throw ConfigError("config is for experiment '" + j["experiment"].get<std::string>() + "'");
    if (std::find(experiment_names().begin(), experiment_names().end(), experiment) == experiment_names().end())
      throw ConfigError("unknown experiment '" + experiment + "'");
    c.seed = j.value("seed", std::uint64_t{0});
    if (!j.contains("environment")) throw ConfigError("config needs an 'environment' section");
    nlohmann::json env = j.at("environment");
    env["seed"] = c.seed;
    c.environment = spec_from_json(env);
    const int L = c.environment.half_size;
    c.L_sweep = j.value("L_sweep", std::vector<int>{L});
    for (int l : c.L_sweep)
      if (l < 1) throw ConfigError("L_sweep entries must be >= 1");
    if (j.contains("t_grid")) c.t_grid = detail::parse_t_grid(j.at("t_grid"));
    else {
      const double top = 0.02 * L * L;
      for (int i = 1; i <= 20; ++i) c.t_grid.push_back(top * i / 20.0);
    }
    for (std::size_t i = 0; i < c.t_grid.size(); ++i)
      if (!(c.t_grid[i] > 0) || (i && !(c.t_grid[i] > c.t_grid[i - 1])))
        throw ConfigError("t_grid must be positive and strictly increasing");
    c.fit_window = j.value("fit_window", std::vector<double>{c.t_grid.front(), c.t_grid.back()});
    if (c.fit_window.size() != 2 || !(c.fit_window[0] < c.fit_window[1]))
      throw ConfigError("fit_window must be [t_lo, t_hi] with t_lo < t_hi");
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.replicas = j.value("replicas", c.environment.family.index() == 0 ? std::size_t{1} : c.replicas);
    c.replicas = std::min(c.replicas, c.ensemble_size);
    c.seeds_per_L = j.value("seeds_per_L", c.seeds_per_L);
    c.cutoff = j.value("cutoff", c.cutoff);
    c.order = j.value("order", c.order);
    c.grid_points = j.value("grid_points", c.grid_points);
    c.histogram_bins = j.value("histogram_bins", c.environment.dimension == 1 ? 32 : 8);
    c.environments = j.value("environments", c.environments);
    c.test_vectors = j.value("test_vectors", c.test_vectors);
    c.series_constant = j.value("series_constant", c.series_constant);
    c.path_length = j.value("path_length", c.path_length);
    c.abstract_bonds = j.value("abstract_bonds", c.abstract_bonds);
    c.moments = j.value("moments", std::vector<double>{0.1, 0.01, 0.02});
    while (static_cast<int>(c.moments.size()) + 1 < c.path_length) c.moments.push_back(0.0);
    c.distances = j.value("distances", std::vector<int>{4, 8, 16, 32});
    c.output_dir = j.value("output_dir", c.output_dir);
    if (c.ensemble_size < 1 || c.replicas < 1 || c.seeds_per_L < 1 || c.cutoff < 1 || c.order < 0 ||
        c.grid_points < 2 || c.histogram_bins < 0 || c.environments < 1 || c.test_vectors < 1)
      throw ConfigError("count-like config values out of range");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  } catch (const ParameterDomainError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// FNV-1a 64 of a string.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Experiments

/// Files produced by an experiment, name -> content.
using Artifacts = std::map<std::string, std::string>;

namespace detail {
inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline EnvironmentSpec with_L(EnvironmentSpec s, int L) {
  s.half_size = L;
  return s;
}

inline Eigen::MatrixXd scalar_kappa(double k, int d) { return k * Eigen::MatrixXd::Identity(d, d); }

/// Reference kappa for comparisons: the constant rate, the d=1 harmonic
/// estimator, or else the spectral estimator.
inline std::pair<double, std::string> reference_kappa(const Environment& env) {
  if (const auto* c = std::get_if<family::Constant>(&env.spec().family)) return {c->value, "constant"};
  if (env.dimension() == 1) return {harmonic_kappa(env), "harmonic"};
  return {spectral_kappa(env), "spectral"};
}

inline Artifacts run_gen_env(const RunConfig& c) {
  Artifacts out;
  for (int L : c.L_sweep) {
    const Environment env = sample_environment(with_L(c.environment, L));
    out["environment_L" + std::to_string(L) + ".json"] = environment_to_json(env).dump() + "\n";
  }
  return out;
}

inline Artifacts run_kernel_compare(const RunConfig& c) {
  std::ostringstream csv;
  csv << std::setprecision(17);
  nlohmann::json summary = nlohmann::json::array();
  const int d = c.environment.dimension;
  if (d == 1) csv << "L,seed_index,kappa,hs_distance,sup_distance,sup_kernel\n";
  else csv << "L,seed_index,sup_kernel,symmetry_residual\n";
  for (int L : c.L_sweep) {
    double mean_hs = 0;
    for (std::size_t s = 0; s < c.seeds_per_L; ++s) {
      const EnvironmentSpec spec = c.seeds_per_L == 1 ? with_L(c.environment, L)
                                                      : replica_spec(with_L(c.environment, L), s);
      const Environment env = sample_environment(spec);
      const KernelGrid k = kernel_from_inverse(env, c.grid_points);
      double sup = 0, asym = 0;
      const std::size_t np = k.points_per_side();
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t jx = 0; jx < np; ++jx) {
          sup = std::max(sup, std::abs(k.at(i, jx)));
          asym = std::max(asym, std::abs(k.at(i, jx) - k.at(jx, i)));
        }
      if (d == 1) {
        const double kappa = harmonic_kappa(env);
        const auto dist = hs_distance(k, continuum_kernel_grid(kappa, c.grid_points));
        csv << L << ',' << s << ',' << kappa << ',' << dist.hilbert_schmidt << ',' << dist.sup << ',' << sup << '\n';
        mean_hs += dist.hilbert_schmidt / c.seeds_per_L;
      } else {
        csv << L << ',' << s << ',' << sup << ',' << asym << '\n';
      }
    }
    if (d == 1) summary.push_back({{"L", L}, {"mean_hs_distance", mean_hs}});
  }
  Artifacts out{{"kernel_compare.csv", csv.str()}};
  if (d == 1) out["kernel_compare_summary.json"] = dump(summary);
  return out;
}

inline Artifacts run_spectrum(const RunConfig& c) {
  Artifacts out;
  std::ostringstream sum;
  sum << std::setprecision(17) << "L,kappa,kappa_source,lambda1_discrete,lambda1_continuum,invariance_residual,projection_distance\n";
  const int d = c.environment.dimension;
  for (int L : c.L_sweep) {
    const Environment env = sample_environment(with_L(c.environment, L));
    const auto [kappa, source] = reference_kappa(env);
    const Eigen::MatrixXd km = scalar_kappa(kappa, d);
    const auto rows = compare_spectra(env, km, c.cutoff);
    std::ostringstream csv;
    write_spectrum_csv(rows, csv);
    out["spectrum_L" + std::to_string(L) + ".csv"] = csv.str();
    const ModeIndex first(d, 1);
    const PairedSubspace ps = paired_subspace(env, first, km);
    const double residual = invariance_residual(env, first, ps.continuum_value, km);
    const double dist = embedded_projection_distance(env.lattice(), stack_vectors(ps.discrete), ps.modes);
    sum << L << ',' << kappa << ',' << source << ',' << rows.front().discrete << ',' << rows.front().continuum << ','
        << residual << ',' << dist << '\n';
  }
  out["spectrum_summary.csv"] = sum.str();
  return out;
}

inline EnsembleOptions ensemble_options(const RunConfig& c) {
  EnsembleOptions o;
  o.walkers = c.ensemble_size;
  o.t_grid = c.t_grid;
  o.histogram_bins = c.histogram_bins;
  o.seed = derive_key(c.seed, 0x656e73ULL);
  return o;
}

inline Artifacts run_walk(const RunConfig& c) {
  Artifacts out;
  const EnsembleStats st = msd_curve(c.environment, c.replicas, ensemble_options(c));
  std::ostringstream csv, hist;
  write_ensemble_csv(st, csv);
  out["msd.csv"] = csv.str();
  if (st.histogram_bins > 0) {
    write_histogram_csv(st, hist);
    out["histogram.csv"] = hist.str();
  }
  nlohmann::json fit;
  try {
    const DiffusionEstimate est = fit_diffusion(st, c.fit_window[0], c.fit_window[1]);
    std::vector<std::vector<double>> km(st.d, std::vector<double>(st.d));
    for (int i = 0; i < st.d; ++i)
      for (int j = 0; j < st.d; ++j) km[i][j] = est.kappa_matrix(i, j);
    fit = {{"kappa", est.kappa}, {"kappa_se", est.kappa_se}, {"kappa_matrix", km}, {"exponent", est.exponent},
           {"exponent_se", est.exponent_se}, {"intercept", est.intercept}, {"r_squared", est.r_squared},
           {"points", est.points}, {"censoring", st.censoring}};
  } catch (const FitQualityError& e) {
    fit = {{"error", e.kind()}, {"message", e.what()}};
  }
  out["fit.json"] = dump(fit);
  if (st.histogram_bins > 0 && family_harmonic_mean(c.environment.family) > 0) {
    const Environment env0 = sample_environment(c.replicas == 1 ? c.environment : replica_spec(c.environment, 0));
    const double kappa = c.environment.dimension == 1 ? family_harmonic_mean(c.environment.family)
                                                      : reference_kappa(env0).first;
    std::ostringstream marg;
    marg << std::setprecision(17) << "t,t_macro,total_variation,conditional_total_variation,absorbed_empirical,absorbed_heat\n";
    for (std::size_t g = 0; g < st.t.size(); ++g) {
      const auto m = marginal_vs_heat_kernel(st, g, scalar_kappa(kappa, st.d));
      marg << st.t[g] << ',' << st.t[g] / (static_cast<double>(st.L) * st.L) << ',' << m.total_variation << ','
           << m.conditional_total_variation << ',' << m.absorbed_empirical << ',' << m.absorbed_heat << '\n';
    }
    out["marginals.csv"] = marg.str();
  }
  return out;
}

inline Artifacts run_kappa(const RunConfig& c) {
  nlohmann::json j;
  const Environment env = sample_environment(c.environment);
  std::vector<std::pair<std::string, double>> est;
  if (env.dimension() == 1) est.emplace_back("harmonic", harmonic_kappa(env));
  est.emplace_back("spectral", spectral_kappa(env));
  const EnsembleStats st = msd_curve(c.environment, c.replicas, ensemble_options(c));
  const DiffusionEstimate fit = fit_diffusion(st, c.fit_window[0], c.fit_window[1]);
  est.emplace_back("msd", fit.kappa);
  double spread = 0;
  for (const auto& [n1, v1] : est) {
    j["estimates"][n1] = v1;
    for (const auto& [n2, v2] : est) spread = std::max(spread, std::abs(v1 - v2) / std::max(v1, v2));
  }
  j["msd_kappa_se"] = fit.kappa_se;
  j["msd_r_squared"] = fit.r_squared;
  j["max_relative_spread"] = spread;
  j["family_harmonic_mean"] = family_harmonic_mean(c.environment.family);
  j["family_mean"] = family_mean(c.environment.family);
  return {{"kappa.json", dump(j)}};
}

inline Artifacts run_dipole(const RunConfig& c) {
  const int d = c.environment.dimension, L = c.environment.half_size;
  const Lattice lat(d, L);
  const Eigen::MatrixXd phi = dipole_matrix_spectral(lat);
  const Eigen::MatrixXd oracle = dipole_matrix(lat);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(phi, Eigen::EigenvaluesOnly);
  double spread = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double v = es.eigenvalues()[i];
    spread = std::max(spread, std::min(std::abs(v), std::abs(v - 1)));
  }
  nlohmann::json j{{"d", d},
                   {"L", L},
                   {"bonds", lat.bond_count()},
                   {"idempotence_residual", (phi * phi - phi).cwiseAbs().maxCoeff()},
                   {"symmetry_residual", (phi - phi.transpose()).cwiseAbs().maxCoeff()},
                   {"composition_residual", (phi - oracle).cwiseAbs().maxCoeff()},
                   {"trace", phi.trace()},
                   {"interior_sites", lat.site_count()},
                   {"spectrum_distance_to_01", spread}};
  std::ostringstream csv;
  csv << std::setprecision(17) << "distance,phi_infinite\n";
  std::vector<double> lx, ly;
  for (int r : c.distances) {
    std::vector<int> z(d, 0);
    z[0] = r;
    const double v = dipole_phi_infinite(d, z, 0, 0);
    csv << r << ',' << v << '\n';
    if (v != 0 && r > 0) {
      lx.push_back(std::log(r));
      ly.push_back(std::log(std::abs(v)));
    }
  }
  if (lx.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i] / lx.size(), my += ly[i] / ly.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
    j["decay_slope"] = sxy / sxx;
  }
  return {{"dipole.json", dump(j)}, {"phi_decay.csv", csv.str()}};
}

inline Artifacts run_bounds(const RunConfig& c) {
  nlohmann::json j;
  const EnvironmentSpec& spec = c.environment;
  const Environment env = sample_environment(spec);
  const double wbar = family_mean(spec.family);
  double delta = 0;
  for (double a : alpha_field(env, wbar)) delta = std::max(delta, std::abs(a));
  const Eigen::MatrixXd dm = d_matrix(env, wbar);
  const double dnorm = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(dm, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
  j["d_matrix"] = {{"spectral_norm", dnorm}, {"max_abs_alpha", delta}};
  // Neumann truncation error against the exact (I - D)^-1 v.
  const auto n = dm.rows();
  Eigen::VectorXd v(n);
  const CounterStream rng(derive_key(c.seed, 0x6e65756dULL));
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 2 * rng.uniform(static_cast<std::uint64_t>(i)) - 1;
  const Eigen::VectorXd exact = (Eigen::MatrixXd::Identity(n, n) - dm).lu().solve(v);
  std::vector<double> errs;
  for (int k = 0; k <= c.order; ++k) errs.push_back((neumann_partial_sum(env, wbar, k, v) - exact).norm());
  j["neumann_errors"] = errs;
  j["schwarz"] = to_json(schwarz_bound_check(spec, c.environments, c.test_vectors, c.seed));
  j["theta"] = to_json(theta_estimate(spec, c.environments, 0));
  try {
    j["kl_bound"] = to_json(kl_series_bound(delta, c.series_constant));
  } catch (const DivergenceError& e) {
    j["kl_bound"] = {{"error", e.kind()}, {"message", e.what()}};
  }
  nlohmann::json st = nlohmann::json::array();
  for (int nn = 1; nn <= 12; ++nn)
    for (int r = 1; r <= nn; ++r) st.push_back({nn, r, stirling_pi(nn, r)});
  j["stirling_pi"] = st;
  nlohmann::json graphs = nlohmann::json::array();
  for (const auto& g : cancellation_check(c.path_length, c.abstract_bonds, MomentModel::centered(c.moments)))
    graphs.push_back(to_json(g));
  j["graphs"] = graphs;
  return {{"bounds.json", dump(j)}};
}
}  // namespace detail

inline Artifacts run_experiment(const RunConfig& c) {
  static const std::map<std::string, std::function<Artifacts(const RunConfig&)>> table{
      {"gen-env", detail::run_gen_env}, {"kernel-compare", detail::run_kernel_compare},
      {"spectrum", detail::run_spectrum}, {"walk", detail::run_walk},
      {"kappa", detail::run_kappa},       {"dipole", detail::run_dipole},
      {"bounds", detail::run_bounds}};
  const auto it = table.find(c.experiment);
  if (it == table.end()) throw ConfigError("unknown experiment '" + c.experiment + "'");
  return it->second(c);
}

/// Writes each file atomically (temporary name, then rename).
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + tmp);
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Runs the experiment and writes its files plus manifest.json. Returns the manifest.
inline nlohmann::json run(const RunConfig& c) {
  const Artifacts files = run_experiment(c);
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  nlohmann::json listed = nlohmann::json::array();
  for (const auto& [name, content] : files) {
    write_atomic(dir / name, content);
    listed.push_back({{"file", name}, {"fnv1a64", hex64(fnv1a64(content))}, {"bytes", content.size()}});
  }
  const nlohmann::json resolved = to_json(c);
  nlohmann::json hashed = resolved;
  hashed.erase("output_dir");
  nlohmann::json manifest{{"tool", "rwre"},
                          {"version", kToolVersion},
                          {"experiment", c.experiment},
                          {"config_hash", hex64(fnv1a64(hashed.dump()))},
                          {"config", resolved},
                          {"outputs", listed},
                          {"libraries",
                           {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                          "." + std::to_string(EIGEN_MINOR_VERSION)},
                            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                          {"timestamp", utc_timestamp()}};
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace rwre
