#pragma once

// Continuous-time random walks in a random environment with absorption at
// the boundary of Lambda_L: exact event-driven simulation, ensemble
// statistics on a time grid, diffusion fits and comparison with the
// continuum heat kernel.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/geometry.hpp"
#include "rwre/green.hpp"
#include "rwre/rng.hpp"

namespace rwre {

/// Per-site jump tables: total exit rate, cumulative neighbour rates and the
/// neighbour sites (kOutside for the absorbing layer).
class JumpTables {
public:
  explicit JumpTables(const Environment& env) : d_(env.dimension()), lat_(env.lattice_ptr()) {
    const Lattice& lat = *lat_;
    const std::size_t n = lat.site_count(), k = 2 * static_cast<std::size_t>(d_);
    cumulative_.resize(n * k);
    neighbour_.resize(n * k);
    total_.resize(n);
    coords_.resize(n * d_);
    for (std::size_t s = 0; s < n; ++s) {
      double acc = 0;
      for (int dir = 0; dir < d_; ++dir)
        for (int pos = 0; pos < 2; ++pos) {
          const std::size_t b = lat.site_bond(s, dir, pos == 1);
          acc += env.rate(b);
          cumulative_[s * k + 2 * dir + pos] = acc;
          neighbour_[s * k + 2 * dir + pos] = pos == 1 ? lat.head_site(b) : lat.tail_site(b);
        }
      total_[s] = acc;
      const Point x = lat.site(s);
      for (int i = 0; i < d_; ++i) coords_[s * d_ + i] = x[i];
    }
  }

  int dimension() const noexcept { return d_; }
  const Lattice& lattice() const noexcept { return *lat_; }
  double total_rate(std::size_t s) const { return total_[s]; }
  int coord(std::size_t s, int i) const { return coords_[s * d_ + i]; }

  /// Neighbour chosen with probability w_<xy> / total for u in (0, 1].
  std::size_t jump(std::size_t s, double u) const {
    const std::size_t k = 2 * static_cast<std::size_t>(d_);
    const double target = u * total_[s];
    const double* cum = &cumulative_[s * k];
    std::size_t j = 0;
    while (j + 1 < k && target > cum[j]) ++j;
    return neighbour_[s * k + j];
  }

private:
  int d_;
  std::shared_ptr<const Lattice> lat_;
  std::vector<double> cumulative_;
  std::vector<std::size_t> neighbour_;
  std::vector<double> total_;
  std::vector<int> coords_;
};

/// Piecewise-constant path. sites[i] is occupied on [times[i], times[i+1]).
struct Trajectory {
  std::vector<double> times;
  std::vector<std::size_t> sites;
  bool absorbed = false;
  double final_time = 0;  // absorption time, or t_max

  /// Site index at time t, kOutside once absorbed.
  std::size_t site_at(double t) const {
    if (absorbed && t >= final_time) return kOutside;
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) throw ParameterDomainError("time before trajectory start");
    return sites[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// Exact simulation up to t_max: exponential holding time with the total
/// exit rate, then a jump to a neighbour chosen proportionally to its bond rate.
inline Trajectory simulate_ctrw(const JumpTables& tables, std::size_t start, double t_max, WalkStream& stream) {
  if (start >= tables.lattice().site_count()) throw ParameterDomainError("start site outside Lambda_L");
  if (!(t_max >= 0)) throw ParameterDomainError("t_max must be >= 0");
  Trajectory tr;
  tr.times.push_back(0.0);
  tr.sites.push_back(start);
  std::size_t s = start;
  double t = 0;
  while (true) {
    t += stream.exponential(tables.total_rate(s));
    if (t > t_max) break;
    s = tables.jump(s, stream.uniform());
    if (s == kOutside) {
      tr.absorbed = true;
      tr.final_time = t;
      return tr;
    }
    tr.times.push_back(t);
    tr.sites.push_back(s);
  }
  tr.final_time = t_max;
  return tr;
}

inline Trajectory simulate_ctrw(const Environment& env, const Point& x0, double t_max, WalkStream& stream) {
  const std::size_t start = env.lattice().site_index(x0);
  if (start == kOutside) throw ParameterDomainError("start point outside Lambda_L");
  return simulate_ctrw(JumpTables(env), start, t_max, stream);
}

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleStats {
  int d = 1;
  int L = 1;
  Point start;
  std::vector<double> t;             // microscopic times
  std::vector<double> msd;           // mean |X(t) - x0|^2 over surviving walkers
  std::vector<double> msd_se;        // standard error over walkers
  std::vector<double> survival;      // fraction not yet absorbed
  std::vector<std::size_t> n_alive;
  std::vector<Eigen::MatrixXd> second_moment;  // mean (X-x0)_i (X-x0)_j over survivors
  int histogram_bins = 0;                      // per axis, 0 when not recorded
  std::vector<std::vector<std::uint64_t>> histogram;  // per t, bins^d counts (lexicographic)
  std::size_t ensemble_size = 0;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;
  std::string censoring = "absorbed walkers excluded from MSD, counted in survival";
};

struct EnsembleOptions {
  std::size_t walkers = 1000;  // total M, split evenly over environments
  std::vector<double> t_grid;  // increasing microscopic times
  Point start;                 // empty means the origin
  int histogram_bins = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;        // 0: hardware concurrency
  std::size_t chunk = 256;     // walkers per reduction chunk
};

namespace detail {
struct EnsembleChunk {
  std::vector<std::size_t> alive;
  std::vector<double> sum2, sum4;
  std::vector<Eigen::MatrixXd> cross;
  std::vector<std::vector<std::uint64_t>> hist;

  EnsembleChunk(std::size_t g, int d, std::size_t bins)
      : alive(g, 0), sum2(g, 0.0), sum4(g, 0.0), cross(g, Eigen::MatrixXd::Zero(d, d)),
        hist(bins ? g : 0, std::vector<std::uint64_t>(bins, 0)) {}

  void merge(const EnsembleChunk& o) {
    for (std::size_t g = 0; g < alive.size(); ++g) {
      alive[g] += o.alive[g];
      sum2[g] += o.sum2[g];
      sum4[g] += o.sum4[g];
      cross[g] += o.cross[g];
    }
    for (std::size_t g = 0; g < hist.size(); ++g)
      for (std::size_t b = 0; b < hist[g].size(); ++b) hist[g][b] += o.hist[g][b];
  }
};

inline std::uint64_t walker_key(std::uint64_t seed, std::size_t walker) {
  return derive_key(derive_key(seed, 0x77616c6bULL), walker);
}

/// Bin of a site along each axis for bins aligned with lattice cells.
inline std::size_t histogram_bin(const JumpTables& t, std::size_t s, int bins) {
  const int L = t.lattice().half_size();
  std::size_t idx = 0;
  for (int i = 0; i < t.dimension(); ++i)
    idx = idx * bins + static_cast<std::size_t>((t.coord(s, i) + L) * bins / (2 * L));
  return idx;
}
}  // namespace detail

/// Ensemble statistics over walkers spread evenly across `envs` (all with the
/// same d and L). Walker w uses a stream keyed by (seed, w), so the result is
/// independent of the thread count.
inline EnsembleStats msd_curve(const std::vector<Environment>& envs, const EnsembleOptions& opt) {
  if (envs.empty()) throw ParameterDomainError("msd_curve needs at least one environment");
  if (opt.walkers < 1) throw ParameterDomainError("ensemble size M must be >= 1");
  if (opt.t_grid.empty()) throw ParameterDomainError("time grid is empty");
  for (std::size_t i = 0; i < opt.t_grid.size(); ++i)
    if (!(opt.t_grid[i] > 0) || (i > 0 && !(opt.t_grid[i] > opt.t_grid[i - 1])))
      throw ParameterDomainError("time grid must be positive and strictly increasing");
  const int d = envs.front().dimension(), L = envs.front().half_size();
  for (const auto& e : envs)
    if (e.dimension() != d || e.half_size() != L) throw ShapeError("environments differ in geometry");
  const int B = opt.histogram_bins;
  if (B < 0) throw ParameterDomainError("histogram bins must be >= 0");
  if (B > 0 && (2 * L) % B != 0) throw GridMismatchError("histogram bins must divide 2L");

  std::vector<JumpTables> tables;
  tables.reserve(envs.size());
  for (const auto& e : envs) tables.emplace_back(e);
  const Point x0 = opt.start.empty() ? Point(d, 0) : opt.start;
  const std::size_t start = envs.front().lattice().site_index(x0);
  if (start == kOutside) throw ParameterDomainError("start point outside Lambda_L");

  const std::size_t G = opt.t_grid.size();
  std::size_t bins_total = 0;
  if (B > 0) {
    bins_total = 1;
    for (int i = 0; i < d; ++i) bins_total *= static_cast<std::size_t>(B);
  }
  const std::size_t M = opt.walkers, R = envs.size();
  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk);
  const std::size_t n_chunks = (M + chunk - 1) / chunk;
  std::vector<std::unique_ptr<detail::EnsembleChunk>> parts(n_chunks);

  auto run_chunk = [&](std::size_t c) {
    auto part = std::make_unique<detail::EnsembleChunk>(G, d, bins_total);
    std::vector<int> disp(d);
    for (std::size_t w = c * chunk; w < std::min(M, (c + 1) * chunk); ++w) {
      const JumpTables& tab = tables[w * R / M];  // contiguous walker blocks per environment
      WalkStream stream(detail::walker_key(opt.seed, w));
      std::size_t s = start, g = 0;
      double t = 0;
      while (g < G) {
        const double t_next = t + stream.exponential(tab.total_rate(s));
        while (g < G && opt.t_grid[g] < t_next) {
          double r2 = 0;
          for (int i = 0; i < d; ++i) {
            disp[i] = tab.coord(s, i) - x0[i];
            r2 += static_cast<double>(disp[i]) * disp[i];
          }
          part->alive[g] += 1;
          part->sum2[g] += r2;
          part->sum4[g] += r2 * r2;
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) part->cross[g](i, j) += static_cast<double>(disp[i]) * disp[j];
          if (B > 0) part->hist[g][detail::histogram_bin(tab, s, B)] += 1;
          ++g;
        }
        if (g == G) break;
        s = tab.jump(s, stream.uniform());
        if (s == kOutside) break;
        t = t_next;
      }
    }
    parts[c] = std::move(part);
  };

  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i)
      pool.emplace_back([&] {
        for (std::size_t c; (c = next.fetch_add(1)) < n_chunks;) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  detail::EnsembleChunk total(G, d, bins_total);
  for (const auto& p : parts) total.merge(*p);  // fixed chunk order

  EnsembleStats st;
  st.d = d;
  st.L = L;
  st.start = x0;
  st.t = opt.t_grid;
  st.histogram_bins = B;
  st.histogram = std::move(total.hist);
  st.ensemble_size = M;
  st.replicas = R;
  st.seed = opt.seed;
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t n = total.alive[g];
    if (n == 0) throw EmptySampleError("all walkers absorbed before t = " + std::to_string(opt.t_grid[g]));
    const double mean = total.sum2[g] / n;
    const double var = n > 1 ? std::max(0.0, (total.sum4[g] - n * mean * mean) / (n - 1)) : 0.0;
    st.msd.push_back(mean);
    st.msd_se.push_back(std::sqrt(var / n));
    st.survival.push_back(static_cast<double>(n) / M);
    st.n_alive.push_back(n);
    st.second_moment.push_back(total.cross[g] / static_cast<double>(n));
  }
  return st;
}

/// Ensemble over `replicas` environments drawn from `spec` (replica seeds
/// derived from spec.seed; a single replica uses spec itself).
inline EnsembleStats msd_curve(const EnvironmentSpec& spec, std::size_t replicas, const EnsembleOptions& opt) {
  if (replicas < 1) throw ParameterDomainError("replicas must be >= 1");
  if (replicas > opt.walkers) throw ParameterDomainError("more replicas than walkers");
  std::vector<Environment> envs;
  envs.reserve(replicas);
  for (std::size_t r = 0; r < replicas; ++r)
    envs.push_back(sample_environment(replicas == 1 ? spec : replica_spec(spec, r)));
  return msd_curve(envs, opt);
}

// ---------------------------------------------------------------------------
// Fits

struct DiffusionEstimate {
  std::string method;
  double kappa = 0;             // scalar: slope of MSD / (2 d)
  double kappa_se = 0;
  Eigen::MatrixXd kappa_matrix;  // slopes of the component covariances / 2
  double exponent = 0;          // log-log slope of MSD
  double exponent_se = 0;
  double intercept = 0;
  double r_squared = 0;
  int points = 0;
};

namespace detail {
struct LineFit {
  double slope = 0, intercept = 0, slope_se = 0, r_squared = 0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 1e-300 * (1 + mx * mx))) throw FitQualityError("fit abscissae are degenerate", 0, static_cast<int>(n));
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double sse = std::max(0.0, syy - f.slope * sxy);
  f.r_squared = syy > 0 ? 1.0 - sse / syy : 1.0;
  f.slope_se = n > 2 ? std::sqrt(sse / (n - 2) / sxx) : 0.0;
  if (!std::isfinite(f.slope) || !std::isfinite(f.intercept))
    throw FitQualityError("non-finite fit", f.r_squared, static_cast<int>(n));
  return f;
}
}  // namespace detail

/// Least-squares MSD(t) = a + b t over t in [t_lo, t_hi]; kappa = b / (2d),
/// kappa_ij = slope of E (X_i X_j) / 2, exponent = slope of log MSD vs log t.
inline DiffusionEstimate fit_diffusion(const EnsembleStats& st, double t_lo, double t_hi) {
  std::vector<std::size_t> idx;
  for (std::size_t g = 0; g < st.t.size(); ++g)
    if (st.t[g] >= t_lo && st.t[g] <= t_hi) idx.push_back(g);
  const int n = static_cast<int>(idx.size());
  if (n < 5) throw FitQualityError("fit window holds fewer than 5 grid points", 0, n);
  std::vector<double> t, m, lt, lm;
  for (std::size_t g : idx) {
    t.push_back(st.t[g]);
    m.push_back(st.msd[g]);
    if (!(st.msd[g] > 0)) throw FitQualityError("MSD must be positive for the exponent fit", 0, n);
    lt.push_back(std::log(st.t[g]));
    lm.push_back(std::log(st.msd[g]));
  }
  const auto lin = detail::least_squares(t, m);
  const auto lg = detail::least_squares(lt, lm);
  DiffusionEstimate est;
  est.method = "msd";
  est.kappa = lin.slope / (2.0 * st.d);
  est.kappa_se = lin.slope_se / (2.0 * st.d);
  est.intercept = lin.intercept;
  est.r_squared = lin.r_squared;
  est.exponent = lg.slope;
  est.exponent_se = lg.slope_se;
  est.points = n;
  est.kappa_matrix.resize(st.d, st.d);
  for (int i = 0; i < st.d; ++i)
    for (int j = 0; j < st.d; ++j) {
      std::vector<double> c;
      for (std::size_t g : idx) c.push_back(st.second_moment[g](i, j));
      est.kappa_matrix(i, j) = detail::least_squares(t, c).slope / 2.0;
    }
  return est;
}

inline DiffusionEstimate fit_diffusion(const EnsembleStats& st) {
  return fit_diffusion(st, st.t.front(), st.t.back());
}

// ---------------------------------------------------------------------------
// One-time marginals against the continuum heat kernel

struct MarginalComparison {
  double total_variation = 0;              // over bins plus the absorbed atom
  double conditional_total_variation = 0;  // both laws conditioned on survival
  double absorbed_empirical = 0;
  double absorbed_heat = 0;
  std::vector<double> empirical;           // bin probabilities
  std::vector<double> heat;                // heat-kernel bin masses
};

/// Compares the law of X_L(t)/L with T_{t/L^2}(., x0/L) on the histogram bins.
inline MarginalComparison marginal_vs_heat_kernel(const EnsembleStats& st, std::size_t t_index,
                                                  const Eigen::MatrixXd& kappa, int N = 0) {
  if (st.histogram_bins <= 0 || st.histogram.size() != st.t.size())
    throw GridMismatchError("ensemble has no histogram");
  if (t_index >= st.t.size()) throw GridMismatchError("time index outside the grid");
  if (kappa.rows() != st.d) throw ShapeError("kappa dimension does not match the walk");
  const double l2 = static_cast<double>(st.L) * st.L;
  const double t_macro = st.t[t_index] / l2;
  if (N <= 0) N = default_heat_cutoff(kappa, t_macro);
  const int B = st.histogram_bins, d = st.d;
  std::vector<double> zeta(d);
  for (int i = 0; i < d; ++i) zeta[i] = static_cast<double>(st.start[i]) / st.L;

  MarginalComparison out;
  const auto& counts = st.histogram[t_index];
  out.empirical.resize(counts.size());
  out.heat.resize(counts.size());
  double heat_total = 0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    out.empirical[b] = static_cast<double>(counts[b]) / st.ensemble_size;
    std::vector<double> lo(d), hi(d);
    std::size_t rest = b;
    for (int i = d - 1; i >= 0; --i) {
      const int k = static_cast<int>(rest % B);
      rest /= B;
      lo[i] = -1.0 + 2.0 * k / B;
      hi[i] = -1.0 + 2.0 * (k + 1) / B;
    }
    out.heat[b] = std::max(0.0, heat_kernel_box_mass(kappa, t_macro, lo, hi, N, zeta));
    heat_total += out.heat[b];
  }
  out.absorbed_empirical = 1.0 - st.survival[t_index];
  out.absorbed_heat = std::max(0.0, 1.0 - heat_total);
  const double surv_e = st.survival[t_index];
  double tv = std::abs(out.absorbed_empirical - out.absorbed_heat), ctv = 0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    tv += std::abs(out.empirical[b] - out.heat[b]);
    ctv += std::abs((surv_e > 0 ? out.empirical[b] / surv_e : 0.0) -
                    (heat_total > 0 ? out.heat[b] / heat_total : 0.0));
  }
  out.total_variation = 0.5 * tv;
  out.conditional_total_variation = 0.5 * ctv;
  return out;
}

inline void write_ensemble_csv(const EnsembleStats& st, std::ostream& os) {
  os << std::setprecision(17) << "t,msd,msd_se,survival,n_alive\n";
  for (std::size_t g = 0; g < st.t.size(); ++g)
    os << st.t[g] << ',' << st.msd[g] << ',' << st.msd_se[g] << ',' << st.survival[g] << ',' << st.n_alive[g]
       << '\n';
}

inline void write_histogram_csv(const EnsembleStats& st, std::ostream& os) {
  os << std::setprecision(17) << "t,cell,count\n";
  for (std::size_t g = 0; g < st.histogram.size(); ++g)
    for (std::size_t b = 0; b < st.histogram[g].size(); ++b)
      os << st.t[g] << ',' << b << ',' << st.histogram[g][b] << '\n';
}

}  // namespace rwre
