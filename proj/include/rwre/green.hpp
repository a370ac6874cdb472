#pragma once

// Inverse-Laplacian kernels: the exact 1-D Green's function built from the
// harmonic profile xi, solver-based kernels in any dimension, the continuum
// Dirichlet kernel, the absorbing heat kernel and the lattice semigroup.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/lattice.hpp"
#include "rwre/solvers.hpp"

namespace rwre {

// ---------------------------------------------------------------------------
// 1-D harmonic profile

/// xi_x = eta * sum_{y=-L+1}^{x} 1/w_<y-1,y>, stored for x = -L..L so that
/// xi_{-L} = 0 and xi_L = 1. The complement 1 - xi is kept separately as a
/// suffix sum to avoid cancellation near the right end.
struct XiProfile {
  int L = 0;
  double eta = 0;                  // 1 / sum of all 2L inverse rates
  std::vector<double> xi;          // index x + L
  std::vector<double> complement;  // 1 - xi, index x + L

  double xi_at(int x) const { return xi.at(static_cast<std::size_t>(x + L)); }
  double complement_at(int x) const { return complement.at(static_cast<std::size_t>(x + L)); }
  double zeta_at(int x) const { return xi_at(x) - complement_at(x); }
};

inline XiProfile xi_profile(const Environment& env) {
  require_1d(env);
  const int L = env.half_size();
  const auto w = env.rates();
  const std::size_t nb = 2 * static_cast<std::size_t>(L);
  std::vector<double> prefix(nb + 1, 0.0), suffix(nb + 1, 0.0);
  for (std::size_t k = 0; k < nb; ++k) prefix[k + 1] = prefix[k] + 1.0 / w[k];
  for (std::size_t k = nb; k-- > 0;) suffix[k] = suffix[k + 1] + 1.0 / w[k];
  XiProfile p;
  p.L = L;
  p.eta = 1.0 / prefix[nb];
  p.xi.resize(nb + 1);
  p.complement.resize(nb + 1);
  for (std::size_t k = 0; k <= nb; ++k) {
    p.xi[k] = p.eta * prefix[k];
    p.complement[k] = p.eta * suffix[k];
  }
  // Wronskian of (xi, 1 - xi) must equal -eta at every bond.
  double worst = 0;
  for (std::size_t k = 0; k < nb; ++k) {
    const double flux_xi = w[k] * (p.xi[k + 1] - p.xi[k]);
    const double flux_c = w[k] * (p.complement[k + 1] - p.complement[k]);
    const double wronskian = p.xi[k + 1] * flux_c - p.complement[k + 1] * flux_xi;
    worst = std::max(worst, std::abs(wronskian + p.eta) / p.eta);
  }
  if (worst > 1e-12 + 1e-14 * static_cast<double>(nb)) throw NumericalFailure("xi profile Wronskian check failed", worst);
  return p;
}

/// (Delta^-1)_{x,y} from the profile, x, y in -L+1..L-1.
inline double green_entry(const XiProfile& p, int x, int y) {
  if (x > y) std::swap(x, y);
  return -p.xi_at(x) * p.complement_at(y) / p.eta;
}

inline constexpr int kGreenDenseCap = 4096;

inline Eigen::MatrixXd green_matrix_1d(const Environment& env) {
  require_1d(env);
  const int L = env.half_size();
  if (L > kGreenDenseCap) throw CapExceededError("green_matrix_1d: L above dense cap");
  const XiProfile p = xi_profile(env);
  const int n = 2 * L - 1;
  Eigen::MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) g(i, j) = g(j, i) = green_entry(p, i - (L - 1), j - (L - 1));
  return g;
}

// ---------------------------------------------------------------------------
// Kernel grids

/// Samples K(r, s) on the uniform grid r_i = -1 + 2 i / (m - 1) per axis,
/// r and s in (-1,1)^d. Values are stored with the r multi-index major.
/// Grid points with any coordinate on the boundary hold 0.
struct KernelGrid {
  int m = 0;
  int d = 1;
  int L = 0;  // 0 for continuum kernels
  std::string kind;
  std::vector<double> values;

  std::size_t points_per_side() const {
    std::size_t n = 1;
    for (int k = 0; k < d; ++k) n *= static_cast<std::size_t>(m);
    return n;
  }
  double node(int i) const { return -1.0 + 2.0 * i / (m - 1); }
  double& at(std::size_t ir, std::size_t is) { return values[ir * points_per_side() + is]; }
  double at(std::size_t ir, std::size_t is) const { return values[ir * points_per_side() + is]; }
  /// Axis indices of a flattened grid point.
  std::vector<int> axis_indices(std::size_t flat) const {
    std::vector<int> idx(d);
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(flat % m);
      flat /= m;
    }
    return idx;
  }
};

inline constexpr int kDefaultGridPoints = 129;
inline constexpr std::size_t kKernelGridCap = 20'000'000;

namespace detail {
/// Lattice coordinate [L r] (integer part as floor), tolerant to rounding
/// on dyadic grids.
inline int integer_part(double L_times_r) { return static_cast<int>(std::floor(L_times_r + 1e-9)); }

/// Site index of grid point `flat`, or kOutside (boundary node or the
/// uncovered strip next to -1).
inline std::size_t grid_site(const KernelGrid& g, const Lattice& lat, std::size_t flat) {
  const auto idx = g.axis_indices(flat);
  Point x(g.d);
  for (int k = 0; k < g.d; ++k) {
    if (idx[k] == 0 || idx[k] == g.m - 1) return kOutside;
    x[k] = integer_part(lat.half_size() * g.node(idx[k]));
  }
  return lat.site_index(x);
}

inline void check_grid(int m, int d) {
  if (m < 2) throw ParameterDomainError("kernel grid needs m >= 2");
  double total = 1;
  for (int k = 0; k < 2 * d; ++k) total *= m;
  if (total > static_cast<double>(kKernelGridCap)) throw CapExceededError("kernel grid too large");
}
}  // namespace detail

enum class KernelMethod { Auto, ClosedForm, Solver };

/// Samples of Xi_L^-1(r,s) = L^(d-2) (Delta^-1)_{[Lr],[Ls]}.
inline KernelGrid kernel_from_inverse(const Environment& env, int m = kDefaultGridPoints,
                                      KernelMethod method = KernelMethod::Auto,
                                      SolverOptions solver = {}) {
  const int d = env.dimension(), L = env.half_size();
  detail::check_grid(m, d);
  if (method == KernelMethod::Auto) method = (d == 1) ? KernelMethod::ClosedForm : KernelMethod::Solver;
  if (method == KernelMethod::ClosedForm && d != 1)
    throw DimensionError("closed-form Green kernel exists only for d = 1");

  KernelGrid g{m, d, L, "discrete", {}};
  const std::size_t np = g.points_per_side();
  g.values.assign(np * np, 0.0);
  const Lattice& lat = env.lattice();
  std::vector<std::size_t> site(np);
  for (std::size_t i = 0; i < np; ++i) site[i] = detail::grid_site(g, lat, i);
  const double scale = std::pow(static_cast<double>(L), d - 2);

  if (method == KernelMethod::ClosedForm) {
    const XiProfile p = xi_profile(env);
    for (std::size_t i = 0; i < np; ++i) {
      if (site[i] == kOutside) continue;
      for (std::size_t j = 0; j < np; ++j) {
        if (site[j] == kOutside) continue;
        g.at(i, j) = scale * green_entry(p, static_cast<int>(site[i]) - (L - 1),
                                         static_cast<int>(site[j]) - (L - 1));
      }
    }
    return g;
  }

  // Columns of Delta^-1 = -(-Delta)^-1 for every distinct source site.
  const SparseMatrix neg = -build_delta(env).matrix();
  const SpdSolver cg(neg, solver);
  std::map<std::size_t, Eigen::VectorXd> columns;
  for (std::size_t j = 0; j < np; ++j) {
    if (site[j] == kOutside || columns.count(site[j])) continue;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(lat.site_count());
    e[site[j]] = 1.0;
    columns.emplace(site[j], -cg.solve(e));
  }
  for (std::size_t j = 0; j < np; ++j) {
    if (site[j] == kOutside) continue;
    const Eigen::VectorXd& col = columns.at(site[j]);
    for (std::size_t i = 0; i < np; ++i)
      if (site[i] != kOutside) g.at(i, j) = scale * col[site[i]];
  }
  // Symmetrize: the solver columns are symmetric only to the solve tolerance.
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = i + 1; j < np; ++j) g.at(i, j) = g.at(j, i) = 0.5 * (g.at(i, j) + g.at(j, i));
  return g;
}

/// Dirichlet inverse Laplacian kernel on (-1,1): -(1/2 kappa)(1 - |r-s| - r s).
inline double continuum_kernel(double kappa, double r, double s) {
  if (!(kappa > 0)) throw ParameterDomainError("continuum_kernel requires kappa > 0");
  return -(1.0 - std::abs(r - s) - r * s) / (2.0 * kappa);
}

inline KernelGrid continuum_kernel_grid(double kappa, int m = kDefaultGridPoints) {
  detail::check_grid(m, 1);
  KernelGrid g{m, 1, 0, "continuum", std::vector<double>(static_cast<std::size_t>(m) * m, 0.0)};
  for (int i = 1; i < m - 1; ++i)
    for (int j = 1; j < m - 1; ++j) g.at(i, j) = continuum_kernel(kappa, g.node(i), g.node(j));
  return g;
}

struct KernelDistance {
  double hilbert_schmidt = 0;  // trapezoid quadrature of the L2 norm of K1 - K2
  double sup = 0;              // max grid difference; ||K|| <= |||K||| <= 4 sup|K|
};

inline KernelDistance hs_distance(const KernelGrid& a, const KernelGrid& b) {
  if (a.m != b.m || a.d != b.d || a.values.size() != b.values.size())
    throw GridMismatchError("kernel grids differ in shape");
  const std::size_t np = a.points_per_side();
  const double h = 2.0 / (a.m - 1);
  std::vector<double> weight(np);
  for (std::size_t i = 0; i < np; ++i) {
    double wgt = 1;
    for (int k : a.axis_indices(i)) wgt *= (k == 0 || k == a.m - 1) ? 0.5 * h : h;
    weight[i] = wgt;
  }
  KernelDistance out;
  double acc = 0;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < np; ++j) {
      const double diff = a.at(i, j) - b.at(i, j);
      acc += weight[i] * weight[j] * diff * diff;
      out.sup = std::max(out.sup, std::abs(diff));
    }
  out.hilbert_schmidt = std::sqrt(acc);
  return out;
}

/// sup over r in (-1,1) of |zeta_{[Lr]} - r|, evaluated exactly cell by cell
/// (zeta_{-L} = -1 for the uncovered strip).
inline double zeta_sup_error(const Environment& env) {
  const XiProfile p = xi_profile(env);
  const int L = p.L;
  double worst = 0;
  for (int x = -L; x < L; ++x) {
    const double z = p.zeta_at(x);
    worst = std::max({worst, std::abs(z - static_cast<double>(x) / L),
                      std::abs(z - static_cast<double>(x + 1) / L)});
  }
  return worst;
}

inline void write_kernel_csv(const KernelGrid& g, std::ostream& os) {
  os << std::setprecision(17);
  os << "m,d,L,kind\n" << g.m << ',' << g.d << ',' << g.L << ',' << g.kind << '\n';
  for (int k = 0; k < g.d; ++k) os << (g.d == 1 ? "r" : "r" + std::to_string(k + 1)) << ',';
  for (int k = 0; k < g.d; ++k) os << (g.d == 1 ? "s" : "s" + std::to_string(k + 1)) << ',';
  os << "value\n";
  const std::size_t np = g.points_per_side();
  for (std::size_t i = 0; i < np; ++i) {
    const auto ri = g.axis_indices(i);
    for (std::size_t j = 0; j < np; ++j) {
      const auto sj = g.axis_indices(j);
      for (int k : ri) os << g.node(k) << ',';
      for (int k : sj) os << g.node(k) << ',';
      os << g.at(i, j) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Continuum heat kernel with absorbing boundary on D = (-1,1)^d

/// Normalized Dirichlet eigenfunction along one axis: cos for odd n, sin for even n.
inline double mode_1d(int n, double xi) { return sc(n, M_PI * n * xi / 2.0); }

/// Integral of mode_1d(n, .) over [lo, hi].
inline double mode_1d_integral(int n, double lo, double hi) {
  const double k = M_PI * n / 2.0;
  if (n % 2 == 1) return (std::sin(k * hi) - std::sin(k * lo)) / k;
  return (std::cos(k * lo) - std::cos(k * hi)) / k;
}

inline double min_eigenvalue_spd(const Eigen::MatrixXd& kappa) {
  if (kappa.rows() != kappa.cols() || kappa.rows() < 1) throw ParameterDomainError("kappa must be square");
  if ((kappa - kappa.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1 + kappa.cwiseAbs().maxCoeff()))
    throw ParameterDomainError("kappa must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kappa, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmin > 0)) throw ParameterDomainError("kappa must be positive definite");
  return lmin;
}

/// Smallest N with exp(-(pi^2/4) lambda_min(kappa) N^2 t_min) < 1e-12.
inline int default_heat_cutoff(const Eigen::MatrixXd& kappa, double t_min) {
  if (!(t_min > 0)) throw ParameterDomainError("heat kernel requires t > 0");
  const double c = M_PI * M_PI / 4.0 * min_eigenvalue_spd(kappa) * t_min;
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(std::log(1e12) / c))));
}

struct HeatKernelValue {
  double value = 0;
  double tail_bound = 0;  // bound on the omitted terms, max_i n_i > N
};

namespace detail {
inline void check_heat_args(const Eigen::MatrixXd& kappa, double t, int N) {
  if (!(t > 0)) throw ParameterDomainError("heat kernel requires t > 0");
  if (N < 1) throw ParameterDomainError("heat kernel cutoff N must be >= 1");
  min_eigenvalue_spd(kappa);
}

inline double heat_tail_bound(const Eigen::MatrixXd& kappa, double t, int N, double per_term) {
  const int d = static_cast<int>(kappa.rows());
  const double c = M_PI * M_PI / 4.0 * min_eigenvalue_spd(kappa) * t;
  double all = 0, tail = 0;
  for (int m = 1;; ++m) {
    const double term = std::exp(-c * m * m);
    all += term;
    if (m > N) tail += term;
    if (m > N && term < 1e-300) break;
    if (m > N + 100000) break;
  }
  return per_term * d * tail * std::pow(all, d - 1);
}

/// Visits every mode n in {1..N}^d with its decay factor.
template <class F>
void for_each_mode(const Eigen::MatrixXd& kappa, double t, int N, F&& f) {
  const int d = static_cast<int>(kappa.rows());
  std::vector<int> n(d, 1);
  Eigen::VectorXd nv(d);
  while (true) {
    for (int k = 0; k < d; ++k) nv[k] = n[k];
    const double decay = std::exp(-M_PI * M_PI / 4.0 * nv.dot(kappa * nv) * t);
    f(n, decay);
    int k = d - 1;
    while (k >= 0 && n[k] == N) n[k--] = 1;
    if (k < 0) break;
    ++n[k];
  }
}
}  // namespace detail

/// T_t(xi, zeta) = sum_n exp(-(pi^2/4) n.kappa n t) e_n(xi) e_n(zeta),
/// truncated to max_i n_i <= N. With zeta = 0 every even-index mode drops out.
inline HeatKernelValue heat_kernel(const Eigen::MatrixXd& kappa, double t, const std::vector<double>& xi,
                                   int N, const std::vector<double>& start = {}) {
  detail::check_heat_args(kappa, t, N);
  const int d = static_cast<int>(kappa.rows());
  if (static_cast<int>(xi.size()) != d) throw ShapeError("heat kernel point has wrong dimension");
  const std::vector<double> zeta = start.empty() ? std::vector<double>(d, 0.0) : start;
  if (static_cast<int>(zeta.size()) != d) throw ShapeError("heat kernel start has wrong dimension");
  HeatKernelValue out;
  out.tail_bound = detail::heat_tail_bound(kappa, t, N, 1.0);
  for (int k = 0; k < d; ++k)
    if (std::abs(xi[k]) >= 1.0) return out;  // absorbing boundary
  detail::for_each_mode(kappa, t, N, [&](const std::vector<int>& n, double decay) {
    double prod = decay;
    for (int k = 0; k < d; ++k) prod *= mode_1d(n[k], xi[k]) * mode_1d(n[k], zeta[k]);
    out.value += prod;
  });
  return out;
}

/// Mass of T_t(., zeta) over the box [lo, hi] (clipped to D).
inline double heat_kernel_box_mass(const Eigen::MatrixXd& kappa, double t, const std::vector<double>& lo,
                                   const std::vector<double>& hi, int N,
                                   const std::vector<double>& start = {}) {
  detail::check_heat_args(kappa, t, N);
  const int d = static_cast<int>(kappa.rows());
  const std::vector<double> zeta = start.empty() ? std::vector<double>(d, 0.0) : start;
  double mass = 0;
  detail::for_each_mode(kappa, t, N, [&](const std::vector<int>& n, double decay) {
    double prod = decay;
    for (int k = 0; k < d; ++k)
      prod *= mode_1d(n[k], zeta[k]) *
              mode_1d_integral(n[k], std::max(-1.0, lo[k]), std::min(1.0, hi[k]));
    mass += prod;
  });
  return mass;
}

// ---------------------------------------------------------------------------
// Initial measures

struct PointMass {
  std::vector<double> location;
  double mass = 1.0;
};

/// Piecewise-constant density on B^d equal cells of D, cell values in
/// lexicographic order (first axis most significant).
struct PiecewiseDensity {
  int cells_per_axis = 1;
  std::vector<double> density;
};

using InitialMeasure = std::variant<PointMass, PiecewiseDensity>;

inline int measure_dimension(const InitialMeasure& mu) {
  if (const auto* p = std::get_if<PointMass>(&mu)) return static_cast<int>(p->location.size());
  const auto& pd = std::get<PiecewiseDensity>(mu);
  std::size_t cells = pd.density.size();
  int d = 0;
  for (std::size_t c = 1; c < cells; c *= pd.cells_per_axis) ++d;
  return std::max(d, 1);
}

/// (u0)_x = L^d mu([x/L, (x+1)/L)^d box). Mass in the strip next to -1,
/// whose box belongs to the boundary site -L, is dropped.
inline ZeroForm measure_to_vector(const InitialMeasure& mu, const Lattice& lat) {
  const int d = lat.dimension(), L = lat.half_size();
  const double vol_scale = std::pow(static_cast<double>(L), d);
  ZeroForm u = ZeroForm::Zero(lat.site_count());
  if (const auto* p = std::get_if<PointMass>(&mu)) {
    if (static_cast<int>(p->location.size()) != d) throw ShapeError("point mass has wrong dimension");
    if (!(p->mass > 0)) throw ParameterDomainError("point mass must be positive");
    Point x(d);
    for (int k = 0; k < d; ++k) {
      if (!(std::abs(p->location[k]) < 1.0)) throw ParameterDomainError("initial measure support outside D");
      x[k] = static_cast<int>(std::floor(L * p->location[k]));
    }
    const std::size_t s = lat.site_index(x);
    if (s != kOutside) u[s] = vol_scale * p->mass;
    return u;
  }
  const auto& pd = std::get<PiecewiseDensity>(mu);
  const int B = pd.cells_per_axis;
  std::size_t expect = 1;
  for (int k = 0; k < d; ++k) expect *= B;
  if (B < 1 || pd.density.size() != expect) throw ShapeError("density grid does not match dimension");
  double total = 0;
  for (double v : pd.density) {
    if (!(v >= 0) || !std::isfinite(v)) throw ParameterDomainError("density must be finite and >= 0");
    total += v;
  }
  if (!(total > 0)) throw ParameterDomainError("initial measure must have positive mass");
  const double cw = 2.0 / B;
  // Overlap of site box [x/L,(x+1)/L) with density cell c along one axis.
  auto overlap = [&](int x, int c) {
    const double lo = std::max(static_cast<double>(x) / L, -1.0 + c * cw);
    const double hi = std::min(static_cast<double>(x + 1) / L, -1.0 + (c + 1) * cw);
    return std::max(0.0, hi - lo);
  };
  for (std::size_t s = 0; s < lat.site_count(); ++s) {
    const Point x = lat.site(s);
    double acc = 0;
    for (std::size_t c = 0; c < pd.density.size(); ++c) {
      if (pd.density[c] == 0) continue;
      std::size_t rest = c;
      double vol = 1;
      for (int k = d - 1; k >= 0 && vol > 0; --k) {
        vol *= overlap(x[k], static_cast<int>(rest % B));
        rest /= B;
      }
      acc += pd.density[c] * vol;
    }
    u[s] = vol_scale * acc;
  }
  return u;
}

// ---------------------------------------------------------------------------
// Lattice semigroup exp(L^2 t Delta_w)

struct SemigroupOptions {
  enum class Method { Auto, Spectral, Stepping } method = Method::Auto;
  Eigen::Index dense_cap = 4096;
  double local_tolerance = 1e-8;
};

/// exp(L^2 t Delta_w) applied to 0-forms; t is macroscopic time.
class Semigroup {
public:
  Semigroup(const Environment& env, SemigroupOptions opts = {})
      : opts_(opts), L_(env.half_size()), delta_(build_delta(env)) {
    const Eigen::Index n = delta_.size();
    spectral_ = opts_.method == SemigroupOptions::Method::Spectral ||
                (opts_.method == SemigroupOptions::Method::Auto && n <= opts_.dense_cap);
    if (!spectral_) return;
    const double l2 = static_cast<double>(L_) * L_;
    if (env.dimension() == 1) {
      Eigen::VectorXd diag(n), sub(std::max<Eigen::Index>(n - 1, 0));
      for (Eigen::Index i = 0; i < n; ++i) diag[i] = l2 * delta_.matrix().coeff(i, i);
      for (Eigen::Index i = 0; i + 1 < n; ++i) sub[i] = l2 * delta_.matrix().coeff(i + 1, i);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
      es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      values_ = es.eigenvalues();
      vectors_ = es.eigenvectors();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l2 * delta_.dense());
      values_ = es.eigenvalues();
      vectors_ = es.eigenvectors();
    }
  }

  bool spectral() const noexcept { return spectral_; }

  ZeroForm evolve(const ZeroForm& u0, double t) const {
    if (u0.size() != delta_.size()) throw ShapeError("initial vector has wrong length");
    if (!(t > 0)) throw ParameterDomainError("semigroup time must be > 0");
    if (spectral_) {
      Eigen::VectorXd c = vectors_.transpose() * u0;
      for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= std::exp(values_[i] * t);
      return vectors_ * c;
    }
    return step(u0, t);
  }

private:
  // Extrapolated implicit Euler (order 2, L-stable) with step doubling.
  ZeroForm step(const ZeroForm& u0, double t_end) const {
    const double l2 = static_cast<double>(L_) * L_;
    const SparseMatrix a = l2 * delta_.matrix();
    SparseMatrix id(a.rows(), a.cols());
    id.setIdentity();
    using Factor = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;
    auto factor = [&](Factor& f, double h) {
      f.compute(Eigen::SparseMatrix<double>(id - h * a));
      if (f.info() != Eigen::Success) throw NumericalFailure("semigroup step factorization failed", h);
    };
    Factor full, half;
    ZeroForm u = u0;
    double t = 0;
    double h = t_end / 64.0;
    int rejected = 0;
    while (t < t_end) {
      h = std::min(h, t_end - t);
      factor(full, h);
      factor(half, 0.5 * h);
      const ZeroForm y1 = full.solve(u);
      const ZeroForm y2 = half.solve(ZeroForm(half.solve(u)));
      const double scale = std::max(1.0, u.cwiseAbs().maxCoeff());
      const double err = (y2 - y1).cwiseAbs().maxCoeff() / scale;
      if (!std::isfinite(err)) throw NumericalFailure("semigroup stepping produced non-finite values", err);
      if (err <= opts_.local_tolerance) {
        u = 2.0 * y2 - y1;
        t += h;
        rejected = 0;
      } else if (++rejected > 60) {
        throw NumericalFailure("semigroup step size underflow", err);
      }
      const double factor_h = err > 0 ? 0.9 * std::sqrt(opts_.local_tolerance / err) : 4.0;
      h *= std::clamp(factor_h, 0.2, 4.0);
    }
    return u;
  }

  SemigroupOptions opts_;
  int L_;
  SparseSymmetricOperator delta_;
  bool spectral_ = false;
  Eigen::VectorXd values_;
  Eigen::MatrixXd vectors_;
};

inline ZeroForm evolve_semigroup(const Environment& env, const ZeroForm& u0, double t,
                                 SemigroupOptions opts = {}) {
  return Semigroup(env, opts).evolve(u0, t);
}

/// Snapshot CSV: site coordinates, value, t.
inline void write_semigroup_csv(const Lattice& lat, const ZeroForm& u, double t, std::ostream& os) {
  os << std::setprecision(17);
  for (int k = 0; k < lat.dimension(); ++k) os << 'x' << (k + 1) << ',';
  os << "value,t\n";
  for (std::size_t s = 0; s < lat.site_count(); ++s) {
    for (int c : lat.site(s)) os << c << ',';
    os << u[s] << ',' << t << '\n';
  }
}

}  // namespace rwre
