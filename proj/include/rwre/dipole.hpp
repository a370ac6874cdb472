#pragma once

// Perturbative machinery around the homogeneous Laplacian:
//   D = (-Delta_L)^-1/2 Delta_alpha (-Delta_L)^-1/2,  Neumann partial sums,
//   the dipole potential Phi = grad (-Delta_L)^-1 grad^*, its infinite-volume
//   limit, and sample-average checks of the effective diffusion bounds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/geometry.hpp"
#include "rwre/lattice.hpp"
#include "rwre/rng.hpp"
#include "rwre/solvers.hpp"

namespace rwre {

inline constexpr std::size_t kDenseCap = 4096;

namespace detail {
inline void check_dense_cap(std::size_t sites, const char* what) {
  if (sites > kDenseCap) throw CapExceededError(std::string(what) + ": interior size above dense cap");
}
}  // namespace detail

/// (-Delta_{L,1})^-1/2 v through the closed-form eigenbasis.
inline ZeroForm inv_sqrt_homogeneous(const ZeroForm& v, int L, int d) {
  return apply_homogeneous_function(v, L, d, [](double mu) { return 1.0 / std::sqrt(mu); });
}

inline ZeroForm sqrt_homogeneous(const ZeroForm& v, int L, int d) {
  return apply_homogeneous_function(v, L, d, [](double mu) { return std::sqrt(mu); });
}

/// D v without forming D.
inline ZeroForm apply_d(const Environment& env, double wbar, const ZeroForm& v) {
  const int L = env.half_size(), d = env.dimension();
  const auto alpha = alpha_field(env, wbar);
  const auto delta_alpha = assemble_weighted_laplacian(env.lattice(), alpha);
  return inv_sqrt_homogeneous(delta_alpha.apply(inv_sqrt_homogeneous(v, L, d)), L, d);
}

/// Dense D for interior size <= kDenseCap.
inline Eigen::MatrixXd d_matrix(const Environment& env, double wbar) {
  detail::check_dense_cap(env.lattice().site_count(), "d_matrix");
  const int L = env.half_size(), d = env.dimension();
  const Eigen::MatrixXd s_inv = dense_homogeneous_function(L, d, [](double mu) { return 1.0 / std::sqrt(mu); });
  const auto alpha = alpha_field(env, wbar);
  const Eigen::MatrixXd da = assemble_weighted_laplacian(env.lattice(), alpha).dense();
  Eigen::MatrixXd out = s_inv * da * s_inv;
  return 0.5 * (out + out.transpose());
}

/// sum_{k=0}^{order} D^k v.
inline ZeroForm neumann_partial_sum(const Environment& env, double wbar, int order, const ZeroForm& v) {
  if (order < 0) throw ParameterDomainError("Neumann order must be >= 0");
  if (v.size() != static_cast<Eigen::Index>(env.lattice().site_count())) throw ShapeError("vector has wrong length");
  const int L = env.half_size(), d = env.dimension();
  const auto delta_alpha = assemble_weighted_laplacian(env.lattice(), alpha_field(env, wbar));
  ZeroForm term = v, sum = v;
  for (int k = 1; k <= order; ++k) {
    term = inv_sqrt_homogeneous(delta_alpha.apply(inv_sqrt_homogeneous(term, L, d)), L, d);
    sum += term;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Dipole potential

namespace detail {
/// q(n, x) = sc(pi n x / 2L) / sqrt(L) for n = 1..2L-1, x = -L..L (zero at x = +-L).
struct AxisModes {
  int L;
  std::vector<double> values;  // (n-1) * (2L+1) + (x+L)
  explicit AxisModes(int L_) : L(L_), values(static_cast<std::size_t>(2 * L_ - 1) * (2 * L_ + 1)) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(L));
    for (int n = 1; n <= 2 * L - 1; ++n)
      for (int x = -L; x <= L; ++x)
        values[(n - 1) * (2 * L + 1) + (x + L)] =
            (x == -L || x == L) ? 0.0 : norm * sc(n, M_PI * n * x / (2.0 * L));
  }
  double operator()(int n, int x) const { return values[(n - 1) * (2 * L + 1) + (x + L)]; }
};

inline double mode_gradient(const AxisModes& q, const std::vector<int>& n, const Bond& b) {
  double v = 1;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const int x = b.tail[k];
    if (static_cast<int>(k) == b.direction) v *= q(n[k], x + 1) - q(n[k], x);
    else v *= q(n[k], x);
  }
  return v;
}
}  // namespace detail

/// Phi_{b,b'} = (1/L^d) sum_n lambda~_n (grad e_n)_b (grad e_n)_b',
/// lambda~_n^-1 = 4 sum_k sin^2(pi n_k / 4L), e_n = prod_k sc(pi n_k x_k / 2L).
inline double dipole_phi(const Lattice& lat, std::size_t b1, std::size_t b2) {
  const int L = lat.half_size(), d = lat.dimension();
  const Bond a = lat.bond(b1), c = lat.bond(b2);
  const detail::AxisModes q(L);
  std::vector<int> n(d, 1);
  double sum = 0;
  while (true) {
    double mu = 0;
    for (int k : n) mu += axis_eigenvalue(k, L);
    sum += detail::mode_gradient(q, n, a) * detail::mode_gradient(q, n, c) / mu;
    int k = d - 1;
    while (k >= 0 && n[k] == 2 * L - 1) n[k--] = 1;
    if (k < 0) break;
    ++n[k];
  }
  return sum;
}

inline double dipole_phi(int L, int d, std::size_t b1, std::size_t b2) { return dipole_phi(Lattice(d, L), b1, b2); }

/// Dense Phi assembled entry by entry from the spectral sum.
inline Eigen::MatrixXd dipole_matrix_spectral(const Lattice& lat) {
  detail::check_dense_cap(lat.site_count(), "dipole_matrix_spectral");
  const int L = lat.half_size(), d = lat.dimension();
  const auto nb = static_cast<Eigen::Index>(lat.bond_count());
  const detail::AxisModes q(L);
  // Gradients of all modes on all bonds, then Phi = X diag(1/mu) X^T.
  std::vector<std::vector<int>> modes;
  std::vector<int> n(d, 1);
  while (true) {
    modes.push_back(n);
    int k = d - 1;
    while (k >= 0 && n[k] == 2 * L - 1) n[k--] = 1;
    if (k < 0) break;
    ++n[k];
  }
  Eigen::MatrixXd x(nb, static_cast<Eigen::Index>(modes.size()));
  Eigen::VectorXd inv_mu(static_cast<Eigen::Index>(modes.size()));
  for (std::size_t m = 0; m < modes.size(); ++m) {
    double mu = 0;
    for (int k : modes[m]) mu += axis_eigenvalue(k, L);
    inv_mu[static_cast<Eigen::Index>(m)] = 1.0 / mu;
    for (Eigen::Index b = 0; b < nb; ++b)
      x(b, static_cast<Eigen::Index>(m)) = detail::mode_gradient(q, modes[m], lat.bond(static_cast<std::size_t>(b)));
  }
  Eigen::MatrixXd phi = x * inv_mu.asDiagonal() * x.transpose();
  return 0.5 * (phi + phi.transpose());
}

/// Dense Phi = grad (-Delta_L)^-1 grad^* with the closed-form inverse.
inline Eigen::MatrixXd dipole_matrix(const Lattice& lat) {
  detail::check_dense_cap(lat.site_count(), "dipole_matrix");
  const Eigen::MatrixXd inv = dense_homogeneous_function(lat.half_size(), lat.dimension(),
                                                         [](double mu) { return 1.0 / mu; });
  const Eigen::MatrixXd g = Eigen::MatrixXd(gradient_matrix(lat));
  Eigen::MatrixXd phi = g * inv * g.transpose();
  return 0.5 * (phi + phi.transpose());
}

namespace detail {
struct GaussRule {
  std::vector<double> nodes, weights;  // on [-1, 1]
};

inline GaussRule gauss_legendre(int p) {
  if (p < 2) throw ParameterDomainError("Gauss-Legendre order must be >= 2");
  GaussRule r;
  r.nodes.resize(p);
  r.weights.resize(p);
  for (int i = 0; i < p; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (p + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= p; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = p * (x * p1 - p0) / (x * x - 1);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = x;
    r.weights[i] = 2.0 / ((1 - x * x) * dp * dp);
  }
  return r;
}

/// Composite rule on [0, pi]: geometric panels towards 0, then uniform
/// panels no wider than `width`.
inline GaussRule composite_rule(int p, int geometric, double width) {
  std::vector<double> breaks{0.0};
  const double knee = std::min(M_PI, std::max(width, 1e-3));
  for (int k = geometric; k >= 1; --k) breaks.push_back(knee * std::pow(0.5, k));
  const int uniform = std::max(1, static_cast<int>(std::ceil((M_PI - knee) / width)));
  breaks.push_back(knee);
  for (int k = 1; k <= uniform && knee < M_PI; ++k) breaks.push_back(knee + (M_PI - knee) * k / uniform);
  const GaussRule g = gauss_legendre(p);
  GaussRule out;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double a = breaks[i], b = breaks[i + 1];
    if (!(b > a)) continue;
    for (int j = 0; j < p; ++j) {
      out.nodes.push_back(0.5 * (a + b) + 0.5 * (b - a) * g.nodes[j]);
      out.weights.push_back(0.5 * (b - a) * g.weights[j]);
    }
  }
  return out;
}

/// pi^-d times the integral over [0,pi]^d of the sign-averaged dipole integrand.
inline double phi_infinite_rule(int d, const std::vector<int>& z, int i, int j, const GaussRule& rule) {
  const std::size_t per_axis = rule.nodes.size();
  std::size_t total = 1;
  for (int k = 0; k < d; ++k) total *= per_axis;
  if (total > 200'000'000ULL) throw CapExceededError("dipole quadrature grid too large");
  const int patterns = 1 << d;
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> k(d), hs(d), s2(d);
  double sum = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    double w = 1, denom = 0;
    for (int a = d - 1; a >= 0; --a) {
      idx[a] = rest % per_axis;
      rest /= per_axis;
      k[a] = rule.nodes[idx[a]];
      w *= rule.weights[idx[a]];
      hs[a] = std::sin(0.5 * k[a]);
      denom += hs[a] * hs[a];
    }
    double acc = 0;
    for (int s = 0; s < patterns; ++s) {
      double phase = 0;
      double si = 0, sj = 0;
      for (int a = 0; a < d; ++a) {
        const double sign = (s >> a) & 1 ? -1.0 : 1.0;
        phase += sign * k[a] * z[a];
        if (a == i) si = sign;
        if (a == j) sj = sign;
      }
      phase += 0.5 * (si * k[i] - sj * k[j]);
      acc += si * hs[i] * sj * hs[j] * std::cos(phase);
    }
    sum += w * acc / patterns / denom;
  }
  return sum * std::pow(M_PI, -d);
}
}  // namespace detail

/// Infinite-volume dipole potential between b = <x, x+e_i> and b' = <y, y+e_j>,
/// z = x - y. Integrand (e^{ik_i}-1)(e^{-ik_j}-1) e^{ik.z} / (4 sum sin^2(k/2)),
/// symmetrized over sign flips, integrated by composite Gauss-Legendre with
/// geometric grading at the origin and checked against a finer rule.
inline double dipole_phi_infinite(int d, const std::vector<int>& z, int i, int j, double tolerance = 1e-9) {
  if (d < 1) throw ParameterDomainError("dimension must be >= 1");
  if (static_cast<int>(z.size()) != d) throw ShapeError("offset has wrong dimension");
  if (i < 0 || i >= d || j < 0 || j >= d) throw ShapeError("bond direction out of range");
  int zmax = 0;
  for (int v : z) zmax = std::max(zmax, std::abs(v));
  const double width = M_PI / (zmax + 2);
  const int geometric = d == 1 ? 30 : d == 2 ? 24 : 8;
  const double coarse = detail::phi_infinite_rule(d, z, i, j, detail::composite_rule(d >= 3 ? 6 : 10, geometric, width));
  const double fine = detail::phi_infinite_rule(d, z, i, j, detail::composite_rule(d >= 3 ? 8 : 14, geometric + 4, 0.5 * width));
  if (std::abs(fine - coarse) > tolerance + 1e-6 * std::abs(fine))
    throw NumericalFailure("dipole quadrature did not converge", std::abs(fine - coarse));
  return fine;
}

// ---------------------------------------------------------------------------
// Sample-average bound checks

struct SchwarzReport {
  std::size_t environments = 0;
  std::size_t vectors = 0;
  double wbar = 0;
  double worst_margin = 0;           // min_u (u, -wbar Delta_L u) - (u, [E(-Delta_w)^-1]^-1 u)
  double worst_relative_margin = 0;  // margin / (u, -wbar Delta_L u)
  std::vector<double> margins;
};

namespace detail {
inline Eigen::MatrixXd dense_inverse_spd(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw DegeneracyError("matrix is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

inline std::vector<Environment> replicas(const EnvironmentSpec& spec, std::size_t m) {
  std::vector<Environment> out;
  out.reserve(m);
  for (std::size_t r = 0; r < m; ++r) out.push_back(sample_environment(m == 1 ? spec : replica_spec(spec, r)));
  return out;
}
}  // namespace detail

/// Checks (u, [E^(-Delta_w)^-1]^-1 u) <= (u, -wbar Delta_L u), wbar = E w_b,
/// for K pseudo-random u, with E^ the average over M environments.
inline SchwarzReport schwarz_bound_check(const EnvironmentSpec& spec, std::size_t M, std::size_t K,
                                         std::uint64_t seed = 0) {
  spec.validate();
  if (M < 1 || K < 1) throw ParameterDomainError("schwarz_bound_check needs M >= 1 and K >= 1");
  const Lattice lat(spec.dimension, spec.half_size);
  detail::check_dense_cap(lat.site_count(), "schwarz_bound_check");
  const auto n = static_cast<Eigen::Index>(lat.site_count());
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, n);
  for (const auto& env : detail::replicas(spec, M))
    mean += detail::dense_inverse_spd(-build_delta(env).dense());
  mean /= static_cast<double>(M);
  mean = 0.5 * (mean + mean.transpose());
  const Eigen::MatrixXd h = detail::dense_inverse_spd(mean);
  SchwarzReport rep;
  rep.environments = M;
  rep.vectors = K;
  rep.wbar = family_mean(spec.family);
  const Eigen::MatrixXd upper = -rep.wbar * build_unit_delta(lat).dense();
  const CounterStream rng(derive_key(seed, 0x73636877ULL));
  rep.worst_margin = rep.worst_relative_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    Eigen::VectorXd u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[i] = 2.0 * rng.uniform(k * n + static_cast<std::uint64_t>(i)) - 1.0;
    const double hi = u.dot(upper * u);
    const double margin = hi - u.dot(h * u);
    rep.margins.push_back(margin);
    rep.worst_margin = std::min(rep.worst_margin, margin);
    rep.worst_relative_margin = std::min(rep.worst_relative_margin, margin / hi);
  }
  return rep;
}

struct ThetaReport {
  std::size_t environments = 0;
  int order = 0;     // 0: exact (I - D)^-1, k > 0: Neumann sum up to D^k
  double wbar = 0;
  Eigen::MatrixXd theta;
  double min_eigenvalue = 0;
  double min_eigenvalue_sigma = 0;
  double rho_hat = 0;           // largest eigenvalue of Theta^
  double kappa_hat = 0;         // wbar (1 - q1^T Theta^ q1), q1 the lowest homogeneous mode
  double kappa_sigma = 0;
  double harmonic_kappa = 0;    // (E w^-1)^-1 of the family
  std::size_t batches = 0;
};

/// Theta^ = I - [E^(I - D)^-1]^-1 from M environment replicas; sigma by batching.
inline ThetaReport theta_estimate(const EnvironmentSpec& spec, std::size_t M, int order = 0,
                                  std::size_t batches = 20) {
  spec.validate();
  if (M < 1) throw ParameterDomainError("theta_estimate needs M >= 1");
  if (order < 0) throw ParameterDomainError("order must be >= 0");
  const Lattice lat(spec.dimension, spec.half_size);
  detail::check_dense_cap(lat.site_count(), "theta_estimate");
  const int L = spec.half_size, d = spec.dimension;
  const auto n = static_cast<Eigen::Index>(lat.site_count());
  const double wbar = family_mean(spec.family);
  const Eigen::MatrixXd s = dense_homogeneous_function(L, d, [](double mu) { return std::sqrt(mu); });
  const Eigen::MatrixXd s_inv = dense_homogeneous_function(L, d, [](double mu) { return 1.0 / std::sqrt(mu); });
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  batches = std::max<std::size_t>(1, std::min(batches, M));

  std::vector<Eigen::MatrixXd> batch_sum(batches, Eigen::MatrixXd::Zero(n, n));
  std::vector<std::size_t> batch_count(batches, 0);
  const auto envs = detail::replicas(spec, M);
  for (std::size_t r = 0; r < M; ++r) {
    const Environment& env = envs[r];
    Eigen::MatrixXd x;
    if (order == 0) {
      x = wbar * s * detail::dense_inverse_spd(-build_delta(env).dense()) * s;
    } else {
      const Eigen::MatrixXd dm = d_matrix(env, wbar);
      x = id;
      Eigen::MatrixXd power = id;
      for (int k = 1; k <= order; ++k) {
        power = power * dm;
        x += power;
      }
    }
    const std::size_t b = r * batches / M;
    batch_sum[b] += x;
    ++batch_count[b];
  }
  // q1: lowest homogeneous mode, prod_k cos(pi x_k / 2L), unit norm.
  Eigen::VectorXd q1(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point x = lat.site(static_cast<std::size_t>(i));
    double v = 1;
    for (int c : x) v *= std::cos(M_PI * c / (2.0 * L));
    q1[i] = v;
  }
  q1.normalize();
  auto theta_of = [&](const Eigen::MatrixXd& mean) {
    Eigen::MatrixXd sym = 0.5 * (mean + mean.transpose());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sym);
    if (!lu.isInvertible()) throw DegeneracyError("sample average of (I - D)^-1 is singular");
    Eigen::MatrixXd th = id - lu.inverse();
    return Eigen::MatrixXd(0.5 * (th + th.transpose()));
  };

  ThetaReport rep;
  rep.environments = M;
  rep.order = order;
  rep.wbar = wbar;
  rep.batches = batches;
  rep.harmonic_kappa = family_harmonic_mean(spec.family);
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, n);
  for (const auto& b : batch_sum) total += b;
  rep.theta = theta_of(total / static_cast<double>(M));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rep.theta, Eigen::EigenvaluesOnly);
  rep.min_eigenvalue = es.eigenvalues().minCoeff();
  rep.rho_hat = es.eigenvalues().maxCoeff();
  rep.kappa_hat = wbar * (1.0 - q1.dot(rep.theta * q1));
  if (batches > 1) {
    std::vector<double> mins, kappas;
    for (std::size_t b = 0; b < batches; ++b) {
      const Eigen::MatrixXd th = theta_of(batch_sum[b] / static_cast<double>(batch_count[b]));
      mins.push_back(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(th, Eigen::EigenvaluesOnly).eigenvalues().minCoeff());
      kappas.push_back(wbar * (1.0 - q1.dot(th * q1)));
    }
    auto sigma = [&](const std::vector<double>& v) {
      double m = 0, s2 = 0;
      for (double x : v) m += x;
      m /= v.size();
      for (double x : v) s2 += (x - m) * (x - m);
      return std::sqrt(s2 / (v.size() - 1) / v.size());
    };
    rep.min_eigenvalue_sigma = sigma(mins);
    rep.kappa_sigma = sigma(kappas);
  }
  return rep;
}

inline nlohmann::json to_json(const SchwarzReport& r) {
  return {{"environments", r.environments}, {"vectors", r.vectors},       {"wbar", r.wbar},
          {"worst_margin", r.worst_margin}, {"worst_relative_margin", r.worst_relative_margin}};
}

inline nlohmann::json to_json(const ThetaReport& r) {
  return {{"environments", r.environments},
          {"order", r.order},
          {"wbar", r.wbar},
          {"min_eigenvalue", r.min_eigenvalue},
          {"min_eigenvalue_sigma", r.min_eigenvalue_sigma},
          {"rho_hat", r.rho_hat},
          {"kappa_hat", r.kappa_hat},
          {"kappa_sigma", r.kappa_sigma},
          {"harmonic_kappa", r.harmonic_kappa},
          {"batches", r.batches}};
}

}  // namespace rwre
