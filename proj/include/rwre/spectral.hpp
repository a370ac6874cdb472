#pragma once

// Eigenpairs of the scaled inverse (-L^2 Delta_{L,w})^-1, the closed-form
// homogeneous spectrum, continuum Dirichlet eigenpairs on (-1,1)^d, and the
// subspace distances used to compare discrete and continuum eigenspaces.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/green.hpp"
#include "rwre/lattice.hpp"
#include "rwre/rng.hpp"
#include "rwre/solvers.hpp"

namespace rwre {

using ModeIndex = std::vector<int>;

struct EigenPair {
  double value = 0;
  Eigen::VectorXd vector;  // unit Euclidean norm over interior sites; empty for continuum pairs
  ModeIndex index;         // mode n, empty when unknown
  double residual = 0;
};

namespace detail {
/// All n in {1..N}^d, first component most significant.
inline std::vector<ModeIndex> modes_up_to(int N, int d) {
  std::vector<ModeIndex> out;
  ModeIndex n(d, 1);
  while (true) {
    out.push_back(n);
    int k = d - 1;
    while (k >= 0 && n[k] == N) n[k--] = 1;
    if (k < 0) break;
    ++n[k];
  }
  return out;
}

inline void sort_decreasing(std::vector<EigenPair>& pairs) {
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const EigenPair& a, const EigenPair& b) { return a.value > b.value; });
}

/// Fixes the sign so that the entry of largest magnitude is positive.
inline void canonical_sign(Eigen::VectorXd& v) {
  Eigen::Index i = 0;
  v.cwiseAbs().maxCoeff(&i);
  if (v[i] < 0) v = -v;
}
}  // namespace detail

/// Closed-form eigenpairs of (-L^2 Delta_{L,1})^-1:
/// lambda_n^L = (4 L^2 sum_i sin^2(pi n_i / 4L))^-1, vector prod_i sc(pi n_i x_i / 2L).
/// `count` > 0 keeps only the largest `count` values.
inline std::vector<EigenPair> homogeneous_eigenpairs(int L, int d, std::size_t count = 0) {
  const Lattice lat(d, L);
  if (lat.site_count() > 1u << 22) throw CapExceededError("homogeneous_eigenpairs: lattice too large");
  const double l2 = static_cast<double>(L) * L;
  std::vector<EigenPair> pairs;
  for (const ModeIndex& n : detail::modes_up_to(2 * L - 1, d)) {
    double mu = 0;
    for (int k : n) mu += axis_eigenvalue(k, L);
    pairs.push_back({1.0 / (l2 * mu), {}, n, 0.0});
  }
  detail::sort_decreasing(pairs);
  if (count > 0 && count < pairs.size()) pairs.resize(count);
  const double norm = std::pow(static_cast<double>(L), -0.5 * d);
  for (EigenPair& p : pairs) {
    p.vector.resize(static_cast<Eigen::Index>(lat.site_count()));
    for (std::size_t s = 0; s < lat.site_count(); ++s) {
      const Point x = lat.site(s);
      double v = norm;
      for (int k = 0; k < d; ++k) v *= sc(p.index[k], M_PI * p.index[k] * x[k] / (2.0 * L));
      p.vector[static_cast<Eigen::Index>(s)] = v;
    }
  }
  return pairs;
}

/// e_n(xi) = prod_i sc(pi n_i xi_i / 2); orthonormal in L^2((-1,1)^d).
inline double continuum_eigenfunction(const ModeIndex& n, const std::vector<double>& xi) {
  if (n.size() != xi.size()) throw ShapeError("mode and point differ in dimension");
  double v = 1;
  for (std::size_t k = 0; k < n.size(); ++k) v *= mode_1d(n[k], xi[k]);
  return v;
}

/// lambda_n = ((pi/2)^2 n.kappa n)^-1 for n in {1..N}^d, sorted decreasing.
/// The functions e_n diagonalize -div(kappa grad) only for diagonal kappa.
inline std::vector<EigenPair> continuum_eigenpairs(const Eigen::MatrixXd& kappa, int N) {
  min_eigenvalue_spd(kappa);
  if (N < 1) throw ParameterDomainError("continuum_eigenpairs requires N >= 1");
  const int d = static_cast<int>(kappa.rows());
  std::vector<EigenPair> pairs;
  Eigen::VectorXd nv(d);
  for (const ModeIndex& n : detail::modes_up_to(N, d)) {
    for (int k = 0; k < d; ++k) nv[k] = n[k];
    pairs.push_back({1.0 / (M_PI * M_PI / 4.0 * nv.dot(kappa * nv)), {}, n, 0.0});
  }
  detail::sort_decreasing(pairs);
  return pairs;
}

inline std::vector<EigenPair> continuum_eigenpairs(double kappa, int N, int d) {
  return continuum_eigenpairs(Eigen::MatrixXd(kappa * Eigen::MatrixXd::Identity(d, d)), N);
}

struct EigenOptions {
  Eigen::Index dense_cap = 4096;
  double residual_tolerance = 1e-8;
  std::uint64_t seed = 0x6c616e637a6f73ULL;  // Lanczos start vector
};

/// The k algebraically largest eigenvalues of (scale * op)^-1 for SPD `op`
/// (typically -Delta_{L,w} with scale L^2), in decreasing order. Residuals
/// are ||op v - mu v|| / mu with mu = 1 / (scale * value).
inline std::vector<EigenPair> smallest_eigenpairs(const SparseSymmetricOperator& op, Eigen::Index k,
                                                  double scale = 1.0, EigenOptions opts = {}) {
  const Eigen::Index n = op.size();
  if (k < 1 || k > n) throw ParameterDomainError("smallest_eigenpairs requires 1 <= k <= dimension");
  if (!(scale > 0)) throw ParameterDomainError("scale must be > 0");
  std::vector<EigenPair> out;
  auto finish = [&](double mu, Eigen::VectorXd v) {
    v.normalize();
    detail::canonical_sign(v);
    if (!(mu > 0)) throw NumericalFailure("operator is not positive definite", mu);
    const double res = (op.apply(v) - mu * v).norm() / mu;
    out.push_back({1.0 / (scale * mu), std::move(v), {}, res});
  };

  if (n <= opts.dense_cap) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op.dense());
    if (es.info() != Eigen::Success) throw NumericalFailure("dense eigensolver failed", 0);
    for (Eigen::Index i = 0; i < k; ++i) finish(es.eigenvalues()[i], es.eigenvectors().col(i));
  } else {
    // Shift-invert Lanczos (shift 0) with full reorthogonalization; the
    // Krylov dimension doubles until the wanted Ritz pairs converge.
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor(Eigen::SparseMatrix<double>(op.matrix()));
    if (factor.info() != Eigen::Success) throw NumericalFailure("factorization for shift-invert failed", 0);
    const CounterStream rng(opts.seed);
    Eigen::VectorXd start(n);
    for (Eigen::Index i = 0; i < n; ++i) start[i] = rng.uniform(static_cast<std::uint64_t>(i)) - 0.5;
    Eigen::Index m = std::min<Eigen::Index>(n, std::max<Eigen::Index>(2 * k + 20, 40));
    while (true) {
      Eigen::MatrixXd V(n, m);
      Eigen::VectorXd alpha(m), beta(m);
      V.col(0) = start.normalized();
      Eigen::Index built = m;
      for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::VectorXd w = factor.solve(V.col(j));
        alpha[j] = V.col(j).dot(w);
        for (int pass = 0; pass < 2; ++pass) w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
        beta[j] = w.norm();
        if (j + 1 == m) break;
        if (beta[j] < 1e-14 * std::abs(alpha[j])) {  // invariant subspace found
          built = j + 1;
          break;
        }
        V.col(j + 1) = w / beta[j];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ts;
      ts.computeFromTridiagonal(alpha.head(built), beta.head(std::max<Eigen::Index>(built - 1, 0)),
                                Eigen::ComputeEigenvectors);
      out.clear();
      bool ok = built >= k;
      for (Eigen::Index i = 0; ok && i < k; ++i) {
        const Eigen::Index col = built - 1 - i;  // largest Ritz values of op^-1
        finish(1.0 / ts.eigenvalues()[col], V.leftCols(built) * ts.eigenvectors().col(col));
        ok = out.back().residual < opts.residual_tolerance;
      }
      if (ok) break;
      if (m == n) throw NumericalFailure("Lanczos did not converge", out.empty() ? 1.0 : out.back().residual);
      m = std::min(n, 2 * m);
    }
  }
  for (const EigenPair& p : out)
    if (!(p.residual < opts.residual_tolerance)) throw NumericalFailure("eigenpair residual too large", p.residual);
  return out;
}

// ---------------------------------------------------------------------------
// Projectors and subspace distances

/// Orthogonal projector onto span(columns) in Euclidean space.
class Projector {
public:
  explicit Projector(const Eigen::MatrixXd& spanning) {
    if (spanning.cols() == 0 || spanning.rows() < spanning.cols())
      throw ShapeError("projector needs 1 <= rank <= ambient dimension");
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(spanning);
    basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(spanning.rows(), spanning.cols());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(spanning.cols()).triangularView<Eigen::Upper>();
    const double scale = r.diagonal().cwiseAbs().maxCoeff();
    if (!(r.diagonal().cwiseAbs().minCoeff() > 1e-12 * scale))
      throw DegeneracyError("projector spanning set is rank deficient");
  }

  const Eigen::MatrixXd& basis() const noexcept { return basis_; }
  Eigen::Index rank() const noexcept { return basis_.cols(); }
  Eigen::Index ambient() const noexcept { return basis_.rows(); }
  Eigen::MatrixXd matrix() const { return basis_ * basis_.transpose(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return basis_ * (basis_.transpose() * v); }

private:
  Eigen::MatrixXd basis_;
};

namespace detail {
/// ||P_A - P_B|| from the cross Gram matrix Q_A^T Q_B of orthonormal bases.
inline double distance_from_cross_gram(const Eigen::MatrixXd& cross) {
  if (cross.rows() != cross.cols()) return 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
  const double smin = std::min(1.0, svd.singularValues().minCoeff());
  return std::sqrt(std::max(0.0, 1.0 - smin * smin));
}
}  // namespace detail

/// Spectral-norm distance ||P_A - P_B||, the sine of the largest principal angle.
inline double projection_distance(const Projector& a, const Projector& b) {
  if (a.ambient() != b.ambient()) throw ShapeError("projectors live in different spaces");
  return detail::distance_from_cross_gram(a.basis().transpose() * b.basis());
}

/// Distance in L^2((-1,1)^d) between the span of step functions i_L v (v the
/// columns of `discrete`, any basis) and the span of continuum modes e_n.
inline double embedded_projection_distance(const Lattice& lat, const Eigen::MatrixXd& discrete,
                                            const std::vector<ModeIndex>& modes) {
  if (discrete.rows() != static_cast<Eigen::Index>(lat.site_count()))
    throw ShapeError("discrete basis does not match lattice");
  if (modes.empty()) throw ShapeError("no continuum modes given");
  const int d = lat.dimension(), L = lat.half_size();
  const Eigen::MatrixXd q = Projector(discrete).basis();
  // Step functions: ||i_L v||^2 = L^-d |v|^2, so L^(d/2) q is orthonormal.
  const double norm = std::pow(static_cast<double>(L), 0.5 * d);
  Eigen::MatrixXd cell(static_cast<Eigen::Index>(lat.site_count()), static_cast<Eigen::Index>(modes.size()));
  for (std::size_t s = 0; s < lat.site_count(); ++s) {
    const Point x = lat.site(s);
    for (std::size_t j = 0; j < modes.size(); ++j) {
      if (static_cast<int>(modes[j].size()) != d) throw ShapeError("mode has wrong dimension");
      double v = 1;
      for (int k = 0; k < d; ++k)
        v *= mode_1d_integral(modes[j][k], static_cast<double>(x[k]) / L, static_cast<double>(x[k] + 1) / L);
      cell(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return detail::distance_from_cross_gram(norm * q.transpose() * cell);
}

// ---------------------------------------------------------------------------
// Pairing discrete and continuum spectra

inline constexpr double kDegeneracyTolerance = 1e-9;

struct SpectrumRow {
  ModeIndex index;
  double discrete = 0;
  double continuum = 0;
  bool paired = false;
  double residual = 0;  // eigenpair residual of the discrete solve
};

namespace detail {
inline bool same_cluster(double a, double b) {
  return std::abs(a - b) <= kDegeneracyTolerance * std::max(std::abs(a), std::abs(b));
}
}  // namespace detail

/// Rank pairing of the continuum modes |n| <= N with the largest discrete
/// eigenvalues of (-L^2 Delta_w)^-1. A row is unpaired when a continuum
/// cluster boundary falls inside a discrete cluster.
inline std::vector<SpectrumRow> compare_spectra(const Environment& env, const Eigen::MatrixXd& kappa, int N,
                                                EigenOptions opts = {}) {
  const auto cont = continuum_eigenpairs(kappa, N);
  const Eigen::Index n = static_cast<Eigen::Index>(env.lattice().site_count());
  const Eigen::Index k = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(cont.size()) + 1);
  const SparseSymmetricOperator neg(SparseMatrix(-build_delta(env).matrix()));
  const double l2 = static_cast<double>(env.half_size()) * env.half_size();
  const auto disc = smallest_eigenpairs(neg, k, l2, opts);
  std::vector<SpectrumRow> rows;
  for (std::size_t i = 0; i < cont.size() && static_cast<Eigen::Index>(i) < k; ++i) {
    SpectrumRow r{cont[i].index, disc[i].value, cont[i].value, true, disc[i].residual};
    const bool cont_prev = i > 0 && detail::same_cluster(cont[i - 1].value, cont[i].value);
    const bool disc_prev = i > 0 && detail::same_cluster(disc[i - 1].value, disc[i].value);
    const bool cont_next = i + 1 < cont.size() && detail::same_cluster(cont[i + 1].value, cont[i].value);
    const bool disc_next = static_cast<Eigen::Index>(i + 1) < k && detail::same_cluster(disc[i + 1].value, disc[i].value);
    if ((disc_prev && !cont_prev) || (disc_next && !cont_next)) r.paired = false;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Discrete eigenspace E^L paired by rank with the continuum eigenvalue of
/// mode n (with its full multiplicity). Throws DegeneracyError when the
/// discrete spectrum does not separate the paired block from its neighbours.
struct PairedSubspace {
  std::vector<EigenPair> discrete;
  std::vector<ModeIndex> modes;
  double continuum_value = 0;
};

inline PairedSubspace paired_subspace(const Environment& env, const ModeIndex& n, const Eigen::MatrixXd& kappa,
                                      EigenOptions opts = {}) {
  const int d = env.dimension();
  if (static_cast<int>(n.size()) != d) throw ShapeError("mode index has wrong dimension");
  if (*std::min_element(n.begin(), n.end()) < 1) throw ParameterDomainError("mode indices must be >= 1");
  Eigen::VectorXd nv(d);
  for (int k = 0; k < d; ++k) nv[k] = n[k];
  const double target = 1.0 / (M_PI * M_PI / 4.0 * nv.dot(kappa * nv));
  // Every mode with eigenvalue >= target has |m| <= |n| sqrt(kmax / kmin).
  const double kmin = min_eigenvalue_spd(kappa);
  const double kmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(kappa, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const int box = static_cast<int>(std::ceil(nv.norm() * std::sqrt(kmax / kmin))) + 1;
  std::size_t rank = 0, mult = 0;
  PairedSubspace out;
  out.continuum_value = target;
  for (const auto& p : continuum_eigenpairs(kappa, box)) {
    if (detail::same_cluster(p.value, target)) {
      ++mult;
      out.modes.push_back(p.index);
    } else if (p.value > target) {
      ++rank;
    }
  }
  const Eigen::Index sites = static_cast<Eigen::Index>(env.lattice().site_count());
  const Eigen::Index need = static_cast<Eigen::Index>(rank + mult);
  if (need > sites) throw ParameterDomainError("mode index exceeds the discrete spectrum");
  const SparseSymmetricOperator neg(SparseMatrix(-build_delta(env).matrix()));
  const double l2 = static_cast<double>(env.half_size()) * env.half_size();
  const auto disc = smallest_eigenpairs(neg, std::min(sites, need + 1), l2, opts);
  if (rank > 0 && detail::same_cluster(disc[rank - 1].value, disc[rank].value))
    throw DegeneracyError("discrete eigenvalue cluster straddles the paired block (above)");
  if (need < static_cast<Eigen::Index>(disc.size()) &&
      detail::same_cluster(disc[need - 1].value, disc[need].value))
    throw DegeneracyError("discrete eigenvalue cluster straddles the paired block (below)");
  out.discrete.assign(disc.begin() + static_cast<std::ptrdiff_t>(rank), disc.begin() + need);
  return out;
}

inline Eigen::MatrixXd stack_vectors(const std::vector<EigenPair>& pairs) {
  if (pairs.empty()) throw ShapeError("no eigenvectors to stack");
  Eigen::MatrixXd m(pairs.front().vector.size(), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t j = 0; j < pairs.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = pairs[j].vector;
  return m;
}

/// ||E^L (Xi_L^-1 - lambda I) E^L|| where Xi_L^-1 acts on step functions as
/// (-L^2 Delta_w)^-1. E^L is the discrete eigenspace paired with mode n.
inline double invariance_residual(const Environment& env, const ModeIndex& n, double lambda,
                                  const Eigen::MatrixXd& kappa, EigenOptions opts = {}) {
  const PairedSubspace ps = paired_subspace(env, n, kappa, opts);
  const Eigen::MatrixXd q = Projector(stack_vectors(ps.discrete)).basis();
  const SpdSolver solver(SparseMatrix(-build_delta(env).matrix()), SolverOptions{1e-13, 0});
  const double l2 = static_cast<double>(env.half_size()) * env.half_size();
  Eigen::MatrixXd aq(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) aq.col(j) = solver.solve(q.col(j)) / l2;
  Eigen::MatrixXd compressed = q.transpose() * aq;
  compressed = 0.5 * (compressed + compressed.transpose());
  compressed.diagonal().array() -= lambda;
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(compressed, Eigen::EigenvaluesOnly)
      .eigenvalues()
      .cwiseAbs()
      .maxCoeff();
}

/// Scalar-kappa form: kappa is recovered from lambda_n = 4 / (pi^2 kappa |n|^2).
inline double invariance_residual(const Environment& env, const ModeIndex& n, double lambda,
                                  EigenOptions opts = {}) {
  if (!(lambda > 0)) throw ParameterDomainError("lambda must be > 0");
  double n2 = 0;
  for (int k : n) n2 += static_cast<double>(k) * k;
  const double kappa = 4.0 / (M_PI * M_PI * lambda * n2);
  const int d = env.dimension();
  return invariance_residual(env, n, lambda, Eigen::MatrixXd(kappa * Eigen::MatrixXd::Identity(d, d)), opts);
}

/// Norm of (d^2)^-1 - (d^2_N)^-1, the N-cutoff of the continuum inverse:
/// the largest eigenvalue among modes with max_i n_i > N.
inline double cutoff_gap(const Eigen::MatrixXd& kappa, int N) {
  double gap = 0;
  for (const auto& p : continuum_eigenpairs(kappa, N + 1))
    if (*std::max_element(p.index.begin(), p.index.end()) > N) gap = std::max(gap, p.value);
  return gap;
}

/// kappa estimate from the lowest eigenvalue: mu_1(-L^2 Delta) -> (pi^2/4) kappa d.
inline double spectral_kappa(const Environment& env, EigenOptions opts = {}) {
  const SparseSymmetricOperator neg(SparseMatrix(-build_delta(env).matrix()));
  const double l2 = static_cast<double>(env.half_size()) * env.half_size();
  const auto top = smallest_eigenpairs(neg, 1, l2, opts);
  return 4.0 / (M_PI * M_PI * env.dimension() * top.front().value);
}

inline void write_spectrum_csv(const std::vector<SpectrumRow>& rows, std::ostream& os) {
  os << std::setprecision(17) << "n,lambda_discrete,lambda_continuum,paired,residual\n";
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.index.size(); ++k) os << (k ? ":" : "") << r.index[k];
    os << ',' << r.discrete << ',' << r.continuum << ',' << (r.paired ? 1 : 0) << ',' << r.residual << '\n';
  }
}

}  // namespace rwre
