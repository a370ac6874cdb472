#pragma once

// Sparse operators on Lambda_L with absorbing (Dirichlet) boundary:
// the weighted Laplacian, the lattice gradient and its adjoint.
//
// Dot products here are plain sums over sites or bonds. The 1/L^d factor of
// the macroscopic inner product is applied only where kernels and spectra
// are mapped to the continuum.

#include <iomanip>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "rwre/env.hpp"
#include "rwre/error.hpp"
#include "rwre/geometry.hpp"

namespace rwre {

/// Values per interior site; zero outside Lambda_L is implicit.
using ZeroForm = Eigen::VectorXd;
/// Values per canonical (positively oriented) bond.
using OneForm = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Symmetric sparse matrix indexed by interior sites.
class SparseSymmetricOperator {
public:
  SparseSymmetricOperator() = default;
  explicit SparseSymmetricOperator(SparseMatrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw ShapeError("operator must be square");
    m_.makeCompressed();
  }

  Eigen::Index size() const noexcept { return m_.rows(); }
  const SparseMatrix& matrix() const noexcept { return m_; }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(m_); }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    if (v.size() != size()) throw ShapeError("vector length does not match operator");
    return m_ * v;
  }

  SparseSymmetricOperator scaled(double s) const { return SparseSymmetricOperator(SparseMatrix(s * m_)); }

  /// Coordinate list, one "row col value" triple per line, 0-based.
  void write_coo(std::ostream& os) const {
    os << std::setprecision(17);
    for (Eigen::Index r = 0; r < m_.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(m_, r); it; ++it)
        os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  }

private:
  SparseMatrix m_;
};

/// (Delta u)_x = sum_{|x-y|=1} r_xy (u_y - u_x), u = 0 off Lambda_L.
/// Rates may be any real numbers (used for the fluctuation field alpha).
inline SparseSymmetricOperator assemble_weighted_laplacian(const Lattice& lat,
                                                           std::span<const double> rates) {
  if (rates.size() != lat.bond_count()) throw ShapeError("rate field does not match lattice bonds");
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(lat.bond_count() * 4);
  for (std::size_t b = 0; b < rates.size(); ++b) {
    const std::size_t t = lat.tail_site(b), h = lat.head_site(b);
    const double r = rates[b];
    if (t != kOutside) trips.emplace_back(t, t, -r);
    if (h != kOutside) trips.emplace_back(h, h, -r);
    if (t != kOutside && h != kOutside) {
      trips.emplace_back(t, h, r);
      trips.emplace_back(h, t, r);
    }
  }
  const auto n = static_cast<Eigen::Index>(lat.site_count());
  SparseMatrix m(n, n);
  m.setFromTriplets(trips.begin(), trips.end());
  return SparseSymmetricOperator(std::move(m));
}

inline SparseSymmetricOperator build_delta(const Environment& env) {
  return assemble_weighted_laplacian(env.lattice(), env.rates());
}

/// Homogeneous Dirichlet Laplacian Delta_L (all rates 1).
inline SparseSymmetricOperator build_unit_delta(const Lattice& lat) {
  const std::vector<double> ones(lat.bond_count(), 1.0);
  return assemble_weighted_laplacian(lat, ones);
}

/// Sparse matrix of the gradient, bonds x sites: (grad u)_b = u_head - u_tail.
inline SparseMatrix gradient_matrix(const Lattice& lat) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(lat.bond_count() * 2);
  for (std::size_t b = 0; b < lat.bond_count(); ++b) {
    if (lat.head_site(b) != kOutside) trips.emplace_back(b, lat.head_site(b), 1.0);
    if (lat.tail_site(b) != kOutside) trips.emplace_back(b, lat.tail_site(b), -1.0);
  }
  SparseMatrix g(static_cast<Eigen::Index>(lat.bond_count()),
                 static_cast<Eigen::Index>(lat.site_count()));
  g.setFromTriplets(trips.begin(), trips.end());
  return g;
}

inline OneForm gradient(const Lattice& lat, const ZeroForm& u) {
  if (u.size() != static_cast<Eigen::Index>(lat.site_count())) throw ShapeError("0-form has wrong length");
  OneForm g(lat.bond_count());
  for (std::size_t b = 0; b < lat.bond_count(); ++b) {
    const std::size_t t = lat.tail_site(b), h = lat.head_site(b);
    g[b] = (h != kOutside ? u[h] : 0.0) - (t != kOutside ? u[t] : 0.0);
  }
  return g;
}

/// Adjoint of the gradient: (div w)_x = sum of w over bonds entering x minus
/// bonds leaving x, i.e. sum_y w_<yx> with w_<yx> = -w_<xy>.
inline ZeroForm divergence(const Lattice& lat, const OneForm& w) {
  if (w.size() != static_cast<Eigen::Index>(lat.bond_count())) throw ShapeError("1-form has wrong length");
  ZeroForm out = ZeroForm::Zero(lat.site_count());
  for (std::size_t b = 0; b < lat.bond_count(); ++b) {
    if (lat.head_site(b) != kOutside) out[lat.head_site(b)] += w[b];
    if (lat.tail_site(b) != kOutside) out[lat.tail_site(b)] -= w[b];
  }
  return out;
}

inline OneForm multiply_alpha(std::span<const double> alpha, const OneForm& w) {
  if (w.size() != static_cast<Eigen::Index>(alpha.size())) throw ShapeError("alpha and 1-form differ in length");
  OneForm out(w.size());
  for (Eigen::Index b = 0; b < w.size(); ++b) out[b] = alpha[b] * w[b];
  return out;
}

/// (1/2) sum over ordered neighbour pairs of w (u_y - u_x)^2 = (u, -Delta_w u).
inline double quadratic_form(const ZeroForm& u, const Environment& env) {
  const OneForm g = gradient(env.lattice(), u);
  double s = 0;
  const auto w = env.rates();
  for (Eigen::Index b = 0; b < g.size(); ++b) s += w[b] * g[b] * g[b];
  return s;
}

}  // namespace rwre
