#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "rwre/error.hpp"
#include "rwre/lattice.hpp"

namespace rwre {

struct SolverOptions {
  double relative_tolerance = 1e-10;
  /// 0 means 50 * sqrt(n).
  long max_iterations = 0;
};

/// Conjugate-gradient solver for an SPD sparse matrix (typically -Delta_w).
/// Factor-free, so one instance can serve many right-hand sides.
class SpdSolver {
public:
  SpdSolver(const SpdSolver&) = delete;
  SpdSolver& operator=(const SpdSolver&) = delete;

  SpdSolver(SparseMatrix spd, SolverOptions opts = {}) : opts_(opts), a_(std::move(spd)) {
    cg_.setTolerance(opts.relative_tolerance);
    const long n = a_.rows();
    const long cap = opts.max_iterations > 0
                         ? opts.max_iterations
                         : static_cast<long>(std::ceil(50.0 * std::sqrt(static_cast<double>(n))));
    cg_.setMaxIterations(std::max<long>(cap, 1));
    cg_.compute(a_);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x = cg_.solve(b);
    if (cg_.info() != Eigen::Success || !(cg_.error() <= opts_.relative_tolerance))
      throw NumericalFailure("conjugate gradient did not converge", cg_.error());
    return x;
  }

  double last_error() const { return cg_.error(); }
  long last_iterations() const { return static_cast<long>(cg_.iterations()); }

private:
  SolverOptions opts_;
  SparseMatrix a_;
  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg_;
};

// ---------------------------------------------------------------------------
// Closed-form eigenbasis of the homogeneous Dirichlet Laplacian on Lambda_L.
//
// Along one axis the eigenvectors are sc(pi n x / 2L), x = -L+1..L-1,
// n = 1..2L-1 (cos for odd n, sin for even n), each with squared Euclidean
// norm L, and -Delta eigenvalue 4 sin^2(pi n / 4L). The d-dimensional basis
// is the tensor product; eigenvalues add.

inline double sc(int n, double arg) { return (n % 2 == 1) ? std::cos(arg) : std::sin(arg); }

/// Eigenvalue of -Delta_L along one axis for mode n.
inline double axis_eigenvalue(int n, int L) {
  const double s = std::sin(M_PI * n / (4.0 * L));
  return 4.0 * s * s;
}

/// Orthonormal (Euclidean) axis basis: column n-1 holds sc(pi n x/2L)/sqrt(L).
inline Eigen::MatrixXd axis_basis(int L) {
  const int side = 2 * L - 1;
  Eigen::MatrixXd q(side, side);
  const double norm = 1.0 / std::sqrt(static_cast<double>(L));
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i) {
      const int x = i - (L - 1);
      q(i, j) = norm * sc(j + 1, M_PI * (j + 1) * x / (2.0 * L));
    }
  return q;
}

/// Applies the matrix `m` along every axis of a tensor stored in site order.
inline Eigen::VectorXd apply_along_axes(const Eigen::MatrixXd& m, const Eigen::VectorXd& v, int d) {
  const Eigen::Index side = m.rows();
  Eigen::VectorXd cur = v, next(v.size());
  Eigen::Index stride = 1;
  for (int k = 0; k < d - 1; ++k) stride *= side;
  Eigen::VectorXd fiber(side), out(side);
  for (int axis = 0; axis < d; ++axis) {
    const Eigen::Index block = stride * side;
    for (Eigen::Index o = 0; o < v.size(); o += block)
      for (Eigen::Index i = 0; i < stride; ++i) {
        for (Eigen::Index j = 0; j < side; ++j) fiber[j] = cur[o + j * stride + i];
        out.noalias() = m * fiber;
        for (Eigen::Index j = 0; j < side; ++j) next[o + j * stride + i] = out[j];
      }
    cur.swap(next);
    stride /= side;
  }
  return cur;
}

/// -Delta_L eigenvalue of the tensor mode stored at coefficient index `idx`.
inline double tensor_eigenvalue(Eigen::Index idx, int L, int d) {
  const int side = 2 * L - 1;
  double mu = 0;
  for (int k = 0; k < d; ++k) {
    mu += axis_eigenvalue(static_cast<int>(idx % side) + 1, L);
    idx /= side;
  }
  return mu;
}

/// f(-Delta_L) v computed in the closed-form eigenbasis.
inline Eigen::VectorXd apply_homogeneous_function(const Eigen::VectorXd& v, int L, int d,
                                                  const std::function<double(double)>& f) {
  Eigen::Index n = 1;
  for (int k = 0; k < d; ++k) n *= (2 * L - 1);
  if (v.size() != n) throw ShapeError("vector does not match lattice size");
  const Eigen::MatrixXd q = axis_basis(L);
  Eigen::VectorXd c = apply_along_axes(q.transpose(), v, d);
  for (Eigen::Index i = 0; i < n; ++i) c[i] *= f(tensor_eigenvalue(i, L, d));
  return apply_along_axes(q, c, d);
}

/// Dense f(-Delta_L) for small lattices.
inline Eigen::MatrixXd dense_homogeneous_function(int L, int d, const std::function<double(double)>& f) {
  const Eigen::MatrixXd q1 = axis_basis(L);
  Eigen::MatrixXd q = q1;
  for (int k = 1; k < d; ++k) {
    Eigen::MatrixXd next(q.rows() * q1.rows(), q.cols() * q1.cols());
    for (Eigen::Index i = 0; i < q.rows(); ++i)
      for (Eigen::Index j = 0; j < q.cols(); ++j)
        next.block(i * q1.rows(), j * q1.cols(), q1.rows(), q1.cols()) = q(i, j) * q1;
    q.swap(next);
  }
  Eigen::VectorXd diag(q.cols());
  for (Eigen::Index i = 0; i < diag.size(); ++i) diag[i] = f(tensor_eigenvalue(i, L, d));
  return q * diag.asDiagonal() * q.transpose();
}

}  // namespace rwre
