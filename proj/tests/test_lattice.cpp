#include <gtest/gtest.h>

#include <sstream>

#include "rwre/lattice.hpp"
#include "rwre/solvers.hpp"

using namespace rwre;

namespace {

Environment random_env(int d, int L, std::uint64_t seed) {
  EnvironmentSpec s;
  s.family = family::UniformInterval{0.5, 1.5};
  s.dimension = d;
  s.half_size = L;
  s.seed = seed;
  return sample_environment(s);
}

Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t key) {
  const CounterStream s(key);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 2 * s.uniform(i) - 1;
  return v;
}

// Dense Laplacian built directly from neighbour coordinates.
Eigen::MatrixXd brute_laplacian(const Environment& env) {
  const Lattice& lat = env.lattice();
  const int d = lat.dimension();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(lat.site_count(), lat.site_count());
  for (std::size_t s = 0; s < lat.site_count(); ++s) {
    const Point x = lat.site(s);
    for (int i = 0; i < d; ++i)
      for (int sign : {-1, 1}) {
        Point y = x;
        y[i] += sign;
        Point tail = sign > 0 ? x : y;
        const double w = env.rate(lat.bond_index(i, tail));
        m(s, s) -= w;
        const std::size_t t = lat.site_index(y);
        if (t != kOutside) m(s, t) += w;
      }
  }
  return m;
}

}  // namespace

TEST(Laplacian, MatchesNeighbourConstruction) {
  for (auto [d, L] : {std::pair{1, 5}, std::pair{2, 4}, std::pair{3, 2}}) {
    const Environment env = random_env(d, L, 17);
    EXPECT_LT((build_delta(env).dense() - brute_laplacian(env)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Laplacian, OneDimensionalHandExample) {
  EnvironmentSpec s;
  s.half_size = 2;
  const Environment env(s, {1.0, 2.0, 3.0, 4.0});
  Eigen::Matrix3d want;
  want << -3, 2, 0, 2, -5, 3, 0, 3, -7;
  EXPECT_EQ(build_delta(env).dense(), Eigen::MatrixXd(want));
}

TEST(Laplacian, SymmetricWithBoundaryDeficit) {
  const Environment env = random_env(2, 5, 3);
  const Eigen::MatrixXd m = build_delta(env).dense();
  EXPECT_EQ((m - m.transpose()).cwiseAbs().maxCoeff(), 0.0);
  const Lattice& lat = env.lattice();
  for (std::size_t s = 0; s < lat.site_count(); ++s) {
    double deficit = 0;
    for (int i = 0; i < 2; ++i)
      for (bool pos : {false, true}) {
        const std::size_t b = lat.site_bond(s, i, pos);
        if ((pos ? lat.head_site(b) : lat.tail_site(b)) == kOutside) deficit += env.rate(b);
      }
    EXPECT_NEAR(m.row(static_cast<Eigen::Index>(s)).sum(), -deficit, 1e-13);
  }
}

TEST(Laplacian, NegativeDefinite) {
  const Environment env = random_env(2, 4, 8);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(build_delta(env).dense());
  EXPECT_LT(es.eigenvalues().maxCoeff(), 0.0);
}

TEST(Hodge, DivergenceIsAdjointOfGradient) {
  const Environment env = random_env(2, 4, 5);
  const Lattice& lat = env.lattice();
  const auto u = random_vector(lat.site_count(), 1);
  const auto w = random_vector(lat.bond_count(), 2);
  EXPECT_NEAR(gradient(lat, u).dot(w), u.dot(divergence(lat, w)), 1e-12);
  EXPECT_LT((gradient_matrix(lat) * u - gradient(lat, u)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Hodge, WeightedCompositionIsMinusLaplacian) {
  for (int d : {1, 2, 3}) {
    const Environment env = random_env(d, 3, 21);
    const Lattice& lat = env.lattice();
    const auto u = random_vector(lat.site_count(), 4);
    const ZeroForm lhs = divergence(lat, multiply_alpha(env.rates(), gradient(lat, u)));
    EXPECT_LT((lhs + build_delta(env).apply(u)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Hodge, QuadraticFormProperty) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Environment env = random_env(2, 4, seed);
    const auto u = random_vector(env.lattice().site_count(), seed + 100);
    const double q = quadratic_form(u, env);
    EXPECT_NEAR(q, -u.dot(build_delta(env).apply(u)), 1e-11 * std::abs(q));
    EXPECT_GT(q, 0.0);
  }
}

TEST(Operator, ShapeChecksAndCoo) {
  const Environment env = random_env(1, 4, 1);
  const auto op = build_delta(env);
  EXPECT_THROW(op.apply(Eigen::VectorXd::Zero(3)), ShapeError);
  EXPECT_THROW(gradient(env.lattice(), Eigen::VectorXd::Zero(3)), ShapeError);
  EXPECT_THROW(divergence(env.lattice(), Eigen::VectorXd::Zero(3)), ShapeError);
  std::ostringstream os;
  op.write_coo(os);
  const auto lines = std::ranges::count(os.str(), '\n');
  EXPECT_EQ(lines, op.matrix().nonZeros());
  EXPECT_EQ(op.scaled(2.0).dense(), 2.0 * op.dense());
}

TEST(Solver, ConjugateGradientSolves) {
  const Environment env = random_env(2, 8, 9);
  const SparseMatrix neg = -build_delta(env).matrix();
  const SpdSolver cg(neg, SolverOptions{1e-12, 0});
  const auto b = random_vector(neg.rows(), 3);
  const Eigen::VectorXd x = cg.solve(b);
  EXPECT_LT((neg * x - b).norm() / b.norm(), 1e-11);
  EXPECT_GT(cg.last_iterations(), 0);
}

TEST(Solver, IterationCapRaisesNumericalFailure) {
  const Environment env = random_env(2, 10, 9);
  const SpdSolver cg(SparseMatrix(-build_delta(env).matrix()), SolverOptions{1e-14, 2});
  try {
    cg.solve(random_vector(env.lattice().site_count(), 5));
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_GT(e.residual(), 1e-14);
  }
}

TEST(Homogeneous, AxisBasisIsOrthonormalEigenbasis) {
  const int L = 7;
  const Eigen::MatrixXd q = axis_basis(L);
  EXPECT_LT((q.transpose() * q - Eigen::MatrixXd::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff(), 1e-13);
  const Eigen::MatrixXd neg = -build_unit_delta(Lattice(1, L)).dense();
  for (int n = 1; n < 2 * L; ++n)
    EXPECT_LT((neg * q.col(n - 1) - axis_eigenvalue(n, L) * q.col(n - 1)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Homogeneous, FunctionalCalculusMatchesOperator) {
  for (auto [d, L] : {std::pair{1, 6}, std::pair{2, 4}, std::pair{3, 3}}) {
    const Lattice lat(d, L);
    const auto v = random_vector(lat.site_count(), 11);
    const Eigen::VectorXd neg = -build_unit_delta(lat).apply(v);
    EXPECT_LT((apply_homogeneous_function(v, L, d, [](double mu) { return mu; }) - neg).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((apply_homogeneous_function(v, L, d, [](double) { return 1.0; }) - v).cwiseAbs().maxCoeff(), 1e-13);
    const Eigen::MatrixXd dense = dense_homogeneous_function(L, d, [](double mu) { return mu; });
    EXPECT_LT((dense + build_unit_delta(lat).dense()).cwiseAbs().maxCoeff(), 1e-12);
  }
}
