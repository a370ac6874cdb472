#include <gtest/gtest.h>

#include <cmath>

#include "rwre/dipole.hpp"

using namespace rwre;

namespace {

EnvironmentSpec perturbed(int d, int L, double delta, std::uint64_t seed = 1) {
  EnvironmentSpec s;
  s.family = family::BoundedPerturbation{1.5, delta};
  s.dimension = d;
  s.half_size = L;
  s.seed = seed;
  return s;
}

Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t key) {
  const CounterStream s(key);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 2 * s.uniform(i) - 1;
  return v;
}

}  // namespace

TEST(Phi, OrthogonalProjectorOfRankSites) {
  for (auto [d, L] : {std::pair{1, 6}, std::pair{2, 4}, std::pair{3, 2}}) {
    const Lattice lat(d, L);
    const Eigen::MatrixXd phi = dipole_matrix_spectral(lat);
    EXPECT_LT((phi - phi.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((phi * phi - phi).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(phi.trace(), static_cast<double>(lat.site_count()), 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(phi, Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      const double v = es.eigenvalues()[i];
      EXPECT_LT(std::min(std::abs(v), std::abs(v - 1)), 1e-8);
    }
  }
}

TEST(Phi, SpectralSumMatchesOperatorComposition) {
  for (auto [d, L] : {std::pair{1, 5}, std::pair{2, 3}}) {
    const Lattice lat(d, L);
    const Eigen::MatrixXd a = dipole_matrix_spectral(lat), b = dipole_matrix(lat);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
    for (std::size_t i = 0; i < lat.bond_count(); i += 3)
      for (std::size_t j = 0; j < lat.bond_count(); j += 5)
        EXPECT_NEAR(dipole_phi(lat, i, j), a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 1e-12);
  }
  EXPECT_NEAR(dipole_phi(4, 1, 2, 3), dipole_matrix(Lattice(1, 4))(2, 3), 1e-12);
}

TEST(Phi, OneDimensionalClosedForm) {
  // grad has a one-dimensional cokernel spanned by the constant 1-form.
  for (int L : {3, 8, 16}) {
    const Eigen::MatrixXd phi = dipole_matrix(Lattice(1, L));
    const Eigen::MatrixXd want =
        Eigen::MatrixXd::Identity(2 * L, 2 * L) - Eigen::MatrixXd::Constant(2 * L, 2 * L, 1.0 / (2 * L));
    EXPECT_LT((phi - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Phi, OneDimensionalDeviationShrinksAsOneOverTwoL) {
  const int L = 1024;
  EXPECT_NEAR(dipole_phi(L, 1, 7, 7), 1.0 - 1.0 / (2 * L), 1e-9);
  EXPECT_NEAR(dipole_phi(L, 1, 7, 900), -1.0 / (2 * L), 1e-9);
  EXPECT_LT(std::abs(dipole_phi(L, 1, 7, 900)), 1e-3);
}

TEST(PhiInfinite, OneDimensionIsIdentity) {
  EXPECT_NEAR(dipole_phi_infinite(1, {0}, 0, 0), 1.0, 1e-9);
  for (int z : {1, 2, 5, -3}) EXPECT_NEAR(dipole_phi_infinite(1, {z}, 0, 0), 0.0, 1e-9);
}

TEST(PhiInfinite, TwoDimensionalDiagonalIsHalf) {
  // Lattice symmetry: Phi(0)_{00} + Phi(0)_{11} = 1 and the two are equal.
  EXPECT_NEAR(dipole_phi_infinite(2, {0, 0}, 0, 0), 0.5, 1e-8);
  EXPECT_NEAR(dipole_phi_infinite(2, {0, 0}, 1, 1), 0.5, 1e-8);
}

TEST(PhiInfinite, SymmetryUnderReflection) {
  const double a = dipole_phi_infinite(2, {2, 1}, 0, 1);
  const double b = dipole_phi_infinite(2, {-2, -1}, 1, 0);
  EXPECT_NEAR(a, b, 1e-9);
  EXPECT_NEAR(dipole_phi_infinite(2, {3, 0}, 0, 0), dipole_phi_infinite(2, {0, 3}, 1, 1), 1e-9);
}

TEST(PhiInfinite, FiniteVolumeConvergesAtCentre) {
  const Lattice lat(2, 12);
  const std::size_t b = lat.bond_index(0, Point{0, 0}), c = lat.bond_index(0, Point{2, 0});
  EXPECT_NEAR(dipole_phi(lat, b, c), dipole_phi_infinite(2, {-2, 0}, 0, 0), 5e-3);
  EXPECT_NEAR(dipole_phi(lat, b, b), 0.5, 5e-3);
}

TEST(PhiInfinite, ArgumentChecks) {
  EXPECT_THROW(dipole_phi_infinite(0, {}, 0, 0), ParameterDomainError);
  EXPECT_THROW(dipole_phi_infinite(2, {1}, 0, 0), ShapeError);
  EXPECT_THROW(dipole_phi_infinite(2, {1, 0}, 2, 0), ShapeError);
}

TEST(Quadrature, GaussLegendreExactForPolynomials) {
  const auto r = detail::gauss_legendre(6);
  for (int k = 0; k <= 11; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], k);
    EXPECT_NEAR(s, k % 2 ? 0.0 : 2.0 / (k + 1), 1e-14) << k;
  }
  const auto c = detail::composite_rule(8, 10, 0.3);
  double area = 0, sine = 0;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) area += c.weights[i], sine += c.weights[i] * std::sin(c.nodes[i]);
  EXPECT_NEAR(area, M_PI, 1e-13);
  EXPECT_NEAR(sine, 2.0, 1e-13);
  EXPECT_THROW(detail::gauss_legendre(1), ParameterDomainError);
}

TEST(Dmatrix, IdentityWithWeightedLaplacian) {
  // -Delta_w = wbar S (I - D) S with S = (-Delta_L)^(1/2).
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Environment env = sample_environment(perturbed(2, 4, 0.3, seed));
    const double wbar = 1.5;
    const auto n = static_cast<Eigen::Index>(env.lattice().site_count());
    const Eigen::MatrixXd s = dense_homogeneous_function(4, 2, [](double mu) { return std::sqrt(mu); });
    const Eigen::MatrixXd rhs = wbar * s * (Eigen::MatrixXd::Identity(n, n) - d_matrix(env, wbar)) * s;
    EXPECT_LT((-build_delta(env).dense() - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Dmatrix, NormBoundedByDelta) {
  for (double delta : {0.05, 0.2, 0.45})
    for (auto [d, L] : {std::pair{1, 16}, std::pair{2, 6}}) {
      const Environment env = sample_environment(perturbed(d, L, delta, 3));
      const Eigen::MatrixXd dm = d_matrix(env, 1.5);
      const double norm = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(dm, Eigen::EigenvaluesOnly)
                              .eigenvalues().cwiseAbs().maxCoeff();
      EXPECT_LE(norm, delta + 1e-12);
    }
}

TEST(Dmatrix, MatrixFreeApplicationAndSquareRoots) {
  const Environment env = sample_environment(perturbed(2, 5, 0.3, 4));
  const auto n = static_cast<Eigen::Index>(env.lattice().site_count());
  const auto v = random_vector(n, 8);
  EXPECT_LT((apply_d(env, 1.5, v) - d_matrix(env, 1.5) * v).cwiseAbs().maxCoeff(), 1e-12);
  const auto ss = sqrt_homogeneous(sqrt_homogeneous(v, 5, 2), 5, 2);
  EXPECT_LT((ss + build_unit_delta(env.lattice()).apply(v)).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_LT((inv_sqrt_homogeneous(sqrt_homogeneous(v, 5, 2), 5, 2) - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dmatrix, NeumannSeriesConvergesGeometrically) {
  const Environment env = sample_environment(perturbed(1, 12, 0.3, 5));
  const auto n = static_cast<Eigen::Index>(env.lattice().site_count());
  const auto v = random_vector(n, 2);
  const Eigen::MatrixXd dm = d_matrix(env, 1.5);
  const Eigen::VectorXd exact = (Eigen::MatrixXd::Identity(n, n) - dm).lu().solve(v);
  double prev = 1e300;
  for (int k = 0; k <= 12; k += 3) {
    const double err = (neumann_partial_sum(env, 1.5, k, v) - exact).norm();
    EXPECT_LE(err, std::pow(0.3, k + 1) / 0.7 * v.norm() + 1e-12);
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_THROW(neumann_partial_sum(env, 1.5, -1, v), ParameterDomainError);
  EXPECT_THROW(neumann_partial_sum(env, 1.5, 1, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST(Bounds, SchwarzMarginNonNegative) {
  for (int d : {1, 2}) {
    const SchwarzReport r = schwarz_bound_check(perturbed(d, d == 1 ? 8 : 4, 0.3), 40, 20, 1);
    EXPECT_EQ(r.margins.size(), 20u);
    EXPECT_GE(r.worst_margin, -1e-8);
    EXPECT_DOUBLE_EQ(r.wbar, 1.5);
  }
  EXPECT_THROW(schwarz_bound_check(perturbed(1, 4, 0.1), 0, 1), ParameterDomainError);
}

TEST(Bounds, ThetaPositiveAndKappaConsistent) {
  const ThetaReport r = theta_estimate(perturbed(1, 10, 0.2), 200);
  EXPECT_GE(r.min_eigenvalue, -3 * r.min_eigenvalue_sigma);
  EXPECT_EQ(r.batches, 20u);
  EXPECT_LE(r.wbar * (1 - r.rho_hat), r.kappa_hat + 3 * r.kappa_sigma);
  EXPECT_NEAR(r.kappa_hat, r.harmonic_kappa, 0.05 * r.harmonic_kappa);
}

TEST(Bounds, NeumannOrderApproachesExactTheta) {
  const auto spec = perturbed(1, 8, 0.2);
  const ThetaReport exact = theta_estimate(spec, 50);
  const ThetaReport trunc = theta_estimate(spec, 50, 12);
  EXPECT_LT((exact.theta - trunc.theta).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(theta_estimate(spec, 10, -1), ParameterDomainError);
}

TEST(Bounds, HomogeneousThetaVanishes) {
  EnvironmentSpec s;
  s.family = family::Constant{2.0};
  s.half_size = 6;
  const ThetaReport r = theta_estimate(s, 3);
  EXPECT_LT(r.theta.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(r.kappa_hat, 2.0, 1e-10);
  EXPECT_TRUE(to_json(r).contains("kappa_hat"));
}

TEST(Caps, DenseOperatorsRefuseLargeLattices) {
  EXPECT_THROW(dipole_matrix(Lattice(2, 40)), CapExceededError);
  EXPECT_THROW(d_matrix(sample_environment(perturbed(1, 3000, 0.1)), 1.5), CapExceededError);
}
