#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "cone_breaker/sectorfem.hpp"
#include "oracles.hpp"

using namespace cone_breaker;
using std::numbers::pi;

namespace {

const DerivedExponents& planar() {
  static const DerivedExponents d = derive_exponents(2, 1.5, 0.9);
  return d;
}

std::vector<double> random_field(const SectorMesh& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.2);
  std::vector<double> v(m.node_count());
  for (auto& x : v) {
    x = u(rng);
  }
  return v;
}

DiscreteField affine_field(const SectorMesh& m, double a, double b, double c) {
  DiscreteField f{m, std::vector<double>(m.node_count())};
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      f.at(i, j) = a + b * m.rho(i) + c * m.phi(j);
    }
  }
  return f;
}

}  // namespace

// Directional derivatives along a random direction, central differences.
TEST(SectorFem, GradientsMatchFiniteDifferencesOnRandomFields) {
  std::mt19937_64 rng(2024);
  const auto mesh = make_sector_mesh(5.0, 6.0, 16, 12);
  const auto ev = assemble(mesh, planar(), 1e-8);
  const double h = 1e-6;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = random_field(mesh, rng);
    std::vector<double> dir(u.size());
    for (auto& x : dir) {
      x = nd(rng);
    }
    const auto e = ev.evaluate(u, true);
    std::vector<double> up(u), um(u);
    for (std::size_t k = 0; k < u.size(); ++k) {
      up[k] += h * dir[k];
      um[k] -= h * dir[k];
    }
    const auto ep = ev.evaluate(up, false);
    const auto em = ev.evaluate(um, false);
    double dE = 0.0;
    double dM = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      dE += e.grad_E[k] * dir[k];
      dM += e.grad_M[k] * dir[k];
    }
    const double fdE = (ep.E - em.E) / (2 * h);
    const double fdM = (ep.M - em.M) / (2 * h);
    EXPECT_LT(std::abs(dE - fdE) / std::abs(fdE), 1e-5) << "trial " << trial;
    EXPECT_LT(std::abs(dM - fdM) / std::abs(fdM), 1e-5) << "trial " << trial;
  }
}

TEST(SectorFem, HessianMatchesGradientDifferences) {
  std::mt19937_64 rng(7);
  const auto mesh = make_sector_mesh(4.0, 5.0, 12, 10);
  const auto ev = assemble(mesh, planar(), 1e-8);
  const auto u = random_field(mesh, rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd dir(static_cast<Eigen::Index>(u.size()));
  for (Eigen::Index k = 0; k < dir.size(); ++k) {
    dir[k] = nd(rng);
  }
  const auto H = ev.energy_hessian(u);
  const Eigen::VectorXd Hd = H * dir;
  const double h = 1e-6;
  std::vector<double> up(u), um(u);
  for (std::size_t k = 0; k < u.size(); ++k) {
    up[k] += h * dir[static_cast<Eigen::Index>(k)];
    um[k] -= h * dir[static_cast<Eigen::Index>(k)];
  }
  const auto gp = ev.evaluate(up, true).grad_E;
  const auto gm = ev.evaluate(um, true).grad_E;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double fd = (gp[k] - gm[k]) / (2 * h);
    num += (fd - Hd[static_cast<Eigen::Index>(k)]) * (fd - Hd[static_cast<Eigen::Index>(k)]);
    den += fd * fd;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-5);
  // the diagonal reported by evaluate() is the Hessian diagonal
  const auto diag = ev.evaluate(u, true, true).hess_diag_E;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double hk = H.coeff(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    EXPECT_NEAR(diag[k], hk, 1e-10 * std::abs(hk) + 1e-14);
  }
}

TEST(SectorFem, AffineFieldsConvergeToExactIntegrals) {
  const auto& d = planar();
  const double p = d.params.p;
  const double theta0 = 5.0;
  const double L = 6.0;
  const double b = 0.3;
  const double c = -0.7;
  const double exact = oracle::affine_energy(b, c, 0.0, p, L, theta0);
  double prev_err = 0.0;
  for (int N : {16, 32, 64}) {
    const auto mesh = make_sector_mesh(theta0, L, N, N / 2);
    const auto ev = assemble(mesh, d, 0.0);
    const double E = ev.evaluate(affine_field(mesh, 1.0, b, c).values, false).E;
    const double err = std::abs(E - exact) / exact;
    EXPECT_LT(err, 0.05);
    if (prev_err > 0.0) {
      // midpoint weights: second order in h_rho
      EXPECT_NEAR(prev_err / err, 4.0, 0.2);
    }
    prev_err = err;
  }
}

TEST(SectorFem, ConstantFieldHasOnlyRegularizationEnergy) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 6.0, 32, 16);
  const auto one = affine_field(mesh, 1.0, 0.0, 0.0);
  EXPECT_EQ(assemble(mesh, d, 0.0).evaluate(one.values, false).E, 0.0);
  const double eps = 1e-8;
  const auto e = assemble(mesh, d, eps).evaluate(one.values, false);
  EXPECT_NEAR(e.E, std::pow(eps, d.params.p) * oracle::affine_energy(0, 0, 1.0, d.params.p, 6.0, 5.0),
              1e-2 * std::pow(eps, d.params.p) * oracle::affine_energy(0, 0, 1.0, d.params.p, 6.0, 5.0));
  const double M = oracle::unit_mass(d.params.sigma, d.q, 6.0, 5.0);
  EXPECT_GT(e.M, 0.0);
  EXPECT_NEAR(e.M, M, 0.05 * M);
}

TEST(SectorFem, QuotientHomogeneousWithoutRegularization) {
  std::mt19937_64 rng(99);
  const auto mesh = make_sector_mesh(5.0, 6.0, 24, 12);
  const auto ev = assemble(mesh, planar(), 0.0);
  auto u = random_field(mesh, rng);
  apply_outer_dirichlet(mesh, u);
  const double Q1 = quotient_h(u, ev);
  for (auto& x : u) {
    x *= 2.0;
  }
  EXPECT_NEAR(quotient_h(u, ev), Q1, 1e-6 * Q1);
}

TEST(SectorFem, RadialInterpolantMatchesContinuumQuotient) {
  const auto& d = planar();
  const auto prof = make_profile(d);
  const double Qc = quotient_radial(d, radial_integrals(prof), 5.0);
  const auto coarse = make_sector_mesh(5.0, 8.0, 64, 32);
  const auto fine = make_sector_mesh(5.0, 8.0, 128, 64);
  const double Qa = quotient_h(radial_reference(coarse, prof).values, assemble(coarse, d, 1e-8));
  const double Qb = quotient_h(radial_reference(fine, prof).values, assemble(fine, d, 1e-8));
  EXPECT_LT(std::abs(Qb - Qc) / Qc, 0.02);
  EXPECT_LT(std::abs(Qb - Qc), std::abs(Qa - Qc));
  EXPECT_GE(Qb, Qc * (1.0 - 0.02));
}

TEST(SectorFem, RadialTranslationBarelyChangesQuotient) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 128, 16);
  const auto ev = assemble(mesh, d, 1e-8);
  const double Q0 = quotient_h(radial_reference(mesh, make_profile(d, 1.0)).values, ev);
  for (double s : {-0.5, 0.5}) {
    // U_a(r) is U(a r): a = e^s shifts the profile by -s in rho
    const double Qs = quotient_h(radial_reference(mesh, make_profile(d, std::exp(s))).values, ev);
    EXPECT_LT(std::abs(Qs - Q0) / Q0, 0.01);
  }
}

TEST(SectorFem, AsymmetryOfRadialFields) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 32, 16);
  const auto ev = assemble(mesh, d, 1e-8);
  const auto rad = radial_reference(mesh, make_profile(d));
  EXPECT_LT(asymmetry(rad.values, ev), 1e-14);
  for (int i = 0; i < mesh.rows(); ++i) {
    EXPECT_EQ(rad.at(i, 0), rad.at(i, mesh.Nphi));
  }
  auto pert = perturbed_init(mesh, make_profile(d), 0.1);
  const double a1 = asymmetry(pert.values, ev);
  EXPECT_GT(a1, 0.0);
  for (auto& x : pert.values) {
    x *= 3.0;
  }
  EXPECT_NEAR(asymmetry(pert.values, ev), a1, 1e-13);
}

TEST(SectorFem, FieldCsvRoundTrip) {
  std::mt19937_64 rng(5);
  const auto mesh = make_sector_mesh(4.25, 7.5, 10, 9);
  DiscreteField f{mesh, random_field(mesh, rng)};
  std::stringstream ss;
  write_field_csv(ss, f);
  const auto g = read_field_csv(ss);
  EXPECT_EQ(g.mesh.Nrho, 10);
  EXPECT_EQ(g.mesh.Nphi, 9);
  EXPECT_EQ(g.mesh.theta0, 4.25);
  EXPECT_EQ(g.mesh.L, 7.5);
  EXPECT_EQ(g.values, f.values);
  std::stringstream bad("nonsense\n");
  EXPECT_THROW(read_field_csv(bad), DomainError);
}

TEST(SectorFem, BreaksAboveThresholdOnSmallMesh) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 48, 24);
  MinimizeConfig cfg;
  const auto [field, rep] = run_breaking_experiment(mesh, make_profile(d), cfg);
  EXPECT_TRUE(rep.converged);
  EXPECT_TRUE(rep.radial_converged);
  EXPECT_TRUE(rep.monotone);
  EXPECT_LT(rep.Q_min_h, rep.Q_radial_h * (1.0 - 1e-4));
  EXPECT_GT(rep.asym, 0.01);
  EXPECT_LE(rep.rel_grad, cfg.grad_tol);
}

TEST(SectorFem, RefedMinimizerIsFixedPoint) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 32, 16);
  MinimizeConfig cfg;
  const auto first = run_breaking_experiment(mesh, make_profile(d), cfg);
  const auto again = run_breaking_experiment(mesh, make_profile(d), cfg, {}, &first.first);
  EXPECT_LE(again.second.iterations, 3);
  EXPECT_TRUE(again.second.converged);
  EXPECT_NEAR(again.second.Q_min_h, first.second.Q_min_h, 1e-10 * first.second.Q_min_h);
}

TEST(SectorFem, BelowThresholdStaysRadialOnSmallMesh) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(3.5, 8.0, 32, 16);
  const auto [field, rep] = run_breaking_experiment(mesh, make_profile(d), MinimizeConfig{});
  EXPECT_TRUE(rep.converged);
  EXPECT_LT(rep.asym, 1e-6);
  EXPECT_NEAR(rep.Q_min_h, rep.Q_radial_h, 1e-8 * rep.Q_radial_h);
}

TEST(SectorFem, ContinuationAndJacobiPathsConverge) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 24, 12);
  MinimizeConfig cfg;
  cfg.continuation = {1e-4, 1e-6};
  const auto a = run_breaking_experiment(mesh, make_profile(d), cfg).second;
  EXPECT_TRUE(a.converged);
  cfg.continuation.clear();
  cfg.preconditioner = Preconditioner::Jacobi;
  cfg.max_iter = 20000;
  const auto b = run_breaking_experiment(mesh, make_profile(d), cfg).second;
  EXPECT_TRUE(b.converged);
  EXPECT_NEAR(a.Q_min_h, b.Q_min_h, 1e-6 * a.Q_min_h);
}

TEST(SectorFem, ThreadCountDoesNotChangeResults) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 24, 12);
  MinimizeConfig cfg;
  const auto a = run_breaking_experiment(mesh, make_profile(d), cfg).second;
  cfg.jobs = 4;
  const auto b = run_breaking_experiment(mesh, make_profile(d), cfg).second;
  EXPECT_EQ(a.Q_min_h, b.Q_min_h);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.asym, b.asym);
}

TEST(SectorFem, DomainErrors) {
  const auto mesh = make_sector_mesh(5.0, 8.0, 16, 8);
  EXPECT_THROW(assemble(mesh, derive_exponents(3, 2.0, 0.9), 1e-8), DomainError);
  EXPECT_THROW(assemble(mesh, derive_exponents(2, 1.5, 1.0), 1e-8), DomainError);
  const auto ev = assemble(mesh, derive_exponents(2, 1.5, 1.0), 1e-8, true);
  EXPECT_FALSE(ev.warnings().empty());
  EXPECT_THROW(make_sector_mesh(2 * pi, 8.0, 16, 8), DomainError);
  EXPECT_THROW(make_sector_mesh(5.0, 2.0, 16, 8), DomainError);
  EXPECT_THROW(make_sector_mesh(5.0, 8.0, 4, 8), DomainError);
  const auto zero = affine_field(mesh, 0.0, 0.0, 0.0);
  EXPECT_THROW(quotient_h(zero.values, assemble(mesh, derive_exponents(2, 1.5, 0.9), 1e-8)), DomainError);
  MinimizeConfig bad;
  bad.grad_tol = 0.0;
  EXPECT_THROW(check_config(bad), DomainError);
}

TEST(SectorFem, IterationBudgetRaisesNoConvergence) {
  const auto& d = planar();
  const auto mesh = make_sector_mesh(5.0, 8.0, 24, 12);
  const auto ev = assemble(mesh, d, 1e-8);
  MinimizeConfig cfg;
  cfg.max_iter = 2;
  EXPECT_THROW(minimize(perturbed_init(mesh, make_profile(d), 0.05), ev, cfg), NoConvergence);
}
