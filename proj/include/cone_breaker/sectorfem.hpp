#pragma once

// Direct minimization of the Hardy-Sobolev quotient on a planar sector
// {0 < phi < theta0} in log-polar coordinates rho = log r, phi.
//
// With dx = e^{2 rho} drho dphi and |grad u|^2 = e^{-2 rho}(u_rho^2 + u_phi^2):
//   E(u) = int e^{(2-p) rho} (u_rho^2 + u_phi^2 + eps^2)^{p/2} drho dphi
//   M(u) = int e^{((sigma-1) q + 2) rho} |u|^q drho dphi
//   Q(u) = E(u) / M(u)^{p/q}
// on the rectangle [-L, L] x [0, theta0]. The sector sides carry natural
// (Neumann) conditions. The two radial ends are closed conformingly, so every
// discrete field is an admissible function on the whole cone:
//   rho > L:  u = 0 (the outer row is held at zero);
//   rho < -L: u(rho, phi) = u(-L, phi), whose energy and mass are added in
//             closed form: e^{-(2-p)L}/(2-p) int (u_phi^2 + eps^2)^{p/2} dphi
//             and e^{-kL}/k int |u|^q dphi with k = (sigma-1)q + 2.
// Free Neumann ends are not used: fields constant near rho = L, or
// concentrating against rho = -L, then reach quotients below the cone's
// infimum. Bilinear elements, one midpoint quadrature point per cell.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/parallel.hpp"
#include "cone_breaker/params.hpp"
#include "cone_breaker/radial.hpp"
#include "cone_breaker/secondvar.hpp"

namespace cone_breaker {

struct SectorMesh {
  double theta0 = 5.0;
  double L = 8.0;
  int Nrho = 128;  ///< cells in rho; nodes are Nrho + 1
  int Nphi = 64;   ///< cells in phi

  int rows() const { return Nrho + 1; }
  int cols() const { return Nphi + 1; }
  std::size_t node_count() const { return static_cast<std::size_t>(rows()) * static_cast<std::size_t>(cols()); }
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(j);
  }
  double h_rho() const { return 2.0 * L / Nrho; }
  double h_phi() const { return theta0 / Nphi; }
  double rho(int i) const { return -L + i * h_rho(); }
  double phi(int j) const { return j * h_phi(); }
};

inline SectorMesh make_sector_mesh(double theta0, double L, int Nrho, int Nphi) {
  if (!(theta0 > 0.0 && theta0 < 2.0 * std::numbers::pi)) {
    throw DomainError("sector angle must lie in (0, 2 pi)");
  }
  if (!(L >= 4.0)) {
    throw DomainError("log-radius half-width L must be >= 4");
  }
  if (Nrho < 8 || Nphi < 8) {
    throw DomainError("sector mesh needs at least 8 cells in each direction");
  }
  return SectorMesh{theta0, L, Nrho, Nphi};
}

/// Nodal values on a SectorMesh, row-major with rho rows.
struct DiscreteField {
  SectorMesh mesh;
  std::vector<double> values;

  double& at(int i, int j) { return values[mesh.index(i, j)]; }
  double at(int i, int j) const { return values[mesh.index(i, j)]; }
};

enum class Preconditioner { EnergyHessian, Jacobi };

struct MinimizeConfig {
  double eps_reg = 1e-8;
  int max_iter = 5000;
  double grad_tol = 1e-8;        ///< on |grad Q|_{P^-1} |u|_P / Q, P the Jacobi preconditioner
  double init_perturb = 0.05;    ///< delta in radial + delta f(r) cos(pi phi / theta0)
  double backtrack = 0.5;
  double sufficient_decrease = 1e-4;
  std::vector<double> continuation;  ///< optional eps_reg stages run before eps_reg
  int lbfgs_memory = 12;
  Preconditioner preconditioner = Preconditioner::EnergyHessian;
  bool allow_sigma1 = false;
  int jobs = 1;
};

inline void check_config(const MinimizeConfig& c) {
  if (!(c.eps_reg > 0.0) || c.max_iter <= 0 || c.lbfgs_memory <= 0 || !(c.grad_tol > 0.0) || !(c.init_perturb > 0.0) ||
      !(c.backtrack > 0.0 && c.backtrack < 1.0) || !(c.sufficient_decrease > 0.0 && c.sufficient_decrease < 1.0)) {
    throw DomainError("invalid minimization configuration");
  }
  for (double e : c.continuation) {
    if (!(e > 0.0)) {
      throw DomainError("continuation stages must be positive");
    }
  }
}

/// Energy, mass and (optionally) their nodal gradients and the diagonal of
/// the energy Hessian at one field.
struct SectorEvaluation {
  double E = 0.0;
  double M = 0.0;
  std::vector<double> grad_E;
  std::vector<double> grad_M;
  std::vector<double> hess_diag_E;
};

class SectorEvaluator {
 public:
  SectorEvaluator(const SectorMesh& mesh, const DerivedExponents& d, double eps_reg, int jobs = 1)
      : mesh_(mesh), d_(d), eps_(eps_reg), jobs_(jobs) {
    const double p = d.params.p;
    const double mass_exp = (d.params.sigma - 1.0) * d.q + 2.0;
    const double area = mesh.h_rho() * mesh.h_phi();
    wE_.resize(static_cast<std::size_t>(mesh.Nrho));
    wM_.resize(static_cast<std::size_t>(mesh.Nrho));
    for (int i = 0; i < mesh.Nrho; ++i) {
      const double rm = mesh.rho(i) + 0.5 * mesh.h_rho();
      wE_[static_cast<std::size_t>(i)] = std::exp((2.0 - p) * rm) * area;
      wM_[static_cast<std::size_t>(i)] = std::exp(mass_exp * rm) * area;
    }
    cE_inner_ = std::exp(-(2.0 - p) * mesh.L) / (2.0 - p) * mesh.h_phi();
    cM_inner_ = std::exp(-mass_exp * mesh.L) / mass_exp * mesh.h_phi();
  }

  const SectorMesh& mesh() const { return mesh_; }
  const DerivedExponents& derived() const { return d_; }
  double eps_reg() const { return eps_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  SectorEvaluation evaluate(std::span<const double> u, bool with_grad, bool with_hess = false) const {
    const int R = mesh_.Nrho;
    const int C = mesh_.Nphi;
    const std::size_t cols = static_cast<std::size_t>(mesh_.cols());
    if (u.size() != mesh_.node_count()) {
      throw DomainError("field size does not match the mesh");
    }
    const double p = d_.params.p;
    const double q = d_.q;
    const double hr = mesh_.h_rho();
    const double hp = mesh_.h_phi();
    const double eps2 = eps_ * eps_;
    const double a2 = 0.25 / (hr * hr) + 0.25 / (hp * hp);

    // Per cell row: energy/mass sums and contributions to node rows i and i+1.
    std::vector<double> rowE(static_cast<std::size_t>(R), 0.0);
    std::vector<double> rowM(static_cast<std::size_t>(R), 0.0);
    const std::size_t nbuf = with_grad ? 2 * cols : 0;
    std::vector<std::vector<double>> bufE(static_cast<std::size_t>(R)), bufM(static_cast<std::size_t>(R)),
        bufH(static_cast<std::size_t>(R));

    parallel_for(static_cast<std::size_t>(R), jobs_, [&](std::size_t ii) {
      const int i = static_cast<int>(ii);
      const double wE = wE_[ii];
      const double wM = wM_[ii];
      double sE = 0.0;
      double sM = 0.0;
      std::vector<double>& gE = bufE[ii];
      std::vector<double>& gM = bufM[ii];
      std::vector<double>& hE = bufH[ii];
      if (with_grad) {
        gE.assign(nbuf, 0.0);
        gM.assign(nbuf, 0.0);
        if (with_hess) {
          hE.assign(nbuf, 0.0);
        }
      }
      const double* lo = u.data() + static_cast<std::size_t>(i) * cols;
      const double* hi = lo + cols;
      for (int j = 0; j < C; ++j) {
        const double a = lo[j];
        const double b = hi[j];
        const double c = lo[j + 1];
        const double dd = hi[j + 1];
        const double ur = (b + dd - a - c) / (2.0 * hr);
        const double up = (c + dd - a - b) / (2.0 * hp);
        const double um = 0.25 * (a + b + c + dd);
        const double s2 = ur * ur + up * up + eps2;
        const double sp = std::pow(s2, 0.5 * p);
        const double aum = std::abs(um);
        const double mq = std::pow(aum, q);
        sE += wE * sp;
        sM += wM * mq;
        if (!with_grad) {
          continue;
        }
        // dE/du_rho, dE/du_phi
        const double k = (s2 > 0.0) ? wE * p * sp / s2 : 0.0;
        const double er = k * ur / (2.0 * hr);
        const double ep = k * up / (2.0 * hp);
        const std::size_t ja = static_cast<std::size_t>(j);
        const std::size_t jb = ja + cols;  // node (i+1, j) in the lower half of the buffer
        gE[ja] += -er - ep;
        gE[jb] += er - ep;
        gE[ja + 1] += -er + ep;
        gE[jb + 1] += er + ep;
        const double m1 = (aum > 0.0) ? 0.25 * wM * q * mq / um : 0.0;
        gM[ja] += m1;
        gM[jb] += m1;
        gM[ja + 1] += m1;
        gM[jb + 1] += m1;
        if (with_hess && s2 > 0.0) {
          const double base = wE * p * sp / s2;
          const double t = (p - 2.0) / s2;
          const double ga = (-ur / (2.0 * hr)) + (-up / (2.0 * hp));
          const double gb = (ur / (2.0 * hr)) + (-up / (2.0 * hp));
          const double gc = (-ur / (2.0 * hr)) + (up / (2.0 * hp));
          const double gd = (ur / (2.0 * hr)) + (up / (2.0 * hp));
          hE[ja] += base * (a2 + t * ga * ga);
          hE[jb] += base * (a2 + t * gb * gb);
          hE[ja + 1] += base * (a2 + t * gc * gc);
          hE[jb + 1] += base * (a2 + t * gd * gd);
        }
      }
      rowE[ii] = sE;
      rowM[ii] = sM;
    });

    SectorEvaluation ev;
    for (int i = 0; i < R; ++i) {
      ev.E += rowE[static_cast<std::size_t>(i)];
      ev.M += rowM[static_cast<std::size_t>(i)];
    }
    if (with_grad) {
      ev.grad_E.assign(u.size(), 0.0);
      ev.grad_M.assign(u.size(), 0.0);
      if (with_hess) {
        ev.hess_diag_E.assign(u.size(), 0.0);
      }
      for (int i = 0; i < R; ++i) {
        const std::size_t top = static_cast<std::size_t>(i) * cols;
        const std::size_t bot = top + cols;
        const auto& gE = bufE[static_cast<std::size_t>(i)];
        const auto& gM = bufM[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < cols; ++j) {
          ev.grad_E[top + j] += gE[j];
          ev.grad_E[bot + j] += gE[cols + j];
          ev.grad_M[top + j] += gM[j];
          ev.grad_M[bot + j] += gM[cols + j];
        }
        if (with_hess) {
          const auto& hE = bufH[static_cast<std::size_t>(i)];
          for (std::size_t j = 0; j < cols; ++j) {
            ev.hess_diag_E[top + j] += hE[j];
            ev.hess_diag_E[bot + j] += hE[cols + j];
          }
        }
      }
    }
    add_inner_closure(u, ev, with_grad, with_hess);
    return ev;
  }

  // Contribution of the constant-in-rho extension below rho = -L (node row 0).
  void add_inner_closure(std::span<const double> u, SectorEvaluation& ev, bool with_grad, bool with_hess) const {
    const double p = d_.params.p;
    const double q = d_.q;
    const double hp = mesh_.h_phi();
    const double eps2 = eps_ * eps_;
    for (int j = 0; j < mesh_.Nphi; ++j) {
      const double a = u[static_cast<std::size_t>(j)];
      const double c = u[static_cast<std::size_t>(j + 1)];
      const double up = (c - a) / hp;
      const double um = 0.5 * (a + c);
      const double s2 = up * up + eps2;
      const double sp = std::pow(s2, 0.5 * p);
      const double aum = std::abs(um);
      const double mq = std::pow(aum, q);
      ev.E += cE_inner_ * sp;
      ev.M += cM_inner_ * mq;
      if (!with_grad) {
        continue;
      }
      const double k = (s2 > 0.0) ? cE_inner_ * p * sp / s2 : 0.0;
      const std::size_t ja = static_cast<std::size_t>(j);
      ev.grad_E[ja] -= k * up / hp;
      ev.grad_E[ja + 1] += k * up / hp;
      const double m1 = (aum > 0.0) ? 0.5 * cM_inner_ * q * mq / um : 0.0;
      ev.grad_M[ja] += m1;
      ev.grad_M[ja + 1] += m1;
      if (with_hess && s2 > 0.0) {
        const double h = k * (1.0 + (p - 2.0) * up * up / s2) / (hp * hp);
        ev.hess_diag_E[ja] += h;
        ev.hess_diag_E[ja + 1] += h;
      }
    }
  }

  /// Full (sparse, 9-point) Hessian of E at u. Positive semidefinite for
  /// p >= 1; the checkerboard mode (-1)^{i+j} is in its null space.
  Eigen::SparseMatrix<double> energy_hessian(std::span<const double> u) const {
    const double p = d_.params.p;
    const double hr = mesh_.h_rho();
    const double hp = mesh_.h_phi();
    const double eps2 = eps_ * eps_;
    const std::size_t cols = static_cast<std::size_t>(mesh_.cols());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(mesh_.Nrho) * static_cast<std::size_t>(mesh_.Nphi) * 16 +
                 4 * cols);
    const double ar[4] = {-0.5 / hr, 0.5 / hr, -0.5 / hr, 0.5 / hr};  // nodes a, b, c, d
    const double ap[4] = {-0.5 / hp, -0.5 / hp, 0.5 / hp, 0.5 / hp};
    for (int i = 0; i < mesh_.Nrho; ++i) {
      const double wE = wE_[static_cast<std::size_t>(i)];
      for (int j = 0; j < mesh_.Nphi; ++j) {
        const std::size_t idx[4] = {mesh_.index(i, j), mesh_.index(i + 1, j), mesh_.index(i, j + 1),
                                    mesh_.index(i + 1, j + 1)};
        double ur = 0.0;
        double up = 0.0;
        for (int k = 0; k < 4; ++k) {
          ur += ar[k] * u[idx[k]];
          up += ap[k] * u[idx[k]];
        }
        const double s2 = ur * ur + up * up + eps2;
        if (!(s2 > 0.0)) {
          continue;
        }
        const double base = wE * p * std::pow(s2, 0.5 * p - 1.0);
        const double t = (p - 2.0) / s2;
        double v[4];
        for (int k = 0; k < 4; ++k) {
          v[k] = ur * ar[k] + up * ap[k];
        }
        for (int a = 0; a < 4; ++a) {
          for (int b = 0; b < 4; ++b) {
            trip.emplace_back(static_cast<int>(idx[a]), static_cast<int>(idx[b]),
                              base * (ar[a] * ar[b] + ap[a] * ap[b] + t * v[a] * v[b]));
          }
        }
      }
    }
    for (int j = 0; j < mesh_.Nphi; ++j) {
      const double up = (u[static_cast<std::size_t>(j + 1)] - u[static_cast<std::size_t>(j)]) / hp;
      const double s2 = up * up + eps2;
      if (!(s2 > 0.0)) {
        continue;
      }
      const double h = cE_inner_ * p * std::pow(s2, 0.5 * p - 1.0) * (1.0 + (p - 2.0) * up * up / s2) / (hp * hp);
      trip.emplace_back(j, j, h);
      trip.emplace_back(j + 1, j + 1, h);
      trip.emplace_back(j, j + 1, -h);
      trip.emplace_back(j + 1, j, -h);
    }
    const int n = static_cast<int>(mesh_.node_count());
    Eigen::SparseMatrix<double> H(n, n);
    H.setFromTriplets(trip.begin(), trip.end());
    return H;
  }

  double energy(std::span<const double> u) const { return evaluate(u, false).E; }
  double mass(std::span<const double> u) const { return evaluate(u, false).M; }

  /// Row weights of the discrete mass-weighted L2 norm: e^{((sigma-1)q+2) rho_i}
  /// times trapezoid weights in rho.
  std::vector<double> mass_row_weights() const {
    const double mass_exp = (d_.params.sigma - 1.0) * d_.q + 2.0;
    std::vector<double> w(static_cast<std::size_t>(mesh_.rows()));
    for (int i = 0; i < mesh_.rows(); ++i) {
      const double tw = (i == 0 || i == mesh_.Nrho) ? 0.5 : 1.0;
      w[static_cast<std::size_t>(i)] = tw * mesh_.h_rho() * std::exp(mass_exp * mesh_.rho(i));
    }
    return w;
  }

 private:
  SectorMesh mesh_;
  DerivedExponents d_;
  double eps_;
  int jobs_;
  std::vector<double> wE_;
  std::vector<double> wM_;
  double cE_inner_ = 0.0;
  double cM_inner_ = 0.0;
  std::vector<std::string> warnings_;
};

/// Build the discrete energy/mass evaluators. n must be 2; sigma = 1 needs
/// an explicit override and records a warning on the evaluator.
inline SectorEvaluator assemble(const SectorMesh& mesh, const DerivedExponents& d, double eps_reg,
                                bool allow_sigma1 = false, int jobs = 1) {
  if (d.params.n != 2) {
    throw DomainError("sector minimization is implemented for n = 2 only");
  }
  if (!(eps_reg >= 0.0)) {
    throw DomainError("gradient regularization must be >= 0");
  }
  if (d.params.sigma == 1.0 && !allow_sigma1) {
    throw DomainError("sigma = 1 on a sector needs the explicit sigma-1 override (attainability not covered)");
  }
  SectorEvaluator ev(mesh, d, eps_reg, jobs);
  if (d.params.sigma == 1.0) {
    ev.add_warning("sigma = 1 on a planar sector: attainability of the minimum is not guaranteed");
  }
  return ev;
}

/// Q_h = E / M^{p/q}.
inline double quotient_h(std::span<const double> u, const SectorEvaluator& ev) {
  const auto e = ev.evaluate(u, false);
  if (!(e.M > 0.0)) {
    throw DomainError("discrete mass vanishes; quotient undefined");
  }
  return e.E / std::pow(e.M, ev.derived().params.p / ev.derived().q);
}

/// Zero the outer (rho = L) row, the only constrained nodes.
inline void apply_outer_dirichlet(const SectorMesh& mesh, std::span<double> u) {
  for (int j = 0; j < mesh.cols(); ++j) {
    u[mesh.index(mesh.Nrho, j)] = 0.0;
  }
}

/// Nodal interpolant of U(e^rho), constant in phi, cut to zero on the outer row.
inline DiscreteField radial_reference(const SectorMesh& mesh, const RadialProfile& prof) {
  DiscreteField f{mesh, std::vector<double>(mesh.node_count())};
  for (int i = 0; i < mesh.rows(); ++i) {
    const double val = (i == mesh.Nrho) ? 0.0 : u_derivs(prof, std::exp(mesh.rho(i))).w;
    for (int j = 0; j < mesh.cols(); ++j) {
      f.at(i, j) = val;
    }
  }
  return f;
}

/// radial + delta f(e^rho) cos(pi phi / theta0): the radial profile pushed
/// along the direction h = f g with g the first Neumann mode of the arc.
inline DiscreteField perturbed_init(const SectorMesh& mesh, const RadialProfile& prof, double delta) {
  DiscreteField f = radial_reference(mesh, prof);
  for (int i = 0; i < mesh.rows(); ++i) {
    const double fr = (i == mesh.Nrho) ? 0.0 : f_derivs(std::exp(mesh.rho(i)), prof).f;
    for (int j = 0; j < mesh.cols(); ++j) {
      f.at(i, j) += delta * fr * std::cos(std::numbers::pi * mesh.phi(j) / mesh.theta0);
    }
  }
  return f;
}

/// ||u - ubar|| / ||u|| in the mass-weighted discrete L2 norm, ubar being the
/// angular average of each rho row.
inline double asymmetry(std::span<const double> u, const SectorEvaluator& ev) {
  const auto& mesh = ev.mesh();
  const auto wr = ev.mass_row_weights();
  std::vector<double> wc(static_cast<std::size_t>(mesh.cols()));
  for (int j = 0; j < mesh.cols(); ++j) {
    wc[static_cast<std::size_t>(j)] = ((j == 0 || j == mesh.Nphi) ? 0.5 : 1.0) * mesh.h_phi();
  }
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < mesh.rows(); ++i) {
    double avg = 0.0;
    for (int j = 0; j < mesh.cols(); ++j) {
      avg += wc[static_cast<std::size_t>(j)] * u[mesh.index(i, j)];
    }
    avg /= mesh.theta0;
    double rn = 0.0;
    double rd = 0.0;
    for (int j = 0; j < mesh.cols(); ++j) {
      const double x = u[mesh.index(i, j)];
      rn += wc[static_cast<std::size_t>(j)] * (x - avg) * (x - avg);
      rd += wc[static_cast<std::size_t>(j)] * x * x;
    }
    num += wr[static_cast<std::size_t>(i)] * rn;
    den += wr[static_cast<std::size_t>(i)] * rd;
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

// ---------------------------------------------------------------------------
// Minimization

/// Relative size of rounding noise tolerated in Q by the line search.
inline constexpr double kQuotientNoise = 1e-13;

struct OptimizerOutcome {
  double Q = 0.0;
  double rel_grad = 0.0;
  int iterations = 0;
  bool converged = false;
  bool stalled = false;         ///< line search failed along the preconditioned gradient
  std::vector<double> q_trace;  ///< Q after each accepted step (index 0: start)
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    s += a[k] * b[k];
  }
  return s;
}

// Initial inverse-Hessian guesses for the quasi-Newton iteration. refresh()
// is called at every accepted iterate with the Jacobi diagonal P.
class JacobiModel {
 public:
  void refresh(std::span<const double> /*x*/, std::span<const double> P) { P_.assign(P.begin(), P.end()); }
  void apply(std::span<const double> r, std::span<double> out) const {
    for (std::size_t k = 0; k < r.size(); ++k) {
      out[k] = r[k] / P_[k];
    }
  }
  double quad(std::span<const double> v) const {
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      s += P_[k] * v[k] * v[k];
    }
    return s;
  }

 private:
  std::vector<double> P_;
};

// Sparse symmetric model H, factored by LDL^T; falls back to the diagonal
// when the factorization fails. `build(x)` returns H at x.
template <class Build>
class SparseModel {
 public:
  explicit SparseModel(Build build) : build_(std::move(build)) {}

  void refresh(std::span<const double> x, std::span<const double> P) {
    jacobi_.refresh(x, P);
    H_ = build_(x);
    ldlt_.compute(H_);
    ok_ = ldlt_.info() == Eigen::Success;
  }
  void apply(std::span<const double> r, std::span<double> out) const {
    if (!ok_) {
      jacobi_.apply(r, out);
      return;
    }
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(r.size()));
    Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) = ldlt_.solve(rv);
  }
  double quad(std::span<const double> v) const {
    if (!ok_) {
      return jacobi_.quad(v);
    }
    const Eigen::Map<const Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
    return vv.dot(H_ * vv);
  }

 private:
  Build build_;
  JacobiModel jacobi_;
  Eigen::SparseMatrix<double> H_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool ok_ = false;
};

// Limited-memory BFGS on the unit-mass surface, with `model` as the initial
// inverse Hessian (scaled by the latest curvature pair) and Armijo
// backtracking. Every trial point is rescaled to unit mass before it is
// evaluated.
//   value_grad(x, g, P) -> Q at x (unit mass), g = gradient of the
//                          scale-normalized quotient, P = Jacobi diagonal > 0
//   value(x)            -> Q at x
//   rescale(x)          -> puts x on the unit-mass surface, returns the factor
// Stationarity is measured by |g|_{P^-1} |x|_P / Q, which is dimensionless and
// invariant under x -> c x.
template <class ValueGrad, class Value, class Rescale, class Model>
OptimizerOutcome lbfgs_unit_mass(std::vector<double>& x, ValueGrad&& value_grad, Value&& value, Rescale&& rescale,
                                 Model& model, const MinimizeConfig& cfg) {
  const std::size_t N = x.size();
  const std::size_t memory = static_cast<std::size_t>(cfg.lbfgs_memory);
  std::vector<double> g(N), P(N), d(N), r(N), xt(N), g_old(N), gt(N), Pt(N), alpha(memory);
  std::vector<std::vector<double>> S, Y;
  std::vector<double> rho_hist;
  OptimizerOutcome out;

  auto rel_grad = [&](double q) {
    double gPg = 0.0;
    double xPx = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      gPg += g[k] * g[k] / P[k];
      xPx += x[k] * x[k] * P[k];
    }
    return std::sqrt(gPg * xPx) / std::abs(q);
  };
  auto reset = [&] {
    S.clear();
    Y.clear();
    rho_hist.clear();
  };

  rescale(x);
  double Q = value_grad(x, g, P);
  model.refresh(x, P);
  out.q_trace.push_back(Q);
  out.rel_grad = rel_grad(Q);

  while (out.iterations < cfg.max_iter) {
    if (out.rel_grad < cfg.grad_tol) {
      out.converged = true;
      break;
    }
    // two-loop recursion
    for (std::size_t k = 0; k < N; ++k) {
      r[k] = -g[k];
    }
    const std::size_t m = S.size();
    for (std::size_t l = m; l-- > 0;) {
      alpha[l] = rho_hist[l] * dot(S[l], r);
      for (std::size_t k = 0; k < N; ++k) {
        r[k] -= alpha[l] * Y[l][k];
      }
    }
    model.apply(r, d);
    if (m > 0) {
      const double gamma = model.quad(S[m - 1]) * rho_hist[m - 1];
      for (double& v : d) {
        v /= gamma;
      }
    }
    for (std::size_t l = 0; l < m; ++l) {
      const double b = rho_hist[l] * dot(Y[l], d);
      for (std::size_t k = 0; k < N; ++k) {
        d[k] += (alpha[l] - b) * S[l][k];
      }
    }
    double gd = dot(g, d);
    if (!(gd < 0.0)) {
      reset();
      for (std::size_t k = 0; k < N; ++k) {
        r[k] = -g[k];
      }
      model.apply(r, d);
      gd = dot(g, d);
      if (!(gd < 0.0)) {
        out.stalled = true;
        break;
      }
    }

    double t = 1.0;
    double c = 1.0;
    double Qt = Q;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < N; ++k) {
        xt[k] = x[k] + t * d[k];
      }
      c = rescale(xt);
      Qt = value(xt);
      if (std::isfinite(Qt) && Qt <= Q + cfg.sufficient_decrease * t * gd) {
        accepted = true;
        break;
      }
      // Close to the minimum the Armijo decrease drops below the rounding
      // level of Q. Accept on the derivative form of the condition instead
      // (approximate Armijo, as in Hager-Zhang) when Qt is within noise of Q.
      if (std::isfinite(Qt) && Qt <= Q + kQuotientNoise * std::abs(Q)) {
        value_grad(xt, gt, Pt);
        if (c * dot(gt, d) <= (1.0 - 2.0 * cfg.sufficient_decrease) * -gd) {
          accepted = true;
          break;
        }
      }
      t *= cfg.backtrack;
    }
    if (!accepted) {
      if (S.empty()) {
        out.stalled = true;
        break;
      }
      reset();
      continue;
    }
    x.swap(xt);
    g_old.swap(g);
    Q = value_grad(x, g, P);
    model.refresh(x, P);
    ++out.iterations;
    out.q_trace.push_back(Q);
    out.rel_grad = rel_grad(Q);

    // The accepted point is c (x + t d). Q is invariant under scaling, so its
    // gradient scales as 1/c and curvature pairs are carried over as
    // s -> c s, y -> y / c; the new pair is (c t d, g - g_old / c).
    for (std::size_t l = 0; l < S.size(); ++l) {
      for (std::size_t k = 0; k < N; ++k) {
        S[l][k] *= c;
        Y[l][k] /= c;
      }
    }
    std::vector<double> s(N), y(N);
    for (std::size_t k = 0; k < N; ++k) {
      s[k] = c * t * d[k];
      y[k] = g[k] - g_old[k] / c;
    }
    const double sy = dot(s, y);
    if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
      if (S.size() == memory) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho_hist.erase(rho_hist.begin());
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
  }
  out.Q = Q;
  return out;
}

}  // namespace detail

struct BreakingExperimentReport {
  double Q_continuum = 0.0;  ///< continuum radial quotient on the sector
  double Q_interp_h = 0.0;   ///< discrete quotient of the radial interpolant
  double Q_radial_h = 0.0;   ///< discrete minimum over angularly constant fields
  double Q_min_h = 0.0;      ///< discrete minimum from the perturbed start
  double asym = 0.0;
  double rel_grad = 0.0;
  double radial_rel_grad = 0.0;
  int iterations = 0;
  int radial_iterations = 0;
  bool converged = false;
  bool radial_converged = false;
  bool monotone = true;  ///< Q never increased (beyond kQuotientNoise) along accepted steps
  std::vector<std::string> warnings;
};

struct MinimizeResult {
  DiscreteField field;
  OptimizerOutcome outcome;
};

/// Scale u in place to unit discrete mass; returns the factor.
inline double unit_mass_rescale(std::span<double> u, const SectorEvaluator& ev) {
  const double M = ev.evaluate(u, false).M;
  if (!(M > 0.0)) {
    throw DomainError("discrete mass vanishes; cannot normalize");
  }
  const double c = std::pow(M, -1.0 / ev.derived().q);
  for (double& x : u) {
    x *= c;
  }
  return c;
}

/// Q at u, the gradient of the scale-normalized quotient, and the Jacobi
/// preconditioner (diagonal of the energy Hessian / M^{p/q}).
/// Outer-row entries are zeroed: those nodes are held at u = 0.
inline double quotient_with_grad(const SectorEvaluator& ev, std::span<const double> u, std::vector<double>& g,
                                 std::vector<double>& P) {
  const auto e = ev.evaluate(u, true, true);
  const double p = ev.derived().params.p;
  const double q = ev.derived().q;
  const double Mpq = std::pow(e.M, p / q);
  const double Q = e.E / Mpq;
  double pmax = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    P[k] = e.hess_diag_E[k] / Mpq;
    pmax = std::max(pmax, P[k]);
  }
  const double floor = 1e-14 * pmax;
  for (double& x : P) {
    x = std::max(x, floor);
  }
  std::vector<double> gM = e.grad_M;
  for (std::size_t k = 0; k < u.size(); ++k) {
    g[k] = e.grad_E[k] / Mpq - (p / q) * Q / e.M * gM[k];
  }
  apply_outer_dirichlet(ev.mesh(), g);
  apply_outer_dirichlet(ev.mesh(), gM);
  // Gradient of u -> Q(u / M(u)^{1/q}) at unit mass: remove the component
  // that changes the scale. A no-op when eps_reg = 0 (then g.u = 0 exactly).
  const double gu = detail::dot(g, u);
  const double mu = detail::dot(gM, u);
  if (mu > 0.0) {
    for (std::size_t k = 0; k < u.size(); ++k) {
      g[k] -= (gu / mu) * gM[k];
    }
  }
  return Q;
}

/// Energy Hessian / M^{p/q} at a unit-mass field, with the outer (fixed) row
/// replaced by identity rows and a tiny diagonal shift that makes the
/// checkerboard-like near-null modes invertible.
inline Eigen::SparseMatrix<double> quotient_model_matrix(const SectorEvaluator& ev, std::span<const double> u) {
  const auto& mesh = ev.mesh();
  Eigen::SparseMatrix<double> H = ev.energy_hessian(u);
  const double Mpq = std::pow(ev.evaluate(u, false).M, ev.derived().params.p / ev.derived().q);
  H /= Mpq;
  const auto outer_begin = static_cast<Eigen::Index>(mesh.index(mesh.Nrho, 0));
  double dmax = 0.0;
  for (Eigen::Index k = 0; k < H.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(H, k); it; ++it) {
      if (it.row() >= outer_begin || it.col() >= outer_begin) {
        it.valueRef() = 0.0;
      } else if (it.row() == it.col()) {
        dmax = std::max(dmax, it.value());
      }
    }
  }
  const double shift = 1e-10 * dmax;
  for (Eigen::Index k = 0; k < H.rows(); ++k) {
    H.coeffRef(k, k) += (k >= outer_begin) ? 1.0 : shift;
  }
  H.prune(0.0);
  return H;
}

/// Sum H over the angular index: the model for angularly constant fields.
inline Eigen::SparseMatrix<double> reduce_rows(const SectorMesh& mesh, const Eigen::SparseMatrix<double>& H) {
  const auto cols = static_cast<Eigen::Index>(mesh.cols());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(H.nonZeros()));
  for (Eigen::Index k = 0; k < H.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(H, k); it; ++it) {
      trip.emplace_back(static_cast<int>(it.row() / cols), static_cast<int>(it.col() / cols), it.value());
    }
  }
  Eigen::SparseMatrix<double> R(mesh.rows(), mesh.rows());
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

/// Minimize Q_h from a given field; u is modified in place (unit mass, outer row zero).
inline OptimizerOutcome minimize_field(std::vector<double>& u, const SectorEvaluator& ev, const MinimizeConfig& cfg) {
  apply_outer_dirichlet(ev.mesh(), u);
  auto value_grad = [&](const std::vector<double>& x, std::vector<double>& g, std::vector<double>& P) {
    return quotient_with_grad(ev, x, g, P);
  };
  auto value = [&](const std::vector<double>& x) { return quotient_h(x, ev); };
  auto rescale = [&](std::vector<double>& x) { return unit_mass_rescale(x, ev); };
  if (cfg.preconditioner == Preconditioner::Jacobi) {
    detail::JacobiModel model;
    return detail::lbfgs_unit_mass(u, value_grad, value, rescale, model, cfg);
  }
  auto build = [&](std::span<const double> x) { return quotient_model_matrix(ev, x); };
  detail::SparseModel<decltype(build)> model(build);
  return detail::lbfgs_unit_mass(u, value_grad, value, rescale, model, cfg);
}

/// Expand per-row values v_i to the angularly constant field u_ij = v_i.
inline std::vector<double> expand_rows(const SectorMesh& mesh, std::span<const double> v) {
  std::vector<double> u(mesh.node_count());
  for (int i = 0; i < mesh.rows(); ++i) {
    for (int j = 0; j < mesh.cols(); ++j) {
      u[mesh.index(i, j)] = v[static_cast<std::size_t>(i)];
    }
  }
  return u;
}

/// Minimize Q_h over angularly constant fields u_ij = v_i.
inline OptimizerOutcome minimize_radial(std::vector<double>& v, const SectorEvaluator& ev, const MinimizeConfig& cfg) {
  const auto& mesh = ev.mesh();
  const int rows = mesh.rows();
  const int cols = mesh.cols();
  v[static_cast<std::size_t>(mesh.Nrho)] = 0.0;
  std::vector<double> gfull(mesh.node_count()), Pfull(mesh.node_count());
  auto value_grad = [&](const std::vector<double>& x, std::vector<double>& g, std::vector<double>& P) {
    const double Q = quotient_with_grad(ev, expand_rows(mesh, x), gfull, Pfull);
    for (int i = 0; i < rows; ++i) {
      double sg = 0.0;
      double sp = 0.0;
      for (int j = 0; j < cols; ++j) {
        sg += gfull[mesh.index(i, j)];
        sp += Pfull[mesh.index(i, j)];
      }
      g[static_cast<std::size_t>(i)] = sg;
      P[static_cast<std::size_t>(i)] = sp;
    }
    return Q;
  };
  auto value = [&](const std::vector<double>& x) { return quotient_h(expand_rows(mesh, x), ev); };
  auto rescale = [&](std::vector<double>& x) {
    const double c = std::pow(ev.evaluate(expand_rows(mesh, x), false).M, -1.0 / ev.derived().q);
    for (double& y : x) {
      y *= c;
    }
    return c;
  };
  if (cfg.preconditioner == Preconditioner::Jacobi) {
    detail::JacobiModel model;
    return detail::lbfgs_unit_mass(v, value_grad, value, rescale, model, cfg);
  }
  auto build = [&](std::span<const double> x) {
    return reduce_rows(mesh, quotient_model_matrix(ev, expand_rows(mesh, x)));
  };
  detail::SparseModel<decltype(build)> model(build);
  return detail::lbfgs_unit_mass(v, value_grad, value, rescale, model, cfg);
}

/// Run the eps_reg continuation stages (if any), then the final stage at
/// ev.eps_reg(). Throws NoConvergence when the final stage ends with a
/// relative gradient above 10 grad_tol.
inline MinimizeResult minimize(const DiscreteField& init, const SectorEvaluator& ev, const MinimizeConfig& cfg) {
  check_config(cfg);
  MinimizeResult res{init, {}};
  int total_iter = 0;
  std::vector<double> trace;
  auto run_stage = [&](const SectorEvaluator& stage_ev) {
    res.outcome = minimize_field(res.field.values, stage_ev, cfg);
    total_iter += res.outcome.iterations;
    trace.insert(trace.end(), res.outcome.q_trace.begin(), res.outcome.q_trace.end());
  };
  for (double e : cfg.continuation) {
    run_stage(SectorEvaluator(ev.mesh(), ev.derived(), e, cfg.jobs));
  }
  run_stage(ev);
  res.outcome.iterations = total_iter;
  if (!cfg.continuation.empty()) {
    // stages minimize different functionals; keep only the final stage trace
    trace = res.outcome.q_trace;
  }
  res.outcome.q_trace = std::move(trace);
  if (!res.outcome.converged && res.outcome.rel_grad > 10.0 * cfg.grad_tol) {
    std::ostringstream os;
    os << "sector minimization stopped after " << total_iter << " iterations with relative gradient "
       << res.outcome.rel_grad;
    throw NoConvergence(os.str(), res.outcome.Q, res.outcome.rel_grad);
  }
  return res;
}

/// Full experiment: radial reference, radial-restricted minimum, and the
/// minimum reached from the perturbed start. `init`, when given, replaces the
/// perturbed start.
inline std::pair<DiscreteField, BreakingExperimentReport> run_breaking_experiment(
    const SectorMesh& mesh, const RadialProfile& prof, const MinimizeConfig& cfg, const QuadConfig& qcfg = {},
    const DiscreteField* init = nullptr) {
  check_config(cfg);
  const auto& d = prof.derived;
  const SectorEvaluator ev = assemble(mesh, d, cfg.eps_reg, cfg.allow_sigma1, cfg.jobs);
  if (init != nullptr && (init->mesh.Nrho != mesh.Nrho || init->mesh.Nphi != mesh.Nphi ||
                          init->mesh.theta0 != mesh.theta0 || init->mesh.L != mesh.L)) {
    throw DomainError("initial field mesh does not match the requested mesh");
  }

  BreakingExperimentReport rep;
  rep.warnings = ev.warnings();
  rep.Q_continuum = quotient_radial(d, radial_integrals(prof, qcfg), arc_measure(mesh.theta0));

  const DiscreteField radial = radial_reference(mesh, prof);
  rep.Q_interp_h = quotient_h(radial.values, ev);

  std::vector<double> v(static_cast<std::size_t>(mesh.rows()));
  for (int i = 0; i < mesh.rows(); ++i) {
    v[static_cast<std::size_t>(i)] = radial.at(i, 0);
  }
  const auto rad = minimize_radial(v, ev, cfg);
  rep.Q_radial_h = rad.Q;
  rep.radial_iterations = rad.iterations;
  rep.radial_converged = rad.converged;
  rep.radial_rel_grad = rad.rel_grad;

  const auto res = minimize(init != nullptr ? *init : perturbed_init(mesh, prof, cfg.init_perturb), ev, cfg);
  rep.Q_min_h = res.outcome.Q;
  rep.iterations = res.outcome.iterations;
  rep.converged = res.outcome.converged;
  rep.rel_grad = res.outcome.rel_grad;
  rep.asym = asymmetry(res.field.values, ev);
  for (std::size_t k = 1; k < res.outcome.q_trace.size(); ++k) {
    const double prev = res.outcome.q_trace[k - 1];
    if (res.outcome.q_trace[k] > prev + kQuotientNoise * std::abs(prev)) {
      rep.monotone = false;
    }
  }
  return {res.field, rep};
}

// ---------------------------------------------------------------------------
// CSV grids: a header line "theta0,L,Nrho,Nphi", one line with those values,
// then Nrho+1 lines of Nphi+1 nodal values (one rho row per line).

inline void write_field_csv(std::ostream& os, const DiscreteField& f) {
  const auto& m = f.mesh;
  os << "theta0,L,Nrho,Nphi\n";
  os << std::setprecision(17) << m.theta0 << ',' << m.L << ',' << m.Nrho << ',' << m.Nphi << '\n';
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j > 0) {
        os << ',';
      }
      os << f.at(i, j);
    }
    os << '\n';
  }
}

inline DiscreteField read_field_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("theta0,L,Nrho,Nphi", 0) != 0) {
    throw DomainError("field CSV: missing header 'theta0,L,Nrho,Nphi'");
  }
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      out.push_back(tok);
    }
    return out;
  };
  if (!std::getline(is, line)) {
    throw DomainError("field CSV: missing mesh line");
  }
  const auto head = split(line);
  if (head.size() != 4) {
    throw DomainError("field CSV: mesh line needs 4 values");
  }
  DiscreteField f;
  try {
    f.mesh = make_sector_mesh(std::stod(head[0]), std::stod(head[1]), std::stoi(head[2]), std::stoi(head[3]));
  } catch (const std::invalid_argument&) {
    throw DomainError("field CSV: malformed mesh line");
  }
  f.values.resize(f.mesh.node_count());
  for (int i = 0; i < f.mesh.rows(); ++i) {
    if (!std::getline(is, line)) {
      throw DomainError("field CSV: too few rows");
    }
    const auto toks = split(line);
    if (toks.size() != static_cast<std::size_t>(f.mesh.cols())) {
      throw DomainError("field CSV: row " + std::to_string(i) + " has the wrong number of values");
    }
    for (int j = 0; j < f.mesh.cols(); ++j) {
      f.at(i, j) = std::stod(toks[static_cast<std::size_t>(j)]);
    }
  }
  return f;
}

}  // namespace cone_breaker
