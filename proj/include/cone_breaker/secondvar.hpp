#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/quad.hpp"
#include "cone_breaker/radial.hpp"

namespace cone_breaker {

enum class Verdict { Breaks, Inconclusive };

inline std::string to_string(Verdict v) { return v == Verdict::Breaks ? "Breaks" : "Inconclusive"; }

/// Breaks iff lambda1 (plus its error bar) is strictly below the threshold
/// (1 - alpha)(n - 1 - alpha(p - 1)). The criterion is only sufficient, so
/// anything else is Inconclusive rather than "radial".
inline Verdict breaking_verdict(double lambda1, const DerivedExponents& d, double lambda1_err = 0.0) {
  if (!(lambda1 > 0.0)) {
    throw DomainError("lambda_1 must be positive");
  }
  return (lambda1 + std::abs(lambda1_err) < d.threshold) ? Verdict::Breaks : Verdict::Inconclusive;
}

/// f = r^alpha U' and f' = r^alpha U'' + alpha r^{alpha-1} U'.
struct FDerivs {
  double f = 0.0;
  double f1 = 0.0;
};

inline FDerivs f_derivs(double r, const RadialProfile& prof) {
  if (!(r > 0.0)) {
    throw DomainError("f is evaluated at r > 0 only");
  }
  const double alpha = prof.derived.alpha;
  const auto U = u_derivs(prof, r);
  const double ra = std::pow(r, alpha);
  return FDerivs{ra * U.w1, ra * U.w2 + alpha * ra / r * U.w1};
}

/// Pointwise check that f solves
///   -(p-1) div(W grad f) - (q-1) r^{(sigma-1)q} U^{q-2} f = Lambda W f / r^2,
/// W = |U'|^{p-2}, with div(W grad f) = W f'' + W' f' + (n-1) W f'/r and
/// W' = (p-2) W U''/U'. Each residual is scaled by the largest of the three
/// terms at that radius.
inline ResidualReport proposition_residual(const RadialProfile& prof, std::span<const double> grid,
                                           double Lambda) {
  const auto& d = prof.derived;
  const double n = d.params.n;
  const double p = d.params.p;
  const double q = d.q;
  const double alpha = d.alpha;

  ResidualReport rep;
  rep.grid.assign(grid.begin(), grid.end());
  bool first = true;
  for (double r : grid) {
    const auto U = u_derivs(prof, r);
    const double ra = std::pow(r, alpha);
    const double f = ra * U.w1;
    const double f1 = ra * U.w2 + alpha * ra / r * U.w1;
    const double f2 = ra * U.w3 + 2.0 * alpha * ra / r * U.w2 + alpha * (alpha - 1.0) * ra / (r * r) * U.w1;
    const double W = std::pow(std::abs(U.w1), p - 2.0);

    const double div = W * (f2 + (p - 2.0) * (U.w2 / U.w1) * f1 + (n - 1.0) * f1 / r);
    const double t1 = -(p - 1.0) * div;
    const double t2 = -(q - 1.0) * std::pow(r, (d.params.sigma - 1.0) * q) * std::pow(U.w, q - 2.0) * f;
    const double t3 = Lambda * W * f / (r * r);
    const double scale = std::max({std::abs(t1), std::abs(t2), std::abs(t3)});
    const double res = std::abs(t1 + t2 - t3) / scale;
    if (first || res > rep.max_rel_residual) {
      rep.max_rel_residual = res;
      rep.location = r;
      first = false;
    }
  }
  return rep;
}

inline ResidualReport proposition_residual(const RadialProfile& prof, std::span<const double> grid) {
  return proposition_residual(prof, grid, prof.derived.Lambda_star);
}

// Integrands of the three radial integrals in rho = log r (Jacobian r included),
// evaluated in log form so that windows of |rho| up to several hundred are safe.
namespace detail {

// f'/(r^{alpha-1} U') = (beta - 1 + alpha) - (gamma + 1) beta u, in whichever of
// the u / v forms avoids subtracting nearly equal numbers.
inline double f_shape(const DerivedExponents& d, double u, double v) {
  const double b = d.beta;
  const double g = d.gamma;
  if (u <= 0.5) {
    return (b - 1.0 + d.alpha) - (g + 1.0) * b * u;
  }
  return (d.alpha - 1.0 - g * b) + (g + 1.0) * b * v;
}

inline double log_weight_ff(const RadialProfile& prof, const ProfileLogs& pl, double rho) {
  const auto& d = prof.derived;
  return d.params.p * pl.log_abs_U1 + (2.0 * d.alpha + d.params.n - 2.0) * rho;
}

}  // namespace detail

/// W f'^2 r^n.
inline double a1_integrand(const RadialProfile& prof, double rho) {
  const auto pl = detail::profile_logs(prof, rho);
  const double R = detail::f_shape(prof.derived, pl.u, pl.v);
  return std::exp(detail::log_weight_ff(prof, pl, rho)) * R * R;
}

/// W f^2 r^{n-2}.
inline double a2_integrand(const RadialProfile& prof, double rho) {
  const auto pl = detail::profile_logs(prof, rho);
  return std::exp(detail::log_weight_ff(prof, pl, rho));
}

/// r^{(sigma-1)q} U^{q-2} f^2 r^n.
inline double a3_integrand(const RadialProfile& prof, double rho) {
  const auto& d = prof.derived;
  const auto pl = detail::profile_logs(prof, rho);
  return std::exp(((d.params.sigma - 1.0) * d.q + 2.0 * d.alpha + d.params.n) * rho + (d.q - 2.0) * pl.log_U +
                  2.0 * pl.log_abs_U1);
}

/// Boundary term r^{n-1} W f f' of the integration by parts, at r = e^rho.
inline double boundary_flux(const RadialProfile& prof, double rho) {
  const auto pl = detail::profile_logs(prof, rho);
  // f f' = r^{2 alpha - 1} U'^2 R, so the term is |U'|^p r^{n + 2 alpha - 2} R
  return std::exp(detail::log_weight_ff(prof, pl, rho)) * detail::f_shape(prof.derived, pl.u, pl.v);
}

struct SecondVariationReport {
  double A1 = 0.0;
  double A2 = 0.0;
  double A3 = 0.0;
  double identity_residual = 0.0;
  double lambda1 = 0.0;
  double lambda1_err = 0.0;
  double Lambda_star = 0.0;
  double D_measure = 0.0;
  double d2j = 0.0;           ///< |D| ((p-1)A1 + lambda1 A2 - (q-1)A3)
  double d2j_shortcut = 0.0;  ///< |D| (lambda1 + Lambda*) A2
  double flux_left = 0.0;     ///< boundary term at the lower window edge
  double flux_right = 0.0;
  Verdict verdict = Verdict::Inconclusive;
  int negative_directions = 1;  ///< U itself, plus h = f g when verdict is Breaks
};

/// Angular-independent part of the second-variation integrals.
struct SecondVariationIntegrals {
  double A1 = 0.0;
  double A2 = 0.0;
  double A3 = 0.0;
  double L_used = 0.0;
};

inline SecondVariationIntegrals second_variation_integrals(const RadialProfile& prof, const QuadConfig& cfg = {}) {
  const auto r1 = integrate_rho_scaled([&](double rho) { return a1_integrand(prof, rho); }, cfg);
  const auto r2 = integrate_rho_scaled([&](double rho) { return a2_integrand(prof, rho); }, cfg);
  const auto r3 = integrate_rho_scaled([&](double rho) { return a3_integrand(prof, rho); }, cfg);
  return SecondVariationIntegrals{r1.value, r2.value, r3.value, std::max({r1.L_used, r2.L_used, r3.L_used})};
}

/// Assemble the report for a given lambda_1 and |D| from precomputed integrals.
inline SecondVariationReport second_variation(const RadialProfile& prof, const SecondVariationIntegrals& A,
                                              double lambda1, double D_measure, double lambda1_err = 0.0) {
  if (!(lambda1 > 0.0)) {
    throw DomainError("lambda_1 must be positive");
  }
  if (!(D_measure > 0.0)) {
    throw DomainError("domain measure must be positive");
  }
  const auto& d = prof.derived;
  const double p = d.params.p;
  const double q = d.q;
  const double Ls = d.Lambda_star;

  SecondVariationReport rep;
  rep.A1 = A.A1;
  rep.A2 = A.A2;
  rep.A3 = A.A3;
  rep.lambda1 = lambda1;
  rep.lambda1_err = lambda1_err;
  rep.Lambda_star = Ls;
  rep.D_measure = D_measure;
  rep.identity_residual = std::abs((p - 1.0) * A.A1 - (q - 1.0) * A.A3 - Ls * A.A2) /
                          ((p - 1.0) * A.A1 + (q - 1.0) * A.A3 + std::abs(Ls) * A.A2);
  rep.d2j = D_measure * ((p - 1.0) * A.A1 + lambda1 * A.A2 - (q - 1.0) * A.A3);
  rep.d2j_shortcut = D_measure * (lambda1 + Ls) * A.A2;
  rep.flux_left = boundary_flux(prof, -A.L_used);
  rep.flux_right = boundary_flux(prof, A.L_used);
  rep.verdict = breaking_verdict(lambda1, d, lambda1_err);
  rep.negative_directions = rep.verdict == Verdict::Breaks ? 2 : 1;
  return rep;
}

inline SecondVariationReport second_variation(const RadialProfile& prof, double lambda1, double D_measure,
                                              const QuadConfig& cfg = {}) {
  return second_variation(prof, second_variation_integrals(prof, cfg), lambda1, D_measure);
}

/// D^2 J(U; U, U) = |D| ((p-1) - (q-1)) I_grad on the Nehari manifold; negative since q > p.
inline double d2j_U_direction(const RadialIntegrals& I, const DerivedExponents& d, double D_measure) {
  return D_measure * ((d.params.p - 1.0) - (d.q - 1.0)) * I.I_grad;
}

}  // namespace cone_breaker
