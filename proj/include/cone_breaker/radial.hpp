#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/params.hpp"

namespace cone_breaker {

/// w and its first three derivatives at one radius.
struct WDerivs {
  double w = 0.0;
  double w1 = 0.0;
  double w2 = 0.0;
  double w3 = 0.0;
};

namespace detail {

// Logarithmic state of w at x = e^{log_x}. With s = x^beta:
//   u = s / (1 + s),  v = 1 / (1 + s) = 1 - u,  w = v^gamma.
// Both u and v are formed without subtraction so neither loses precision
// at the ends of the half-line.
struct LogPoint {
  double log_w = 0.0;
  double log_u = 0.0;
  double log_v = 0.0;
  double u = 0.0;
  double v = 0.0;
};

inline LogPoint log_point(const DerivedExponents& d, double log_x) {
  const double t = d.beta * log_x;  // log s
  double log1ps = 0.0;
  if (t > 0.0) {
    log1ps = t + std::log1p(std::exp(-t));
  } else {
    log1ps = std::log1p(std::exp(t));
  }
  LogPoint lp;
  lp.log_v = -log1ps;
  lp.log_u = t - log1ps;
  lp.log_w = -d.gamma * log1ps;
  lp.u = std::exp(lp.log_u);
  lp.v = std::exp(lp.log_v);
  return lp;
}

// x^k w^{(k)}(x) / w(x) as polynomials in u.
struct ShapePolys {
  double P1 = 0.0;
  double P2 = 0.0;
  double P3 = 0.0;
};

inline ShapePolys shape_polys(const DerivedExponents& d, double u) {
  const double b = d.beta;
  const double g = d.gamma;
  ShapePolys sp;
  sp.P1 = -g * b * u;
  sp.P2 = g * b * u * ((g + 1.0) * b * u - (b - 1.0));
  sp.P3 = -g * b * u *
          ((g + 1.0) * (g + 2.0) * b * b * u * u - 3.0 * (g + 1.0) * b * (b - 1.0) * u +
           (b - 1.0) * (b - 2.0));
  return sp;
}

}  // namespace detail

/// w(r) = (1 + r^beta)^(-gamma); defined at r = 0 as well.
inline double w_value(double r, const DerivedExponents& d) {
  if (r < 0.0) {
    throw DomainError("w is defined for r >= 0 only");
  }
  if (r == 0.0) {
    return 1.0;
  }
  return std::exp(detail::log_point(d, std::log(r)).log_w);
}

/// Closed-form w, w', w'', w''' at r > 0.
inline WDerivs w_derivs(double r, const DerivedExponents& d) {
  if (!(r > 0.0)) {
    throw DomainError("derivatives of w require r > 0");
  }
  const auto lp = detail::log_point(d, std::log(r));
  const auto sp = detail::shape_polys(d, lp.u);
  const double w = std::exp(lp.log_w);
  return WDerivs{w, w * sp.P1 / r, w * sp.P2 / (r * r), w * sp.P3 / (r * r * r)};
}

/// U_a(r) = C a^{(n-p)/p} w(a r).
struct RadialProfile {
  DerivedExponents derived;
  double C = 1.0;
  double a = 1.0;
  double lambda_w = 1.0;  ///< multiplier of the un-normalized w

  double log_amplitude() const {
    const auto& cp = derived.params;
    return std::log(C) + (cp.n - cp.p) / cp.p * std::log(a);
  }
  double amplitude() const { return std::exp(log_amplitude()); }
};

/// U and its first three derivatives at r > 0 (chain rule through x = a r).
inline WDerivs u_derivs(const RadialProfile& prof, double r) {
  const auto wd = w_derivs(prof.a * r, prof.derived);
  const double K = prof.amplitude();
  const double a = prof.a;
  return WDerivs{K * wd.w, K * a * wd.w1, K * a * a * wd.w2, K * a * a * a * wd.w3};
}

/// log(-Delta_p w)(x) for the radial p-Laplacian.
///
/// Flux form: with F = x^{n-1}|w'|^{p-1}, -Delta_p w = -x^{1-n} F' and
///   d log F / d log x = (n-p) - (p-1) gamma beta u + (p-1) beta v.
/// Because gamma beta = (n-p)/(p-1) and u = 1 - v this collapses to
/// (p-1)(gamma+1) beta v, which is what is evaluated. The textbook sum
/// (p-1)w'' + (n-1)w'/x cancels to O(x^{-beta}) relative at large x and
/// cannot be evaluated in double precision there.
inline double log_neg_p_laplacian_w(const DerivedExponents& d, double log_x) {
  const double n = d.params.n;
  const double p = d.params.p;
  const auto lp = detail::log_point(d, log_x);
  const double gb = d.gamma * d.beta;
  const double log_flux = (p - 1.0) * std::log(gb) + (n - p) * log_x + (p - 1.0) * (lp.log_w + lp.log_u);
  return std::log((d.gamma + 1.0) * (p - 1.0) * d.beta) + lp.log_v + log_flux - n * log_x;
}

/// -Delta_p w evaluated literally as -(p-1)|w'|^{p-2} w'' - (n-1)|w'|^{p-2} w'/r.
/// Well conditioned only for moderate r; used as a cross-check of the flux form.
inline double neg_p_laplacian_direct(const DerivedExponents& d, double r) {
  const double n = d.params.n;
  const double p = d.params.p;
  const auto wd = w_derivs(r, d);
  const double W = std::pow(std::abs(wd.w1), p - 2.0);
  return -(p - 1.0) * W * wd.w2 - (n - 1.0) * W * wd.w1 / r;
}

/// log of -Delta_p U at r for a scaled profile.
inline double log_neg_p_laplacian_U(const RadialProfile& prof, double log_r) {
  const double p = prof.derived.params.p;
  return (p - 1.0) * prof.log_amplitude() + p * std::log(prof.a) +
         log_neg_p_laplacian_w(prof.derived, log_r + std::log(prof.a));
}

/// log of the right-hand side r^{(sigma-1)q} U^{q-1}.
inline double log_rhs_U(const RadialProfile& prof, double log_r) {
  const auto& d = prof.derived;
  const auto lp = detail::log_point(d, log_r + std::log(prof.a));
  const double log_U = prof.log_amplitude() + lp.log_w;
  return (d.params.sigma - 1.0) * d.q * log_r + (d.q - 1.0) * log_U;
}

/// count radii log-uniformly spaced in [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > lo) || count < 2) {
    throw DomainError("log_grid needs 0 < lo < hi and count >= 2");
  }
  std::vector<double> g(static_cast<std::size_t>(count));
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (int i = 0; i < count; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (count - 1));
  }
  return g;
}

struct MultiplierEstimate {
  double lambda_w = 0.0;
  double max_dev = 0.0;
};

/// Multiplier of w: median over the grid of (-Delta_p w) / (r^{(sigma-1)q} w^{q-1})
/// and the largest relative deviation from it. A deviation above 1e-6 means
/// the profile does not solve its equation and is reported as NumericalError.
inline MultiplierEstimate lagrange_multiplier(const DerivedExponents& d, std::span<const double> grid) {
  if (grid.size() < 50) {
    throw DomainError("lagrange_multiplier needs at least 50 grid radii");
  }
  std::vector<double> ratio;
  ratio.reserve(grid.size());
  for (double r : grid) {
    if (!(r > 0.0)) {
      throw DomainError("grid radii must be positive");
    }
    const double lr = std::log(r);
    const auto lp = detail::log_point(d, lr);
    const double log_rhs = (d.params.sigma - 1.0) * d.q * lr + (d.q - 1.0) * lp.log_w;
    ratio.push_back(std::exp(log_neg_p_laplacian_w(d, lr) - log_rhs));
  }
  std::vector<double> sorted = ratio;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median = (m % 2 == 1) ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

  double max_dev = 0.0;
  for (double x : ratio) {
    max_dev = std::max(max_dev, std::abs(x - median) / median);
  }
  if (!(median > 0.0) || !(max_dev <= 1e-6)) {
    throw NumericalError("multiplier ratio is not constant (max relative deviation " +
                         std::to_string(max_dev) + ")");
  }
  return MultiplierEstimate{median, max_dev};
}

/// Normalize so that U = C a^{(n-p)/p} w(a r) solves -Delta_p U = r^{(sigma-1)q} U^{q-1}.
inline RadialProfile normalize(const DerivedExponents& d, double lambda_w, double a = 1.0) {
  if (!(lambda_w > 0.0) || !(a > 0.0)) {
    throw DomainError("normalize needs lambda_w > 0 and a > 0");
  }
  RadialProfile prof;
  prof.derived = d;
  prof.C = std::pow(lambda_w, 1.0 / (d.q - d.params.p));
  prof.a = a;
  prof.lambda_w = lambda_w;
  return prof;
}

/// Convenience: multiplier on the default grid [1e-3, 1e3] followed by normalize().
inline RadialProfile make_profile(const DerivedExponents& d, double a = 1.0) {
  const auto grid = log_grid(1e-3, 1e3, 61);
  return normalize(d, lagrange_multiplier(d, grid).lambda_w, a);
}

/// Worst pointwise relative residual of a check over a radius grid.
struct ResidualReport {
  std::vector<double> grid;
  double max_rel_residual = 0.0;
  double location = 0.0;
};

/// Relative residual |-Delta_p U - r^{(sigma-1)q} U^{q-1}| / max(|lhs|, |rhs|).
inline ResidualReport ode_residual(const RadialProfile& prof, std::span<const double> grid) {
  ResidualReport rep;
  rep.grid.assign(grid.begin(), grid.end());
  bool first = true;
  for (double r : grid) {
    const double lr = std::log(r);
    const double l1 = log_neg_p_laplacian_U(prof, lr);
    const double l2 = log_rhs_U(prof, lr);
    // |e^{l1} - e^{l2}| / e^{max(l1,l2)} = |expm1(-|l1 - l2|)|
    const double res = -std::expm1(-std::abs(l1 - l2));
    if (first || res > rep.max_rel_residual) {
      rep.max_rel_residual = res;
      rep.location = r;
      first = false;
    }
  }
  return rep;
}

}  // namespace cone_breaker
