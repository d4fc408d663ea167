#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/params.hpp"
#include "cone_breaker/radial.hpp"

namespace cone_breaker {

/// Settings for integrate_log / integrate_rho.
///
/// The window [-L, L] in rho = log r starts at L0 and grows by 1.5x up to
/// L_max. L_max defaults to 700 so that e^{+-L} stays finite in double.
struct QuadConfig {
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  double L0 = 10.0;
  double L_max = 700.0;
  int max_refine = 24;
  double h0 = 1.0;  ///< initial panel width in rho
};

inline void check_config(const QuadConfig& c) {
  if (!(c.rel_tol > 0.0) || !(c.abs_tol > 0.0) || !(c.L0 > 0.0) || !(c.L0 <= c.L_max) ||
      c.max_refine < 1 || !(c.h0 > 0.0)) {
    throw DomainError("invalid quadrature configuration");
  }
}

struct QuadResult {
  double value = 0.0;
  double err_est = 0.0;
  double L_used = 0.0;
  long panels = 0;
};

namespace detail {

template <int N>
struct GaussRule {
  std::array<double, N> x{};
  std::array<double, N> w{};
};

// Nodes/weights on [-1, 1] by Newton iteration on the Legendre recurrence.
template <int N>
GaussRule<N> make_gauss_rule() {
  GaussRule<N> rule;
  for (int i = 0; i < N; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = z;
      for (int k = 2; k <= N; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = N * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) {
        break;
      }
    }
    rule.x[static_cast<std::size_t>(i)] = z;
    rule.w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return rule;
}

inline const GaussRule<10>& gauss10() {
  static const GaussRule<10> rule = make_gauss_rule<10>();
  return rule;
}

/// Integral of g over [a, b] with one 10-point Gauss panel.
template <class G>
double gauss_panel(G& g, double a, double b, double* abs_sum = nullptr) {
  const auto& rule = gauss10();
  const double c = 0.5 * (a + b);
  const double hw = 0.5 * (b - a);
  double s = 0.0;
  double sa = 0.0;
  for (std::size_t k = 0; k < rule.x.size(); ++k) {
    const double v = rule.w[k] * g(c + hw * rule.x[k]);
    s += v;
    sa += std::abs(v);
  }
  if (abs_sum != nullptr) {
    *abs_sum += hw * sa;
  }
  return hw * s;
}

struct PanelSum {
  double value = 0.0;
  double abs_value = 0.0;
  double first_panel = 0.0;
  double last_panel = 0.0;
};

template <class G>
PanelSum composite(G& g, double L, long m) {
  PanelSum ps;
  const double h = 2.0 * L / static_cast<double>(m);
  for (long i = 0; i < m; ++i) {
    const double a = -L + h * static_cast<double>(i);
    const double b = (i + 1 == m) ? L : a + h;
    const double v = gauss_panel(g, a, b, &ps.abs_value);
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite integrand value in radial quadrature");
    }
    if (i == 0) {
      ps.first_panel = v;
    }
    if (i + 1 == m) {
      ps.last_panel = v;
    }
    ps.value += v;
  }
  return ps;
}

// Remainder beyond an end of the window, modelled as c e^{-kappa |rho|} with
// kappa read off the integrand one unit inside the end.
inline double exponential_tail(double g_edge, double g_inner) {
  const double ge = std::abs(g_edge);
  if (ge == 0.0) {
    return 0.0;
  }
  const double gi = std::abs(g_inner);
  if (!(gi > ge)) {
    return std::numeric_limits<double>::infinity();
  }
  return ge / std::log(gi / ge);
}

}  // namespace detail

/// Integral of g over the whole rho line (g already carries the Jacobian).
///
/// For each window the panel count is doubled until two successive composite
/// Gauss sums agree within rel_tol |value| + abs_tol; the window then grows
/// until the larger of the edge-panel contribution and the exponential tail
/// model at each end falls under the same tolerance.
template <class G>
QuadResult integrate_rho(G&& g, const QuadConfig& cfg = {}) {
  check_config(cfg);
  double L = cfg.L0;
  double h = cfg.h0;
  long total_panels = 0;
  int rounds = 0;
  double last_value = 0.0;
  double last_err = std::numeric_limits<double>::infinity();

  for (;;) {
    long m = std::max<long>(2, static_cast<long>(std::ceil(2.0 * L / h)));
    auto coarse = detail::composite(g, L, m);
    total_panels += m;
    detail::PanelSum fine;
    double diff = 0.0;
    bool refined = false;
    while (rounds < cfg.max_refine) {
      fine = detail::composite(g, L, 2 * m);
      total_panels += 2 * m;
      ++rounds;
      diff = std::abs(fine.value - coarse.value);
      if (diff <= cfg.rel_tol * std::abs(fine.value) + cfg.abs_tol) {
        refined = true;
        break;
      }
      m *= 2;
      coarse = fine;
    }
    if (!refined) {
      throw NoConvergence("radial quadrature: panel refinement budget exhausted", coarse.value, diff);
    }
    // Next window starts from the coarser of the two accepted resolutions.
    h = 2.0 * L / static_cast<double>(m);

    const double tail_left = std::max(std::abs(fine.first_panel), detail::exponential_tail(g(-L), g(-L + 1.0)));
    const double tail_right = std::max(std::abs(fine.last_panel), detail::exponential_tail(g(L), g(L - 1.0)));
    const double tol = cfg.rel_tol * std::abs(fine.value) + cfg.abs_tol;
    const double rounding = 16.0 * std::numeric_limits<double>::epsilon() * fine.abs_value;
    last_value = fine.value;
    last_err = diff + tail_left + tail_right + rounding;

    if (tail_left + tail_right <= tol) {
      return QuadResult{fine.value, last_err, L, total_panels};
    }
    if (L >= cfg.L_max) {
      std::ostringstream os;
      os << "radial quadrature: window reached L_max = " << cfg.L_max << " with tail estimate "
         << tail_left + tail_right;
      throw NoConvergence(os.str(), last_value, last_err);
    }
    L = std::min(1.5 * L, cfg.L_max);
  }
}

/// Integral of f over (0, inf) via r = e^rho.
template <class F>
QuadResult integrate_log(F&& f, const QuadConfig& cfg = {}) {
  return integrate_rho(
      [&f](double rho) {
        const double r = std::exp(rho);
        return f(r) * r;
      },
      cfg);
}

// ---------------------------------------------------------------------------
// Radial integrals of the profile.

/// Gradient and weighted-mass integrals of U (the angular factor |D| split off).
struct RadialIntegrals {
  double I_grad = 0.0;
  double I_mass = 0.0;
  double err_grad = 0.0;
  double err_mass = 0.0;
  double nehari_defect = 0.0;  ///< |I_grad - I_mass| / I_grad
};

namespace detail {

struct ProfileLogs {
  double log_U = 0.0;
  double log_abs_U1 = 0.0;  ///< log|U'|
  double u = 0.0;
  double v = 0.0;
};

inline ProfileLogs profile_logs(const RadialProfile& prof, double rho) {
  const auto& d = prof.derived;
  const auto lp = log_point(d, rho + std::log(prof.a));
  ProfileLogs pl;
  pl.log_U = prof.log_amplitude() + lp.log_w;
  pl.log_abs_U1 = std::log(d.gamma * d.beta) + pl.log_U + lp.log_u - rho;
  pl.u = lp.u;
  pl.v = lp.v;
  return pl;
}

}  // namespace detail

/// |U'|^p r^n: the gradient integrand in rho.
inline double grad_integrand(const RadialProfile& prof, double rho) {
  const auto pl = detail::profile_logs(prof, rho);
  return std::exp(prof.derived.params.p * pl.log_abs_U1 + prof.derived.params.n * rho);
}

/// r^{(sigma-1)q} U^q r^n: the mass integrand in rho.
inline double mass_integrand(const RadialProfile& prof, double rho) {
  const auto& d = prof.derived;
  const auto pl = detail::profile_logs(prof, rho);
  return std::exp(((d.params.sigma - 1.0) * d.q + d.params.n) * rho + d.q * pl.log_U);
}

/// Integral over the rho line of an integrand whose overall magnitude is
/// arbitrary: it is divided by its peak on a coarse sample first, so abs_tol
/// acts relative to the integrand rather than in absolute units.
template <class G>
QuadResult integrate_rho_scaled(G&& g, const QuadConfig& cfg = {}) {
  double peak = 0.0;
  for (double rho = -cfg.L0; rho <= cfg.L0; rho += 0.25) {
    peak = std::max(peak, std::abs(g(rho)));
  }
  if (!(peak > 0.0) || !std::isfinite(peak)) {
    return integrate_rho(g, cfg);
  }
  auto res = integrate_rho([&](double rho) { return g(rho) / peak; }, cfg);
  res.value *= peak;
  res.err_est *= peak;
  return res;
}

inline RadialIntegrals radial_integrals(const RadialProfile& prof, const QuadConfig& cfg = {}) {
  const auto g = integrate_rho_scaled([&](double rho) { return grad_integrand(prof, rho); }, cfg);
  const auto m = integrate_rho_scaled([&](double rho) { return mass_integrand(prof, rho); }, cfg);
  RadialIntegrals I;
  I.I_grad = g.value;
  I.I_mass = m.value;
  I.err_grad = g.err_est;
  I.err_mass = m.err_est;
  I.nehari_defect = std::abs(g.value - m.value) / g.value;
  return I;
}

/// Hardy-Sobolev quotient of a radial function on the cone over D.
inline double quotient_radial(const DerivedExponents& d, const RadialIntegrals& I, double D_measure) {
  if (!(D_measure > 0.0)) {
    throw DomainError("domain measure must be positive");
  }
  const double pq = d.params.p / d.q;
  return std::pow(D_measure, 1.0 - pq) * I.I_grad / std::pow(I.I_mass, pq);
}

/// t_u with t_u u on the Nehari manifold: (I_grad / I_mass)^{1/(q-p)}.
inline double nehari_scale(double I_grad_u, double I_mass_u, const DerivedExponents& d) {
  if (!(I_grad_u > 0.0) || !(I_mass_u > 0.0)) {
    throw DomainError("Nehari scaling needs positive gradient and mass integrals");
  }
  return std::pow(I_grad_u / I_mass_u, 1.0 / (d.q - d.params.p));
}

/// J(t_u u) = (1/p - 1/q) t_u^p |D| I_grad, evaluated directly.
inline double nehari_energy(double I_grad_u, double I_mass_u, const DerivedExponents& d, double D_measure) {
  const double t = nehari_scale(I_grad_u, I_mass_u, d);
  const double p = d.params.p;
  return (1.0 / p - 1.0 / d.q) * std::pow(t, p) * D_measure * I_grad_u;
}

// ---------------------------------------------------------------------------
// Measures on the sphere.

struct SphereMeasures {
  double full = 0.0;  ///< |S^{n-1}|
  double half = 0.0;  ///< |S^{n-1}_+|
};

/// |S^{k}| for k >= 0.
inline double sphere_area(int k) {
  const double m = k + 1.0;
  return 2.0 * std::pow(std::numbers::pi, 0.5 * m) / std::tgamma(0.5 * m);
}

inline SphereMeasures sphere_measures(int n) {
  if (n < 2) {
    throw DomainError("sphere_measures needs n >= 2");
  }
  const double full = sphere_area(n - 1);
  return SphereMeasures{full, 0.5 * full};
}

/// Antiderivative of sin^k with F_k(0) = 0, by the standard reduction formula.
inline double sin_power_antiderivative(int k, double t) {
  if (k == 0) {
    return t;
  }
  if (k == 1) {
    return 1.0 - std::cos(t);
  }
  return -std::pow(std::sin(t), k - 1) * std::cos(t) / k + (k - 1.0) / k * sin_power_antiderivative(k - 2, t);
}

/// Measure of the geodesic cap {theta < Theta} on S^{n-1}.
inline double cap_measure(int n, double Theta) {
  if (n < 2) {
    throw DomainError("cap_measure needs n >= 2");
  }
  if (!(Theta > 0.0 && Theta < std::numbers::pi)) {
    throw DomainError("cap opening must lie in (0, pi)");
  }
  return sphere_area(n - 2) * sin_power_antiderivative(n - 2, Theta);
}

inline double arc_measure(double theta0) {
  if (!(theta0 > 0.0 && theta0 < 2.0 * std::numbers::pi)) {
    throw DomainError("arc angle must lie in (0, 2 pi)");
  }
  return theta0;
}

/// For sigma = 1: true when |D| is strictly below a half-sphere, which is
/// enough for the cone constant to lie strictly below the half-space constant.
inline bool sufficient_condition_sigma1(int n, double p, double D_measure) {
  validate(n, p, 1.0);
  if (!(D_measure > 0.0)) {
    throw DomainError("domain measure must be positive");
  }
  return D_measure < sphere_measures(n).half;
}

}  // namespace cone_breaker
