// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Tolerances are fixed here and never read from the command line.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cone_breaker/cli.hpp"
#include "cone_breaker/params.hpp"
#include "cone_breaker/quad.hpp"
#include "cone_breaker/radial.hpp"
#include "cone_breaker/secondvar.hpp"
#include "cone_breaker/sectorfem.hpp"
#include "cone_breaker/speceig.hpp"
#include "oracles.hpp"

using namespace cone_breaker;
using std::numbers::pi;

namespace {

struct Check {
  bool pass = true;
  std::string detail;
};

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

std::vector<double> sweep_grid() { return log_grid(1e-3, 1e3, 301); }

Check multiplier_constancy() {
  Check v;
  double worst = 0.0;
  for (const auto& t : oracle::sweep()) {
    const auto m = lagrange_multiplier(derive_exponents(t.n, t.p, t.sigma), sweep_grid());
    worst = std::max(worst, m.max_dev);
  }
  const auto m = lagrange_multiplier(derive_exponents(3, 2.0, 1.0), sweep_grid());
  const double err3 = std::abs(m.lambda_w - 3.0);
  v.pass = worst < 1e-8 && err3 < 1e-10;
  v.detail = "max deviation " + sci(worst) + " (< 1e-8), |lambda_w(3,2,1) - 3| " + sci(err3) + " (< 1e-10)";
  return v;
}

Check ode_residual_check() {
  Check v;
  double worst = 0.0;
  double weakest_perturbed = 1e300;
  for (const auto& t : oracle::sweep()) {
    auto prof = make_profile(derive_exponents(t.n, t.p, t.sigma));
    worst = std::max(worst, ode_residual(prof, sweep_grid()).max_rel_residual);
    prof.C *= 1.1;
    weakest_perturbed = std::min(weakest_perturbed, ode_residual(prof, sweep_grid()).max_rel_residual);
  }
  v.pass = worst < 1e-8 && weakest_perturbed > 1e-2;
  v.detail = "max residual " + sci(worst) + " (< 1e-8), with 1.1 C min residual " + sci(weakest_perturbed) +
             " (> 1e-2)";
  return v;
}

Check nehari_identity() {
  Check v;
  double worst = 0.0;
  for (const auto& t : oracle::sweep()) {
    worst = std::max(worst, radial_integrals(make_profile(derive_exponents(t.n, t.p, t.sigma))).nehari_defect);
  }
  const double exact = 3.0 * std::sqrt(3.0) * pi / 16.0;
  const double Ig = radial_integrals(make_profile(derive_exponents(3, 2.0, 1.0))).I_grad;
  const double rel = std::abs(Ig - exact) / exact;
  v.pass = worst < 1e-6 && rel < 1e-8;
  v.detail = "max defect " + sci(worst) + " (< 1e-6), I_grad(3,2,1) vs 3 sqrt(3) pi/16 rel " + sci(rel) + " (< 1e-8)";
  return v;
}

Check quotient_oracle() {
  Check v;
  const auto d = derive_exponents(3, 2.0, 1.0);
  const auto I = radial_integrals(make_profile(d));
  const double full = quotient_radial(d, I, sphere_measures(3).full);
  const double half = quotient_radial(d, I, sphere_measures(3).half);
  const double expected = 3.0 * std::pow(pi / 2.0, 4.0 / 3.0);
  const double rel = std::abs(full - expected) / expected;
  const double ratio_err = std::abs(half / full - std::pow(2.0, -2.0 / 3.0));
  v.pass = rel < 1e-6 && ratio_err < 1e-10;
  v.detail = "Q_full " + std::to_string(full) + " vs 3 (pi/2)^{4/3} rel " + sci(rel) + " (< 1e-6), half/full - 2^{-2/3} " +
             sci(ratio_err) + " (< 1e-10)";
  return v;
}

Check proposition_residual_check() {
  Check v;
  double worst = 0.0;
  double weakest_perturbed = 1e300;
  for (const auto& t : oracle::sweep()) {
    const auto prof = make_profile(derive_exponents(t.n, t.p, t.sigma));
    worst = std::max(worst, proposition_residual(prof, sweep_grid()).max_rel_residual);
    weakest_perturbed = std::min(
        weakest_perturbed, proposition_residual(prof, sweep_grid(), prof.derived.Lambda_star + 0.1).max_rel_residual);
  }
  v.pass = worst < 1e-8 && weakest_perturbed > 1e-3;
  v.detail = "max residual " + sci(worst) + " (< 1e-8), with Lambda*+0.1 min residual " + sci(weakest_perturbed) +
             " (> 1e-3)";
  return v;
}

Check integration_by_parts() {
  Check v;
  double worst = 0.0;
  int sign_failures = 0;
  for (const auto& t : oracle::sweep()) {
    const auto prof = make_profile(derive_exponents(t.n, t.p, t.sigma));
    const auto A = second_variation_integrals(prof);
    const double th = prof.derived.threshold;
    for (double k : {0.5, 0.99, 1.01, 2.0}) {
      const auto rep = second_variation(prof, A, k * th, sphere_measures(t.n).half);
      worst = std::max(worst, rep.identity_residual);
      const double expected_sign = k * th + prof.derived.Lambda_star;
      if ((rep.d2j < 0.0) != (expected_sign < 0.0) || rep.d2j == 0.0) {
        ++sign_failures;
      }
    }
  }
  v.pass = worst < 1e-6 && sign_failures == 0;
  v.detail = "max identity residual " + sci(worst) + " (< 1e-6), sign mismatches " + std::to_string(sign_failures) +
             " of 48";
  return v;
}

Check eigenvalue_benchmarks() {
  Check v;
  const auto t0 = std::chrono::steady_clock::now();
  double arc_err = 0.0;
  for (double th = 0.25; th < 6.28; th += 0.25) {
    const double exact = (pi / th) * (pi / th);
    arc_err = std::max(arc_err, std::abs(lambda1_arc(th).lambda1 - exact) / exact);
  }
  const auto c3 = lambda1_cap(CapSpec{3, pi / 2}, 512);
  const auto c4 = lambda1_cap(CapSpec{4, pi / 2}, 512);
  const auto cpi = lambda1_cap(CapSpec{3, pi - 1e-3}, 512);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double e3 = std::abs(c3.lambda1 - 2.0);
  const double e4 = std::abs(c4.lambda1 - 3.0);
  const double epi = std::abs(cpi.lambda1 - 2.0);
  const double order_err = std::max(std::abs(c3.observed_order - 2.0), std::abs(c4.observed_order - 2.0));
  v.pass = arc_err < 1e-12 && e3 < 1e-3 && e4 < 1e-3 && epi < 5e-3 && order_err <= 0.3 && secs < 60.0;
  std::ostringstream os;
  os << "arc rel " << sci(arc_err) << " (< 1e-12), cap(3,pi/2) " << sci(e3) << " (< 1e-3), cap(4,pi/2) " << sci(e4)
     << " (< 1e-3), cap(3,pi-1e-3) " << sci(epi) << " (< 5e-3), orders " << c3.observed_order << ", "
     << c4.observed_order << " (2 +- 0.3), " << secs << " s (< 60 s)";
  v.detail = os.str();
  return v;
}

Check verdict_boundary() {
  Check v;
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run({"scan", "--n", "2", "--p", "1.5", "--sigma", "0.9", "--scan", "arc", "--from", "0.5",
                             "--to", "6.2", "--step", "0.05", "--format", "csv"},
                            out, err);
  const double flip = pi / std::sqrt(derive_exponents(2, 1.5, 0.9).threshold);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  double prev_x = 0.0;
  bool prev_breaks = false;
  bool first = true;
  int flips = 0;
  double lo = 0.0;
  double hi = 0.0;
  bool ordered = true;
  while (std::getline(in, line)) {
    const double x = std::stod(line.substr(0, line.find(',')));
    const bool breaks = line.find(",Breaks,") != std::string::npos;
    if (!first) {
      ordered = ordered && x > prev_x;
      if (breaks != prev_breaks) {
        ++flips;
        lo = prev_x;
        hi = x;
        ordered = ordered && !prev_breaks;  // Inconclusive below, Breaks above
      }
    }
    prev_x = x;
    prev_breaks = breaks;
    first = false;
  }
  v.pass = code == 0 && flips == 1 && ordered && lo < flip && flip <= hi && hi - lo <= 0.05 + 1e-12;
  std::ostringstream os;
  os << "single flip between " << lo << " and " << hi << ", analytic " << flip << " (within one 0.05 step)";
  v.detail = os.str();
  return v;
}

Check constructive_breaking() {
  Check v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = derive_exponents(2, 1.5, 0.9);
  const auto mesh = make_sector_mesh(5.0, 8.0, 128, 64);
  MinimizeConfig cfg;
  cfg.eps_reg = 1e-8;
  try {
    const auto rep = run_breaking_experiment(mesh, make_profile(d), cfg).second;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double consistency = std::abs(rep.Q_interp_h - rep.Q_continuum) / rep.Q_continuum;
    v.pass = rep.Q_min_h < rep.Q_radial_h * (1.0 - 1e-4) && rep.asym > 0.01 && rep.converged && secs < 600.0 &&
             consistency < 0.02;
    std::ostringstream os;
    os.precision(10);
    os << "Q_min_h " << rep.Q_min_h << " < Q_radial_h " << rep.Q_radial_h << " (1 - 1e-4), asym " << rep.asym
       << " (> 0.01), converged " << (rep.converged ? "true" : "false") << ", " << secs
       << " s (< 600 s), interpolant vs continuum rel " << sci(consistency) << " (< 0.02)";
    v.detail = os.str();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  return v;
}

Check gradient_checks() {
  Check v;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> val(0.2, 1.2);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto mesh = make_sector_mesh(5.0, 8.0, 24, 16);
  const auto ev = assemble(mesh, derive_exponents(2, 1.5, 0.9), 1e-8);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(mesh.node_count());
    std::vector<double> dir(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
      u[k] = val(rng);
      dir[k] = nd(rng);
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
    worst = std::max({worst, std::abs(dE - fdE) / std::abs(fdE), std::abs(dM - fdM) / std::abs(fdM)});
  }
  v.pass = worst < 1e-5;
  v.detail = "worst relative mismatch over 20 fields " + sci(worst) + " (< 1e-5)";
  return v;
}

Check determinism() {
  Check v;
  const std::vector<std::vector<std::string>> cmds = {
      {"derive", "--n", "3", "--p", "2", "--sigma", "1"},
      {"radial-check", "--n", "2", "--p", "1.5", "--sigma", "0.9"},
      {"verdict", "--n", "3", "--p", "2", "--sigma", "1", "--cap", "1.2"},
      {"scan", "--n", "2", "--p", "1.5", "--sigma", "0.9", "--scan", "arc", "--from", "0.5", "--to", "6.2", "--step",
       "0.05", "--format", "csv"},
      {"scan", "--n", "3", "--p", "2", "--sigma", "1", "--scan", "cap", "--from", "0.3", "--to", "3.1", "--step",
       "0.2"},
      {"minimize", "--n", "2", "--p", "1.5", "--sigma", "0.9", "--theta0", "5", "--nrho", "32", "--nphi", "16"}};
  int mismatches = 0;
  int failures = 0;
  for (const auto& base : cmds) {
    std::string first;
    for (const char* jobs : {"1", "8", "1", "8"}) {
      auto args = base;
      args.insert(args.end(), {"--jobs", jobs});
      std::ostringstream out;
      std::ostringstream err;
      if (cli::run(args, out, err) != 0) {
        ++failures;
      }
      if (first.empty()) {
        first = out.str();
      } else if (out.str() != first) {
        ++mismatches;
      }
    }
  }
  v.pass = mismatches == 0 && failures == 0;
  v.detail = std::to_string(cmds.size()) + " subcommand runs x 4 (jobs 1/8/1/8): " + std::to_string(mismatches) +
             " byte mismatches, " + std::to_string(failures) + " failed runs";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
      {"multiplier constancy", multiplier_constancy},
      {"ODE residual of normalized profile", ode_residual_check},
      {"Nehari identity", nehari_identity},
      {"quotient oracle", quotient_oracle},
      {"eigen-direction residual", proposition_residual_check},
      {"integration-by-parts identity and d2j sign", integration_by_parts},
      {"eigenvalue benchmarks", eigenvalue_benchmarks},
      {"verdict boundary on arc scan", verdict_boundary},
      {"constructive breaking on 128x64 sector", constructive_breaking},
      {"energy and mass gradient checks", gradient_checks},
      {"determinism across --jobs", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Check v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %zu %s: %s\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
