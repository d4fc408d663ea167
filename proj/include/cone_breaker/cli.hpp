#pragma once

// Command-line front end. Everything goes through run(), which takes the
// argument vector and output streams so tests can drive it in-process.
//
// Subcommands: derive, radial-check, verdict, scan, minimize.
// Exit codes: 0 success, 1 checks failed / no convergence, 2 usage or domain error.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/params.hpp"
#include "cone_breaker/parallel.hpp"
#include "cone_breaker/quad.hpp"
#include "cone_breaker/radial.hpp"
#include "cone_breaker/secondvar.hpp"
#include "cone_breaker/sectorfem.hpp"
#include "cone_breaker/speceig.hpp"

namespace cone_breaker::cli {

using json = nlohmann::ordered_json;

enum class DomainKind { None, Arc, Cap, User, MeasureOnly };

inline std::string to_string(DomainKind k) {
  switch (k) {
    case DomainKind::None:
      return "none";
    case DomainKind::Arc:
      return "arc";
    case DomainKind::Cap:
      return "cap";
    case DomainKind::User:
      return "user";
    case DomainKind::MeasureOnly:
      return "measure";
  }
  return "none";
}

/// Fully resolved options of one invocation.
struct RunConfig {
  std::string subcommand;
  std::string n_text;  ///< as typed; must be an integer
  int n = 0;
  double p = 0.0;
  double sigma = 0.0;

  std::optional<double> arc;
  std::optional<double> cap;
  std::optional<double> lambda1;
  std::optional<double> measure;
  DomainKind domain = DomainKind::None;

  int grid = 512;
  QuadConfig quad;
  std::string format = "json";
  std::string out;
  int jobs = 1;
  bool timings = false;

  // scan
  std::string scan_kind;
  std::optional<double> from;
  std::optional<double> to;
  std::optional<double> step;

  // minimize
  std::optional<double> theta0;
  double L = 8.0;
  int nrho = 128;
  int nphi = 64;
  double radial_check_tol = 1e-6;
  MinimizeConfig minimize;
  std::string preconditioner = "hessian";
  std::string field_out;
  std::string init;
};

/// Raised for usage errors detected after parsing (maps to exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline int parse_integer_n(const std::string& s) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw DomainError("--n must be an integer, got '" + s + "'");
  }
  if (pos != s.size()) {
    throw DomainError("--n must be an integer, got '" + s + "'");
  }
  if (v < 2 || v > 1000) {
    throw DomainError("--n must be an integer >= 2, got '" + s + "'");
  }
  return static_cast<int>(v);
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline json derived_json(const DerivedExponents& d) {
  return json{{"n", d.params.n},
              {"p", d.params.p},
              {"sigma", d.params.sigma},
              {"q", d.q},
              {"alpha", d.alpha},
              {"Lambda_star", d.Lambda_star},
              {"threshold", d.threshold},
              {"beta", d.beta},
              {"gamma", d.gamma},
              {"gamma_beta", d.gamma * d.beta}};
}

inline json quad_json(const QuadConfig& q) {
  return json{{"rel_tol", q.rel_tol}, {"abs_tol", q.abs_tol}, {"L0", q.L0},
              {"L_max", q.L_max},     {"max_refine", q.max_refine}, {"h0", q.h0}};
}

// `jobs` and the output path are deliberately left out: neither changes any
// number, and reports must be byte-identical across --jobs values.
inline json config_json(const RunConfig& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["n"] = c.n;
  j["p"] = c.p;
  j["sigma"] = c.sigma;
  json dom;
  dom["kind"] = to_string(c.domain);
  if (c.arc) dom["arc"] = *c.arc;
  if (c.cap) dom["cap"] = *c.cap;
  if (c.lambda1) dom["lambda1"] = *c.lambda1;
  if (c.measure) dom["measure"] = *c.measure;
  j["domain"] = dom;
  j["grid"] = c.grid;
  j["quad"] = quad_json(c.quad);
  j["format"] = c.format;
  if (c.subcommand == "radial-check") {
    j["tolerance"] = c.radial_check_tol;
  }
  if (c.subcommand == "scan") {
    j["scan"] = json{{"kind", c.scan_kind}, {"from", *c.from}, {"to", *c.to}, {"step", *c.step}};
  }
  if (c.subcommand == "minimize") {
    const auto& m = c.minimize;
    j["minimize"] = json{{"theta0", *c.theta0},
                         {"L", c.L},
                         {"nrho", c.nrho},
                         {"nphi", c.nphi},
                         {"eps_reg", m.eps_reg},
                         {"max_iter", m.max_iter},
                         {"grad_tol", m.grad_tol},
                         {"delta", m.init_perturb},
                         {"backtrack", m.backtrack},
                         {"sufficient_decrease", m.sufficient_decrease},
                         {"continuation", m.continuation},
                         {"lbfgs_memory", m.lbfgs_memory},
                         {"preconditioner", c.preconditioner},
                         {"allow_sigma1", m.allow_sigma1},
                         {"init", c.init}};
  }
  return j;
}

inline void emit_json(std::ostream& os, const RunConfig& c, const DerivedExponents& d, json results, json residuals,
                      json timings) {
  json j;
  j["config"] = config_json(c);
  j["derived"] = derived_json(d);
  j["results"] = std::move(results);
  j["residuals"] = std::move(residuals);
  j["timings"] = c.timings ? std::move(timings) : json::object();
  os << j.dump(2) << '\n';
}

// Flat key,value CSV for single-record reports.
inline void emit_kv_csv(std::ostream& os, const json& sections) {
  os << "key,value\n";
  for (const auto& [section, obj] : sections.items()) {
    for (const auto& [k, v] : obj.items()) {
      os << section << '.' << k << ',';
      if (v.is_number_float()) {
        os << fmt(v.get<double>());
      } else if (v.is_string()) {
        os << v.get<std::string>();
      } else {
        os << v.dump();
      }
      os << '\n';
    }
  }
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct DomainInfo {
  double measure = 0.0;
  std::optional<EigResult> eig;
};

// lambda_1 and |D| for the configured domain.
inline DomainInfo resolve_domain(const RunConfig& c) {
  DomainInfo info;
  switch (c.domain) {
    case DomainKind::Arc:
      if (c.n != 2) {
        throw DomainError("--arc needs n = 2");
      }
      info.measure = arc_measure(*c.arc);
      info.eig = lambda1_arc(*c.arc);
      break;
    case DomainKind::Cap:
      if (c.n < 3) {
        throw DomainError("--cap needs n >= 3");
      }
      info.measure = cap_measure(c.n, *c.cap);
      info.eig = lambda1_cap(CapSpec{c.n, *c.cap}, c.grid);
      break;
    case DomainKind::User:
      info.measure = c.measure ? *c.measure : 0.0;
      if (c.measure && !(*c.measure > 0.0)) {
        throw DomainError("--measure must be positive");
      }
      info.eig = lambda1_user(*c.lambda1);
      break;
    case DomainKind::MeasureOnly:
      if (!(*c.measure > 0.0)) {
        throw DomainError("--measure must be positive");
      }
      info.measure = *c.measure;
      break;
    case DomainKind::None:
      break;
  }
  return info;
}

inline json eig_json(const EigResult& e) {
  json j{{"lambda1", e.lambda1}, {"branch", to_string(e.branch)}, {"lambda1_err", e.err_est}};
  if (e.branch == EigBranch::AxisymmetricSecond || e.branch == EigBranch::AzimuthalFirst) {
    j["N"] = e.N;
    j["lambda1_coarse"] = e.lambda1_coarse;
    j["lambda1_fine"] = e.lambda1_fine;
    j["observed_order"] = e.observed_order;
    j["axisymmetric_second"] = e.axisymmetric;
    j["azimuthal_first"] = e.azimuthal;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_derive(const RunConfig& c, std::ostream& os) {
  const auto d = derive_exponents(c.n, c.p, c.sigma);
  if (c.format == "csv") {
    const json j = derived_json(d);
    bool first = true;
    for (const auto& [k, v] : j.items()) {
      os << (first ? "" : ",") << k;
      first = false;
    }
    os << '\n';
    first = true;
    for (const auto& [k, v] : j.items()) {
      os << (first ? "" : ",") << (v.is_number_float() ? fmt(v.get<double>()) : v.dump());
      first = false;
    }
    os << '\n';
    return 0;
  }
  emit_json(os, c, d, json::object(), json::object(), json::object());
  return 0;
}

inline int cmd_radial_check(const RunConfig& c, std::ostream& os) {
  Stopwatch sw;
  const auto d = derive_exponents(c.n, c.p, c.sigma);
  const auto grid = log_grid(1e-3, 1e3, 201);
  const auto mult = lagrange_multiplier(d, grid);
  const auto prof = normalize(d, mult.lambda_w);
  const auto ode = ode_residual(prof, grid);
  const auto prop = proposition_residual(prof, grid);
  const auto I = radial_integrals(prof, c.quad);
  const auto A = second_variation_integrals(prof, c.quad);
  const double p = d.params.p;
  const double q = d.q;
  const double identity = std::abs((p - 1.0) * A.A1 - (q - 1.0) * A.A3 - d.Lambda_star * A.A2) /
                          ((p - 1.0) * A.A1 + (q - 1.0) * A.A3 + std::abs(d.Lambda_star) * A.A2);
  const double t_total = sw.seconds();

  const double measure = (c.domain == DomainKind::None) ? sphere_measures(c.n).full : resolve_domain(c).measure;
  if (!(measure > 0.0)) {
    throw DomainError("radial-check needs a positive domain measure");
  }

  json results{{"lambda_w", mult.lambda_w},
               {"C", prof.C},
               {"I_grad", I.I_grad},
               {"I_mass", I.I_mass},
               {"A1", A.A1},
               {"A2", A.A2},
               {"A3", A.A3},
               {"D_measure", measure},
               {"quotient_radial", quotient_radial(d, I, measure)},
               {"nehari_energy", nehari_energy(I.I_grad, I.I_mass, d, measure)}};
  json residuals{{"multiplier_deviation", mult.max_dev},
                 {"ode", ode.max_rel_residual},
                 {"nehari_defect", I.nehari_defect},
                 {"proposition", prop.max_rel_residual},
                 {"identity", identity}};
  bool ok = true;
  for (const auto& [k, v] : residuals.items()) {
    ok = ok && (v.get<double>() < c.radial_check_tol);
  }
  results["pass"] = ok;
  if (c.format == "csv") {
    emit_kv_csv(os, json{{"results", results}, {"residuals", residuals}});
  } else {
    emit_json(os, c, d, results, residuals, json{{"total_s", t_total}});
  }
  return ok ? 0 : 1;
}

inline int cmd_verdict(const RunConfig& c, std::ostream& os) {
  Stopwatch sw;
  const auto d = derive_exponents(c.n, c.p, c.sigma);
  if (c.domain == DomainKind::None || c.domain == DomainKind::MeasureOnly) {
    throw UsageError("verdict needs lambda_1: use --arc, --cap or --lambda1");
  }
  const auto info = resolve_domain(c);
  const auto& eig = *info.eig;
  const auto prof = make_profile(d);
  const auto A = second_variation_integrals(prof, c.quad);
  const Verdict v = breaking_verdict(eig.lambda1, d, eig.err_est);

  json results = eig_json(eig);
  results["threshold"] = d.threshold;
  results["verdict"] = to_string(v);
  json residuals = json::object();
  if (info.measure > 0.0) {
    const auto rep = second_variation(prof, A, eig.lambda1, info.measure, eig.err_est);
    const auto I = radial_integrals(prof, c.quad);
    results["D_measure"] = info.measure;
    results["d2j"] = rep.d2j;
    results["d2j_shortcut"] = rep.d2j_shortcut;
    results["negative_directions"] = rep.negative_directions;
    results["quotient_radial"] = quotient_radial(d, I, info.measure);
    if (c.sigma == 1.0) {
      results["sufficient_condition_sigma1"] = sufficient_condition_sigma1(c.n, c.p, info.measure);
    }
    residuals["identity"] = rep.identity_residual;
    residuals["flux_left"] = rep.flux_left;
    residuals["flux_right"] = rep.flux_right;
  } else {
    // no |D|: report the second variation per unit measure
    results["d2j_per_unit_measure"] = (eig.lambda1 + d.Lambda_star) * A.A2;
  }
  results["A1"] = A.A1;
  results["A2"] = A.A2;
  results["A3"] = A.A3;
  if (c.format == "csv") {
    emit_kv_csv(os, json{{"results", results}, {"residuals", residuals}});
  } else {
    emit_json(os, c, d, results, residuals, json{{"total_s", sw.seconds()}});
  }
  return 0;
}

struct ScanRow {
  double param = 0.0;
  double measure = 0.0;
  double lambda1 = 0.0;
  std::string branch;
  std::string verdict;
  double d2j = 0.0;
  std::optional<bool> sufficient;
};

inline int cmd_scan(const RunConfig& c, std::ostream& os) {
  Stopwatch sw;
  const auto d = derive_exponents(c.n, c.p, c.sigma);
  if (c.scan_kind == "arc" && c.n != 2) {
    throw DomainError("arc scan needs n = 2");
  }
  if (c.scan_kind == "cap" && c.n < 3) {
    throw DomainError("cap scan needs n >= 3");
  }
  const double from = *c.from;
  const double to = *c.to;
  const double step = *c.step;
  if (!(step > 0.0) || !(to >= from) || !std::isfinite(from) || !std::isfinite(to)) {
    throw UsageError("empty scan range: need step > 0 and --to >= --from");
  }
  // count points by index so the grid is exact and independent of rounding drift
  const auto count = static_cast<std::size_t>(std::floor((to - from) / step * (1.0 + 1e-12) + 1e-9)) + 1;
  if (count > 100000) {
    throw UsageError("scan range has too many points");
  }
  const auto prof = make_profile(d);
  const auto A = second_variation_integrals(prof, c.quad);

  std::vector<ScanRow> rows(count);
  parallel_for(count, c.jobs, [&](std::size_t i) {
    const double x = from + static_cast<double>(i) * step;
    ScanRow r;
    r.param = x;
    EigResult e;
    if (c.scan_kind == "arc") {
      r.measure = arc_measure(x);
      e = lambda1_arc(x);
    } else {
      r.measure = cap_measure(c.n, x);
      e = lambda1_cap(CapSpec{c.n, x}, c.grid);
    }
    r.lambda1 = e.lambda1;
    r.branch = to_string(e.branch);
    r.verdict = to_string(breaking_verdict(e.lambda1, d, e.err_est));
    r.d2j = second_variation(prof, A, e.lambda1, r.measure, e.err_est).d2j;
    if (c.sigma == 1.0) {
      r.sufficient = sufficient_condition_sigma1(c.n, c.p, r.measure);
    }
    rows[i] = std::move(r);
  });

  const std::string pname = (c.scan_kind == "arc") ? "theta0" : "Theta";
  if (c.format == "csv") {
    os << pname << ",measure,lambda1,branch,threshold,verdict,d2j";
    if (c.sigma == 1.0) {
      os << ",sufficient_condition_sigma1";
    }
    os << '\n';
    for (const auto& r : rows) {
      os << fmt(r.param) << ',' << fmt(r.measure) << ',' << fmt(r.lambda1) << ',' << r.branch << ','
         << fmt(d.threshold) << ',' << r.verdict << ',' << fmt(r.d2j);
      if (r.sufficient) {
        os << ',' << (*r.sufficient ? "true" : "false");
      }
      os << '\n';
    }
    return 0;
  }
  json arr = json::array();
  for (const auto& r : rows) {
    json jr{{pname, r.param},      {"measure", r.measure}, {"lambda1", r.lambda1}, {"branch", r.branch},
            {"threshold", d.threshold}, {"verdict", r.verdict}, {"d2j", r.d2j}};
    if (r.sufficient) {
      jr["sufficient_condition_sigma1"] = *r.sufficient;
    }
    arr.push_back(std::move(jr));
  }
  emit_json(os, c, d, json{{"rows", arr}}, json::object(), json{{"total_s", sw.seconds()}});
  return 0;
}

inline int cmd_minimize(const RunConfig& c, std::ostream& os, std::ostream& err) {
  Stopwatch sw;
  const auto d = derive_exponents(c.n, c.p, c.sigma);
  if (c.n != 2) {
    throw DomainError("minimize is implemented for n = 2 only");
  }
  const double theta0 = *c.theta0;
  const auto mesh = make_sector_mesh(theta0, c.L, c.nrho, c.nphi);
  const auto prof = make_profile(d);
  std::optional<DiscreteField> init;
  if (!c.init.empty()) {
    std::ifstream in(c.init);
    if (!in) {
      throw UsageError("cannot open --init file '" + c.init + "'");
    }
    init = read_field_csv(in);
  }
  MinimizeConfig mc = c.minimize;
  mc.jobs = c.jobs;

  DiscreteField field;
  BreakingExperimentReport rep;
  try {
    auto res = run_breaking_experiment(mesh, prof, mc, c.quad, init ? &*init : nullptr);
    field = std::move(res.first);
    rep = std::move(res.second);
  } catch (const NoConvergence& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  const auto eig = lambda1_arc(theta0);
  json results{{"lambda1", eig.lambda1},
               {"threshold", d.threshold},
               {"verdict", to_string(breaking_verdict(eig.lambda1, d))},
               {"Q_continuum", rep.Q_continuum},
               {"Q_interp_h", rep.Q_interp_h},
               {"Q_radial_h", rep.Q_radial_h},
               {"Q_min_h", rep.Q_min_h},
               {"delta_Q", rep.Q_radial_h - rep.Q_min_h},
               {"asym", rep.asym},
               {"iterations", rep.iterations},
               {"radial_iterations", rep.radial_iterations},
               {"converged", rep.converged},
               {"radial_converged", rep.radial_converged},
               {"monotone", rep.monotone},
               {"warnings", rep.warnings}};
  json residuals{{"rel_grad", rep.rel_grad},
                 {"radial_rel_grad", rep.radial_rel_grad},
                 {"interp_vs_continuum", std::abs(rep.Q_interp_h - rep.Q_continuum) / rep.Q_continuum}};
  for (const auto& w : rep.warnings) {
    err << "warning: " << w << '\n';
  }
  if (!c.field_out.empty()) {
    std::ofstream fo(c.field_out);
    if (!fo) {
      throw UsageError("cannot write --field-out file '" + c.field_out + "'");
    }
    write_field_csv(fo, field);
  }
  if (c.format == "csv") {
    emit_kv_csv(os, json{{"results", results}, {"residuals", residuals}});
  } else {
    emit_json(os, c, d, results, residuals, json{{"total_s", sw.seconds()}});
  }
  return 0;
}

}  // namespace detail

/// Parse arguments (argv[0] is the program name) and run. Output goes to
/// `out` unless --out names a file; diagnostics go to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Symmetry-breaking toolkit for Hardy-Sobolev minimizers on cones", "cone_breaker"};
  app.set_config("--config", "", "read options from a key=value file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  app.add_option("--n", c.n_text, "dimension (integer >= 2)");
  app.add_option("--p", c.p, "exponent p, 1 < p < n");
  app.add_option("--sigma", c.sigma, "Hardy-Sobolev parameter, 0 < sigma <= 1");
  auto* o_arc = app.add_option("--arc", c.arc, "planar sector / arc of angle theta0 (n = 2)");
  auto* o_cap = app.add_option("--cap", c.cap, "geodesic cap of opening Theta (n >= 3)");
  auto* o_l1 = app.add_option("--lambda1", c.lambda1, "user-supplied lambda_1");
  auto* o_meas = app.add_option("--measure", c.measure, "domain measure |D| (alone, or with --lambda1)");
  app.add_option("--grid", c.grid, "cap eigen-solver grid N (N and 2N are used)")->check(CLI::Range(64, 1 << 20));
  app.add_option("--quad-rel-tol", c.quad.rel_tol, "quadrature relative tolerance");
  app.add_option("--quad-abs-tol", c.quad.abs_tol, "quadrature absolute tolerance");
  app.add_option("--quad-L0", c.quad.L0, "initial log-radius window");
  app.add_option("--quad-Lmax", c.quad.L_max, "maximal log-radius window");
  app.add_option("--quad-max-refine", c.quad.max_refine, "maximal panel doublings");
  app.add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--out", c.out, "write the report to this file instead of stdout");
  app.add_option("--jobs", c.jobs, "worker threads")->envname("CONE_BREAKER_JOBS");
  app.add_flag("--timings", c.timings, "include wall-clock timings in JSON reports (not reproducible)");
  app.add_option("--tol", c.radial_check_tol, "radial-check: residual tolerance");

  app.add_option("--scan", c.scan_kind, "scan: arc or cap")->check(CLI::IsMember({"arc", "cap"}));
  app.add_option("--from", c.from, "scan: first parameter value");
  app.add_option("--to", c.to, "scan: last parameter value");
  app.add_option("--step", c.step, "scan: step");

  app.add_option("--theta0", c.theta0, "minimize: sector angle (same as --arc)");
  app.add_option("--L", c.L, "minimize: log-radius half-width");
  app.add_option("--nrho", c.nrho, "minimize: cells in rho");
  app.add_option("--nphi", c.nphi, "minimize: cells in phi");
  app.add_option("--eps-reg", c.minimize.eps_reg, "minimize: gradient regularization");
  app.add_option("--max-iter", c.minimize.max_iter, "minimize: iteration budget per stage");
  app.add_option("--grad-tol", c.minimize.grad_tol, "minimize: relative gradient tolerance");
  app.add_option("--delta", c.minimize.init_perturb, "minimize: initial perturbation size");
  app.add_option("--continuation", c.minimize.continuation, "minimize: eps_reg stages run first")->delimiter(',');
  app.add_option("--lbfgs-memory", c.minimize.lbfgs_memory, "minimize: stored curvature pairs");
  app.add_option("--preconditioner", c.preconditioner, "minimize: hessian or jacobi")
      ->check(CLI::IsMember({"hessian", "jacobi"}));
  app.add_flag("--allow-sigma1", c.minimize.allow_sigma1, "minimize: permit sigma = 1 (attainability not covered)");
  app.add_option("--field-out", c.field_out, "minimize: write the minimizer as a CSV grid");
  app.add_option("--init", c.init, "minimize: start from this CSV grid");

  const std::vector<std::string> names = {"derive", "radial-check", "verdict", "scan", "minimize"};
  const std::vector<std::string> help = {"print derived exponents and the breaking threshold",
                                         "verify the radial profile's identities and residuals",
                                         "lambda_1, threshold and breaking verdict for one domain",
                                         "verdict table over a range of arc or cap openings",
                                         "minimize the discrete quotient on a planar sector"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    app.add_subcommand(names[i], help[i])->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return 2;
  }

  for (const auto& nm : names) {
    if (app.got_subcommand(nm)) {
      c.subcommand = nm;
    }
  }

  std::ostringstream buffer;
  int code = 0;
  try {
    if (c.n_text.empty()) {
      throw UsageError("--n is required");
    }
    c.n = detail::parse_integer_n(c.n_text);
    // checked here rather than by a CLI11 validator, which would silently drop a bad environment value
    if (c.jobs < 1 || c.jobs > 1024) {
      throw UsageError("--jobs must lie in [1, 1024]");
    }
    if (app.count("--p") == 0 || app.count("--sigma") == 0) {
      throw UsageError("--p and --sigma are required");
    }
    validate(c.n, c.p, c.sigma);
    check_config(c.quad);

    const bool has_arc = o_arc->count() > 0;
    const bool has_cap = o_cap->count() > 0;
    const bool has_l1 = o_l1->count() > 0;
    const bool has_meas = o_meas->count() > 0;
    const int kinds = int(has_arc) + int(has_cap) + int(has_l1) + int(has_meas && !has_l1);
    if (kinds > 1) {
      throw UsageError("give exactly one domain: --arc, --cap, --lambda1 [--measure] or --measure");
    }
    if (has_arc) {
      c.domain = DomainKind::Arc;
    } else if (has_cap) {
      c.domain = DomainKind::Cap;
    } else if (has_l1) {
      c.domain = DomainKind::User;
    } else if (has_meas) {
      c.domain = DomainKind::MeasureOnly;
    }

    if (c.subcommand == "derive") {
      code = detail::cmd_derive(c, buffer);
    } else if (c.subcommand == "radial-check") {
      code = detail::cmd_radial_check(c, buffer);
    } else if (c.subcommand == "verdict") {
      code = detail::cmd_verdict(c, buffer);
    } else if (c.subcommand == "scan") {
      if (c.scan_kind.empty() || !c.from || !c.to || !c.step) {
        throw UsageError("scan needs --scan arc|cap, --from, --to and --step");
      }
      code = detail::cmd_scan(c, buffer);
    } else if (c.subcommand == "minimize") {
      if (c.theta0 && c.arc && *c.theta0 != *c.arc) {
        throw UsageError("--theta0 and --arc disagree");
      }
      if (!c.theta0) {
        c.theta0 = c.arc;
      }
      if (!c.theta0) {
        throw UsageError("minimize needs --theta0 (or --arc)");
      }
      c.domain = DomainKind::Arc;
      c.arc = c.theta0;
      c.minimize.preconditioner =
          (c.preconditioner == "jacobi") ? Preconditioner::Jacobi : Preconditioner::EnergyHessian;
      code = detail::cmd_minimize(c, buffer, err);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    // includes NoConvergence
    err << "error: " << e.what() << '\n';
    return 1;
  }

  if (c.out.empty()) {
    out << buffer.str();
  } else {
    std::ofstream f(c.out, std::ios::binary);
    if (!f) {
      err << "error: cannot write '" << c.out << "'\n";
      return 2;
    }
    f << buffer.str();
  }
  return code;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("cone_breaker");
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cone_breaker::cli
