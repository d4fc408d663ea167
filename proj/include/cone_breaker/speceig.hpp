#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "cone_breaker/errors.hpp"
#include "cone_breaker/quad.hpp"

namespace cone_breaker {

enum class EigBranch { AxisymmetricSecond, AzimuthalFirst, AnalyticArc, UserSupplied };

inline std::string to_string(EigBranch b) {
  switch (b) {
    case EigBranch::AxisymmetricSecond:
      return "axisymmetric-second";
    case EigBranch::AzimuthalFirst:
      return "azimuthal-first";
    case EigBranch::AnalyticArc:
      return "analytic-arc";
    case EigBranch::UserSupplied:
      return "user-supplied";
  }
  return "unknown";
}

/// Geodesic cap {theta < Theta} on S^{n-1}.
struct CapSpec {
  int n = 3;
  double Theta = std::numbers::pi / 2;
};

/// First nonzero Neumann eigenvalue of the Laplace-Beltrami operator on D.
struct EigResult {
  double lambda1 = 0.0;         ///< value used downstream (extrapolated for caps)
  EigBranch branch = EigBranch::UserSupplied;
  int N = 0;                    ///< coarse grid size (fine grid is 2N)
  double lambda1_coarse = 0.0;  ///< raw value on the N grid
  double lambda1_fine = 0.0;    ///< raw value on the 2N grid
  double lambda1_extrap = 0.0;
  double err_est = 0.0;
  double observed_order = 0.0;  ///< from grids N/2, N, 2N (caps only)
  double axisymmetric = 0.0;    ///< extrapolated m = 0 branch value (caps only)
  double azimuthal = 0.0;       ///< extrapolated m = 1 branch value (caps only)
};

/// Symmetric tridiagonal matrix: diag[0..m), off[i] couples i and i+1.
struct SymTridiag {
  std::vector<double> diag;
  std::vector<double> off;

  std::size_t size() const { return diag.size(); }

  /// Number of eigenvalues strictly below x (Sturm sequence / LDL^T inertia).
  std::size_t count_below(double x) const {
    std::size_t count = 0;
    double q = 1.0;
    const double tiny = std::numeric_limits<double>::min();
    for (std::size_t i = 0; i < diag.size(); ++i) {
      const double e2 = (i == 0) ? 0.0 : off[i - 1] * off[i - 1];
      q = diag[i] - x - ((i == 0) ? 0.0 : e2 / q);
      if (q == 0.0) {
        q = -tiny;
      }
      if (q < 0.0) {
        ++count;
      }
    }
    return count;
  }

  /// k-th smallest eigenvalue (k = 0 is the lowest), by bisection.
  double eigenvalue(std::size_t k) const {
    if (k >= size()) {
      throw DomainError("eigenvalue index out of range");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < size(); ++i) {
      const double r = ((i > 0) ? std::abs(off[i - 1]) : 0.0) + ((i + 1 < size()) ? std::abs(off[i]) : 0.0);
      lo = std::min(lo, diag[i] - r);
      hi = std::max(hi, diag[i] + r);
    }
    for (int it = 0; it < 300; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) {
        break;
      }
      if (count_below(mid) > k) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return 0.5 * (lo + hi);
  }
};

namespace detail {

inline double cell_integral_sin_power(double k, double a, double b) {
  auto f = [k](double t) { return std::pow(std::sin(t), k); };
  return gauss_panel(f, a, b);
}

}  // namespace detail

/// Finite-volume discretization on the uniform grid theta_i = i Theta / N of
///   -(s phi')' + m(m+n-3) s phi / sin^2 = lambda s phi,  s = sin^{n-2},
/// with zero flux at Theta. For m = 0 node 0 keeps a half cell with zero flux
/// (the natural condition at the pole); for m >= 1 phi = 0 at node 0.
/// Returns the diagonal-mass-scaled standard form M^{-1/2} K M^{-1/2}.
inline SymTridiag cap_branch_matrix(int n, double Theta, int N, int m) {
  if (n < 3) {
    throw DomainError("cap eigenproblem needs n >= 3");
  }
  if (!(Theta > 0.0 && Theta < std::numbers::pi)) {
    throw DomainError("cap opening must lie in (0, pi)");
  }
  if (N < 4 || m < 0) {
    throw DomainError("cap eigenproblem needs N >= 4 and m >= 0");
  }
  const double h = Theta / N;
  const double k = n - 2.0;
  const double potential = m * (m + n - 3.0);

  const int first = (m == 0) ? 0 : 1;
  const std::size_t size = static_cast<std::size_t>(N - first + 1);
  std::vector<double> K_diag(size, 0.0);
  std::vector<double> K_off(size > 0 ? size - 1 : 0, 0.0);
  std::vector<double> M(size, 0.0);

  for (int i = first; i <= N; ++i) {
    const std::size_t j = static_cast<std::size_t>(i - first);
    const double a = std::max(0.0, (i - 0.5) * h);
    const double b = std::min(Theta, (i + 0.5) * h);
    M[j] = detail::cell_integral_sin_power(k, a, b);
    if (potential > 0.0) {
      K_diag[j] += potential * detail::cell_integral_sin_power(k - 2.0, a, b);
    }
    if (i > 0) {
      // flux through theta_{i-1/2}; for m >= 1 and i = 1 the neighbour is the
      // Dirichlet node and only the diagonal part survives
      const double c = std::pow(std::sin((i - 0.5) * h), k) / h;
      K_diag[j] += c;
      if (i - 1 >= first) {
        K_diag[j - 1] += c;
        K_off[j - 1] = -c;
      }
    }
  }

  SymTridiag A;
  A.diag.resize(size);
  A.off.resize(K_off.size());
  for (std::size_t j = 0; j < size; ++j) {
    A.diag[j] = K_diag[j] / M[j];
    if (j + 1 < size) {
      A.off[j] = K_off[j] / std::sqrt(M[j] * M[j + 1]);
    }
  }
  return A;
}

/// The idx-th eigenvalue of azimuthal branch m on an N grid.
inline double cap_branch_eigenvalue(int n, double Theta, int N, int m, std::size_t idx) {
  return cap_branch_matrix(n, Theta, N, m).eigenvalue(idx);
}

/// lambda_1 of a circular arc of length theta0: (pi / theta0)^2.
inline EigResult lambda1_arc(double theta0) {
  arc_measure(theta0);  // range check
  const double v = std::pow(std::numbers::pi / theta0, 2);
  EigResult r;
  r.lambda1 = r.lambda1_coarse = r.lambda1_fine = r.lambda1_extrap = v;
  r.branch = EigBranch::AnalyticArc;
  return r;
}

/// Passthrough for domains the library does not mesh.
inline EigResult lambda1_user(double value) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw DomainError("user-supplied lambda_1 must be positive");
  }
  EigResult r;
  r.lambda1 = r.lambda1_coarse = r.lambda1_fine = r.lambda1_extrap = value;
  r.branch = EigBranch::UserSupplied;
  return r;
}

/// lambda_1 of the cap: minimum of the second m = 0 eigenvalue and the first
/// m = 1 eigenvalue, each Richardson-extrapolated from grids N and 2N.
/// Modes m >= 2 are not considered: their potential dominates m = 1 pointwise.
inline EigResult lambda1_cap(const CapSpec& spec, int N = 512) {
  if (N < 64) {
    throw DomainError("lambda1_cap needs N >= 64");
  }
  struct Branch {
    double coarse, fine, half, extrap;
  };
  auto solve = [&](int m, std::size_t idx) {
    Branch b{};
    b.half = cap_branch_eigenvalue(spec.n, spec.Theta, N / 2, m, idx);
    b.coarse = cap_branch_eigenvalue(spec.n, spec.Theta, N, m, idx);
    b.fine = cap_branch_eigenvalue(spec.n, spec.Theta, 2 * N, m, idx);
    b.extrap = (4.0 * b.fine - b.coarse) / 3.0;
    return b;
  };
  const Branch axi = solve(0, 1);
  const Branch azi = solve(1, 0);
  const bool use_axi = axi.extrap < azi.extrap;
  const Branch& w = use_axi ? axi : azi;

  EigResult r;
  r.branch = use_axi ? EigBranch::AxisymmetricSecond : EigBranch::AzimuthalFirst;
  r.N = N;
  r.lambda1_coarse = w.coarse;
  r.lambda1_fine = w.fine;
  r.lambda1_extrap = w.extrap;
  r.lambda1 = w.extrap;
  // raw N vs 2N gap: a conservative bar for the extrapolated value
  r.err_est = std::abs(w.fine - w.coarse);
  const double d1 = std::abs(w.half - w.coarse);
  const double d2 = std::abs(w.coarse - w.fine);
  r.observed_order = (d1 > 0.0 && d2 > 0.0) ? std::log2(d1 / d2) : 0.0;
  r.axisymmetric = axi.extrap;
  r.azimuthal = azi.extrap;

  if (std::abs(w.fine - w.coarse) > 0.1 * std::abs(w.extrap)) {
    throw NoConvergence("cap eigenvalue: grids N and 2N disagree by more than 10%", w.extrap, r.err_est);
  }
  return r;
}

}  // namespace cone_breaker
