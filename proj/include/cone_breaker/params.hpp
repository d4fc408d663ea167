#pragma once

#include <cmath>
#include <sstream>

#include "cone_breaker/errors.hpp"

namespace cone_breaker {

/// Dimension n, integrability exponent p and Hardy parameter sigma.
/// Only constructible through validate().
struct ConeParams {
  int n = 0;
  double p = 0.0;
  double sigma = 0.0;
};

/// Every scalar that the rest of the library derives from (n, p, sigma).
/// Computed once by derive_exponents(); downstream code reads, never recomputes.
struct DerivedExponents {
  ConeParams params;
  double q = 0.0;            ///< critical exponent np/(n - sigma p)
  double alpha = 0.0;        ///< power of r in the direction f = r^alpha U'
  double Lambda_star = 0.0;  ///< negative eigenvalue attached to f
  double threshold = 0.0;    ///< -Lambda_star; breaking iff lambda_1 < threshold
  double beta = 0.0;         ///< w(r) = (1 + r^beta)^(-gamma)
  double gamma = 0.0;
};

inline ConeParams validate(int n, double p, double sigma) {
  if (n < 2) {
    throw DomainError("dimension n must be >= 2");
  }
  if (!(p > 1.0 && p < static_cast<double>(n))) {
    std::ostringstream os;
    os << "exponent p must satisfy 1 < p < n (got p = " << p << ", n = " << n << ")";
    throw DomainError(os.str());
  }
  if (!(sigma > 0.0 && sigma <= 1.0)) {
    std::ostringstream os;
    os << "Hardy parameter sigma must lie in (0, 1] (got " << sigma << ")";
    throw DomainError(os.str());
  }
  return ConeParams{n, p, sigma};
}

inline DerivedExponents derive_exponents(const ConeParams& cp) {
  const double n = cp.n;
  const double p = cp.p;
  const double s = cp.sigma;

  DerivedExponents d;
  d.params = cp;
  d.q = n * p / (n - s * p);
  d.alpha = (1.0 - s) * d.q / p;
  d.Lambda_star = -(1.0 - d.alpha) * (n - 1.0 - d.alpha * (p - 1.0));
  d.threshold = -d.Lambda_star;
  d.beta = s * (n - p) * d.q / (n * (p - 1.0));
  d.gamma = n / (s * d.q);
  return d;
}

inline DerivedExponents derive_exponents(int n, double p, double sigma) {
  return derive_exponents(validate(n, p, sigma));
}

/// (1 - sigma) n / (n - sigma p): the second closed form of alpha.
inline double alpha_alternative(const ConeParams& cp) {
  return (1.0 - cp.sigma) * cp.n / (cp.n - cp.sigma * cp.p);
}

}  // namespace cone_breaker
