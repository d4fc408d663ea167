// Walks the breaking threshold for planar sectors: for one (p, sigma) it
// prints lambda_1 = (pi/theta0)^2, the threshold and the second variation
// along h = f(r) g(phi) as the opening grows.

#include <cstdio>

#include "cone_breaker/params.hpp"
#include "cone_breaker/quad.hpp"
#include "cone_breaker/radial.hpp"
#include "cone_breaker/secondvar.hpp"
#include "cone_breaker/speceig.hpp"

int main() {
  using namespace cone_breaker;
  const auto d = derive_exponents(2, 1.5, 0.9);
  const auto prof = make_profile(d);
  const auto A = second_variation_integrals(prof);
  std::printf("n=2 p=1.5 sigma=0.9  q=%.6f  threshold=%.6f\n", d.q, d.threshold);
  std::printf("%8s %12s %14s %s\n", "theta0", "lambda1", "d2j", "verdict");
  for (double theta0 = 3.0; theta0 <= 6.01; theta0 += 0.25) {
    const auto eig = lambda1_arc(theta0);
    const auto rep = second_variation(prof, A, eig.lambda1, arc_measure(theta0));
    std::printf("%8.3f %12.6f %14.6e %s\n", theta0, eig.lambda1, rep.d2j, to_string(rep.verdict).c_str());
  }
  return 0;
}
