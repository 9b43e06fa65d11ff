#pragma once

#include <stdexcept>
#include <string>

namespace hk {

// Gamma function with domain checks (poles at 0, -1, -2, ... rejected).
double gamma_fn(double x);

// Modified Bessel function of the second kind K_mu(r), mu >= 0, r > 0.
double bessel_k(double mu, double r);

// e^r K_mu(r): overflow/underflow-safe for large arguments.
double bessel_k_scaled(double mu, double r);

// Independent evaluation of K_mu(r) through its Laplace-type integral
//   K_mu(r) = 1/2 (r/2)^mu int_0^inf u^{-mu-1} exp(-u - r^2/(4u)) du.
// Used as an oracle for bessel_k.
double bessel_k_quadrature(double mu, double r);

} // namespace hk
