#include "special.hpp"

#include <cmath>

#include "quadrature.hpp"

namespace hk {

double gamma_fn(double x) {
    if (x <= 0.0 && x == std::floor(x))
        throw std::domain_error("gamma_fn: pole at non-positive integer " +
                                std::to_string(x));
    return std::tgamma(x);
}

double bessel_k(double mu, double r) {
    if (r <= 0.0)
        throw std::domain_error("bessel_k: requires r > 0");
    if (mu < 0.0) mu = -mu; // K_{-mu} = K_mu
    if (r > 700.0) {
        // Leading asymptotic; the true value underflows anyway.
        return std::sqrt(M_PI / (2.0 * r)) * std::exp(-r);
    }
    const double v = std::cyl_bessel_k(mu, r);
    if (!std::isfinite(v))
        throw NumericError("bessel_k: overflow at mu=" + std::to_string(mu) +
                           " r=" + std::to_string(r));
    return v;
}

double bessel_k_scaled(double mu, double r) {
    if (r <= 0.0)
        throw std::domain_error("bessel_k_scaled: requires r > 0");
    if (mu < 0.0) mu = -mu;
    if (r < 500.0) {
        const double v = std::cyl_bessel_k(mu, r) * std::exp(r);
        if (!std::isfinite(v))
            throw NumericError("bessel_k_scaled: overflow at mu=" +
                               std::to_string(mu) + " r=" + std::to_string(r));
        return v;
    }
    // asymptotic series; truncation error < (mu^2/r)^4 ~ 1e-10 at r >= 500
    const double a = 4.0 * mu * mu;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 3; ++k) {
        term *= (a - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * r);
        sum += term;
    }
    return std::sqrt(M_PI / (2.0 * r)) * sum;
}

double bessel_k_quadrature(double mu, double r) {
    if (r <= 0.0) throw std::domain_error("bessel_k_quadrature: r > 0");
    // Substitute u = e^s to flatten both endpoints; the integrand peaks
    // near u = r/2 and decays double-exponentially in s.
    const double s0 = std::log(0.5 * r);
    auto f = [&](double s) {
        const double u = std::exp(s);
        return std::exp(-mu * s - u - r * r / (4.0 * u));
    };
    const double peak = f(s0);
    double lo = s0, hi = s0;
    while (f(lo) > 1e-18 * peak && lo > s0 - 120.0) lo -= 1.0;
    while (f(hi) > 1e-18 * peak && hi < s0 + 120.0) hi += 1.0;
    const double integral =
        adaptive_simpson(f, lo, hi, 1e-12 * peak * (hi - lo));
    return 0.5 * std::pow(0.5 * r, mu) * integral;
}

} // namespace hk
