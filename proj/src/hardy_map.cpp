#include "hardy_map.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "special.hpp"

namespace hk {

namespace {

void check_params(int d, double alpha) {
    if (d != 1 && d != 3)
        throw std::domain_error("hardy_map: d must be 1 or 3");
    if (!(alpha > 0.0 && alpha < std::min(2.0, static_cast<double>(d))))
        throw std::domain_error("hardy_map: alpha must lie in (0, min(2,d))");
}

} // namespace

double kappa_of_delta(int d, double alpha, double delta) {
    check_params(d, alpha);
    const double dmax = 0.5 * (d - alpha);
    if (!(delta > 0.0 && delta <= dmax))
        throw std::domain_error("kappa_of_delta: delta must lie in (0,(d-alpha)/2]");
    // At the critical endpoint two Gamma arguments coincide; use the
    // squared form to avoid evaluating a 0/0 pair separately.
    return std::pow(2.0, alpha) * gamma_fn(0.5 * (alpha + delta)) *
           gamma_fn(0.5 * (d - delta)) /
           (gamma_fn(0.5 * delta) * gamma_fn(0.5 * (d - alpha - delta)));
}

double kappa_star(int d, double alpha) {
    check_params(d, alpha);
    const double g1 = gamma_fn(0.25 * (d + alpha));
    const double g2 = gamma_fn(0.25 * (d - alpha));
    return std::pow(2.0, alpha) * g1 * g1 / (g2 * g2);
}

double delta_of_kappa(int d, double alpha, double kappa) {
    check_params(d, alpha);
    const double ks = kappa_star(d, alpha);
    if (!(kappa > 0.0))
        throw std::domain_error("delta_of_kappa: kappa must be positive");
    if (kappa > ks * (1.0 + 1e-13))
        throw std::domain_error("delta_of_kappa: supercritical coupling kappa=" +
                                std::to_string(kappa) + " > kappa_star=" +
                                std::to_string(ks));
    const double dmax = 0.5 * (d - alpha);
    if (kappa >= ks) return dmax;
    double lo = 1e-9, hi = dmax;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (kappa_of_delta(d, alpha, mid) < kappa)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-15 * dmax) break;
    }
    return 0.5 * (lo + hi);
}

double h_factor(double t, double r, double alpha, double delta) {
    if (!(t > 0.0))
        throw std::domain_error("h_factor: t must be positive");
    if (r == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 + std::pow(std::pow(t, -1.0 / alpha) * r, -delta);
}

HardyCoupling HardyCoupling::from_kappa(int d, double alpha, double kappa) {
    return HardyCoupling{d, alpha, kappa, delta_of_kappa(d, alpha, kappa)};
}

HardyCoupling HardyCoupling::from_delta(int d, double alpha, double delta) {
    return HardyCoupling{d, alpha, kappa_of_delta(d, alpha, delta), delta};
}

} // namespace hk
