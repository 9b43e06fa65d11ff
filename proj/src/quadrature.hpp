#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

namespace hk {

// Raised when a quadrature routine cannot reach its target accuracy.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

using Fn = std::function<double(double)>;

// Adaptive Simpson on [a,b]. abs_tol is an absolute tolerance for the whole
// interval.
double adaptive_simpson(const Fn& f, double a, double b, double abs_tol,
                        int max_depth = 50);

// Adaptive Simpson over [a,b] pre-split into panels of width <= panel_width.
// Robust for sharply peaked integrands on wide (log-substituted) axes where
// a single adaptive pass can miss the peak entirely.
double panel_adaptive(const Fn& f, double a, double b, double abs_tol,
                      double panel_width = 2.0);

// Nodes/weights of the n-point Gauss-Legendre rule on [-1,1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
    explicit GaussLegendre(int n);

    double integrate(const Fn& f, double a, double b) const;
};

const GaussLegendre& gauss_legendre_32();
const GaussLegendre& gauss_legendre_64();

// Integral of a slowly varying amplitude times an oscillation:
//
//   I = int_a^b  g(rho) * {sin|cos}(omega * rho) d rho.
//
// Panels carry a quadratic (Filon-type) model of g against exact trig
// moments, so the cost is independent of the number of oscillations.
// Panel widths start at first_panel_width near a and grow geometrically.
// omega may be zero (plain adaptive panels). abs_tol is absolute.
double filon_integral(const Fn& g, double omega, bool use_sin,
                      double a, double b, double abs_tol,
                      double first_panel_width);

// Tail correction int_C^inf g(rho) trig(omega rho) d rho by two terms of
// integration by parts with finite-difference derivatives of g.
double oscillatory_tail(const Fn& g, double omega, bool use_sin, double C);

} // namespace hk
