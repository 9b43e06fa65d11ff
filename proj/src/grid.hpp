#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

namespace hk {

// Log-spaced radial evaluation grid with a companion time grid.
struct RadialGrid {
    std::vector<double> radii; // strictly increasing, positive
    std::vector<double> times; // strictly increasing, positive

    static RadialGrid make(int n_r = 512, double r_min = 1e-3,
                           double r_max = 1e2, int n_t = 64,
                           double t_min = 1e-2, double t_max = 2.0);

    void validate() const;
};

std::vector<double> log_spaced(int n, double lo, double hi);

// Trapezoid weights for a non-uniform 1-d grid.
std::vector<double> trapezoid_weights(const std::vector<double>& xs);

// Volume weights for the d-dimensional radial integral on a log grid:
// int f(|x|) dx ~ sum_i w_i f(r_i), w_i = area(d) r_i^{d-1} * trapezoid.
std::vector<double> radial_volume_weights(int d,
                                          const std::vector<double>& radii);

// Signed 1-d grid (-r_N..-r_1, r_1..r_N) from a radial one.
std::vector<double> signed_grid(const std::vector<double>& radii);

// Piecewise interpolation of tabulated data. When log_log is set (data
// must be positive) interpolation is linear in (log x, log y), which is
// exact for power laws; out-of-range queries extrapolate with the
// boundary slope.
class Interp1D {
public:
    Interp1D() = default;
    Interp1D(std::vector<double> xs, std::vector<double> ys, bool log_log);

    double operator()(double x) const;
    bool valid() const { return xs_.size() >= 2; }

private:
    std::vector<double> xs_, ys_;
    bool log_log_ = false;
};

// Cumulative integral C(x_i) = int_{x_0}^{x_i} f, with each cell
// integrated under a local power-law model when the data allow it
// (positive values); falls back to the trapezoid rule.
std::vector<double> cumulative_integral(const std::vector<double>& xs,
                                        const std::vector<double>& ys);

// Radial profile sampled on a grid. Values outside [r_min, r_max] may be
// extrapolated as c r^{-exponent_hint} below r_min when the hint is set.
struct RadialFunction {
    std::vector<double> radii;
    std::vector<double> values;
    std::optional<double> exponent_hint;

    double norm_l2(int d) const; // d-dimensional radial L2 norm
    RadialFunction normalized(int d) const;
};

} // namespace hk
