#include "grid.hpp"

#include <algorithm>
#include <cmath>

#include "levy_models.hpp"

namespace hk {

std::vector<double> log_spaced(int n, double lo, double hi) {
    if (n < 2 || !(lo > 0.0) || !(hi > lo))
        throw std::domain_error("log_spaced: need n>=2 and 0 < lo < hi");
    std::vector<double> xs(n);
    const double l0 = std::log(lo), l1 = std::log(hi);
    for (int i = 0; i < n; ++i)
        xs[i] = std::exp(l0 + (l1 - l0) * i / (n - 1));
    xs.front() = lo;
    xs.back() = hi;
    return xs;
}

RadialGrid RadialGrid::make(int n_r, double r_min, double r_max, int n_t,
                            double t_min, double t_max) {
    RadialGrid g;
    g.radii = log_spaced(n_r, r_min, r_max);
    g.times = log_spaced(n_t, t_min, t_max);
    g.validate();
    return g;
}

void RadialGrid::validate() const {
    auto check = [](const std::vector<double>& xs, const char* what) {
        if (xs.size() < 2)
            throw std::domain_error(std::string("RadialGrid: too few ") + what);
        if (xs.front() <= 0.0)
            throw std::domain_error(std::string("RadialGrid: non-positive ") +
                                    what);
        for (size_t i = 1; i < xs.size(); ++i)
            if (xs[i] <= xs[i - 1])
                throw std::domain_error(
                    std::string("RadialGrid: non-monotone ") + what);
    };
    check(radii, "radii");
    check(times, "times");
}

std::vector<double> trapezoid_weights(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<double> w(n, 0.0);
    for (size_t i = 0; i + 1 < n; ++i) {
        const double h = 0.5 * (xs[i + 1] - xs[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    return w;
}

std::vector<double> radial_volume_weights(int d,
                                          const std::vector<double>& radii) {
    std::vector<double> w = trapezoid_weights(radii);
    const double area = sphere_area(d);
    for (size_t i = 0; i < w.size(); ++i)
        w[i] *= area * std::pow(radii[i], d - 1);
    return w;
}

std::vector<double> signed_grid(const std::vector<double>& radii) {
    std::vector<double> xs;
    xs.reserve(2 * radii.size());
    for (auto it = radii.rbegin(); it != radii.rend(); ++it)
        xs.push_back(-*it);
    xs.insert(xs.end(), radii.begin(), radii.end());
    return xs;
}

Interp1D::Interp1D(std::vector<double> xs, std::vector<double> ys,
                   bool log_log)
    : xs_(std::move(xs)), ys_(std::move(ys)), log_log_(log_log) {
    if (xs_.size() != ys_.size() || xs_.size() < 2)
        throw std::domain_error("Interp1D: bad table");
    if (log_log_) {
        for (size_t i = 0; i < xs_.size(); ++i) {
            if (!(xs_[i] > 0.0) || !(ys_[i] > 0.0))
                throw std::domain_error("Interp1D: log-log needs positive data");
            xs_[i] = std::log(xs_[i]);
            ys_[i] = std::log(ys_[i]);
        }
    }
}

double Interp1D::operator()(double x) const {
    double q = log_log_ ? std::log(x) : x;
    size_t hi = std::upper_bound(xs_.begin(), xs_.end(), q) - xs_.begin();
    hi = std::clamp<size_t>(hi, 1, xs_.size() - 1);
    const size_t lo = hi - 1;
    const double t = (q - xs_[lo]) / (xs_[hi] - xs_[lo]);
    const double v = ys_[lo] + t * (ys_[hi] - ys_[lo]);
    return log_log_ ? std::exp(v) : v;
}

std::vector<double> cumulative_integral(const std::vector<double>& xs,
                                        const std::vector<double>& ys) {
    const size_t n = xs.size();
    std::vector<double> c(n, 0.0);
    for (size_t i = 0; i + 1 < n; ++i) {
        const double x0 = xs[i], x1 = xs[i + 1];
        const double y0 = ys[i], y1 = ys[i + 1];
        double cell;
        if (y0 > 0.0 && y1 > 0.0 && x0 > 0.0) {
            // exact integral of the power law through the two nodes
            const double p = std::log(y1 / y0) / std::log(x1 / x0);
            if (std::abs(p + 1.0) > 1e-9)
                cell = y0 * x0 / (p + 1.0) *
                       (std::pow(x1 / x0, p + 1.0) - 1.0);
            else
                cell = y0 * x0 * std::log(x1 / x0);
        } else {
            cell = 0.5 * (y0 + y1) * (x1 - x0);
        }
        c[i + 1] = c[i] + cell;
    }
    return c;
}

double RadialFunction::norm_l2(int d) const {
    const auto w = radial_volume_weights(d, radii);
    double s = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
        s += w[i] * values[i] * values[i];
    return std::sqrt(s);
}

RadialFunction RadialFunction::normalized(int d) const {
    RadialFunction out = *this;
    const double n = norm_l2(d);
    if (!(n > 0.0))
        throw std::domain_error("RadialFunction: zero norm");
    for (auto& v : out.values) v /= n;
    return out;
}

} // namespace hk
