#include "spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "duhamel.hpp"
#include "kernel_engine.hpp"
#include "quadrature.hpp"

namespace hk {
namespace {

// Integral over [a,b] of the power law through (a,ya), (b,yb); trapezoid
// fallback when the data are not positive.
double power_cell(double a, double b, double ya, double yb) {
    if (b <= a) return 0.0;
    if (!(ya > 0.0) || !(yb > 0.0) || a <= 0.0)
        return 0.5 * (ya + yb) * (b - a);
    const double s = std::log(yb / ya) / std::log(b / a);
    if (std::abs(s + 1.0) < 1e-9) return ya * a * std::log(b / a);
    // ratio form: safe for the steep slopes of exponentially decaying data
    return ya * a * (std::pow(b / a, s + 1.0) - 1.0) / (s + 1.0);
}

// Integral of f over [a,b] (0 < a < b) by power-law cells on log-spaced
// samples; exact for pure powers, robust for integrable singularities
// at the left end.
double logsample_integral(const std::function<double(double)>& f, double a,
                          double b, int n = 24) {
    if (b <= a) return 0.0;
    std::vector<double> xs = log_spaced(n, a, b);
    double total = 0.0;
    double y_prev = f(xs[0]);
    for (int i = 1; i < n; ++i) {
        const double y = f(xs[i]);
        total += power_cell(xs[i - 1], xs[i], y_prev, y);
        y_prev = y;
    }
    return total;
}

// Tabulated density y on a log grid with power-law cells; interval
// integrals are sums of (partial) cells, so nearby queries never cancel
// catastrophically. Queries below the grid use the head-cell power law,
// above it the tail-cell power law (clamped integrable).
class CellCum {
public:
    CellCum(const std::function<double(double)>& y, double lo, double hi, int n)
        : xs_(log_spaced(n, lo, hi)), ys_(n) {
        for (int i = 0; i < n; ++i) ys_[i] = std::max(y(xs_[i]), 0.0);
        cum_.assign(n, 0.0);
        scum_.assign(n, 0.0);
        for (int i = 1; i < n; ++i)
            cum_[i] = cum_[i - 1] + power_cell(xs_[i - 1], xs_[i], ys_[i - 1], ys_[i]);
        for (int i = n - 1; i-- > 0;)
            scum_[i] = scum_[i + 1] + power_cell(xs_[i], xs_[i + 1], ys_[i], ys_[i + 1]);
        auto slope = [&](int i, int j) {
            if (ys_[i] > 0 && ys_[j] > 0)
                return std::log(ys_[j] / ys_[i]) / std::log(xs_[j] / xs_[i]);
            return 0.0;
        };
        head_slope_ = slope(0, 1);
        tail_slope_ = std::min(slope(n - 2, n - 1), -1.05);
    }

    double value(double x) const {
        if (x <= xs_.front())
            return ys_.front() * std::pow(x / xs_.front(), head_slope_);
        if (x >= xs_.back())
            return ys_.back() * std::pow(x / xs_.back(), tail_slope_);
        const size_t j = cell_index(x);
        if (ys_[j] > 0 && ys_[j + 1] > 0) {
            const double s = std::log(ys_[j + 1] / ys_[j]) /
                             std::log(xs_[j + 1] / xs_[j]);
            return ys_[j] * std::pow(x / xs_[j], s);
        }
        const double w = (x - xs_[j]) / (xs_[j + 1] - xs_[j]);
        return (1.0 - w) * ys_[j] + w * ys_[j + 1];
    }

    // int_a^b y, 0 <= a <= b. Divergent heads (slope <= -1 with a = 0)
    // are the caller's responsibility; a > 0 is always finite.
    double integral(double a, double b) const {
        if (b <= a) return 0.0;
        double total = 0.0;
        const double lo = xs_.front(), hi = xs_.back();
        if (a < lo) {
            const double b_head = std::min(b, lo);
            total += head_integral(a, b_head);
            a = b_head;
            if (b <= lo) return total;
        }
        if (b > hi) {
            const double a_tail = std::max(a, hi);
            total += tail_integral(a_tail, b);
            b = hi;
            if (a >= hi) return total;
        }
        const size_t ia = cell_index(a), ib = cell_index(b);
        if (ia == ib) return total + sub_cell(ia, a, b);
        total += sub_cell(ia, a, xs_[ia + 1]);
        // take whichever cumulative difference cancels less: for steeply
        // decaying densities the prefix is dominated by the head mass and
        // deep-interval differences fall below machine precision
        total += (cum_[ib] <= scum_[ia + 1])
                     ? cum_[ib] - cum_[ia + 1]
                     : scum_[ia + 1] - scum_[ib];
        total += sub_cell(ib, xs_[ib], b);
        return total;
    }

private:
    size_t cell_index(double x) const {
        auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
        size_t j = static_cast<size_t>(it - xs_.begin());
        if (j == 0) return 0;
        if (j >= xs_.size()) return xs_.size() - 2;
        return j - 1;
    }

    double sub_cell(size_t j, double a, double b) const {
        if (b <= a) return 0.0;
        const double ya = interp_in_cell(j, a), yb = interp_in_cell(j, b);
        return power_cell(a, b, ya, yb);
    }

    double interp_in_cell(size_t j, double x) const {
        if (ys_[j] > 0 && ys_[j + 1] > 0) {
            const double s = std::log(ys_[j + 1] / ys_[j]) /
                             std::log(xs_[j + 1] / xs_[j]);
            return ys_[j] * std::pow(x / xs_[j], s);
        }
        const double w = (x - xs_[j]) / (xs_[j + 1] - xs_[j]);
        return (1.0 - w) * ys_[j] + w * ys_[j + 1];
    }

    double head_integral(double a, double b) const {
        const double y0 = ys_.front(), x0 = xs_.front(), s = head_slope_;
        if (y0 <= 0) return 0.0;
        a = std::max(a, 1e-300);
        if (std::abs(s + 1.0) < 1e-9) return y0 * x0 * std::log(b / a);
        return y0 * x0 *
               (std::pow(b / x0, s + 1.0) - std::pow(a / x0, s + 1.0)) /
               (s + 1.0);
    }

    double tail_integral(double a, double b) const {
        const double y1 = ys_.back(), x1 = xs_.back(), s = tail_slope_;
        if (y1 <= 0) return 0.0;
        // a, b >= x1 and s <= -1.05: the ratio powers stay in [0, 1]
        return y1 * x1 *
               (std::pow(b / x1, s + 1.0) - std::pow(a / x1, s + 1.0)) /
               (s + 1.0);
    }

    std::vector<double> xs_, ys_, cum_, scum_;
    double head_slope_ = 0.0, tail_slope_ = -2.0;
};

struct Cells1D {
    std::vector<double> xs, lo, hi, w;
};

// Signed 1-d node/cell layout with midpoint boundaries.
Cells1D signed_cells(const std::vector<double>& radii) {
    Cells1D c;
    c.xs = signed_grid(radii);
    const size_t n = c.xs.size();
    c.lo.resize(n);
    c.hi.resize(n);
    c.w.resize(n);
    for (size_t i = 0; i < n; ++i) {
        c.lo[i] = (i == 0) ? c.xs[0] - 0.5 * (c.xs[1] - c.xs[0])
                           : 0.5 * (c.xs[i - 1] + c.xs[i]);
        c.hi[i] = (i + 1 == n) ? c.xs[n - 1] + 0.5 * (c.xs[n - 1] - c.xs[n - 2])
                               : 0.5 * (c.xs[i] + c.xs[i + 1]);
        c.w[i] = c.hi[i] - c.lo[i];
    }
    return c;
}

// Half-line cell layout for d = 3 (innermost boundary at 0 would put
// spurious volume at the origin; use the geometric midpoint instead).
struct CellsR {
    std::vector<double> r, lo, hi, w;
};

CellsR radial_cells(const std::vector<double>& radii) {
    CellsR c;
    c.r = radii;
    const size_t n = radii.size();
    c.lo.resize(n);
    c.hi.resize(n);
    c.w.resize(n);
    for (size_t i = 0; i < n; ++i) {
        c.lo[i] = (i == 0) ? radii[0] * radii[0] / std::sqrt(radii[0] * radii[1])
                           : std::sqrt(radii[i - 1] * radii[i]);
        c.hi[i] = (i + 1 == n) ? radii[n - 1] * radii[n - 1] / c.lo[n - 1]
                               : std::sqrt(radii[i] * radii[i + 1]);
        c.w[i] = c.hi[i] - c.lo[i];
    }
    return c;
}

enum class PairMode { Difference, Product };

// Symmetric double integral  sum over pairs of F_ij K(x_i, x_j) with the
// radial kernel k(|x-y|), F = (f_i - f_j)^2 (forms) or f_i f_j (sigma
// bracket). Near-diagonal pairs use exact interval integrals of k; the
// coincidence cell uses a local slope (Difference) or the triangular
// autocorrelation of the cell (Product).
double pair_sum_1d(const std::function<double(double)>& k,
                   const std::vector<double>& fs, const Cells1D& c) {
    const size_t n = c.xs.size();
    double span = c.hi.back() - c.lo.front();
    CellCum K(k, 1e-7 * span, 1.2 * span, 900);
    // slopes for the coincidence cells
    std::vector<double> slope(n, 0.0);
    for (size_t i = 1; i + 1 < n; ++i)
        slope[i] = (fs[i + 1] - fs[i - 1]) / (c.xs[i + 1] - c.xs[i - 1]);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        // coincidence cell: 1/2 int int_{cell^2} (f(x)-f(y))^2 k(x-y)
        //   ~ s^2 int_0^w (w-u) u^2 k(u) du
        const double w = c.w[i], s = slope[i];
        if (s != 0.0)
            total += s * s * logsample_integral(
                                 [&](double u) {
                                     return (w - u) * u * u * K.value(u);
                                 },
                                 1e-4 * w, w, 20);
        for (size_t j = i + 1; j < n; ++j) {
            const double diff = fs[i] - fs[j];
            if (diff == 0.0) continue;
            const double gap = c.lo[j] - c.hi[i];
            const double dist = c.xs[j] - c.xs[i];
            double kij;
            if (gap > 2.0 * (c.w[i] + c.w[j])) {
                kij = k(dist) * c.w[i] * c.w[j];
            } else {
                // average k over cell j from 4 stations in cell i
                kij = 0.0;
                for (int q = 0; q < 4; ++q) {
                    const double x = c.lo[i] + (q + 0.5) * c.w[i] / 4.0;
                    kij += K.integral(std::max(c.lo[j] - x, 1e-12 * span),
                                      c.hi[j] - x);
                }
                kij *= c.w[i] / 4.0;
            }
            total += diff * diff * kij;
        }
    }
    // pairs with one point beyond the grid, where f vanishes: for slowly
    // decaying kernels (alpha < 1) this exterior mass carries a large
    // share of the form
    const double far = 1e9 * span;
    for (size_t i = 0; i < n; ++i) {
        if (fs[i] == 0.0) continue;
        total += fs[i] * fs[i] * c.w[i] *
                 (K.integral(c.hi.back() - c.xs[i], far) +
                  K.integral(c.xs[i] - c.lo.front(), far));
    }
    return total;
}

double pair_prod_1d(const std::function<double(double)>& k,
                    const std::vector<double>& fs, const Cells1D& c) {
    const size_t n = c.xs.size();
    double span = c.hi.back() - c.lo.front();
    CellCum K(k, 1e-7 * span, 1.2 * span, 900);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        // coincidence cell: f_i^2 int int_{cell^2} k = f_i^2 * 2 int_0^w (w-u) k(u) du
        const double w = c.w[i];
        total += fs[i] * fs[i] * 2.0 *
                 logsample_integral(
                     [&](double u) { return (w - u) * K.value(u); },
                     1e-6 * w, w, 20);
        for (size_t j = i + 1; j < n; ++j) {
            const double gap = c.lo[j] - c.hi[i];
            const double dist = c.xs[j] - c.xs[i];
            double kij;
            if (gap > 2.0 * (c.w[i] + c.w[j])) {
                kij = k(dist) * c.w[i] * c.w[j];
            } else {
                kij = 0.0;
                for (int q = 0; q < 4; ++q) {
                    const double x = c.lo[i] + (q + 0.5) * c.w[i] / 4.0;
                    kij += K.integral(std::max(c.lo[j] - x, 1e-12 * span),
                                      c.hi[j] - x);
                }
                kij *= c.w[i] / 4.0;
            }
            total += 2.0 * fs[i] * fs[j] * kij;
        }
    }
    return total;
}

// d = 3 angular reduction:  1/2 intint (..)^2 k(|x-y|) dx dy
//   = 4 pi^2 intint r rho F(r,rho) S(|r-rho|, r+rho) dr drho,
// S(a,b) = int_a^b s k(s) ds. T(u) = int_u^{smax} s k(s) ds and its own
// cumulative T2 give exact interval integrals for near-diagonal cells.
double pair_sum_3d(const std::function<double(double)>& k,
                   const std::vector<double>& fs, const CellsR& c,
                   PairMode mode) {
    const size_t n = c.r.size();
    const double smax = 2.2 * c.hi.back();
    const double far = 1e7 * c.hi.back();
    CellCum SK([&](double s) { return s * k(s); }, 1e-7 * c.hi.back(), smax,
               900);
    // tail beyond the sampled range enters via the clamped power-law
    // extrapolation of the last cell (exact for stable tails, negligible
    // for exponentially decaying ones)
    auto T = [&](double u) { return SK.integral(u, far); };
    CellCum T2(T, 1e-7 * c.hi.back(), smax, 700);
    // second moment u^2 T(u): integrates slope^2 (x-y)^2 exactly over
    // near-diagonal cell pairs, where the plain (f_i-f_j)^2 midpoint rule
    // overweights the kernel singularity (first-order bias)
    CellCum T2q([&](double u) { return u * u * T(u); }, 1e-7 * c.hi.back(),
                smax, 700);
    const double pi = std::numbers::pi;
    const double c4 = 4.0 * pi * pi;

    std::vector<double> slope(n, 0.0);
    for (size_t i = 1; i + 1 < n; ++i)
        slope[i] = (fs[i + 1] - fs[i - 1]) / (c.r[i + 1] - c.r[i - 1]);

    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double r = c.r[i], w = c.w[i];
        const double b_same = 2.0 * r;
        const double Tb_same = T(b_same);
        if (mode == PairMode::Difference) {
            const double s = slope[i];
            if (s != 0.0)
                total += s * s * c4 * r * r *
                         logsample_integral(
                             [&](double u) {
                                 return (w - u) * u * u *
                                        std::max(T(u) - Tb_same, 0.0);
                             },
                             1e-4 * w, w, 20);
        } else {
            total += fs[i] * fs[i] * c4 * r * r * 2.0 *
                     logsample_integral(
                         [&](double u) {
                             return (w - u) * std::max(T(u) - Tb_same, 0.0);
                         },
                         1e-6 * w, w, 20);
        }
        for (size_t j = i + 1; j < n; ++j) {
            const double rho = c.r[j];
            const double F = (mode == PairMode::Difference)
                                 ? (fs[i] - fs[j]) * (fs[i] - fs[j])
                                 : 2.0 * fs[i] * fs[j];
            if (F == 0.0) continue;
            const double gap = c.lo[j] - c.hi[i];
            const double b = r + rho;
            double kij; // intint over the two radial cells of S(|r-rho|, r+rho)
            if (gap > 2.0 * (c.w[i] + c.w[j])) {
                kij = std::max(T(rho - r) - T(b), 0.0) * c.w[i] * c.w[j];
                total += F * c4 * r * rho * kij;
            } else if (mode == PairMode::Difference) {
                // local linear model: (f(x)-f(y))^2 = s^2 (x-y)^2 with the
                // divided-difference slope, integrated exactly against the
                // singular pair weight via the second moment u^2 T(u)
                const double s2 =
                    (fs[i] - fs[j]) * (fs[i] - fs[j]) /
                    ((rho - r) * (rho - r));
                kij = 0.0;
                const double Tb = T(b);
                for (int q = 0; q < 4; ++q) {
                    const double x = c.lo[i] + (q + 0.5) * c.w[i] / 4.0;
                    const double u0 = std::max(c.lo[j] - x, 1e-12 * c.hi.back());
                    const double u1 = c.hi[j] - x;
                    kij += std::max(T2q.integral(u0, u1) -
                                        (u1 * u1 * u1 - u0 * u0 * u0) / 3.0 * Tb,
                                    0.0);
                }
                kij *= c.w[i] / 4.0;
                total += s2 * c4 * r * rho * kij;
            } else {
                kij = 0.0;
                const double Tb = T(b);
                for (int q = 0; q < 4; ++q) {
                    const double x = c.lo[i] + (q + 0.5) * c.w[i] / 4.0;
                    const double u0 = std::max(c.lo[j] - x, 1e-12 * c.hi.back());
                    const double u1 = c.hi[j] - x;
                    kij += std::max(T2.integral(u0, u1) - (u1 - u0) * Tb, 0.0);
                }
                kij *= c.w[i] / 4.0;
                total += F * c4 * r * rho * kij;
            }
        }
    }
    // the i <= j sweep covers half the (r, rho) square under a prefactor
    // derived for the whole of it
    total *= 2.0;
    if (mode == PairMode::Difference) {
        // pairs with |y| beyond the grid, where f vanishes:
        // N(r) = int_{|y| > R} k(|x - y|) dy
        //      = (2 pi / r) int_R^inf rho (T(rho - r) - T(rho + r)) drho
        const double R = c.hi.back();
        for (size_t i = 0; i < n; ++i) {
            if (fs[i] == 0.0) continue;
            const double r = c.r[i];
            const double N =
                2.0 * pi / r *
                logsample_integral(
                    [&](double rho) {
                        return rho * std::max(T(rho - r) - T(rho + r), 0.0);
                    },
                    R, 1e4 * R, 48);
            total += fs[i] * fs[i] * 4.0 * pi * r * r * c.w[i] * N;
        }
    }
    return total;
}

void check_boundary_decay(const RadialFunction& f) {
    double fmax = 0.0;
    for (double v : f.values) fmax = std::max(fmax, std::abs(v));
    if (fmax == 0.0) return;
    if (std::abs(f.values.back()) >= 1e-3 * fmax)
        throw std::domain_error(
            "form_energy: f does not decay at the outer grid end "
            "(|f(r_max)| >= 1e-3 max|f|)");
}

bool is_constant(const RadialFunction& f) {
    double lo = f.values.front(), hi = lo;
    for (double v : f.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo <= 1e-12 * std::max(std::abs(hi), std::abs(lo));
}

double form_with_kernel(const std::function<double(double)>& k, int d,
                        const RadialFunction& f, PairMode mode) {
    if (d == 1) {
        Cells1D c = signed_cells(f.radii);
        std::vector<double> fs(c.xs.size());
        const size_t n = f.radii.size();
        for (size_t i = 0; i < n; ++i) {
            fs[n - 1 - i] = f.values[i]; // negative side, mirrored
            fs[n + i] = f.values[i];
        }
        return mode == PairMode::Difference ? pair_sum_1d(k, fs, c)
                                            : pair_prod_1d(k, fs, c);
    }
    if (d == 3) {
        CellsR c = radial_cells(f.radii);
        return pair_sum_3d(k, f.values, c, mode);
    }
    throw std::domain_error("form evaluator: d must be 1 or 3");
}

double l2_sq(int d, const RadialFunction& f) {
    const double n = f.norm_l2(d);
    return n * n;
}

// Radial resolvent kernel matrix g(r_i, r_j) with the diagonal (where the
// pointwise kernel is singular: |r - rho|^{alpha-1} in d=1, log-divergent
// angular averages in d=3) replaced by its average over the grid cell.
Eigen::MatrixXd resolvent_kernel_matrix(const ResolventTable& rt, int d,
                                        const std::vector<double>& r) {
    const int n = static_cast<int>(r.size());
    CellsR c = radial_cells(r);
    Eigen::MatrixXd G(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double g;
            if (i == j) {
                // average over rho in the cell of the kernel's dependence
                // on u = |r - rho|, split at rho = r
                auto avg = [&](double h, double sgn) {
                    if (h <= 0.0) return 0.0;
                    return logsample_integral(
                        [&](double u) {
                            return d == 3
                                       ? rt.angular_average(r[i],
                                                            r[i] + sgn * u)
                                       : rt.value(u);
                        },
                        1e-5 * h, h, 16);
                };
                const double hl = r[i] - c.lo[i], hr = c.hi[i] - r[i];
                g = (avg(hl, -1.0) + avg(hr, 1.0)) / (hl + hr);
            } else {
                g = d == 3 ? rt.angular_average(r[i], r[j])
                           : rt.value(r[j] - r[i]);
            }
            if (d == 1) g += rt.value(r[i] + r[j]);
            G(i, j) = G(j, i) = g;
        }
    return G;
}

// least-squares slope of y against x with rms residual
std::pair<double, double> ls_slope(const std::vector<double>& x,
                                   const std::vector<double>& y) {
    const size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    const double slope = (n * sxy - sx * sy) / denom;
    const double icpt = (sy - slope * sx) / n;
    double rss = 0;
    for (size_t i = 0; i < n; ++i) {
        const double e = y[i] - (slope * x[i] + icpt);
        rss += e * e;
    }
    return {slope, std::sqrt(rss / n)};
}

} // namespace

double form_energy(const LevyModel& model, const RadialFunction& f) {
    if (f.radii.size() < 8 || f.radii.size() != f.values.size())
        throw std::domain_error("form_energy: need a sampled radial profile");
    if (is_constant(f)) return 0.0;
    check_boundary_decay(f);
    auto k = [&](double r) { return model.density(r); };
    return form_with_kernel(k, model.d(), f, PairMode::Difference);
}

double form_identity_residual(const LevyModel& model, const RadialFunction& f) {
    const int d = model.d();
    const double e_model = form_energy(model, f);
    const double e_stable =
        form_energy(LevyModel::stable(d, model.alpha()), f);
    const double sig_mass = model.sigma_mass();
    const double norm2 = l2_sq(d, f);
    auto sig = [&](double r) { return model.sigma_density(r); };
    const double bracket = form_with_kernel(sig, d, f, PairMode::Product);
    return std::abs(e_model + sig_mass * norm2 - bracket - e_stable) /
           e_stable;
}

double singular_moment(double a, int d, const RadialFunction& f) {
    const std::vector<double>& r = f.radii;
    const size_t n = r.size();
    std::vector<double> vw = radial_volume_weights(d, r);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i)
        total += f.values[i] * f.values[i] * std::pow(r[i], -a) * vw[i];
    if (f.exponent_hint) {
        const double h = *f.exponent_hint;
        const double p = d - 2.0 * h - a; // head integrand ~ r^{p-1}
        if (p <= 0.0)
            throw std::domain_error(
                "singular_moment: origin exponent makes the integral diverge");
        const double r0 = r.front();
        const double c0 = f.values.front() * std::pow(r0, h);
        total += sphere_area(d) * c0 * c0 * std::pow(r0, p) / p;
    }
    return total;
}

double hardy_ratio(double alpha, int d, const RadialFunction& f) {
    const double num = singular_moment(alpha, d, f);
    const double den = form_energy(LevyModel::stable(d, alpha), f);
    return num / den;
}

std::pair<double, RadialFunction> birman_schwinger_mu(
    const LevyModel& model, const HardyCoupling& coupling, double lambda,
    const RadialGrid& grid) {
    if (!(lambda > 0))
        throw std::domain_error("birman_schwinger_mu: lambda must be positive");
    const int d = model.d();
    const std::vector<double>& r = grid.radii;
    const int n = static_cast<int>(r.size());
    const double al = coupling.alpha;

    std::vector<double> vw = radial_volume_weights(d, r);
    std::vector<double> sv(n); // sqrt(V) sqrt(volume weight)
    for (int i = 0; i < n; ++i)
        sv[i] = std::sqrt(coupling.kappa * std::pow(r[i], -al) * vw[i]);

    const double w_max = 2.4 * r.back() + 2.0;
    ResolventTable rt(model, lambda, w_max,
                      std::max(1024, 12 * n));

    Eigen::MatrixXd G = resolvent_kernel_matrix(rt, d, r);
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) = sv[i] * sv[j] * G(i, j);

    // power iteration with Rayleigh-quotient stopping
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    v.normalize();
    double mu = 0.0, mu_prev = -1.0;
    int it = 0;
    for (; it < 10000; ++it) {
        Eigen::VectorXd w = B * v;
        mu = v.dot(w);
        const double wn = w.norm();
        if (wn == 0.0) break;
        v = w / wn;
        if (std::abs(mu - mu_prev) < 1e-9 * std::max(1.0, std::abs(mu)))
            break;
        mu_prev = mu;
    }
    if (it >= 10000)
        throw NumericError("birman_schwinger_mu: power iteration did not "
                           "converge in 1e4 steps");

    RadialFunction eig;
    eig.radii = r;
    eig.values.resize(n);
    double sgn = v.sum() >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i)
        eig.values[i] = sgn * v(i) / std::sqrt(vw[i]);
    return {mu, eig};
}

GroundState ground_state_solve(const LevyModel& model,
                               const HardyCoupling& coupling,
                               const RadialGrid& grid, double tol) {
    if (model.kind() != ModelKind::Relativistic)
        throw std::domain_error(
            "ground_state_solve: needs a relativistic model (discrete "
            "spectrum)");
    const double ks = kappa_star(coupling.d, coupling.alpha);
    if (!(coupling.kappa < ks))
        throw std::domain_error(
            "ground_state_solve: requires subcritical coupling kappa < "
            "kappa_star");
    const double m = model.m();
    // keep lambda away from 0: the resolvent build integrates the heat
    // kernel out to t ~ 37/lambda, and mu(lambda) diverges there anyway
    double lam_lo = 1e-2 * m;
    double lam_hi;
    const double kp = coupling.kappa * std::numbers::pi / 2.0;
    if (coupling.alpha == 1.0 && kp < 1.0)
        lam_hi = 1.1 * m * (1.0 - std::sqrt(1.0 - kp * kp));
    else
        lam_hi = 0.9 * m;

    GroundState gs{model, coupling};
    auto mu_at = [&](double lam) {
        auto [mu, vec] = birman_schwinger_mu(model, coupling, lam, grid);
        gs.mu_curve.emplace_back(lam, mu);
        return mu;
    };

    double mu_lo = mu_at(lam_lo);
    double mu_hi = mu_at(lam_hi);
    for (int grow = 0; mu_hi > 1.0 && grow < 6 && lam_hi < 0.95 * m; ++grow)
        mu_hi = mu_at(lam_hi = std::min(1.8 * lam_hi, 0.95 * m));
    if (!(mu_lo > 1.0) || !(mu_hi < 1.0))
        throw std::domain_error(
            "ground_state_solve: bisection bracket invalid, mu(" +
            std::to_string(lam_lo) + ")=" + std::to_string(mu_lo) + ", mu(" +
            std::to_string(lam_hi) + ")=" + std::to_string(mu_hi));

    const double mu_tol = std::max(tol, 1e-8);
    double lam = 0.5 * (lam_lo + lam_hi), mu = 0.0;
    int steps = 0;
    for (; steps < 80; ++steps) {
        lam = 0.5 * (lam_lo + lam_hi);
        mu = mu_at(lam);
        if (std::abs(mu - 1.0) < mu_tol) break;
        (mu > 1.0 ? lam_lo : lam_hi) = lam;
        if (lam_hi - lam_lo < 1e-12 * lam_hi) break;
    }
    if (std::abs(mu - 1.0) >= std::max(100 * mu_tol, 1e-3))
        throw NumericError("ground_state_solve: bisection stalled at mu=" +
                           std::to_string(mu));

    gs.lambda_star = lam;
    gs.E = -lam;
    gs.bisection_steps = steps;
    gs.mu_at_solution = mu;

    // phi ~ G_lambda(V phi): one resolvent application to the eigenvector
    auto [mu_fin, eig] = birman_schwinger_mu(model, coupling, lam, grid);
    const int d = coupling.d;
    const std::vector<double>& r = grid.radii;
    const int n = static_cast<int>(r.size());
    std::vector<double> vw = radial_volume_weights(d, r);
    ResolventTable rt(model, lam, 2.4 * r.back() + 2.0, std::max(1024, 12 * n));
    Eigen::MatrixXd G = resolvent_kernel_matrix(rt, d, r);
    RadialFunction phi;
    phi.radii = r;
    phi.values.assign(n, 0.0);
    // the stored eigenvector is psi = sqrt(V) phi, so phi = G (sqrt(V) psi)
    const double sk = std::sqrt(coupling.kappa);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
            acc += G(i, j) * sk * std::pow(r[j], -0.5 * coupling.alpha) *
                   eig.values[j] * vw[j];
        phi.values[i] = acc;
    }
    phi.exponent_hint = coupling.delta;
    gs.phi = phi.normalized(d);
    for (double v : gs.phi.values)
        if (!(v > 0))
            throw NumericError(
                "ground_state_solve: recovered eigenfunction is not strictly "
                "positive");
    return gs;
}

double eigen_representation_residual(const GroundState& gs, double t,
                                     int n_terms, double tol, int n_r) {
    ApplyResult ap =
        perturbed_apply_radial(gs.model, gs.coupling, t, gs.phi, n_terms, tol,
                               n_r, 1e-3, 40.0);
    Interp1D phi_i(gs.phi.radii, gs.phi.values, true);
    const double fac = std::exp(gs.E * t);
    double worst = 0.0;
    for (size_t i = 0; i < ap.result.radii.size(); ++i) {
        const double r = ap.result.radii[i];
        if (r < 0.05 || r > 20.0) continue;
        const double ref = phi_i(r);
        const double dv = std::abs(fac * ap.result.values[i] - ref) / ref;
        if (!std::isfinite(dv)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, dv);
    }
    return worst;
}

DecayFits decay_exponent_fits(const GroundState& gs) {
    DecayFits out;
    std::vector<double> lx, ly, x2, y2;
    // skip the innermost cells: the resolvent recovery flattens there
    const double lo = std::max(1e-3, 4.0 * gs.phi.radii.front());
    for (size_t i = 0; i < gs.phi.radii.size(); ++i) {
        const double r = gs.phi.radii[i], v = gs.phi.values[i];
        if (v <= 0) continue;
        if (r >= lo && r <= 1e-1) {
            lx.push_back(std::log(r));
            ly.push_back(std::log(v));
        }
        if (r >= 8.0 && r <= 25.0) {
            x2.push_back(r);
            y2.push_back(std::log(v));
        }
    }
    if (lx.size() < 4 || x2.size() < 4)
        throw std::domain_error(
            "decay_exponent_fits: grid must span [1e-3, 30]");
    auto [s1, res1] = ls_slope(lx, ly);
    auto [s2, res2] = ls_slope(x2, y2);
    out.delta_hat = -s1;
    out.rate_hat = -s2;
    out.delta_fit_residual = res1;
    out.rate_fit_residual = res2;
    out.inconclusive = res1 > 0.1 || res2 > 0.1;
    return out;
}

AuditReport herbst_check(const GroundState& gs) {
    const double m = gs.model.m();
    const double kp = gs.coupling.kappa * std::numbers::pi / 2.0;
    const double lower = kp < 1.0 ? m * std::sqrt(1.0 - kp * kp) : 0.0;
    const double em = gs.E_m();
    AuditReport rep;
    rep.estimate_id = "herbst_spectral_interval";
    nlohmann::json par;
    par["m"] = m;
    par["kappa"] = gs.coupling.kappa;
    par["alpha"] = gs.coupling.alpha;
    par["d"] = gs.coupling.d;
    rep.parameters = par.dump();
    rep.grid_descriptor = "n_r=" + std::to_string(gs.phi.radii.size());
    rep.c_lower = lower;
    rep.c_upper = m;
    rep.max_residual = 0.0;
    const bool ok = lower <= em && em < m;
    rep.violations = ok ? 0 : 1;
    rep.verdict = ok ? Verdict::Pass : Verdict::Fail;
    rep.refinement_stable = true;
    nlohmann::json notes;
    notes["E_m"] = em;
    notes["lambda_star"] = gs.lambda_star;
    rep.notes = notes.dump();
    return rep;
}

std::string GroundState::to_json() const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(model.to_json());
    nlohmann::json cp;
    cp["d"] = coupling.d;
    cp["alpha"] = coupling.alpha;
    cp["kappa"] = coupling.kappa;
    cp["delta"] = coupling.delta;
    j["coupling"] = cp;
    j["E"] = E;
    j["E_m"] = E_m();
    j["lambda_star"] = lambda_star;
    j["grid"] = phi.radii;
    j["phi"] = phi.values;
    nlohmann::json mc = nlohmann::json::array();
    for (auto& [lam, mu] : mu_curve) mc.push_back({lam, mu});
    j["mu_curve"] = mc;
    j["bisection_steps"] = bisection_steps;
    j["mu_at_solution"] = mu_at_solution;
    try {
        DecayFits f = decay_exponent_fits(*this);
        j["fits"] = {{"delta_hat", f.delta_hat}, {"rate_hat", f.rate_hat}};
    } catch (const std::exception&) {
        j["fits"] = nullptr;
    }
    return j.dump(2);
}

} // namespace hk
