#include "quadrature.hpp"

#include <cmath>
#include <limits>

namespace hk {

namespace {

double simpson_rec(const Fn& f, double a, double b, double fa, double fm,
                   double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    const double noise = 1e-15 * (std::abs(fa) + 4.0 * std::abs(fm) +
                                  std::abs(fb)) * (b - a);
    if (depth <= 0 || std::abs(delta) <= std::max(15.0 * tol, noise))
        return left + right + delta / 15.0;
    return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

} // namespace

double adaptive_simpson(const Fn& f, double a, double b, double abs_tol,
                        int max_depth) {
    if (a == b) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_rec(f, a, b, fa, fm, fb, whole, abs_tol, max_depth);
}

double panel_adaptive(const Fn& f, double a, double b, double abs_tol,
                      double panel_width) {
    if (b <= a) return 0.0;
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / panel_width)));
    const double h = (b - a) / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        total += adaptive_simpson(f, a + i * h, a + (i + 1) * h, abs_tol / n);
    return total;
}

GaussLegendre::GaussLegendre(int n) : nodes(n), weights(n) {
    // Newton iteration on Legendre polynomials.
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
    }
}

double GaussLegendre::integrate(const Fn& f, double a, double b) const {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    double s = 0.0;
    for (size_t i = 0; i < nodes.size(); ++i)
        s += weights[i] * f(c + h * nodes[i]);
    return s * h;
}

const GaussLegendre& gauss_legendre_32() {
    static const GaussLegendre g(32);
    return g;
}

const GaussLegendre& gauss_legendre_64() {
    static const GaussLegendre g(64);
    return g;
}

namespace {

// Exact moments int_{-h}^{h} u^k e^{i omega u} du for k = 0,1,2,
// returned as (real part of m0, imag part of m1, real part of m2);
// the other components vanish by parity.
struct TrigMoments {
    double m0c; // int cos
    double m1s; // int u sin
    double m2c; // int u^2 cos
};

TrigMoments trig_moments(double omega, double h) {
    TrigMoments m{};
    const double theta = omega * h;
    if (std::abs(theta) < 0.5) {
        // Series in theta, stable near zero.
        const double t2 = theta * theta;
        // int cos = 2h (1 - t2/6 + t2^2/120 - t2^3/5040 ...)
        m.m0c = 2.0 * h * (1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0);
        // int u sin = 2h^2 (theta/3 - theta^3/30 + theta^5/840 ...)
        m.m1s = 2.0 * h * h * theta *
                (1.0 / 3.0 - t2 / 30.0 + t2 * t2 / 840.0 - t2 * t2 * t2 / 45360.0);
        // int u^2 cos = 2h^3 (1/3 - t2/10 + t2^2/168 - t2^3/6480 ...)
        m.m2c = 2.0 * h * h * h *
                (1.0 / 3.0 - t2 / 10.0 + t2 * t2 / 168.0 - t2 * t2 * t2 / 6480.0);
        return m;
    }
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    m.m0c = 2.0 * s / omega;
    m.m1s = 2.0 * (s - theta * c) / (omega * omega);
    m.m2c = 2.0 * (h * h * s / omega + 2.0 * h * c / (omega * omega) -
                   2.0 * s / (omega * omega * omega));
    return m;
}

// Filon panel: quadratic through the endpoints and midpoint of [a,b],
// integrated exactly against e^{i omega rho}; returns the sin- or
// cos-transform part.
double filon_panel(double f0, double f1, double f2, double a, double b,
                   double omega, bool use_sin) {
    const double h = 0.5 * (b - a);
    const double x1 = 0.5 * (a + b);
    const double c0 = f1;
    const double c1 = (f2 - f0) / (2.0 * h);
    const double c2 = (f0 - 2.0 * f1 + f2) / (2.0 * h * h);
    const TrigMoments m = trig_moments(omega, h);
    // e^{i omega x} = e^{i omega x1} e^{i omega u}; collect real/imag parts.
    const double re = c0 * m.m0c + c2 * m.m2c; // int q(u) cos(omega u)
    const double im = c1 * m.m1s;              // int q(u) sin(omega u)
    const double cw = std::cos(omega * x1);
    const double sw = std::sin(omega * x1);
    if (use_sin) return sw * re + cw * im;
    return cw * re - sw * im;
}

struct FilonWork {
    const Fn* g;
    double omega;
    bool use_sin;
    int evals = 0;
};

// Antiderivative terms of the 4-term integration-by-parts expansion of
// int g(rho) trig(omega rho) d rho, evaluated at x with five-point
// finite-difference derivatives of g. Accumulates a truncation estimate.
double ibp_antiderivative(FilonWork& w, double x, double delta, double& d3_out,
                          double& noise_out) {
    const Fn& g = *w.g;
    const double gm2 = g(x - 2 * delta), gm1 = g(x - delta), g0 = g(x);
    const double gp1 = g(x + delta), gp2 = g(x + 2 * delta);
    w.evals += 5;
    const double d1 = (-gp2 + 8 * gp1 - 8 * gm1 + gm2) / (12 * delta);
    const double d2 =
        (-gp2 + 16 * gp1 - 30 * g0 + 16 * gm1 - gm2) / (12 * delta * delta);
    const double d3 =
        (gp2 - 2 * gp1 + 2 * gm1 - gm2) / (2 * delta * delta * delta);
    const double om = w.omega;
    const double om2 = om * om, om3 = om2 * om, om4 = om2 * om2;
    const double s = std::sin(om * x), c = std::cos(om * x);
    d3_out = d3;
    noise_out = 2e-16 * std::abs(g0) / (delta * delta * delta * om4);
    if (w.use_sin)
        return -g0 * c / om + d1 * s / om2 + d2 * c / om3 - d3 * s / om4;
    return g0 * s / om + d1 * c / om2 - d2 * s / om3 - d3 * c / om4;
}

double ibp_segment(FilonWork& w, double a, double b, double& est) {
    double delta = (b - a) / 16.0;
    if (a > 0.0) delta = std::min(delta, 0.25 * a);
    double d3a, d3b, na, nb;
    const double Fb = ibp_antiderivative(w, b, delta, d3b, nb);
    const double Fa = ibp_antiderivative(w, a, delta, d3a, na);
    // the remainder is (1/om^4) int g'''' trig, bounded by the variation
    // of g''' across the segment; FD roundoff on d3 enters the value too
    const double om = w.omega;
    const double om4 = om * om * om * om;
    est = 4.0 * std::abs(d3b - d3a) / om4 + na + nb;
    return Fb - Fa;
}

double filon_rec(FilonWork& w, double a, double fa, double b, double fb,
                 double fm, double coarse, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double fl = (*w.g)(0.5 * (a + m));
    const double fr = (*w.g)(0.5 * (m + b));
    w.evals += 2;
    const double left = filon_panel(fa, fl, fm, a, m, w.omega, w.use_sin);
    const double right = filon_panel(fm, fr, fb, m, b, w.omega, w.use_sin);
    const double fine = left + right;
    // noise floor: below roundoff of the panel data the estimate is
    // meaningless and the tolerance can never be met
    const double noise = 1e-15 * (std::abs(fa) + 4.0 * std::abs(fm) +
                                  std::abs(fb)) * (b - a);
    if (depth <= 0 || std::abs(fine - coarse) <= std::max(tol, noise))
        return fine;
    return filon_rec(w, a, fa, m, fm, fl, left, 0.5 * tol, depth - 1) +
           filon_rec(w, m, fm, b, fb, fr, right, 0.5 * tol, depth - 1);
}

// Per-panel driver. For many oscillations per panel the quadratic-model
// bisection gains only a factor 2 per level (same as the tolerance), so
// wide panels go through integration by parts instead, which needs no
// subdivision when the amplitude is smooth on the panel scale.
double osc_rec(FilonWork& w, double a, double b, double tol, int depth) {
    if (w.omega * (b - a) > 3.0 && a > 0.0 && depth > 0) {
        double est = 0.0;
        const double v = ibp_segment(w, a, b, est);
        if (est <= tol) return v;
        const double m = 0.5 * (a + b);
        return osc_rec(w, a, m, 0.5 * tol, depth - 1) +
               osc_rec(w, m, b, 0.5 * tol, depth - 1);
    }
    const double fa = (*w.g)(a);
    const double fb = (*w.g)(b);
    const double fm = (*w.g)(0.5 * (a + b));
    w.evals += 3;
    const double coarse = filon_panel(fa, fm, fb, a, b, w.omega, w.use_sin);
    return filon_rec(w, a, fa, b, fb, fm, coarse, tol, depth);
}

} // namespace

double filon_integral(const Fn& g, double omega, bool use_sin,
                      double a, double b, double abs_tol,
                      double first_panel_width) {
    if (b <= a) return 0.0;
    FilonWork w{&g, omega, use_sin};
    // Panel boundaries: width first_panel_width near a, then geometric.
    // Adaptive bisection inside each panel controls the quadratic-model
    // error.
    std::vector<double> bounds;
    bounds.push_back(a);
    double width = first_panel_width;
    while (bounds.back() < b) {
        bounds.push_back(std::min(bounds.back() + width, b));
        width *= 2.0;
    }
    double total = 0.0;
    const int n_panels = static_cast<int>(bounds.size()) - 1;
    for (int i = 0; i < n_panels; ++i)
        total += osc_rec(w, bounds[i], bounds[i + 1], abs_tol / n_panels, 28);
    return total;
}

double oscillatory_tail(const Fn& g, double omega, bool use_sin, double C) {
    if (omega <= 0.0) return 0.0;
    const double h = 1e-3 * C;
    const double g0 = g(C);
    const double gp = (g(C + h) - g(C - h)) / (2.0 * h);
    const double gpp = (g(C + h) - 2.0 * g0 + g(C - h)) / (h * h);
    const double s = std::sin(omega * C);
    const double c = std::cos(omega * C);
    if (use_sin) {
        // int_C^inf g sin = g(C)cos(wC)/w + g'(C)sin(wC)/w^2 - g''(C)cos(wC)/w^3 ...
        return g0 * c / omega + gp * s / (omega * omega) -
               gpp * c / (omega * omega * omega);
    }
    return -g0 * s / omega + gp * c / (omega * omega) +
           gpp * s / (omega * omega * omega);
}

} // namespace hk
