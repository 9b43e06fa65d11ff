#include "levy_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "quadrature.hpp"
#include "special.hpp"

namespace hk {

using nlohmann::json;

double stable_density_constant(int d, double alpha) {
    if (d < 1)
        throw std::domain_error("stable_density_constant: d must be positive");
    if (!(alpha > 0.0 && alpha < 2.0))
        throw std::domain_error(
            "stable_density_constant: alpha must lie in (0, 2)");
    return alpha * std::pow(2.0, alpha - 1.0) * gamma_fn(0.5 * (d + alpha)) /
           (std::pow(M_PI, 0.5 * d) * gamma_fn(1.0 - 0.5 * alpha));
}

double sphere_area(int d) {
    switch (d) {
        case 1: return 2.0;
        case 2: return 2.0 * M_PI;
        case 3: return 4.0 * M_PI;
        default: return 2.0 * std::pow(M_PI, 0.5 * d) / gamma_fn(0.5 * d);
    }
}

double radial_integral(int d, const std::function<double(double)>& f,
                       double r_lo, double r_hi, double abs_tol) {
    const double area = sphere_area(d);
    auto g = [&](double s) {
        const double r = std::exp(s);
        return f(r) * std::pow(r, d) * area; // extra r from log substitution
    };
    return adaptive_simpson(g, std::log(r_lo), std::log(r_hi), abs_tol);
}

LevyModel::LevyModel(int d, double alpha, ModelKind kind)
    : d_(d), alpha_(alpha), kind_(kind),
      c_stable_(stable_density_constant(d, alpha)) {
    if (d != 1 && d != 3)
        throw std::domain_error("LevyModel: only d=1 and d=3 are supported");
}

LevyModel LevyModel::stable(int d, double alpha) {
    return LevyModel(d, alpha, ModelKind::Stable);
}

LevyModel LevyModel::relativistic(int d, double alpha, double m) {
    if (!(m > 0.0)) throw std::domain_error("LevyModel: mass must be positive");
    LevyModel mod(d, alpha, ModelKind::Relativistic);
    mod.m_ = m;
    return mod;
}

LevyModel LevyModel::tempered(int d, double alpha, double lambda, double beta) {
    if (!(lambda > 0.0))
        throw std::domain_error("LevyModel: lambda must be positive");
    if (!(beta > alpha))
        throw std::domain_error("LevyModel: tempering requires beta > alpha");
    LevyModel mod(d, alpha, ModelKind::Tempered);
    mod.lambda_ = lambda;
    mod.beta_ = beta;
    return mod;
}

LevyModel LevyModel::layered(int d, double alpha, double gamma) {
    if (!(gamma > 0.0))
        throw std::domain_error("LevyModel: gamma must be positive");
    LevyModel mod(d, alpha, ModelKind::Layered);
    mod.gamma_ = gamma;
    return mod;
}

std::string LevyModel::kind_name() const {
    switch (kind_) {
        case ModelKind::Stable: return "stable";
        case ModelKind::Relativistic: return "relativistic";
        case ModelKind::Tempered: return "tempered";
        case ModelKind::Layered: return "layered";
    }
    return "?";
}

LevyModel LevyModel::from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    const int d = j.at("d").get<int>();
    const double alpha = j.at("alpha").get<double>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "stable") return stable(d, alpha);
    if (kind == "relativistic")
        return relativistic(d, alpha, j.at("m").get<double>());
    if (kind == "tempered")
        return tempered(d, alpha, j.at("lambda").get<double>(),
                        j.at("beta").get<double>());
    if (kind == "layered") return layered(d, alpha, j.at("gamma").get<double>());
    throw std::domain_error("LevyModel: unknown kind '" + kind + "'");
}

std::string LevyModel::to_json() const {
    json j{{"d", d_}, {"alpha", alpha_}, {"kind", kind_name()}};
    if (kind_ == ModelKind::Relativistic) j["m"] = m_;
    if (kind_ == ModelKind::Tempered) {
        j["lambda"] = lambda_;
        j["beta"] = beta_;
    }
    if (kind_ == ModelKind::Layered) j["gamma"] = gamma_;
    return j.dump();
}

double LevyModel::stable_density(double r) const {
    if (!(r > 0.0)) throw std::domain_error("stable_density: r > 0 required");
    return c_stable_ * std::pow(r, -static_cast<double>(d_) - alpha_);
}

double LevyModel::density(double r) const {
    if (!(r > 0.0)) throw std::domain_error("density: r > 0 required");
    switch (kind_) {
        case ModelKind::Stable:
            return stable_density(r);
        case ModelKind::Tempered:
            return std::exp(-lambda_ * std::pow(r, beta_)) * stable_density(r);
        case ModelKind::Layered:
            return stable_density(r) * std::min(1.0, std::pow(r, -gamma_));
        case ModelKind::Relativistic: {
            const double mu = 0.5 * (d_ + alpha_);
            const double m1a = std::pow(m_, 1.0 / alpha_);
            const double pref = alpha_ * std::pow(2.0, 0.5 * (alpha_ - d_)) *
                                std::pow(m_, 0.5 * (d_ + alpha_) / alpha_) /
                                (std::pow(M_PI, 0.5 * d_) *
                                 gamma_fn(1.0 - 0.5 * alpha_));
            return pref * bessel_k(mu, m1a * r) / std::pow(r, mu);
        }
    }
    throw std::logic_error("density: unreachable");
}

double LevyModel::sigma_density(double r) const {
    if (!(r > 0.0)) throw std::domain_error("sigma_density: r > 0 required");
    if (kind_ == ModelKind::Stable) return 0.0;
    return stable_density(r) - density(r);
}

double LevyModel::sigma_mass() const {
    switch (kind_) {
        case ModelKind::Stable: return 0.0;
        case ModelKind::Relativistic: return m_;
        case ModelKind::Tempered:
            return std::pow(2.0, alpha_) * gamma_fn(0.5 * (d_ + alpha_)) *
                   gamma_fn(1.0 - alpha_ / beta_) /
                   (gamma_fn(0.5 * d_) * gamma_fn(1.0 - 0.5 * alpha_)) *
                   std::pow(lambda_, alpha_ / beta_);
        case ModelKind::Layered:
            // int_{r>1} (1 - r^{-gamma}) nu_alpha
            return sphere_area(d_) * c_stable_ *
                   (1.0 / alpha_ - 1.0 / (alpha_ + gamma_));
    }
    throw std::logic_error("sigma_mass: unreachable");
}

double LevyModel::sigma_mass_numeric() const {
    if (kind_ == ModelKind::Stable) return 0.0;
    const double v = radial_integral(
        d_, [&](double r) { return sigma_density(r); }, 1e-8, 1e4, 1e-9);
    if (!std::isfinite(v))
        throw NumericError("sigma_mass_numeric: integral did not converge");
    return v;
}

namespace {

// 1 - cos(z) without cancellation.
double one_minus_cos(double z) {
    const double s = std::sin(0.5 * z);
    return 2.0 * s * s;
}

// 1 - sin(z)/z, stable near zero.
double one_minus_sinc(double z) {
    const double az = std::abs(z);
    if (az < 1e-3) {
        const double z2 = z * z;
        return z2 / 6.0 - z2 * z2 / 120.0;
    }
    return 1.0 - std::sin(z) / z;
}

} // namespace

double LevyModel::symbol(double rho) const {
    if (rho < 0.0) throw std::domain_error("symbol: rho >= 0 required");
    if (rho == 0.0) return 0.0;
    switch (kind_) {
        case ModelKind::Stable:
            return std::pow(rho, alpha_);
        case ModelKind::Relativistic:
            return std::pow(rho * rho + std::pow(m_, 2.0 / alpha_),
                            0.5 * alpha_) - m_;
        default:
            break;
    }
    // Tempered / layered: psi = rho^alpha - psi_sigma with
    // psi_sigma(rho) = int (1 - cos(xi.y)) sigma(y) dy reduced over angles.
    // Near zero the (1-cos)/(1-sinc) form kills the cancellation; the tail
    // is written as |sigma|-part minus an oscillatory Fourier piece.
    const double split = std::min(1.0 / rho, 8.0);
    double psi_sigma = 0.0;
    if (d_ == 1) {
        auto head = [&](double s) {
            const double y = std::exp(s);
            return 2.0 * one_minus_cos(rho * y) * sigma_density(y) * y;
        };
        psi_sigma += adaptive_simpson(head, std::log(1e-10), std::log(split),
                                      1e-11);
        auto plain = [&](double s) {
            const double y = std::exp(s);
            return 2.0 * sigma_density(y) * y;
        };
        psi_sigma += adaptive_simpson(plain, std::log(split), std::log(1e4),
                                      1e-11);
        auto amp = [&](double y) { return 2.0 * sigma_density(y); };
        const double cutoff = std::max(1e3, split * 50.0);
        double osc = filon_integral(amp, rho, false, split, cutoff, 1e-11,
                                    std::max(split / 8.0, 1e-3));
        osc += oscillatory_tail(amp, rho, false, cutoff);
        psi_sigma -= osc;
    } else {
        auto head = [&](double s) {
            const double y = std::exp(s);
            return 4.0 * M_PI * one_minus_sinc(rho * y) * sigma_density(y) *
                   y * y * y;
        };
        psi_sigma += adaptive_simpson(head, std::log(1e-10), std::log(split),
                                      1e-11);
        auto plain = [&](double s) {
            const double y = std::exp(s);
            return 4.0 * M_PI * sigma_density(y) * y * y * y;
        };
        psi_sigma += adaptive_simpson(plain, std::log(split), std::log(1e4),
                                      1e-11);
        auto amp = [&](double y) {
            return 4.0 * M_PI * sigma_density(y) * y / rho;
        };
        const double cutoff = std::max(1e3, split * 50.0);
        double osc = filon_integral(amp, rho, true, split, cutoff, 1e-11,
                                    std::max(split / 8.0, 1e-3));
        osc += oscillatory_tail(amp, rho, true, cutoff);
        psi_sigma -= osc;
    }
    const double psi = std::pow(rho, alpha_) - psi_sigma;
    return std::max(psi, 0.0);
}

ProfileCheck check_profile_conditions(const LevyModel& model,
                                      const std::vector<double>& radii) {
    ProfileCheck out;
    if (radii.empty())
        throw std::domain_error("check_profile_conditions: empty grid");

    out.sigma_min = 0.0;
    for (double r : radii)
        out.sigma_min = std::min(out.sigma_min, model.sigma_density(r));
    // Numerical (A1): allow roundoff relative to the stable envelope.
    out.sigma_pass = true;
    for (double r : radii)
        if (model.sigma_density(r) < -1e-10 * model.stable_density(r))
            out.sigma_pass = false;

    auto f1 = [&](double r) { return std::min(model.density(r), 1.0); };

    // DJP supremum  sup_x int f1(|x-y|) f1(|y|) dy / f1(|x|), estimated on
    // a finite set of |x| values.
    const int d = model.d();
    auto djp_at = [&](double x) {
        double integral = 0.0;
        if (d == 1) {
            auto g = [&](double s) {
                const double y = std::exp(s);
                return (f1(std::abs(x - y)) + f1(x + y)) * f1(y) * y;
            };
            // avoid the removable point y = x
            integral = adaptive_simpson(g, std::log(1e-8),
                                        std::log(x) - 1e-6, 1e-10) +
                       adaptive_simpson(g, std::log(x) + 1e-6,
                                        std::log(1e4), 1e-10);
        } else {
            // int_{R^3} f1(|x-y|) f1(|y|) dy
            //   = (2 pi / x) int_0^inf s f1(s) int_{|x-s|}^{x+s} u f1(u) du ds
            auto inner = [&](double a, double b) {
                auto h = [&](double s) {
                    const double u = std::exp(s);
                    return u * u * f1(u);
                };
                if (b <= a + 1e-14) return 0.0;
                return adaptive_simpson(h, std::log(std::max(a, 1e-10)),
                                        std::log(b), 1e-10);
            };
            auto g = [&](double ls) {
                const double s = std::exp(ls);
                return s * s * f1(s) * inner(std::abs(x - s), x + s);
            };
            integral = 2.0 * M_PI / x *
                       adaptive_simpson(g, std::log(1e-6), std::log(2e2),
                                        1e-9);
        }
        return integral / f1(x);
    };

    const double x_lo = 1e-2, x_hi = 1e2;
    double sup = 0.0, at_hi = 0.0, at_mid = 0.0;
    for (int i = 0; i < 25; ++i) {
        const double x =
            x_lo * std::pow(x_hi / x_lo, i / 24.0);
        const double v = djp_at(x);
        sup = std::max(sup, v);
        if (i == 24) at_hi = v;
        if (i == 18) at_mid = v; // x = 10
    }
    out.djp_sup = sup;
    out.djp_growth = at_hi / at_mid;
    // Finite-grid reading of "sup < inf": the estimate must stop growing
    // along the grid. A factor-2 rise over the last decade is treated as
    // divergence.
    out.djp_pass = std::isfinite(sup) && out.djp_growth < 2.0;

    // Empirical constant in nu(x) >= c psi*(1/|x|) / |x|^d over r <= 1.
    double c_min = std::numeric_limits<double>::infinity();
    for (double r : radii) {
        if (r > 1.0) continue;
        double psi_star = 0.0;
        for (int k = 0; k <= 16; ++k)
            psi_star = std::max(psi_star,
                                model.symbol((1.0 / r) * k / 16.0));
        if (psi_star <= 0.0) continue;
        c_min = std::min(c_min,
                         model.density(r) * std::pow(r, d) / psi_star);
    }
    out.nu_by_psi_constant = c_min;
    return out;
}

} // namespace hk
