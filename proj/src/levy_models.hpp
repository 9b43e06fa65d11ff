#pragma once

#include <functional>
#include <string>
#include <vector>

namespace hk {

enum class ModelKind { Stable, Relativistic, Tempered, Layered };

// Density constant c_{d,alpha} of the rotation-invariant alpha-stable
// Levy density  nu_alpha(y) = c_{d,alpha} |y|^{-d-alpha}.
double stable_density_constant(int d, double alpha);

// A Levy symbol/density pair from the catalog. All members are pure and
// the object is immutable after construction, so concurrent use is safe.
class LevyModel {
public:
    static LevyModel stable(int d, double alpha);
    static LevyModel relativistic(int d, double alpha, double m);
    static LevyModel tempered(int d, double alpha, double lambda, double beta);
    static LevyModel layered(int d, double alpha, double gamma);

    // {"d":3,"alpha":1.0,"kind":"relativistic","m":1.0}
    static LevyModel from_json(const std::string& json_text);
    std::string to_json() const;

    int d() const { return d_; }
    double alpha() const { return alpha_; }
    ModelKind kind() const { return kind_; }
    double m() const { return m_; }
    double lambda() const { return lambda_; }
    double beta() const { return beta_; }
    double gamma() const { return gamma_; }

    // Levy symbol psi(rho), rho = |xi| >= 0.
    double symbol(double rho) const;

    // Radial Levy density nu(r), r > 0.
    double density(double r) const;

    // Stable reference density nu_alpha(r).
    double stable_density(double r) const;

    // sigma(r) = nu_alpha(r) - nu(r) >= 0 under (A1).
    double sigma_density(double r) const;

    // |sigma| = int sigma; analytic where the catalog provides a closed
    // form, numeric radial integral otherwise.
    double sigma_mass() const;
    double sigma_mass_numeric() const;

    std::string kind_name() const;

private:
    LevyModel(int d, double alpha, ModelKind kind);

    int d_;
    double alpha_;
    ModelKind kind_;
    double m_ = 0.0;      // relativistic mass
    double lambda_ = 0.0; // tempering rate
    double beta_ = 0.0;   // tempering exponent
    double gamma_ = 0.0;  // layered suppression exponent (r_cut = 1)
    double c_stable_;
};

// Surface area of the unit sphere in R^d.
double sphere_area(int d);

// d-dimensional integral of a radial function given on (0,inf).
double radial_integral(int d, const std::function<double(double)>& f,
                       double r_lo, double r_hi, double abs_tol);

struct ProfileCheck {
    double sigma_min = 0.0;       // min of sigma_density over the grid
    double djp_sup = 0.0;         // grid estimate of the DJP supremum
    double djp_growth = 0.0;      // S(x_max) / S(x_max/10)
    bool djp_pass = false;
    double nu_by_psi_constant = 0.0; // inf over r<=1 of nu(r) r^d / psi*(1/r)
    bool sigma_pass = false;
};

// Grid checks of (A1), the DJP condition of (A2) and the lower bound
// nu(x) >= c psi*(1/|x|)/|x|^d. The DJP integral is read as an integral
// in y (the display in the source omits the variable); the verdict is a
// finite-grid estimate, not a proof.
ProfileCheck check_profile_conditions(const LevyModel& model,
                                      const std::vector<double>& radii);

} // namespace hk
