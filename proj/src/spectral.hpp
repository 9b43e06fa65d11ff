#pragma once

#include <string>
#include <utility>
#include <vector>

#include "audit_report.hpp"
#include "grid.hpp"
#include "hardy_map.hpp"
#include "levy_models.hpp"

namespace hk {

// Symmetric Dirichlet form  E[f] = 1/2 int int (f(x)-f(y))^2 nu(x-y) dx dy
// for a radial f (d = 1 or 3). The diagonal singularity is handled by
// exact power-law cell integrals of nu and a local-slope model on the
// coincidence cell; in d = 3 the angular variable is integrated out
// analytically first. Requires |f| at the outer grid end < 1e-3 max|f|
// (throws std::domain_error otherwise); exactly constant f returns 0.
double form_energy(const LevyModel& model, const RadialFunction& f);

// Relative residual of the form decomposition
//   E[f] + |sigma| ||f||^2 - <sigma f, f> = E_alpha[f],
// where <sigma f,f> = int int sigma(x-y) f(x) f(y) dx dy and E_alpha is
// the form of the pure stable reference model.
double form_identity_residual(const LevyModel& model, const RadialFunction& f);

// int f(x)^2 |x|^{-a} dx over R^d, grid part plus an analytic head from
// the exponent hint. Throws std::domain_error when the hinted origin
// behaviour makes the integral divergent.
double singular_moment(double a, int d, const RadialFunction& f);

// [int f^2 |x|^{-alpha}] / E_alpha[f]; bounded by 1/kappa_star for all
// admissible f (sharp Hardy constant); checked one-sided by the audits.
double hardy_ratio(double alpha, int d, const RadialFunction& f);

// Ground state of H = -L - kappa |x|^{-alpha} via the Birman-Schwinger
// principle: E = -lambda is an eigenvalue iff the largest eigenvalue
// mu(lambda) of  B_lambda = sqrt(V) G_lambda sqrt(V)  equals 1.
struct GroundState {
    LevyModel model;
    HardyCoupling coupling;
    double E = 0.0;           // eigenvalue of H, E < 0
    double lambda_star = 0.0; // -E
    RadialFunction phi;       // positive, L2-normalized (d-dim radial)
    std::vector<std::pair<double, double>> mu_curve; // sampled (lambda, mu)
    int bisection_steps = 0;
    double mu_at_solution = 0.0;

    // relativistic models: eigenvalue of the physical operator before
    // the -m shift.
    double E_m() const { return E + model.m(); }

    std::string to_json() const;
};

// Largest eigenvalue and (positive) eigenvector of the discretized
// B_lambda with d-dimensional radial volume weights; power iteration
// with Rayleigh-quotient stopping (delta mu < 1e-9, cap 1e4 steps ->
// NumericError). d = 3 uses the angular-averaged resolvent; d = 1 the
// even reflection g(|r-rho|) + g(r+rho).
std::pair<double, RadialFunction> birman_schwinger_mu(
    const LevyModel& model, const HardyCoupling& coupling, double lambda,
    const RadialGrid& grid);

// Bisection on mu(lambda) = 1 over the spectral bracket
// [1e-4 m, m (1 - sqrt(1 - (kappa pi / 2)^2)) * 1.1]; phi recovered via
// phi = G_lambda(V phi) and normalized. Requires a relativistic model
// and kappa < kappa_star. Bracket failures throw std::domain_error with
// mu at both ends.
GroundState ground_state_solve(const LevyModel& model,
                               const HardyCoupling& coupling,
                               const RadialGrid& grid, double tol);

// max over r in [0.05, 20] of |e^{Et} (P~_t phi)(r) - phi(r)| / phi(r),
// with P~_t phi computed by the perturbation-series semigroup action
// (independent of the resolvent machinery used in the solve).
double eigen_representation_residual(const GroundState& gs, double t,
                                     int n_terms = 12, double tol = 1e-4,
                                     int n_r = 220);

struct DecayFits {
    double delta_hat = 0.0; // -slope of log phi vs log r, r in [1e-3, 0.1]
    double rate_hat = 0.0;  // -slope of log phi vs r, r in [8, 25]
    double delta_fit_residual = 0.0; // rms of the log-log fit
    double rate_fit_residual = 0.0;  // rms of the log-linear fit
    bool inconclusive = false;       // a fit residual exceeded 0.1
};

DecayFits decay_exponent_fits(const GroundState& gs);

// PASS iff  m sqrt(1 - (kappa pi / 2)^2) <= E + m < m  (relativistic
// d = 3, alpha = 1 spectral enclosure).
AuditReport herbst_check(const GroundState& gs);

} // namespace hk
