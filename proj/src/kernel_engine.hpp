#pragma once

#include <memory>
#include <string>
#include <vector>

#include "audit_report.hpp"
#include "grid.hpp"
#include "levy_models.hpp"

namespace hk {

// ---------------------------------------------------------------------------
// Free heat kernels by radial Fourier inversion
//
//   d=1:  p_t(r) = (1/pi)      int_0^inf e^{-t psi(rho)} cos(rho r) d rho
//   d=3:  p_t(r) = (1/2pi^2 r) int_0^inf e^{-t psi(rho)} rho sin(rho r) d rho
//
// with the analytic r -> 0 limit in d=3.
// ---------------------------------------------------------------------------

double heat_kernel(const LevyModel& model, double t, double r);

// Pure alpha-stable kernel (psi = rho^alpha).
double stable_heat_kernel(int d, double alpha, double t, double r);

// Closed-form oracle for alpha = 1 (Cauchy kernel):
//   G((d+1)/2) / pi^{(d+1)/2} * t / (t^2+r^2)^{(d+1)/2}.
double cauchy_oracle(int d, double t, double r);

// Closed form for the relativistic alpha = 1 kernel, obtained by Gaussian
// subordination of e^{-t sqrt(rho^2+m^2)}:
//   d=3:  e^{mt} t m^2 K_2(m S) / (2 pi^2 S^2),  S = sqrt(t^2+r^2),
//   d=1:  e^{mt} t m   K_1(m S) / (pi S).
// Used as an independent oracle and as a fast path for resolvent tables.
double relativistic_heat_oracle(const LevyModel& model, double t, double r);

// ---------------------------------------------------------------------------
// Kernel tables
// ---------------------------------------------------------------------------

enum class TableKind { Heat, StableHeat, Resolvent, Perturbed };

std::string table_kind_name(TableKind k);
TableKind table_kind_from_name(const std::string& name);

// Sampled space-time kernel on a radial x time grid (for resolvent kind
// the "times" axis carries lambda values). Values are row-major
// [time][radius]. Immutable once built.
struct KernelTable {
    TableKind kind = TableKind::Heat;
    std::string model_json;
    std::string coupling_json; // perturbed tables only
    std::vector<double> radii; // perturbed 1-d tables store signed xs
    std::vector<double> times;
    std::vector<double> values;
    std::string metadata_json;

    double at(size_t it, size_t ir) const {
        return values[it * radii.size() + ir];
    }
    double& at(size_t it, size_t ir) {
        return values[it * radii.size() + ir];
    }
    size_t n_r() const { return radii.size(); }
    size_t n_t() const { return times.size(); }
};

KernelTable build_heat_table(const LevyModel& model, const RadialGrid& grid);

// Total d-dimensional mass of a radial slice (index it) of a heat table.
double table_radial_mass(const LevyModel& model, const KernelTable& table,
                         size_t it);

// ---------------------------------------------------------------------------
// Continuous evaluator over a cached table: log-log interpolation inside
// the grid, p(t,0+) below r_min, and a t*nu(r)-matched tail above r_max.
// ---------------------------------------------------------------------------
class HeatEvaluator {
public:
    HeatEvaluator(const LevyModel& model, double t_min, double t_max,
                  int n_t = 96, double r_min = 1e-4, double r_max = 200.0,
                  int n_r = 384);

    double operator()(double t, double r) const;
    const LevyModel& model() const { return model_; }
    double t_min() const { return t_min_; }
    double t_max() const { return t_max_; }

private:
    LevyModel model_;
    double t_min_, t_max_;
    std::vector<double> times_;
    std::vector<double> radii_;
    std::vector<double> p0_;               // r -> 0 values per time
    std::vector<Interp1D> slices_;         // log-log in r per time
    std::vector<double> tail_factor_;      // p(r_max) / (t nu(r_max))
};

// Exact single-time kernel slice: Fourier values on a log radius grid,
// log-log interpolation in r, flat head below r_min and a t*nu-matched
// tail above r_max. No interpolation error in time.
class KernelSlice {
public:
    KernelSlice(const LevyModel& model, double t, double r_min = 1e-4,
                double r_max = 300.0, int n_r = 320);

    double operator()(double r) const;
    double t() const { return t_; }

private:
    LevyModel model_;
    double t_;
    double r_min_, r_max_;
    double p0_;
    double tail_factor_;
    Interp1D interp_;
};

// Fast kernel evaluator factory: closed forms where available (alpha=1
// Cauchy / relativistic, stable scaling profile), cached Fourier tables
// otherwise. Valid for t in [t_min, t_max].
std::function<double(double, double)> make_heat_callable(const LevyModel& model,
                                                         double t_min,
                                                         double t_max);

// ---------------------------------------------------------------------------
// Structural identity checks
// ---------------------------------------------------------------------------

// max over probe radii of |(p_s (*) p_t)(r) - p_{s+t}(r)| / p_{s+t}(r),
// with the d-dimensional radial convolution done by quadrature against
// continuous evaluators.
double chapman_kolmogorov_residual(const LevyModel& model, double s, double t,
                                   const std::vector<double>& probe_radii);

struct SubordinationCheck {
    double max_relative_residual = 0.0; // series identity on the grid
    double tail_bound = 0.0;            // truncation bound sup-norm
    long domination_violations = 0;     // p <= e^{|sigma|t} p_alpha failures
    double sigma_mass_numeric = 0.0;
};

// Residual of  p_alpha_t = e^{-|s|t} [ p_t + sum_{k<=k_max} t^k (p_t * s^{*k})/k! ]
// and the pointwise domination p <= e^{|sigma| t} p_alpha (d = 1).
SubordinationCheck subordination_relation_check(const LevyModel& model,
                                                double t,
                                                const std::vector<double>& radii,
                                                int k_max);

// ---------------------------------------------------------------------------
// Resolvent kernels  g_lambda(x) = int_0^inf e^{-lambda t} p_t(x) dt
// ---------------------------------------------------------------------------

// Laplace-in-time evaluation (accurate in the far field; no sign
// cancellation). Cross-checked against the direct Fourier form by
// resolvent_cross_check.
double resolvent(const LevyModel& model, double lambda, double r);

// Direct Fourier form, d=3: (1/2pi^2 r) int rho sin(rho r)/(lambda+psi),
// d=1: (1/pi) int cos(rho r)/(lambda+psi). Reliable at moderate r.
double resolvent_fourier(const LevyModel& model, double lambda, double r);

// Relative disagreement of the two routes at r; throws NumericError when
// beyond tol.
double resolvent_cross_check(const LevyModel& model, double lambda, double r,
                             double tol = 1e-3);

// Cached g_lambda on a fine log grid with a cumulative integral of
// w g(w), supporting the angular average reduction
//   (1/2) int_{-1}^{1} g(sqrt(rx^2+ry^2-2 rx ry u)) du
//     = (1/(2 rx ry)) int_{|rx-ry|}^{rx+ry} w g(w) dw.
class ResolventTable {
public:
    ResolventTable(const LevyModel& model, double lambda,
                   double w_max = 120.0, int n = 1536);

    double lambda() const { return lambda_; }
    double value(double r) const;
    double angular_average(double rx, double ry) const;

private:
    double cumulative(double w) const;

    LevyModel model_;
    double lambda_;
    std::vector<double> ws_;
    std::vector<double> gs_;
    std::vector<double> cum_; // int_0^{w_i} w g(w) dw
    double head_;             // w_0 g(w_0): scale of the head power law
    double head_exponent_;
    Interp1D interp_;
};

// Gauss-Legendre evaluation of the angular average (independent of the
// cumulative-integral route; used as a self-consistency oracle).
double angular_averaged_resolvent(const LevyModel& model, double lambda,
                                  double rx, double ry, int nodes = 64);

struct ConvolutionCheck {
    double max_relative_residual = 0.0;
    double mass_relative_error = 0.0; // vs lambda^{-n}
};

// Lemma-style identity  g_lambda^{*n}(x) = int_0^inf t^{n-1}/(n-1)!
// e^{-lambda t} p_t(x) dt  on a d=1 grid, n in {1,2,3}.
ConvolutionCheck resolvent_convolution_check(const LevyModel& model,
                                             double lambda, int n,
                                             const std::vector<double>& radii);

} // namespace hk
