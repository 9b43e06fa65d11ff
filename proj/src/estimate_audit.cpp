#include "estimate_audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "kernel_engine.hpp"

namespace hk {
namespace {

bool stable_move(double a, double b, double frac = 0.25) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return true;
    return std::abs(a - b) < frac * scale;
}

struct Band {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    void add(double x) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
};

} // namespace

AuditReport kernel_comparability_audit(const LevyModel& model, double T,
                                       const RadialGrid& grid) {
    std::vector<double> ts;
    for (double t : grid.times)
        if (t <= T) ts.push_back(t);
    if (ts.empty()) ts.push_back(T);
    auto p = make_heat_callable(model, ts.front(), ts.back());
    const double d_over_a = model.d() / model.alpha();

    auto band_on = [&](int stride) {
        Band b;
        for (size_t k = 0; k < ts.size(); k += stride) {
            const double t = ts[k];
            const double flat = std::pow(t, -d_over_a);
            for (size_t i = 0; i < grid.radii.size(); i += stride) {
                const double r = grid.radii[i];
                const double bound = std::min(flat, t * model.density(r));
                b.add(p(t, r) / bound);
            }
        }
        return b;
    };

    Band fine = band_on(1), coarse = band_on(2);
    AuditReport rep;
    rep.estimate_id = "free_kernel_profile_comparability";
    nlohmann::json par;
    par["model"] = nlohmann::json::parse(model.to_json());
    par["T"] = T;
    rep.parameters = par.dump();
    rep.grid_descriptor = "n_r=" + std::to_string(grid.radii.size()) +
                          " n_t=" + std::to_string(ts.size());
    rep.c_lower = fine.lo;
    rep.c_upper = fine.hi;
    rep.refinement_stable =
        stable_move(fine.lo, coarse.lo) && stable_move(fine.hi, coarse.hi);
    const bool finite = std::isfinite(fine.hi) && fine.lo > 0.0;
    rep.verdict =
        finite && rep.refinement_stable ? Verdict::Pass : Verdict::Fail;
    nlohmann::json notes;
    notes["statement"] =
        "finite, refinement-stable constants; consistency, not proof";
    notes["coarse_c_lower"] = coarse.lo;
    notes["coarse_c_upper"] = coarse.hi;
    rep.notes = notes.dump();
    return rep;
}

AuditReport domination_audit(double alpha, int d, const HardyCoupling& coupling,
                             const std::vector<double>& t_list, double m,
                             int n_r) {
    if (d != 1)
        throw std::domain_error("domination_audit: full tables exist in d=1 "
                                "only");
    const double T = *std::max_element(t_list.begin(), t_list.end());
    LevyModel rel = LevyModel::relativistic(1, alpha, m);
    LevyModel sta = LevyModel::stable(1, alpha);
    const double sig = rel.sigma_mass();

    SeriesSettings st;
    st.n_times = 9;
    st.t_ratio = 16;
    const double x_max = 20.0;

    auto run = [&](int nr) {
        PerturbedKernel1D pr(rel, coupling, nr, 1e-3, x_max, T, st);
        PerturbedKernel1D ps(sta, coupling, nr, 1e-3, x_max, T, st);
        long viol = 0, viol_tight = 0;
        double worst = 0.0;
        const size_t n = pr.xs().size();
        for (double t : t_list) {
            size_t it = 0;
            double best = 1e300;
            for (size_t k = 0; k < pr.times().size(); ++k)
                if (std::abs(pr.times()[k] - t) < best) {
                    best = std::abs(pr.times()[k] - t);
                    it = k;
                }
            const double fac = std::exp(sig * pr.times()[it]);
            const auto& a = pr.ptilde(it);
            const auto& b = ps.ptilde(it);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < n; ++j) {
                    const double lhs = a(i, j), rhs = fac * b(i, j);
                    if (rhs <= 0.0) continue;
                    const double rel_exc = lhs / rhs - 1.0;
                    worst = std::max(worst, lhs / rhs);
                    if (rel_exc > 1e-8) ++viol;
                    if (rel_exc > 1e-12) ++viol_tight;
                }
        }
        return std::tuple<long, long, double>{viol, viol_tight, worst};
    };

    auto [viol_f, tight_f, worst_f] = run(n_r);
    auto [viol_c, tight_c, worst_c] = run(std::max(48, (7 * n_r) / 10));

    AuditReport rep;
    rep.estimate_id = "perturbed_kernel_stable_domination";
    nlohmann::json par;
    par["alpha"] = alpha;
    par["kappa"] = coupling.kappa;
    par["m"] = m;
    par["t_list"] = t_list;
    rep.parameters = par.dump();
    rep.grid_descriptor = "n_r=" + std::to_string(n_r) + " x_max=20";
    rep.c_upper = worst_f; // sup of the dominated ratio, should be <= 1
    rep.c_lower = 0.0;
    rep.max_residual = std::max(worst_f - 1.0, 0.0);
    rep.violations = viol_f;
    rep.refinement_stable = (viol_f == 0) == (viol_c == 0);
    rep.verdict =
        viol_f == 0 && rep.refinement_stable ? Verdict::Pass : Verdict::Fail;
    nlohmann::json notes;
    notes["violations_slack_1e-12"] = tight_f;
    notes["coarse_violations"] = viol_c;
    notes["coarse_violations_slack_1e-12"] = tight_c;
    notes["coarse_sup_ratio"] = worst_c;
    notes["statement"] = "violations at 1e-12 slack attributed to quadrature";
    rep.notes = notes.dump();
    return rep;
}

namespace {

// sup / inf of ptilde / (H H p) over the stored tables; region selects
// which cells count toward the extremum.
struct HardyScan {
    double c_upper = 0.0;
    double c_lower = std::numeric_limits<double>::infinity();
    long lower_order_violations = 0; // ptilde < p beyond float slack
};

enum class Region { All, NearOrigin };

HardyScan hardy_scan(const PerturbedKernel1D& pk, Region region) {
    HardyScan s;
    const auto& xs = pk.xs();
    const size_t n = xs.size();
    const double al = pk.coupling().alpha, del = pk.coupling().delta;
    const double x_lim = 0.75 * xs.back();
    for (size_t it = 0; it < pk.times().size(); ++it) {
        const double t = pk.times()[it];
        const double t_scale = std::pow(t, 1.0 / al);
        const auto& pt = pk.ptilde(it);
        const auto& p0 = pk.free_kernel(it);
        for (size_t i = 0; i < n; ++i) {
            const double ax = std::abs(xs[i]);
            if (ax > x_lim) continue;
            const double hx = h_factor(t, ax, al, del);
            for (size_t j = 0; j < n; ++j) {
                const double ay = std::abs(xs[j]);
                if (ay > x_lim) continue;
                const double p = p0(i, j);
                if (!(p > 1e-26)) continue;
                const double ratio = pt(i, j) / p;
                if (ratio < 1.0 - 1e-5) ++s.lower_order_violations;
                const double c = ratio / (hx * h_factor(t, ay, al, del));
                const bool near = std::min(ax, ay) <= t_scale;
                if (region == Region::All || near) {
                    s.c_upper = std::max(s.c_upper, c);
                    s.c_lower = std::min(s.c_lower, c);
                }
            }
        }
    }
    return s;
}

} // namespace

AuditReport hardy_upper_audit(double alpha, int d, const LevyModel& model,
                              const HardyCoupling& coupling, double T,
                              int n_r_coarse, int n_r_fine) {
    if (d != 1)
        throw std::domain_error("hardy_upper_audit: d=1 tables only");
    SeriesSettings st;
    st.n_sub = 8;
    st.n_times = 5;
    st.t_ratio = 16;
    auto run = [&](int nr) {
        PerturbedKernel1D pk(model, coupling, nr, 1e-3, 20.0, T, st);
        return hardy_scan(pk, Region::All);
    };
    HardyScan coarse = run(n_r_coarse);
    HardyScan fine = run(n_r_fine);

    AuditReport rep;
    rep.estimate_id = "perturbed_kernel_upper_comparability";
    nlohmann::json par;
    par["model"] = nlohmann::json::parse(model.to_json());
    par["kappa"] = coupling.kappa;
    par["delta"] = coupling.delta;
    par["T"] = T;
    rep.parameters = par.dump();
    rep.grid_descriptor = "n_r=" + std::to_string(n_r_coarse) + "/" +
                          std::to_string(n_r_fine) + " x_max=20";
    rep.c_upper = fine.c_upper;
    rep.c_lower = fine.c_lower;
    rep.violations = fine.lower_order_violations;
    rep.refinement_stable = stable_move(fine.c_upper, coarse.c_upper);
    const bool ok = std::isfinite(fine.c_upper) && fine.c_upper > 0.0 &&
                    fine.lower_order_violations == 0 && rep.refinement_stable;
    rep.verdict = ok ? Verdict::Pass : Verdict::Fail;
    nlohmann::json notes;
    notes["coarse_c_upper"] = coarse.c_upper;
    notes["statement"] =
        "finite, refinement-stable constant; consistency, not proof";
    rep.notes = notes.dump();
    return rep;
}

AuditReport hardy_lower_audit(double alpha, int d,
                              const HardyCoupling& coupling, double T,
                              int n_r_coarse, int n_r_fine) {
    if (d != 1)
        throw std::domain_error("hardy_lower_audit: d=1 tables only");
    LevyModel model = LevyModel::stable(1, alpha);
    SeriesSettings st;
    st.n_sub = 10;
    st.n_times = 7;
    st.t_ratio = 16;
    auto run = [&](int nr) {
        PerturbedKernel1D pk(model, coupling, nr, 1e-3, 20.0, T, st);
        return hardy_scan(pk, Region::NearOrigin);
    };
    HardyScan coarse = run(n_r_coarse);
    HardyScan fine = run(n_r_fine);

    AuditReport rep;
    rep.estimate_id = "perturbed_kernel_lower_comparability";
    nlohmann::json par;
    par["alpha"] = alpha;
    par["kappa"] = coupling.kappa;
    par["delta"] = coupling.delta;
    par["T"] = T;
    rep.parameters = par.dump();
    rep.grid_descriptor = "n_r=" + std::to_string(n_r_coarse) + "/" +
                          std::to_string(n_r_fine) +
                          " region |x| min |y| <= t^{1/alpha}";
    rep.c_lower = fine.c_lower;
    rep.c_upper = fine.c_upper;
    rep.refinement_stable = stable_move(fine.c_lower, coarse.c_lower);
    const bool ok = fine.c_lower > 1e-2 && rep.refinement_stable;
    rep.verdict = ok ? Verdict::Pass : Verdict::Fail;
    nlohmann::json notes;
    notes["coarse_c_lower"] = coarse.c_lower;
    rep.notes = notes.dump();
    return rep;
}

AuditReport bound_state_envelope_audit(const GroundState& gs,
                                       double epsilon_frac) {
    const double lam = gs.lambda_star;
    const double eps = epsilon_frac * lam;
    const double al = gs.coupling.alpha;
    const double R =
        std::max(1.0, std::pow(gs.coupling.kappa / eps, 1.0 / al));

    auto scan = [&](int n_tab) {
        ResolventTable up(gs.model, lam - eps, 90.0, n_tab);
        ResolventTable lo(gs.model, lam, 90.0, n_tab);
        double c = 0.0, ct = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < gs.phi.radii.size(); ++i) {
            const double r = gs.phi.radii[i];
            if (r < 5.0 || r > 30.0) continue;
            const double v = gs.phi.values[i];
            const double env_up = up.value(std::max(r - R, 1e-3));
            const double env_lo = lo.value(r + 1.0);
            c = std::max(c, v / env_up);
            ct = std::min(ct, v / env_lo);
        }
        return std::pair<double, double>{c, ct};
    };
    auto [c_f, ct_f] = scan(1536);
    auto [c_c, ct_c] = scan(900);

    // far-field log-slope comparison of phi and g_lambda
    ResolventTable g(gs.model, lam, 90.0, 1024);
    double s_phi = 0, s_g = 0;
    {
        double r0 = 9.0, r1 = 24.0;
        Interp1D phi_i(gs.phi.radii, gs.phi.values, true);
        s_phi = std::log(phi_i(r1) / phi_i(r0)) / (r1 - r0);
        s_g = std::log(g.value(r1) / g.value(r0)) / (r1 - r0);
    }

    AuditReport rep;
    rep.estimate_id = "ground_state_resolvent_envelopes";
    nlohmann::json par;
    par["lambda_star"] = lam;
    par["epsilon"] = eps;
    par["R"] = R;
    par["kappa"] = gs.coupling.kappa;
    rep.parameters = par.dump();
    rep.grid_descriptor =
        "r in [5,30], n_r=" + std::to_string(gs.phi.radii.size());
    rep.c_upper = c_f;
    rep.c_lower = ct_f;
    rep.refinement_stable = stable_move(c_f, c_c) && stable_move(ct_f, ct_c);
    const bool ok = std::isfinite(c_f) && c_f > 0.0 && ct_f > 0.0 &&
                    std::isfinite(ct_f) && rep.refinement_stable;
    rep.verdict = ok ? Verdict::Pass : Verdict::Fail;
    nlohmann::json notes;
    notes["log_slope_phi"] = s_phi;
    notes["log_slope_resolvent"] = s_g;
    notes["per_eigenfunction_constants"] = true;
    rep.notes = notes.dump();
    return rep;
}

AuditReport subconvolution_audit(const LevyModel& model,
                                 const RadialGrid& grid) {
    std::vector<double> xs;
    for (double r : grid.radii)
        if (r >= 1.0) xs.push_back(r);
    auto sup_on = [&](size_t stride) {
        double c = 0.0;
        for (size_t i = 0; i < xs.size(); i += stride)
            for (size_t j = 0; j < xs.size(); j += stride)
                for (int sgn = -1; sgn <= 1; sgn += 2) {
                    // (x, y) = (xs[i], sgn*xs[j]) in signed coordinates
                    const double diff = std::abs(xs[i] - sgn * xs[j]);
                    if (diff < 1e-12) continue;
                    c = std::max(c, model.density(xs[i]) *
                                        model.density(xs[j]) /
                                        model.density(diff));
                }
        return c;
    };
    const double c_f = sup_on(1), c_c = sup_on(2);
    AuditReport rep;
    rep.estimate_id = "jump_density_subconvolution";
    nlohmann::json par;
    par["model"] = nlohmann::json::parse(model.to_json());
    rep.parameters = par.dump();
    rep.grid_descriptor =
        "signed pairs, |x|,|y| >= 1, n=" + std::to_string(xs.size());
    rep.c_upper = c_f;
    rep.refinement_stable = stable_move(c_f, c_c);
    rep.verdict = std::isfinite(c_f) && c_f > 0.0 && rep.refinement_stable
                      ? Verdict::Pass
                      : Verdict::Fail;
    nlohmann::json notes;
    notes["coarse_c"] = c_c;
    rep.notes = notes.dump();
    return rep;
}

} // namespace hk
