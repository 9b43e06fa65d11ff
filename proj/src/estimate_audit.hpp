#pragma once

#include <vector>

#include "audit_report.hpp"
#include "duhamel.hpp"
#include "grid.hpp"
#include "hardy_map.hpp"
#include "levy_models.hpp"
#include "spectral.hpp"

namespace hk {

// Empirical two-sided comparability of the free kernel with its profile
// bound:  c_lower <= p_t(r) / (t^{-d/alpha} min tnu(r)) <= c_upper over
// t in (0,T] and the grid radii. PASS = both constants finite and moving
// < 25% under grid coarsening (consistency with the estimate, not a
// proof).
AuditReport kernel_comparability_audit(const LevyModel& model, double T,
                                       const RadialGrid& grid);

// Pointwise domination of the perturbed relativistic kernel by the
// perturbed stable one at equal (alpha, kappa):
//   ptilde_rel(t,x,y) <= e^{|sigma| t} ptilde_stable(t,x,y).
// Violations are counted beyond a 1e-8 relative slack; a second count at
// 1e-12 slack isolates quadrature-level noise.
AuditReport domination_audit(double alpha, int d, const HardyCoupling& coupling,
                             const std::vector<double>& t_list,
                             double m = 1.0, int n_r = 160);

// Upper comparability of the perturbed kernel (d = 1):
//   c_upper = sup over stored t <= T and grid cells of
//             ptilde(t,x,y) / [H(t,x) H(t,y) p(t,x,y)],
// plus the trivial pointwise check ptilde >= p. Runs at n_r_coarse and
// n_r_fine; PASS requires c_upper finite and moving < 25% between them.
AuditReport hardy_upper_audit(double alpha, int d, const LevyModel& model,
                              const HardyCoupling& coupling, double T,
                              int n_r_coarse = 256, int n_r_fine = 512);

// Lower comparability on the near-origin region |x| min |y| <= t^{1/alpha}
// for the stable model: c_lower = inf of the same ratio; PASS iff bounded
// away from zero and refinement-stable.
AuditReport hardy_lower_audit(double alpha, int d,
                              const HardyCoupling& coupling, double T,
                              int n_r_coarse = 128, int n_r_fine = 192);

// Far-field resolvent envelopes of a ground state:
//   phi(r) <= c sup_{|y|<=R} g_{lambda-eps}(x-y)   (= g at r-R),
//   phi(r) >= c~ inf_{|y|<=1} g_{lambda}(x-y)      (= g at r+1),
// over r in [5, 30] with eps = epsilon_frac * lambda and
// R = max(1, (kappa/eps)^{1/alpha}); reports the empirical c, c~.
AuditReport bound_state_envelope_audit(const GroundState& gs,
                                       double epsilon_frac = 0.1);

// Sub-convolution constant of the jump density in signed 1-d
// coordinates:  c = sup_{|x|,|y|>=1} nu(x) nu(y) / nu(x-y); PASS iff
// finite and refinement-stable.
AuditReport subconvolution_audit(const LevyModel& model,
                                 const RadialGrid& grid);

} // namespace hk
