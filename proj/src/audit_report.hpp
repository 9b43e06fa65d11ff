#pragma once

#include <string>

namespace hk {

enum class Verdict { Pass, Fail, Inconclusive };

// Empirical comparability constants and residuals for one estimate.
// PASS means "finite and refinement-stable on this grid" -- consistency
// with the estimate, not a proof of it.
struct AuditReport {
    std::string estimate_id;
    std::string parameters;
    std::string grid_descriptor;
    double c_lower = 0.0;
    double c_upper = 0.0;
    double max_residual = 0.0;
    long violations = 0;
    Verdict verdict = Verdict::Inconclusive;
    bool refinement_stable = false;
    std::string notes;

    std::string to_json() const;
};

std::string verdict_name(Verdict v);

} // namespace hk
