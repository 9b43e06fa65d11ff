#include "audit_report.hpp"

#include <nlohmann/json.hpp>

namespace hk {

std::string verdict_name(Verdict v) {
    switch (v) {
    case Verdict::Pass: return "PASS";
    case Verdict::Fail: return "FAIL";
    default: return "INCONCLUSIVE";
    }
}

std::string AuditReport::to_json() const {
    nlohmann::json j;
    j["estimate_id"] = estimate_id;
    auto maybe_obj = [](const std::string& s) -> nlohmann::json {
        if (s.empty()) return nlohmann::json();
        auto p = nlohmann::json::parse(s, nullptr, false);
        return p.is_discarded() ? nlohmann::json(s) : p;
    };
    j["parameters"] = maybe_obj(parameters);
    j["grid"] = grid_descriptor;
    j["c_lower"] = c_lower;
    j["c_upper"] = c_upper;
    j["max_residual"] = max_residual;
    j["violations"] = violations;
    j["verdict"] = verdict_name(verdict);
    j["refinement_stable"] = refinement_stable;
    j["notes"] = maybe_obj(notes);
    return j.dump(2);
}

} // namespace hk
