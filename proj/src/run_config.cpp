#include "run_config.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace hk {

RunConfig parse_config(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    static const std::vector<std::string> known = {
        "model",  "kappa",   "delta",  "n_r",   "r_min",
        "r_max",  "n_t",     "T",      "tol",   "n_terms",
        "nodes",  "out",     "suite",  "unsafe_large"};
    std::vector<std::string> bad;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            bad.push_back(it.key());

    RunConfig cfg;
    if (!j.contains("model")) bad.push_back("model (required)");
    std::vector<std::string> invalid;
    auto num = [&](const char* key, double lo, double hi, double dflt) {
        if (!j.contains(key)) return dflt;
        if (!j[key].is_number()) {
            invalid.push_back(std::string(key) + ": not a number");
            return dflt;
        }
        double v = j[key].get<double>();
        if (v < lo || v > hi)
            invalid.push_back(std::string(key) + ": out of range [" +
                              std::to_string(lo) + "," + std::to_string(hi) +
                              "]");
        return v;
    };

    if (!bad.empty() || !j.contains("model")) {
        std::string msg = "config schema violation; offending fields:";
        for (auto& b : bad) msg += " " + b;
        throw ConfigError(msg);
    }

    try {
        cfg.model = LevyModel::from_json(j["model"].dump());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config model: ") + e.what());
    }

    cfg.unsafe_large = j.value("unsafe_large", false);
    const double n_cap = cfg.unsafe_large ? 1e9 : 2048;
    const double t_cap = cfg.unsafe_large ? 1e9 : 4.0;
    cfg.n_r = static_cast<int>(num("n_r", 8, n_cap, 512));
    cfg.r_min = num("r_min", 1e-9, 1.0, 1e-3);
    cfg.r_max = num("r_max", 1.0, 1e6, 1e2);
    cfg.n_t = static_cast<int>(num("n_t", 1, 4096, 64));
    cfg.T = num("T", 1e-6, t_cap, 0.5);
    cfg.tol = num("tol", 1e-12, 1.0, 1e-3);
    cfg.n_terms = static_cast<int>(num("n_terms", 1, 64, 8));
    cfg.nodes = static_cast<int>(num("nodes", 4, 1024, 64));
    cfg.out_path = j.value("out", std::string());
    cfg.suite = j.value("suite", std::string("all"));

    const bool has_k = j.contains("kappa"), has_d = j.contains("delta");
    if (has_k && has_d)
        invalid.push_back("kappa/delta: give exactly one, the other is "
                          "derived");
    if (!invalid.empty()) {
        std::string msg = "config invalid; offending fields:";
        for (auto& b : invalid) msg += " [" + b + "]";
        throw ConfigError(msg);
    }
    if (has_k || has_d) {
        const int d = cfg.model.d();
        const double al = cfg.model.alpha();
        // propagate hardy_map domain errors (e.g. supercritical kappa)
        cfg.coupling = has_k ? HardyCoupling::from_kappa(
                                   d, al, j["kappa"].get<double>())
                             : HardyCoupling::from_delta(
                                   d, al, j["delta"].get<double>());
    }
    if (cfg.r_min >= cfg.r_max)
        throw ConfigError("config invalid; offending fields: [r_min >= r_max]");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config file not found: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string RunConfig::to_json() const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(model.to_json());
    if (coupling) {
        j["kappa"] = coupling->kappa;
        j["derived_delta"] = coupling->delta;
    }
    j["n_r"] = n_r;
    j["r_min"] = r_min;
    j["r_max"] = r_max;
    j["n_t"] = n_t;
    j["T"] = T;
    j["tol"] = tol;
    j["n_terms"] = n_terms;
    j["nodes"] = nodes;
    if (!out_path.empty()) j["out"] = out_path;
    j["suite"] = suite;
    if (unsafe_large) j["unsafe_large"] = true;
    return j.dump(2);
}

} // namespace hk
