#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "hardy_map.hpp"
#include "levy_models.hpp"

namespace hk {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what)
        : std::runtime_error(what) {}
};

// Validated run configuration. Exactly one of kappa/delta may appear in
// the source JSON (the other is derived); desk-scale guards T <= 4 and
// N <= 2048 apply unless unsafe_large is set.
struct RunConfig {
    LevyModel model = LevyModel::stable(1, 0.5);
    std::optional<HardyCoupling> coupling;

    int n_r = 512;
    double r_min = 1e-3;
    double r_max = 1e2;
    int n_t = 64;
    double T = 0.5;

    double tol = 1e-3;
    int n_terms = 8;
    int nodes = 64;

    std::string out_path;
    std::string suite = "all";
    bool unsafe_large = false;

    std::string to_json() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

} // namespace hk
