#pragma once

// JSON configuration: parsing, validation and serialization.
//
//   {
//     "pool":    {"bins": [{"weight": 1, "alpha": 1, "lambda_bar": 1, "sigma": 0.9,
//                           "beta_c": 3, "beta_s": 10, "lambda0": 0.5}],
//                 "n_names": 200, "horizon": 1},
//     "factor":  {"kind": "OU", "gamma": 1},
//     "scaling": {"rule": "inv_sqrt_n"}          // or {"rule": {"a": 1, "q": 0.5}}
//     "grid":    {"steps": 100},
//     "k_max":   100,                            // optional parameter bound
//     "run":     {...}                           // subcommand-specific, passed through
//   }

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace poolldp {

using json = nlohmann::json;

struct ModelConfig {
    Pool pool;
    FactorModel factor;
    ScalingRegime scaling;
    std::size_t steps = 100;
    double k_max = kDefaultParameterBound;
    json run = json::object();

    TimeGrid grid() const { return TimeGrid(pool.horizon, steps); }
    double c_limit() const { return scaling.c_limit(factor.zeta()); }
};

namespace detail {

inline double number_field(const json& obj, const char* key) {
    if (!obj.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(std::string("key '") + key + "' must be a number");
    return v.get<double>();
}

inline double parse_weight(const json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        const auto slash = s.find('/');
        try {
            if (slash == std::string::npos) return std::stod(s);
            const double num = std::stod(s.substr(0, slash));
            const double den = std::stod(s.substr(slash + 1));
            if (den == 0.0) throw ConfigError("zero denominator in weight '" + s + "'");
            return num / den;
        } catch (const std::logic_error&) {
            throw ConfigError("cannot parse weight '" + s + "'");
        }
    }
    throw ConfigError("weight must be a number or a fraction string");
}

}  // namespace detail

/// Parses and validates the "pool" section. Weights within 1e-9 of summing
/// to one are renormalized; anything further off is rejected.
inline Pool validate_pool(const json& doc, double k_max = kDefaultParameterBound) {
    const json& p = doc.contains("pool") ? doc.at("pool") : doc;
    if (!p.is_object()) throw ConfigError("'pool' must be an object");
    if (!p.contains("bins") || !p.at("bins").is_array()) throw ConfigError("'pool.bins' must be an array");
    const auto& bins = p.at("bins");
    if (bins.empty()) throw ConfigError("empty bins");

    Pool pool;
    double total = 0.0;
    for (const auto& b : bins) {
        if (!b.is_object()) throw ConfigError("bin entries must be objects");
        Bin bin;
        bin.weight = b.contains("weight") ? detail::parse_weight(b.at("weight")) : 1.0;
        if (!(bin.weight > 0.0) || bin.weight > 1.0) throw ConfigError("bin weight must lie in (0, 1]");
        bin.type.alpha = detail::number_field(b, "alpha");
        bin.type.lambda_bar = detail::number_field(b, "lambda_bar");
        bin.type.sigma = detail::number_field(b, "sigma");
        bin.type.beta_c = detail::number_field(b, "beta_c");
        bin.type.beta_s = detail::number_field(b, "beta_s");
        bin.type.lambda0 = detail::number_field(b, "lambda0");
        check_name_type(bin.type, k_max);
        total += bin.weight;
        pool.bins.push_back(bin);
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("bin weights do not sum to 1");
    for (auto& b : pool.bins) b.weight /= total;

    const double n = detail::number_field(p, "n_names");
    if (!(n >= 1.0) || n != std::floor(n)) throw ConfigError("n_names must be a positive integer");
    pool.n_names = static_cast<std::size_t>(n);
    pool.horizon = p.contains("horizon") ? detail::number_field(p, "horizon") : 1.0;
    if (!(pool.horizon > 0.0)) throw ConfigError("horizon must be positive");
    return pool;
}

inline FactorModel parse_factor(const json& doc) {
    FactorModel f;
    if (!doc.contains("factor")) return f;
    const auto& j = doc.at("factor");
    const auto kind = j.value("kind", std::string("None"));
    if (kind == "None" || kind == "none") {
        f.kind = FactorKind::None;
    } else if (kind == "OU" || kind == "ou") {
        f.kind = FactorKind::OU;
    } else if (kind == "CIR" || kind == "cir") {
        f.kind = FactorKind::CIR;
    } else {
        throw ConfigError("unknown factor kind '" + kind + "'");
    }
    if (f.enabled()) {
        f.gamma = detail::number_field(j, "gamma");
        if (f.gamma < 0.0) throw ConfigError("negative parameter gamma");
    }
    if (f.kind == FactorKind::CIR) {
        f.xbar = j.contains("xbar") ? detail::number_field(j, "xbar") : 0.0;
        if (f.xbar < 0.0) throw ConfigError("negative parameter xbar");
    }
    if (j.contains("zeta")) {
        const double z = detail::number_field(j, "zeta");
        if (std::abs(z - f.zeta()) > 1e-12) throw ConfigError("zeta inconsistent with factor kind");
    }
    return f;
}

inline ScalingRegime parse_scaling(const json& doc, const FactorModel& factor) {
    ScalingRegime s = ScalingRegime::inverse_sqrt_n();
    if (doc.contains("scaling")) {
        const auto& rule = doc.at("scaling").at("rule");
        if (rule.is_string()) {
            const auto name = rule.get<std::string>();
            if (name == "inv_sqrt_n") {
                s = ScalingRegime::inverse_sqrt_n();
            } else if (name == "unit") {
                s = ScalingRegime::unit_for(factor.zeta());
            } else {
                throw ConfigError("unknown scaling rule '" + name + "'");
            }
        } else if (rule.is_object()) {
            s.a = detail::number_field(rule, "a");
            s.q = detail::number_field(rule, "q");
            if (!(s.a > 0.0) || !(s.q > 0.0)) throw ConfigError("scaling a and q must be positive");
        } else {
            throw ConfigError("scaling.rule must be a string or {a, q}");
        }
    }
    if (factor.enabled() && !s.admissible(factor.zeta()))
        throw ConfigError("scaling rule gives N*eps_N^(2 zeta) that is not constant in N");
    return s;
}

inline ModelConfig parse_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    ModelConfig cfg;
    if (doc.contains("k_max")) {
        cfg.k_max = detail::number_field(doc, "k_max");
        if (!(cfg.k_max > 0.0)) throw ConfigError("k_max must be positive");
    }
    cfg.pool = validate_pool(doc, cfg.k_max);
    cfg.factor = parse_factor(doc);
    if (cfg.factor.gamma > cfg.k_max || cfg.factor.xbar > cfg.k_max)
        throw ConfigError("factor parameter exceeds bound");
    cfg.scaling = parse_scaling(doc, cfg.factor);
    if (doc.contains("grid")) {
        const double steps = detail::number_field(doc.at("grid"), "steps");
        if (!(steps >= 2.0) || steps != std::floor(steps)) throw ConfigError("grid.steps must be an integer >= 2");
        cfg.steps = static_cast<std::size_t>(steps);
    }
    if (doc.contains("run")) cfg.run = doc.at("run");
    return cfg;
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    // A run manifest carries its resolved config under "config".
    if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config")) return parse_config(doc.at("config"));
    return parse_config(doc);
}

inline json to_json(const Pool& pool) {
    json bins = json::array();
    for (const auto& b : pool.bins) {
        bins.push_back({{"weight", b.weight},
                        {"alpha", b.type.alpha},
                        {"lambda_bar", b.type.lambda_bar},
                        {"sigma", b.type.sigma},
                        {"beta_c", b.type.beta_c},
                        {"beta_s", b.type.beta_s},
                        {"lambda0", b.type.lambda0}});
    }
    return {{"bins", bins}, {"n_names", pool.n_names}, {"horizon", pool.horizon}};
}

inline json to_json(const ModelConfig& cfg) {
    json factor = {{"kind", to_string(cfg.factor.kind)}};
    if (cfg.factor.enabled()) factor["gamma"] = cfg.factor.gamma;
    if (cfg.factor.kind == FactorKind::CIR) factor["xbar"] = cfg.factor.xbar;
    return {{"pool", to_json(cfg.pool)},
            {"factor", factor},
            {"scaling", {{"rule", {{"a", cfg.scaling.a}, {"q", cfg.scaling.q}}}}},
            {"grid", {{"steps", cfg.steps}}},
            {"k_max", cfg.k_max},
            {"run", cfg.run}};
}

}  // namespace poolldp
