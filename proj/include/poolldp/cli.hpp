#pragma once

// Command-line front end: subcommand dispatch, CSV and manifest output, and
// the bundled reproduction report.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "core.hpp"
#include "lln.hpp"
#include "simulator.hpp"
#include "variational.hpp"

#ifndef POOLLDP_SOURCE_DIR
#define POOLLDP_SOURCE_DIR "."
#endif

namespace poolldp::cli {

inline constexpr const char* kVersion = "0.1.0";

enum Exit : int { kOk = 0, kNotConverged = 1, kConfigFailure = 2 };

/// "a:b:step" (inclusive of b up to rounding) or a comma list.
inline std::vector<double> parse_ells(const std::string& spec) {
    std::vector<double> out;
    try {
        if (spec.find(':') != std::string::npos) {
            std::stringstream ss(spec);
            std::string a, b, c;
            std::getline(ss, a, ':');
            std::getline(ss, b, ':');
            std::getline(ss, c, ':');
            const double lo = std::stod(a), hi = std::stod(b), step = std::stod(c);
            if (!(step > 0.0) || hi < lo) throw ConfigError("bad ell range '" + spec + "'");
            const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
            for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
        } else {
            std::stringstream ss(spec);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse ell list '" + spec + "'");
    }
    if (out.empty()) throw ConfigError("empty ell list");
    return out;
}

struct Variant {
    bool contagion = true;
    bool systematic = true;
};

inline Variant parse_variant(const std::string& name) {
    if (name == "full") return {true, true};
    if (name == "contagion") return {true, false};
    if (name == "systematic") return {false, true};
    if (name == "independent") return {false, false};
    throw ConfigError("unknown variant '" + name + "'");
}

/// Resolved settings shared by all subcommands.
struct RunSettings {
    std::string subcommand;
    std::string config_path;
    std::string out_dir = ".";
    std::string ells;
    std::string variant = "full";
    double ell = 0.85;
    std::size_t steps = 0;
    std::size_t reps = 0;
    std::size_t n = 0;
    std::size_t jobs = 0;
    std::size_t restarts = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

class Writer {
public:
    explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    std::ofstream open(const std::string& name) {
        std::ofstream f(dir_ / name);
        if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
        f << std::setprecision(std::numeric_limits<double>::max_digits10);
        files_.push_back(name);
        return f;
    }
    const std::vector<std::string>& files() const { return files_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

namespace detail {

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_manifest(Writer& w, const RunSettings& s, const ModelConfig& cfg, double seconds) {
    json m;
    m["manifest_version"] = 1;
    m["tool"] = {{"name", "poolldp"}, {"version", kVersion}};
    m["subcommand"] = s.subcommand;
    m["config"] = to_json(cfg);
    m["grid"] = {{"horizon", cfg.pool.horizon}, {"steps", cfg.steps}};
    if (cfg.run.contains("seed")) m["seeds"] = {{"master", cfg.run.at("seed")}};
    m["started_utc"] = utc_now();
    m["wall_clock_seconds"] = seconds;
    auto files = w.files();
    files.push_back("manifest.json");
    m["outputs"] = files;
    std::ofstream f(w.dir() / "manifest.json");
    f << m.dump(2) << "\n";
}

template <class T>
T run_value(const ModelConfig& cfg, const char* key, T fallback) {
    if (!cfg.run.contains(key)) return fallback;
    try {
        return cfg.run.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad run.") + key);
    }
}

inline std::vector<double> run_ells(const ModelConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return parse_ells(flag);
    if (!cfg.run.contains("ells")) throw ConfigError("no ell levels: pass --ells or set run.ells");
    const auto& e = cfg.run.at("ells");
    if (e.is_string()) return parse_ells(e.get<std::string>());
    if (e.is_array()) return e.get<std::vector<double>>();
    throw ConfigError("run.ells must be a string or an array");
}

/// Applies command-line overrides and records them in the config's run
/// section so the manifest snapshot reproduces the run without flags.
inline ModelConfig resolve(const RunSettings& s) {
    auto cfg = load_config(s.config_path);
    if (s.steps > 0) {
        if (s.steps < 2) throw ConfigError("--steps must be >= 2");
        cfg.steps = s.steps;
    }
    if (s.n > 0) cfg.pool.n_names = s.n;
    const auto v = parse_variant(s.variant);
    cfg.pool = with_variant(cfg.pool, v.contagion, v.systematic);
    if (s.reps > 0) cfg.run["reps"] = s.reps;
    if (s.seed_set) cfg.run["seed"] = s.seed;
    if (s.restarts > 0) cfg.run["restarts"] = s.restarts;
    if (!s.ells.empty()) cfg.run["ells"] = parse_ells(s.ells);
    return cfg;
}

inline RateOptions rate_options(const ModelConfig& cfg) {
    RateOptions o;
    o.restarts = run_value<std::size_t>(cfg, "restarts", o.restarts);
    return o;
}

inline std::size_t jobs(const RunSettings& s) {
    if (s.jobs > 0) return s.jobs;
    return std::max(1u, std::thread::hardware_concurrency());
}

inline std::vector<RateResult> rates(const ModelConfig& cfg, const std::vector<double>& ells) {
    return rate_curve(cfg.pool, ells, cfg.factor, cfg.c_limit(), cfg.grid(), rate_options(cfg));
}

}  // namespace detail

inline int cmd_lln(const RunSettings& s, const ModelConfig& cfg, Writer& w) {
    const auto r = typical_loss(cfg.pool, cfg.grid());
    auto f = w.open("lln.csv");
    f << "t,L\n";
    for (std::size_t k = 0; k < cfg.grid().nodes(); ++k) f << cfg.grid().time(k) << ',' << r.loss_path[k] << '\n';
    std::printf("L(%g) = %.6f  (%zu Picard iterations, residual %.2e)\n", cfg.pool.horizon, r.loss_path.terminal(),
                r.iterations, r.final_residual);
    (void)s;
    return r.converged ? kOk : kNotConverged;
}

inline int cmd_rate(const RunSettings& s, const ModelConfig& cfg, Writer& w) {
    const auto res = detail::rates(cfg, detail::run_ells(cfg, s.ells));
    auto f = w.open("rate.csv");
    f << "ell,I,converged,iterations\n";
    bool ok = true;
    for (const auto& r : res) {
        f << r.ell << ',' << r.value << ',' << (r.converged ? 1 : 0) << ',' << r.iterations << '\n';
        std::printf("ell %.4f  I %.6f%s\n", r.ell, r.value, r.converged ? "" : "  (not converged)");
        ok = ok && r.converged;
    }
    return ok ? kOk : kNotConverged;
}

inline int cmd_tail(const RunSettings& s, const ModelConfig& cfg, Writer& w) {
    const auto ells = detail::run_ells(cfg, s.ells);
    std::vector<TailPoint> pts;
    try {
        pts = tail_curve(cfg.pool, ells, cfg.factor, cfg.c_limit(), cfg.grid(), detail::rate_options(cfg));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    auto f = w.open("tail.csv");
    f << "ell,I,tail,log10_tail\n";
    bool ok = true;
    for (const auto& p : pts) {
        f << p.ell << ',' << p.rate << ',' << p.tail << ',' << p.log10_tail << '\n';
        std::printf("ell %.4f  I %.6f  P ~ 10^%.2f\n", p.ell, p.rate, p.log10_tail);
        ok = ok && p.converged;
    }
    return ok ? kOk : kNotConverged;
}

inline int cmd_extremals(const RunSettings& s, const ModelConfig& cfg, Writer& w) {
    const double ell = cfg.run.contains("ell") && s.ell == 0.85 ? cfg.run.at("ell").get<double>() : s.ell;
    const auto grid = cfg.grid();
    const bool sys = uses_factor(cfg.pool, cfg.factor);
    const auto r = sys ? minimize_rate_systematic(cfg.pool, ell, cfg.factor, cfg.c_limit(), grid, detail::rate_options(cfg))
                       : minimize_rate(cfg.pool, ell, grid, detail::rate_options(cfg));
    const GridPath psi = r.psi_extremal ? *r.psi_extremal : GridPath(grid);
    const auto u = factor_control(psi, cfg.factor);
    const auto bar = r.phi_bar(cfg.pool);
    auto f = w.open("extremals.csv");
    f << "t";
    for (std::size_t i = 0; i < cfg.pool.size(); ++i) f << ",phi_" << i + 1;
    f << ",phi_bar,psi,u\n";
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        f << grid.time(k);
        for (const auto& p : r.bin_extremals) f << ',' << p[k];
        // u lives on intervals; the last node repeats the final interval.
        f << ',' << bar[k] << ',' << psi[k] << ',' << u[std::min(k, u.size() - 1)] << '\n';
    }
    std::printf("ell %.4f  I %.6f  entropy %.6f  factor %.6f\n", ell, r.value, r.breakdown.entropy_term,
                r.breakdown.factor_term);
    return r.converged ? kOk : kNotConverged;
}

inline int cmd_simulate(const RunSettings& s, const ModelConfig& cfg, Writer& w) {
    const auto reps = detail::run_value<std::size_t>(cfg, "reps", 200);
    const auto seed = detail::run_value<std::uint64_t>(cfg, "seed", 1);
    const auto sim_steps = detail::run_value<std::size_t>(cfg, "sim_steps", std::max<std::size_t>(cfg.steps, 500));
    const TimeGrid grid(cfg.pool.horizon, sim_steps);
    SimulationOptions opts;
    opts.jobs = detail::jobs(s);
    const auto sum = estimate_loss_distribution(cfg.pool, cfg.factor, cfg.scaling, grid, reps, seed, opts);
    auto f = w.open("sim_summary.csv");
    f << "t,mean,q10,q50,q90\n";
    for (std::size_t k = 0; k < grid.nodes(); ++k)
        f << grid.time(k) << ',' << sum.mean[k] << ',' << sum.q10[k] << ',' << sum.q50[k] << ',' << sum.q90[k] << '\n';
    auto h = w.open("histogram.csv");
    h << "bin,count\n";
    for (std::size_t b = 0; b < sum.histogram.size(); ++b) h << b << ',' << sum.histogram[b] << '\n';
    std::printf("N %zu  reps %zu  mean L(T) %.5f +- %.5f  multi-default steps %zu\n", cfg.pool.n_names, reps,
                sum.terminal_mean(), sum.terminal_std_error(), sum.cascade_steps);
    return kOk;
}

inline int cmd_validate(const RunSettings&, const ModelConfig& cfg, Writer&) {
    std::cout << to_json(cfg).dump(2) << "\n";
    return kOk;
}

/// Paper-facing reproduction: LLN table, heterogeneous LLN, four-variant
/// rate/tail curves, orderings and extremals at 0.85.
inline int cmd_reproduce(const RunSettings& s, Writer& w) {
    const std::filesystem::path dir =
        s.config_path.empty() ? std::filesystem::path(POOLLDP_SOURCE_DIR) / "configs" : std::filesystem::path(s.config_path);
    const auto p1 = load_config((dir / "portfolio1.json").string());
    const auto p2 = load_config((dir / "portfolio2.json").string());
    const auto het = load_config((dir / "hetero_ab.json").string());

    json report;
    bool all = true;
    std::ostringstream md;
    md << "# Reproduction report\n\n";
    auto line = [&](const std::string& section, const std::string& what, bool pass) {
        all = all && pass;
        md << "- [" << (pass ? "PASS" : "FAIL") << "] " << section << ": " << what << "\n";
        std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", section.c_str(), what.c_str());
    };
    auto fmt = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.4f", v);
        return std::string(b);
    };

    const TimeGrid fine(1.0, 1000);
    struct Anchor {
        const char* name;
        const ModelConfig* cfg;
        bool contagion;
        double target;
    };
    const Anchor anchors[] = {{"portfolio I, contagion", &p1, true, 0.804},
                              {"portfolio I, no contagion", &p1, false, 0.470},
                              {"portfolio II, contagion", &p2, true, 0.650},
                              {"portfolio II, no contagion", &p2, false, 0.589},
                              {"two types, contagion", &het, true, 0.81},
                              {"two types, no contagion", &het, false, 0.62}};
    md << "\n## Typical loss at T = 1\n\n";
    for (const auto& a : anchors) {
        const auto pool = with_variant(a.cfg->pool, a.contagion, true);
        const double v = typical_loss(pool, fine).loss_path.terminal();
        report["lln"][a.name] = {{"value", v}, {"target", a.target}};
        line("lln", std::string(a.name) + " = " + fmt(v) + " (target " + fmt(a.target) + " +- 0.02)",
             std::abs(v - a.target) <= 0.02);
    }

    md << "\n## Rate and tail curves\n\n";
    const std::pair<const char*, Variant> variants[] = {
        {"full", {true, true}}, {"contagion", {true, false}}, {"systematic", {false, true}}, {"independent", {false, false}}};
    for (const auto& [label, cfg] : {std::pair{"portfolio1", &p1}, std::pair{"portfolio2", &p2}, std::pair{"hetero_ab", &het}}) {
        std::vector<double> at85;
        auto rf = w.open(std::string(label) + "_rate.csv");
        rf << "variant,ell,I,tail,log10_tail,converged\n";
        for (const auto& [vname, v] : variants) {
            auto c = *cfg;
            c.pool = with_variant(c.pool, v.contagion, v.systematic);
            const auto ells = detail::run_ells(c, "");
            const auto res = detail::rates(c, ells);
            const double n = static_cast<double>(c.pool.n_names);
            for (const auto& r : res) {
                rf << vname << ',' << r.ell << ',' << r.value << ',' << std::exp(-n * r.value) << ','
                   << -n * r.value / std::log(10.0) << ',' << (r.converged ? 1 : 0) << '\n';
            }
            const bool sys = uses_factor(c.pool, c.factor);
            const auto r85 = sys ? minimize_rate_systematic(c.pool, 0.85, c.factor, c.c_limit(), c.grid(), detail::rate_options(c))
                                 : minimize_rate(c.pool, 0.85, c.grid(), detail::rate_options(c));
            at85.push_back(r85.value);
            report["rate_at_0.85"][label][vname] = r85.value;
            if (std::string(vname) == "full") {
                auto ef = w.open(std::string(label) + "_extremals.csv");
                ef << "t";
                for (std::size_t i = 0; i < c.pool.size(); ++i) ef << ",phi_" << i + 1;
                ef << ",phi_bar,psi,u\n";
                const GridPath psi = r85.psi_extremal ? *r85.psi_extremal : GridPath(c.grid());
                const auto u = factor_control(psi, c.factor);
                const auto bar = r85.phi_bar(c.pool);
                for (std::size_t k = 0; k < c.grid().nodes(); ++k) {
                    ef << c.grid().time(k);
                    for (const auto& p : r85.bin_extremals) ef << ',' << p[k];
                    ef << ',' << bar[k] << ',' << psi[k] << ',' << u[std::min(k, u.size() - 1)] << '\n';
                }
                if (std::string(label) == "portfolio1") {
                    double a = 0.0, b = 0.0;
                    for (std::size_t k = 0; k < u.size(); ++k) (2 * k < u.size() ? a : b) += u[k];
                    line("extremals", "portfolio I factor effort first half " + fmt(a) + " > second half " + fmt(b), a > b);
                }
                if (std::string(label) == "hetero_ab") {
                    bool dom = true;
                    for (std::size_t k = 0; k < c.grid().nodes(); ++k)
                        dom = dom && r85.bin_extremals[0][k] >= r85.bin_extremals[1][k];
                    line("extremals", "type A extremal >= type B extremal on the grid", dom);
                }
            }
        }
        const std::string vals = "full " + fmt(at85[0]) + ", contagion " + fmt(at85[1]) + ", systematic " +
                                 fmt(at85[2]) + ", independent " + fmt(at85[3]);
        if (std::string(label) == "portfolio1")
            line("ordering", "portfolio I at 0.85: " + vals, at85[0] <= at85[1] && at85[1] <= at85[2] && at85[2] <= at85[3]);
        if (std::string(label) == "portfolio2")
            line("ordering", "portfolio II at 0.85: " + vals, at85[0] <= at85[2] && at85[2] <= at85[1] && at85[1] <= at85[3]);
    }

    md << "\n## Grid refinement\n\n";
    {
        auto c = p1;
        const auto coarse = minimize_rate_systematic(c.pool, 0.85, c.factor, c.c_limit(), TimeGrid(1.0, 100));
        const auto refined = minimize_rate_systematic(c.pool, 0.85, c.factor, c.c_limit(), TimeGrid(1.0, 200));
        report["refinement"] = {{"M100", coarse.value}, {"M200", refined.value}};
        md << "- portfolio I full model at 0.85: I = " << fmt(coarse.value) << " (M = 100), " << fmt(refined.value)
           << " (M = 200), change " << refined.value - coarse.value << "\n";
    }

    {
        auto f = w.open("report.md");
        f << md.str();
        auto j = w.open("report.json");
        report["all_passed"] = all;
        j << report.dump(2) << "\n";
    }
    return all ? kOk : kNotConverged;
}

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Large-deviation analysis of credit pools with contagion and a systematic factor", "poolldp"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    RunSettings s;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", s.config_path, "JSON model config (or a run manifest)");
        if (needs_config) opt->required();
        sub->add_option("--out", s.out_dir, "output directory")->capture_default_str();
        sub->add_option("--steps", s.steps, "time-grid steps (overrides config)");
        sub->add_option("--variant", s.variant, "full | contagion | systematic | independent")->capture_default_str();
        sub->add_option("--jobs", s.jobs, "worker threads (default: all cores)");
    };
    auto add_rate = [&](CLI::App* sub) {
        sub->add_option("--ells", s.ells, "levels as a:b:step or a comma list");
        sub->add_option("--restarts", s.restarts, "optimizer multi-starts");
    };

    auto* lln = app.add_subcommand("lln", "typical loss path");
    add_common(lln, true);
    auto* rate = app.add_subcommand("rate", "rate function curve");
    add_common(rate, true);
    add_rate(rate);
    auto* tail = app.add_subcommand("tail", "large-deviation tail approximation");
    add_common(tail, true);
    add_rate(tail);
    auto* ext = app.add_subcommand("extremals", "most likely paths at one level");
    add_common(ext, true);
    ext->add_option("--ell", s.ell, "loss level")->capture_default_str();
    ext->add_option("--restarts", s.restarts, "optimizer multi-starts");
    auto* sim = app.add_subcommand("simulate", "Monte Carlo of the finite pool");
    add_common(sim, true);
    sim->add_option("--reps", s.reps, "replications");
    sim->add_option("--seed", s.seed, "master seed")->each([&](const std::string&) { s.seed_set = true; });
    sim->add_option("--n", s.n, "number of names");
    auto* val = app.add_subcommand("validate", "check a config and print it resolved");
    add_common(val, true);
    auto* rep = app.add_subcommand("reproduce-paper", "bundled reproduction report");
    rep->add_option("--configs", s.config_path, "directory with the bundled configs");
    rep->add_option("--out", s.out_dir, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigFailure;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        s.subcommand = app.get_subcommands().front()->get_name();
        Writer w(s.out_dir);
        if (s.subcommand == "reproduce-paper") return cmd_reproduce(s, w);
        const auto cfg = detail::resolve(s);
        int code = kOk;
        if (s.subcommand == "lln") code = cmd_lln(s, cfg, w);
        else if (s.subcommand == "rate") code = cmd_rate(s, cfg, w);
        else if (s.subcommand == "tail") code = cmd_tail(s, cfg, w);
        else if (s.subcommand == "extremals") code = cmd_extremals(s, cfg, w);
        else if (s.subcommand == "simulate") code = cmd_simulate(s, cfg, w);
        else if (s.subcommand == "validate") return cmd_validate(s, cfg, w);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        detail::write_manifest(w, s, cfg, secs);
        return code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigFailure;
    } catch (const GridMismatch& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNotConverged;
    }
}

}  // namespace poolldp::cli
