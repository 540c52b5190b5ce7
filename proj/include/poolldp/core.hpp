#pragma once

// Domain types shared by every module: name parameters, pools, the
// systematic factor, the scaling regime and grid paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace poolldp {

/// Raised for any malformed or out-of-range configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when two paths that must share a time grid do not.
class GridMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parameters of one pool component: CIR intensity with contagion and
/// systematic sensitivities.
struct NameType {
    double alpha = 0.0;       ///< mean-reversion rate
    double lambda_bar = 0.0;  ///< reversion level
    double sigma = 0.0;       ///< square-root diffusion coefficient
    double beta_c = 0.0;      ///< contagion sensitivity
    double beta_s = 0.0;      ///< systematic sensitivity (any sign)
    double lambda0 = 0.0;     ///< initial intensity

    friend bool operator==(const NameType&, const NameType&) = default;
};

inline constexpr double kDefaultParameterBound = 100.0;

inline void check_name_type(const NameType& p, double bound = kDefaultParameterBound) {
    const std::pair<const char*, double> nonneg[] = {{"alpha", p.alpha},
                                                     {"lambda_bar", p.lambda_bar},
                                                     {"sigma", p.sigma},
                                                     {"beta_c", p.beta_c},
                                                     {"lambda0", p.lambda0}};
    for (const auto& [name, v] : nonneg) {
        if (!std::isfinite(v)) throw ConfigError(std::string("non-finite parameter ") + name);
        if (v < 0.0) throw ConfigError(std::string("negative parameter ") + name);
        if (v > bound) throw ConfigError(std::string("parameter exceeds bound: ") + name);
    }
    if (!std::isfinite(p.beta_s)) throw ConfigError("non-finite parameter beta_s");
    if (std::abs(p.beta_s) > bound) throw ConfigError("parameter exceeds bound: beta_s");
}

/// Uniform grid t_k = kT/M on [0, T].
class TimeGrid {
public:
    TimeGrid() = default;
    TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
        if (steps < 2) throw ConfigError("grid needs at least 2 steps");
    }

    double horizon() const { return horizon_; }
    std::size_t steps() const { return steps_; }
    std::size_t nodes() const { return steps_ + 1; }
    double dt() const { return horizon_ / static_cast<double>(steps_); }
    double time(std::size_t k) const {
        return k == steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double horizon_ = 1.0;
    std::size_t steps_ = 2;
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b) {
    if (!(a == b)) throw GridMismatch("paths live on different time grids");
}

/// Piecewise-linear function given by its values at the grid nodes.
struct GridPath {
    TimeGrid grid;
    std::vector<double> values;

    GridPath() = default;
    explicit GridPath(const TimeGrid& g, double fill = 0.0) : grid(g), values(g.nodes(), fill) {}
    GridPath(const TimeGrid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.nodes()) throw GridMismatch("path length does not match grid");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t k) const { return values[k]; }
    double& operator[](std::size_t k) { return values[k]; }
    double terminal() const { return values.back(); }

    /// Interval increments v_{k+1} - v_k, k = 0..M-1.
    std::vector<double> increments() const {
        std::vector<double> d(grid.steps());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = values[k + 1] - values[k];
        return d;
    }

    /// Linear interpolation at time t in [0, T].
    double at(double t) const {
        if (t < 0.0 || t > grid.horizon()) throw std::out_of_range("time outside [0, T]");
        const double x = t / grid.dt();
        const auto k = std::min(static_cast<std::size_t>(x), grid.steps() - 1);
        const double w = x - static_cast<double>(k);
        return (1.0 - w) * values[k] + w * values[k + 1];
    }

    bool is_factor_path() const { return !values.empty() && values.front() == 0.0; }

    bool is_loss_path(double slack = 0.0) const {
        if (values.empty() || values.front() != 0.0) return false;
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (values[k] < -slack || values[k] > 1.0 + slack) return false;
            if (k > 0 && values[k] < values[k - 1] - slack) return false;
        }
        return true;
    }
};

struct Bin {
    double weight = 1.0;
    NameType type;
};

/// Finite mixture of name types with the pool size and horizon.
struct Pool {
    std::vector<Bin> bins;
    std::size_t n_names = 1;
    double horizon = 1.0;

    std::size_t size() const { return bins.size(); }
};

enum class FactorKind { None, OU, CIR };

/// Systematic factor in the scaled (small-noise) form:
/// drift b(x) = -gamma x (OU) or -gamma (x - xbar) (CIR),
/// diffusion k(x) = 1 (OU) or sqrt(x) (CIR).
struct FactorModel {
    FactorKind kind = FactorKind::None;
    double gamma = 0.0;
    double xbar = 0.0;

    double zeta() const { return kind == FactorKind::CIR ? 0.5 : 1.0; }
    bool enabled() const { return kind != FactorKind::None; }

    double drift(double x) const {
        switch (kind) {
            case FactorKind::OU: return -gamma * x;
            case FactorKind::CIR: return -gamma * (x - xbar);
            default: return 0.0;
        }
    }
    double diffusion(double x) const {
        switch (kind) {
            case FactorKind::OU: return 1.0;
            case FactorKind::CIR: return std::sqrt(std::max(x, 0.0));
            default: return 0.0;
        }
    }
};

inline const char* to_string(FactorKind k) {
    switch (k) {
        case FactorKind::OU: return "OU";
        case FactorKind::CIR: return "CIR";
        default: return "None";
    }
}

/// eps_N = a * N^{-q}. The pair is admissible for a factor with exponent
/// zeta when 2 zeta q = 1, which makes N eps_N^{2 zeta} = a^{2 zeta} for all N.
struct ScalingRegime {
    double a = 1.0;
    double q = 0.5;

    double epsilon(std::size_t n) const { return a * std::pow(static_cast<double>(n), -q); }
    double scaled_size(std::size_t n, double zeta) const {
        return static_cast<double>(n) * std::pow(epsilon(n), 2.0 * zeta);
    }
    double c_limit(double zeta) const { return std::pow(a, 2.0 * zeta); }
    bool admissible(double zeta) const { return std::abs(2.0 * zeta * q - 1.0) < 1e-12; }

    static ScalingRegime inverse_sqrt_n() { return {1.0, 0.5}; }
    /// eps_N = N^{-1/(2 zeta)}, so N eps_N^{2 zeta} = 1.
    static ScalingRegime unit_for(double zeta) { return {1.0, 1.0 / (2.0 * zeta)}; }
};

/// phi_bar(t_k) = sum_i w_i phi_i(t_k).
inline GridPath mixture_path(const Pool& pool, const std::vector<GridPath>& bin_paths) {
    if (bin_paths.size() != pool.size()) throw std::invalid_argument("one path per bin required");
    if (bin_paths.empty()) throw std::invalid_argument("pool has no bins");
    GridPath out(bin_paths.front().grid);
    for (std::size_t i = 0; i < bin_paths.size(); ++i) {
        require_same_grid(out.grid, bin_paths[i].grid);
        const double w = pool.bins[i].weight;
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * bin_paths[i][k];
    }
    return out;
}

/// Returns a copy of the pool with contagion and/or systematic sensitivity removed.
inline Pool with_variant(Pool pool, bool keep_contagion, bool keep_systematic) {
    for (auto& b : pool.bins) {
        if (!keep_contagion) b.type.beta_c = 0.0;
        if (!keep_systematic) b.type.beta_s = 0.0;
    }
    return pool;
}

inline bool has_systematic(const Pool& pool) {
    return std::any_of(pool.bins.begin(), pool.bins.end(), [](const Bin& b) { return b.type.beta_s != 0.0; });
}

}  // namespace poolldp
