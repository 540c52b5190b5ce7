#pragma once

// Large-deviations functionals: the relative-entropy cost g of a loss path
// against a default-time law, the Freidlin-Wentzell action of the factor,
// and the joint action S(phi, psi).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "riccati.hpp"

namespace poolldp {

/// Finite stand-in for +infinity so that optimizers can compare values.
inline constexpr double kInfeasibleCost = 1e18;

struct EntropyValue {
    double value = 0.0;
    bool infinite = false;
};

namespace detail {

/// x ln(x / y) with 0 ln 0 = 0; returns false when x > 0 = y.
inline bool relative_term(double x, double y, double& out) {
    if (x == 0.0) {
        out = 0.0;
        return true;
    }
    if (!(y > 0.0)) return false;
    out = x * std::log(x / y);
    return true;
}

}  // namespace detail

/// Discrete relative entropy of xi against the law f on {intervals} u {*}:
///   sum_k u_k ln(u_k / m_k) + (1 - xi(T)) ln((1 - xi(T)) / f(*)).
inline EntropyValue entropy_g(const GridPath& xi, const DensityCurve& f) {
    require_same_grid(xi.grid, f.grid);
    EntropyValue out;
    double sum = 0.0;
    for (std::size_t k = 0; k < f.masses.size(); ++k) {
        const double u = xi[k + 1] - xi[k];
        double term = 0.0;
        if (u < 0.0 || !detail::relative_term(u, f.masses[k], term)) {
            out.infinite = true;
            break;
        }
        sum += term;
    }
    const double rest = 1.0 - xi.terminal();
    double star = 0.0;
    if (out.infinite || rest < 0.0 || !detail::relative_term(rest, f.survival_mass, star)) {
        out.infinite = true;
        out.value = kInfeasibleCost;
        return out;
    }
    out.value = sum + star;
    return out;
}

/// ell ln(ell/pbar) + (1-ell) ln((1-ell)/(1-pbar)).
inline double bernoulli_kl(double ell, double pbar) {
    if (ell < 0.0 || ell > 1.0 || pbar < 0.0 || pbar > 1.0) throw std::invalid_argument("fractions must lie in [0, 1]");
    double a = 0.0;
    double b = 0.0;
    if (!detail::relative_term(ell, pbar, a) || !detail::relative_term(1.0 - ell, 1.0 - pbar, b)) return kInfeasibleCost;
    return a + b;
}

/// 1/2 int |psi' + gamma psi|^2 with interval slopes and midpoint values.
inline double jx_ou(const GridPath& psi, double gamma) {
    const double h = psi.grid.dt();
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < psi.size(); ++k) {
        const double slope = (psi[k + 1] - psi[k]) / h;
        const double mid = 0.5 * (psi[k] + psi[k + 1]);
        const double u = slope + gamma * mid;
        s += u * u;
    }
    return 0.5 * h * s;
}

struct FactorAction {
    double value = 0.0;
    bool boundary_degenerate = false;
    bool infinite = false;
};

inline constexpr double kDiffusionFloor = 1e-6;

/// 1/2 int |(psi' - b(psi)) / k(psi)|^2. A vanishing diffusion (CIR at 0)
/// is floored at kDiffusionFloor and flagged.
inline FactorAction jx_general(const GridPath& psi, const FactorModel& factor) {
    FactorAction out;
    if (!factor.enabled()) {
        for (double v : psi.values) {
            if (v != 0.0) {
                out.infinite = true;
                out.value = kInfeasibleCost;
                return out;
            }
        }
        return out;
    }
    const double h = psi.grid.dt();
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < psi.size(); ++k) {
        const double slope = (psi[k + 1] - psi[k]) / h;
        const double mid = 0.5 * (psi[k] + psi[k + 1]);
        double kappa = factor.diffusion(mid);
        if (kappa < kDiffusionFloor) {
            kappa = kDiffusionFloor;
            out.boundary_degenerate = true;
        }
        const double u = (slope - factor.drift(mid)) / kappa;
        s += u * u;
    }
    out.value = 0.5 * h * s;
    return out;
}

/// Control u = (psi' - b(psi)) / k(psi) on each interval (u = psi' + gamma psi for OU).
inline std::vector<double> factor_control(const GridPath& psi, const FactorModel& factor) {
    const double h = psi.grid.dt();
    std::vector<double> u(psi.grid.steps(), 0.0);
    if (!factor.enabled()) return u;
    for (std::size_t k = 0; k < u.size(); ++k) {
        const double mid = 0.5 * (psi[k] + psi[k + 1]);
        u[k] = ((psi[k + 1] - psi[k]) / h - factor.drift(mid)) / std::max(factor.diffusion(mid), kDiffusionFloor);
    }
    return u;
}

struct ActionBreakdown {
    double total = 0.0;
    double entropy_term = 0.0;
    double factor_term = 0.0;
    std::vector<double> per_bin;
    bool infinite = false;
    bool boundary_degenerate = false;
};

/// S(phi, psi) = sum_i w_i g(phi_i, f_i[phi_bar, psi]) + J_X(psi) / c.
inline ActionBreakdown action_S(const Pool& pool, const std::vector<GridPath>& bin_paths, const GridPath& psi,
                                const FactorModel& factor, double c, const TimeGrid& grid) {
    if (!(c > 0.0)) throw std::invalid_argument("c must be positive");
    require_same_grid(psi.grid, grid);
    const auto phi_bar = mixture_path(pool, bin_paths);
    require_same_grid(phi_bar.grid, grid);

    ActionBreakdown out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& type = pool.bins[i].type;
        const auto f = density_curve(type, phi_bar, ThetaFamily(type, psi, grid));
        const auto g = entropy_g(bin_paths[i], f);
        out.per_bin.push_back(g.value);
        out.infinite = out.infinite || g.infinite;
        out.entropy_term += pool.bins[i].weight * g.value;
    }
    const auto jx = jx_general(psi, factor);
    out.boundary_degenerate = jx.boundary_degenerate;
    out.infinite = out.infinite || jx.infinite;
    out.factor_term = jx.value / c;
    out.total = out.infinite ? kInfeasibleCost : out.entropy_term + out.factor_term;
    return out;
}

/// Log density ratio between the contagion-driven law mu_{nu,0} and the
/// independent law mu_{0,0}: nodal values g_nu(p, t_k) and the atom value
/// g_nu(p, *) = ln(mu_{nu,0}(*) / mu_{0,0}(*)) = -beta_c int_0^T b(T-u) dnu(u).
struct ShiftValues {
    GridPath nodes;
    double star = 0.0;
};

inline ShiftValues g_shift(const NameType& p, const GridPath& loss_path) {
    const auto& grid = loss_path.grid;
    const auto rc = solve_b(p, grid);
    const auto& b = rc.b;
    const auto& bdot = rc.slope;
    const auto dnu = loss_path.increments();
    const std::size_t m = grid.steps();

    ShiftValues out{GridPath(grid), 0.0};
    if (p.beta_c == 0.0) return out;
    for (std::size_t j = 0; j <= m; ++j) {
        double conv_bdot = 0.0;
        double conv_b = 0.0;
        for (std::size_t k = 0; k < j; ++k) {
            conv_bdot += 0.5 * (bdot[j - k] + bdot[j - k - 1]) * dnu[k];
            conv_b += 0.5 * (b[j - k] + b[j - k - 1]) * dnu[k];
        }
        const double base = bdot[j] * p.lambda0 + p.alpha * p.lambda_bar * b[j];
        out.nodes[j] = std::log(base + p.beta_c * conv_bdot) - std::log(base) - p.beta_c * conv_b;
        if (j == m) out.star = -p.beta_c * conv_b;
    }
    return out;
}

}  // namespace poolldp
