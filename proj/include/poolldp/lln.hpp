#pragma once

// Typical (law of large numbers) loss path: the fixed point
//   L(t) = 1 - sum_i w_i exp(-Gamma_i[L](t))
// with psi = 0, iterated by plain Picard from L = 0.

#include <algorithm>
#include <cmath>
#include <vector>

#include "core.hpp"
#include "riccati.hpp"

namespace poolldp {

struct LLNOptions {
    double tolerance = 1e-10;
    std::size_t max_iter = 500;
};

struct LLNResult {
    GridPath loss_path;
    std::vector<GridPath> bin_paths;  ///< per-bin default probabilities at the fixed point
    std::size_t iterations = 0;
    double final_residual = 0.0;
    bool converged = false;
    bool monotone = true;  ///< Picard iterates were pointwise nondecreasing
    std::vector<double> residual_history;
};

namespace detail {

inline std::vector<ThetaFamily> unperturbed_thetas(const Pool& pool, const TimeGrid& grid) {
    std::vector<ThetaFamily> out;
    out.reserve(pool.size());
    const GridPath zero(grid);
    for (const auto& b : pool.bins) out.emplace_back(b.type, zero, grid);
    return out;
}

inline std::vector<GridPath> bin_default_paths(const Pool& pool, const std::vector<ThetaFamily>& thetas,
                                               const GridPath& phi_bar) {
    std::vector<GridPath> out;
    out.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto g = gamma_curve(pool.bins[i].type, phi_bar, thetas[i]);
        for (auto& v : g.values) v = -std::expm1(-v);
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace detail

inline LLNResult typical_loss(const Pool& pool, const TimeGrid& grid, const LLNOptions& opts = {}) {
    const auto thetas = detail::unperturbed_thetas(pool, grid);
    LLNResult res;
    res.loss_path = GridPath(grid);
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        auto bins = detail::bin_default_paths(pool, thetas, res.loss_path);
        auto next = mixture_path(pool, bins);
        double change = 0.0;
        for (std::size_t k = 0; k < next.size(); ++k) {
            const double d = next[k] - res.loss_path[k];
            if (d < -1e-14) res.monotone = false;
            change = std::max(change, std::abs(d));
        }
        res.loss_path = std::move(next);
        res.bin_paths = std::move(bins);
        res.iterations = it + 1;
        res.residual_history.push_back(change);
        res.final_residual = change;
        if (change < opts.tolerance) {
            res.converged = true;
            break;
        }
    }
    return res;
}

/// sup_k |candidate(t_k) - RHS[candidate](t_k)|.
inline double lln_residual(const Pool& pool, const GridPath& candidate, const TimeGrid& grid) {
    require_same_grid(candidate.grid, grid);
    const auto thetas = detail::unperturbed_thetas(pool, grid);
    const auto rhs = mixture_path(pool, detail::bin_default_paths(pool, thetas, candidate));
    double r = 0.0;
    for (std::size_t k = 0; k < rhs.size(); ++k) r = std::max(r, std::abs(candidate[k] - rhs[k]));
    return r;
}

}  // namespace poolldp
