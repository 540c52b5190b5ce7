#pragma once

// Limited-memory BFGS with an Armijo backtracking line search. The
// objective may return a value >= kInfeasibleCost to reject a trial point;
// the line search then shrinks the step. Convergence is declared when the
// gradient sup-norm drops below tol_grad or the relative value change stays
// below tol_val for stall_window consecutive iterations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <vector>

#include "ldp.hpp"

namespace poolldp {

struct LbfgsOptions {
    std::size_t memory = 10;
    std::size_t max_iter = 2000;
    double tol_grad = 1e-6;  ///< sup-norm of the gradient
    double tol_val = 1e-10;  ///< relative change of the value
    std::size_t stall_window = 5;
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    bool converged = false;
};

/// f(x, grad) returns the value and fills grad (same size as x).
using Objective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double sup_norm(const std::vector<double>& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace detail

inline LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x, const LbfgsOptions& opts = {}) {
    const std::size_t n = x.size();
    LbfgsResult res;
    std::vector<double> g(n), g_new(n), x_new(n), dir(n);
    double fx = f(x, g);
    ++res.evaluations;
    res.x = x;
    res.value = fx;
    res.grad_norm = detail::sup_norm(g);
    if (fx >= kInfeasibleCost || n == 0) return res;

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    std::size_t stalled = 0;

    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        res.iterations = it;
        if (res.grad_norm < opts.tol_grad) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        dir = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * detail::dot(s_hist[i], dir);
            for (std::size_t k = 0; k < n; ++k) dir[k] -= alpha[i] * y_hist[i][k];
        }
        double scale = 1.0;
        if (!s_hist.empty()) {
            scale = detail::dot(s_hist.back(), y_hist.back()) / detail::dot(y_hist.back(), y_hist.back());
        } else {
            scale = 1.0 / std::max(1.0, detail::sup_norm(g));
        }
        for (auto& v : dir) v *= scale;
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * detail::dot(y_hist[i], dir);
            for (std::size_t k = 0; k < n; ++k) dir[k] += s_hist[i][k] * (alpha[i] - beta);
        }
        for (auto& v : dir) v = -v;
        double slope = detail::dot(g, dir);
        if (!(slope < 0.0)) {
            // Not a descent direction: reset memory and use steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (std::size_t k = 0; k < n; ++k) dir[k] = -g[k] / std::max(1.0, res.grad_norm);
            slope = detail::dot(g, dir);
        }

        double step = 1.0;
        double f_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t k = 0; k < n; ++k) x_new[k] = x[k] + step * dir[k];
            f_new = f(x_new, g_new);
            ++res.evaluations;
            if (f_new < kInfeasibleCost && std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            if (f_new < kInfeasibleCost && std::isfinite(f_new)) {
                // Safeguarded quadratic interpolation.
                const double trial = -slope * step * step / (2.0 * (f_new - fx - slope * step));
                step = std::clamp(trial, 0.1 * step, 0.5 * step);
            } else {
                step *= 0.25;
            }
        }
        if (!accepted) break;

        std::vector<double> s(n), y(n);
        for (std::size_t k = 0; k < n; ++k) {
            s[k] = x_new[k] - x[k];
            y[k] = g_new[k] - g[k];
        }
        const double sy = detail::dot(s, y);
        if (sy > 1e-12 * std::sqrt(detail::dot(s, s) * detail::dot(y, y))) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        const double change = std::abs(fx - f_new);
        x.swap(x_new);
        g.swap(g_new);
        fx = f_new;
        res.x = x;
        res.value = fx;
        res.grad_norm = detail::sup_norm(g);
        res.iterations = it + 1;
        stalled = change <= opts.tol_val * std::max(1.0, std::abs(fx)) ? stalled + 1 : 0;
        if (stalled >= opts.stall_window) {
            res.converged = true;
            break;
        }
    }
    res.converged = res.converged || res.grad_norm < opts.tol_grad;
    return res;
}

}  // namespace poolldp
