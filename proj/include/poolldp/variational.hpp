#pragma once

// Minimization of the discretized action over loss paths (and, with a
// systematic factor, factor paths) subject to phi_bar(T) = ell.
//
// Each bin path is encoded by logits z_i (interval shares) and the bin
// terminals s_i = ell * softmax(0, y)_i / w_i, so monotonicity, phi_i(0) = 0
// and the endpoint constraint hold by construction. The factor path is
// encoded by normalized increments w_k = (psi(t_{k+1}) - psi(t_k)) / sqrt(dt),
// which makes the factor action close to |w|^2 / 2 and keeps the joint
// problem well conditioned as the grid is refined.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "lbfgs.hpp"
#include "ldp.hpp"
#include "lln.hpp"
#include "riccati.hpp"

namespace poolldp {

struct RateOptions {
    std::size_t restarts = 4;
    std::uint64_t seed = 20240517;
    double perturbation = 0.3;  ///< std-dev of logit noise for restarts
    LbfgsOptions lbfgs{};
};

struct RateResult {
    double ell = 0.0;
    double value = 0.0;
    std::vector<GridPath> bin_extremals;
    std::optional<GridPath> psi_extremal;
    ActionBreakdown breakdown;
    bool converged = false;
    bool clamped = false;
    std::size_t iterations = 0;
    double grad_norm = 0.0;
    std::size_t restarts_used = 0;
    std::vector<double> solution;  ///< optimizer variables (for warm starts)

    GridPath phi_bar(const Pool& pool) const { return mixture_path(pool, bin_extremals); }
};

inline constexpr double kEllFloor = 1e-4;

/// Discretized rate objective in the unconstrained variables.
class RateObjective {
public:
    RateObjective(const Pool& pool, double ell, const TimeGrid& grid, const FactorModel& factor, double c,
                  bool systematic)
        : pool_(pool), ell_(ell), grid_(grid), factor_(factor), c_(c), systematic_(systematic) {
        if (pool.bins.empty()) throw std::invalid_argument("pool has no bins");
        if (systematic_ && !(c_ > 0.0)) throw std::invalid_argument("c must be positive");
        const GridPath zero(grid);
        for (const auto& b : pool.bins) flat_.emplace_back(b.type, zero, grid);
    }

    std::size_t bins() const { return pool_.size(); }
    std::size_t steps() const { return grid_.steps(); }
    std::size_t allocation_offset() const { return bins() * steps(); }
    std::size_t psi_offset() const { return allocation_offset() + bins() - 1; }
    std::size_t dimension() const { return psi_offset() + (systematic_ ? steps() : 0); }
    bool systematic() const { return systematic_; }
    double ell() const { return ell_; }

    struct Decoded {
        std::vector<double> pi;                     ///< share of the loss carried by each bin
        std::vector<double> terminal;               ///< s_i
        std::vector<std::vector<double>> share;     ///< softmax(z_i)
        std::vector<std::vector<double>> increment; ///< u_ik = s_i share_ik
        GridPath psi;
        bool feasible = true;
    };

    Decoded decode(const std::vector<double>& x) const {
        const std::size_t K = bins();
        const std::size_t M = steps();
        Decoded d;
        d.pi.assign(K, 0.0);
        double mx = 0.0;
        for (std::size_t i = 1; i < K; ++i) mx = std::max(mx, x[allocation_offset() + i - 1]);
        double sum = 0.0;
        for (std::size_t i = 0; i < K; ++i) {
            const double logit = i == 0 ? 0.0 : x[allocation_offset() + i - 1];
            d.pi[i] = std::exp(logit - mx);
            sum += d.pi[i];
        }
        d.terminal.resize(K);
        for (std::size_t i = 0; i < K; ++i) {
            d.pi[i] /= sum;
            d.terminal[i] = K == 1 ? ell_ : ell_ * d.pi[i] / pool_.bins[i].weight;
            if (d.terminal[i] > 1.0) d.feasible = false;
        }
        d.share.assign(K, std::vector<double>(M));
        d.increment.assign(K, std::vector<double>(M));
        for (std::size_t i = 0; i < K; ++i) {
            const double* z = x.data() + i * M;
            const double zmax = *std::max_element(z, z + M);
            double zs = 0.0;
            for (std::size_t k = 0; k < M; ++k) zs += (d.share[i][k] = std::exp(z[k] - zmax));
            for (std::size_t k = 0; k < M; ++k) {
                d.share[i][k] /= zs;
                d.increment[i][k] = d.terminal[i] * d.share[i][k];
            }
        }
        d.psi = GridPath(grid_);
        if (systematic_) {
            const double s = std::sqrt(grid_.dt());
            for (std::size_t k = 0; k < M; ++k) d.psi[k + 1] = d.psi[k] + s * x[psi_offset() + k];
        }
        return d;
    }

    std::vector<GridPath> bin_paths(const Decoded& d) const {
        std::vector<GridPath> out;
        for (const auto& inc : d.increment) {
            GridPath p(grid_);
            for (std::size_t k = 0; k < inc.size(); ++k) p[k + 1] = p[k] + inc[k];
            p[inc.size()] = std::min(p[inc.size()], 1.0);
            out.push_back(std::move(p));
        }
        return out;
    }

    /// Encodes bin paths (positive increments, mixture terminal = ell) and psi.
    std::vector<double> encode(const std::vector<std::vector<double>>& increments, const std::vector<double>& pi,
                               const GridPath* psi) const {
        std::vector<double> x(dimension(), 0.0);
        const std::size_t M = steps();
        for (std::size_t i = 0; i < bins(); ++i) {
            for (std::size_t k = 0; k < M; ++k) x[i * M + k] = std::log(std::max(increments[i][k], 1e-300));
            const double shift = *std::max_element(x.begin() + i * M, x.begin() + (i + 1) * M);
            for (std::size_t k = 0; k < M; ++k) x[i * M + k] -= shift;
        }
        for (std::size_t i = 1; i < bins(); ++i) x[allocation_offset() + i - 1] = std::log(pi[i] / pi[0]);
        if (systematic_ && psi != nullptr) {
            const double s = std::sqrt(grid_.dt());
            for (std::size_t k = 0; k < M; ++k) x[psi_offset() + k] = ((*psi)[k + 1] - (*psi)[k]) / s;
        }
        return x;
    }

    double operator()(const std::vector<double>& x, std::vector<double>& grad) const {
        const std::size_t K = bins();
        const std::size_t M = steps();
        const double h = grid_.dt();
        grad.assign(x.size(), 0.0);
        const auto d = decode(x);
        if (!d.feasible) return kInfeasibleCost;

        GridPath phi_bar(grid_);
        std::vector<double> dphi(M, 0.0);
        for (std::size_t k = 0; k < M; ++k) {
            for (std::size_t i = 0; i < K; ++i) dphi[k] += pool_.bins[i].weight * d.increment[i][k];
            phi_bar[k + 1] = phi_bar[k] + dphi[k];
        }

        std::vector<double> d_dphi(M, 0.0);
        std::vector<std::vector<double>> d_inc(K, std::vector<double>(M));
        std::vector<double> d_terminal(K, 0.0);
        std::vector<double> d_psi(M + 1, 0.0);
        double total = 0.0;

        for (std::size_t i = 0; i < K; ++i) {
            const auto& type = pool_.bins[i].type;
            const double w = pool_.bins[i].weight;
            const bool coupled = systematic_ && type.beta_s != 0.0;
            std::optional<ThetaFamily> local;
            if (coupled) local.emplace(type, d.psi, grid_, true);
            const ThetaFamily& theta = coupled ? *local : flat_[i];
            const auto gamma = gamma_curve(type, phi_bar, theta);

            std::vector<double> e(M + 1), mass(M);
            for (std::size_t j = 0; j <= M; ++j) e[j] = std::exp(-gamma[j]);
            double g = 0.0;
            std::vector<double> d_mass(M);
            for (std::size_t k = 0; k < M; ++k) {
                mass[k] = -e[k] * std::expm1(-(gamma[k + 1] - gamma[k]));
                const double u = d.increment[i][k];
                if (!(mass[k] > 0.0)) {
                    if (u > 0.0) return kInfeasibleCost;
                    d_mass[k] = 0.0;
                    d_inc[i][k] = 0.0;
                    continue;
                }
                const double lr = std::log(std::max(u, 1e-300) / mass[k]);
                if (u > 0.0) g += u * lr;
                d_inc[i][k] = w * (lr + 1.0);
                d_mass[k] = -w * u / mass[k];
            }
            const double survival = e[M];
            const double rest = 1.0 - d.terminal[i];
            double d_survival = 0.0;
            if (rest > 0.0) {
                if (!(survival > 0.0)) return kInfeasibleCost;
                const double lr = std::log(rest / survival);
                g += rest * lr;
                d_terminal[i] = w * (-lr - 1.0);
                d_survival = -w * rest / survival;
            } else {
                d_terminal[i] = w * (-std::log(1e-300 / std::max(survival, 1e-300)) - 1.0);
            }
            total += w * g;

            // dT/dGamma_j through exp(-Gamma_j) in the masses and the atom.
            std::vector<double> d_gamma(M + 1, 0.0);
            for (std::size_t j = 1; j <= M; ++j) {
                double de = (j < M ? d_mass[j] : d_survival) - d_mass[j - 1];
                d_gamma[j] = -e[j] * de;
            }

            if (type.beta_c != 0.0) {
                for (std::size_t k = 0; k < M; ++k) {
                    double a = 0.0;
                    for (std::size_t j = k + 1; j <= M; ++j)
                        a += 0.5 * (theta(j, j - k) + theta(j, j - k - 1)) * d_gamma[j];
                    d_dphi[k] += type.beta_c * a;
                }
            }

            if (coupled) {
                const auto& coupling = theta.coupling();
                std::vector<double> d_coupling(M, 0.0);
                std::vector<double> lam;
                const double trap = type.alpha * type.lambda_bar * h;
                for (std::size_t j = 1; j <= M; ++j) {
                    const double gj = d_gamma[j];
                    if (gj == 0.0) continue;
                    lam.assign(j + 1, 0.0);
                    for (std::size_t q = 1; q <= j; ++q) {
                        double dq = trap * (q == j ? 0.5 : 1.0);
                        if (q == j) dq += type.lambda0;
                        double kern = dphi[j - q];
                        if (q < j) kern += dphi[j - q - 1];
                        dq += type.beta_c * 0.5 * kern;
                        lam[q] = gj * dq;
                    }
                    double adj = lam[j];
                    for (std::size_t k = j; k-- > 0;) {
                        double dx = 0.0;
                        double dc = 0.0;
                        detail::riccati_step_sensitivity(type, theta(j, k), coupling[j - k - 1], h, dx, dc);
                        d_coupling[j - k - 1] += adj * dc;
                        adj = lam[k] + adj * dx;
                    }
                }
                for (std::size_t k = 0; k < M; ++k) {
                    const double v = type.beta_s / h * d_coupling[k];
                    d_psi[k + 1] += v;
                    d_psi[k] -= v;
                }
            }
        }

        if (systematic_) {
            const auto jx = jx_general(d.psi, factor_);
            if (jx.infinite) return kInfeasibleCost;
            total += jx.value / c_;
            add_action_gradient(d.psi, d_psi);
            const double s = std::sqrt(grid_.dt());
            double tail = 0.0;
            for (std::size_t k = M; k-- > 0;) {
                tail += d_psi[k + 1];
                grad[psi_offset() + k] = s * tail;
            }
        }

        // Chain rule into logits and allocation.
        std::vector<double> d_s(K, 0.0);
        for (std::size_t i = 0; i < K; ++i) {
            const double w = pool_.bins[i].weight;
            double mean = 0.0;
            for (std::size_t k = 0; k < M; ++k) {
                d_inc[i][k] += w * d_dphi[k];
                mean += d.share[i][k] * d_inc[i][k];
            }
            for (std::size_t k = 0; k < M; ++k)
                grad[i * M + k] = d.terminal[i] * d.share[i][k] * (d_inc[i][k] - mean);
            d_s[i] = mean + d_terminal[i];
        }
        if (K > 1) {
            std::vector<double> d_pi(K);
            double avg = 0.0;
            for (std::size_t i = 0; i < K; ++i) {
                d_pi[i] = d_s[i] * ell_ / pool_.bins[i].weight;
                avg += d.pi[i] * d_pi[i];
            }
            for (std::size_t i = 1; i < K; ++i) grad[allocation_offset() + i - 1] = d.pi[i] * (d_pi[i] - avg);
        }
        return total;
    }

private:
    void add_action_gradient(const GridPath& psi, std::vector<double>& d_psi) const {
        const double h = grid_.dt();
        const std::size_t M = steps();
        for (std::size_t k = 0; k < M; ++k) {
            const double a = psi[k];
            const double b = psi[k + 1];
            if (factor_.kind == FactorKind::OU) {
                const double v = (b - a) / h + factor_.gamma * 0.5 * (a + b);
                d_psi[k] += h * v * (-1.0 / h + 0.5 * factor_.gamma) / c_;
                d_psi[k + 1] += h * v * (1.0 / h + 0.5 * factor_.gamma) / c_;
            } else {
                auto term = [&](double lo, double hi) {
                    const double mid = 0.5 * (lo + hi);
                    const double kappa = std::max(factor_.diffusion(mid), kDiffusionFloor);
                    const double v = ((hi - lo) / h - factor_.drift(mid)) / kappa;
                    return 0.5 * h * v * v;
                };
                const double eps = 1e-7 * std::max(1.0, std::abs(a) + std::abs(b));
                d_psi[k] += (term(a + eps, b) - term(a - eps, b)) / (2.0 * eps) / c_;
                d_psi[k + 1] += (term(a, b + eps) - term(a, b - eps)) / (2.0 * eps) / c_;
            }
        }
    }

    Pool pool_;
    double ell_;
    TimeGrid grid_;
    FactorModel factor_;
    double c_;
    bool systematic_;
    std::vector<ThetaFamily> flat_;
};

namespace detail {

/// Starting point: LLN bin shapes with terminals scaled towards ell.
inline std::vector<double> lln_start(const RateObjective& obj, const Pool& pool, const LLNResult& lln) {
    const std::size_t K = pool.size();
    const double ell = obj.ell();
    std::vector<std::vector<double>> inc;
    for (const auto& b : lln.bin_paths) inc.push_back(b.increments());

    std::vector<double> pi_lln(K), pi_flat(K), pi(K);
    double sum = 0.0;
    for (std::size_t i = 0; i < K; ++i) sum += (pi_lln[i] = pool.bins[i].weight * lln.bin_paths[i].terminal());
    for (std::size_t i = 0; i < K; ++i) {
        pi_lln[i] = sum > 0.0 ? pi_lln[i] / sum : pool.bins[i].weight;
        pi_flat[i] = pool.bins[i].weight;
    }
    auto feasible = [&](double t) {
        for (std::size_t i = 0; i < K; ++i) {
            pi[i] = (1.0 - t) * pi_lln[i] + t * pi_flat[i];
            if (ell * pi[i] / pool.bins[i].weight > 1.0 - 1e-3) return false;
        }
        return true;
    };
    double lo = 0.0;
    if (!feasible(0.0)) {
        double hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (feasible(mid) ? hi : lo) = mid;
        }
        lo = hi;
    }
    feasible(lo);
    return obj.encode(inc, pi, nullptr);
}

inline RateResult finish(const RateObjective& obj, const Pool& pool, const TimeGrid& grid, const FactorModel& factor,
                         double c, const LbfgsResult& best, double ell, bool clamped, std::size_t starts) {
    RateResult r;
    r.ell = ell;
    r.clamped = clamped;
    const auto d = obj.decode(best.x);
    r.bin_extremals = obj.bin_paths(d);
    r.value = best.value;
    r.converged = best.converged;
    r.iterations = best.iterations;
    r.grad_norm = best.grad_norm;
    r.restarts_used = starts;
    r.solution = best.x;
    if (obj.systematic()) {
        r.psi_extremal = d.psi;
        r.breakdown = action_S(pool, r.bin_extremals, d.psi, factor, c, grid);
    } else {
        r.breakdown = action_S(pool, r.bin_extremals, GridPath(grid), FactorModel{}, 1.0, grid);
    }
    return r;
}

inline RateResult solve_rate(const Pool& pool, double ell, const TimeGrid& grid, const FactorModel& factor, double c,
                             bool systematic, const RateOptions& opts, const std::vector<double>* warm) {
    if (!(ell > 0.0 && ell < 1.0)) throw std::invalid_argument("ell must lie in (0, 1)");
    if (pool.horizon != grid.horizon()) throw GridMismatch("grid horizon differs from pool horizon");
    bool clamped = false;
    if (ell < kEllFloor || ell > 1.0 - kEllFloor) {
        ell = std::clamp(ell, kEllFloor, 1.0 - kEllFloor);
        clamped = true;
    }
    const RateObjective obj(pool, ell, grid, factor, c, systematic);
    const Objective fg = [&obj](const std::vector<double>& x, std::vector<double>& g) { return obj(x, g); };
    const auto lln = typical_loss(pool, grid);
    const auto base = lln_start(obj, pool, lln);

    std::vector<std::vector<double>> starts;
    if (warm != nullptr && warm->size() == obj.dimension()) starts.push_back(*warm);
    starts.push_back(base);
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t M = grid.steps();
    for (std::size_t r = 1; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
        auto x = base;
        for (std::size_t k = 0; k < obj.psi_offset(); ++k) x[k] += opts.perturbation * noise(rng);
        if (systematic) {
            // A smooth bump plus a small random walk.
            const double amp = 0.1 * noise(rng);
            const double s = std::sqrt(grid.dt());
            auto bump = [&](std::size_t k) { return amp * std::sin(std::numbers::pi * grid.time(k) / grid.horizon()); };
            for (std::size_t k = 0; k < M; ++k) x[obj.psi_offset() + k] = (bump(k + 1) - bump(k)) / s + 0.02 * noise(rng);
        }
        starts.push_back(std::move(x));
    }

    LbfgsResult best;
    best.value = kInfeasibleCost;
    bool have = false;
    std::vector<double> scratch;
    for (const auto& x0 : starts) {
        if (fg(x0, scratch) >= kInfeasibleCost) continue;
        auto res = minimize_lbfgs(fg, x0, opts.lbfgs);
        if (!have || res.value < best.value) {
            best = std::move(res);
            have = true;
        }
    }
    if (!have) throw std::runtime_error("no feasible starting point for the rate problem");
    return finish(obj, pool, grid, factor, c, best, ell, clamped, starts.size());
}

}  // namespace detail

/// I(ell) with no systematic factor (psi = 0).
inline RateResult minimize_rate(const Pool& pool, double ell, const TimeGrid& grid, const RateOptions& opts = {}) {
    return detail::solve_rate(pool, ell, grid, FactorModel{}, 1.0, false, opts, nullptr);
}

/// I(ell) = inf S(phi, psi) jointly over bin paths and the factor path.
inline RateResult minimize_rate_systematic(const Pool& pool, double ell, const FactorModel& factor, double c,
                                           const TimeGrid& grid, const RateOptions& opts = {}) {
    if (!factor.enabled()) throw std::invalid_argument("systematic minimization needs a factor model");
    return detail::solve_rate(pool, ell, grid, factor, c, true, opts, nullptr);
}

/// Joint minimization when the pool has systematic exposure and a factor is
/// configured, otherwise the psi = 0 problem.
inline bool uses_factor(const Pool& pool, const FactorModel& factor) {
    return factor.enabled() && has_systematic(pool);
}

/// Rates along increasing ells, each run warm-started from the previous extremal.
inline std::vector<RateResult> rate_curve(const Pool& pool, const std::vector<double>& ells, const FactorModel& factor,
                                          double c, const TimeGrid& grid, const RateOptions& opts = {}) {
    for (std::size_t i = 0; i < ells.size(); ++i) {
        if (!(ells[i] > 0.0 && ells[i] < 1.0)) throw std::invalid_argument("ells must lie in (0, 1)");
        if (i > 0 && !(ells[i] > ells[i - 1])) throw std::invalid_argument("ells must be strictly increasing");
    }
    const bool systematic = uses_factor(pool, factor);
    std::vector<RateResult> out;
    const std::vector<double>* warm = nullptr;
    for (double ell : ells) {
        out.push_back(detail::solve_rate(pool, ell, grid, factor, c, systematic, opts, warm));
        warm = &out.back().solution;
    }
    return out;
}

struct TailPoint {
    double ell = 0.0;
    double rate = 0.0;
    double tail = 0.0;        ///< exp(-N I(ell))
    double log10_tail = 0.0;  ///< -N I(ell) / ln 10
    bool converged = false;
};

inline std::vector<TailPoint> tail_curve(const Pool& pool, const std::vector<double>& ells, const FactorModel& factor,
                                         double c, const TimeGrid& grid, const RateOptions& opts = {}) {
    const double typical = typical_loss(pool, grid).loss_path.terminal();
    for (double ell : ells) {
        if (!(ell > typical)) throw std::invalid_argument("tail levels must exceed the typical loss");
    }
    const auto rates = rate_curve(pool, ells, factor, c, grid, opts);
    const double n = static_cast<double>(pool.n_names);
    std::vector<TailPoint> out;
    for (const auto& r : rates) {
        const double exponent = -n * std::max(r.value, 0.0);
        out.push_back({r.ell, r.value, std::exp(exponent), exponent / std::log(10.0), r.converged});
    }
    return out;
}

}  // namespace poolldp
