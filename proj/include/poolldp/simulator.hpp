#pragma once

// Monte Carlo simulation of the N-name interacting intensity system.
//
// Intensities follow full-truncation Euler steps of
//   d lambda = -alpha (lambda - lambda_bar) dt + sigma sqrt(lambda) dW
//              + beta_c dL + beta_s lambda dX^N,
// with X^N = eps_N X simulated directly in scaled form. A name defaults when
// its trapezoidal compensator crosses an Exp(1) threshold; the defaults of a
// step raise the surviving intensities once, at the end of the step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "core.hpp"

namespace poolldp {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of the stream keyed by (master seed, replication, stream id).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream) {
    return mix_seed(mix_seed(mix_seed(seed) ^ replication) ^ (stream + 0x51ed270b27ULL));
}

inline constexpr std::uint64_t kFactorStream = std::numeric_limits<std::uint64_t>::max();

/// Euler-Maruyama path of dY = b(Y) dt + scale k(Y) dV from Y(0) = 0; the
/// CIR case uses full truncation. With scale = eps^zeta this is eps X.
inline GridPath simulate_factor(const FactorModel& factor, const TimeGrid& grid, std::uint64_t seed,
                                double scale = 1.0) {
    GridPath path(grid);
    if (!factor.enabled()) return path;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double h = grid.dt();
    const double sq = std::sqrt(h);
    for (std::size_t k = 0; k < grid.steps(); ++k) {
        const double y = path[k];
        const double yp = factor.kind == FactorKind::CIR ? std::max(y, 0.0) : y;
        path[k + 1] = y + factor.drift(yp) * h + scale * factor.diffusion(yp) * sq * normal(rng);
    }
    return path;
}

struct SimulationOptions {
    std::size_t jobs = 1;
    /// Optional map from name index to RNG stream id (identity when empty).
    std::vector<std::uint64_t> stream_of_name;
};

struct LossRealization {
    GridPath loss_path;
    std::vector<double> default_times;  ///< +infinity for names surviving past T
    std::vector<std::size_t> bin_of_name;
    GridPath factor_path;
    std::uint64_t seed = 0;
    std::uint64_t replication = 0;
    std::size_t cascade_steps = 0;      ///< steps with more than one default
    std::size_t negative_excursions = 0;
};

/// Number of names per bin by largest remainder.
inline std::vector<std::size_t> bin_counts(const Pool& pool) {
    const std::size_t n = pool.n_names;
    std::vector<std::size_t> counts(pool.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const double exact = pool.bins[i].weight * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[rem[r % rem.size()].second];
    return counts;
}

inline LossRealization simulate_pool(const Pool& pool, const FactorModel& factor, const ScalingRegime& scaling,
                                     const TimeGrid& grid, std::uint64_t seed, std::uint64_t replication = 0,
                                     const SimulationOptions& opts = {}) {
    const std::size_t n = pool.n_names;
    if (n == 0) throw std::invalid_argument("pool needs at least one name");
    const double h = grid.dt();
    const double sq = std::sqrt(h);
    const double inv_n = 1.0 / static_cast<double>(n);

    LossRealization out;
    out.seed = seed;
    out.replication = replication;
    out.loss_path = GridPath(grid);
    out.default_times.assign(n, std::numeric_limits<double>::infinity());
    out.bin_of_name.reserve(n);
    const auto counts = bin_counts(pool);
    for (std::size_t i = 0; i < counts.size(); ++i) out.bin_of_name.insert(out.bin_of_name.end(), counts[i], i);

    const double eps = factor.enabled() ? scaling.epsilon(n) : 0.0;
    out.factor_path = simulate_factor(factor, grid, stream_seed(seed, replication, kFactorStream),
                                      std::pow(eps, factor.zeta()));

    // One distribution object per name: normal_distribution caches its second
    // Box-Muller draw, which would otherwise leak between streams.
    std::vector<std::mt19937_64> rngs;
    std::vector<std::normal_distribution<double>> normals(n);
    rngs.reserve(n);
    std::vector<double> lambda(n), compensator(n, 0.0), threshold(n);
    std::vector<char> alive(n, 1);
    std::exponential_distribution<double> expo(1.0);
    for (std::size_t m = 0; m < n; ++m) {
        const std::uint64_t stream = opts.stream_of_name.empty() ? m : opts.stream_of_name[m];
        rngs.emplace_back(stream_seed(seed, replication, stream));
        threshold[m] = expo(rngs.back());
        lambda[m] = pool.bins[out.bin_of_name[m]].type.lambda0;
    }

    std::size_t defaulted = 0;
    for (std::size_t k = 0; k < grid.steps(); ++k) {
        const double dx = out.factor_path[k + 1] - out.factor_path[k];
        std::size_t new_defaults = 0;
        for (std::size_t m = 0; m < n; ++m) {
            if (!alive[m]) continue;
            const auto& p = pool.bins[out.bin_of_name[m]].type;
            const double lp = std::max(lambda[m], 0.0);
            const double z = normals[m](rngs[m]);
            const double next = lambda[m] + p.alpha * (p.lambda_bar - lp) * h + p.sigma * std::sqrt(lp) * sq * z +
                                p.beta_s * lp * dx;
            if (next < 0.0) ++out.negative_excursions;
            const double a_old = compensator[m];
            compensator[m] += 0.5 * (lp + std::max(next, 0.0)) * h;
            lambda[m] = next;
            if (compensator[m] >= threshold[m]) {
                alive[m] = 0;
                ++new_defaults;
                const double frac = compensator[m] > a_old ? (threshold[m] - a_old) / (compensator[m] - a_old) : 1.0;
                out.default_times[m] = grid.time(k) + std::clamp(frac, 0.0, 1.0) * h;
            }
        }
        if (new_defaults > 1) ++out.cascade_steps;
        if (new_defaults > 0) {
            const double jump = static_cast<double>(new_defaults) * inv_n;
            for (std::size_t m = 0; m < n; ++m) {
                if (alive[m]) lambda[m] += pool.bins[out.bin_of_name[m]].type.beta_c * jump;
            }
        }
        defaulted += new_defaults;
        out.loss_path[k + 1] = static_cast<double>(defaulted) * inv_n;
    }
    return out;
}

struct LossSummary {
    GridPath mean;
    GridPath q10, q50, q90;
    std::vector<std::size_t> histogram;  ///< terminal default counts 0..N
    std::vector<double> terminal_losses; ///< one per replication, in replication order
    std::size_t replications = 0;
    std::size_t cascade_steps = 0;

    double terminal_mean() const { return mean.terminal(); }
    double terminal_std_error() const {
        const double n = static_cast<double>(terminal_losses.size());
        if (n < 2) return 0.0;
        const double mu = std::accumulate(terminal_losses.begin(), terminal_losses.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : terminal_losses) ss += (v - mu) * (v - mu);
        return std::sqrt(ss / (n - 1.0) / n);
    }
};

namespace detail {

/// Type-7 empirical quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

inline std::vector<GridPath> run_replications(const Pool& pool, const FactorModel& factor,
                                              const ScalingRegime& scaling, const TimeGrid& grid,
                                              std::size_t n_reps, std::uint64_t seed, const SimulationOptions& opts,
                                              std::size_t* cascades = nullptr) {
    std::vector<GridPath> paths(n_reps);
    std::vector<std::size_t> casc(n_reps, 0);
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, n_reps));
    auto work = [&](std::size_t worker) {
        for (std::size_t r = worker; r < n_reps; r += jobs) {
            auto real = simulate_pool(pool, factor, scaling, grid, seed, r, opts);
            paths[r] = std::move(real.loss_path);
            casc[r] = real.cascade_steps;
        }
    };
    if (jobs == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < jobs; ++w) threads.emplace_back(work, w);
        for (auto& t : threads) t.join();
    }
    if (cascades != nullptr) *cascades = std::accumulate(casc.begin(), casc.end(), std::size_t{0});
    return paths;
}

}  // namespace detail

inline LossSummary estimate_loss_distribution(const Pool& pool, const FactorModel& factor,
                                              const ScalingRegime& scaling, const TimeGrid& grid, std::size_t n_reps,
                                              std::uint64_t seed, const SimulationOptions& opts = {}) {
    if (n_reps == 0) throw std::invalid_argument("n_reps must be positive");
    LossSummary s;
    const auto paths = detail::run_replications(pool, factor, scaling, grid, n_reps, seed, opts, &s.cascade_steps);
    s.replications = n_reps;
    s.mean = GridPath(grid);
    s.q10 = GridPath(grid);
    s.q50 = GridPath(grid);
    s.q90 = GridPath(grid);
    std::vector<double> col(n_reps);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        double sum = 0.0;
        for (std::size_t r = 0; r < n_reps; ++r) sum += (col[r] = paths[r][k]);
        s.mean[k] = sum / static_cast<double>(n_reps);
        std::sort(col.begin(), col.end());
        s.q10[k] = detail::sorted_quantile(col, 0.1);
        s.q50[k] = detail::sorted_quantile(col, 0.5);
        s.q90[k] = detail::sorted_quantile(col, 0.9);
    }
    s.histogram.assign(pool.n_names + 1, 0);
    for (const auto& p : paths) {
        s.terminal_losses.push_back(p.terminal());
        const auto count = static_cast<std::size_t>(std::llround(p.terminal() * static_cast<double>(pool.n_names)));
        ++s.histogram[std::min(count, pool.n_names)];
    }
    return s;
}

struct TailEstimate {
    double probability = 0.0;
    double half_width = 0.0;  ///< Wilson 95% half-width
    double lower = 0.0;
    double upper = 0.0;
    std::size_t hits = 0;
    std::size_t replications = 0;
};

/// Wilson score interval at 95%.
inline TailEstimate wilson_interval(std::size_t hits, std::size_t n) {
    constexpr double z = 1.959963984540054;
    TailEstimate t;
    t.hits = hits;
    t.replications = n;
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(hits) / nn;
    t.probability = p;
    const double denom = 1.0 + z * z / nn;
    const double centre = (p + z * z / (2.0 * nn)) / denom;
    t.half_width = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    t.lower = hits == 0 ? 0.0 : std::max(0.0, centre - t.half_width);
    t.upper = hits == n ? 1.0 : std::min(1.0, centre + t.half_width);
    return t;
}

/// Plain Monte Carlo frequency of {L^N(T) >= ell}. Only moderate tails are
/// reachable this way; deep tails need the analytic rate function.
inline TailEstimate estimate_tail_prob(const Pool& pool, const FactorModel& factor, const ScalingRegime& scaling,
                                       const TimeGrid& grid, double ell, std::size_t n_reps, std::uint64_t seed,
                                       const SimulationOptions& opts = {}) {
    if (!(ell >= 0.0 && ell <= 1.0)) throw std::invalid_argument("ell must lie in [0, 1]");
    if (n_reps == 0) throw std::invalid_argument("n_reps must be positive");
    const auto paths = detail::run_replications(pool, factor, scaling, grid, n_reps, seed, opts);
    std::size_t hits = 0;
    // Losses are multiples of 1/N; compare with a half-name tolerance.
    const double slack = 0.5 / static_cast<double>(pool.n_names);
    for (const auto& p : paths) hits += p.terminal() >= ell - slack * 1e-6 ? 1 : 0;
    return wilson_interval(hits, n_reps);
}

}  // namespace poolldp
