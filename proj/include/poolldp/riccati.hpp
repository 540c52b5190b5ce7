#pragma once

// Affine transform of the conditional intensity.
//
// For a name of type p driven by a loss path phi and factor path psi, the
// survival probability is exp(-Gamma(t)) with
//
//   Gamma(t) = theta_t(t) lambda0 + alpha lambda_bar int_0^t theta_t(r) dr
//            + beta_c int_0^t theta_t(t - r) dphi(r),
//
// where, for each horizon t, s -> theta_t(s) solves the Riccati ODE in
// time-to-go
//
//   theta_t'(s) = 1 - sigma^2 theta_t(s)^2 / 2 - alpha theta_t(s)
//               + beta_s psi'(t - s) theta_t(s),      theta_t(0) = 0.
//
// With beta_s psi' = 0 every theta_t is the same function b.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace poolldp {

namespace detail {

inline double riccati_rhs(const NameType& p, double x, double coupling) {
    return 1.0 - 0.5 * p.sigma * p.sigma * x * x - p.alpha * x + coupling * x;
}

/// One classical RK4 step of the Riccati ODE with constant coupling.
inline double riccati_step(const NameType& p, double x, double coupling, double h) {
    const double k1 = riccati_rhs(p, x, coupling);
    const double k2 = riccati_rhs(p, x + 0.5 * h * k1, coupling);
    const double k3 = riccati_rhs(p, x + 0.5 * h * k2, coupling);
    const double k4 = riccati_rhs(p, x + h * k3, coupling);
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// RK4 step together with its derivatives in x and in the coupling.
inline double riccati_step_sensitivity(const NameType& p, double x, double coupling, double h, double& d_x,
                                       double& d_coupling) {
    const double s2 = p.sigma * p.sigma;
    auto rx = [&](double v) { return -s2 * v - p.alpha + coupling; };
    const double k1 = riccati_rhs(p, x, coupling);
    const double k1x = rx(x);
    const double k1c = x;
    const double x2 = x + 0.5 * h * k1;
    const double x2x = 1.0 + 0.5 * h * k1x;
    const double x2c = 0.5 * h * k1c;
    const double k2 = riccati_rhs(p, x2, coupling);
    const double k2x = rx(x2) * x2x;
    const double k2c = rx(x2) * x2c + x2;
    const double x3 = x + 0.5 * h * k2;
    const double x3x = 1.0 + 0.5 * h * k2x;
    const double x3c = 0.5 * h * k2c;
    const double k3 = riccati_rhs(p, x3, coupling);
    const double k3x = rx(x3) * x3x;
    const double k3c = rx(x3) * x3c + x3;
    const double x4 = x + h * k3;
    const double x4x = 1.0 + h * k3x;
    const double x4c = h * k3c;
    const double k4 = riccati_rhs(p, x4, coupling);
    const double k4x = rx(x4) * x4x;
    const double k4c = rx(x4) * x4c + x4;
    d_x = 1.0 + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    d_coupling = h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// b on the grid together with b' evaluated from the ODE right-hand side.
struct RiccatiCurve {
    GridPath b;
    std::vector<double> slope;
};

inline RiccatiCurve solve_b(const NameType& p, const TimeGrid& grid) {
    RiccatiCurve out{GridPath(grid), std::vector<double>(grid.nodes())};
    const double h = grid.dt();
    for (std::size_t k = 0; k < grid.steps(); ++k) out.b[k + 1] = detail::riccati_step(p, out.b[k], 0.0, h);
    for (std::size_t k = 0; k < grid.nodes(); ++k) out.slope[k] = detail::riccati_rhs(p, out.b[k], 0.0);
    return out;
}

/// theta_{t_j}(s_k) for 0 <= k <= j <= M, stored row by row.
class ThetaFamily {
public:
    /// With `tabulate` set, the full table is built whenever beta_s != 0,
    /// even for a flat psi (needed for sensitivities with respect to psi).
    ThetaFamily(const NameType& p, const GridPath& psi, const TimeGrid& grid, bool tabulate = false)
        : grid_(grid) {
        require_same_grid(grid, psi.grid);
        base_ = solve_b(p, grid);
        const auto dpsi = psi.increments();
        psi_dependent_ = tabulate && p.beta_s != 0.0;
        if (p.beta_s != 0.0) {
            for (double d : dpsi) psi_dependent_ = psi_dependent_ || d != 0.0;
        }
        if (!psi_dependent_) return;

        const std::size_t m = grid.steps();
        const double h = grid.dt();
        coupling_.resize(m);
        for (std::size_t k = 0; k < m; ++k) coupling_[k] = p.beta_s * dpsi[k] / h;

        table_.assign((m + 1) * (m + 2) / 2, 0.0);
        for (std::size_t j = 1; j <= m; ++j) {
            double* row = table_.data() + offset(j);
            row[0] = 0.0;
            // On [s_k, s_{k+1}] the real time t_j - s lies in interval j-k-1.
            for (std::size_t k = 0; k < j; ++k)
                row[k + 1] = detail::riccati_step(p, row[k], coupling_[j - k - 1], h);
        }
    }

    const TimeGrid& grid() const { return grid_; }
    const std::vector<double>& coupling() const { return coupling_; }
    bool psi_dependent() const { return psi_dependent_; }
    /// The beta_s psi' = 0 solution (b and b').
    const RiccatiCurve& base() const { return base_; }

    /// theta_{t_j}(s_k), k <= j.
    double operator()(std::size_t j, std::size_t k) const {
        return psi_dependent_ ? table_[offset(j) + k] : base_.b[k];
    }

private:
    static std::size_t offset(std::size_t j) { return j * (j + 1) / 2; }

    TimeGrid grid_;
    RiccatiCurve base_;
    bool psi_dependent_ = false;
    std::vector<double> coupling_;  ///< beta_s psi' per interval
    std::vector<double> table_;
};

/// Gamma at the grid nodes. The dr integral uses the trapezoid rule; the
/// Stieltjes integral against phi uses interval increments with the kernel
/// averaged over the interval endpoints.
inline GridPath gamma_curve(const NameType& p, const GridPath& phi_bar, const ThetaFamily& theta) {
    require_same_grid(phi_bar.grid, theta.grid());
    const auto& grid = theta.grid();
    const std::size_t m = grid.steps();
    const double h = grid.dt();
    const auto dphi = phi_bar.increments();
    GridPath gamma(grid);
    for (std::size_t j = 1; j <= m; ++j) {
        double integral = 0.0;
        for (std::size_t k = 0; k < j; ++k) integral += 0.5 * (theta(j, k) + theta(j, k + 1));
        integral *= h;
        double contagion = 0.0;
        if (p.beta_c != 0.0) {
            for (std::size_t k = 0; k < j; ++k) contagion += 0.5 * (theta(j, j - k) + theta(j, j - k - 1)) * dphi[k];
        }
        gamma[j] = theta(j, j) * p.lambda0 + p.alpha * p.lambda_bar * integral + p.beta_c * contagion;
    }
    return gamma;
}

/// Default-time law on [0, T] plus the no-default atom.
struct DensityCurve {
    TimeGrid grid;
    GridPath gamma;
    std::vector<double> f;       ///< nodal density Gamma' exp(-Gamma)
    std::vector<double> masses;  ///< exact interval probabilities exp(-Gamma_k) - exp(-Gamma_{k+1})
    double survival_mass = 1.0;  ///< exp(-Gamma(T))
    std::size_t floor_events = 0;
    double floored_mass = 0.0;

    double total_mass() const {
        double s = 0.0;
        for (double m : masses) s += m;
        return s;
    }
    double trapezoid_integral() const {
        double s = 0.0;
        for (std::size_t k = 0; k + 1 < f.size(); ++k) s += 0.5 * (f[k] + f[k + 1]);
        return s * grid.dt();
    }
};

inline DensityCurve density_curve(const NameType& p, const GridPath& phi_bar, const ThetaFamily& theta) {
    DensityCurve out;
    out.grid = theta.grid();
    out.gamma = gamma_curve(p, phi_bar, theta);
    const auto& g = out.gamma;
    const std::size_t m = out.grid.steps();
    const double h = out.grid.dt();

    std::vector<double> rate(m + 1);
    if (!theta.psi_dependent()) {
        const auto& b = theta.base().b;
        const auto& bdot = theta.base().slope;
        const auto dphi = phi_bar.increments();
        for (std::size_t j = 0; j <= m; ++j) {
            double contagion = 0.0;
            if (p.beta_c != 0.0) {
                for (std::size_t k = 0; k < j; ++k) contagion += 0.5 * (bdot[j - k] + bdot[j - k - 1]) * dphi[k];
            }
            rate[j] = bdot[j] * p.lambda0 + p.alpha * p.lambda_bar * b[j] + p.beta_c * contagion;
        }
    } else {
        rate[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
        rate[m] = (3.0 * g[m] - 4.0 * g[m - 1] + g[m - 2]) / (2.0 * h);
        for (std::size_t j = 1; j < m; ++j) rate[j] = (g[j + 1] - g[j - 1]) / (2.0 * h);
    }

    out.f.resize(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
        if (rate[j] < 0.0) ++out.floor_events;
        out.f[j] = std::max(rate[j], 0.0) * std::exp(-g[j]);
    }
    out.masses.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double mk = -std::exp(-g[k]) * std::expm1(-(g[k + 1] - g[k]));
        if (mk < 0.0) {
            ++out.floor_events;
            out.floored_mass += -mk;
        }
        out.masses[k] = std::max(mk, 0.0);
    }
    out.survival_mass = std::exp(-g[m]);
    return out;
}

inline DensityCurve density_curve(const NameType& p, const GridPath& phi_bar, const GridPath& psi,
                                  const TimeGrid& grid) {
    return density_curve(p, phi_bar, ThetaFamily(p, psi, grid));
}

/// exp(-Gamma(t)) with Gamma interpolated linearly between nodes.
inline double survival(const NameType& p, const GridPath& phi_bar, const GridPath& psi, double t) {
    const auto& grid = phi_bar.grid;
    if (t < 0.0 || t > grid.horizon()) throw std::out_of_range("survival time outside [0, T]");
    const auto gamma = gamma_curve(p, phi_bar, ThetaFamily(p, psi, grid));
    return std::exp(-gamma.at(t));
}

}  // namespace poolldp
