#include <catch_amalgamated.hpp>

#include <poolldp/riccati.hpp>

#include "oracles.hpp"

using namespace poolldp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

NameType portfolio_one() { return {1.0, 1.0, 0.9, 3.0, 10.0, 0.5}; }

double max_b_error(const NameType& p, std::size_t steps) {
    const TimeGrid g(1.0, steps);
    const auto b = solve_b(p, g);
    double e = 0.0;
    for (std::size_t k = 0; k < g.nodes(); ++k) e = std::max(e, std::abs(b.b[k] - oracle::cir_b(p.alpha, p.sigma, g.time(k))));
    return e;
}

}  // namespace

TEST_CASE("closed-form b satisfies its ODE") {
    // Residual of the oracle itself, by central differences.
    for (double sigma : {0.3, 0.9, 2.0}) {
        for (double t : {0.1, 0.5, 1.0, 3.0}) {
            const double h = 1e-5;
            const double d = (oracle::cir_b(1.0, sigma, t + h) - oracle::cir_b(1.0, sigma, t - h)) / (2 * h);
            const double b = oracle::cir_b(1.0, sigma, t);
            CHECK(std::abs(d - (1.0 - 0.5 * sigma * sigma * b * b - b)) < 1e-9);
        }
    }
}

TEST_CASE("solve_b trivial and closed-form cases") {
    const TimeGrid g(1.0, 100);
    const auto t = solve_b(NameType{}, g);
    for (std::size_t k = 0; k < g.nodes(); ++k) CHECK_THAT(t.b[k], WithinAbs(g.time(k), 1e-14));

    const NameType p{1.0, 1.0, 0.9, 0.0, 0.0, 0.5};
    const auto b = solve_b(p, TimeGrid(1.0, 1000));
    CHECK_THAT(b.b.terminal(), WithinAbs(0.585, 5e-4));
    CHECK(max_b_error(p, 1000) < 1e-6);
}

TEST_CASE("RK4 converges at fourth order") {
    const NameType p{2.0, 1.0, 1.5, 0.0, 0.0, 0.5};
    const double e1 = max_b_error(p, 10);
    const double e2 = max_b_error(p, 20);
    const double ratio = e1 / e2;
    CHECK(ratio >= 8.0);
    CHECK(ratio <= 32.0);
}

TEST_CASE("b is nondecreasing and below the positive root") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.05, 5.0);
    for (int c = 0; c < 30; ++c) {
        const NameType p{u(rng), 1.0, u(rng), 0.0, 0.0, 0.5};
        const auto b = solve_b(p, TimeGrid(5.0, 400));
        const double root = (-p.alpha + std::sqrt(p.alpha * p.alpha + 2 * p.sigma * p.sigma)) / (p.sigma * p.sigma);
        for (std::size_t k = 1; k < b.b.size(); ++k) {
            CHECK(b.b[k] >= b.b[k - 1]);
            CHECK(b.b[k] <= root + 1e-12);
        }
    }
}

TEST_CASE("theta family collapses to b without factor effort") {
    const TimeGrid g(1.0, 50);
    auto p = portfolio_one();
    GridPath psi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) psi[k] = g.time(k);

    const ThetaFamily flat(p, GridPath(g), g, true);
    CHECK(flat.psi_dependent());
    p.beta_s = 0.0;
    const ThetaFamily no_sens(p, psi, g);
    const auto b = solve_b(p, g);
    for (std::size_t j = 0; j <= g.steps(); ++j) {
        for (std::size_t k = 0; k <= j; ++k) {
            CHECK_THAT(flat(j, k), WithinAbs(b.b[k], 1e-10));
            CHECK_THAT(no_sens(j, k), WithinAbs(b.b[k], 1e-10));
        }
    }
}

TEST_CASE("theta rows start at zero and stay bounded") {
    const TimeGrid g(1.0, 80);
    const auto p = portfolio_one();
    GridPath psi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) psi[k] = 0.3 * std::sin(4.0 * g.time(k));
    const ThetaFamily th(p, psi, g);
    for (std::size_t j = 0; j <= g.steps(); ++j) {
        CHECK(th(j, 0) == 0.0);
        for (std::size_t k = 0; k <= j; ++k) {
            CHECK(std::isfinite(th(j, k)));
            CHECK(th(j, k) >= 0.0);
        }
    }
}

TEST_CASE("theta matches the sigma = alpha = 0 closed form") {
    const TimeGrid g(1.0, 200);
    const NameType p{0.0, 0.0, 0.0, 0.0, 4.0, 0.5};
    GridPath psi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) psi[k] = 0.5 * g.time(k) - 0.8 * g.time(k) * g.time(k);
    const ThetaFamily th(p, psi, g);
    for (std::size_t j : {20u, 77u, 200u}) {
        std::vector<double> sub(psi.values.begin(), psi.values.begin() + static_cast<long>(j) + 1);
        CHECK_THAT(th(j, j), WithinRel(oracle::theta_sigma_alpha_zero(p.beta_s, sub, g.dt()), 1e-9));
    }
}

TEST_CASE("theta rows satisfy the time-to-go ODE by independent quadrature") {
    const TimeGrid g(1.0, 2000);
    const auto p = portfolio_one();
    GridPath psi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) psi[k] = g.time(k);
    const ThetaFamily th(p, psi, g);
    const double h = g.dt();
    double worst = 0.0;
    for (std::size_t j : {500u, 1300u, 2000u}) {
        // theta_t(s_k) - int_0^{s_k} rhs ds by composite Simpson, psi'(t - s) = 1 here.
        auto rhs = [&](double x) { return 1.0 - 0.5 * p.sigma * p.sigma * x * x - p.alpha * x + p.beta_s * x; };
        double integral = 0.0;
        for (std::size_t k = 2; k <= j; k += 2) {
            integral += h / 3.0 * (rhs(th(j, k - 2)) + 4.0 * rhs(th(j, k - 1)) + rhs(th(j, k)));
            worst = std::max(worst, std::abs(th(j, k) - integral));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("gamma trivial cases") {
    const TimeGrid g(1.0, 40);
    const NameType p{0.0, 0.0, 0.0, 0.0, 0.0, 0.5};
    const auto gamma = gamma_curve(p, GridPath(g), ThetaFamily(p, GridPath(g), g));
    for (std::size_t k = 0; k < g.nodes(); ++k) CHECK_THAT(gamma[k], WithinAbs(0.5 * g.time(k), 1e-14));

    const NameType q{1.0, 1.0, 0.9, 3.0, 0.0, 0.5};
    const auto gz = gamma_curve(q, GridPath(g), ThetaFamily(q, GridPath(g), g));
    const TimeGrid fine(1.0, 1000);
    for (std::size_t k = 0; k < g.nodes(); k += 8) {
        const double t = g.time(k);
        const double expect = oracle::cir_b(1.0, 0.9, t) * 0.5 + oracle::cir_b_integral(1.0, 0.9, t);
        CHECK_THAT(gz[k], WithinAbs(expect, 1e-4));
    }
}

TEST_CASE("survival matches a Monte Carlo estimate with contagion input") {
    const TimeGrid g(1.0, 200);
    auto p = portfolio_one();
    p.beta_s = 0.0;
    GridPath phi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) phi[k] = 0.8 * g.time(k);
    const double s = survival(p, phi, GridPath(g), 1.0);
    std::vector<double> zero(g.nodes(), 0.0);
    const auto mc = oracle::mc_survival(p.alpha, p.lambda_bar, p.sigma, p.lambda0, p.beta_c, 0.0, phi.values, zero, 1.0,
                                        5, 40000, 3);
    INFO("analytic " << s << " mc " << mc.mean << " +- " << mc.std_error);
    CHECK(std::abs(s - mc.mean) < 4.0 * mc.std_error + 2e-3);
}

TEST_CASE("survival matches a Monte Carlo estimate with a factor path") {
    const TimeGrid g(1.0, 200);
    const auto p = portfolio_one();
    GridPath phi(g), psi(g);
    for (std::size_t k = 0; k < g.nodes(); ++k) {
        phi[k] = 0.5 * g.time(k);
        psi[k] = 0.15 * std::sin(3.0 * g.time(k));
    }
    const double s = survival(p, phi, psi, 1.0);
    const auto mc =
        oracle::mc_survival(p.alpha, p.lambda_bar, p.sigma, p.lambda0, p.beta_c, p.beta_s, phi.values, psi.values, 1.0,
                            5, 40000, 5);
    INFO("analytic " << s << " mc " << mc.mean << " +- " << mc.std_error);
    CHECK(std::abs(s - mc.mean) < 4.0 * mc.std_error + 2e-3);
}

TEST_CASE("density of a constant intensity") {
    const TimeGrid g(1.0, 100);
    const NameType p{0.0, 0.0, 0.0, 0.0, 0.0, 0.5};
    const auto d = density_curve(p, GridPath(g), GridPath(g), g);
    for (std::size_t k = 0; k < g.nodes(); ++k) CHECK_THAT(d.f[k], WithinAbs(0.5 * std::exp(-0.5 * g.time(k)), 1e-12));
    CHECK_THAT(d.survival_mass, WithinAbs(std::exp(-0.5), 1e-14));
    CHECK_THAT(survival(p, GridPath(g), GridPath(g), 1.0), WithinAbs(std::exp(-0.5), 1e-14));
    CHECK(survival(p, GridPath(g), GridPath(g), 0.0) == 1.0);
}

TEST_CASE("density normalization on random inputs") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int c = 0; c < 100; ++c) {
        const TimeGrid g(0.5 + 2.0 * u(rng), 50 + static_cast<std::size_t>(100 * u(rng)));
        const NameType p{3 * u(rng), 2 * u(rng), 1.5 * u(rng), 5 * u(rng), 10 * (u(rng) - 0.5), u(rng)};
        GridPath phi(g), psi(g);
        for (std::size_t k = 1; k < g.nodes(); ++k) {
            phi[k] = std::min(1.0, phi[k - 1] + 2.0 * u(rng) / static_cast<double>(g.steps()));
            psi[k] = psi[k - 1] + 0.2 * (u(rng) - 0.5) / std::sqrt(static_cast<double>(g.steps()));
        }
        const auto d = density_curve(p, phi, psi, g);
        CHECK_THAT(d.total_mass() + d.survival_mass, WithinAbs(1.0, 1e-8));
        CHECK(d.survival_mass >= 0.0);
        CHECK(d.survival_mass <= 1.0);
        for (double f : d.f) CHECK(f >= 0.0);
        // Nodal density agrees with the exact masses to quadrature order.
        CHECK_THAT(d.trapezoid_integral(), WithinAbs(d.total_mass(), 5e-3));
    }
}

TEST_CASE("survival is nonincreasing for nonnegative contagion") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int c = 0; c < 20; ++c) {
        const TimeGrid g(1.0, 60);
        const NameType p{2 * u(rng), u(rng), u(rng), 4 * u(rng), 0.0, u(rng)};
        GridPath phi(g);
        for (std::size_t k = 1; k < g.nodes(); ++k) phi[k] = phi[k - 1] + u(rng) / 60.0;
        double prev = 1.0;
        for (double t = 0.0; t <= 1.0; t += 0.05) {
            const double s = survival(p, phi, GridPath(g), t);
            CHECK(s <= prev + 1e-15);
            prev = s;
        }
    }
}

TEST_CASE("grid mismatch is reported") {
    const NameType p{1.0, 1.0, 0.9, 0.0, 0.0, 0.5};
    CHECK_THROWS_AS(density_curve(p, GridPath(TimeGrid(1.0, 10)), GridPath(TimeGrid(1.0, 20)), TimeGrid(1.0, 10)),
                    GridMismatch);
}
