#include <catch_amalgamated.hpp>

#include <poolldp/config.hpp>
#include <poolldp/core.hpp>

using namespace poolldp;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

json portfolio_one() {
    return json::parse(R"({
      "pool": {"n_names": 200, "horizon": 1.0,
               "bins": [{"weight": 1.0, "alpha": 1, "lambda_bar": 1, "sigma": 0.9,
                         "lambda0": 0.5, "beta_s": 10, "beta_c": 3}]},
      "factor": {"kind": "OU", "gamma": 1.0}
    })");
}

json two_types() {
    return json::parse(R"({
      "pool": {"n_names": 200,
               "bins": [{"weight": "1/3", "alpha": 1, "lambda_bar": 2, "sigma": 1, "lambda0": 0.5, "beta_s": 5, "beta_c": 10},
                        {"weight": "2/3", "alpha": 1, "lambda_bar": 2, "sigma": 1, "lambda0": 0.5, "beta_s": 1, "beta_c": 2}]}
    })");
}

}  // namespace

TEST_CASE("time grid nodes and spacing") {
    const TimeGrid g(2.0, 8);
    CHECK(g.nodes() == 9);
    CHECK(g.dt() == 0.25);
    CHECK(g.time(0) == 0.0);
    CHECK(g.time(8) == 2.0);
    CHECK_THROWS_AS(TimeGrid(1.0, 1), ConfigError);
    CHECK_THROWS_AS(TimeGrid(0.0, 10), ConfigError);
}

TEST_CASE("grid path helpers") {
    const TimeGrid g(1.0, 4);
    GridPath p(g, std::vector<double>{0.0, 0.1, 0.3, 0.3, 0.6});
    CHECK(p.is_loss_path());
    CHECK(p.terminal() == 0.6);
    CHECK_THAT(p.at(0.375), WithinAbs(0.2, 1e-15));
    const auto d = p.increments();
    REQUIRE(d.size() == 4);
    CHECK_THAT(d[3], WithinAbs(0.3, 1e-15));

    GridPath bad(g, std::vector<double>{0.0, 0.2, 0.1, 0.3, 0.4});
    CHECK_FALSE(bad.is_loss_path());
    GridPath factor(g, std::vector<double>{0.0, -2.0, 3.0, 0.5, -1.0});
    CHECK(factor.is_factor_path());
    CHECK_FALSE(factor.is_loss_path());
    CHECK_THROWS_AS(GridPath(g, std::vector<double>{0.0, 1.0}), GridMismatch);
    CHECK_THROWS_AS(p.at(1.5), std::out_of_range);
}

TEST_CASE("portfolio I config yields a single-bin pool") {
    const auto cfg = parse_config(portfolio_one());
    REQUIRE(cfg.pool.size() == 1);
    CHECK(cfg.pool.n_names == 200);
    const auto& t = cfg.pool.bins[0].type;
    CHECK(t.alpha == 1.0);
    CHECK(t.sigma == 0.9);
    CHECK(t.beta_s == 10.0);
    CHECK(t.beta_c == 3.0);
    CHECK(cfg.factor.kind == FactorKind::OU);
    CHECK(cfg.factor.zeta() == 1.0);
    CHECK_THAT(cfg.c_limit(), WithinAbs(1.0, 1e-15));
}

TEST_CASE("fractional weights parse and sum to one") {
    const auto pool = validate_pool(two_types());
    REQUIRE(pool.size() == 2);
    CHECK_THAT(pool.bins[0].weight + pool.bins[1].weight, WithinAbs(1.0, 1e-12));
    CHECK_THAT(pool.bins[0].weight, WithinAbs(1.0 / 3.0, 1e-15));
    CHECK(pool.bins[0].type.beta_c == 10.0);
    CHECK(pool.bins[1].type.beta_s == 1.0);
}

TEST_CASE("invalid configurations are rejected") {
    auto doc = portfolio_one();
    doc["pool"]["bins"][0]["sigma"] = -1.0;
    CHECK_THROWS_WITH(parse_config(doc), ContainsSubstring("negative parameter"));

    doc = portfolio_one();
    doc["pool"]["bins"][0]["beta_c"] = 1000.0;
    CHECK_THROWS_WITH(parse_config(doc), ContainsSubstring("exceeds bound"));
    doc["k_max"] = 2000.0;
    CHECK_NOTHROW(parse_config(doc));

    doc = portfolio_one();
    doc["pool"]["bins"][0]["weight"] = 0.7;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = portfolio_one();
    doc["pool"]["bins"] = json::array();
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = portfolio_one();
    doc["factor"]["zeta"] = 0.5;
    CHECK_THROWS_WITH(parse_config(doc), ContainsSubstring("zeta"));

    doc = portfolio_one();
    doc["scaling"] = {{"rule", {{"a", 1.0}, {"q", 1.0}}}};
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = portfolio_one();
    doc["pool"]["bins"][0]["beta_s"] = -5.0;
    CHECK_NOTHROW(parse_config(doc));

    CHECK_THROWS_AS(load_config("/nonexistent/path.json"), ConfigError);
}

TEST_CASE("factor drift and diffusion maps") {
    FactorModel ou{FactorKind::OU, 2.0, 0.0};
    CHECK(ou.drift(1.5) == -3.0);
    CHECK(ou.diffusion(-4.0) == 1.0);
    FactorModel cir{FactorKind::CIR, 2.0, 0.5};
    CHECK(cir.zeta() == 0.5);
    CHECK(cir.drift(1.5) == -2.0);
    CHECK(cir.diffusion(4.0) == 2.0);
    CHECK(cir.diffusion(-1.0) == 0.0);
}

TEST_CASE("scaling regimes keep N eps^(2 zeta) constant") {
    for (double zeta : {1.0, 0.5}) {
        const auto s = ScalingRegime{1.7, 1.0 / (2.0 * zeta)};
        REQUIRE(s.admissible(zeta));
        for (std::size_t n : {10u, 200u, 5000u}) CHECK_THAT(s.scaled_size(n, zeta), WithinAbs(s.c_limit(zeta), 1e-9));
        const auto u = ScalingRegime::unit_for(zeta);
        CHECK_THAT(u.scaled_size(321, zeta), WithinAbs(1.0, 1e-12));
    }
    CHECK_FALSE(ScalingRegime{1.0, 1.0}.admissible(1.0));
}

TEST_CASE("mixture path is the weighted average") {
    const TimeGrid g(1.0, 2);
    Pool pool;
    pool.bins = {{1.0 / 3.0, {}}, {2.0 / 3.0, {}}};
    const GridPath a(g, std::vector<double>{0.0, 0.5, 0.9});
    const GridPath b(g, std::vector<double>{0.0, 0.3, 0.6});
    CHECK_THAT(mixture_path(pool, {a, b}).terminal(), WithinAbs(0.7, 1e-15));
    const auto zero = mixture_path(pool, {GridPath(g), GridPath(g)});
    for (double v : zero.values) CHECK(v == 0.0);

    Pool single;
    single.bins = {{1.0, {}}};
    CHECK(mixture_path(single, {a}).values == a.values);
    CHECK_THROWS_AS(mixture_path(pool, {a}), std::invalid_argument);
    CHECK_THROWS_AS(mixture_path(pool, {a, GridPath(TimeGrid(1.0, 3))}), GridMismatch);
}

TEST_CASE("variants zero the requested sensitivities") {
    const auto pool = validate_pool(two_types());
    const auto ind = with_variant(pool, false, false);
    CHECK_FALSE(has_systematic(ind));
    for (const auto& b : ind.bins) CHECK(b.type.beta_c == 0.0);
    const auto cont = with_variant(pool, true, false);
    CHECK(cont.bins[0].type.beta_c == 10.0);
    CHECK(has_systematic(with_variant(pool, false, true)));
}

TEST_CASE("config round-trips through json") {
    const auto cfg = parse_config(portfolio_one());
    const auto again = parse_config(to_json(cfg));
    CHECK(again.pool.bins[0].type == cfg.pool.bins[0].type);
    CHECK(again.pool.n_names == cfg.pool.n_names);
    CHECK(again.factor.gamma == cfg.factor.gamma);
    CHECK(again.steps == cfg.steps);
}

TEST_CASE("bundled configs load") {
    for (const char* name : {"portfolio1.json", "portfolio2.json", "hetero_ab.json"}) {
        INFO(name);
        CHECK_NOTHROW(load_config(std::string(POOLLDP_SOURCE_DIR) + "/configs/" + name));
    }
}
