#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eqrgan/common.hpp"
#include "eqrgan/market.hpp"

using namespace eqrgan;
using namespace eqrgan::market;

namespace {

Roster paper_quad10_roster() {
    const double gammas[10] = {1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9};
    const double xis[10] = {28.9, 14.9, 11.8, -14.0, -19.1, -27.0, 22.2, 31.5, -26.3, -22.9};
    Roster r;
    for (int n = 0; n < 10; ++n) r.push_back({gammas[n], xis[n]});
    return r;
}

}  // namespace

TEST_CASE("bar_gamma basics") {
    CHECK(bar_gamma({{1.0, 0.0}}) == doctest::Approx(1.0));
    CHECK(bar_gamma({{1.0, 0.0}, {2.0, 0.0}}) == doctest::Approx(2.0 / 3.0));
    Roster r;
    for (int i = 0; i < 10; ++i) r.push_back({1.0 + 0.1 * i, 0.0});
    double direct = 0.0;
    for (const auto& a : r) direct += 1.0 / a.gamma;
    CHECK(bar_gamma(r) == doctest::Approx(1.0 / direct));
    CHECK(bar_gamma(r) == doctest::Approx(0.13913).epsilon(1e-4));
    CHECK_THROWS_AS(bar_gamma({}), ConfigError);
}

TEST_CASE("power cost values") {
    CHECK(cost(0.0, 0.01, 2.0) == 0.0);
    CHECK(cost(1.0, 0.01, 2.0) == doctest::Approx(0.005));
    CHECK(cost(4.0, 0.01, 1.5) == doctest::Approx(0.01 * 8.0 / 1.5));
    CHECK(cost(-1.0, 0.01, 2.0) > 0.0);
}

TEST_CASE("cost is convex on random pairs") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const double lambda = 0.001 + rng.uniform();
        const double q = 1.0 + 1e-6 + rng.uniform() * (1.0 - 1e-6);
        const double x = rng.uniform(-50.0, 50.0);
        const double y = rng.uniform(-50.0, 50.0);
        const double th = rng.uniform();
        const double lhs = cost(th * x + (1 - th) * y, lambda, q);
        const double rhs = th * cost(x, lambda, q) + (1 - th) * cost(y, lambda, q);
        CHECK(lhs <= rhs + 1e-12);
    }
}

TEST_CASE("marginal cost inverse") {
    CHECK(marginal_cost_inverse(0.0, 0.01, 2.0) == 0.0);
    CHECK(marginal_cost_inverse(0.01, 0.01, 2.0) == doctest::Approx(1.0));
    CHECK(marginal_cost_inverse(-0.04, 0.01, 1.5) == doctest::Approx(-16.0));
}

TEST_CASE("marginal cost inverse inverts the marginal cost") {
    Rng rng(123);
    for (int trial = 0; trial < 500; ++trial) {
        const double lambda = 0.001 + rng.uniform() * 2.0;
        const double q = 1.05 + rng.uniform() * 0.95;
        const double x = rng.uniform(-100.0, 100.0);
        const double y = lambda * std::pow(std::abs(x), q - 1.0) * (x >= 0 ? 1.0 : -1.0);
        const double back = marginal_cost_inverse(y, lambda, q);
        CHECK(std::abs(back - x) <= 1e-10 * std::max(1.0, std::abs(x)));
    }
}

TEST_CASE("frictionless benchmark") {
    MarketConfig cfg;
    cfg.alpha = 1.0;
    auto fb = frictionless_benchmark(cfg, {{1.0, 0.0}, {2.0, 0.0}});
    CHECK(fb.mu == doctest::Approx(2.0 / 3.0));
    CHECK(fb.sigma == doctest::Approx(1.0));

    cfg.alpha = 2.0;
    auto fb1 = frictionless_benchmark(cfg, {{1.0, 0.0}});
    CHECK(fb1.mu == doctest::Approx(4.0));
    CHECK(fb1.sigma == doctest::Approx(2.0));

    cfg.alpha = 1.0;
    Roster r = paper_quad10_roster();
    auto fb10 = frictionless_benchmark(cfg, r);
    CHECK(fb10.mu == doctest::Approx(0.13913).epsilon(1e-4));
}

TEST_CASE("reference positions") {
    MarketConfig cfg;
    cfg.s = 1.0;
    cfg.alpha = 1.0;
    Roster r{{1.0, 0.0}, {2.0, 0.0}};
    const double bg = bar_gamma(r);
    CHECK(reference_position(r[0], 0.0, cfg, bg) == doctest::Approx(2.0 / 3.0));
    CHECK(reference_position(r[1], 0.0, cfg, bg) == doctest::Approx(1.0 / 3.0));

    AgentSpec a{1.0, 3.0};
    CHECK(reference_position(a, 0.5, cfg, 2.0 / 3.0) == doctest::Approx(2.0 / 3.0 - 1.5));
}

TEST_CASE("reference positions sum to the supply at any sampled state") {
    MarketConfig cfg;
    cfg.s = 1.0;
    cfg.alpha = 1.0;
    Roster r = paper_quad10_roster();
    REQUIRE(validate(cfg, r).empty());
    const double bg = bar_gamma(r);
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const double B = rng.uniform(-3.0, 3.0);
        double total = 0.0;
        for (const auto& a : r) total += reference_position(a, B, cfg, bg);
        CHECK(total == doctest::Approx(cfg.s).epsilon(1e-12));
    }
}

TEST_CASE("terminal dividend") {
    MarketConfig cfg;
    cfg.alpha = 1.0;
    cfg.beta = 2.0;
    cfg.T = 0.2;
    CHECK(terminal_dividend(0.0, cfg) == doctest::Approx(0.4));
    cfg.T = 0.0;
    CHECK(terminal_dividend(1.0, cfg) == doctest::Approx(1.0));
    cfg.T = 0.2;
    // linear in the Brownian argument
    const double a = 3.7;
    CHECK(terminal_dividend(a * 0.5, cfg) ==
          doctest::Approx(cfg.alpha * a * 0.5 + cfg.beta * cfg.T));
}

TEST_CASE("validate accepts the 10-agent roster") {
    MarketConfig cfg;
    Roster r = paper_quad10_roster();
    double xi_sum = 0.0;
    for (const auto& a : r) xi_sum += a.xi;
    CHECK(xi_sum == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(validate(cfg, r).empty());
}

TEST_CASE("validate flags nonzero aggregate endowment") {
    MarketConfig cfg;
    Roster r{{1.0, 1.0}, {1.0, 1.0}};
    auto v = validate(cfg, r);
    REQUIRE(!v.empty());
    bool found = false;
    for (const auto& x : v) found |= x.message.find("aggregate endowment") != std::string::npos;
    CHECK(found);
}

TEST_CASE("validate flags elasticity out of range") {
    MarketConfig cfg;
    cfg.q = 2.5;
    Roster r{{1.0, 1.0}, {1.0, -1.0}};
    auto v = validate(cfg, r);
    REQUIRE(!v.empty());
    bool found = false;
    for (const auto& x : v) found |= x.message.find("elasticity") != std::string::npos;
    CHECK(found);
    cfg.q = 1.0;
    CHECK(!validate(cfg, r).empty());
}

TEST_CASE("validate flags initial positions that miss the supply") {
    MarketConfig cfg;
    Roster r{{1.0, 1.0}, {1.0, -1.0}};
    r[0].initial_position = 0.9;
    r[1].initial_position = 0.9;
    auto v = validate(cfg, r);
    REQUIRE(!v.empty());
}
