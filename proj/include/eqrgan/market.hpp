#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "eqrgan/common.hpp"

namespace eqrgan::market {

// Market primitives for one risky asset with power trading costs
// G(x) = lambda*|x|^q / q, q in (1,2], and a linear terminal dividend
// alpha*B_T + beta*T.
struct MarketConfig {
    double s = 1.0;        // total share supply
    double T = 0.2;        // horizon in years
    double r = 0.0;        // safe rate (0 in all validated settings)
    double lambda = 0.01;  // cost level
    double q = 2.0;        // cost elasticity, (1,2]
    double alpha = 1.0;    // dividend loading on B_T
    double beta = 2.0;     // dividend drift coefficient
    int K = 50;            // time steps
    int m = 1;             // risky assets (only 1 supported)
    int d = 1;             // Brownian dimension (only 1 supported)
};

struct AgentSpec {
    double gamma = 1.0;   // risk aversion
    double xi = 0.0;      // endowment volatility coefficient (vol is xi*B_t)
    double b_drift = 0.0; // endowment drift, 0 in the validated setting
    double W0 = 0.0;      // initial wealth; absent from the LQ objective
    // Initial position. Unset means the frictionless value (bar_gamma/gamma)*s.
    std::optional<double> initial_position;
};

using Roster = std::vector<AgentSpec>;

struct Violation {
    std::string field;
    std::string message;
};

inline double bar_gamma(const Roster& roster) {
    if (roster.empty()) throw ConfigError("bar_gamma: empty roster");
    double acc = 0.0;
    for (const AgentSpec& a : roster) {
        if (!(a.gamma > 0.0)) throw ConfigError("bar_gamma: risk aversion must be positive");
        acc += 1.0 / a.gamma;
    }
    return 1.0 / acc;
}

inline double initial_position(const AgentSpec& agent, const Roster& roster,
                               const MarketConfig& cfg) {
    if (agent.initial_position) return *agent.initial_position;
    return bar_gamma(roster) / agent.gamma * cfg.s;
}

template <typename T>
T cost(T rate, T lambda, T q) {
    if (rate == T(0)) return T(0);
    return lambda * std::pow(std::abs(rate), q) / q;
}

// Inverse of the marginal cost G'(x) = lambda*|x|^{q-1} sign(x):
// the trading rate implied by an adjoint (marginal-cost) value y.
template <typename T>
T marginal_cost_inverse(T y, T lambda, T q) {
    if (y == T(0)) return T(0);
    const T s = y > T(0) ? T(1) : T(-1);
    return s * std::pow(std::abs(y) / lambda, T(1) / (q - T(1)));
}

struct FrictionlessBenchmark {
    double mu;     // bar_gamma * alpha^2
    double sigma;  // alpha
};

inline FrictionlessBenchmark frictionless_benchmark(const MarketConfig& cfg,
                                                    const Roster& roster) {
    return {bar_gamma(roster) * cfg.alpha * cfg.alpha, cfg.alpha};
}

// Frictionless equilibrium position at Brownian level B:
// (bar_gamma/gamma_n) s - (xi_n/alpha) B. These sum to s across any roster
// with zero aggregate endowment.
template <typename T>
T reference_position(const AgentSpec& agent, T B, const MarketConfig& cfg, double bar_gamma_) {
    return static_cast<T>(bar_gamma_ / agent.gamma * cfg.s) -
           static_cast<T>(agent.xi / cfg.alpha) * B;
}

template <typename T>
T terminal_dividend(T B_T, const MarketConfig& cfg) {
    return static_cast<T>(cfg.alpha) * B_T + static_cast<T>(cfg.beta * cfg.T);
}

inline std::vector<Violation> validate(const MarketConfig& cfg, const Roster& roster) {
    std::vector<Violation> v;
    auto bad = [&](const std::string& field, const std::string& msg) {
        v.push_back({field, msg});
    };
    if (!(cfg.T > 0.0)) bad("market.T", "horizon must be positive");
    if (cfg.K < 1) bad("market.K", "need at least one time step");
    if (!(cfg.lambda > 0.0)) bad("market.lambda", "cost level must be positive");
    if (!(cfg.q > 1.0 && cfg.q <= 2.0)) bad("market.q", "elasticity out of (1,2]");
    if (cfg.s < 0.0) bad("market.s", "supply must be nonnegative");
    if (cfg.m != 1) bad("market.m", "only a single risky asset is supported");
    if (cfg.d != 1) bad("market.d", "only one Brownian dimension is supported");
    if (!(cfg.alpha > 0.0)) bad("market.alpha", "dividend loading must be positive");
    if (roster.empty()) {
        bad("agents", "roster is empty");
        return v;
    }
    double xi_sum = 0.0, xi_scale = 0.0, pos_sum = 0.0;
    for (size_t n = 0; n < roster.size(); ++n) {
        if (!(roster[n].gamma > 0.0))
            bad("agents[" + std::to_string(n) + "].gamma", "risk aversion must be positive");
        xi_sum += roster[n].xi;
        xi_scale += std::abs(roster[n].xi);
    }
    if (std::abs(xi_sum) > 1e-9 * std::max(1.0, xi_scale))
        bad("agents.xi", "aggregate endowment nonzero");
    bool gammas_ok = v.empty() || std::all_of(roster.begin(), roster.end(),
                                              [](const AgentSpec& a) { return a.gamma > 0.0; });
    if (gammas_ok) {
        for (const AgentSpec& a : roster) pos_sum += initial_position(a, roster, cfg);
        if (std::abs(pos_sum - cfg.s) > 1e-9 * std::max(1.0, std::abs(cfg.s)))
            bad("agents.initial_position", "initial positions do not sum to the supply");
    }
    return v;
}

inline std::string violations_to_string(const std::vector<Violation>& v) {
    std::string out;
    for (const Violation& x : v) {
        if (!out.empty()) out += "; ";
        out += x.field + ": " + x.message;
    }
    return out;
}

}  // namespace eqrgan::market
