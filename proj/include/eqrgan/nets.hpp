#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "eqrgan/adam.hpp"
#include "eqrgan/market.hpp"
#include "eqrgan/mlp.hpp"

namespace eqrgan::model {

using diffcore::Matrix;
using diffcore::Mlp;
using diffcore::NodeId;
using diffcore::ParamStore;
using diffcore::Tape;
using market::AgentSpec;
using market::MarketConfig;
using market::Roster;

enum class Preference { Lq, General };
enum class MuMode { Implicit, KnownQuadratic, KnownTwoAgentPower };

struct NetConfig {
    int hidden_layers = 2;
    int hidden_width = 32;
};

// Mean-reversion speed and deviation scale of the tracking problem, used to
// size network outputs so raw outputs stay O(1).
inline double tracking_rate(const AgentSpec& a, const MarketConfig& cfg) {
    return cfg.alpha * std::sqrt(a.gamma / cfg.lambda);
}
inline double deviation_scale(const AgentSpec& a, const MarketConfig& cfg) {
    const double kappa = tracking_rate(a, cfg);
    return std::abs(a.xi) / cfg.alpha / std::sqrt(2.0 * kappa);
}

// Per-agent, per-knot policy networks. In LQ mode each net maps (X_n, B) to
// a raw trading rate, scaled by a fixed per-agent output gain. In general
// mode the state carries wealth, the output adds the adjoint volatility
// rows, and a trainable y0 seeds the forward adjoint.
template <typename T>
struct GeneratorParams {
    Preference preference = Preference::Lq;
    int N = 0;
    int K = 0;
    ParamStore<T> store;
    std::vector<std::vector<Mlp<T>>> nets;  // [agent][knot 0..K]
    std::vector<int> y0_slots;               // general mode only, one (2x1) per agent
    std::vector<T> out_scale;

    int state_dim() const { return preference == Preference::Lq ? 1 : 2; }
    int in_dim() const { return state_dim() + 1; }
    int out_dim() const { return preference == Preference::Lq ? 1 : 3; }

    static GeneratorParams create(const MarketConfig& cfg, const Roster& roster,
                                  const NetConfig& net, Preference pref, uint64_t seed) {
        GeneratorParams g;
        g.preference = pref;
        g.N = static_cast<int>(roster.size());
        g.K = cfg.K;
        g.nets.resize(g.N);
        std::vector<int> widths{g.in_dim()};
        for (int l = 0; l < net.hidden_layers; ++l) widths.push_back(net.hidden_width);
        widths.push_back(g.out_dim());
        for (int n = 0; n < g.N; ++n) {
            for (int k = 0; k <= g.K; ++k)
                g.nets[n].push_back(Mlp<T>::create(g.store, widths, /*with_skip=*/true));
            const double scale = 3.0 * tracking_rate(roster[n], cfg) *
                                 deviation_scale(roster[n], cfg);
            g.out_scale.push_back(static_cast<T>(std::clamp(scale, 1.0, 1e4)));
        }
        if (pref == Preference::General)
            for (int n = 0; n < g.N; ++n) g.y0_slots.push_back(g.store.add(2, 1));
        Rng rng(seed_mix(seed, 0x9e4e));
        for (int n = 0; n < g.N; ++n)
            for (int k = 0; k <= g.K; ++k) g.nets[n][k].init(g.store, rng, /*zero_last=*/true);
        return g;
    }

    // Raw network output -> trading rate (first row only in general mode).
    NodeId policy_node(Tape<T>& tape, int n, int k, NodeId input) const {
        NodeId raw = nets[n][k].apply(tape, store, input);
        if (preference == Preference::General) raw = tape.slice_rows(raw, 0, 1);
        return tape.scale(raw, out_scale[n]);
    }

    Matrix<T> policy_plain(int n, int k, const Matrix<T>& input) const {
        Matrix<T> raw = nets[n][k].apply_plain(store, input);
        Matrix<T> out(1, raw.cols);
        for (int j = 0; j < raw.cols; ++j) out(0, j) = out_scale[n] * raw(0, j);
        return out;
    }
};

// Per-knot price-dynamics networks plus the trainable initial price. The
// return and volatility heads are separate networks: the return head solves
// a stiff regression against the clearing condition while the volatility
// head follows the much fainter terminal-mismatch signal, and separating
// them keeps the optimizer statistics of the two apart. The volatility head
// is softplus-shifted to start at the dividend loading; the return head is
// an offset from the frictionless benchmark return with its bypass seeded by
// the frictionless clearing loading.
template <typename T>
struct DiscriminatorParams {
    MuMode mode = MuMode::Implicit;
    int N = 0;
    int K = 0;
    ParamStore<T> store;
    int S0_slot = -1;
    std::vector<Mlp<T>> mu_nets;     // [knot 0..K], implicit mode only
    std::vector<Mlp<T>> sigma_nets;  // [knot 0..K]
    T mu_ref = T(0);
    T mu_out_scale = T(1);
    T sigma_offset = T(0);
    static constexpr double kSigmaFloor = 1e-4;

    int in_dim() const { return N + 1; }

    static DiscriminatorParams create(const MarketConfig& cfg, const Roster& roster,
                                      const NetConfig& net, MuMode mode, uint64_t seed) {
        if (mode == MuMode::KnownQuadratic && cfg.q != 2.0)
            throw ConfigError("discriminator: closed-form return requires q = 2");
        if (mode == MuMode::KnownTwoAgentPower && roster.size() != 2)
            throw ConfigError("discriminator: two-agent closed-form return requires N = 2");
        DiscriminatorParams d;
        d.mode = mode;
        d.N = static_cast<int>(roster.size());
        d.K = cfg.K;
        d.S0_slot = d.store.add(1, 1);
        const double bg = market::bar_gamma(roster);
        // frictionless initial price: beta*T less the accumulated benchmark return
        d.store[d.S0_slot](0, 0) =
            static_cast<T>(cfg.beta * cfg.T - bg * cfg.alpha * cfg.alpha * cfg.s * cfg.T);
        d.mu_ref = static_cast<T>(bg * cfg.alpha * cfg.alpha * cfg.s);
        double dev = 0.0;
        for (const AgentSpec& a : roster) {
            const double x = a.gamma * deviation_scale(a, cfg);
            dev += x * x;
        }
        d.mu_out_scale = static_cast<T>(std::clamp(
            3.0 * cfg.alpha * cfg.alpha * std::sqrt(dev) / roster.size(), 0.5, 1e4));
        d.sigma_offset = static_cast<T>(std::log(std::exp(cfg.alpha - kSigmaFloor) - 1.0));
        std::vector<int> widths{d.in_dim()};
        for (int l = 0; l < net.hidden_layers; ++l) widths.push_back(net.hidden_width);
        widths.push_back(1);
        Rng rng(seed_mix(seed, 0xd15c));
        for (int k = 0; k <= d.K; ++k) {
            if (mode == MuMode::Implicit) {
                d.mu_nets.push_back(Mlp<T>::create(d.store, widths, /*with_skip=*/true));
                d.mu_nets[k].init(d.store, rng, /*zero_last=*/true);
                Matrix<T>& skip = d.store[d.mu_nets[k].skip_slot];
                for (int n = 0; n < d.N; ++n)
                    skip(0, n) = static_cast<T>(cfg.alpha * cfg.alpha * roster[n].gamma /
                                                roster.size()) /
                                 d.mu_out_scale;
            }
            d.sigma_nets.push_back(Mlp<T>::create(d.store, widths, /*with_skip=*/true));
            d.sigma_nets[k].init(d.store, rng, /*zero_last=*/true);
        }
        return d;
    }

    T S0() const { return store[S0_slot](0, 0); }

    // Per-slot learning-rate scaling: the volatility head and the initial
    // price track a far weaker loss component than the return regression.
    std::vector<double> lr_scales(double sigma_mult) const {
        std::vector<double> s(store.size(), 1.0);
        auto mark = [&](const Mlp<T>& net) {
            for (int slot : net.weight_slots) s[slot] = sigma_mult;
            for (int slot : net.bias_slots) s[slot] = sigma_mult;
            if (net.has_skip()) s[net.skip_slot] = sigma_mult;
        };
        for (const Mlp<T>& net : sigma_nets) mark(net);
        s[S0_slot] = sigma_mult;
        return s;
    }

    // sigma = floor + softplus(raw + offset); starts exactly at alpha.
    NodeId sigma_node(Tape<T>& tape, NodeId raw_row) const {
        return tape.add_scalar(tape.softplus(tape.add_scalar(raw_row, sigma_offset)),
                               static_cast<T>(kSigmaFloor));
    }
    T sigma_plain(T raw) const {
        return static_cast<T>(kSigmaFloor) +
               diffcore::kernels::softplus_scalar(static_cast<T>(raw + sigma_offset));
    }
    NodeId mu_node(Tape<T>& tape, NodeId raw_row) const {
        return tape.add_scalar(tape.scale(raw_row, mu_out_scale), mu_ref);
    }
    T mu_plain(T raw) const { return mu_ref + mu_out_scale * raw; }
};

// Clearing-implied return for quadratic costs (any N): the cross-agent mean
// of gamma_n * sigma * (sigma*phi_n + xi_n*B).
template <typename T>
T mu_quadratic_clearing(T sigma, const T* positions, T B, const Roster& roster,
                        const MarketConfig& cfg) {
    if (cfg.q != 2.0) throw ConfigError("mu_quadratic_clearing: requires q = 2");
    T acc = T(0);
    for (size_t n = 0; n < roster.size(); ++n)
        acc += static_cast<T>(roster[n].gamma) * sigma *
               (sigma * positions[n] + static_cast<T>(roster[n].xi) * B);
    return acc / static_cast<T>(roster.size());
}

// Two-agent version valid for any power cost; same averaging with N = 2.
template <typename T>
T mu_two_agent_power(T sigma, T phi1, T phi2, T B, const Roster& roster,
                     const MarketConfig& cfg) {
    if (roster.size() != 2) throw ConfigError("mu_two_agent_power: requires N = 2");
    (void)cfg;
    const T t1 = static_cast<T>(roster[0].gamma) * sigma *
                 (sigma * phi1 + static_cast<T>(roster[0].xi) * B);
    const T t2 = static_cast<T>(roster[1].gamma) * sigma *
                 (sigma * phi2 + static_cast<T>(roster[1].xi) * B);
    return (t1 + t2) / T(2);
}

}  // namespace eqrgan::model
