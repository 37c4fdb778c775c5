#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

#include "eqrgan/nets.hpp"
#include "eqrgan/oracle.hpp"
#include "eqrgan/paths.hpp"

namespace eqrgan::model {

// Work is cut into fixed-size shards regardless of the worker count, and all
// reductions merge shard results in shard order, so numbers do not depend on
// EQRGAN_THREADS.
constexpr int kShardPaths = 16;

struct Shard {
    int begin;
    int count;
};

inline std::vector<Shard> make_shards(int batch) {
    std::vector<Shard> shards;
    for (int b = 0; b < batch; b += kShardPaths)
        shards.push_back({b, std::min(kShardPaths, batch - b)});
    return shards;
}

inline int worker_count() {
    if (const char* env = std::getenv("EQRGAN_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return std::min(v, 256);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 6u));
}

template <typename Fn>
void parallel_shards(int n_shards, Fn&& fn) {
    const int workers = std::min(worker_count(), n_shards);
    if (workers <= 1) {
        for (int s = 0; s < n_shards; ++s) fn(s);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int s = next.fetch_add(1); s < n_shards; s = next.fetch_add(1)) fn(s);
        });
    for (std::thread& t : pool) t.join();
}

// Number of dt-weighted integrand knots; shared with the oracle so trained
// and classical objectives are directly comparable.
using oracle::objective_knots;

// LQ objective integrand phi*mu - (gamma/2)(phi*sigma + xi*B)^2 - G(phidot).
template <typename T>
T lq_objective_increment(T phi, T B, T phidot, T mu, T sigma, const AgentSpec& agent,
                         const MarketConfig& cfg) {
    const T expo = phi * sigma + static_cast<T>(agent.xi) * B;
    return phi * mu - static_cast<T>(0.5 * agent.gamma) * expo * expo -
           market::cost(phidot, static_cast<T>(cfg.lambda), static_cast<T>(cfg.q));
}

// d/dx H in the LQ case: mu - gamma*sigma*(phi*sigma + xi*B). The adjoint
// moves by +dHdx*dt per backward step and -dHdx*dt (+Z dB) per forward step.
template <typename T>
T lq_dHdx(T phi, T B, T mu, T sigma, const AgentSpec& agent) {
    return mu - static_cast<T>(agent.gamma) * sigma *
                    (phi * sigma + static_cast<T>(agent.xi) * B);
}

// d/da H in the LQ case: Y - lambda |a|^{q-1} sign(a); zero at the optimum.
template <typename T>
T lq_dHda(T Y, T a, const MarketConfig& cfg) {
    const T s = a > T(0) ? T(1) : (a < T(0) ? T(-1) : T(0));
    return Y - static_cast<T>(cfg.lambda) * std::pow(std::abs(a), static_cast<T>(cfg.q - 1.0)) * s;
}

// One forward Euler step of the adjoint pair (fast component, wealth
// component) under the LQ Hamiltonian; the wealth row's driver vanishes.
template <typename T>
void adjoint_forward_step(T& Y_fast, T& Y_wealth, T Z_fast, T Z_wealth, T phi, T B, T mu,
                          T sigma, const AgentSpec& agent, T dt, T dB) {
    const T dHdx_fast = lq_dHdx(phi, B, mu, sigma, agent) + Y_wealth * mu + Z_wealth * sigma;
    Y_fast += -dHdx_fast * dt + Z_fast * dB;
    Y_wealth += Z_wealth * dB;
}

// Frozen-policy trajectories of every agent over one shard: positions, fast
// variables and trading rates at each knot. Pure function of the generator
// and the driving noise; price dynamics never feed back into these in LQ.
template <typename T>
struct AgentPaths {
    int N = 0, K = 0, cols = 0;
    std::vector<Matrix<T>> phi;     // [agent] (K+1) x cols
    std::vector<Matrix<T>> X;       // [agent] (K+1) x cols
    std::vector<Matrix<T>> phidot;  // [agent] (K+1) x cols
    Matrix<T> features;             // scratch: (N+1) x cols, rebuilt per knot
};

template <typename T>
void roll_agents_plain(const GeneratorParams<T>& gen, const MarketConfig& cfg,
                       const Roster& roster, const paths::PathBatch<T>& pb,
                       const Shard& sh, AgentPaths<T>& out) {
    const int N = gen.N, K = gen.K, b = sh.count;
    const T dt = pb.dt;
    const double bg = market::bar_gamma(roster);
    out.N = N;
    out.K = K;
    out.cols = b;
    out.phi.assign(N, Matrix<T>(K + 1, b));
    out.X.assign(N, Matrix<T>(K + 1, b));
    out.phidot.assign(N, Matrix<T>(K + 1, b));
    Matrix<T> input(2, b);
    for (int n = 0; n < N; ++n) {
        const T phi0 = static_cast<T>(market::initial_position(roster[n], roster, cfg));
        for (int j = 0; j < b; ++j) {
            out.phi[n](0, j) = phi0;
            out.X[n](0, j) = phi0 - market::reference_position(
                                        roster[n], pb.B(sh.begin + j, 0), cfg, bg);
        }
    }
    for (int k = 0; k <= K; ++k) {
        for (int n = 0; n < N; ++n) {
            for (int j = 0; j < b; ++j) {
                input(0, j) = out.X[n](k, j);
                input(1, j) = pb.B(sh.begin + j, k);
            }
            Matrix<T> rate = gen.policy_plain(n, k, input);
            for (int j = 0; j < b; ++j) out.phidot[n](k, j) = rate(0, j);
            if (k < K) {
                for (int j = 0; j < b; ++j) {
                    const T next_phi = out.phi[n](k, j) + rate(0, j) * dt;
                    out.phi[n](k + 1, j) = next_phi;
                    out.X[n](k + 1, j) =
                        next_phi - market::reference_position(
                                       roster[n], pb.B(sh.begin + j, k + 1), cfg, bg);
                }
            }
        }
    }
}

// Discriminator features at one knot: rows X_1..X_N then B.
template <typename T>
void fill_features(const AgentPaths<T>& ap, const paths::PathBatch<T>& pb, const Shard& sh,
                   int k, Matrix<T>& features) {
    const int N = ap.N, b = ap.cols;
    if (features.rows != N + 1 || features.cols != b) features = Matrix<T>(N + 1, b);
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < b; ++j) features(n, j) = ap.X[n](k, j);
    for (int j = 0; j < b; ++j) features(N, j) = pb.B(sh.begin + j, k);
}

// Plain (mu, sigma) at one knot under the discriminator's mode routing.
template <typename T>
void dis_eval_plain(const DiscriminatorParams<T>& dis, const MarketConfig& cfg,
                    const Roster& roster, int k, const Matrix<T>& features,
                    const std::vector<const T*>& positions, Matrix<T>& mu, Matrix<T>& sigma) {
    const int b = features.cols;
    Matrix<T> sigma_raw = dis.sigma_nets[k].apply_plain(dis.store, features);
    if (mu.cols != b || mu.rows != 1) mu = Matrix<T>(1, b);
    if (sigma.cols != b || sigma.rows != 1) sigma = Matrix<T>(1, b);
    for (int j = 0; j < b; ++j) sigma(0, j) = dis.sigma_plain(sigma_raw(0, j));
    if (dis.mode == MuMode::Implicit) {
        Matrix<T> mu_raw = dis.mu_nets[k].apply_plain(dis.store, features);
        for (int j = 0; j < b; ++j) mu(0, j) = dis.mu_plain(mu_raw(0, j));
        return;
    }
    std::vector<T> pos(roster.size());
    for (int j = 0; j < b; ++j) {
        const T B = features(static_cast<int>(roster.size()), j);
        for (size_t n = 0; n < roster.size(); ++n) pos[n] = positions[n][j];
        mu(0, j) = dis.mode == MuMode::KnownQuadratic
                       ? mu_quadratic_clearing(sigma(0, j), pos.data(), B, roster, cfg)
                       : mu_two_agent_power(sigma(0, j), pos[0], pos[1], B, roster, cfg);
    }
}

}  // namespace eqrgan::model
