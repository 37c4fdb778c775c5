#pragma once

#include <vector>

#include "eqrgan/generator.hpp"

namespace eqrgan::model {

// Marginal-cost reconstruction of every agent's adjoint by the pathwise
// backward recursion Y_{n,k-1} = Y_{n,k} + (mu_k - gamma_n sigma_k (phi_{n,k}
// sigma_k + xi_n B_k)) dt from Y_{n,K} = 0, plus the implied clearing
// residual sum_n I_n(Y_{n,k}) at every knot. Plain-array version shared by
// tests and diagnostics; the training pass builds the same recursion on the
// tape.
template <typename T>
struct YBackwardResult {
    std::vector<Matrix<T>> Y;  // [agent] (K+1) x cols
    Matrix<T> clearing;        // (K+1) x cols, sum_n I_n
};

template <typename T>
YBackwardResult<T> backward_y_pass(const std::vector<Matrix<T>>& phi, const Matrix<T>& B,
                                   const Matrix<T>& mu, const Matrix<T>& sigma,
                                   const Roster& roster, const MarketConfig& cfg) {
    const int N = static_cast<int>(roster.size());
    const int K = B.rows - 1;
    const int b = B.cols;
    const T dt = static_cast<T>(cfg.T / K);
    YBackwardResult<T> out;
    out.Y.assign(N, Matrix<T>(K + 1, b));
    out.clearing = Matrix<T>(K + 1, b);
    std::vector<T> y(N, T(0));
    for (int j = 0; j < b; ++j) {
        for (int n = 0; n < N; ++n) y[n] = T(0);
        for (int k = K; k >= 0; --k) {
            T resid = T(0);
            for (int n = 0; n < N; ++n) {
                out.Y[n](k, j) = y[n];
                resid += market::marginal_cost_inverse(y[n], static_cast<T>(cfg.lambda),
                                                       static_cast<T>(cfg.q));
                if (k > 0)
                    y[n] += lq_dHdx(phi[n](k, j), B(k, j), mu(k, j), sigma(k, j), roster[n]) * dt;
            }
            out.clearing(k, j) = resid;
        }
    }
    return out;
}

// Terminal mismatch plus summed squared clearing residuals, batch meaned.
template <typename T>
double discriminator_loss(const Matrix<T>& S_terminal, const Matrix<T>& dividend,
                          const Matrix<T>& clearing) {
    const int b = S_terminal.cols;
    double acc = 0.0;
    for (int j = 0; j < b; ++j) {
        const double mm = static_cast<double>(S_terminal(0, j) - dividend(0, j));
        acc += mm * mm;
    }
    for (int k = 0; k < clearing.rows; ++k)
        for (int j = 0; j < b; ++j)
            acc += static_cast<double>(clearing(k, j)) * static_cast<double>(clearing(k, j));
    return acc / b;
}

struct DisEpochResult {
    double loss = 0.0;
    double terminal_term = 0.0;
    double clearing_term = 0.0;
    double sum_J = 0.0;
};

namespace detail {

// (mu_k, sigma_k) nodes under the mode routing; phi rows are frozen inputs.
template <typename T>
std::pair<NodeId, NodeId> dis_mu_sigma_nodes(Tape<T>& tape, const DiscriminatorParams<T>& dis,
                                             const MarketConfig& cfg, const Roster& roster,
                                             int k, NodeId features,
                                             const std::vector<NodeId>& phi_consts,
                                             NodeId B_c) {
    NodeId sigma = dis.sigma_node(tape, dis.sigma_nets[k].apply(tape, dis.store, features));
    if (dis.mode == MuMode::Implicit) {
        NodeId mu = dis.mu_node(tape, dis.mu_nets[k].apply(tape, dis.store, features));
        return {mu, sigma};
    }
    NodeId acc = -1;
    for (size_t n = 0; n < roster.size(); ++n) {
        NodeId xiB = tape.scale(B_c, static_cast<T>(roster[n].xi));
        NodeId expo = tape.add(tape.mul(sigma, phi_consts[n]), xiB);
        NodeId term = tape.scale(tape.mul(sigma, expo), static_cast<T>(roster[n].gamma));
        acc = acc < 0 ? term : tape.add(acc, term);
    }
    (void)cfg;
    NodeId mu = tape.scale(acc, static_cast<T>(1.0 / roster.size()));
    return {mu, sigma};
}

}  // namespace detail

// One discriminator epoch: agent paths advance under the frozen generator
// (plain arrays, no gradient), then the price forward pass, adjoint backward
// pass and loss are built on the tape so gradients reach S0 and every
// (mu, sigma) network.
template <typename T>
DisEpochResult discriminator_epoch(const DiscriminatorParams<T>& dis,
                                   const GeneratorParams<T>& gen, const MarketConfig& cfg,
                                   const Roster& roster, const paths::PathBatch<T>& pb,
                                   EpochWorkspace<T>& ws,
                                   std::vector<std::vector<diffcore::InputStats<T>>>* shard_stats = nullptr) {
    const auto shards = make_shards(pb.batch);
    ws.prepare(static_cast<int>(shards.size()), dis.store.size());
    const int N = dis.N, K = dis.K;
    const T dt = pb.dt;
    const T inv_power = static_cast<T>(1.0 / (cfg.q - 1.0));
    const T rate_gain = static_cast<T>(std::pow(1.0 / cfg.lambda, 1.0 / (cfg.q - 1.0)));
    std::vector<double> p_loss(shards.size()), p_term(shards.size()), p_clear(shards.size()),
        p_J(shards.size());

    parallel_shards(static_cast<int>(shards.size()), [&](int s) {
        const Shard& sh = shards[s];
        const int b = sh.count;
        AgentPaths<T> ap;
        roll_agents_plain(gen, cfg, roster, pb, sh, ap);

        Tape<T> tape;
        NodeId ones = tape.constant(Matrix<T>::full(1, b, T(1)));
        NodeId S = tape.matmul(tape.param(dis.store[dis.S0_slot], dis.S0_slot), ones);

        std::vector<NodeId> mu_k(K + 1), sigma_k(K + 1);
        std::vector<std::vector<NodeId>> phi_consts(K + 1, std::vector<NodeId>(N));
        std::vector<NodeId> B_consts(K + 1);
        Matrix<T> features(N + 1, b), B_row(1, b), dB_row(1, b);

        for (int k = 0; k <= K; ++k) {
            fill_features(ap, pb, sh, k, features);
            if (shard_stats) (*shard_stats)[s][k].observe(features);
            for (int j = 0; j < b; ++j) B_row(0, j) = pb.B(sh.begin + j, k);
            B_consts[k] = tape.constant(B_row);
            for (int n = 0; n < N; ++n) {
                Matrix<T> row(1, b);
                for (int j = 0; j < b; ++j) row(0, j) = ap.phi[n](k, j);
                phi_consts[k][n] = tape.constant(std::move(row));
            }
            auto [mu, sigma] = detail::dis_mu_sigma_nodes(tape, dis, cfg, roster, k,
                                                          tape.constant(features),
                                                          phi_consts[k], B_consts[k]);
            mu_k[k] = mu;
            sigma_k[k] = sigma;
            if (k < K) {
                for (int j = 0; j < b; ++j) dB_row(0, j) = pb.dB(sh.begin + j, k);
                NodeId dB_c = tape.constant(dB_row);
                S = tape.add(S, tape.add(tape.scale(mu, dt), tape.mul(sigma, dB_c)));
            }
        }

        Matrix<T> dividend(1, b);
        for (int j = 0; j < b; ++j)
            dividend(0, j) = market::terminal_dividend(pb.B(sh.begin + j, K), cfg);
        NodeId terminal = tape.sum_all(tape.square(tape.sub(S, tape.constant(dividend))));

        std::vector<NodeId> Y(N);
        for (int n = 0; n < N; ++n) Y[n] = tape.constant(Matrix<T>(1, b));
        NodeId clearing = -1;
        for (int k = K; k >= 0; --k) {
            NodeId resid = -1;
            for (int n = 0; n < N; ++n) {
                NodeId I = tape.scale(tape.sign_abs_pow(Y[n], inv_power), rate_gain);
                resid = resid < 0 ? I : tape.add(resid, I);
            }
            NodeId sq = tape.sum_all(tape.square(resid));
            clearing = clearing < 0 ? sq : tape.add(clearing, sq);
            if (k > 0) {
                for (int n = 0; n < N; ++n) {
                    NodeId xiB = tape.scale(B_consts[k], static_cast<T>(roster[n].xi));
                    NodeId expo = tape.add(tape.mul(sigma_k[k], phi_consts[k][n]), xiB);
                    NodeId driver = tape.sub(
                        mu_k[k],
                        tape.scale(tape.mul(sigma_k[k], expo), static_cast<T>(roster[n].gamma)));
                    Y[n] = tape.add(Y[n], tape.scale(driver, dt));
                }
            }
        }

        NodeId root = tape.scale(tape.add(terminal, clearing), static_cast<T>(1.0 / pb.batch));
        p_loss[s] = static_cast<double>(tape.val(root)(0, 0));
        p_term[s] = static_cast<double>(tape.val(terminal)(0, 0)) / pb.batch;
        p_clear[s] = static_cast<double>(tape.val(clearing)(0, 0)) / pb.batch;
        tape.backward(root);
        tape.harvest_param_grads(ws.shard_grads[s]);

        // realized objective under the current price field, for the log
        double j_acc = 0.0;
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < objective_knots(K); ++k)
                for (int j = 0; j < b; ++j)
                    j_acc += static_cast<double>(
                        lq_objective_increment(ap.phi[n](k, j), pb.B(sh.begin + j, k),
                                               ap.phidot[n](k, j), tape.val(mu_k[k])(0, j),
                                               tape.val(sigma_k[k])(0, j), roster[n], cfg) *
                        dt);
        p_J[s] = j_acc;
    });

    ws.merge_in_order();
    DisEpochResult r;
    for (size_t s = 0; s < shards.size(); ++s) {
        r.loss += p_loss[s];
        r.terminal_term += p_term[s];
        r.clearing_term += p_clear[s];
        r.sum_J += p_J[s];
    }
    r.sum_J /= pb.batch;
    if (!std::isfinite(r.loss)) throw NumericalError("discriminator loss is not finite");
    return r;
}

}  // namespace eqrgan::model
