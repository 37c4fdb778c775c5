#pragma once

#include <vector>

#include "eqrgan/rollout.hpp"

namespace eqrgan::model {

// Slot-indexed gradient buffers per shard plus the ordered merge target.
// Buffers persist across epochs to avoid reallocation.
template <typename T>
struct EpochWorkspace {
    std::vector<std::vector<Matrix<T>>> shard_grads;
    std::vector<Matrix<T>> merged;

    void prepare(int n_shards, int n_slots) {
        if (static_cast<int>(merged.size()) != n_slots) {
            // buffers belonged to a different store; drop the stale shapes
            shard_grads.clear();
            merged.clear();
        }
        shard_grads.resize(n_shards);
        for (auto& g : shard_grads) {
            g.resize(n_slots);
            for (auto& m : g) m.set_zero();
        }
        merged.resize(n_slots);
        for (auto& m : merged) m.set_zero();
    }

    void merge_in_order() {
        for (const auto& g : shard_grads)
            for (size_t s = 0; s < g.size(); ++s) {
                if (g[s].empty()) continue;
                if (!merged[s].same_shape(g[s])) merged[s] = Matrix<T>::zeros(g[s].rows, g[s].cols);
                for (size_t i = 0; i < g[s].size(); ++i) merged[s].a[i] += g[s].a[i];
            }
    }
};

struct GenEpochResult {
    double loss = 0.0;
    double sum_J = 0.0;  // batch mean of the summed objectives
};

namespace detail {

struct ShardBuild {
    NodeId root = -1;
    double j_value = 0.0;  // shard sum of sum_n J_n (values only)
};

// One shard of the LQ generator pass: unroll every agent jointly, consume
// the discriminator as a frozen callback, and return the shard's loss
// contribution sum(-sum_n J_n)/batch as the backward root.
template <typename T>
ShardBuild lq_generator_shard(Tape<T>& tape, const GeneratorParams<T>& gen,
                          const DiscriminatorParams<T>& dis, const MarketConfig& cfg,
                          const Roster& roster, const paths::PathBatch<T>& pb,
                          const Shard& sh, int batch_total,
                          std::vector<diffcore::InputStats<T>>* stats) {
    const int N = gen.N, K = gen.K, b = sh.count;
    const T dt = pb.dt;
    const double bg = market::bar_gamma(roster);

    std::vector<NodeId> phi(N), X(N), J(N, -1);
    for (int n = 0; n < N; ++n) {
        const T phi0 = static_cast<T>(market::initial_position(roster[n], roster, cfg));
        phi[n] = tape.constant(Matrix<T>::full(1, b, phi0));
        Matrix<T> x0(1, b);
        for (int j = 0; j < b; ++j)
            x0(0, j) = phi0 - market::reference_position(roster[n], pb.B(sh.begin + j, 0),
                                                         cfg, bg);
        X[n] = tape.constant(std::move(x0));
    }

    Matrix<T> features(N + 1, b), mu_val, sigma_val;
    std::vector<const T*> pos_rows(N);
    Matrix<T> B_row(1, b);

    for (int k = 0; k <= K; ++k) {
        for (int j = 0; j < b; ++j) B_row(0, j) = pb.B(sh.begin + j, k);
        NodeId B_c = tape.constant(B_row);

        // Reinforcement link: price dynamics from the frozen discriminator,
        // evaluated on current state values and detached from the tape.
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < b; ++j) features(n, j) = tape.val(X[n])(0, j);
        for (int j = 0; j < b; ++j) features(N, j) = B_row(0, j);
        for (int n = 0; n < N; ++n) pos_rows[n] = tape.val(phi[n]).row(0);
        dis_eval_plain(dis, cfg, roster, k, features, pos_rows, mu_val, sigma_val);
        NodeId mu_c = tape.constant(mu_val);
        NodeId sigma_c = tape.constant(sigma_val);

        for (int n = 0; n < N; ++n) {
            if (stats) {
                Matrix<T> in_obs(2, b);
                for (int j = 0; j < b; ++j) {
                    in_obs(0, j) = tape.val(X[n])(0, j);
                    in_obs(1, j) = B_row(0, j);
                }
                (*stats)[n * (K + 1) + k].observe(in_obs);
            }
            NodeId input = tape.concat_rows(X[n], B_c);
            NodeId rate = gen.policy_node(tape, n, k, input);
            if (k < objective_knots(K)) {
                NodeId xiB = tape.scale(B_c, static_cast<T>(roster[n].xi));
                NodeId expo = tape.add(tape.mul(phi[n], sigma_c), xiB);
                NodeId inc = tape.sub(
                    tape.sub(tape.mul(phi[n], mu_c),
                             tape.scale(tape.square(expo), static_cast<T>(0.5 * roster[n].gamma))),
                    tape.scale(tape.abs_pow(rate, static_cast<T>(cfg.q)),
                               static_cast<T>(cfg.lambda / cfg.q)));
                J[n] = J[n] < 0 ? inc : tape.add(J[n], inc);
            }
            if (k < K) {
                phi[n] = tape.add(phi[n], tape.scale(rate, dt));
                Matrix<T> bar(1, b);
                for (int j = 0; j < b; ++j)
                    bar(0, j) = market::reference_position(
                        roster[n], pb.B(sh.begin + j, k + 1), cfg, bg);
                X[n] = tape.sub(phi[n], tape.constant(std::move(bar)));
            }
        }
    }

    NodeId total = -1;
    for (int n = 0; n < N; ++n) {
        NodeId jn = tape.sum_all(tape.scale(J[n], dt));
        total = total < 0 ? jn : tape.add(total, jn);
    }
    ShardBuild out;
    out.j_value = static_cast<double>(tape.val(total)(0, 0));
    out.root = tape.scale(total, static_cast<T>(-1.0 / batch_total));
    return out;
}

// General-mode shard: state (fast deviation, wealth), controls plus adjoint
// volatility rows from the nets, adjoint simulated forward from trainable
// y0, and the terminal adjoint mismatch added to the loss.
template <typename T>
ShardBuild general_generator_shard(Tape<T>& tape, const GeneratorParams<T>& gen,
                               const DiscriminatorParams<T>& dis, const MarketConfig& cfg,
                               const Roster& roster, const paths::PathBatch<T>& pb,
                               const Shard& sh, int batch_total) {
    const int N = gen.N, K = gen.K, b = sh.count;
    const T dt = pb.dt;
    const double bg = market::bar_gamma(roster);

    NodeId ones = tape.constant(Matrix<T>::full(1, b, T(1)));
    std::vector<NodeId> fast(N), W(N), phi(N), J(N, -1), Y1(N), Y2(N);
    for (int n = 0; n < N; ++n) {
        const T phi0 = static_cast<T>(market::initial_position(roster[n], roster, cfg));
        Matrix<T> x0(1, b);
        for (int j = 0; j < b; ++j)
            x0(0, j) = phi0 - market::reference_position(roster[n], pb.B(sh.begin + j, 0),
                                                         cfg, bg);
        fast[n] = tape.constant(std::move(x0));
        W[n] = tape.constant(Matrix<T>::full(1, b, static_cast<T>(roster[n].W0)));
        phi[n] = tape.constant(Matrix<T>::full(1, b, phi0));
        NodeId y0 = tape.param(gen.store[gen.y0_slots[n]], gen.y0_slots[n]);
        Y1[n] = tape.matmul(tape.slice_rows(y0, 0, 1), ones);
        Y2[n] = tape.matmul(tape.slice_rows(y0, 1, 1), ones);
    }

    Matrix<T> features(N + 1, b), mu_val, sigma_val, B_row(1, b), dB_row(1, b);
    std::vector<const T*> pos_rows(N);

    for (int k = 0; k <= K; ++k) {
        for (int j = 0; j < b; ++j) B_row(0, j) = pb.B(sh.begin + j, k);
        NodeId B_c = tape.constant(B_row);
        NodeId dB_c = -1;
        if (k < K) {
            for (int j = 0; j < b; ++j) dB_row(0, j) = pb.dB(sh.begin + j, k);
            dB_c = tape.constant(dB_row);
        }
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < b; ++j) features(n, j) = tape.val(fast[n])(0, j);
        for (int j = 0; j < b; ++j) features(N, j) = B_row(0, j);
        for (int n = 0; n < N; ++n) pos_rows[n] = tape.val(phi[n]).row(0);
        dis_eval_plain(dis, cfg, roster, k, features, pos_rows, mu_val, sigma_val);
        NodeId mu_c = tape.constant(mu_val);
        NodeId sigma_c = tape.constant(sigma_val);

        for (int n = 0; n < N; ++n) {
            NodeId input = tape.concat_rows(tape.concat_rows(fast[n], W[n]), B_c);
            NodeId raw = gen.nets[n][k].apply(tape, gen.store, input);
            NodeId rate = tape.scale(tape.slice_rows(raw, 0, 1), gen.out_scale[n]);
            NodeId Z1 = tape.slice_rows(raw, 1, 1);
            NodeId Z2 = tape.slice_rows(raw, 2, 1);
            NodeId xiB = tape.scale(B_c, static_cast<T>(roster[n].xi));
            NodeId expo = tape.add(tape.mul(phi[n], sigma_c), xiB);
            if (k < objective_knots(K)) {
                NodeId inc = tape.sub(
                    tape.sub(tape.mul(phi[n], mu_c),
                             tape.scale(tape.square(expo), static_cast<T>(0.5 * roster[n].gamma))),
                    tape.scale(tape.abs_pow(rate, static_cast<T>(cfg.q)),
                               static_cast<T>(cfg.lambda / cfg.q)));
                J[n] = J[n] < 0 ? inc : tape.add(J[n], inc);
            }
            if (k < K) {
                // dH/dx in the fast coordinate, including the wealth feedback
                NodeId dHlq = tape.sub(mu_c, tape.scale(tape.mul(sigma_c, expo),
                                                        static_cast<T>(roster[n].gamma)));
                NodeId dH = tape.add(tape.add(dHlq, tape.mul(Y2[n], mu_c)),
                                     tape.mul(Z2, sigma_c));
                Y1[n] = tape.add(Y1[n], tape.add(tape.scale(dH, -dt), tape.mul(Z1, dB_c)));
                Y2[n] = tape.add(Y2[n], tape.mul(Z2, dB_c));
                // wealth drift mu*fast - G(rate); diffusion fast*sigma + xi*B
                NodeId drift = tape.sub(tape.mul(mu_c, fast[n]),
                                        tape.scale(tape.abs_pow(rate, static_cast<T>(cfg.q)),
                                                   static_cast<T>(cfg.lambda / cfg.q)));
                NodeId diff = tape.add(tape.mul(fast[n], sigma_c), xiB);
                W[n] = tape.add(W[n], tape.add(tape.scale(drift, dt), tape.mul(diff, dB_c)));
                phi[n] = tape.add(phi[n], tape.scale(rate, dt));
                Matrix<T> bar(1, b);
                for (int j = 0; j < b; ++j)
                    bar(0, j) = market::reference_position(
                        roster[n], pb.B(sh.begin + j, k + 1), cfg, bg);
                fast[n] = tape.sub(phi[n], tape.constant(std::move(bar)));
            }
        }
    }

    NodeId total = -1;
    double j_value = 0.0;
    for (int n = 0; n < N; ++n) {
        NodeId j_sum = tape.sum_all(tape.scale(J[n], dt));
        j_value += static_cast<double>(tape.val(j_sum)(0, 0));
        NodeId penalty = tape.add(tape.sum_all(tape.square(Y1[n])),
                                  tape.sum_all(tape.square(Y2[n])));
        NodeId term = tape.add(tape.scale(j_sum, T(-1)), penalty);
        total = total < 0 ? term : tape.add(total, term);
    }
    ShardBuild out;
    out.j_value = j_value;
    out.root = tape.scale(total, static_cast<T>(1.0 / batch_total));
    return out;
}

}  // namespace detail

// One generator epoch over a fresh path batch: builds per-shard graphs with
// the discriminator frozen, runs backward, and merges gradients in shard
// order into ws.merged. The optimizer step belongs to the caller.
template <typename T>
GenEpochResult generator_epoch(const GeneratorParams<T>& gen, const DiscriminatorParams<T>& dis,
                               const MarketConfig& cfg, const Roster& roster,
                               const paths::PathBatch<T>& pb, EpochWorkspace<T>& ws,
                               std::vector<std::vector<diffcore::InputStats<T>>>* shard_stats = nullptr) {
    const auto shards = make_shards(pb.batch);
    ws.prepare(static_cast<int>(shards.size()), gen.store.size());
    std::vector<double> partial_loss(shards.size(), 0.0);
    std::vector<double> partial_J(shards.size(), 0.0);

    parallel_shards(static_cast<int>(shards.size()), [&](int s) {
        Tape<T> tape;
        auto* stats = shard_stats ? &(*shard_stats)[s] : nullptr;
        detail::ShardBuild built;
        if (gen.preference == Preference::Lq) {
            built = detail::lq_generator_shard(tape, gen, dis, cfg, roster, pb, shards[s],
                                               pb.batch, stats);
        } else {
            built = detail::general_generator_shard(tape, gen, dis, cfg, roster, pb, shards[s],
                                                    pb.batch);
        }
        partial_loss[s] = static_cast<double>(tape.val(built.root)(0, 0));
        partial_J[s] = built.j_value;
        tape.backward(built.root);
        tape.harvest_param_grads(ws.shard_grads[s]);
    });

    ws.merge_in_order();
    GenEpochResult r;
    for (double v : partial_loss) r.loss += v;
    for (double v : partial_J) r.sum_J += v;
    r.sum_J /= pb.batch;
    if (!std::isfinite(r.loss)) throw NumericalError("generator loss is not finite");
    return r;
}

}  // namespace eqrgan::model
