#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <vector>

#include "eqrgan/discriminator.hpp"
#include "eqrgan/metrics.hpp"

namespace eqrgan::model {

enum class Precision { F32, F64 };

struct TrainConfig {
    int rounds = 50;
    int epochs = 20;      // generator epochs per round
    int epochs_dis = 0;   // discriminator epochs per round; 0 means epochs
    int batch = 256;
    double lr_gen = 1e-3;
    double lr_dis = 1e-3;
    double lr_dis_sigma_mult = 4.0;  // volatility head and S0 step scaling
    double lr_decay = 0.5;
    int lr_decay_every = 15;

    int dis_epochs() const { return epochs_dis > 0 ? epochs_dis : epochs; }
    diffcore::AdamHyper adam;
    uint64_t seed = 1;
    Precision precision = Precision::F32;
    int checkpoint_every = 10;
    Preference preference = Preference::Lq;
    MuMode mu_mode = MuMode::Implicit;
    NetConfig net;
};

struct TrainLogRow {
    int round = 0;
    char phase = 'g';
    int epoch = 0;
    double loss = 0.0;
    double clearing = 0.0;   // discriminator rows only
    double terminal = 0.0;   // discriminator rows only
    double sum_J = 0.0;
    double wall_ms = 0.0;
    uint64_t seed = 0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
};

template <typename T>
struct TrainResult {
    GeneratorParams<T> gen;
    DiscriminatorParams<T> dis;
    TrainLog log;
};

namespace detail {

constexpr uint64_t kGenPhase = 0x67656eull;
constexpr uint64_t kDisPhase = 0x646973ull;

template <typename T>
void freeze_round_one_stats(GeneratorParams<T>& gen, DiscriminatorParams<T>& dis,
                            diffcore::Adam<T>& opt_gen, diffcore::Adam<T>& opt_dis,
                            std::vector<std::vector<diffcore::InputStats<T>>>& gen_stats,
                            std::vector<std::vector<diffcore::InputStats<T>>>& dis_stats) {
    const int K = gen.K;
    auto reset_rewritten = [](diffcore::Adam<T>& opt, const diffcore::Mlp<T>& net) {
        opt.reset_slot(net.weight_slots[0]);
        opt.reset_slot(net.bias_slots[0]);
        if (net.has_skip()) {
            opt.reset_slot(net.skip_slot);
            opt.reset_slot(net.bias_slots.back());
        }
    };
    for (int n = 0; n < gen.N; ++n) {
        for (int k = 0; k <= K; ++k) {
            diffcore::InputStats<T> total(gen.in_dim());
            for (const auto& per_shard : gen_stats) total.merge(per_shard[n * (K + 1) + k]);
            std::vector<T> mean, inv_std;
            total.finalize(mean, inv_std);
            gen.nets[n][k].freeze_standardization(gen.store, mean, inv_std);
            reset_rewritten(opt_gen, gen.nets[n][k]);
        }
    }
    for (int k = 0; k <= K; ++k) {
        diffcore::InputStats<T> total(dis.in_dim());
        for (const auto& per_shard : dis_stats) total.merge(per_shard[k]);
        std::vector<T> mean, inv_std;
        total.finalize(mean, inv_std);
        if (dis.mode == MuMode::Implicit) {
            dis.mu_nets[k].freeze_standardization(dis.store, mean, inv_std);
            reset_rewritten(opt_dis, dis.mu_nets[k]);
        }
        dis.sigma_nets[k].freeze_standardization(dis.store, mean, inv_std);
        reset_rewritten(opt_dis, dis.sigma_nets[k]);
    }
    gen_stats.clear();
    dis_stats.clear();
}

}  // namespace detail

// The alternating outer loop: each round trains the generator for a block of
// epochs against the frozen discriminator, then the discriminator against
// the frozen generator. Fresh seeded increments every epoch; one optimizer
// step per epoch. Input standardization is frozen after round 1.
template <typename T>
TrainResult<T> train(
    const MarketConfig& cfg, const Roster& roster, const TrainConfig& tcfg,
    std::ostream* progress = nullptr,
    const std::function<void(int round, const GeneratorParams<T>&,
                             const DiscriminatorParams<T>&)>& on_checkpoint = {}) {
    if (tcfg.rounds < 1 || tcfg.epochs < 1 || tcfg.batch < 1)
        throw ConfigError("train: rounds, epochs and batch must all be at least 1");
    const auto violations = market::validate(cfg, roster);
    if (!violations.empty())
        throw ConfigError("train: invalid configuration: " +
                          market::violations_to_string(violations));
    if (tcfg.mu_mode == MuMode::KnownQuadratic && cfg.q != 2.0)
        throw ConfigError("train: known-mu quadratic mode requires q = 2");
    if (tcfg.mu_mode == MuMode::KnownTwoAgentPower && roster.size() != 2)
        throw ConfigError("train: known-mu two-agent mode requires N = 2");

    TrainResult<T> result{
        GeneratorParams<T>::create(cfg, roster, tcfg.net, tcfg.preference, tcfg.seed),
        DiscriminatorParams<T>::create(cfg, roster, tcfg.net, tcfg.mu_mode, tcfg.seed),
        {}};
    GeneratorParams<T>& gen = result.gen;
    DiscriminatorParams<T>& dis = result.dis;
    diffcore::Adam<T> opt_gen(gen.store, tcfg.adam);
    diffcore::Adam<T> opt_dis(dis.store, tcfg.adam);

    const paths::TimeGrid grid{cfg.K, cfg.T};
    const int n_shards = static_cast<int>(make_shards(tcfg.batch).size());
    const std::vector<double> dis_lr_scale = dis.lr_scales(tcfg.lr_dis_sigma_mult);
    EpochWorkspace<T> ws;
    std::vector<std::vector<diffcore::InputStats<T>>> gen_stats, dis_stats;

    auto now = [] { return std::chrono::steady_clock::now(); };
    auto ms_since = [](auto t0) {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    };

    for (int round = 1; round <= tcfg.rounds; ++round) {
        const double decay =
            std::pow(tcfg.lr_decay, (round - 1) / std::max(1, tcfg.lr_decay_every));
        const bool collect = round == 1;
        if (collect) {
            gen_stats.assign(n_shards, std::vector<diffcore::InputStats<T>>(
                                           gen.N * (cfg.K + 1),
                                           diffcore::InputStats<T>(gen.in_dim())));
            dis_stats.assign(n_shards, std::vector<diffcore::InputStats<T>>(
                                           cfg.K + 1, diffcore::InputStats<T>(dis.in_dim())));
        }

        for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
            const uint64_t bseed = seed_mix(tcfg.seed, round, epoch, detail::kGenPhase);
            const auto pb = paths::sample<T>(bseed, tcfg.batch, grid);
            const auto t0 = now();
            GenEpochResult ge;
            try {
                ge = generator_epoch(gen, dis, cfg, roster, pb, ws,
                                     collect ? &gen_stats : nullptr);
                opt_gen.step(gen.store, ws.merged, tcfg.lr_gen * decay);
            } catch (const NumericalError& e) {
                throw TrainingDiagnostic(e.what(), round, epoch, "generator");
            }
            result.log.rows.push_back({round, 'g', epoch, ge.loss, 0.0, 0.0, ge.sum_J,
                                       ms_since(t0), bseed});
            if (progress)
                (*progress) << "round " << round << " gen epoch " << epoch << " loss "
                            << ge.loss << "\n";
        }

        for (int epoch = 1; epoch <= tcfg.dis_epochs(); ++epoch) {
            const uint64_t bseed = seed_mix(tcfg.seed, round, epoch, detail::kDisPhase);
            const auto pb = paths::sample<T>(bseed, tcfg.batch, grid);
            const auto t0 = now();
            DisEpochResult de;
            try {
                de = discriminator_epoch(dis, gen, cfg, roster, pb, ws,
                                         collect ? &dis_stats : nullptr);
                opt_dis.step(dis.store, ws.merged, tcfg.lr_dis * decay, &dis_lr_scale);
            } catch (const NumericalError& e) {
                throw TrainingDiagnostic(e.what(), round, epoch, "discriminator");
            }
            result.log.rows.push_back({round, 'd', epoch, de.loss, de.clearing_term,
                                       de.terminal_term, de.sum_J, ms_since(t0), bseed});
            if (progress)
                (*progress) << "round " << round << " dis epoch " << epoch << " loss "
                            << de.loss << "\n";
        }

        if (collect)
            detail::freeze_round_one_stats(gen, dis, opt_gen, opt_dis, gen_stats, dis_stats);
        if (on_checkpoint &&
            (round % std::max(1, tcfg.checkpoint_every) == 0 || round == tcfg.rounds))
            on_checkpoint(round, gen, dis);
    }
    return result;
}

struct StepStat {
    int k = 0;
    double t = 0.0;
    double mean_mu = 0.0;
    double mean_sigma = 0.0;
    double mean_clearing_sq = 0.0;
};

struct TrajectoryRow {
    int agent = 0;
    int path = 0;
    int k = 0;
    double X = 0.0;
    double phi = 0.0;
    double phidot = 0.0;
};

struct EvalDetail {
    std::vector<StepStat> steps;
    std::vector<TrajectoryRow> trajectories;  // captured when n_paths <= 64
};

// Fresh-batch Monte Carlo evaluation of a (generator, discriminator) pair:
// batch-mean objective, the clearing metric mean over steps and paths of
// (sum_n phidot)^2, mean squared terminal mismatch and the trained S0.
template <typename T>
EvalReport evaluate(const GeneratorParams<T>& gen, const DiscriminatorParams<T>& dis,
                    const MarketConfig& cfg, const Roster& roster, int n_paths, uint64_t seed,
                    EvalDetail* detail = nullptr) {
    if (n_paths < 1) throw UsageError("evaluate: need at least one path");
    const paths::TimeGrid grid{cfg.K, cfg.T};
    const auto pb = paths::sample<T>(seed, n_paths, grid);
    const auto shards = make_shards(n_paths);
    const int N = gen.N, K = gen.K;
    const T dt = pb.dt;
    const bool want_traj = detail && n_paths <= 64;

    struct ShardAccum {
        double J = 0.0, clearing = 0.0, terminal = 0.0;
        std::vector<double> mu_sum, sigma_sum, clear_sum;
        std::vector<TrajectoryRow> traj;
    };
    std::vector<ShardAccum> acc(shards.size());

    parallel_shards(static_cast<int>(shards.size()), [&](int s) {
        const Shard& sh = shards[s];
        const int b = sh.count;
        AgentPaths<T> ap;
        roll_agents_plain(gen, cfg, roster, pb, sh, ap);
        ShardAccum& a = acc[s];
        a.mu_sum.assign(K + 1, 0.0);
        a.sigma_sum.assign(K + 1, 0.0);
        a.clear_sum.assign(K + 1, 0.0);
        std::vector<T> S(b, dis.S0());
        Matrix<T> features(N + 1, b), mu, sigma;
        std::vector<const T*> pos_rows(N);
        for (int k = 0; k <= K; ++k) {
            fill_features(ap, pb, sh, k, features);
            for (int n = 0; n < N; ++n) pos_rows[n] = ap.phi[n].row(k);
            dis_eval_plain(dis, cfg, roster, k, features, pos_rows, mu, sigma);
            for (int j = 0; j < b; ++j) {
                T rate_sum = T(0);
                for (int n = 0; n < N; ++n) rate_sum += ap.phidot[n](k, j);
                const double rs = static_cast<double>(rate_sum);
                a.clearing += rs * rs;
                a.clear_sum[k] += rs * rs;
                a.mu_sum[k] += static_cast<double>(mu(0, j));
                a.sigma_sum[k] += static_cast<double>(sigma(0, j));
                if (k < objective_knots(K))
                    for (int n = 0; n < N; ++n)
                        a.J += static_cast<double>(
                            lq_objective_increment(ap.phi[n](k, j), pb.B(sh.begin + j, k),
                                                   ap.phidot[n](k, j), mu(0, j), sigma(0, j),
                                                   roster[n], cfg) *
                            dt);
                if (k < K) S[j] += mu(0, j) * dt + sigma(0, j) * pb.dB(sh.begin + j, k);
            }
        }
        for (int j = 0; j < b; ++j) {
            const double mm = static_cast<double>(
                S[j] - market::terminal_dividend(pb.B(sh.begin + j, K), cfg));
            a.terminal += mm * mm;
        }
        if (want_traj)
            for (int n = 0; n < N; ++n)
                for (int j = 0; j < b; ++j)
                    for (int k = 0; k <= K; ++k)
                        a.traj.push_back({n, sh.begin + j, k,
                                          static_cast<double>(ap.X[n](k, j)),
                                          static_cast<double>(ap.phi[n](k, j)),
                                          static_cast<double>(ap.phidot[n](k, j))});
    });

    EvalReport r;
    r.n_paths = n_paths;
    r.seed = seed;
    r.S0 = static_cast<double>(dis.S0());
    if (detail) {
        detail->steps.assign(K + 1, {});
        detail->trajectories.clear();
    }
    for (const ShardAccum& a : acc) {
        r.sum_J += a.J;
        r.clearing_sq += a.clearing;
        r.terminal_sq += a.terminal;
        if (detail) {
            for (int k = 0; k <= K; ++k) {
                detail->steps[k].mean_mu += a.mu_sum[k];
                detail->steps[k].mean_sigma += a.sigma_sum[k];
                detail->steps[k].mean_clearing_sq += a.clear_sum[k];
            }
            detail->trajectories.insert(detail->trajectories.end(), a.traj.begin(),
                                        a.traj.end());
        }
    }
    r.sum_J /= n_paths;
    r.clearing_sq /= static_cast<double>(n_paths) * (K + 1);
    r.terminal_sq /= n_paths;
    if (detail)
        for (int k = 0; k <= K; ++k) {
            detail->steps[k].k = k;
            detail->steps[k].t = grid.t(k);
            detail->steps[k].mean_mu /= n_paths;
            detail->steps[k].mean_sigma /= n_paths;
            detail->steps[k].mean_clearing_sq /= n_paths;
        }
    return r;
}

}  // namespace eqrgan::model
