#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "eqrgan/common.hpp"
#include "eqrgan/matrix.hpp"

namespace eqrgan::paths {

using diffcore::Matrix;

struct TimeGrid {
    int K;
    double T;

    double dt() const { return T / K; }
    // Knots are computed as k*T/K, never by accumulation, so t(K) == T exactly.
    double t(int k) const { return k * T / K; }
};

// Seeded batch of Brownian increments and accumulated levels. Increments are
// iid Normal(0, dt); levels start at 0 and are exact prefix sums.
template <typename T>
struct PathBatch {
    int batch = 0;
    int K = 0;
    int d = 1;
    T dt = T(0);
    uint64_t seed = 0;
    Matrix<T> dB;  // batch x K
    Matrix<T> B;   // batch x (K+1)

    const T* increments(int path) const { return dB.row(path); }
    const T* levels(int path) const { return B.row(path); }
};

template <typename T>
PathBatch<T> sample(uint64_t seed, int batch, const TimeGrid& grid, int d = 1) {
    if (batch < 1) throw UsageError("paths::sample: batch must be at least 1");
    if (d != 1) throw UsageError("paths::sample: only d=1 is supported");
    PathBatch<T> out;
    out.batch = batch;
    out.K = grid.K;
    out.d = d;
    out.dt = static_cast<T>(grid.dt());
    out.seed = seed;
    out.dB = Matrix<T>(batch, grid.K);
    out.B = Matrix<T>(batch, grid.K + 1);
    const double sqrt_dt = std::sqrt(grid.dt());
    for (int p = 0; p < batch; ++p) {
        Rng rng(seed_mix(seed, 0x5054u, static_cast<uint64_t>(p)));
        T* inc = out.dB.row(p);
        T* lev = out.B.row(p);
        lev[0] = T(0);
        for (int k = 0; k < grid.K; ++k) {
            inc[k] = static_cast<T>(sqrt_dt * rng.normal());
            lev[k + 1] = lev[k] + inc[k];
        }
    }
    return out;
}

// x + drift*dt + diffusion*dB
template <typename T>
T euler_step(T x, T drift, T diffusion, T dB, T dt) {
    return x + drift * dt + diffusion * dB;
}

template <typename T>
void dump_csv(const PathBatch<T>& pb, const std::string& file) {
    std::ofstream os(file);
    if (!os) throw IoError("paths::dump_csv: cannot open " + file);
    os << "path,k,B,dB\n";
    for (int p = 0; p < pb.batch; ++p) {
        for (int k = 0; k <= pb.K; ++k) {
            os << p << ',' << k << ',' << pb.B(p, k) << ','
               << (k < pb.K ? pb.dB(p, k) : T(0)) << '\n';
        }
    }
}

}  // namespace eqrgan::paths
