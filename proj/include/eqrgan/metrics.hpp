#pragma once

#include <cstdint>

namespace eqrgan {

// One row of the evaluation table: total realized objective, mean squared
// market-clearing residual over steps and paths, mean squared terminal
// dividend mismatch, and the initial price.
struct EvalReport {
    double sum_J = 0.0;
    double clearing_sq = 0.0;
    double terminal_sq = 0.0;
    double S0 = 0.0;
    int n_paths = 0;
    uint64_t seed = 0;
};

}  // namespace eqrgan
