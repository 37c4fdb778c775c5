#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace eqrgan {

// Error taxonomy shared across modules. The CLI maps these to exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss/gradient during training, with the location attached.
struct TrainingDiagnostic : std::runtime_error {
    int round = 0;
    int epoch = 0;
    std::string phase;
    TrainingDiagnostic(const std::string& msg, int round_, int epoch_, std::string phase_)
        : std::runtime_error(msg + " (round " + std::to_string(round_) + ", epoch " +
                             std::to_string(epoch_) + ", phase " + phase_ + ")"),
          round(round_), epoch(epoch_), phase(std::move(phase_)) {}
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Order-sensitive mixing of stream coordinates into one 64-bit seed.
inline uint64_t seed_mix(uint64_t a, uint64_t b) {
    uint64_t s = a;
    (void)splitmix64(s);
    s ^= b + 0x9E3779B97F4A7C15ull + (s << 6) + (s >> 2);
    return splitmix64(s);
}
inline uint64_t seed_mix(uint64_t a, uint64_t b, uint64_t c) { return seed_mix(seed_mix(a, b), c); }
inline uint64_t seed_mix(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    return seed_mix(seed_mix(a, b, c), d);
}

// Deterministic generator used everywhere randomness is needed.
// Normals come from Box-Muller over splitmix uniforms; no libstdc++
// distribution objects so streams are identical across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in (0,1)
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace eqrgan
