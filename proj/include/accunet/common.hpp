#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace accunet {

// Error taxonomy: shape/contract violations vs numeric (NaN/Inf) states.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivisibilityError : ShapeError {
  explicit DivisibilityError(const std::string& msg) : ShapeError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// SplitMix64. All randomness in the project flows through this generator so
// that seeded runs are bit-identical across stdlib implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return int(next_u64() % uint64_t(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller from two uniforms; deterministic given the seed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent substream, e.g. one per (epoch, sample).
  Rng substream(uint64_t stream) const {
    uint64_t z = state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDULL;
    z = (z ^ (z >> 32)) * 0xC4CEB9FE1A85EC53ULL;
    return Rng(z ^ (z >> 30));
  }

 private:
  uint64_t state_;
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  return z ^ (z >> 31);
}

}  // namespace accunet
