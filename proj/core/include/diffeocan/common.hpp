#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace diffeocan {

// Malformed external input: bad file headers, out-of-range config values,
// truncated streams.  The CLI maps this to exit code 2.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure at runtime: non-finite energies, degenerate maps.
// The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed, used to give each dataset sample or
// training step its own generator without correlated draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

// Deterministic generator with explicit float transforms so that draws do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // Uniform in [0, 1) with 24 bits of resolution.
  float uniform() {
    return static_cast<float>(eng_() >> 40) * 0x1p-24f;
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  // Box-Muller on (0, 1] draws; avoids log(0).
  float normal() {
    const float u1 =
        (static_cast<float>(eng_() >> 40) + 1.0f) * 0x1p-24f;
    const float u2 = static_cast<float>(eng_() >> 40) * 0x1p-24f;
    const float r = std::sqrt(-2.0f * std::log(u1));
    return r * std::cos(6.28318530717958647692f * u2);
  }

  float normal(float mean, float stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace diffeocan
