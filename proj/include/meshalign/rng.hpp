#pragma once

#include <array>
#include <cstdint>

#include "meshalign/common.hpp"

namespace meshalign {

// Deterministic counter-friendly RNG (xoshiro256** seeded via splitmix64).
// All stochastic behaviour in the toolkit flows through this class so that
// runs are bitwise reproducible across platforms for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Independent stream for (base seed, stream id); used to make per-sample
  // randomness invariant to worker count and evaluation order.
  static Rng derive(std::uint64_t base_seed, std::uint64_t stream_id) {
    std::uint64_t x = base_seed;
    std::uint64_t a = splitmix64(x);
    x ^= 0x9e3779b97f4a7c15ull + stream_id;
    Rng r(a ^ splitmix64(x) ^ (stream_id * 0xbf58476d1ce4e5b9ull + 1));
    r.next_u64();
    return r;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws two uniforms per call, no cached state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // [0, n); n > 0. Lemire-style multiply-shift map (biasless enough, fixed).
  Index uniform_index(Index n) {
    MA_CHECK(n > 0, "uniform_index: n must be positive, got " << n);
    const unsigned __int128 m =
        static_cast<unsigned __int128>(next_u64()) * static_cast<std::uint64_t>(n);
    return static_cast<Index>(m >> 64);
  }

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};

}  // namespace meshalign
