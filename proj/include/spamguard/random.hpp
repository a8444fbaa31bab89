#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace spamguard {

// Every draw comes from a generator keyed by the run seed and the identity of the decision
// (which message, which host, which minute). A decision therefore does not depend on how many
// other draws happened before it, which keeps paired runs comparable.

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// SplitMix64 stream; cheap to construct, so a fresh one is keyed for every decision.
class KeyedRng {
 public:
  KeyedRng(std::uint64_t seed, std::initializer_list<std::uint64_t> key) : state_(mix64(seed)) {
    for (auto k : key) state_ = mix64(state_ ^ k);
  }

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    return span == 0 ? next() : lo + next() % span;
  }

  bool chance(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace spamguard
