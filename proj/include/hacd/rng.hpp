#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace hacd {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seeded generator with portable draws.
///
/// std::uniform_*_distribution are implementation-defined, so draws are
/// derived from raw mt19937_64 output to keep runs byte-identical across
/// standard libraries. Named sub-streams ("sbm", "init", "pairs") are
/// derived from one base seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng stream(std::uint64_t base_seed, std::string_view name) {
    return Rng(splitmix64(base_seed ^ fnv1a64(name)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); rejection sampling avoids modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string save() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hacd
