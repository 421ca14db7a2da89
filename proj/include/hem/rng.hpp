#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hem {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hierarchical stream derivation: root seed -> path of labels -> child seed.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = splitmix64(root);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

/// Stream tags for derive_seed paths.
enum class Stream : std::uint64_t { init = 1, collect = 2, train = 3, eval = 4, misc = 5 };

/// Random source passed explicitly through every stochastic operation.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  Rng child(std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(engine_(), path));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  engine_type& engine() { return engine_; }

 private:
  engine_type engine_;
};

inline Rng stream_rng(std::uint64_t seed, Stream tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(seed, {static_cast<std::uint64_t>(tag), a, b}));
}

}  // namespace hem
