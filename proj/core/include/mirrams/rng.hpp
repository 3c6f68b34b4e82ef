#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mirrams {

/// Seeded random stream with platform-stable draws. All randomness in a run
/// derives from one root seed via derive(), so replaying a manifest
/// reproduces every draw bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1), 53-bit resolution
  double normal();                        // N(0, 1), Box-Muller
  std::uint64_t below(std::uint64_t n);   // uniform in [0, n), rejection sampled

  /// Independent child stream; deterministic in (seed, stream).
  Rng derive(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t root_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

double normal_cdf(double x);
/// Quantile of the standard normal; alpha = 0 maps to -infinity.
double inverse_normal_cdf(double p);

}  // namespace mirrams
