#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace deeplight {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, so the raw bit stream is reproducible everywhere; the
// distribution transforms below are hand-rolled because the std::*
// distribution algorithms are implementation-defined and would break
// fixtures across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0, 1). 53-bit mantissa, so every draw is exact in double.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64 and
  // keeps the draw count per call fixed, which matters for reproducibility.
  std::uint64_t uniform_int(std::uint64_t n) { return engine_() % n; }

  // Box-Muller. The spare value is cached so consecutive calls cost one
  // pair of uniforms per two normals.
  double normal(double mean = 0.0, double stdev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stdev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stdev * r * std::cos(theta);
  }

  double lognormal(double mu, double sigma) {
    return std::exp(normal(mu, sigma));
  }

  // Knuth's product method. Fine for the small rates used here; not meant
  // for lambda in the hundreds.
  std::uint64_t poisson(double lambda) {
    const double limit = std::exp(-lambda);
    double prod = uniform();
    std::uint64_t k = 0;
    while (prod > limit) {
      prod *= uniform();
      ++k;
    }
    return k;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace deeplight
