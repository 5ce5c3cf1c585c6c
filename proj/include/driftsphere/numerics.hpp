#pragma once

#include "driftsphere/types.hpp"

#include <array>
#include <cstdint>

namespace driftsphere {

// xoshiro256** seeded through splitmix64. Value type: copying an Rng copies
// the stream position, so two copies produce the same future draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal (Marsaglia polar method; the spare variate is cached).
  double normal();
  // Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape < 1 uses the
  // U^{1/shape} boost.
  double gamma(double shape);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // An independent generator for sub-stream `stream`, derived from this
  // generator's seed only (not its position).
  Rng derive(std::uint64_t stream) const;

  bool operator==(const Rng& other) const = default;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a seed and a stream index into a new 64-bit seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// ln Γ(x) for x > 0. Shift-up recurrence to x >= 15 followed by the Stirling
// series with Bernoulli terms through B_20.
double log_gamma(double x);

// ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a + b). Symmetric bit-for-bit.
double log_beta(double a, double b);

// ln I_order(x), modified Bessel function of the first kind. Power series for
// x <= 2 max(10, order); beyond that the Hankel large-argument series when
// order <= 16 and the Debye uniform expansion otherwise.
double log_bessel_i(double order, double x);

// ln |S^{d-1}| = ln(2 π^{d/2} / Γ(d/2)), for d >= 2.
double log_sphere_area(int d);

// Uniform draw on S^{d-1} (normalized standard Gaussian; re-drawn on an
// exactly-zero vector). d = 1 yields ±1.
UnitVector sample_uniform_sphere(int d, Rng& rng);

// Beta(a, b) draw via X/(X+Y) with X ~ Gamma(a), Y ~ Gamma(b).
double sample_beta(double a, double b, Rng& rng);

// Draws a standard Gaussian vector of length n.
Vector sample_gaussian(Eigen::Index n, Rng& rng);

}  // namespace driftsphere
