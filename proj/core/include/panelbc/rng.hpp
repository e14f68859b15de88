#pragma once

#include <cstdint>
#include <random>

namespace panelbc {

// Deterministic random stream. Independent substreams are derived from a
// (seed, stream) pair so that parallel workers never share state and results
// do not depend on scheduling.
class Rng {
 public:
  using Engine = std::mt19937_64;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Engine& engine() { return engine_; }

  double uniform();           // in (0, 1)
  double normal();            // standard normal
  double logistic();          // standard logistic
  std::uint64_t poisson(double mean);
  bool bernoulli(double p);

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Rng substream(std::uint64_t stream) const { return Rng(seed_, mix(stream_, stream)); }

  std::uint64_t seed() const { return seed_; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace panelbc
