#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace rkd {

// splitmix64 step; used for seed derivation everywhere so that streams for
// (seed, index) pairs are decorrelated and reproducible across runs.
uint64_t splitmix64(uint64_t x);

// Derives a child seed from a parent seed and an index.
uint64_t mix_seed(uint64_t seed, uint64_t index);

// Deterministic random source. All sampling goes through explicit
// implementations instead of std::*_distribution so that a given seed yields
// the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform01();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Poisson; Knuth multiplication below lambda=30, normal approximation above.
  int poisson(double lambda);
  // Dirichlet(1,...,1): normalized unit exponentials.
  std::vector<double> dirichlet_ones(int k);
  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int>& v);

 private:
  std::mt19937_64 engine_;
};

}  // namespace rkd
