#include "robustkd/rng.hpp"

#include <cmath>

namespace rkd {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

double Rng::uniform01() {
  // 53 high bits -> double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

int Rng::uniform_int(int lo, int hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
  // Box-Muller, fresh pair each call; the sine component is discarded to keep
  // the stream layout independent of call history.
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::poisson(double lambda) {
  if (lambda <= 0.0) return 0;
  if (lambda < 30.0) {
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01();
    } while (p > limit);
    return k - 1;
  }
  const double v = normal(lambda, std::sqrt(lambda));
  return v < 0.0 ? 0 : static_cast<int>(std::lround(v));
}

std::vector<double> Rng::dirichlet_ones(int k) {
  std::vector<double> w(static_cast<size_t>(k));
  double sum = 0.0;
  for (auto& x : w) {
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    x = -std::log(u);
    sum += x;
  }
  for (auto& x : w) x /= sum;
  return w;
}

void Rng::shuffle(std::vector<int>& v) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = next_u64() % i;
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace rkd
