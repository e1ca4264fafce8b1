#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gdpa {

// All randomness in the library flows through Rng so that a run is fully
// determined by its seed. Distribution helpers are hand-rolled because the
// std distributions are not specified bit-exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() {
    uint64_t hi = gen_();
    uint64_t lo = gen_();
    return (hi << 32) | lo;
  }

  // Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; deterministic given the stream.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double k = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * k;
    have_spare_ = true;
    return u * k;
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Derives an independent stream; used to keep e.g. shuffling and noise
  // draws from interfering with each other.
  Rng fork(uint64_t salt) {
    uint64_t s = next_u64() ^ (salt * 0x9e3779b97f4a7c15ull);
    return Rng(s);
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gdpa
