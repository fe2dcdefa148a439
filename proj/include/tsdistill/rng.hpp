#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cmath>
#include <vector>

namespace tsdistill {

// Splittable counter-based generator (splitmix64 core). Every stochastic
// choice in the project draws from a stream derived from (master seed, path),
// so runs reproduce bit-exactly from one seed regardless of thread count.
//
// A stream is (key, counter). Draws advance the counter only; split() derives
// an independent child key from the immutable parent key, so the set of child
// streams does not depend on how many values the parent has produced.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x5bf0'363e'7d4e'a87bULL)) {}

  Rng split(uint64_t route) const {
    Rng child(0);
    child.key_ = mix(key_ ^ (mix(route + 0x9e37'79b9'7f4a'7c15ULL) | 1ULL));
    child.counter_ = 0;
    child.has_spare_ = false;
    return child;
  }

  uint64_t next_u64() {
    counter_ += 0x9e37'79b9'7f4a'7c15ULL;
    return mix(key_ + counter_);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int64_t uniform_int(int64_t n) {
    // rejection-free modulo bias is negligible for our n << 2^64, but keep it clean
    uint64_t bound = static_cast<uint64_t>(n);
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return static_cast<int64_t>(r % bound);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // standard normal via Box-Muller; spare value cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // normal truncated to [-2sigma, 2sigma], resampled
  double trunc_normal(double sigma) {
    for (;;) {
      double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * sigma;
    }
  }

  // distinct values from [0, n), order randomized (partial Fisher-Yates)
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    for (int64_t i = 0; i < k; ++i) {
      int64_t j = i + uniform_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  std::array<uint64_t, 4> state() const {
    return {key_, counter_, has_spare_ ? 1ULL : 0ULL,
            std::bit_cast<uint64_t>(spare_)};
  }
  void set_state(const std::array<uint64_t, 4>& s) {
    key_ = s[0];
    counter_ = s[1];
    has_spare_ = s[2] != 0;
    spare_ = std::bit_cast<double>(s[3]);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58'476d'1ce4'e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d0'49bb'1331'11ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tsdistill
