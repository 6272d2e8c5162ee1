#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "cflsim/errors.hpp"

// Deterministic randomness. All sampling transforms are implemented here
// instead of using std::*_distribution, whose output is implementation
// defined; with a fixed seed every draw is reproducible across standard
// libraries and platforms.

namespace cflsim {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream labels; a (seed, tag, a, b) tuple names one independent stream.
namespace stream_tag {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kClassMeans = 2;
inline constexpr std::uint64_t kTaskSamples = 3;
inline constexpr std::uint64_t kPartition = 4;
inline constexpr std::uint64_t kSelection = 5;
inline constexpr std::uint64_t kClientRound = 6;
inline constexpr std::uint64_t kPsm = 7;
inline constexpr std::uint64_t kFisher = 8;
}  // namespace stream_tag

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
  h = splitmix64(h ^ tag);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  static RngStream derive(std::uint64_t seed, std::uint64_t tag,
                          std::uint64_t a = 0, std::uint64_t b = 0) {
    return RngStream(derive_seed(seed, tag, a, b));
  }

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n) by rejection
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw NumericError("below(0) is undefined");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller (one value per call; deterministic)
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled by boosting.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw NumericError("gamma shape must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(std::max(u, 1e-300), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet(alpha * 1_k) as normalized gammas
  std::vector<double> dirichlet(double alpha, std::size_t k) {
    std::vector<double> p(k);
    double total = 0.0;
    for (auto& pi : p) {
      pi = gamma(alpha);
      total += pi;
    }
    if (total <= 0.0) {
      // all-underflow draw; fall back to a uniform vector
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
      return p;
    }
    for (auto& pi : p) pi /= total;
    return p;
  }

  // index into a probability vector
  std::size_t categorical(const std::vector<double>& p) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    return p.empty() ? 0 : p.size() - 1;
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(std::distance(first, last));
    for (std::uint64_t i = n; i > 1; --i) {
      std::swap(*(first + static_cast<std::ptrdiff_t>(i - 1)),
                *(first + static_cast<std::ptrdiff_t>(below(i))));
    }
  }

  // k distinct indices from [0, n), in draw order
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw NumericError("cannot sample more items than the population holds");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cflsim
