#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

namespace codesearch {

/// Deterministic random source. Wraps std::mt19937_64, whose output sequence
/// is fixed by the standard, and supplies its own distributions because the
/// std distributions (and std::shuffle) are implementation-defined and would
/// break reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, bound). Rejection sampled, bound must be > 0.
  uint64_t uniform(uint64_t bound);

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform_real();

  /// Box-Muller normal draw.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Normal draw resampled until within two standard deviations.
  double truncated_normal(double stddev);

  /// Fisher-Yates with this generator; identical order on every platform.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(uniform(i))]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Stable seed derivation for nested deterministic processes, e.g. one seed
/// per (base seed, fold, query).
uint64_t mix_seed(uint64_t base, uint64_t salt);
uint64_t mix_seed(uint64_t base, uint64_t salt_a, uint64_t salt_b);

uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(uint64_t value);

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one chunk
/// per worker. threads <= 1 runs inline on the calling thread.
void parallel_chunks(size_t n, unsigned threads,
                     const std::function<void(size_t, size_t)>& fn);

}  // namespace codesearch
