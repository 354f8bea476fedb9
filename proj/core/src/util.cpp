#include "codesearch/util.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace codesearch {

uint64_t Rng::uniform(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::uniform: bound must be > 0");
  // Reject the tail that would bias the modulus.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % bound;
}

double Rng::uniform_real() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1, u2;
  do {
    u1 = uniform_real();
  } while (u1 <= 0.0);
  u2 = uniform_real();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

double Rng::truncated_normal(double stddev) {
  double x;
  do {
    x = normal(0.0, stddev);
  } while (std::abs(x) > 2.0 * stddev);
  return x;
}

uint64_t mix_seed(uint64_t base, uint64_t salt) {
  // splitmix64 finalizer over the combined value.
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t base, uint64_t salt_a, uint64_t salt_b) {
  return mix_seed(mix_seed(base, salt_a), salt_b);
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

void parallel_chunks(size_t n, unsigned threads,
                     const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  if (threads <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  const size_t workers = std::min<size_t>(threads, n);
  const size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace codesearch
