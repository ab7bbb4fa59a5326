#include "orpodistill/rng.hpp"

#include <cmath>

namespace orpod {

uint64_t Rng::uniform_int(uint64_t n) {
  if (n <= 1) return 0;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t stream_seed(uint64_t seed, std::string_view tag, uint64_t a,
                     uint64_t b, uint64_t c) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
  for (char ch : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(ch));
    h *= 0x100000001b3ULL;
  }
  uint64_t s = mix64(seed ^ h);
  s = mix64(s ^ mix64(a + 1));
  s = mix64(s ^ mix64(b + 2));
  s = mix64(s ^ mix64(c + 3));
  return s;
}

}  // namespace orpod
