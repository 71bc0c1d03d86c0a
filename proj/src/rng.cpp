#include "pbmrc/rng.hpp"

#include <cmath>

namespace pbmrc {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::split(std::uint64_t substream) const {
  return Rng(seed_, mix64(stream_ ^ mix64(substream + 0x5851f42d4c957f2dULL)));
}

std::uint64_t Rng::next_u64() {
  std::uint64_t z = mix64(seed_) ^ mix64(stream_ + 0xda3e39cb94b95bdbULL);
  return mix64(z + counter_++ * 0x9e3779b97f4a7c15ULL);
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  // modulo bias is negligible for the desk-scale ranges used here
  return next_u64() % n;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 1.0 / 9007199254740992.0;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

double Rng::truncated_normal(double stddev) {
  for (;;) {
    double z = normal();
    if (z >= -2.0 && z <= 2.0) return z * stddev;
  }
}

}  // namespace pbmrc
