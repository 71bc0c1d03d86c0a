#pragma once

#include <cstdint>
#include <cstddef>

namespace pbmrc {

// Counter-based generator: output depends only on (seed, stream, counter),
// so the same call sequence is reproducible on any platform and independent
// of evaluation order elsewhere in the program.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  // New generator on an independent stream, leaving this one untouched.
  Rng split(std::uint64_t substream) const;

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();

  // Uniform integer in [0, n), n > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal (Box-Muller, two uniforms per call, no cached spare).
  double normal();

  // Normal(0, stddev) rejected outside +/- 2*stddev.
  double truncated_normal(double stddev);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace pbmrc
