#pragma once

#include <cstdint>
#include <string_view>

namespace cstn {

// Deterministic generator hierarchy: one root seed, named sub-streams.
// Stream derivation hashes the stream name into the root seed, so adding a
// new consumer never perturbs the draws of existing ones.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}
  explicit RandomStream(std::uint64_t seed);

  static RandomStream derive(std::uint64_t root_seed, std::string_view name);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);
  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (explicit so results do not depend on the
  // standard library's distribution implementation).
  double normal();
  double normal(double mean, double stddev);
  // Gamma(shape, 1/shape): unit mean, integer shape, as a sum of exponentials.
  double gamma_unit_mean(int shape);

 private:
  std::uint64_t state_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace cstn
