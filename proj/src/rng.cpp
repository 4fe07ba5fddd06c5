#include "cstn/rng.hpp"

#include <cmath>

#include "cstn/errors.hpp"

namespace cstn {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RandomStream::RandomStream(std::uint64_t seed) : state_(seed) {
  // Warm up so nearby seeds decorrelate immediately.
  for (int i = 0; i < 4; ++i) splitmix64(state_);
}

RandomStream RandomStream::derive(std::uint64_t root_seed, std::string_view name) {
  return RandomStream(root_seed ^ fnv1a64(name));
}

std::uint64_t RandomStream::next_u64() { return splitmix64(state_); }

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::int64_t RandomStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double RandomStream::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

double RandomStream::gamma_unit_mean(int shape) {
  if (shape <= 0) throw ValidationError("gamma_unit_mean: shape must be positive");
  double sum = 0.0;
  for (int i = 0; i < shape; ++i) {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    sum += -std::log(u);
  }
  return sum / static_cast<double>(shape);
}

}  // namespace cstn
