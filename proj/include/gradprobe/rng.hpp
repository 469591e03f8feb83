#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gradprobe {

/// Seeded generator whose output is identical across standard libraries:
/// std::mt19937_64 is fully specified, the std distributions are not, so the
/// draws below are written out.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);
/// Sub-seed for a named stage.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
/// Sub-seed for an item index, so per-item streams do not depend on worker count.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace gradprobe
