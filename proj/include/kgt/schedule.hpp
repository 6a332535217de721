#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace kgt {

/// Training-time rule for choosing k each step: a constant, or a uniform
/// draw from a set.
struct TopkSchedule {
  enum class Mode { Fixed, Random };

  Mode mode = Mode::Fixed;
  std::vector<std::size_t> values{16};

  static TopkSchedule fixed(std::size_t k);
  static TopkSchedule random(std::vector<std::size_t> set);

  /// ConfigError unless every k ≥ 1 and the set is non-empty.
  void validate() const;
  std::string to_string() const;

  friend bool operator==(const TopkSchedule&, const TopkSchedule&) = default;
};

/// Fixed: the constant. Random: uniform over the set.
std::size_t sample_k(const TopkSchedule& schedule, std::mt19937_64& rng);

}  // namespace kgt
