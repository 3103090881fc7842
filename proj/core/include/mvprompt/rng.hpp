#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "mvprompt/tensor.hpp"

namespace mvp {

std::uint64_t fnv1a(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

/// Per-stage seed: every consumer of randomness asks for its own stream
/// by name, so adding a stage never shifts the draws of another one.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  int uniform_int(int lo, int hi);  // inclusive

  void fill_normal(std::span<double> out, double scale = 1.0);
  Mat normal_matrix(int rows, int cols, double scale = 1.0);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace mvp
