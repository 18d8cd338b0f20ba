// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "difftune/common.hpp"

namespace difftune {

// Caller-owned random stream. Gaussian draws use Box-Muller on explicit
// 53-bit uniforms so a fixed seed reproduces the same stream regardless of
// the standard library's distribution implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  double uniform();               // [0, 1)
  double normal();                // N(0, 1)
  Vec normal_vec(int d);
  std::uint64_t uniform_int(std::uint64_t n);             // {0, ..., n-1}
  int categorical(const std::vector<double>& weights);    // weights sum to 1

  // Derived independent stream; deterministic in (seed, stream_id).
  Rng fork(std::uint64_t stream_id) const;

  std::uint64_t seed() const noexcept { return seed_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace difftune
