// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "difftune/common.hpp"
#include "difftune/rng.hpp"

namespace difftune {

// Feedforward network with tanh hidden units and a linear output layer,
// evaluated against an explicit flat parameter vector. Backward is exact
// reverse mode (no tape: activations are cached in a Trace).
//
// Parameter layout, layer by layer: W (row-major, out x in), then b (out).
class Mlp {
public:
  // widths = [in, hidden..., out]; at least [in, out].
  explicit Mlp(std::vector<int> widths);

  struct Trace {
    // acts[0] is the input, acts[l] for l >= 1 the l-th hidden activation.
    std::vector<Vec> acts;
  };

  Vec forward(const Vec& params, const Vec& input, Trace* trace = nullptr) const;

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(output) = dout.
  void backward(const Vec& params, const Trace& trace, const Vec& dout,
                Vec& grad) const;

  Vec init_params(Rng& rng) const;  // Xavier-uniform weights, zero biases

  long param_count() const noexcept { return param_count_; }
  int in_dim() const noexcept { return widths_.front(); }
  int out_dim() const noexcept { return widths_.back(); }
  int n_layers() const noexcept { return static_cast<int>(widths_.size()) - 1; }
  const std::vector<int>& widths() const noexcept { return widths_; }

private:
  std::vector<int> widths_;
  std::vector<long> offsets_;  // flat offset of each layer's W
  long param_count_ = 0;
};

} // namespace difftune
