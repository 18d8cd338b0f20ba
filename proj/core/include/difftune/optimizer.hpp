// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "difftune/common.hpp"

namespace difftune {

// Adam with decoupled weight decay. Default decay is 0, which makes the
// update an exact no-op for a zero gradient (0 / (sqrt(0) + eps) == 0).
class AdamW {
public:
  struct Opts {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(long n_params, Opts opts);

  void step(Vec& params, const Vec& grad);
  void set_lr(double lr) { opts_.lr = lr; }
  long steps_taken() const noexcept { return t_; }
  const Opts& opts() const noexcept { return opts_; }

private:
  Opts opts_;
  Vec m_, v_;
  long t_ = 0;
};

} // namespace difftune
