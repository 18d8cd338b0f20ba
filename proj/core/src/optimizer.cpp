// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/optimizer.hpp"

#include <cmath>

namespace difftune {

AdamW::AdamW(long n_params, Opts opts) : opts_(opts) {
  if (n_params < 0) throw ConfigError("adamw: negative parameter count");
  if (!(opts_.lr > 0.0)) throw ConfigError("adamw: lr must be > 0");
  if (!(opts_.beta1 >= 0.0 && opts_.beta1 < 1.0))
    throw ConfigError("adamw: beta1 outside [0,1)");
  if (!(opts_.beta2 >= 0.0 && opts_.beta2 < 1.0))
    throw ConfigError("adamw: beta2 outside [0,1)");
  if (!(opts_.eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
  if (opts_.weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
  m_ = Vec::Zero(n_params);
  v_ = Vec::Zero(n_params);
}

void AdamW::step(Vec& params, const Vec& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw ConfigError("adamw: parameter/gradient size mismatch");
  if (!grad.allFinite()) throw NumericError("adamw: non-finite gradient");
  ++t_;
  m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
  v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opts_.beta1, t_);
  const double c2 = 1.0 - std::pow(opts_.beta2, t_);
  params.array() -= opts_.lr * ((m_.array() / c1) / ((v_.array() / c2).sqrt() + opts_.eps) +
                                opts_.weight_decay * params.array());
}

} // namespace difftune
