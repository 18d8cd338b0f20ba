// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/net.hpp"

#include <cmath>
#include <string>

namespace difftune {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ConfigError("mlp: widths needs input and output");
  for (int w : widths_)
    if (w < 1) throw ConfigError("mlp: widths entries must be positive");
  offsets_.resize(n_layers());
  long off = 0;
  for (int l = 0; l < n_layers(); ++l) {
    offsets_[l] = off;
    off += static_cast<long>(widths_[l + 1]) * (widths_[l] + 1);
  }
  param_count_ = off;
}

Vec Mlp::forward(const Vec& params, const Vec& input, Trace* trace) const {
  if (params.size() != param_count_)
    throw ConfigError("mlp: parameter vector has size " +
                      std::to_string(params.size()) + ", expected " +
                      std::to_string(param_count_));
  if (input.size() != widths_.front())
    throw ConfigError("mlp: input has size " + std::to_string(input.size()) +
                      ", expected " + std::to_string(widths_.front()));
  const int L = n_layers();
  if (trace) {
    trace->acts.resize(L);
    trace->acts[0] = input;
  }
  Vec a = input;
  for (int l = 0; l < L; ++l) {
    const int rows = widths_[l + 1], cols = widths_[l];
    Eigen::Map<const RowMat> W(params.data() + offsets_[l], rows, cols);
    Eigen::Map<const Vec> b(params.data() + offsets_[l] + static_cast<long>(rows) * cols, rows);
    Vec z = W * a + b;
    if (l + 1 < L) {
      a = z.array().tanh();
      if (trace) trace->acts[l + 1] = a;
    } else {
      a = std::move(z);
    }
  }
  return a;
}

void Mlp::backward(const Vec& params, const Trace& trace, const Vec& dout,
                   Vec& grad) const {
  if (grad.size() != param_count_)
    throw ConfigError("mlp: gradient buffer has wrong size");
  if (static_cast<int>(trace.acts.size()) != n_layers())
    throw ConfigError("mlp: trace does not match network depth");
  if (dout.size() != widths_.back())
    throw ConfigError("mlp: dout has wrong size");

  Vec delta = dout;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const int rows = widths_[l + 1], cols = widths_[l];
    const Vec& a = trace.acts[l];
    Eigen::Map<RowMat> gW(grad.data() + offsets_[l], rows, cols);
    Eigen::Map<Vec> gb(grad.data() + offsets_[l] + static_cast<long>(rows) * cols, rows);
    gW.noalias() += delta * a.transpose();
    gb.noalias() += delta;
    if (l > 0) {
      Eigen::Map<const RowMat> W(params.data() + offsets_[l], rows, cols);
      // tanh'(z) = 1 - tanh(z)^2, and a = tanh(z) is already cached.
      delta = (W.transpose() * delta).cwiseProduct(
          (1.0 - a.array().square()).matrix());
    }
  }
}

Vec Mlp::init_params(Rng& rng) const {
  Vec p = Vec::Zero(param_count_);
  for (int l = 0; l < n_layers(); ++l) {
    const int rows = widths_[l + 1], cols = widths_[l];
    const double a = std::sqrt(6.0 / (rows + cols));
    double* w = p.data() + offsets_[l];
    for (long i = 0; i < static_cast<long>(rows) * cols; ++i)
      w[i] = (2.0 * rng.uniform() - 1.0) * a;
    // biases stay zero
  }
  return p;
}

} // namespace difftune
