// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difftune/common.hpp"
#include "difftune/net.hpp"
#include "difftune/rng.hpp"

namespace difftune {

// Shared spec for prompt-conditional networks over diffusion states. The
// input is [x_t ; time features ; one-hot(z)]; time features are sin/cos
// pairs of t/T at frequencies 1, 2, 4, ... (time_features must be even).
struct CondNetSpec {
  int d = 0;
  int T = 0;
  int prompt_count = 1;
  int out_dim = 0;
  std::vector<int> hidden{64, 64};
  int time_features = 8;

  int in_dim() const { return d + time_features + prompt_count; }
  std::vector<int> widths() const;
  void validate() const;
};

class CondNet {
public:
  explicit CondNet(CondNetSpec spec);

  Vec encode(const Vec& x, int t, int z) const;
  Vec forward(const Vec& params, const Vec& x, int t, int z,
              Mlp::Trace* trace = nullptr) const;
  void backward(const Vec& params, const Mlp::Trace& trace, const Vec& dout,
                Vec& grad) const;
  Vec init_params(Rng& rng) const { return mlp_.init_params(rng); }

  const CondNetSpec& spec() const noexcept { return spec_; }
  const Mlp& mlp() const noexcept { return mlp_; }
  long param_count() const noexcept { return mlp_.param_count(); }

private:
  CondNetSpec spec_;
  Mlp mlp_;
};

// Noise-prediction network eps_theta(x_t, t, z); out_dim == d. Holds the
// current flat parameter vector and a version that training loops bump once
// per optimizer step.
struct Denoiser {
  CondNet net;
  Vec params;
  std::int64_t version = 0;

  Vec forward(const Vec& p, const Vec& x, int t, int z,
              Mlp::Trace* trace = nullptr) const {
    return net.forward(p, x, t, z, trace);
  }
  long param_count() const { return net.param_count(); }
  int d() const { return net.spec().d; }
  int T() const { return net.spec().T; }
  int prompt_count() const { return net.spec().prompt_count; }
};

Denoiser make_denoiser(int d, int T, int prompt_count,
                       std::vector<int> hidden = {64, 64},
                       int time_features = 8);
void init_denoiser(Denoiser& den, Rng& rng);

// All-zero weights with the output bias pinned, so eps(x,t,z) == value for
// every input. Test helper.
Denoiser constant_denoiser(int d, int T, int prompt_count, const Vec& value);

// Frozen copy of a parameter vector at a given version (e.g. the pretrained
// anchor p_pre).
struct ParamSnapshot {
  std::int64_t version = 0;
  Vec params;
};

ParamSnapshot make_snapshot(const Denoiser& den);

// Checkpoint file: one JSON header line
//   {"arch": {...}, "d": .., "T": .., "prompt_count": .., "version": ..}
// followed by the flat parameter array as little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const Denoiser& den);
Denoiser load_checkpoint(const std::string& path);

// Accumulates flat gradients across samples of a minibatch.
struct GradAccumulator {
  Vec grads;
  long count = 0;

  explicit GradAccumulator(long n) : grads(Vec::Zero(n)) {}
  void reset() {
    grads.setZero();
    count = 0;
  }
  void note_sample() { ++count; }
  // Invariant check before the gradient is consumed.
  void ensure_finite() const;
};

// Rescales g in place to norm max_norm when above it; returns the pre-clip
// norm.
double clip_grad_norm(Vec& g, double max_norm);

} // namespace difftune
