// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace difftune {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::vector<int> CondNetSpec::widths() const {
  std::vector<int> w;
  w.push_back(in_dim());
  for (int h : hidden) w.push_back(h);
  w.push_back(out_dim);
  return w;
}

void CondNetSpec::validate() const {
  if (d < 1) throw ConfigError("net spec: d must be >= 1");
  if (T < 1) throw ConfigError("net spec: T must be >= 1");
  if (prompt_count < 1 || prompt_count > 16)
    throw ConfigError("net spec: prompt_count must be in [1,16]");
  if (out_dim < 1) throw ConfigError("net spec: out_dim must be >= 1");
  if (time_features < 2 || time_features % 2 != 0)
    throw ConfigError("net spec: time_features must be even and >= 2");
  for (int h : hidden)
    if (h < 1) throw ConfigError("net spec: hidden widths must be positive");
}

CondNet::CondNet(CondNetSpec spec) : spec_(std::move(spec)), mlp_([&] {
  spec_.validate();
  return Mlp(spec_.widths());
}()) {}

Vec CondNet::encode(const Vec& x, int t, int z) const {
  if (x.size() != spec_.d)
    throw ConfigError("net: state has dimension " + std::to_string(x.size()) +
                      ", expected d=" + std::to_string(spec_.d));
  if (t < 1 || t > spec_.T)
    throw IndexError("net: step t=" + std::to_string(t) + " outside [1," +
                     std::to_string(spec_.T) + "]");
  if (z < 0 || z >= spec_.prompt_count)
    throw IndexError("net: prompt z=" + std::to_string(z) + " outside [0," +
                     std::to_string(spec_.prompt_count) + ")");
  Vec in = Vec::Zero(spec_.in_dim());
  in.head(spec_.d) = x;
  const double tau = static_cast<double>(t) / spec_.T;
  for (int k = 0; k < spec_.time_features / 2; ++k) {
    const double w = 2.0 * M_PI * static_cast<double>(1 << k) * tau;
    in[spec_.d + 2 * k] = std::sin(w);
    in[spec_.d + 2 * k + 1] = std::cos(w);
  }
  in[spec_.d + spec_.time_features + z] = 1.0;
  return in;
}

Vec CondNet::forward(const Vec& params, const Vec& x, int t, int z,
                     Mlp::Trace* trace) const {
  Vec out = mlp_.forward(params, encode(x, t, z), trace);
  if (!out.allFinite())
    throw NumericError("net: non-finite output at t=" + std::to_string(t) +
                       " (parameter norm " + std::to_string(params.norm()) + ")");
  return out;
}

void CondNet::backward(const Vec& params, const Mlp::Trace& trace,
                       const Vec& dout, Vec& grad) const {
  mlp_.backward(params, trace, dout, grad);
}

Denoiser make_denoiser(int d, int T, int prompt_count, std::vector<int> hidden,
                       int time_features) {
  CondNetSpec spec;
  spec.d = d;
  spec.T = T;
  spec.prompt_count = prompt_count;
  spec.out_dim = d;
  spec.hidden = std::move(hidden);
  spec.time_features = time_features;
  CondNet net(spec);
  Vec params = Vec::Zero(net.param_count());
  return Denoiser{std::move(net), std::move(params), 0};
}

void init_denoiser(Denoiser& den, Rng& rng) {
  den.params = den.net.init_params(rng);
}

Denoiser constant_denoiser(int d, int T, int prompt_count, const Vec& value) {
  if (value.size() != d)
    throw ConfigError("constant_denoiser: value must have dimension d");
  Denoiser den = make_denoiser(d, T, prompt_count, /*hidden=*/{});
  // Single affine layer with zero weights: output == bias.
  den.params.tail(d) = value;
  return den;
}

ParamSnapshot make_snapshot(const Denoiser& den) {
  return ParamSnapshot{den.version, den.params};
}

void save_checkpoint(const std::string& path, const Denoiser& den) {
  nlohmann::json header;
  header["arch"] = {{"hidden", den.net.spec().hidden},
                    {"time_features", den.net.spec().time_features}};
  header["d"] = den.net.spec().d;
  header["T"] = den.net.spec().T;
  header["prompt_count"] = den.net.spec().prompt_count;
  header["version"] = den.version;
  header["param_count"] = den.param_count();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("checkpoint: cannot open " + path + " for writing");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(den.params.data()),
            static_cast<std::streamsize>(den.params.size() * sizeof(double)));
  if (!out) throw ConfigError("checkpoint: short write to " + path);
}

Denoiser load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
  try {
    Denoiser den = make_denoiser(header.at("d").get<int>(),
                                 header.at("T").get<int>(),
                                 header.at("prompt_count").get<int>(),
                                 header.at("arch").at("hidden").get<std::vector<int>>(),
                                 header.at("arch").at("time_features").get<int>());
    den.version = header.at("version").get<std::int64_t>();
    const long n = header.at("param_count").get<long>();
    if (n != den.param_count())
      throw ConfigError("checkpoint: param_count does not match arch");
    in.read(reinterpret_cast<char*>(den.params.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
      throw ConfigError("checkpoint: truncated parameter payload");
    return den;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header field: ") + e.what());
  }
}

void GradAccumulator::ensure_finite() const {
  if (!grads.allFinite())
    throw NumericError("gradient accumulator holds non-finite entries (norm over finite part unavailable)");
}

double clip_grad_norm(Vec& g, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be > 0");
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
  return n;
}

} // namespace difftune
