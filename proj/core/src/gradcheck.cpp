// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "difftune/rng.hpp"

namespace difftune {

GradCheckReport grad_check(const std::function<double(const Vec&)>& loss,
                           const Vec& params, const Vec& analytic_grad,
                           double tolerance, double h, long max_coords,
                           std::uint64_t seed) {
  if (analytic_grad.size() != params.size())
    throw ConfigError("grad_check: gradient size does not match parameters");
  if (!(h > 0.0)) throw ConfigError("grad_check: h must be > 0");
  if (!(tolerance > 0.0)) throw ConfigError("grad_check: tolerance must be > 0");

  const long n = params.size();
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords >= 0 && max_coords < n) {
    Rng rng(seed);
    // partial Fisher-Yates: first max_coords entries become the sample
    for (long i = 0; i < max_coords; ++i) {
      const long j = i + static_cast<long>(rng.uniform_int(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(max_coords);
  }

  GradCheckReport rep;
  rep.h = h;
  rep.tolerance = tolerance;
  rep.pass = true;
  Vec p = params;
  for (long i : idx) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = loss(p);
    p[i] = orig - h;
    const double dn = loss(p);
    p[i] = orig;
    const double fd = (up - dn) / (2.0 * h);
    const double a = analytic_grad[i];
    double rel = 0.0;
    if (std::abs(a) >= 1e-7 || std::abs(fd) >= 1e-7)
      rel = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
    if (rel > rep.worst_rel_err) {
      rep.worst_rel_err = rel;
      rep.worst_index = i;
    }
    ++rep.n_checked;
  }
  rep.pass = rep.worst_rel_err < tolerance;
  return rep;
}

} // namespace difftune
