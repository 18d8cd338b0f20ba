// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

#include "difftune/common.hpp"

namespace difftune {

struct GradCheckReport {
  bool pass = false;
  double worst_rel_err = 0.0;
  long worst_index = -1;
  long n_checked = 0;
  double h = 0.0;
  double tolerance = 0.0;
};

// Central finite differences of `loss` against `analytic_grad`, coordinate by
// coordinate. Relative error per coordinate is |a - f| / max(|a|, |f|); a
// coordinate where both magnitudes fall below 1e-7 is accepted outright since
// the difference quotient is then dominated by floating-point cancellation.
// max_coords < 0 checks every coordinate; otherwise a deterministic random
// subset of that size. Vacuously passes on an empty parameter vector.
GradCheckReport grad_check(const std::function<double(const Vec&)>& loss,
                           const Vec& params, const Vec& analytic_grad,
                           double tolerance = 1e-4, double h = 1e-5,
                           long max_coords = -1, std::uint64_t seed = 0);

} // namespace difftune
