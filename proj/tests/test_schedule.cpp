// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "difftune/schedule.hpp"
#include "doctest.h"

using namespace difftune;

TEST_SUITE("schedule") {

TEST_CASE("linear two-step schedule has the hand-computed table") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  CHECK(s.T == 2);
  CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.alpha(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha(2) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("single-step schedule: posterior variance collapses to zero") {
  const NoiseSchedule s = make_schedule(1, 0.5, 0.5);
  CHECK(s.T == 1);
  CHECK(s.posterior_var(1) == 0.0);
  CHECK(s.step_var(1) == 0.0);         // tilde mode by default
  CHECK(s.degenerate_step(1));
  const NoiseSchedule sb =
      make_schedule(1, 0.5, 0.5, ScheduleShape::linear, ReverseCovMode::beta_t);
  CHECK(sb.step_var(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_FALSE(sb.degenerate_step(1));
}

TEST_CASE("bad constructor arguments are rejected") {
  CHECK_THROWS_AS(make_schedule(2, 0.9, 0.1), ConfigError);  // min > max
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(2, 0.0, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(2, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule_from_betas({}), ConfigError);
  CHECK_THROWS_AS(make_schedule_from_betas({0.1, 1.5}), ConfigError);
  CHECK_THROWS_AS(make_schedule_from_betas({-0.1}), ConfigError);
}

TEST_CASE("explicit betas match the linear constructor") {
  const NoiseSchedule a = make_schedule(3, 0.1, 0.3);
  const NoiseSchedule b = make_schedule_from_betas({0.1, 0.2, 0.3});
  REQUIRE(a.T == b.T);
  for (int t = 1; t <= a.T; ++t) {
    CHECK(a.beta(t) == doctest::Approx(b.beta(t)).epsilon(1e-15));
    CHECK(a.alpha_bar(t) == doctest::Approx(b.alpha_bar(t)).epsilon(1e-15));
    CHECK(a.posterior_var(t) == doctest::Approx(b.posterior_var(t)).epsilon(1e-15));
  }
}

TEST_CASE("posterior variance formula and monotone alpha_bar") {
  const NoiseSchedule s = make_schedule(5, 0.05, 0.3);
  CHECK(s.posterior_var(1) == 0.0);
  for (int t = 2; t <= s.T; ++t) {
    const double expect =
        (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
    CHECK(s.posterior_var(t) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(s.posterior_var(t) > 0.0);
    CHECK(s.posterior_var(t) < s.beta(t));  // tilde beta shrinks beta
  }
  for (int t = 1; t <= s.T; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("default schedule nearly destroys the signal by step T") {
  const NoiseSchedule s = default_schedule();
  CHECK(s.T == 50);
  CHECK(s.cov_mode == ReverseCovMode::tilde_beta_t);
  CHECK(s.alpha_bar(s.T) < 0.05);
  CHECK(s.beta(1) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(s.beta(s.T) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("out-of-range step indices throw") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  CHECK_THROWS_AS(s.beta(0), IndexError);
  CHECK_THROWS_AS(s.beta(3), IndexError);
  CHECK_THROWS_AS(s.alpha_bar(-1), IndexError);
  CHECK_THROWS_AS(s.posterior_var(3), IndexError);
  CHECK_NOTHROW(s.alpha_bar(0));
}

} // TEST_SUITE
