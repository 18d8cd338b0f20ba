// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difftune/denoiser.hpp"
#include "difftune/rng.hpp"
#include "difftune/schedule.hpp"
#include "difftune/sft.hpp"

namespace difftune {

// Reverse-process chain with affine step means mu_t(x) = A_t x + b_t and
// isotropic step noise sigma_t^2 I, started from x_T ~ N(0, I). Every
// marginal is exactly Gaussian, which makes expected rewards, KLs, and
// gradients computable in closed form — the ground truth the Monte Carlo
// estimators are certified against. Kept deliberately tiny (d <= 2, T <= 4).
struct LinearGaussianChain {
  int d = 0;
  int T = 0;
  std::vector<Mat> A;        // A[t-1] drives step t: x_{t-1} = A_t x_t + b_t + sigma_t xi
  std::vector<Vec> b;
  std::vector<double> vars;  // sigma_t^2, index t-1

  void validate() const;
  long param_count() const { return static_cast<long>(T) * (d * d + d); }
  // Differentiation variables: per step t ascending, A_t row-major then b_t.
  Vec flat_params() const;
  void set_flat_params(const Vec& p);
};

struct GaussianDist {
  Vec mean;
  Mat cov;
};

// marginals[t] is the exact distribution of x_t:
//   m_{t-1} = A_t m_t + b_t,  C_{t-1} = A_t C_t A_t^T + sigma_t^2 I,
// seeded with m_T = 0, C_T = I.
std::vector<GaussianDist> exact_marginals(const LinearGaussianChain& chain);

// r(x) = -x^T Q x + c^T x with Q symmetric.
struct QuadraticReward {
  Mat Q;
  Vec c;
  double value(const Vec& x) const { return -x.dot(Q * x) + c.dot(x); }
};

// E[r(x_0)] = -tr(Q C_0) - m_0^T Q m_0 + c^T m_0.
double exact_expected_reward(const LinearGaussianChain& chain,
                             const QuadraticReward& reward);

// One rollout; returns x_T .. x_0 (T + 1 states).
std::vector<Vec> sample_chain(const LinearGaussianChain& chain, Rng& rng);

// KL(N(m1, C1) || N(m2, C2)), general covariances via Cholesky.
double gaussian_kl(const Vec& m1, const Mat& C1, const Vec& m2, const Mat& C2);

// The stacked joint Gaussian over (x_T, ..., x_0) — d(T+1) dimensions.
GaussianDist joint_distribution(const LinearGaussianChain& chain);

// sum_t E_{x_t ~ a}[ KL(a-step || b-step) ] in closed form; requires both
// chains to share d, T, and step variances, all positive.
double exact_stepwise_kl_sum(const LinearGaussianChain& a,
                             const LinearGaussianChain& b);

// ---------------------------------------------------------------------------

struct VerifyReport {
  std::string name;
  bool pass = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double se = 0.0;
  long n = 0;
  std::uint64_t seed = 0;
  std::string note;
};

void to_json(nlohmann::json& j, const VerifyReport& r);

// Score-function gradient identity: the Monte Carlo estimate of
// grad E[r(x_0)] via r * sum_t grad log p(x_{t-1}|x_t) must match central
// finite differences of the exact expected reward in every chain parameter
// within max(tolerance, 3 SE). The report's lhs/rhs/se refer to the worst
// coordinate.
VerifyReport verify_score_identity(const LinearGaussianChain& chain,
                                   const QuadraticReward& reward,
                                   long n_samples, double tolerance,
                                   std::uint64_t seed);

// Marginal KL vs stepwise sum: KL(a(x_0) || b(x_0)) <= sum_t E[KL_t] with
// both sides exact, and the stepwise sum equals the exact KL of the stacked
// joint distributions (chain rule), both within tolerance.
VerifyReport verify_kl_chain(const LinearGaussianChain& a,
                             const LinearGaussianChain& b, double tolerance);

// Product-rule decomposition of grad_theta sum_t E_{x_t~theta}[KL_t]: the
// Monte Carlo sum of the pathwise term and the score-carried term must match
// finite differences of the exact total within max(tolerance, 3 SE) per
// coordinate. The magnitude of the score-carried term (the one the training
// loss drops) is reported in the note, informational only.
VerifyReport verify_grad_decomposition(const LinearGaussianChain& theta,
                                       const LinearGaussianChain& pre,
                                       long n_samples, double tolerance,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Weighted negative-log-likelihood bound on tiny 1-D denoisers.

// Reward over scalar x_0 used by the bound checks; `zero` turns the weighted
// bound into the plain ELBO statement.
struct BoundReward {
  enum class Kind { rbf, neg_sq, zero };
  Kind kind = Kind::rbf;
  double target = 1.0;
  double tau = 1.0;

  double operator()(double x) const;
};

struct WeightedBoundSetup {
  KLRegMode mode = KLRegMode::kl_d;  // kl_d or kl_o; `none` is rejected
  BoundReward reward{};
  double gamma = 2.0;
  int n_mc = 8;             // forward-noise draws per (x0, t) on the RHS
  long n_density = 20000;   // model rollouts per density estimate
  int grid_points = 4001;   // trapezoid grid for the LHS integral
  double grid_lo = -10.0;
  double grid_hi = 10.0;
  int k_blocks = 4;         // split-block standard errors
  double tolerance = 0.0;   // pass if lhs <= rhs + max(tolerance, 3 se)
};

// x0 draws from the generative convention used by the bound: steps T..2 with
// posterior variances, then x_0 ~ N(mu(x_1, 1), beta_1). Feed these to
// verify_weighted_bound as the dataset.
std::vector<double> sample_model_x0(const CondNet& net, const Vec& params,
                                    const NoiseSchedule& sched, long n,
                                    Rng& rng);

// Certifies E_{x0~pre}[(r+gamma)(-log p_theta(x0))] <= weighted-loss form of
// the variational bound (the training-loss sum over t in {2..T} plus the
// decoder and prior terms evaluated explicitly; the kl_o form also carries
// its constant gamma ||x0 - f_pre||^2 term). The LHS integrates exact grid
// weights against Monte Carlo density estimates of both models' x0 marginals
// — the nonlinearity of log biases the LHS estimate upward, which can only
// make the check stricter. Preconditions (domain errors): d = 1, T in
// {2..4}, <= 100 parameters, min(r + gamma) > 0 on the grid; kl_o further
// needs r >= 0 and 2 abar_{t-1} beta_t^2 / (1-abar_t)^2 <= 1 for t >= 2.
VerifyReport verify_weighted_bound(const CondNet& net, const Vec& theta,
                                   const Vec& pre, const NoiseSchedule& sched,
                                   const std::vector<double>& x0_data,
                                   const WeightedBoundSetup& setup,
                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Instance generators and batch drivers.

LinearGaussianChain default_chain();            // d=1, T=3, fixed constants
QuadraticReward default_quadratic_reward(int d);
LinearGaussianChain random_chain(int d, int T, Rng& rng);
LinearGaussianChain perturb_chain(const LinearGaussianChain& chain, Rng& rng,
                                  double scale);

// Exact affine chain realized by a reverse sampler whose denoiser has no
// hidden layers (eps affine in x_t), for a fixed prompt. Step variances come
// from the schedule's reverse covariance mode.
LinearGaussianChain chain_from_linear_denoiser(const Denoiser& den,
                                               const Vec& params,
                                               const NoiseSchedule& sched,
                                               int z);

VerifyReport verify_kl_chain_batch(std::uint64_t seed, int count = 100,
                                   double tolerance = 1e-8);
VerifyReport verify_grad_decomposition_batch(std::uint64_t seed, int count = 20,
                                             long n_samples = 100000);
VerifyReport verify_weighted_bound_batch(std::uint64_t seed, KLRegMode mode,
                                         int count = 20, long n_data = 2000);

// The full certification suite (score identity; KL chain inequality and
// joint equality x100; gradient decomposition x20; both weighted bounds
// x20). Deterministic given seed.
std::vector<VerifyReport> verify_all(std::uint64_t seed);

// JSON array of reports; returns overall pass.
bool write_verify_reports(const std::string& path,
                          const std::vector<VerifyReport>& reports);

} // namespace difftune
