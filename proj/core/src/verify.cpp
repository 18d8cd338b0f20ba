// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "difftune/diffusion.hpp"
#include "difftune/parallel.hpp"

namespace difftune {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

} // namespace

void LinearGaussianChain::validate() const {
  if (d < 1 || d > 2) throw DomainError("chain: d must be 1 or 2");
  if (T < 1 || T > 4) throw DomainError("chain: T must be in 1..4");
  if (static_cast<int>(A.size()) != T || static_cast<int>(b.size()) != T ||
      static_cast<int>(vars.size()) != T)
    throw DomainError("chain: A, b, vars must each have T entries");
  for (int t = 1; t <= T; ++t) {
    if (A[t - 1].rows() != d || A[t - 1].cols() != d || b[t - 1].size() != d)
      throw DomainError("chain: shape mismatch at step " + std::to_string(t));
    if (!A[t - 1].allFinite() || !b[t - 1].allFinite() ||
        !std::isfinite(vars[t - 1]) || vars[t - 1] < 0.0)
      throw DomainError("chain: non-finite or negative entries at step " +
                        std::to_string(t));
  }
}

Vec LinearGaussianChain::flat_params() const {
  Vec p(param_count());
  long off = 0;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) p[off++] = A[t](i, j);
    for (int i = 0; i < d; ++i) p[off++] = b[t][i];
  }
  return p;
}

void LinearGaussianChain::set_flat_params(const Vec& p) {
  if (p.size() != param_count())
    throw DomainError("chain: flat parameter size mismatch");
  long off = 0;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) A[t](i, j) = p[off++];
    for (int i = 0; i < d; ++i) b[t][i] = p[off++];
  }
}

std::vector<GaussianDist> exact_marginals(const LinearGaussianChain& chain) {
  chain.validate();
  std::vector<GaussianDist> marg(chain.T + 1);
  marg[chain.T] = {Vec::Zero(chain.d), Mat::Identity(chain.d, chain.d)};
  for (int t = chain.T; t >= 1; --t) {
    const Mat& At = chain.A[t - 1];
    marg[t - 1].mean = At * marg[t].mean + chain.b[t - 1];
    marg[t - 1].cov = At * marg[t].cov * At.transpose() +
                      chain.vars[t - 1] * Mat::Identity(chain.d, chain.d);
  }
  return marg;
}

double exact_expected_reward(const LinearGaussianChain& chain,
                             const QuadraticReward& reward) {
  if (reward.Q.rows() != chain.d || reward.Q.cols() != chain.d ||
      reward.c.size() != chain.d)
    throw DomainError("reward: shape mismatch with chain dimension");
  if ((reward.Q - reward.Q.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * (1.0 + reward.Q.cwiseAbs().maxCoeff()))
    throw DomainError("reward: Q must be symmetric");
  const GaussianDist x0 = exact_marginals(chain)[0];
  return -(reward.Q * x0.cov).trace() - x0.mean.dot(reward.Q * x0.mean) +
         reward.c.dot(x0.mean);
}

std::vector<Vec> sample_chain(const LinearGaussianChain& chain, Rng& rng) {
  std::vector<Vec> states;
  states.reserve(chain.T + 1);
  states.push_back(rng.normal_vec(chain.d));
  for (int t = chain.T; t >= 1; --t) {
    const Vec noise = rng.normal_vec(chain.d);
    Vec x = chain.A[t - 1] * states.back() + chain.b[t - 1] +
            std::sqrt(chain.vars[t - 1]) * noise;
    states.push_back(std::move(x));
  }
  return states;
}

double gaussian_kl(const Vec& m1, const Mat& C1, const Vec& m2, const Mat& C2) {
  const long d = m1.size();
  if (m2.size() != d || C1.rows() != d || C1.cols() != d || C2.rows() != d ||
      C2.cols() != d)
    throw DomainError("gaussian_kl: dimension mismatch");
  Eigen::LLT<Mat> llt1(C1), llt2(C2);
  if (llt1.info() != Eigen::Success || llt2.info() != Eigen::Success)
    throw NumericError("gaussian_kl: covariance not positive definite");
  auto logdet = [](const Eigen::LLT<Mat>& llt) {
    return 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  };
  const double tr = llt2.solve(C1).trace();
  const Vec dm = m2 - m1;
  const double quad = dm.dot(llt2.solve(dm));
  return 0.5 * (tr + quad - static_cast<double>(d) + logdet(llt2) - logdet(llt1));
}

GaussianDist joint_distribution(const LinearGaussianChain& chain) {
  chain.validate();
  const int d = chain.d, T = chain.T;
  const long n = static_cast<long>(d) * (T + 1);
  GaussianDist joint{Vec::Zero(n), Mat::Zero(n, n)};
  // Block k holds x_{T-k}; build top-down, each new block an affine image of
  // the previous one plus fresh noise.
  joint.cov.block(0, 0, d, d) = Mat::Identity(d, d);
  for (int k = 1; k <= T; ++k) {
    const int t = T - k + 1;  // step producing block k from block k-1
    const Mat& At = chain.A[t - 1];
    joint.mean.segment(k * d, d) =
        At * joint.mean.segment((k - 1) * d, d) + chain.b[t - 1];
    for (int u = 0; u < k; ++u) {
      const Mat cross = At * joint.cov.block((k - 1) * d, u * d, d, d);
      joint.cov.block(k * d, u * d, d, d) = cross;
      joint.cov.block(u * d, k * d, d, d) = cross.transpose();
    }
    joint.cov.block(k * d, k * d, d, d) =
        At * joint.cov.block((k - 1) * d, (k - 1) * d, d, d) * At.transpose() +
        chain.vars[t - 1] * Mat::Identity(d, d);
  }
  return joint;
}

namespace {

void require_same_shape(const LinearGaussianChain& a,
                        const LinearGaussianChain& b) {
  a.validate();
  b.validate();
  if (a.d != b.d || a.T != b.T)
    throw DomainError("chains: dimension/horizon mismatch");
  for (int t = 0; t < a.T; ++t)
    if (a.vars[t] != b.vars[t])
      throw DomainError("chains: step variances must match");
}

void require_stochastic(const LinearGaussianChain& chain) {
  for (int t = 1; t <= chain.T; ++t)
    if (!(chain.vars[t - 1] > 0.0))
      throw DomainError("chain: deterministic step t=" + std::to_string(t) +
                        " excluded from KL oracles");
}

} // namespace

double exact_stepwise_kl_sum(const LinearGaussianChain& a,
                             const LinearGaussianChain& b) {
  require_same_shape(a, b);
  require_stochastic(a);
  const auto marg = exact_marginals(a);
  double sum = 0.0;
  for (int t = 1; t <= a.T; ++t) {
    const Mat D = a.A[t - 1] - b.A[t - 1];
    const Vec e = a.b[t - 1] - b.b[t - 1];
    const double num = (D * marg[t].mean + e).squaredNorm() +
                       (D.transpose() * D * marg[t].cov).trace();
    sum += num / (2.0 * a.vars[t - 1]);
  }
  return sum;
}

void to_json(nlohmann::json& j, const VerifyReport& r) {
  j = nlohmann::json{{"name", r.name}, {"pass", r.pass}, {"lhs", r.lhs},
                     {"rhs", r.rhs},   {"se", r.se},     {"n", r.n},
                     {"seed", r.seed}, {"note", r.note}};
}

namespace {

// d(log p_t)/d(A_t, b_t) given rov = (x_{t-1} - mu_t)/sigma_t^2, packed into
// the step's flat block. The same shape serves the pathwise KL derivative
// with rov = (D x_t + e)/sigma_t^2.
void add_step_grad(const LinearGaussianChain& chain, int t, const Vec& x_t,
                   const Vec& rov, Vec& flat) {
  const int d = chain.d;
  long off = static_cast<long>(t - 1) * (d * d + d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) flat[off + i * d + j] += rov[i] * x_t[j];
  off += static_cast<long>(d) * d;
  for (int i = 0; i < d; ++i) flat[off + i] += rov[i];
}

// Central finite differences of fn over the chain's flat parameters.
Vec chain_fd_grad(const LinearGaussianChain& chain,
                  const std::function<double(const LinearGaussianChain&)>& fn) {
  const Vec p0 = chain.flat_params();
  Vec g(p0.size());
  LinearGaussianChain work = chain;
  for (long i = 0; i < p0.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(p0[i]));
    Vec p = p0;
    p[i] = p0[i] + h;
    work.set_flat_params(p);
    const double up = fn(work);
    p[i] = p0[i] - h;
    work.set_flat_params(p);
    const double down = fn(work);
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct McMoments {
  Vec mean, se;
};

McMoments moments_from_sums(const Vec& sum, const Vec& sumsq, long n) {
  McMoments out;
  out.mean = sum / static_cast<double>(n);
  Vec var = sumsq / static_cast<double>(n) - out.mean.cwiseProduct(out.mean);
  var = var.cwiseMax(0.0) * (static_cast<double>(n) / std::max<long>(n - 1, 1));
  out.se = (var / static_cast<double>(n)).cwiseSqrt();
  return out;
}

// Compares mc against fd coordinate-wise at max(tolerance, 3 se); fills the
// worst coordinate into the report.
void fill_coordinate_check(VerifyReport& rep, const McMoments& mc,
                           const Vec& fd, double tolerance) {
  bool pass = true;
  double worst_margin = -std::numeric_limits<double>::infinity();
  long worst = 0;
  for (long i = 0; i < fd.size(); ++i) {
    const double diff = std::abs(mc.mean[i] - fd[i]);
    const double thr = std::max(tolerance, 3.0 * mc.se[i]);
    if (diff > thr) pass = false;
    if (diff - thr > worst_margin) {
      worst_margin = diff - thr;
      worst = i;
    }
  }
  rep.pass = pass;
  rep.lhs = std::abs(mc.mean[worst] - fd[worst]);
  rep.rhs = std::max(tolerance, 3.0 * mc.se[worst]);
  rep.se = mc.se[worst];
  rep.note = "worst coord " + std::to_string(worst) + ": mc=" +
             fmt(mc.mean[worst]) + " fd=" + fmt(fd[worst]) + " se=" +
             fmt(mc.se[worst]);
}

} // namespace

VerifyReport verify_score_identity(const LinearGaussianChain& chain,
                                   const QuadraticReward& reward,
                                   long n_samples, double tolerance,
                                   std::uint64_t seed) {
  chain.validate();
  require_stochastic(chain);
  if (n_samples < 1)
    throw ConfigError("score identity: n_samples must be >= 1");
  exact_expected_reward(chain, reward);  // validates the reward shape

  Rng rng(seed);
  const long P = chain.param_count();
  Vec sum = Vec::Zero(P), sumsq = Vec::Zero(P), g = Vec::Zero(P);
  for (long s = 0; s < n_samples; ++s) {
    const auto states = sample_chain(chain, rng);
    const double r = reward.value(states.back());
    g.setZero();
    for (int t = chain.T; t >= 1; --t) {
      const Vec& x_t = states[chain.T - t];
      const Vec& x_prev = states[chain.T - t + 1];
      const Vec rov = (x_prev - chain.A[t - 1] * x_t - chain.b[t - 1]) /
                      chain.vars[t - 1];
      add_step_grad(chain, t, x_t, rov, g);
    }
    g *= r;
    sum += g;
    sumsq += g.cwiseProduct(g);
  }
  const McMoments mc = moments_from_sums(sum, sumsq, n_samples);
  const Vec fd = chain_fd_grad(chain, [&](const LinearGaussianChain& c) {
    return exact_expected_reward(c, reward);
  });

  VerifyReport rep;
  rep.name = "score_gradient_identity";
  rep.n = n_samples;
  rep.seed = seed;
  fill_coordinate_check(rep, mc, fd, tolerance);
  return rep;
}

VerifyReport verify_kl_chain(const LinearGaussianChain& a,
                             const LinearGaussianChain& b, double tolerance) {
  require_same_shape(a, b);
  require_stochastic(a);
  const auto ma = exact_marginals(a);
  const auto mb = exact_marginals(b);
  const double marginal = gaussian_kl(ma[0].mean, ma[0].cov, mb[0].mean,
                                      mb[0].cov);
  const double stepwise = exact_stepwise_kl_sum(a, b);
  const GaussianDist ja = joint_distribution(a);
  const GaussianDist jb = joint_distribution(b);
  const double joint = gaussian_kl(ja.mean, ja.cov, jb.mean, jb.cov);

  VerifyReport rep;
  rep.name = "kl_chain_rule";
  rep.lhs = marginal;
  rep.rhs = stepwise;
  rep.pass = marginal <= stepwise + tolerance &&
             std::abs(stepwise - joint) <= tolerance;
  rep.note = "joint=" + fmt(joint) + " |stepwise-joint|=" +
             fmt(std::abs(stepwise - joint));
  return rep;
}

VerifyReport verify_grad_decomposition(const LinearGaussianChain& theta,
                                       const LinearGaussianChain& pre,
                                       long n_samples, double tolerance,
                                       std::uint64_t seed) {
  require_same_shape(theta, pre);
  require_stochastic(theta);
  if (n_samples < 1)
    throw ConfigError("grad decomposition: n_samples must be >= 1");

  Rng rng(seed);
  const long P = theta.param_count();
  Vec sum = Vec::Zero(P), sumsq = Vec::Zero(P);
  Vec term2_sum = Vec::Zero(P);
  Vec g = Vec::Zero(P), suffix = Vec::Zero(P), t2 = Vec::Zero(P);
  for (long s = 0; s < n_samples; ++s) {
    const auto states = sample_chain(theta, rng);
    g.setZero();
    suffix.setZero();
    t2.setZero();
    // Pathwise term: d KL_t / d(A_t, b_t) at frozen x_t. Score-carried term:
    // KL_t times the scores of the steps that generated x_t (s > t).
    for (int t = theta.T; t >= 1; --t) {
      const Vec& x_t = states[theta.T - t];
      const Vec& x_prev = states[theta.T - t + 1];
      const Mat D = theta.A[t - 1] - pre.A[t - 1];
      const Vec e = theta.b[t - 1] - pre.b[t - 1];
      const Vec diff = D * x_t + e;
      const double kl_t = diff.squaredNorm() / (2.0 * theta.vars[t - 1]);
      add_step_grad(theta, t, x_t, Vec(diff / theta.vars[t - 1]), g);
      t2 += kl_t * suffix;
      const Vec rov = (x_prev - theta.A[t - 1] * x_t - theta.b[t - 1]) /
                      theta.vars[t - 1];
      add_step_grad(theta, t, x_t, rov, suffix);
    }
    g += t2;
    term2_sum += t2;
    sum += g;
    sumsq += g.cwiseProduct(g);
  }
  const McMoments mc = moments_from_sums(sum, sumsq, n_samples);
  const Vec fd = chain_fd_grad(theta, [&](const LinearGaussianChain& c) {
    return exact_stepwise_kl_sum(c, pre);
  });

  VerifyReport rep;
  rep.name = "kl_grad_decomposition";
  rep.n = n_samples;
  rep.seed = seed;
  fill_coordinate_check(rep, mc, fd, tolerance);
  rep.note += "; dropped-term norm=" +
              fmt((term2_sum / static_cast<double>(n_samples)).norm()) +
              " total norm=" + fmt(fd.norm());
  return rep;
}

// ---------------------------------------------------------------------------

double BoundReward::operator()(double x) const {
  const double q = (x - target) * (x - target) / tau;
  switch (kind) {
    case Kind::rbf: return std::exp(-q);
    case Kind::neg_sq: return -q;
    case Kind::zero: return 0.0;
  }
  throw DomainError("bound reward: unknown kind");
}

namespace {

double chain_reverse_mean(const CondNet& net, const Vec& params,
                          const NoiseSchedule& sched, double x, int t) {
  Vec xv(1);
  xv[0] = x;
  const double eps = net.forward(params, xv, t, 0)[0];
  const double k = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  return (x - k * eps) / std::sqrt(sched.alpha(t));
}

// Rolls steps T..2 (posterior variances) and returns the x_1 samples.
std::vector<double> sample_x1(const CondNet& net, const Vec& params,
                              const NoiseSchedule& sched, long n, Rng& rng) {
  std::vector<double> x1(n);
  for (long i = 0; i < n; ++i) {
    double x = rng.normal();
    for (int t = sched.T; t >= 2; --t) {
      const double mu = chain_reverse_mean(net, params, sched, x, t);
      x = mu + std::sqrt(sched.posterior_var(t)) * rng.normal();
    }
    x1[i] = x;
  }
  return x1;
}

// Per-block log sum_j N(g_i; mu(x_1^j), beta_1) over the grid, plus the
// decoder means themselves (the tail bound needs them).
struct DensityBlocks {
  std::vector<std::vector<double>> block_logsum;  // [block][grid]
  std::vector<long> block_n;
  std::vector<double> mu;

  double full_log(long i) const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& blk : block_logsum) m = std::max(m, blk[i]);
    double s = 0.0;
    for (const auto& blk : block_logsum) s += std::exp(blk[i] - m);
    const long n = std::accumulate(block_n.begin(), block_n.end(), 0L);
    return m + std::log(s) - std::log(static_cast<double>(n));
  }
  double block_log(int k, long i) const {
    return block_logsum[k][i] - std::log(static_cast<double>(block_n[k]));
  }
};

DensityBlocks density_blocks(const CondNet& net, const Vec& params,
                             const NoiseSchedule& sched,
                             const std::vector<double>& grid, long n_density,
                             int k_blocks, Rng& rng) {
  const std::vector<double> x1 = sample_x1(net, params, sched, n_density, rng);
  std::vector<double> mu1(x1.size());
  for (std::size_t j = 0; j < x1.size(); ++j)
    mu1[j] = chain_reverse_mean(net, params, sched, x1[j], 1);

  const double beta1 = sched.beta(1);
  const double inv2b = 1.0 / (2.0 * beta1);
  const double logz = 0.5 * std::log(2.0 * kPi * beta1);

  DensityBlocks out;
  out.mu = mu1;
  out.block_logsum.assign(k_blocks, std::vector<double>(grid.size()));
  out.block_n.assign(k_blocks, 0);
  std::vector<double> l;
  for (int k = 0; k < k_blocks; ++k) {
    const long j0 = k * n_density / k_blocks;
    const long j1 = (k + 1) * n_density / k_blocks;
    out.block_n[k] = j1 - j0;
    l.resize(j1 - j0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (long j = j0; j < j1; ++j) {
        const double diff = grid[i] - mu1[j];
        const double lj = -diff * diff * inv2b - logz;
        l[j - j0] = lj;
        if (lj > m) m = lj;
      }
      double s = 0.0;
      for (long j = j0; j < j1; ++j) s += std::exp(l[j - j0] - m);
      out.block_logsum[k][i] = m + std::log(s);
    }
  }
  return out;
}

double trapezoid(const std::vector<double>& grid,
                 const std::vector<double>& f) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    acc += 0.5 * (f[i] + f[i + 1]) * (grid[i + 1] - grid[i]);
  return acc;
}

// Exact upper bound on the part of the LHS integral the grid truncates:
// beyond `edge` (upward when sign > 0, reflected otherwise), each reference
// mixture component N(mu_j, var) is integrated in closed form against the
// envelope W ((x - a)^2 / (2 var) + C) >= (r + gamma)(-log p_theta), where a
// is the theta component mean nearest the tail and C = log(N Z).
double mixture_tail_bound(const std::vector<double>& mu_pre, double edge,
                          int sign, double a_theta, double w_max, double c_log,
                          double var) {
  const double sd = std::sqrt(var);
  double total = 0.0;
  for (double mu_raw : mu_pre) {
    const double mu = sign > 0 ? mu_raw : -mu_raw;
    const double e = sign > 0 ? edge : -edge;
    const double a = sign > 0 ? a_theta : -a_theta;
    const double u = (e - mu) / sd;
    const double q = 0.5 * std::erfc(u / std::sqrt(2.0));
    const double pdf_e = std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * kPi));
    // E[(X-a)^2 1{X>e}] for X ~ N(mu, var)
    const double sq_mom =
        (var + (mu - a) * (mu - a)) * q + var * (e + mu - 2.0 * a) * pdf_e;
    total += w_max * (std::max(sq_mom, 0.0) / (2.0 * var) + c_log * q);
  }
  return total / static_cast<double>(mu_pre.size());
}

} // namespace

std::vector<double> sample_model_x0(const CondNet& net, const Vec& params,
                                    const NoiseSchedule& sched, long n,
                                    Rng& rng) {
  if (net.spec().d != 1)
    throw DomainError("model x0 sampler: requires d = 1");
  std::vector<double> x0 = sample_x1(net, params, sched, n, rng);
  const double sd = std::sqrt(sched.beta(1));
  for (double& x : x0)
    x = chain_reverse_mean(net, params, sched, x, 1) + sd * rng.normal();
  return x0;
}

VerifyReport verify_weighted_bound(const CondNet& net, const Vec& theta,
                                   const Vec& pre, const NoiseSchedule& sched,
                                   const std::vector<double>& x0_data,
                                   const WeightedBoundSetup& setup,
                                   std::uint64_t seed) {
  if (setup.mode == KLRegMode::none)
    throw ConfigError("weighted bound: mode must be kl_d or kl_o");
  if (net.spec().d != 1 || net.spec().out_dim != 1)
    throw DomainError("weighted bound: requires a scalar (d = 1) denoiser");
  if (net.spec().T != sched.T)
    throw DomainError("weighted bound: network/schedule horizon mismatch");
  if (sched.T < 2 || sched.T > 4)
    throw DomainError("weighted bound: T must be in 2..4");
  if (net.param_count() > 100)
    throw DomainError("weighted bound: model must have <= 100 parameters");
  if (theta.size() != net.param_count() || pre.size() != net.param_count())
    throw DomainError("weighted bound: parameter size mismatch");
  if (x0_data.empty()) throw ConfigError("weighted bound: empty x0 dataset");
  if (setup.n_mc < 1 || setup.n_density < setup.k_blocks ||
      setup.k_blocks < 2 || setup.grid_points < 2 ||
      !(setup.grid_lo < setup.grid_hi) || !(setup.gamma >= 0.0))
    throw ConfigError("weighted bound: invalid setup");

  std::vector<double> grid(setup.grid_points);
  for (int i = 0; i < setup.grid_points; ++i)
    grid[i] = setup.grid_lo + (setup.grid_hi - setup.grid_lo) * i /
                                  (setup.grid_points - 1);

  // The bound needs r + gamma > 0 everywhere; the kl_o form additionally
  // needs r >= 0 and 2 c_t <= 1 where c_t is the exact per-step KL weight.
  double min_w = std::numeric_limits<double>::infinity();
  double min_r = std::numeric_limits<double>::infinity();
  for (double x : grid) {
    min_w = std::min(min_w, setup.reward(x) + setup.gamma);
    min_r = std::min(min_r, setup.reward(x));
  }
  if (!(min_w > 0.0))
    throw DomainError("weighted bound: requires r + gamma > 0 over the grid "
                      "(min " + fmt(min_w) + ")");
  if (setup.mode == KLRegMode::kl_o) {
    if (min_r < 0.0)
      throw DomainError("weighted bound: the kl_o form requires r >= 0 "
                        "(min " + fmt(min_r) + ")");
    for (int t = 2; t <= sched.T; ++t) {
      const double one_m = 1.0 - sched.alpha_bar(t);
      const double c_t = sched.alpha_bar(t - 1) * sched.beta(t) *
                         sched.beta(t) / (one_m * one_m);
      if (2.0 * c_t > 1.0)
        throw DomainError("weighted bound: schedule violates 2 c_t <= 1 at "
                          "t=" + std::to_string(t) + " (c=" + fmt(c_t) + ")");
    }
  }

  Rng rng(seed);
  Rng rng_theta = rng.fork(11);
  Rng rng_pre = rng.fork(12);
  Rng rng_rhs = rng.fork(13);

  // LHS: integral of p_pre(x) (r + gamma) (-log p_theta(x)) over the grid.
  const DensityBlocks dens_theta = density_blocks(
      net, theta, sched, grid, setup.n_density, setup.k_blocks, rng_theta);
  const DensityBlocks dens_pre = density_blocks(
      net, pre, sched, grid, setup.n_density, setup.k_blocks, rng_pre);

  std::vector<double> integrand(grid.size());
  double mass = 0.0;
  {
    std::vector<double> pdf(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      pdf[i] = std::exp(dens_pre.full_log(i));
      integrand[i] =
          pdf[i] * (setup.reward(grid[i]) + setup.gamma) * -dens_theta.full_log(i);
    }
    mass = trapezoid(grid, pdf);
  }
  if (std::abs(mass - 1.0) > 2e-3)
    throw NumericError("weighted bound: reference density mass " + fmt(mass) +
                       " escapes the grid; widen it");
  // Truncation drops positive tail mass, which would loosen the check; add
  // the exact mixture tail bound to the left side instead.
  const double beta1 = sched.beta(1);
  const double w_max =
      setup.gamma + (setup.reward.kind == BoundReward::Kind::rbf ? 1.0 : 0.0);
  const double c_log = std::log(static_cast<double>(setup.n_density) *
                                std::sqrt(2.0 * kPi * beta1));
  const auto [a_lo, a_hi] =
      std::minmax_element(dens_theta.mu.begin(), dens_theta.mu.end());
  const double tail_allow =
      mixture_tail_bound(dens_pre.mu, setup.grid_hi, +1, *a_hi, w_max, c_log,
                         beta1) +
      mixture_tail_bound(dens_pre.mu, setup.grid_lo, -1, *a_lo, w_max, c_log,
                         beta1);
  const double lhs = trapezoid(grid, integrand) + tail_allow;

  std::vector<double> lhs_blocks(setup.k_blocks);
  for (int k = 0; k < setup.k_blocks; ++k) {
    for (std::size_t i = 0; i < grid.size(); ++i)
      integrand[i] = std::exp(dens_pre.block_log(k, i)) *
                     (setup.reward(grid[i]) + setup.gamma) *
                     -dens_theta.block_log(k, i);
    lhs_blocks[k] = trapezoid(grid, integrand);
  }
  double bmean = 0.0, bvar = 0.0;
  for (double v : lhs_blocks) bmean += v;
  bmean /= setup.k_blocks;
  for (double v : lhs_blocks) bvar += (v - bmean) * (v - bmean);
  bvar /= (setup.k_blocks - 1);
  const double se_lhs = std::sqrt(bvar / setup.k_blocks);

  // RHS: training-loss sum over t in {2..T} plus the decoder and prior terms.
  const double abar_T = sched.alpha_bar(sched.T);
  double rhs_sum = 0.0, rhs_sumsq = 0.0;
  double loss_part = 0.0, dec_part = 0.0, prior_part = 0.0;
  Vec xv(1);
  for (double x0 : x0_data) {
    const double r = setup.reward(x0);
    const double w = r + setup.gamma;
    double loss_terms = 0.0;
    for (int t = 2; t <= sched.T; ++t) {
      const double abar = sched.alpha_bar(t);
      const double var_t = sched.posterior_var(t);
      double acc = 0.0;
      for (int j = 0; j < setup.n_mc; ++j) {
        const double x_t = std::sqrt(abar) * x0 +
                           std::sqrt(1.0 - abar) * rng_rhs.normal();
        xv[0] = x_t;
        const double f_theta =
            (x_t - std::sqrt(1.0 - abar) * net.forward(theta, xv, t, 0)[0]) /
            std::sqrt(abar);
        if (setup.mode == KLRegMode::kl_d) {
          acc += w * (x0 - f_theta) * (x0 - f_theta) / (2.0 * var_t);
        } else {
          const double f_pre =
              (x_t - std::sqrt(1.0 - abar) * net.forward(pre, xv, t, 0)[0]) /
              std::sqrt(abar);
          acc += (r * (x0 - f_theta) * (x0 - f_theta) +
                  setup.gamma * (f_pre - f_theta) * (f_pre - f_theta) +
                  setup.gamma * (x0 - f_pre) * (x0 - f_pre)) /
                 (2.0 * var_t);
        }
      }
      loss_terms += acc / setup.n_mc;
    }
    double dec = 0.0;
    {
      const double abar1 = sched.alpha_bar(1);
      for (int j = 0; j < setup.n_mc; ++j) {
        const double x_1 = std::sqrt(abar1) * x0 +
                           std::sqrt(1.0 - abar1) * rng_rhs.normal();
        const double mu = chain_reverse_mean(net, theta, sched, x_1, 1);
        dec += (x0 - mu) * (x0 - mu) / (2.0 * beta1) +
               0.5 * std::log(2.0 * kPi * beta1);
      }
      dec = w * dec / setup.n_mc;
    }
    const double prior =
        w * 0.5 * ((1.0 - abar_T) + abar_T * x0 * x0 - 1.0 -
                   std::log(1.0 - abar_T));
    const double rhs_i = loss_terms + dec + prior;
    rhs_sum += rhs_i;
    rhs_sumsq += rhs_i * rhs_i;
    loss_part += loss_terms;
    dec_part += dec;
    prior_part += prior;
  }
  const long nd = static_cast<long>(x0_data.size());
  const double rhs = rhs_sum / nd;
  double rvar = rhs_sumsq / nd - rhs * rhs;
  rvar = std::max(rvar, 0.0) * (static_cast<double>(nd) /
                                std::max<long>(nd - 1, 1));
  const double se_rhs = std::sqrt(rvar / nd);

  const double se = std::sqrt(se_lhs * se_lhs + se_rhs * se_rhs);
  VerifyReport rep;
  rep.name = setup.mode == KLRegMode::kl_d ? "weighted_nll_bound_kl_d"
                                           : "weighted_nll_bound_kl_o";
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.se = se;
  rep.n = nd;
  rep.seed = seed;
  rep.pass = lhs <= rhs + std::max(setup.tolerance, 3.0 * se);
  rep.note = "loss=" + fmt(loss_part / nd) + " decoder=" + fmt(dec_part / nd) +
             " prior=" + fmt(prior_part / nd) + " se_lhs=" + fmt(se_lhs) +
             " se_rhs=" + fmt(se_rhs) + " tail_allow=" + fmt(tail_allow) +
             " n_density=" + std::to_string(setup.n_density);
  return rep;
}

// ---------------------------------------------------------------------------

LinearGaussianChain default_chain() {
  LinearGaussianChain c;
  c.d = 1;
  c.T = 3;
  c.A = {Mat::Constant(1, 1, 0.9), Mat::Constant(1, 1, 0.8),
         Mat::Constant(1, 1, 1.1)};
  c.b = {Vec::Constant(1, 0.1), Vec::Constant(1, -0.2), Vec::Constant(1, 0.3)};
  c.vars = {0.5, 0.7, 0.4};
  return c;
}

QuadraticReward default_quadratic_reward(int d) {
  return QuadraticReward{Mat::Identity(d, d), Vec::Constant(d, 0.5)};
}

LinearGaussianChain random_chain(int d, int T, Rng& rng) {
  LinearGaussianChain c;
  c.d = d;
  c.T = T;
  for (int t = 0; t < T; ++t) {
    Mat A(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) A(i, j) = 1.4 * (rng.uniform() - 0.5);
    Vec b(d);
    for (int i = 0; i < d; ++i) b[i] = rng.uniform() - 0.5;
    c.A.push_back(std::move(A));
    c.b.push_back(std::move(b));
    c.vars.push_back(0.3 + 0.7 * rng.uniform());
  }
  return c;
}

LinearGaussianChain perturb_chain(const LinearGaussianChain& chain, Rng& rng,
                                  double scale) {
  LinearGaussianChain out = chain;
  for (int t = 0; t < out.T; ++t) {
    for (int i = 0; i < out.d; ++i) {
      for (int j = 0; j < out.d; ++j) out.A[t](i, j) += scale * rng.normal();
      out.b[t][i] += scale * rng.normal();
    }
  }
  return out;
}

LinearGaussianChain chain_from_linear_denoiser(const Denoiser& den,
                                               const Vec& params,
                                               const NoiseSchedule& sched,
                                               int z) {
  if (!den.net.spec().hidden.empty())
    throw DomainError("linear chain: denoiser must have no hidden layers");
  const int d = den.d();
  LinearGaussianChain c;
  c.d = d;
  c.T = sched.T;
  for (int t = 1; t <= sched.T; ++t) {
    const double k = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double sa = std::sqrt(sched.alpha(t));
    const Vec eps0 = den.forward(params, Vec::Zero(d), t, z);
    Mat W(d, d);
    for (int i = 0; i < d; ++i) {
      Vec unit = Vec::Zero(d);
      unit[i] = 1.0;
      W.col(i) = den.forward(params, unit, t, z) - eps0;
    }
    c.A.push_back((Mat::Identity(d, d) - k * W) / sa);
    c.b.push_back(-k * eps0 / sa);
    c.vars.push_back(sched.step_var(t));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

VerifyReport summarize_batch(const std::string& name,
                             std::vector<VerifyReport> parts,
                             std::uint64_t seed) {
  VerifyReport rep;
  rep.name = name;
  rep.seed = seed;
  rep.n = static_cast<long>(parts.size());
  rep.pass = true;
  int passed = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  std::size_t worst = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    rep.pass = rep.pass && parts[i].pass;
    passed += parts[i].pass ? 1 : 0;
    const double margin = parts[i].lhs - parts[i].rhs;
    if (margin > worst_margin) {
      worst_margin = margin;
      worst = i;
    }
  }
  if (!parts.empty()) {
    rep.lhs = parts[worst].lhs;
    rep.rhs = parts[worst].rhs;
    rep.se = parts[worst].se;
    rep.note = std::to_string(passed) + "/" + std::to_string(parts.size()) +
               " passed; worst instance " + std::to_string(worst) + ": " +
               parts[worst].note;
  }
  return rep;
}

} // namespace

VerifyReport verify_kl_chain_batch(std::uint64_t seed, int count,
                                   double tolerance) {
  if (count < 1) throw ConfigError("kl chain batch: count must be >= 1");
  std::vector<VerifyReport> parts(count);
  Rng root(seed);
  for (int i = 0; i < count; ++i) {
    Rng rng = root.fork(i);
    const LinearGaussianChain a = random_chain(1, 3, rng);
    LinearGaussianChain b;
    if (i % 2 == 0) {
      b = perturb_chain(a, rng, 0.3);
    } else {
      b = random_chain(1, 3, rng);
      b.vars = a.vars;
    }
    parts[i] = verify_kl_chain(a, b, tolerance);
  }
  return summarize_batch("kl_chain_rule_batch", std::move(parts), seed);
}

VerifyReport verify_grad_decomposition_batch(std::uint64_t seed, int count,
                                             long n_samples) {
  if (count < 1)
    throw ConfigError("grad decomposition batch: count must be >= 1");
  std::vector<VerifyReport> parts(count);
  Rng root(seed);
  parallel_for(count, [&](int i) {
    Rng rng = root.fork(i);
    const LinearGaussianChain theta = random_chain(1, 3, rng);
    const LinearGaussianChain pre = perturb_chain(theta, rng, 0.2);
    parts[i] = verify_grad_decomposition(theta, pre, n_samples, 0.0,
                                         rng.fork(1).seed());
  });
  return summarize_batch("kl_grad_decomposition_batch", std::move(parts),
                         seed);
}

VerifyReport verify_weighted_bound_batch(std::uint64_t seed, KLRegMode mode,
                                         int count, long n_data) {
  if (count < 1)
    throw ConfigError("weighted bound batch: count must be >= 1");
  if (n_data < 1) throw ConfigError("weighted bound batch: n_data must be >= 1");
  const NoiseSchedule sched = make_schedule(4, 0.1, 0.2);
  CondNetSpec spec;
  spec.d = 1;
  spec.T = sched.T;
  spec.prompt_count = 1;
  spec.out_dim = 1;
  spec.hidden = {8};
  spec.time_features = 4;
  const CondNet net(spec);

  const double gammas[] = {0.5, 1.0, 2.0, 5.0};
  std::vector<VerifyReport> parts(count);
  Rng root(seed);
  parallel_for(count, [&](int i) {
    Rng rng = root.fork(i);
    Vec pre = 0.6 * net.init_params(rng);
    Vec theta = pre + 0.12 * rng.normal_vec(static_cast<int>(pre.size()));
    WeightedBoundSetup setup;
    setup.mode = mode;
    setup.gamma = gammas[i % 4];
    setup.reward.target = 2.0 * rng.uniform() - 1.0;
    Rng data_rng = rng.fork(2);
    const std::vector<double> x0 =
        sample_model_x0(net, pre, sched, n_data, data_rng);
    parts[i] = verify_weighted_bound(net, theta, pre, sched, x0, setup,
                                     rng.fork(3).seed());
  });
  const std::string name = mode == KLRegMode::kl_d
                               ? "weighted_nll_bound_kl_d_batch"
                               : "weighted_nll_bound_kl_o_batch";
  return summarize_batch(name, std::move(parts), seed);
}

std::vector<VerifyReport> verify_all(std::uint64_t seed) {
  Rng root(seed);
  std::vector<VerifyReport> reports;
  reports.push_back(verify_score_identity(default_chain(),
                                          default_quadratic_reward(1), 100000,
                                          0.0, root.fork(1).seed()));
  reports.push_back(verify_kl_chain_batch(root.fork(2).seed(), 100, 1e-8));
  reports.push_back(
      verify_grad_decomposition_batch(root.fork(3).seed(), 20, 100000));
  reports.push_back(verify_weighted_bound_batch(root.fork(4).seed(),
                                                KLRegMode::kl_d, 20, 2000));
  reports.push_back(verify_weighted_bound_batch(root.fork(5).seed(),
                                                KLRegMode::kl_o, 20, 2000));
  return reports;
}

bool write_verify_reports(const std::string& path,
                          const std::vector<VerifyReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  bool all = true;
  for (const auto& r : reports) {
    j.push_back(r);
    all = all && r.pass;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("verify: cannot open for write: " + path);
  out << j.dump(2) << "\n";
  return all;
}

} // namespace difftune
