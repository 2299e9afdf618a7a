#pragma once

// Adaptive random-walk Metropolis with windowed covariance adaptation, plus
// split-R̂ and bulk effective sample size.

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nfloo/covkit.hpp"
#include "nfloo/draws.hpp"
#include "nfloo/errors.hpp"
#include "nfloo/parallel.hpp"
#include "nfloo/rng.hpp"
#include "nfloo/transforms.hpp"

namespace nfloo {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int retained = 1000;  // per chain
  int thin = 1;
  std::uint64_t seed = 1;
  double init_jitter = 0.5;  // half-width of the uniform jitter, unconstrained
  double target_accept = 0.234;
  int max_init_tries = 100;
  std::size_t jobs = 1;

  void validate() const {
    if (chains < 1) throw validation_error("chains must be >= 1");
    if (warmup < 1) throw validation_error("warmup must be >= 1");
    if (retained < 1) throw validation_error("retained draws must be >= 1");
    if (thin < 1) throw validation_error("thin must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw validation_error("target acceptance must be in (0, 1)");
    if (!(init_jitter >= 0.0)) throw validation_error("jitter must be >= 0");
    if (max_init_tries < 1) throw validation_error("max_init_tries must be >= 1");
  }
};

/// Proposal state: u' = u + scale · L·ε with L·Lᵀ = covariance.
struct AdaptationState {
  Matrix covariance;
  double scale = 1.0;
};

struct ChainStats {
  double acceptance_rate = 0.0;  // over retained iterations
  int init_attempts = 0;
  AdaptationState at_first_retained;
  AdaptationState at_last_retained;
};

struct McmcResult {
  PosteriorDraws draws;
  std::vector<ChainStats> chains;
};

namespace detail {

// Warmup split into an initial scale-only buffer, doubling covariance
// windows and a terminal scale-only buffer. Returns window end iterations.
inline std::vector<int> adaptation_windows(int warmup) {
  std::vector<int> ends;
  if (warmup < 20) return ends;
  const int init_buffer = static_cast<int>(0.15 * warmup);
  const int term_buffer = static_cast<int>(0.1 * warmup);
  const int last = warmup - term_buffer;
  int start = init_buffer;
  int size = 25;
  while (start < last) {
    int end = start + size;
    if (end + 2 * size > last) end = last;
    ends.push_back(end);
    start = end;
    size *= 2;
  }
  return ends;
}

class Welford {
 public:
  explicit Welford(Eigen::Index d) : mean_(Vector::Zero(d)), m2_(Matrix::Zero(d, d)) {}
  void add(const Vector& x) {
    ++n_;
    const Vector delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_).transpose();
  }
  long count() const noexcept { return n_; }
  Matrix covariance() const { return m2_ / static_cast<double>(n_ - 1); }
  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  long n_ = 0;
  Vector mean_;
  Matrix m2_;
};

// Shrinks a window estimate toward the current proposal covariance, worth
// `prior_n` pseudo-samples. A short window in which the chain barely moved
// then cannot collapse the proposal along that direction.
inline Matrix regularized(const Matrix& s, long n, bool full, const Matrix& prev,
                          double prior_n = 25.0) {
  const double nn = static_cast<double>(n);
  Matrix out = full ? Matrix(s) : Matrix(s.diagonal().asDiagonal());
  const Matrix base = full ? prev : Matrix(prev.diagonal().asDiagonal());
  out = (nn * out + prior_n * base) / (nn + prior_n);
  out.diagonal().array() += 1e-10;
  return out;
}

}  // namespace detail

/// Runs `cfg.chains` independent chains targeting `log_post`.
///
/// `log_post` receives parameters on the constrained scale; sampling happens
/// on the unconstrained scale defined by `transforms`, with the Jacobian
/// added. Chain c uses rng_stream(cfg.seed, c), so results do not depend on
/// `cfg.jobs`. Rows of the returned draws are chain-major.
///
/// `proposal_sd`, if given, sets the initial diagonal proposal scale per
/// unconstrained coordinate; otherwise the identity is used. Rough posterior
/// scales here shorten warmup considerably when parameters differ in scale.
template <typename LogPost>
McmcResult run(LogPost&& log_post, const std::vector<std::string>& names,
               const std::vector<ParamTransform>& transforms,
               const std::vector<double>& initial, const SamplerConfig& cfg,
               const std::vector<double>& proposal_sd = {}) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(names.size());
  if (d < 1) throw validation_error("no parameters to sample");
  if (transforms.size() != names.size() || initial.size() != names.size())
    throw dimension_mismatch("names, transforms and initial point disagree");
  if (!proposal_sd.empty() && proposal_sd.size() != names.size())
    throw dimension_mismatch("proposal scales do not match parameters");
  Matrix cov0 = Matrix::Identity(d, d);
  for (std::size_t j = 0; j < proposal_sd.size(); ++j) {
    if (!(proposal_sd[j] > 0.0) || !std::isfinite(proposal_sd[j]))
      throw validation_error("proposal scales must be positive");
    cov0(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) =
        proposal_sd[j] * proposal_sd[j];
  }

  auto to_constrained = [&](const Vector& u, std::vector<double>& x) {
    for (Eigen::Index j = 0; j < d; ++j)
      x[static_cast<std::size_t>(j)] =
          transforms[static_cast<std::size_t>(j)].forward(u(j));
  };
  auto target = [&](const Vector& u, std::vector<double>& scratch) {
    to_constrained(u, scratch);
    for (double v : scratch)
      if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
    const double lp = log_post(std::span<const double>(scratch));
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    double lj = 0.0;
    for (Eigen::Index j = 0; j < d; ++j)
      lj += transforms[static_cast<std::size_t>(j)].log_jacobian(u(j));
    return lp + lj;
  };

  Vector u_init(d);
  for (Eigen::Index j = 0; j < d; ++j)
    u_init(j) = transforms[static_cast<std::size_t>(j)].inverse(
        initial[static_cast<std::size_t>(j)]);
  {
    std::vector<double> scratch(names.size());
    if (!u_init.allFinite() || !std::isfinite(target(u_init, scratch)))
      throw non_finite_log_posterior(
          "log posterior is not finite at the initial point");
  }

  const int per_chain = cfg.retained;
  std::vector<Matrix> chain_values(static_cast<std::size_t>(cfg.chains));
  std::vector<ChainStats> stats(static_cast<std::size_t>(cfg.chains));
  const auto windows = detail::adaptation_windows(cfg.warmup);
  const double base_scale = 2.38 / std::sqrt(static_cast<double>(d));

  parallel_for(static_cast<std::size_t>(cfg.chains), cfg.jobs, [&](std::size_t c) {
    rng_stream rng(cfg.seed, c);
    std::vector<double> scratch(names.size());

    Vector u(d);
    double lp = -std::numeric_limits<double>::infinity();
    int attempts = 0;
    while (attempts < cfg.max_init_tries) {
      ++attempts;
      for (Eigen::Index j = 0; j < d; ++j)
        u(j) = u_init(j) + cfg.init_jitter * rng.uniform(-1.0, 1.0);
      lp = target(u, scratch);
      if (std::isfinite(lp)) break;
    }
    if (!std::isfinite(lp))
      throw initialization_failure("chain " + std::to_string(c + 1) +
                                   ": no finite starting point after " +
                                   std::to_string(attempts) + " tries");

    Matrix cov = cov0;
    Matrix chol = cov0.cwiseSqrt();
    double log_scale = std::log(base_scale);
    long rm_iter = 0;
    detail::Welford acc(d);
    std::size_t next_window = 0;
    int windows_done = 0;

    Vector eps(d), prop(d);
    auto step = [&](bool adapt) {
      for (Eigen::Index j = 0; j < d; ++j) eps(j) = rng.normal();
      prop = u + std::exp(log_scale) * (chol * eps);
      const double lp_prop = target(prop, scratch);
      const double log_alpha = lp_prop - lp;
      const double alpha =
          std::isfinite(log_alpha) ? std::min(1.0, std::exp(log_alpha)) : 0.0;
      const bool accept = std::isfinite(lp_prop) && std::log(rng.uniform()) < log_alpha;
      if (accept) {
        u = prop;
        lp = lp_prop;
      }
      if (adapt) {
        ++rm_iter;
        log_scale += std::pow(static_cast<double>(rm_iter), -0.6) *
                     (alpha - cfg.target_accept);
      }
      return accept;
    };

    // Averaging the scale over the terminal buffer damps the noise of the
    // last Robbins-Monro iterates before the proposal is frozen.
    const int avg_from = windows.empty() ? cfg.warmup / 2 : windows.back();
    double log_scale_sum = 0.0;
    long log_scale_n = 0;
    for (int it = 0; it < cfg.warmup; ++it) {
      step(true);
      if (it >= avg_from) {
        log_scale_sum += log_scale;
        ++log_scale_n;
      }
      if (next_window < windows.size()) {
        const int start = next_window == 0
                              ? static_cast<int>(0.15 * cfg.warmup)
                              : windows[next_window - 1];
        if (it >= start) acc.add(u);
        if (it + 1 == windows[next_window]) {
          if (acc.count() > d + 2) {
            // First window: variances only. Later windows: full covariance.
            Matrix next = detail::regularized(acc.covariance(), acc.count(),
                                              windows_done > 0, cov);
            Eigen::LLT<Matrix> llt(next);
            if (llt.info() == Eigen::Success) {
              cov = next;
              chol = llt.matrixL();
              log_scale = std::log(base_scale);
              rm_iter = 0;
            }
            ++windows_done;
          }
          acc.reset();
          ++next_window;
        }
      }
    }

    if (log_scale_n > 0) log_scale = log_scale_sum / static_cast<double>(log_scale_n);

    ChainStats& st = stats[c];
    st.init_attempts = attempts;
    st.at_first_retained = {cov, std::exp(log_scale)};
    Matrix& out = chain_values[c];
    out.resize(per_chain, d);
    long accepted = 0;
    const long total = static_cast<long>(per_chain) * cfg.thin;
    for (long it = 0; it < total; ++it) {
      if (step(false)) ++accepted;
      if ((it + 1) % cfg.thin == 0) {
        to_constrained(u, scratch);
        out.row(static_cast<Eigen::Index>(it / cfg.thin)) =
            Eigen::Map<const Eigen::RowVectorXd>(scratch.data(), d);
      }
    }
    st.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
    st.at_last_retained = {cov, std::exp(log_scale)};
  });

  McmcResult res;
  auto& dr = res.draws;
  dr.names = names;
  dr.chains = cfg.chains;
  dr.seed = cfg.seed;
  dr.values.resize(static_cast<Eigen::Index>(cfg.chains) * per_chain, d);
  for (int c = 0; c < cfg.chains; ++c) {
    dr.values.middleRows(static_cast<Eigen::Index>(c) * per_chain, per_chain) =
        chain_values[static_cast<std::size_t>(c)];
    for (int s = 0; s < per_chain; ++s) {
      dr.chain_ids.push_back(c + 1);
      dr.draw_ids.push_back(s + 1);
    }
  }
  res.chains = std::move(stats);
  if (!dr.values.allFinite())
    throw error("sampler produced non-finite draws");
  return res;
}

namespace detail {

// Splits every chain into halves, dropping the middle draw of odd chains.
inline std::vector<std::vector<double>> split_chains(
    const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2)
    throw insufficient_draws("diagnostics need at least 2 chains");
  std::vector<std::vector<double>> out;
  for (const auto& ch : chains) {
    const std::size_t half = ch.size() / 2;
    if (half < 4)
      throw insufficient_draws("diagnostics need at least 4 draws per half-chain");
    out.emplace_back(ch.begin(), ch.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(ch.end() - static_cast<std::ptrdiff_t>(half), ch.end());
  }
  const std::size_t n = out.front().size();
  for (const auto& ch : out)
    if (ch.size() != n)
      throw insufficient_draws("diagnostics need equal-length chains");
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double rhat_of(const std::vector<std::vector<double>>& chains) {
  const auto m = static_cast<double>(chains.size());
  const auto n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& ch : chains) {
    means.push_back(mean_of(ch));
    vars.push_back(var_of(ch));
  }
  const double w = mean_of(vars);
  const double b = n * var_of(means);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  (void)m;
  return std::sqrt(((n - 1.0) / n * w + b / n) / w);
}

inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// Normal scores of pooled fractional ranks, ties averaged.
inline std::vector<std::vector<double>> rank_normalize(
    const std::vector<std::vector<double>>& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (const auto& ch : chains)
    for (double x : ch) all.emplace_back(x, all.size());
  const auto s = static_cast<double>(all.size());
  std::vector<double> ranks(all.size());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[all[k].second] = r;
    i = j + 1;
  }
  std::vector<std::vector<double>> out;
  std::size_t k = 0;
  for (const auto& ch : chains) {
    std::vector<double> z;
    for (std::size_t i = 0; i < ch.size(); ++i, ++k)
      z.push_back(normal_quantile((ranks[k] - 0.375) / (s + 0.25)));
    out.push_back(std::move(z));
  }
  return out;
}

// Multi-chain ESS with Geyer's initial monotone sequence.
inline double ess_of(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m), acov0(m);
  for (std::size_t c = 0; c < m; ++c) means[c] = mean_of(chains[c]);
  auto acov = [&](std::size_t c, std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i)
      s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
    return s / static_cast<double>(n);
  };
  for (std::size_t c = 0; c < m; ++c) acov0[c] = acov(c, 0);
  const auto nd = static_cast<double>(n);
  double chain_var_mean = 0.0;
  for (std::size_t c = 0; c < m; ++c) chain_var_mean += acov0[c] * nd / (nd - 1.0);
  chain_var_mean /= static_cast<double>(m);
  double var_plus = chain_var_mean * (nd - 1.0) / nd;
  if (m > 1) var_plus += var_of(means);
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  auto rho_at = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += acov(c, lag);
    s /= static_cast<double>(m);
    return 1.0 - (chain_var_mean - s) / var_plus;
  };

  std::vector<double> rho{1.0};
  rho.push_back(n > 1 ? rho_at(1) : 0.0);
  std::size_t t = 0;
  while (t + 3 < n) {
    const double r2 = rho_at(t + 2);
    const double r3 = rho_at(t + 3);
    if (!(r2 + r3 > 0.0)) break;
    rho.push_back(r2);
    rho.push_back(r3);
    t += 2;
  }
  const std::size_t max_t = rho.size() - 2;  // last complete even index
  // Initial monotone sequence on the paired sums.
  for (std::size_t k = 2; k + 1 <= max_t + 1; k += 2) {
    const double prev = rho[k - 2] + rho[k - 1];
    const double cur = rho[k] + rho[k + 1];
    if (cur > prev) {
      rho[k] = prev / 2.0;
      rho[k + 1] = prev / 2.0;
    }
  }
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < rho.size(); k += 2) tau += 2.0 * (rho[k] + rho[k + 1]);
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

}  // namespace detail

/// Split-R̂ per parameter (Gelman–Rubin on half-chains, raw scale).
inline Vector split_rhat(const PosteriorDraws& draws) {
  Vector out(draws.p());
  for (Eigen::Index j = 0; j < draws.p(); ++j)
    out(j) = detail::rhat_of(detail::split_chains(draws.by_chain(j)));
  return out;
}

inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  return detail::rhat_of(detail::split_chains(chains));
}

/// Bulk effective sample size: rank-normalized split chains.
inline Vector ess_bulk(const PosteriorDraws& draws) {
  Vector out(draws.p());
  for (Eigen::Index j = 0; j < draws.p(); ++j)
    out(j) = detail::ess_of(
        detail::rank_normalize(detail::split_chains(draws.by_chain(j))));
  return out;
}

inline double ess_bulk(const std::vector<std::vector<double>>& chains) {
  return detail::ess_of(detail::rank_normalize(detail::split_chains(chains)));
}

/// ESS on the raw scale; used for Monte Carlo standard errors of means.
inline double ess_mean(const std::vector<std::vector<double>>& chains) {
  return detail::ess_of(detail::split_chains(chains));
}

}  // namespace nfloo
