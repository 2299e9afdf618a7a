#pragma once

// Pareto-smoothed importance sampling for leave-one-out cross-validation.
//
// For each observation the raw log importance ratios are −log p(y_i | ·, θ_s).
// The M largest ratios are replaced by expected order statistics of a
// generalized Pareto distribution fitted to their exceedances over the
// (S−M)th order statistic, then capped at the largest raw ratio.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nfloo/covkit.hpp"
#include "nfloo/errors.hpp"
#include "nfloo/parallel.hpp"
#include "nfloo/pointwise_loo.hpp"

namespace nfloo {

// Estimator constants (Zhang–Stephens profile posterior with a weakly
// informative prior, then shrinkage of k toward 0.5).
namespace gpd_constants {
inline constexpr int min_grid_points = 30;
inline constexpr double grid_prior = 3.0;
inline constexpr double shrink_pseudo_obs = 10.0;
inline constexpr double shrink_target = 0.5;
inline constexpr std::size_t min_tail = 5;
inline constexpr Eigen::Index min_draws = 25;
}  // namespace gpd_constants

struct GpdFit {
  double k;
  double sigma;
};

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_sum_exp(const Vector& v) {
  return log_sum_exp(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

namespace detail {

// Fit on exceedances sorted ascending; no argument checking.
inline GpdFit fit_gpd_sorted(std::span<const double> x) {
  using namespace gpd_constants;
  const std::size_t n = x.size();
  const auto nd = static_cast<double>(n);
  const std::size_t m =
      static_cast<std::size_t>(min_grid_points) +
      static_cast<std::size_t>(std::floor(std::sqrt(nd)));
  const double xstar =
      x[static_cast<std::size_t>(std::floor(nd / 4.0 + 0.5)) - 1];
  const double xmax = x[n - 1];

  std::vector<double> theta(m), ltheta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / xmax +
               (1.0 - std::sqrt(static_cast<double>(m) /
                                (static_cast<double>(j + 1) - 0.5))) /
                   grid_prior / xstar;
    const double a = -theta[j];
    double k = 0.0;
    for (double xi : x) k += std::log1p(a * xi);
    k /= nd;
    const double l = nd * (std::log(a / k) - k - 1.0);
    ltheta[j] = std::isnan(l) ? -std::numeric_limits<double>::infinity() : l;
  }
  const double lse = log_sum_exp(ltheta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    theta_hat += theta[j] * std::exp(ltheta[j] - lse);

  double k = 0.0;
  for (double xi : x) k += std::log1p(-theta_hat * xi);
  k /= nd;
  const double sigma = -k / theta_hat;
  k = k * nd / (nd + shrink_pseudo_obs) +
      shrink_pseudo_obs * shrink_target / (nd + shrink_pseudo_obs);
  if (!std::isfinite(k)) k = std::numeric_limits<double>::infinity();
  return {k, sigma};
}

}  // namespace detail

/// Generalized Pareto fit to positive exceedances.
inline GpdFit fit_gpd(std::vector<double> tail) {
  if (tail.size() < gpd_constants::min_tail)
    throw insufficient_tail("GPD fit needs at least " +
                            std::to_string(gpd_constants::min_tail) +
                            " exceedances");
  for (double v : tail)
    if (!(v > 0.0) || !std::isfinite(v))
      throw validation_error("GPD exceedances must be positive and finite");
  std::sort(tail.begin(), tail.end());
  if (tail.front() == tail.back())
    throw degenerate_tail("all tail values are equal");
  return detail::fit_gpd_sorted(tail);
}

/// Quantile function of GPD(k, sigma) at probability p.
inline double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

inline Eigen::Index psis_tail_length(Eigen::Index s) {
  const auto sd = static_cast<double>(s);
  return static_cast<Eigen::Index>(
      std::ceil(std::min(0.2 * sd, 3.0 * std::sqrt(sd))));
}

struct SmoothedColumn {
  Vector log_weights;  // normalized: logsumexp = 0
  // Sentinels: −∞ when the tail is degenerate, NaN when S is too small to
  // fit (truncated importance sampling was used instead).
  double khat;
  Eigen::Index tail_len;
};

namespace detail {

inline Vector normalize_log_weights(Vector lw) {
  lw.array() -= log_sum_exp(lw);
  return lw;
}

// Truncated importance sampling: w ≤ mean(w)·√S.
inline Vector truncated_is(const Vector& log_ratios) {
  const Eigen::Index s = log_ratios.size();
  Vector lw = log_ratios.array() - log_ratios.maxCoeff();
  const double cap =
      log_sum_exp(lw) - std::log(static_cast<double>(s)) + 0.5 * std::log(static_cast<double>(s));
  lw = lw.cwiseMin(cap);
  return normalize_log_weights(lw);
}

}  // namespace detail

inline SmoothedColumn smooth_column(const Vector& log_ratios) {
  const Eigen::Index s = log_ratios.size();
  if (s < 1) throw insufficient_draws("empty log-ratio column");
  if (!log_ratios.allFinite())
    throw validation_error("log ratios must be finite");
  if (s < gpd_constants::min_draws)
    return {detail::truncated_is(log_ratios),
            std::numeric_limits<double>::quiet_NaN(), 0};

  const double max_raw = log_ratios.maxCoeff();
  Vector lw = log_ratios.array() - max_raw;
  const Eigen::Index m = psis_tail_length(s);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lw(a) < lw(b); });

  double khat = -std::numeric_limits<double>::infinity();
  const std::size_t first_tail = static_cast<std::size_t>(s - m);
  const double tail_min = lw(order[first_tail]);
  const double tail_max = lw(order.back());
  if (static_cast<std::size_t>(m) >= gpd_constants::min_tail &&
      std::abs(tail_max - tail_min) >= std::numeric_limits<double>::epsilon() / 100.0) {
    const double cutoff = lw(order[first_tail - 1]);
    const double exp_cutoff = std::exp(cutoff);
    std::vector<double> exceed(static_cast<std::size_t>(m));
    for (Eigen::Index t = 0; t < m; ++t)
      exceed[static_cast<std::size_t>(t)] =
          std::exp(lw(order[first_tail + static_cast<std::size_t>(t)])) - exp_cutoff;
    const GpdFit fit = detail::fit_gpd_sorted(exceed);
    khat = fit.k;
    if (std::isfinite(fit.k)) {
      for (Eigen::Index t = 0; t < m; ++t) {
        const double p = (static_cast<double>(t + 1) - 0.5) / static_cast<double>(m);
        lw(order[first_tail + static_cast<std::size_t>(t)]) =
            std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff);
      }
    }
  }
  lw = lw.cwiseMin(0.0);
  lw.array() += max_raw;
  return {detail::normalize_log_weights(std::move(lw)), khat, m};
}

enum class KhatCategory { good, ok, bad, unknown };

struct KhatThresholds {
  double good = 0.5;  // k ≤ good
  double ok = 0.7;    // good < k ≤ ok; above is bad

  void validate() const {
    if (!(good > 0.0 && good <= ok && std::isfinite(ok)))
      throw validation_error("khat thresholds must satisfy 0 < good <= ok < inf");
  }

  KhatCategory classify(double k) const {
    if (std::isnan(k)) return KhatCategory::unknown;
    if (k <= good) return KhatCategory::good;
    if (k <= ok) return KhatCategory::ok;
    return KhatCategory::bad;
  }
};

inline const char* to_string(KhatCategory c) {
  switch (c) {
    case KhatCategory::good: return "good";
    case KhatCategory::ok: return "ok";
    case KhatCategory::bad: return "bad";
    case KhatCategory::unknown: return "unknown";
  }
  return "unknown";
}

struct PsisResult {
  Matrix log_weights;  // S×N, each column normalized
  Vector khat;
  Vector n_eff;
  Vector elpd_pointwise;
  Vector mcse_elpd;  // delta-method Monte Carlo standard error
  std::vector<Eigen::Index> tail_len;

  double total() const { return elpd_pointwise.sum(); }
};

/// Approximate LOO from an S×N log-likelihood matrix.
inline PsisResult elpd_approx(const LogLikMatrix& loglik, std::size_t jobs = 1) {
  const Eigen::Index s = loglik.s();
  const Eigen::Index n = loglik.n();
  if (s < 1 || n < 1) throw validation_error("empty log-likelihood matrix");
  if (!loglik.values.allFinite())
    throw validation_error("log-likelihood matrix has non-finite entries");

  PsisResult r;
  r.log_weights.resize(s, n);
  r.khat.resize(n);
  r.n_eff.resize(n);
  r.elpd_pointwise.resize(n);
  r.mcse_elpd.resize(n);
  r.tail_len.resize(static_cast<std::size_t>(n));

  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const Vector ll = loglik.values.col(i);
    SmoothedColumn sc = smooth_column(-ll);
    const Vector& lw = sc.log_weights;
    const double elpd = log_sum_exp(Vector(lw + ll));
    const Vector w = lw.array().exp();
    // Var of the weighted mean of p(y_i|θ_s), propagated through log.
    const Vector lik_rel = (ll.array() - elpd).exp();
    const double var_rel = (w.array().square() * (lik_rel.array() - 1.0).square()).sum();
    r.log_weights.col(i) = lw;
    r.khat(i) = sc.khat;
    r.n_eff(i) = 1.0 / w.squaredNorm();
    r.elpd_pointwise(i) = elpd;
    r.mcse_elpd(i) = std::sqrt(var_rel);
    r.tail_len[ii] = sc.tail_len;
  });
  return r;
}

}  // namespace nfloo
