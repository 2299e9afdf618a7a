#pragma once

// Exact leave-one-out for the SAR model by refitting with y_i replaced by a
// free parameter y_i^mis. The full covariance is kept, so the prior on the
// remaining observations is unchanged. For each refit draw θ_s the held-out
// density is the conditional normal p(y_i | y_{-i}, θ_s), whose mean is
// evaluated on the vector with y_i^mis substituted (it does not depend on
// the substituted value).

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfloo/mcmc.hpp"
#include "nfloo/pointwise_loo.hpp"
#include "nfloo/psis.hpp"
#include "nfloo/sar_model.hpp"

namespace nfloo {

struct FoldDiagnostics {
  double max_rhat = 0.0;
  double min_ess_bulk = 0.0;
  double rhat_y_mis = 0.0;
  std::vector<double> acceptance;
  bool converged = false;
};

struct FoldResult {
  Eigen::Index i = 0;  // 0-based held-out index
  bool failed = false;
  std::string message;
  double elpd_exact = 0.0;
  double mcse = 0.0;
  Vector y_mis_draws;
  // Per-draw LOO predictive moments and log density at the true y_i.
  Vector mu;
  Vector sigma;
  Vector log_density;
  std::vector<int> chain_ids;
  FoldDiagnostics diagnostics;
};

struct ExactLooOptions {
  std::size_t jobs = 1;
  double rhat_threshold = 1.01;
  // Folds to run (0-based); empty means all observations.
  std::vector<Eigen::Index> folds;
  // Starting values for y_i^mis, indexed by observation; empty means the
  // LOO predictive mean at the least-squares starting point.
  std::vector<double> y_mis_init;
};

/// Seed for fold i, distinct from the full-data fit streams.
inline std::uint64_t fold_seed(std::uint64_t seed, Eigen::Index i) {
  return splitmix64(seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(i + 1)));
}

/// Conditional moments of y_i given the other entries of `y`.
inline std::pair<double, double> conditional_moments(const SarModel& model,
                                                     const SarParams& params,
                                                     const Vector& y,
                                                     Eigen::Index i) {
  const auto [g, cbar] = model.pointwise_terms_at(params, y, i);
  if (!(cbar > 0.0)) throw non_positive_variance("c̄_ii must be positive");
  return {y(i) - g / cbar, 1.0 / std::sqrt(cbar)};
}

/// Log density of the held-out y_i at θ with y_i^mis substituted.
inline double fold_log_density(const SarModel& model, const SarParams& params,
                               Eigen::Index i, double y_mis) {
  Vector y = model.data().y;
  y(i) = y_mis;
  const auto [mu, sd] = conditional_moments(model, params, y, i);
  return log_normal_density(model.data().y(i), mu, sd);
}

inline FoldResult run_fold(const SarModel& model, Eigen::Index i,
                           const SamplerConfig& cfg,
                           std::optional<double> y_mis_init = std::nullopt,
                           double rhat_threshold = 1.01) {
  FoldResult res;
  res.i = i;
  const Eigen::Index n = model.n_obs();
  if (i < 0 || i >= n)
    throw validation_error("fold index " + std::to_string(i) + " out of range");

  try {
    const auto all_names = model.param_names();
    const auto mask = model.free_mask();
    const auto all_tf = model.transforms();
    std::vector<std::size_t> free_idx;
    std::vector<std::string> names;
    std::vector<ParamTransform> tf;
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j]) {
        free_idx.push_back(j);
        names.push_back(all_names[j]);
        tf.push_back(all_tf[j]);
      }
    names.push_back("y_mis");
    tf.push_back(ParamTransform::identity());

    const SarParams start = model.initial_params();
    const std::vector<double> start_packed = model.pack(start);
    auto expand = [&](std::span<const double> free, std::vector<double>& full) {
      full = start_packed;
      for (std::size_t k = 0; k < free_idx.size(); ++k) full[free_idx[k]] = free[k];
      SarParams p = model.unpack(full);
      model.apply_fixed(p);
      return p;
    };

    const auto all_sd = model.proposal_scales();
    const auto cm = conditional_moments(model, start, model.data().y, i);
    std::vector<double> init;
    std::vector<double> sd;
    for (std::size_t j : free_idx) {
      init.push_back(start_packed[j]);
      sd.push_back(all_sd[j]);
    }
    init.push_back(y_mis_init ? *y_mis_init : cm.first);
    sd.push_back(std::isfinite(cm.second) && cm.second > 0.0 ? cm.second : 1.0);

    const Vector& y_obs = model.data().y;
    auto log_post = [&](std::span<const double> theta) {
      std::vector<double> full;
      const SarParams p = expand(theta.first(free_idx.size()), full);
      Vector y = y_obs;
      y(i) = theta.back();
      return model.log_posterior(p, y);
    };

    SamplerConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed(cfg.seed, i);
    const McmcResult fit = run(log_post, names, tf, init, fold_cfg, sd);
    const PosteriorDraws& dr = fit.draws;
    const Eigen::Index s = dr.s();
    const Eigen::Index ymis_col = dr.p() - 1;

    res.y_mis_draws = dr.values.col(ymis_col);
    res.mu.resize(s);
    res.sigma.resize(s);
    res.log_density.resize(s);
    res.chain_ids = dr.chain_ids;
    std::vector<double> row(static_cast<std::size_t>(dr.p())), full;
    for (Eigen::Index k = 0; k < s; ++k) {
      for (Eigen::Index j = 0; j < dr.p(); ++j) row[static_cast<std::size_t>(j)] = dr.values(k, j);
      const SarParams p =
          expand(std::span<const double>(row).first(free_idx.size()), full);
      Vector y = y_obs;
      y(i) = row.back();
      const auto [mu, sd] = conditional_moments(model, p, y, i);
      res.mu(k) = mu;
      res.sigma(k) = sd;
      res.log_density(k) = log_normal_density(y_obs(i), mu, sd);
    }
    res.elpd_exact = log_sum_exp(res.log_density) - std::log(static_cast<double>(s));

    // MCSE of log(mean p) by the delta method with a multi-chain ESS.
    const double lmax = res.log_density.maxCoeff();
    std::vector<std::vector<double>> rel(static_cast<std::size_t>(dr.chains));
    for (Eigen::Index k = 0; k < s; ++k)
      rel[static_cast<std::size_t>(dr.chain_ids[k] - 1)].push_back(
          std::exp(res.log_density(k) - lmax));
    const Vector p_rel = (res.log_density.array() - lmax).exp();
    const double mean_p = p_rel.mean();
    const double var_p = (p_rel.array() - mean_p).square().sum() / std::max<double>(1.0, double(s - 1));

    FoldDiagnostics& dg = res.diagnostics;
    for (const auto& c : fit.chains) dg.acceptance.push_back(c.acceptance_rate);
    if (dr.chains >= 2 && dr.s() / dr.chains >= 8) {
      const Vector rh = split_rhat(dr);
      const Vector ess = ess_bulk(dr);
      dg.max_rhat = rh.maxCoeff();
      dg.rhat_y_mis = rh(ymis_col);
      dg.min_ess_bulk = ess.minCoeff();
      dg.converged = dg.max_rhat < rhat_threshold;
      const double ess_p = var_p > 0.0 ? ess_mean(rel) : static_cast<double>(s);
      res.mcse = std::sqrt(var_p / std::max(ess_p, 1.0)) / mean_p;
    } else {
      dg.max_rhat = std::numeric_limits<double>::quiet_NaN();
      dg.rhat_y_mis = dg.max_rhat;
      dg.min_ess_bulk = dg.max_rhat;
      dg.converged = false;
      res.mcse = std::sqrt(var_p / static_cast<double>(s)) / mean_p;
    }
  } catch (const error& e) {
    res.failed = true;
    res.message = "fold " + std::to_string(i + 1) + ": " + e.what();
  }
  return res;
}

struct ExactLooReport {
  std::vector<FoldResult> folds;

  double total() const {
    double t = 0.0;
    for (const auto& f : folds)
      if (!f.failed) t += f.elpd_exact;
    return t;
  }

  // Total over successful folds whose observation is not in `excluded`.
  double total_excluding(std::span<const Eigen::Index> excluded) const {
    double t = 0.0;
    for (const auto& f : folds)
      if (!f.failed &&
          std::find(excluded.begin(), excluded.end(), f.i) == excluded.end())
        t += f.elpd_exact;
    return t;
  }

  std::size_t failed_count() const {
    return static_cast<std::size_t>(
        std::count_if(folds.begin(), folds.end(), [](const auto& f) { return f.failed; }));
  }
};

inline ExactLooReport run_all(const SarModel& model, const SamplerConfig& cfg,
                              const ExactLooOptions& opt = {}) {
  std::vector<Eigen::Index> folds = opt.folds;
  if (folds.empty())
    for (Eigen::Index i = 0; i < model.n_obs(); ++i) folds.push_back(i);
  for (auto i : folds)
    if (i < 0 || i >= model.n_obs())
      throw validation_error("fold index " + std::to_string(i + 1) + " out of range");
  if (!opt.y_mis_init.empty() &&
      static_cast<Eigen::Index>(opt.y_mis_init.size()) != model.n_obs())
    throw validation_error("y_mis_init must have one value per observation");

  SamplerConfig fold_cfg = cfg;
  fold_cfg.jobs = 1;
  ExactLooReport rep;
  rep.folds.resize(folds.size());
  parallel_for(folds.size(), opt.jobs, [&](std::size_t k) {
    const Eigen::Index i = folds[k];
    std::optional<double> init;
    if (!opt.y_mis_init.empty()) init = opt.y_mis_init[static_cast<std::size_t>(i)];
    rep.folds[k] = run_fold(model, i, fold_cfg, init, opt.rhat_threshold);
  });
  return rep;
}

struct CheckSummary {
  double mean_draws = 0.0;
  double sd_draws = 0.0;
  double mean_mixture = 0.0;
  double sd_mixture = 0.0;
  double z_mean = 0.0;  // standardized discrepancy of the means
  double z_sd = 0.0;    // standardized discrepancy of the sds
  bool passed(double limit = 4.0) const {
    return std::abs(z_mean) < limit && std::abs(z_sd) < limit;
  }
};

/// Compares y_i^mis draws with the mixture of N(mu_s, sigma_s) over draws.
///
/// Standard errors use the effective sample size of the y_i^mis draws and
/// the normal-theory standard error of a standard deviation.
inline CheckSummary predictive_check(const FoldResult& fold,
                                     std::span<const double> mu,
                                     std::span<const double> sigma) {
  if (fold.failed) throw validation_error("predictive check on a failed fold");
  if (mu.size() != sigma.size() || mu.empty())
    throw dimension_mismatch("predictive check: moment arrays disagree");
  CheckSummary c;
  const Vector& yd = fold.y_mis_draws;
  const auto s = static_cast<double>(yd.size());
  c.mean_draws = yd.mean();
  c.sd_draws = std::sqrt((yd.array() - c.mean_draws).square().sum() / (s - 1.0));

  const auto m = static_cast<double>(mu.size());
  double mu_mean = 0.0, second = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    mu_mean += mu[k];
    second += sigma[k] * sigma[k] + mu[k] * mu[k];
  }
  mu_mean /= m;
  second /= m;
  c.mean_mixture = mu_mean;
  c.sd_mixture = std::sqrt(std::max(second - mu_mean * mu_mean, 0.0));

  double ess = s;
  const int chains = fold.chain_ids.empty()
                         ? 1
                         : *std::max_element(fold.chain_ids.begin(), fold.chain_ids.end());
  if (chains >= 2 && static_cast<Eigen::Index>(fold.chain_ids.size()) == yd.size()) {
    std::vector<std::vector<double>> by(static_cast<std::size_t>(chains));
    for (Eigen::Index k = 0; k < yd.size(); ++k)
      by[static_cast<std::size_t>(fold.chain_ids[k] - 1)].push_back(yd(k));
    try {
      ess = std::min(s, ess_mean(by));
    } catch (const insufficient_draws&) {
    }
  }
  double mu_var = 0.0;
  for (double v : mu) mu_var += (v - mu_mean) * (v - mu_mean);
  mu_var /= std::max(1.0, m - 1.0);
  const double se_mean =
      std::sqrt(c.sd_draws * c.sd_draws / ess + mu_var / m);
  const double se_sd = c.sd_draws / std::sqrt(2.0 * ess);
  c.z_mean = (c.mean_draws - c.mean_mixture) / se_mean;
  c.z_sd = (c.sd_draws - c.sd_mixture) / se_sd;
  return c;
}

inline CheckSummary predictive_check(const FoldResult& fold) {
  return predictive_check(
      fold, std::span<const double>(fold.mu.data(), static_cast<std::size_t>(fold.mu.size())),
      std::span<const double>(fold.sigma.data(), static_cast<std::size_t>(fold.sigma.size())));
}

}  // namespace nfloo
