#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nfloo/mcmc.hpp"
#include "nfloo/pointwise_loo.hpp"
#include "nfloo/sar_model.hpp"

namespace nfloo {

/// Samples the SAR posterior. Fixed parameters appear as constant columns so
/// the draws always carry the full `model.param_names()` set.
inline McmcResult fit_sar(const SarModel& model, const SamplerConfig& cfg) {
  const auto all_names = model.param_names();
  const auto mask = model.free_mask();
  const auto all_tf = model.transforms();
  const SarParams start = model.initial_params();
  const auto start_packed = model.pack(start);
  const auto all_sd = model.proposal_scales();

  std::vector<std::size_t> free_idx;
  std::vector<std::string> names;
  std::vector<ParamTransform> tf;
  std::vector<double> init;
  std::vector<double> sd;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) {
      free_idx.push_back(j);
      names.push_back(all_names[j]);
      tf.push_back(all_tf[j]);
      init.push_back(start_packed[j]);
      sd.push_back(all_sd[j]);
    }
  if (free_idx.empty()) throw validation_error("every parameter is fixed");

  auto log_post = [&](std::span<const double> theta) {
    std::vector<double> full = start_packed;
    for (std::size_t k = 0; k < free_idx.size(); ++k) full[free_idx[k]] = theta[k];
    return model.log_posterior(model.unpack(full));
  };
  McmcResult res = run(log_post, names, tf, init, cfg, sd);
  if (free_idx.size() == all_names.size()) return res;

  PosteriorDraws full;
  full.names = all_names;
  full.chains = res.draws.chains;
  full.seed = res.draws.seed;
  full.chain_ids = res.draws.chain_ids;
  full.draw_ids = res.draws.draw_ids;
  full.values.resize(res.draws.s(), static_cast<Eigen::Index>(all_names.size()));
  for (Eigen::Index j = 0; j < full.values.cols(); ++j)
    full.values.col(j).setConstant(start_packed[static_cast<std::size_t>(j)]);
  for (std::size_t k = 0; k < free_idx.size(); ++k)
    full.values.col(static_cast<Eigen::Index>(free_idx[k])) =
        res.draws.values.col(static_cast<Eigen::Index>(k));
  res.draws = std::move(full);
  return res;
}

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw validation_error("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ParamSummary {
  std::string name;
  double mean, sd, median, q25, q75;
  double rhat, ess_bulk;  // NaN when the draws do not support diagnostics
};

inline std::vector<ParamSummary> summarize(const PosteriorDraws& d) {
  std::vector<ParamSummary> out;
  Vector rh = Vector::Constant(d.p(), std::numeric_limits<double>::quiet_NaN());
  Vector ess = rh;
  try {
    rh = split_rhat(d);
    ess = ess_bulk(d);
  } catch (const insufficient_draws&) {
  }
  for (Eigen::Index j = 0; j < d.p(); ++j) {
    const Vector col = d.values.col(j);
    std::vector<double> v(col.data(), col.data() + col.size());
    const double m = col.mean();
    const double sd = col.size() > 1
                          ? std::sqrt((col.array() - m).square().sum() / double(col.size() - 1))
                          : 0.0;
    out.push_back({d.names[static_cast<std::size_t>(j)], m, sd, quantile(v, 0.5),
                   quantile(v, 0.25), quantile(v, 0.75), rh(j), ess(j)});
  }
  return out;
}

/// Posterior mean over draws of the LOO predictive mean of each y_i.
template <ModelAdapter M>
Vector loo_predictive_means(const M& model, const PosteriorDraws& draws,
                            const Vector& y) {
  const auto cols = column_map(model.param_names(), draws);
  Vector acc = Vector::Zero(model.n_obs());
  Eigen::Index used = 0;
  std::vector<double> theta(cols.size());
  for (Eigen::Index s = 0; s < draws.s(); ++s) {
    for (std::size_t j = 0; j < cols.size(); ++j) theta[j] = draws.values(s, cols[j]);
    try {
      const GaussianForm f = model.gaussian_form(std::span<const double>(theta));
      const LooMoments m = loo_moments(f);
      const Vector& z = std::visit([](const auto& g) -> const Vector& { return g.z; }, f);
      acc += m.mu + (y - z);
      ++used;
    } catch (const error&) {
    }
  }
  if (used == 0) throw validation_error("no usable draws for predictive means");
  return acc / static_cast<double>(used);
}

}  // namespace nfloo
