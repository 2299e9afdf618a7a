#pragma once

// Leave-one-out predictive moments and conditional pointwise log densities
// for a zero-mean multivariate normal z ~ N(0, C).
//
// With g = C⁻¹z and c̄ = diag(C⁻¹), the conditional z_i | z_{-i} is normal
// with mean z_i − g_i/c̄_ii and variance 1/c̄_ii, so
//
//   log p(z_i | z_{-i}) = −½ log 2π + ½ log c̄_ii − ½ g_i² / c̄_ii.
//
// Only g and c̄ are needed, which is why models with a cheap precision
// matrix can skip the covariance entirely.

#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nfloo/covkit.hpp"
#include "nfloo/draws.hpp"
#include "nfloo/parallel.hpp"

namespace nfloo {

inline constexpr double half_log_two_pi = 0.91893853320467274178;

struct LooMoments {
  Vector mu;
  Vector sigma;
};

/// g = C⁻¹z and c̄ = diag(C⁻¹).
struct PointwiseTerms {
  Vector g;
  Vector cbar;
};

/// Zero-mean normal described by its precision matrix.
struct PrecisionForm {
  SparseMatrix precision;
  Vector z;
};

/// Zero-mean normal described by its covariance matrix.
struct CovarianceForm {
  SpdMatrix covariance;
  Vector z;
};

using GaussianForm = std::variant<PrecisionForm, CovarianceForm>;

inline PointwiseTerms pointwise_terms(const CholeskyFactor& cov_factor,
                                      const Vector& z) {
  if (z.size() != cov_factor.n())
    throw dimension_mismatch("observation length does not match covariance");
  return {solve(cov_factor, z), inverse_diagonal(cov_factor)};
}

inline PointwiseTerms pointwise_terms_from_precision(
    const SparseMatrix& precision, const Vector& z) {
  if (precision.rows() != precision.cols())
    throw dimension_mismatch("precision must be square");
  if (z.size() != precision.rows())
    throw dimension_mismatch("observation length does not match precision");
  Vector cbar = precision.storage().diagonal();
  for (Eigen::Index i = 0; i < cbar.size(); ++i)
    if (!(cbar(i) > 0.0) || !std::isfinite(cbar(i)))
      throw not_positive_definite(static_cast<std::size_t>(i));
  return {precision.storage() * z, std::move(cbar)};
}

inline PointwiseTerms pointwise_terms_from_precision(const SpdMatrix& precision,
                                                     const Vector& z) {
  return pointwise_terms_from_precision(
      SparseMatrix::from_dense(precision.values()), z);
}

inline PointwiseTerms pointwise_terms(const GaussianForm& form) {
  return std::visit(
      [](const auto& f) -> PointwiseTerms {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, PrecisionForm>)
          return pointwise_terms_from_precision(f.precision, f.z);
        else
          return pointwise_terms(cholesky(f.covariance), f.z);
      },
      form);
}

inline LooMoments loo_moments(const Vector& z, const PointwiseTerms& t) {
  LooMoments m;
  m.mu = z.array() - t.g.array() / t.cbar.array();
  m.sigma = t.cbar.array().rsqrt();
  return m;
}

inline LooMoments loo_moments(const CholeskyFactor& cov_factor,
                              const Vector& z) {
  return loo_moments(z, pointwise_terms(cov_factor, z));
}

inline LooMoments loo_moments_from_precision(const SparseMatrix& precision,
                                             const Vector& z) {
  return loo_moments(z, pointwise_terms_from_precision(precision, z));
}

inline LooMoments loo_moments(const GaussianForm& form) {
  const Vector& z = std::visit([](const auto& f) -> const Vector& { return f.z; },
                               form);
  return loo_moments(z, pointwise_terms(form));
}

/// Conditional log density from g_i and c̄_ii.
inline double log_pointwise_density(double g, double cbar) {
  if (!(cbar > 0.0))
    throw non_positive_variance("c̄_ii must be positive");
  return -half_log_two_pi + 0.5 * std::log(cbar) - 0.5 * g * g / cbar;
}

/// Univariate normal log density; the (mean, sd) form of the same quantity.
inline double log_normal_density(double y, double mu, double sigma) {
  if (!(sigma > 0.0))
    throw non_positive_variance("standard deviation must be positive");
  const double r = (y - mu) / sigma;
  return -half_log_two_pi - std::log(sigma) - 0.5 * r * r;
}

inline Vector log_pointwise_density(const PointwiseTerms& t) {
  Vector out(t.g.size());
  for (Eigen::Index i = 0; i < t.g.size(); ++i)
    out(i) = log_pointwise_density(t.g(i), t.cbar(i));
  return out;
}

/// A model that maps one parameter vector to a zero-mean normal for the
/// (possibly transformed) observations.
template <typename M>
concept ModelAdapter = requires(const M& m, std::span<const double> theta) {
  { m.gaussian_form(theta) } -> std::convertible_to<GaussianForm>;
  { m.n_obs() } -> std::convertible_to<Eigen::Index>;
  { m.param_names() } -> std::convertible_to<std::vector<std::string>>;
};

struct FailedDraw {
  Eigen::Index row;  // row in the source PosteriorDraws
  int chain;
  int draw;
  std::string message;
};

/// S×N conditional pointwise log-likelihood, rows = draws, natural log.
struct LogLikMatrix {
  Eigen::MatrixXd values;
  std::vector<int> chain_ids;
  std::vector<int> draw_ids;
  // Draws whose covariance could not be factorized; excluded from `values`.
  std::vector<FailedDraw> failed;

  Eigen::Index s() const noexcept { return values.rows(); }
  Eigen::Index n() const noexcept { return values.cols(); }
};

enum class DrawFailurePolicy { propagate, record };

struct LoglikOptions {
  std::size_t jobs = 1;
  DrawFailurePolicy on_failure = DrawFailurePolicy::propagate;
};

/// Maps model parameter names onto draw columns.
inline std::vector<Eigen::Index> column_map(
    const std::vector<std::string>& names, const PosteriorDraws& draws) {
  std::vector<Eigen::Index> cols;
  cols.reserve(names.size());
  for (const auto& n : names) cols.push_back(draws.column(n));
  return cols;
}

template <ModelAdapter M>
LogLikMatrix build_loglik_matrix(const M& model, const PosteriorDraws& draws,
                                 const LoglikOptions& opt = {}) {
  if (draws.s() < 1) throw validation_error("no posterior draws");
  const auto cols = column_map(model.param_names(), draws);
  const Eigen::Index s_total = draws.s();
  const Eigen::Index n = model.n_obs();

  Eigen::MatrixXd rows(s_total, n);
  std::vector<std::string> failure(static_cast<std::size_t>(s_total));

  parallel_for(static_cast<std::size_t>(s_total), opt.jobs, [&](std::size_t s) {
    const auto si = static_cast<Eigen::Index>(s);
    std::vector<double> theta(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
      theta[j] = draws.values(si, cols[j]);
    try {
      const Vector lp = log_pointwise_density(pointwise_terms(
          model.gaussian_form(std::span<const double>(theta))));
      if (lp.size() != n) throw dimension_mismatch("model returned wrong N");
      if (!lp.allFinite()) throw non_positive_variance("non-finite log density");
      rows.row(si) = lp.transpose();
    } catch (const error& e) {
      if (opt.on_failure == DrawFailurePolicy::propagate)
        throw draw_error(s, e.what());
      failure[s] = e.what();
      if (failure[s].empty()) failure[s] = "unknown failure";
    }
  });

  LogLikMatrix out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index s = 0; s < s_total; ++s) {
    const auto& msg = failure[static_cast<std::size_t>(s)];
    if (msg.empty())
      keep.push_back(s);
    else
      out.failed.push_back({s, draws.chain_ids[s], draws.draw_ids[s], msg});
  }
  out.values.resize(static_cast<Eigen::Index>(keep.size()), n);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.values.row(static_cast<Eigen::Index>(k)) = rows.row(keep[k]);
    out.chain_ids.push_back(draws.chain_ids[keep[k]]);
    out.draw_ids.push_back(draws.draw_ids[keep[k]]);
  }
  return out;
}

}  // namespace nfloo
