#pragma once

// Lagged simultaneous autoregressive model
//
//   (I − ρW) y = Xβ + ε,   ε ~ N(0, σ²I),
//
// rewritten as the zero-mean normal
//
//   z = y − W̃⁻¹Xβ ~ N(0, σ²(W̃ᵀW̃)⁻¹),   W̃ = I − ρW,
//
// whose precision σ⁻²W̃ᵀW̃ is as sparse as W̃ᵀW̃.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfloo/covkit.hpp"
#include "nfloo/pointwise_loo.hpp"
#include "nfloo/rng.hpp"
#include "nfloo/transforms.hpp"

namespace nfloo {

struct SarData {
  Vector y;
  Matrix x;  // N×P design, including an intercept column if wanted
  SparseMatrix w;
  std::vector<std::string> predictor_names;  // P labels
  std::string response_name = "y";

  Eigen::Index n() const noexcept { return y.size(); }
  Eigen::Index p() const noexcept { return x.cols(); }

  void validate() const {
    const Eigen::Index n = y.size();
    if (n < 1) throw validation_error("SAR data: empty response");
    if (x.rows() != n)
      throw validation_error("SAR data: design has " +
                             std::to_string(x.rows()) + " rows, response has " +
                             std::to_string(n));
    if (w.rows() != n || w.cols() != n)
      throw validation_error("SAR data: weights must be " + std::to_string(n) +
                             "x" + std::to_string(n));
    if (!predictor_names.empty() &&
        static_cast<Eigen::Index>(predictor_names.size()) != x.cols())
      throw validation_error("SAR data: predictor name count mismatch");
    for (const auto& t : w.triplets()) {
      if (t.row == t.col && t.value != 0.0)
        throw validation_error("SAR data: weights must have a zero diagonal");
      if (t.value < 0.0)
        throw validation_error("SAR data: weights must be non-negative");
    }
    if (!y.allFinite() || !x.allFinite())
      throw validation_error("SAR data: non-finite values");
  }
};

struct SarParams {
  Vector beta;
  double sigma = 1.0;
  double rho = 0.0;
};

/// Scales every row of w to sum to one; all-zero rows stay zero.
inline SparseMatrix row_standardize(const SparseMatrix& w) {
  Vector sums = Vector::Zero(w.rows());
  const auto trips = w.triplets();
  for (const auto& t : trips) sums(t.row) += t.value;
  std::vector<Triplet> out;
  out.reserve(trips.size());
  for (const auto& t : trips)
    out.push_back({t.row, t.col, sums(t.row) != 0.0 ? t.value / sums(t.row)
                                                    : t.value});
  return SparseMatrix(w.rows(), w.cols(), out);
}

/// Binary rook-contiguity weights on a rows×cols grid, row-major numbering.
inline SparseMatrix lattice_weights(Eigen::Index rows, Eigen::Index cols) {
  std::vector<Triplet> t;
  auto id = [cols](Eigen::Index r, Eigen::Index c) { return r * cols + c; };
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (r > 0) t.push_back({id(r, c), id(r - 1, c), 1.0});
      if (c > 0) t.push_back({id(r, c), id(r, c - 1), 1.0});
      if (c + 1 < cols) t.push_back({id(r, c), id(r, c + 1), 1.0});
      if (r + 1 < rows) t.push_back({id(r, c), id(r + 1, c), 1.0});
    }
  return SparseMatrix(rows * cols, rows * cols, t);
}

/// W̃ = I − ρW, keeping W's pattern plus the diagonal.
inline SparseMatrix build_w_tilde(const SparseMatrix& w, double rho) {
  if (w.rows() != w.cols())
    throw dimension_mismatch("weights must be square");
  SparseMatrix::storage_type id(w.rows(), w.cols());
  id.setIdentity();
  SparseMatrix::storage_type wt = id - rho * w.storage();
  return SparseMatrix(std::move(wt));
}

/// σ⁻²W̃ᵀW̃. Throws singular_matrix if W̃ is singular.
inline SparseMatrix precision(const SarParams& params, const SparseMatrix& w) {
  const SparseMatrix wt = build_w_tilde(w, params.rho);
  SparseLu lu(wt);  // nonsingularity check
  SparseMatrix::storage_type q =
      (wt.storage().transpose() * wt.storage()) /
      (params.sigma * params.sigma);
  return SparseMatrix(std::move(q));
}

/// z = y − W̃⁻¹Xβ via a sparse solve.
inline Vector transformed_observation(const SarData& data,
                                      const SarParams& params) {
  const SparseMatrix wt = build_w_tilde(data.w, params.rho);
  return data.y - sparse_solve(wt, data.x * params.beta);
}

/// Open interval of ρ on which I − ρW stays nonsingular and the model is
/// stable: (1/λ_min, 1/λ_max) over the real eigenvalues of W.
struct RhoInterval {
  double lo;
  double hi;
  bool contains(double rho) const noexcept { return rho > lo && rho < hi; }
};

struct SigmaPrior {
  enum class Kind { half_normal, half_cauchy, flat } kind = Kind::half_normal;
  // Non-positive scale means "5·sd(y)", resolved when the model is built.
  double scale = 0.0;
};

struct BetaPrior {
  enum class Kind { flat, normal } kind = Kind::flat;
  double mean = 0.0;
  double sd = 1.0;
};

struct RhoPrior {
  // Uniform on the admissible interval intersected with [lo, hi].
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

struct PriorSpec {
  BetaPrior beta;
  SigmaPrior sigma;
  RhoPrior rho;
  // Parameters held fixed instead of sampled.
  std::optional<Vector> fixed_beta;
  std::optional<double> fixed_sigma;
  std::optional<double> fixed_rho;
};

inline double sample_sd(const Vector& v) {
  if (v.size() < 2) return 1.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() /
                   static_cast<double>(v.size() - 1));
}

/// Precomputed SAR model for one dataset.
///
/// Holds the eigenvalues of W (for the admissible ρ interval and a fast
/// log|det W̃|) and the resolved prior. Immutable after construction, so one
/// instance can be shared by any number of threads.
class SarModel {
 public:
  explicit SarModel(SarData data, PriorSpec prior = {})
      : data_(std::move(data)), prior_(std::move(prior)) {
    data_.validate();
    if (data_.predictor_names.empty())
      for (Eigen::Index j = 0; j < data_.p(); ++j)
        data_.predictor_names.push_back("x" + std::to_string(j + 1));
    if (prior_.sigma.scale <= 0.0) {
      const double sd = sample_sd(data_.y);
      prior_.sigma.scale = sd > 0.0 && std::isfinite(sd) ? 5.0 * sd : 1.0;
    }
    if (prior_.fixed_beta && prior_.fixed_beta->size() != data_.p())
      throw validation_error("fixed beta has wrong length");

    Eigen::EigenSolver<Matrix> es(data_.w.to_dense(), false);
    if (es.info() != Eigen::Success)
      throw error("eigen decomposition of W failed");
    eigenvalues_ = es.eigenvalues();
    double lmin = std::numeric_limits<double>::infinity();
    double lmax = -std::numeric_limits<double>::infinity();
    for (const auto& l : eigenvalues_) {
      if (std::abs(l.imag()) > 1e-10 * std::max(1.0, std::abs(l))) continue;
      lmin = std::min(lmin, l.real());
      lmax = std::max(lmax, l.real());
    }
    const double tiny = 1e-12;
    admissible_.lo = lmin < -tiny ? 1.0 / lmin
                                  : -std::numeric_limits<double>::infinity();
    admissible_.hi = lmax > tiny ? 1.0 / lmax
                                 : std::numeric_limits<double>::infinity();
    rho_support_ = {std::max(admissible_.lo, prior_.rho.lo),
                    std::min(admissible_.hi, prior_.rho.hi)};
    if (!(rho_support_.lo < rho_support_.hi))
      throw validation_error("rho prior does not overlap admissible interval");
    if (prior_.fixed_rho && !rho_support_.contains(*prior_.fixed_rho))
      throw validation_error("fixed rho is not admissible");
  }

  const SarData& data() const noexcept { return data_; }
  const PriorSpec& prior() const noexcept { return prior_; }
  Eigen::Index n_obs() const noexcept { return data_.n(); }
  const RhoInterval& admissible() const noexcept { return admissible_; }
  // Admissible interval intersected with the ρ prior bounds.
  const RhoInterval& rho_support() const noexcept { return rho_support_; }
  const Eigen::VectorXcd& eigenvalues() const noexcept { return eigenvalues_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (const auto& p : data_.predictor_names) names.push_back("b_" + p);
    names.push_back("sigma");
    names.push_back("rho");
    return names;
  }

  SarParams unpack(std::span<const double> theta) const {
    const auto p = static_cast<std::size_t>(data_.p());
    if (theta.size() != p + 2)
      throw dimension_mismatch("SAR parameter vector has wrong length");
    SarParams out;
    out.beta = Eigen::Map<const Vector>(theta.data(), data_.p());
    out.sigma = theta[p];
    out.rho = theta[p + 1];
    return out;
  }

  std::vector<double> pack(const SarParams& params) const {
    std::vector<double> out(params.beta.data(),
                            params.beta.data() + params.beta.size());
    out.push_back(params.sigma);
    out.push_back(params.rho);
    return out;
  }

  /// Σ_k log|1 − ρλ_k| from the precomputed spectrum of W.
  double log_abs_det_w_tilde(double rho) const {
    double s = 0.0;
    for (const auto& l : eigenvalues_) s += std::log(std::abs(1.0 - rho * l));
    return s;
  }

  /// ½ log det(W̃ᵀW̃) through a sparse Cholesky factorization.
  double log_abs_det_w_tilde_sparse(double rho) const {
    const SparseMatrix wt = build_w_tilde(data_.w, rho);
    SparseMatrix wtw(SparseMatrix::storage_type(wt.storage().transpose() *
                                                wt.storage()));
    return 0.5 * SparseCholesky(wtw).log_det();
  }

  /// W̃y − Xβ for an arbitrary response vector.
  Vector residual(const SarParams& params, const Vector& y) const {
    return y - params.rho * (data_.w.storage() * y) - data_.x * params.beta;
  }

  /// Full normalized log density of y.
  double log_likelihood(const SarParams& params, const Vector& y) const {
    const auto n = static_cast<double>(data_.n());
    const Vector r = residual(params, y);
    return log_abs_det_w_tilde(params.rho) - n * half_log_two_pi -
           n * std::log(params.sigma) -
           r.squaredNorm() / (2.0 * params.sigma * params.sigma);
  }

  double log_prior(const SarParams& params) const {
    if (!(params.sigma > 0.0) || !rho_support_.contains(params.rho))
      return -std::numeric_limits<double>::infinity();
    double lp = 0.0;
    if (prior_.beta.kind == BetaPrior::Kind::normal) {
      const auto z =
          (params.beta.array() - prior_.beta.mean) / prior_.beta.sd;
      lp += -0.5 * z.square().sum();
    }
    const double u = params.sigma / prior_.sigma.scale;
    switch (prior_.sigma.kind) {
      case SigmaPrior::Kind::half_normal: lp += -0.5 * u * u; break;
      case SigmaPrior::Kind::half_cauchy: lp += -std::log1p(u * u); break;
      case SigmaPrior::Kind::flat: break;
    }
    if (std::isfinite(rho_support_.hi - rho_support_.lo))
      lp -= std::log(rho_support_.hi - rho_support_.lo);
    return lp;
  }

  /// Log posterior up to a constant, −∞ outside the parameter space.
  double log_posterior(const SarParams& params, const Vector& y) const {
    const double lp = log_prior(params);
    if (!std::isfinite(lp)) return lp;
    const double ll = log_likelihood(params, y);
    return std::isfinite(ll) ? lp + ll
                             : -std::numeric_limits<double>::infinity();
  }

  double log_posterior(const SarParams& params) const {
    return log_posterior(params, data_.y);
  }

  /// Zero-mean precision form for the pointwise LOO computation.
  GaussianForm gaussian_form(std::span<const double> theta) const {
    return gaussian_form(unpack(theta), data_.y);
  }

  PrecisionForm gaussian_form(const SarParams& params, const Vector& y) const {
    if (!(params.sigma > 0.0))
      throw non_positive_variance("sigma must be positive");
    if (!admissible_.contains(params.rho))
      throw not_positive_definite(0);
    const SparseMatrix wt = build_w_tilde(data_.w, params.rho);
    const SparseLu lu(wt);
    PrecisionForm f;
    f.z = y - lu.solve(data_.x * params.beta);
    f.precision = SparseMatrix(SparseMatrix::storage_type(
        (wt.storage().transpose() * wt.storage()) /
        (params.sigma * params.sigma)));
    return f;
  }

  /// g_i and c̄_ii for a single observation without forming z:
  /// C⁻¹z = σ⁻²W̃ᵀ(W̃y − Xβ), so only column i of W̃ is touched.
  std::pair<double, double> pointwise_terms_at(const SarParams& params,
                                               const Vector& y,
                                               Eigen::Index i) const {
    const Vector r = residual(params, y);
    const double s2 = params.sigma * params.sigma;
    // Column i of W̃ = e_i − ρ·W(:, i).
    double g = r(i);
    double c = 1.0;
    const auto& ws = data_.w.storage();
    for (SparseMatrix::storage_type::InnerIterator it(ws, i); it; ++it) {
      const double v = -params.rho * it.value();
      if (it.row() == i) {
        g += v * r(i);
        c += 2.0 * v + v * v;
      } else {
        g += v * r(it.row());
        c += v * v;
      }
    }
    return {g / s2, c / s2};
  }

  /// Least-squares starting point with ρ = 0 (or the fixed values).
  SarParams initial_params() const {
    SarParams p;
    p.beta = data_.x.colPivHouseholderQr().solve(data_.y);
    const Vector r = data_.y - data_.x * p.beta;
    const double dof = std::max<double>(1.0, double(data_.n() - data_.p()));
    p.sigma = std::max(std::sqrt(r.squaredNorm() / dof), 1e-3);
    p.rho = rho_support_.contains(0.0)
                ? 0.0
                : 0.5 * (finite_or(rho_support_.lo, rho_support_.hi - 1.0) +
                         finite_or(rho_support_.hi, rho_support_.lo + 1.0));
    apply_fixed(p);
    return p;
  }

  /// Rough posterior scales on the unconstrained sampling scale, in pack()
  /// order: least-squares standard errors for beta, 1/sqrt(2n) for log sigma
  /// and 1/sqrt(n) for rho mapped through the interval transform.
  std::vector<double> proposal_scales() const {
    const SarParams p0 = initial_params();
    const double n = static_cast<double>(data_.n());
    const Vector r = data_.y - data_.x * p0.beta;
    const double dof = std::max(1.0, n - static_cast<double>(data_.p()));
    double s2 = r.squaredNorm() / dof;
    if (!(s2 > 0.0)) s2 = 1.0;
    const Matrix xtx = data_.x.transpose() * data_.x;
    const Matrix xtx_inv = xtx.completeOrthogonalDecomposition().pseudoInverse();
    std::vector<double> out;
    for (Eigen::Index j = 0; j < data_.p(); ++j) {
      const double v = s2 * xtx_inv(j, j);
      out.push_back(v > 0.0 && std::isfinite(v) ? std::sqrt(v) : 1.0);
    }
    out.push_back(1.0 / std::sqrt(2.0 * n));
    const ParamTransform t = transforms().back();
    const double u0 = t.inverse(p0.rho);
    const double h = 1e-6;
    const double dr = (t.forward(u0 + h) - t.forward(u0 - h)) / (2.0 * h);
    const double su = (1.0 / std::sqrt(n)) / dr;
    out.push_back(dr > 0.0 && std::isfinite(su) ? std::min(su, 2.0) : 1.0);
    return out;
  }

  void apply_fixed(SarParams& p) const {
    if (prior_.fixed_beta) p.beta = *prior_.fixed_beta;
    if (prior_.fixed_sigma) p.sigma = *prior_.fixed_sigma;
    if (prior_.fixed_rho) p.rho = *prior_.fixed_rho;
  }

  // Free (sampled) parameters in pack() order.
  std::vector<bool> free_mask() const {
    std::vector<bool> m(static_cast<std::size_t>(data_.p()) + 2, true);
    if (prior_.fixed_beta)
      std::fill(m.begin(), m.begin() + data_.p(), false);
    if (prior_.fixed_sigma) m[static_cast<std::size_t>(data_.p())] = false;
    if (prior_.fixed_rho) m[static_cast<std::size_t>(data_.p()) + 1] = false;
    return m;
  }

  std::vector<ParamTransform> transforms() const {
    std::vector<ParamTransform> t(static_cast<std::size_t>(data_.p()),
                                  ParamTransform::identity());
    t.push_back(ParamTransform::positive());
    t.push_back(ParamTransform::interval(rho_support_.lo, rho_support_.hi));
    return t;
  }

 private:
  static double finite_or(double v, double fallback) {
    return std::isfinite(v) ? v : fallback;
  }

  SarData data_;
  PriorSpec prior_;
  Eigen::VectorXcd eigenvalues_;
  RhoInterval admissible_{};
  RhoInterval rho_support_{};
};

/// Log posterior of `params` for `data` under `prior`.
inline double log_posterior(const SarData& data, const SarParams& params,
                            const PriorSpec& prior = {}) {
  return SarModel(data, prior).log_posterior(params);
}

/// Draws y = W̃⁻¹(Xβ + ε), ε ~ N(0, σ²I), from stream 0 of `seed`.
inline SarData simulate(const SparseMatrix& w, const SarParams& params,
                        const Matrix& x, std::uint64_t seed) {
  if (w.rows() != w.cols() || x.rows() != w.rows())
    throw dimension_mismatch("simulate: weights and design disagree");
  if (x.cols() != params.beta.size())
    throw dimension_mismatch("simulate: beta length does not match design");
  if (!(params.sigma > 0.0)) throw validation_error("sigma must be positive");
  SarData probe{Vector::Zero(w.rows()), x, w, {}, "y"};
  const SarModel model(probe, {});
  if (!model.admissible().contains(params.rho))
    throw validation_error("rho = " + std::to_string(params.rho) +
                           " is outside the admissible interval (" +
                           std::to_string(model.admissible().lo) + ", " +
                           std::to_string(model.admissible().hi) + ")");
  rng_stream rng(seed, 0);
  Vector e(w.rows());
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = params.sigma * rng.normal();
  SarData out = probe;
  out.y = sparse_solve(build_w_tilde(w, params.rho), x * params.beta + e);
  return out;
}

}  // namespace nfloo
