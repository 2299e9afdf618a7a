#include <gtest/gtest.h>

#include <nfloo/psis.hpp>

#include <random>

#include "support/oracles.hpp"

using namespace nfloo;

namespace {

std::vector<double> gpd_sample(std::uint64_t seed, std::size_t n, double k, double sigma) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) {
    const double p = u(gen);
    v = std::abs(k) < 1e-12 ? -sigma * std::log1p(-p)
                            : sigma * (std::pow(1.0 - p, -k) - 1.0) / k;
  }
  return x;
}

Vector heavy_log_ratios(std::uint64_t seed, Eigen::Index s) {
  // log of a Pareto(shape 1) variable is Exp(1), so the weights have k = 1.
  std::mt19937_64 gen(seed);
  std::exponential_distribution<double> e(1.0);
  Vector lr(s);
  for (Eigen::Index i = 0; i < s; ++i) lr(i) = e(gen);
  return lr;
}

LogLikMatrix wrap(Matrix v) {
  LogLikMatrix m;
  m.values = std::move(v);
  for (Eigen::Index s = 0; s < m.values.rows(); ++s) {
    m.chain_ids.push_back(1);
    m.draw_ids.push_back(static_cast<int>(s + 1));
  }
  return m;
}

}  // namespace

TEST(FitGpd, RecoversHalf) {
  const auto fit = fit_gpd(gpd_sample(1, 2000, 0.5, 1.0));
  EXPECT_GE(fit.k, 0.4);
  EXPECT_LE(fit.k, 0.6);
  EXPECT_GT(fit.sigma, 0.0);
}

TEST(FitGpd, RecoversExponential) {
  const auto fit = fit_gpd(gpd_sample(2, 2000, 0.0, 1.0));
  EXPECT_GE(fit.k, -0.1);
  EXPECT_LE(fit.k, 0.1);
  EXPECT_NEAR(fit.sigma, 1.0, 0.15);
}

TEST(FitGpd, Errors) {
  EXPECT_THROW(fit_gpd({1, 1, 1, 1, 1}), degenerate_tail);
  EXPECT_THROW(fit_gpd({1, 2, 3, 4}), insufficient_tail);
  EXPECT_THROW(fit_gpd({1, 2, 3, 4, -1}), validation_error);
  EXPECT_THROW(fit_gpd({1, 2, 3, 4, 0}), validation_error);
}

TEST(FitGpd, Deterministic) {
  const auto x = gpd_sample(3, 500, 0.3, 2.0);
  const auto a = fit_gpd(x);
  auto shuffled = x;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto b = fit_gpd(shuffled);
  EXPECT_EQ(a.k, b.k);
  EXPECT_EQ(a.sigma, b.sigma);
}

TEST(GpdQuantile, InvertsCdf) {
  for (double k : {-0.3, 0.0, 0.4, 1.2}) {
    const double q = gpd_quantile(0.7, k, 2.0);
    const double cdf = std::abs(k) < 1e-12 ? 1 - std::exp(-q / 2.0)
                                           : 1 - std::pow(1 + k * q / 2.0, -1 / k);
    EXPECT_NEAR(cdf, 0.7, 1e-12);
  }
}

TEST(TailLength, Formula) {
  EXPECT_EQ(psis_tail_length(4000), 190);
  EXPECT_EQ(psis_tail_length(100), 20);
  EXPECT_EQ(psis_tail_length(1000), 95);
}

TEST(SmoothColumn, EqualRatiosGiveUniformWeights) {
  const auto sc = smooth_column(Vector::Constant(1000, -3.2));
  for (Eigen::Index i = 0; i < 1000; ++i)
    EXPECT_NEAR(sc.log_weights(i), -std::log(1000.0), 1e-12);
  EXPECT_EQ(sc.khat, -std::numeric_limits<double>::infinity());
}

TEST(SmoothColumn, OutlierIsFlaggedAndCapped) {
  Vector lr = heavy_log_ratios(4, 4000);
  lr(17) = 30.0;
  const auto sc = smooth_column(lr);
  EXPECT_GT(sc.khat, 0.7);
  const Vector raw_norm = lr.array() - log_sum_exp(lr);
  EXPECT_LT(sc.log_weights.maxCoeff(), raw_norm.maxCoeff());
  EXPECT_EQ(sc.tail_len, 190);
}

TEST(SmoothColumn, WellBehavedColumnHasSmallKhat) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd(0.0, 0.3);
  Vector lr(4000);
  for (auto& v : lr) v = nd(gen);
  EXPECT_LT(smooth_column(lr).khat, 0.5);
}

TEST(SmoothColumn, Properties) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const Vector lr = heavy_log_ratios(seed, 2000) * 0.8;
    const auto sc = smooth_column(lr);
    // Normalization.
    EXPECT_NEAR(log_sum_exp(sc.log_weights), 0.0, 1e-10);

    // Shift invariance.
    const auto shifted = smooth_column((lr.array() + 123.4).matrix());
    EXPECT_NEAR(shifted.khat, sc.khat, 1e-12);
    EXPECT_LT((shifted.log_weights - sc.log_weights).cwiseAbs().maxCoeff(), 1e-12);

    // Order preserved over the whole column (and so within the tail).
    std::vector<Eigen::Index> order(2000);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lr(a) < lr(b); });
    for (std::size_t k = 1; k < order.size(); ++k)
      EXPECT_LE(sc.log_weights(order[k - 1]), sc.log_weights(order[k]) + 1e-15);

    // Cap: undo the normalization using an untouched body draw.
    const Eigen::Index body = order[0];
    const double c = lr(body) - sc.log_weights(body);
    EXPECT_LE((sc.log_weights.array() + c).maxCoeff(), lr.maxCoeff() + 1e-9);
  }
}

TEST(SmoothColumn, SmallSampleFallsBackToTruncation) {
  Vector lr(10);
  lr << 0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 9.0;
  const auto sc = smooth_column(lr);
  EXPECT_TRUE(std::isnan(sc.khat));
  EXPECT_NEAR(log_sum_exp(sc.log_weights), 0.0, 1e-12);
  // Largest weight truncated at mean·√S.
  const Vector w = (lr.array() - lr.maxCoeff()).exp();
  const double cap = w.mean() * std::sqrt(10.0);
  const Vector wt = w.cwiseMin(cap);
  EXPECT_NEAR(sc.log_weights(9), std::log(wt(9) / wt.sum()), 1e-12);
}

TEST(SmoothColumn, Errors) {
  EXPECT_THROW(smooth_column(Vector(0)), insufficient_draws);
  Vector bad = Vector::Zero(30);
  bad(3) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(smooth_column(bad), validation_error);
}

TEST(Khat, Categories) {
  const KhatThresholds th;
  EXPECT_EQ(th.classify(0.2), KhatCategory::good);
  EXPECT_EQ(th.classify(0.5), KhatCategory::good);
  EXPECT_EQ(th.classify(0.6), KhatCategory::ok);
  EXPECT_EQ(th.classify(0.7), KhatCategory::ok);
  EXPECT_EQ(th.classify(0.71), KhatCategory::bad);
  EXPECT_EQ(th.classify(-std::numeric_limits<double>::infinity()), KhatCategory::good);
  EXPECT_EQ(th.classify(std::numeric_limits<double>::quiet_NaN()), KhatCategory::unknown);
  EXPECT_STREQ(to_string(KhatCategory::bad), "bad");
  EXPECT_THROW((KhatThresholds{0.8, 0.7}.validate()), validation_error);
  EXPECT_THROW((KhatThresholds{0.0, 0.7}.validate()), validation_error);
}

TEST(ElpdApprox, ConstantLoglik) {
  const auto r = elpd_approx(wrap(Matrix::Constant(400, 3, -1.25)));
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(r.elpd_pointwise(i), -1.25, 1e-12);
  EXPECT_NEAR(r.total(), -3.75, 1e-12);
  EXPECT_NEAR(r.n_eff(0), 400.0, 1e-8);
}

TEST(ElpdApprox, ConjugateNormalMean) {
  // y_i ~ N(μ, 1), μ ~ N(0, 2²); exact posterior draws of μ.
  const double s = 1.0, m0 = 0.0, s0 = 2.0;
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  const Eigen::Index n = 30, draws = 4000;
  Vector y(n);
  for (auto& v : y) v = 0.7 + s * nd(gen);
  const auto [pm, psd] = oracles::conjugate_posterior(y, s, m0, s0);
  Matrix ll(draws, n);
  for (Eigen::Index k = 0; k < draws; ++k) {
    const double mu = pm + psd * nd(gen);
    for (Eigen::Index i = 0; i < n; ++i) ll(k, i) = oracles::normal_logpdf(y(i), mu, s * s);
  }
  const auto r = elpd_approx(wrap(ll), 2);
  int within = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ref = oracles::conjugate_loo(y, i, s, m0, s0);
    if (std::abs(r.elpd_pointwise(i) - ref) < 3.0 * r.mcse_elpd(i)) ++within;
    EXPECT_LT(r.khat(i), 0.5);
  }
  EXPECT_GE(within, 29);
}

TEST(ElpdApprox, ParallelMatchesSerial) {
  std::mt19937_64 gen(7);
  const Matrix ll = oracles::random_matrix(gen, 500, 6);
  const auto a = elpd_approx(wrap(ll), 1);
  const auto b = elpd_approx(wrap(ll), 4);
  EXPECT_EQ(a.elpd_pointwise, b.elpd_pointwise);
  EXPECT_EQ(a.khat, b.khat);
}

TEST(ElpdApprox, Errors) {
  EXPECT_THROW(elpd_approx(wrap(Matrix(0, 3))), validation_error);
  Matrix bad = Matrix::Zero(50, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(elpd_approx(wrap(bad)), validation_error);
}
