#pragma once

#include <cmath>
#include <limits>

namespace nfloo {

/// Bijection between the real line and a parameter's support.
///
/// Bounds may be infinite: both finite gives a scaled logistic map, one
/// finite gives a shifted exponential, none gives the identity.
class ParamTransform {
 public:
  static ParamTransform identity() { return {}; }
  static ParamTransform positive() { return interval(0.0, inf()); }
  static ParamTransform interval(double lo, double hi) {
    ParamTransform t;
    t.lo_ = lo;
    t.hi_ = hi;
    return t;
  }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

  // Unconstrained → constrained.
  double forward(double u) const {
    if (has_lo() && has_hi()) return lo_ + (hi_ - lo_) * logistic(u);
    if (has_lo()) return lo_ + std::exp(u);
    if (has_hi()) return hi_ - std::exp(u);
    return u;
  }

  // Constrained → unconstrained.
  double inverse(double x) const {
    if (has_lo() && has_hi()) {
      const double p = (x - lo_) / (hi_ - lo_);
      return std::log(p) - std::log1p(-p);
    }
    if (has_lo()) return std::log(x - lo_);
    if (has_hi()) return std::log(hi_ - x);
    return x;
  }

  // log |d forward / du|.
  double log_jacobian(double u) const {
    if (has_lo() && has_hi()) {
      // log σ(u) + log σ(−u), written to stay finite for large |u|.
      const double a = -std::abs(u);
      return std::log(hi_ - lo_) + a - 2.0 * std::log1p(std::exp(a));
    }
    if (has_lo() || has_hi()) return u;
    return 0.0;
  }

 private:
  static constexpr double inf() {
    return std::numeric_limits<double>::infinity();
  }
  static double logistic(double u) {
    return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u))
                    : std::exp(u) / (1.0 + std::exp(u));
  }
  bool has_lo() const noexcept { return std::isfinite(lo_); }
  bool has_hi() const noexcept { return std::isfinite(hi_); }

  double lo_ = -inf();
  double hi_ = inf();
};

}  // namespace nfloo
