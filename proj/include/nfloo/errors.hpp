#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nfloo {

// Base for everything the library throws on purpose.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class not_positive_definite : public error {
 public:
  explicit not_positive_definite(std::size_t pivot)
      : error("matrix is not positive definite (pivot " +
              std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class dimension_mismatch : public error {
 public:
  using error::error;
};

class singular_matrix : public error {
 public:
  using error::error;
};

class non_positive_variance : public error {
 public:
  using error::error;
};

class insufficient_draws : public error {
 public:
  using error::error;
};

class initialization_failure : public error {
 public:
  using error::error;
};

class non_finite_log_posterior : public error {
 public:
  using error::error;
};

class insufficient_tail : public error {
 public:
  using error::error;
};

class degenerate_tail : public error {
 public:
  using error::error;
};

// Bad user input: malformed files, inconsistent dimensions, inadmissible
// parameters supplied on the command line.
class validation_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

// Wraps a failure raised while evaluating one posterior draw.
class draw_error : public error {
 public:
  draw_error(std::size_t draw, const std::string& what)
      : error("draw " + std::to_string(draw) + ": " + what), draw_(draw) {}
  std::size_t draw() const noexcept { return draw_; }

 private:
  std::size_t draw_;
};

}  // namespace nfloo
