#pragma once

// Dense and sparse symmetric positive-definite linear algebra.
//
// The dense Cholesky path is the reference implementation. Sparse inputs use
// Eigen's compressed storage with natural (identity) ordering: fill-in is not
// minimised, which costs time on large irregular graphs but never accuracy.

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "nfloo/errors.hpp"

namespace nfloo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double symmetry_tolerance = 1e-12;

/// Dense symmetric matrix intended to be positive definite.
///
/// Construction checks squareness and symmetry (relative tolerance
/// `symmetry_tolerance` against the largest entry) and stores the
/// symmetrized matrix (A + Aᵀ)/2. Positive definiteness is only established
/// by a successful `cholesky`.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& a) {
    if (a.rows() != a.cols())
      throw dimension_mismatch("SpdMatrix must be square");
    if (a.rows() < 1) throw dimension_mismatch("SpdMatrix must have n >= 1");
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= symmetry_tolerance * scale))
      throw validation_error("SpdMatrix is not symmetric");
    values_ = 0.5 * (a + a.transpose());
  }

  static SpdMatrix identity(Eigen::Index n) {
    return SpdMatrix(Matrix::Identity(n, n));
  }

  Eigen::Index n() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const {
    return values_(i, j);
  }

 private:
  Matrix values_;
};

struct Triplet {
  Eigen::Index row;
  Eigen::Index col;
  double value;
};

/// Compressed sparse matrix built from unique (row, col, value) triplets.
class SparseMatrix {
 public:
  using storage_type = Eigen::SparseMatrix<double>;

  SparseMatrix() = default;

  SparseMatrix(Eigen::Index n_rows, Eigen::Index n_cols,
               std::span<const Triplet> triplets)
      : m_(n_rows, n_cols) {
    if (n_rows < 0 || n_cols < 0)
      throw dimension_mismatch("negative sparse matrix dimension");
    std::set<std::pair<Eigen::Index, Eigen::Index>> seen;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(triplets.size());
    for (const auto& t : triplets) {
      if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols)
        throw validation_error("sparse triplet index out of range (" +
                               std::to_string(t.row) + ", " +
                               std::to_string(t.col) + ")");
      if (!seen.emplace(t.row, t.col).second)
        throw validation_error("duplicate sparse triplet (" +
                               std::to_string(t.row) + ", " +
                               std::to_string(t.col) + ")");
      trips.emplace_back(t.row, t.col, t.value);
    }
    m_.setFromTriplets(trips.begin(), trips.end());
    m_.makeCompressed();
  }

  explicit SparseMatrix(storage_type m) : m_(std::move(m)) {
    m_.makeCompressed();
  }

  static SparseMatrix from_dense(const Matrix& a) {
    storage_type m = a.sparseView(0.0, 0.0);
    return SparseMatrix(std::move(m));
  }

  static SparseMatrix identity(Eigen::Index n) {
    storage_type m(n, n);
    m.setIdentity();
    return SparseMatrix(std::move(m));
  }

  Eigen::Index rows() const noexcept { return m_.rows(); }
  Eigen::Index cols() const noexcept { return m_.cols(); }
  Eigen::Index nnz() const noexcept { return m_.nonZeros(); }
  const storage_type& storage() const noexcept { return m_; }

  Matrix to_dense() const { return Matrix(m_); }

  // Stored entries in column-major order.
  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(static_cast<std::size_t>(m_.nonZeros()));
    for (Eigen::Index k = 0; k < m_.outerSize(); ++k)
      for (storage_type::InnerIterator it(m_, k); it; ++it)
        out.push_back({it.row(), it.col(), it.value()});
    return out;
  }

  double coeff(Eigen::Index i, Eigen::Index j) const { return m_.coeff(i, j); }

 private:
  storage_type m_;
};

/// Lower-triangular Cholesky factor L with L·Lᵀ = A.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {}

  Eigen::Index n() const noexcept { return lower_.rows(); }
  const Matrix& lower() const noexcept { return lower_; }

 private:
  Matrix lower_;
};

/// Cholesky–Crout factorization. Throws not_positive_definite on the first
/// pivot that is not strictly positive (or not finite).
inline CholeskyFactor cholesky(const SpdMatrix& a) {
  const Eigen::Index n = a.n();
  const Matrix& av = a.values();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = av(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw not_positive_definite(static_cast<std::size_t>(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = av(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return CholeskyFactor(std::move(l));
}

inline Vector solve(const CholeskyFactor& f, const Vector& b) {
  if (b.size() != f.n())
    throw dimension_mismatch("solve: rhs has length " +
                             std::to_string(b.size()) + ", factor has n = " +
                             std::to_string(f.n()));
  Vector y = f.lower().triangularView<Eigen::Lower>().solve(b);
  return f.lower().transpose().triangularView<Eigen::Upper>().solve(y);
}

/// Diagonal of A⁻¹ from its factor: [A⁻¹]_ii = Σ_k ([L⁻¹]_ki)².
inline Vector inverse_diagonal(const CholeskyFactor& f) {
  const Eigen::Index n = f.n();
  const Matrix linv = f.lower().triangularView<Eigen::Lower>().solve(
      Matrix::Identity(n, n));
  return linv.colwise().squaredNorm().transpose();
}

inline double log_det(const CholeskyFactor& f) {
  return 2.0 * f.lower().diagonal().array().log().sum();
}

inline Vector sparse_mat_vec(const SparseMatrix& m, const Vector& v) {
  if (v.size() != m.cols())
    throw dimension_mismatch("sparse_mat_vec: vector has length " +
                             std::to_string(v.size()) + ", matrix has " +
                             std::to_string(m.cols()) + " columns");
  return m.storage() * v;
}

/// Sparse LU factorization of a square nonsingular matrix.
class SparseLu {
 public:
  explicit SparseLu(const SparseMatrix& m) : n_(m.rows()) {
    if (m.rows() != m.cols())
      throw dimension_mismatch("sparse LU requires a square matrix");
    lu_.analyzePattern(m.storage());
    lu_.factorize(m.storage());
    if (lu_.info() != Eigen::Success)
      throw singular_matrix("sparse LU failed: " + lu_.lastErrorMessage());
    const double lad = lu_.logAbsDeterminant();
    if (!std::isfinite(lad)) throw singular_matrix("matrix is singular");
  }

  Vector solve(const Vector& b) const {
    if (b.size() != n_)
      throw dimension_mismatch("sparse_solve: rhs has length " +
                               std::to_string(b.size()) + ", matrix has n = " +
                               std::to_string(n_));
    // Eigen's SparseLU::solve is logically const but not marked as such.
    Vector x = const_cast<solver_type&>(lu_).solve(b);
    if (!x.allFinite()) throw singular_matrix("sparse solve produced non-finite values");
    return x;
  }

  double log_abs_det() const {
    return const_cast<solver_type&>(lu_).logAbsDeterminant();
  }

 private:
  using solver_type =
      Eigen::SparseLU<SparseMatrix::storage_type, Eigen::COLAMDOrdering<int>>;
  Eigen::Index n_;
  solver_type lu_;
};

inline Vector sparse_solve(const SparseMatrix& m, const Vector& b) {
  if (m.rows() != m.cols())
    throw dimension_mismatch("sparse_solve requires a square matrix");
  if (b.size() != m.rows())
    throw dimension_mismatch("sparse_solve: rhs has length " +
                             std::to_string(b.size()) + ", matrix has n = " +
                             std::to_string(m.rows()));
  return SparseLu(m).solve(b);
}

/// Sparse Cholesky factor of an SPD matrix in natural ordering.
class SparseCholesky {
 public:
  explicit SparseCholesky(const SparseMatrix& a) : n_(a.rows()) {
    if (a.rows() != a.cols())
      throw dimension_mismatch("sparse Cholesky requires a square matrix");
    llt_.compute(a.storage());
    if (llt_.info() != Eigen::Success) throw not_positive_definite(0);
    const auto& d = llt_.matrixL().nestedExpression().diagonal();
    if (!(d.array() > 0.0).all() || !d.allFinite())
      throw not_positive_definite(0);
  }

  Vector solve(const Vector& b) const {
    if (b.size() != n_)
      throw dimension_mismatch("sparse Cholesky solve: rhs length mismatch");
    return llt_.solve(b);
  }

  double log_det() const {
    const auto& l = llt_.matrixL().nestedExpression();
    return 2.0 * l.diagonal().array().log().sum();
  }

 private:
  Eigen::Index n_;
  Eigen::SimplicialLLT<SparseMatrix::storage_type, Eigen::Lower,
                       Eigen::NaturalOrdering<int>>
      llt_;
};

}  // namespace nfloo
