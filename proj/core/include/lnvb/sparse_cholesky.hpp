#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <memory>

#include "lnvb/rng.hpp"

namespace lnvb {

/// Entries of Q^{-1} on the sparsity pattern of the Cholesky factor of Q.
class SelectedInverse {
 public:
  SelectedInverse() = default;
  /// (Q^{-1})_{ij} in the original ordering. Throws DomainError when (i, j)
  /// lies outside the factor pattern.
  double operator()(Eigen::Index i, Eigen::Index j) const;
  bool contains(Eigen::Index i, Eigen::Index j) const;
  Eigen::VectorXd diagonal() const;
  Eigen::Index size() const { return perm_.size(); }

 private:
  friend class SparseCholesky;
  const double* find(Eigen::Index pi, Eigen::Index pj) const;

  Eigen::SparseMatrix<double> z_;   // permuted ordering, lower triangle
  Eigen::VectorXi perm_;            // original index -> permuted index
};

/// Sparse LL^T with a fill-reducing ordering computed once per pattern.
class SparseCholesky {
 public:
  using Matrix = Eigen::SparseMatrix<double>;

  SparseCholesky();
  ~SparseCholesky();
  SparseCholesky(SparseCholesky&&) noexcept;
  SparseCholesky& operator=(SparseCholesky&&) noexcept;
  SparseCholesky(const SparseCholesky& other);
  SparseCholesky& operator=(const SparseCholesky& other);

  /// Symbolic analysis; only the lower triangle of q is read.
  void analyze(const Matrix& q);
  /// Numeric factorization reusing the analysis. Returns false when q is not
  /// numerically positive definite.
  bool factorize(const Matrix& q);
  bool analyzed() const { return analyzed_; }
  Eigen::Index size() const { return n_; }

  double log_det() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  /// Maps z ~ N(0, I) to a draw from N(0, Q^{-1}).
  Eigen::VectorXd correlate(const Eigen::VectorXd& z) const;
  Eigen::VectorXd sample_zero_mean(Rng& rng) const;
  SelectedInverse selected_inverse() const;

 private:
  struct Solver : Eigen::SimplicialLLT<Matrix, Eigen::Lower, Eigen::AMDOrdering<int>> {
    const Matrix& factor() const { return m_matrix; }
  };
  std::unique_ptr<Solver> solver_;
  Matrix pattern_;
  Eigen::Index n_ = 0;
  bool analyzed_ = false;
  bool factorized_ = false;
};

}  // namespace lnvb
