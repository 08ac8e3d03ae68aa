#include "lnvb/sparse_cholesky.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "lnvb/error.hpp"

namespace lnvb {

const double* SelectedInverse::find(Eigen::Index pi, Eigen::Index pj) const {
  const Eigen::Index col = std::min(pi, pj);
  const Eigen::Index row = std::max(pi, pj);
  const auto* outer = z_.outerIndexPtr();
  const auto* inner = z_.innerIndexPtr();
  const auto* begin = inner + outer[col];
  const auto* end = inner + outer[col + 1];
  const auto* it = std::lower_bound(begin, end, static_cast<int>(row));
  if (it == end || *it != row) {
    return nullptr;
  }
  return z_.valuePtr() + (it - inner);
}

bool SelectedInverse::contains(Eigen::Index i, Eigen::Index j) const {
  return find(perm_[i], perm_[j]) != nullptr;
}

double SelectedInverse::operator()(Eigen::Index i, Eigen::Index j) const {
  const double* v = find(perm_[i], perm_[j]);
  if (v == nullptr) {
    std::ostringstream msg;
    msg << "selected inverse: entry (" << i << ", " << j << ") is outside the factor pattern";
    throw DomainError(msg.str());
  }
  return *v;
}

Eigen::VectorXd SelectedInverse::diagonal() const {
  Eigen::VectorXd out(size());
  for (Eigen::Index i = 0; i < size(); ++i) {
    out[i] = (*this)(i, i);
  }
  return out;
}

SparseCholesky::SparseCholesky() : solver_(std::make_unique<Solver>()) {}
SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky&&) noexcept = default;
SparseCholesky& SparseCholesky::operator=(SparseCholesky&&) noexcept = default;

SparseCholesky::SparseCholesky(const SparseCholesky& other) : solver_(std::make_unique<Solver>()) {
  if (other.analyzed_) {
    analyze(other.pattern_);
  }
}

SparseCholesky& SparseCholesky::operator=(const SparseCholesky& other) {
  if (this != &other) {
    SparseCholesky copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void SparseCholesky::analyze(const Matrix& q) {
  if (q.rows() != q.cols()) {
    throw DomainError("SparseCholesky: matrix must be square");
  }
  pattern_ = q;
  n_ = q.rows();
  solver_->analyzePattern(q);
  if (solver_->info() != Eigen::Success) {
    throw NumericalFailure("SparseCholesky: symbolic analysis failed");
  }
  analyzed_ = true;
  factorized_ = false;
}

bool SparseCholesky::factorize(const Matrix& q) {
  if (!analyzed_) {
    analyze(q);
  }
  solver_->factorize(q);
  factorized_ = solver_->info() == Eigen::Success;
  if (factorized_) {
    const Matrix& l = solver_->factor();
    for (Eigen::Index k = 0; k < n_; ++k) {
      const double d = l.valuePtr()[l.outerIndexPtr()[k]];
      if (!(d > 0.0) || !std::isfinite(d)) {
        factorized_ = false;
        break;
      }
    }
  }
  return factorized_;
}

double SparseCholesky::log_det() const {
  if (!factorized_) {
    throw NumericalFailure("SparseCholesky: no valid factorization");
  }
  const Matrix& l = solver_->factor();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < n_; ++k) {
    sum += std::log(l.valuePtr()[l.outerIndexPtr()[k]]);
  }
  return 2.0 * sum;
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const {
  if (!factorized_) {
    throw NumericalFailure("SparseCholesky: no valid factorization");
  }
  return solver_->solve(b);
}

Eigen::VectorXd SparseCholesky::correlate(const Eigen::VectorXd& z) const {
  if (!factorized_) {
    throw NumericalFailure("SparseCholesky: no valid factorization");
  }
  // P Q P^T = L L^T, so x = P^T L^{-T} z has covariance Q^{-1}.
  const Eigen::VectorXd w = solver_->matrixU().solve(z);
  return solver_->permutationPinv() * w;
}

Eigen::VectorXd SparseCholesky::sample_zero_mean(Rng& rng) const {
  Eigen::VectorXd z(n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    z[i] = standard_normal(rng);
  }
  return correlate(z);
}

SelectedInverse SparseCholesky::selected_inverse() const {
  if (!factorized_) {
    throw NumericalFailure("SparseCholesky: no valid factorization");
  }
  const Matrix& l = solver_->factor();
  SelectedInverse out;
  out.z_ = l;
  out.perm_ = solver_->permutationP().indices();
  Matrix& z = out.z_;
  const auto* outer = l.outerIndexPtr();
  const auto* inner = l.innerIndexPtr();
  const double* lv = l.valuePtr();
  double* zv = z.valuePtr();

  // Takahashi recursion from the last column backwards; every Z entry read
  // lies in a later column and inside the factor pattern.
  std::vector<double> col_z;
  for (Eigen::Index i = n_ - 1; i >= 0; --i) {
    const Eigen::Index start = outer[i];
    const Eigen::Index stop = outer[i + 1];
    const double lii = lv[start];
    const Eigen::Index count = stop - start - 1;
    col_z.assign(static_cast<std::size_t>(count), 0.0);
    for (Eigen::Index a = 0; a < count; ++a) {
      const Eigen::Index j = inner[start + 1 + a];
      double sum = 0.0;
      for (Eigen::Index b = 0; b < count; ++b) {
        const Eigen::Index k = inner[start + 1 + b];
        const double* zkj = out.find(k, j);
        sum += lv[start + 1 + b] * *zkj;
      }
      col_z[static_cast<std::size_t>(a)] = -sum / lii;
    }
    double diag = 1.0 / (lii * lii);
    for (Eigen::Index a = 0; a < count; ++a) {
      diag -= lv[start + 1 + a] * col_z[static_cast<std::size_t>(a)] / lii;
      zv[start + 1 + a] = col_z[static_cast<std::size_t>(a)];
    }
    zv[start] = diag;
  }
  return out;
}

}  // namespace lnvb
