#pragma once

// Dense linear-algebra kernel: thin SVD with a fixed sign convention, rank-k
// truncation, orthonormal subspace bases and the projections built on them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cerase/error.hpp"

namespace cerase {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Largest admissible deviation of BᵀB from the identity for a basis in
/// working precision.
template <typename Scalar>
constexpr Scalar orthonormality_tolerance() {
  if constexpr (std::is_same_v<Scalar, float>) {
    return Scalar(1e-4);
  } else {
    return Scalar(1e-10);
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::NonFiniteInput, std::string(what) + " contains NaN or Inf");
  }
}

/// Thin SVD, m = u·diag(sigma)·vᵀ with r = min(rows, cols).
template <typename Scalar>
struct SvdFactors {
  MatrixX<Scalar> u;
  VectorX<Scalar> sigma;
  MatrixX<Scalar> v;

  Index rank_bound() const { return sigma.size(); }
  Index rows() const { return u.rows(); }
  Index cols() const { return v.rows(); }
};

/// Orthonormal d×k basis; the columns span the subspace.
template <typename Scalar>
class SubspaceBasis {
 public:
  SubspaceBasis() = default;

  /// Takes ownership of `vectors` after checking ‖VᵀV − I‖ ≤ tol.
  explicit SubspaceBasis(MatrixX<Scalar> vectors,
                         Scalar tol = orthonormality_tolerance<Scalar>())
      : vectors_(std::move(vectors)) {
    if (vectors_.cols() > vectors_.rows()) {
      throw Error(ErrorCode::RankOutOfBounds, "basis has more vectors than dimensions");
    }
    require_finite(vectors_, "basis");
    const Scalar err = orthonormality_error();
    if (!(err <= tol)) {
      throw Error(ErrorCode::OrthonormalityViolation,
                  "basis deviates from orthonormal by " + std::to_string(double(err)));
    }
  }

  Index dim() const { return vectors_.rows(); }
  Index k() const { return vectors_.cols(); }
  const MatrixX<Scalar>& vectors() const { return vectors_; }

  Scalar orthonormality_error() const {
    const Index k = vectors_.cols();
    return (vectors_.transpose() * vectors_ - MatrixX<Scalar>::Identity(k, k)).norm();
  }

 private:
  MatrixX<Scalar> vectors_;
};

namespace detail {

// Flip each right singular vector so its largest-magnitude entry (lowest index
// on ties) is non-negative, and the matching left vector with it.
template <typename Scalar>
void fix_signs(SvdFactors<Scalar>& f) {
  for (Index j = 0; j < f.v.cols(); ++j) {
    Index best = 0;
    Scalar best_abs = Scalar(-1);
    for (Index i = 0; i < f.v.rows(); ++i) {
      const Scalar a = std::abs(f.v(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (f.v(best, j) < Scalar(0)) {
      f.v.col(j) = -f.v.col(j);
      f.u.col(j) = -f.u.col(j);
    }
  }
}

inline void check_rank(Index k, Index r) {
  if (k < 1 || k > r) {
    throw Error(ErrorCode::RankOutOfBounds,
                "k = " + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  }
}

inline void check_dim(Index got, Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": expected dimension " +
                                                  std::to_string(want) + ", got " +
                                                  std::to_string(got));
  }
}

}  // namespace detail

template <typename Derived>
SvdFactors<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  require_finite(m, "svd input");
  const MatrixX<Scalar> dense = m;
  Eigen::BDCSVD<MatrixX<Scalar>> solver(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdFactors<Scalar> f{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  detail::fix_signs(f);
  return f;
}

/// Σ_{i≤k} σ_i u_i v_iᵀ, the Frobenius-optimal rank-k approximation.
template <typename Scalar>
MatrixX<Scalar> truncate_reconstruct(const SvdFactors<Scalar>& f, Index k) {
  detail::check_rank(k, f.rank_bound());
  return f.u.leftCols(k) * f.sigma.head(k).asDiagonal() * f.v.leftCols(k).transpose();
}

/// Top-k right singular vectors.
template <typename Scalar>
SubspaceBasis<Scalar> basis(const SvdFactors<Scalar>& f, Index k) {
  detail::check_rank(k, f.rank_bound());
  return SubspaceBasis<Scalar>(f.v.leftCols(k));
}

template <typename Scalar>
MatrixX<Scalar> projector_matrix(const SubspaceBasis<Scalar>& b) {
  return b.vectors() * b.vectors().transpose();
}

/// x·B·Bᵀ
template <typename Derived>
VectorX<typename Derived::Scalar> project(const Eigen::MatrixBase<Derived>& x,
                                         const SubspaceBasis<typename Derived::Scalar>& b) {
  detail::check_dim(x.size(), b.dim(), "project");
  const auto& B = b.vectors();
  return B * (B.transpose() * x.derived().reshaped());
}

/// x − x·B·Bᵀ
template <typename Derived>
VectorX<typename Derived::Scalar> project_complement(
    const Eigen::MatrixBase<Derived>& x, const SubspaceBasis<typename Derived::Scalar>& b) {
  VectorX<typename Derived::Scalar> col = x.derived().reshaped();
  return col - project(col, b);
}

/// Row-wise x_i·B·Bᵀ for a matrix whose rows are vectors of the ambient space.
template <typename Derived>
MatrixX<typename Derived::Scalar> project_rows(const Eigen::MatrixBase<Derived>& rows,
                                               const SubspaceBasis<typename Derived::Scalar>& b) {
  detail::check_dim(rows.cols(), b.dim(), "project_rows");
  const auto& B = b.vectors();
  return (rows * B) * B.transpose();
}

template <typename Derived>
MatrixX<typename Derived::Scalar> project_rows_complement(
    const Eigen::MatrixBase<Derived>& rows, const SubspaceBasis<typename Derived::Scalar>& b) {
  return rows - project_rows(rows, b);
}

/// Fraction of ‖x‖² lying in span(B), clamped to [0, 1].
template <typename Derived>
typename Derived::Scalar residual_energy(const Eigen::MatrixBase<Derived>& x,
                                         const SubspaceBasis<typename Derived::Scalar>& b) {
  using Scalar = typename Derived::Scalar;
  detail::check_dim(x.size(), b.dim(), "residual_energy");
  const Scalar total = x.squaredNorm();
  if (!(total > Scalar(0))) {
    throw Error(ErrorCode::ZeroVector, "residual_energy of a zero vector");
  }
  const Scalar inside = (b.vectors().transpose() * x.derived().reshaped()).squaredNorm();
  return std::clamp(inside / total, Scalar(0), Scalar(1));
}

/// Principal angles (radians, ascending) between span(a) and span(b).
/// Small angles are taken from the sine side so they stay accurate near zero.
template <typename Scalar>
std::vector<Scalar> principal_angles(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::check_dim(b.rows(), a.rows(), "principal_angles");
  const MatrixX<Scalar> cross = a.transpose() * b;
  Eigen::JacobiSVD<MatrixX<Scalar>> cos_svd(cross);
  const MatrixX<Scalar> residual = b - a * cross;
  Eigen::JacobiSVD<MatrixX<Scalar>> sin_svd(residual);

  const Index m = std::min(a.cols(), b.cols());
  std::vector<Scalar> angles(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const Scalar c = std::clamp(cos_svd.singularValues()(i), Scalar(0), Scalar(1));
    // singular values of the residual come out descending; pair them with the
    // ascending angle order
    const Index si = m - 1 - i;
    const Scalar s = si < sin_svd.singularValues().size()
                         ? std::clamp(sin_svd.singularValues()(si), Scalar(0), Scalar(1))
                         : Scalar(0);
    angles[static_cast<std::size_t>(i)] = c > Scalar(0.5) ? std::asin(s) : std::acos(c);
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

/// Sine of the largest principal angle: ‖(I − AAᵀ)B‖₂ for orthonormal A, B.
template <typename Scalar>
Scalar sin_theta_distance(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::check_dim(b.rows(), a.rows(), "sin_theta_distance");
  const MatrixX<Scalar> residual = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<MatrixX<Scalar>> s(residual);
  return s.singularValues().size() > 0 ? std::min(s.singularValues()(0), Scalar(1)) : Scalar(0);
}

}  // namespace cerase
