#pragma once

// Effect of appending one row on the top-k right singular subspace: the
// Davis–Kahan style bound ‖a_new‖² / (σ_k − σ_{k+1}) and the measured
// rotation of each singular vector.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "cerase/linalg.hpp"

namespace cerase {

template <typename Scalar>
struct DavisKahanTerms {
  Scalar delta_norm = 0;    // ‖a_new‖², the spectral norm of a_newᵀ·a_new
  Scalar gap_singular = 0;  // σ_k − σ_{k+1}
  Scalar gap_eigen = 0;     // σ_k² − σ_{k+1}²
  Scalar bound = 0;         // delta_norm / gap_singular, +inf when the gap vanishes
  Scalar bound_eigen = 0;   // delta_norm / gap_eigen, +inf when the gap vanishes
  bool gap_degenerate = false;
};

template <typename Scalar>
struct PerturbationReport {
  DavisKahanTerms<Scalar> terms;
  std::vector<Scalar> angles_deg;
  Scalar mean_angle_deg = 0;
  Scalar sin_theta = 0;
  bool bound_holds = true;
  bool eigen_bound_holds = true;
  std::vector<std::string> warnings;
};

/// Gap below gap_tolerance·σ_1 is reported as the +inf sentinel.
inline constexpr double kGapTolerance = 1e-12;

namespace detail {

template <typename Scalar>
void check_perturbation_args(const MatrixX<Scalar>& a, const VectorX<Scalar>& a_new, Index k) {
  check_dim(a_new.size(), a.cols(), "appended row");
  const Index r = std::min(a.rows(), a.cols());
  if (k < 1 || k >= r) {
    throw Error(ErrorCode::RankOutOfBounds,
                "k = " + std::to_string(k) + " must satisfy 1 <= k < " + std::to_string(r));
  }
}

template <typename Scalar>
DavisKahanTerms<Scalar> dk_terms(const VectorX<Scalar>& sigma, const VectorX<Scalar>& a_new,
                                 Index k) {
  DavisKahanTerms<Scalar> d;
  d.delta_norm = a_new.squaredNorm();
  const Scalar sk = sigma(k - 1);
  const Scalar sk1 = sigma(k);
  d.gap_singular = sk - sk1;
  d.gap_eigen = sk * sk - sk1 * sk1;
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  d.gap_degenerate = !(d.gap_singular > Scalar(kGapTolerance) * sigma(0));
  if (d.gap_degenerate) {
    d.bound = inf;
    d.bound_eigen = inf;
  } else {
    d.bound = d.delta_norm / d.gap_singular;
    d.bound_eigen = d.delta_norm / d.gap_eigen;
  }
  return d;
}

// Angle between two vectors in degrees, insensitive to the sign of either.
// atan2 form keeps resolution for nearly parallel vectors.
template <typename Scalar>
Scalar unsigned_angle_deg(const VectorX<Scalar>& v, const VectorX<Scalar>& w) {
  const Scalar dot = std::abs(v.dot(w));
  const Scalar cross = (w * v.squaredNorm() - v * v.dot(w)).norm() / v.norm();
  return std::atan2(cross, dot) * Scalar(180) / std::numbers::pi_v<Scalar>;
}

}  // namespace detail

template <typename Scalar>
DavisKahanTerms<Scalar> davis_kahan_bound(const MatrixX<Scalar>& a, const VectorX<Scalar>& a_new,
                                          Index k) {
  detail::check_perturbation_args(a, a_new, k);
  require_finite(a_new, "appended row");
  return detail::dk_terms(svd(a).sigma, a_new, k);
}

/// SVD of [a; a_new] given the thin SVD of a. Since a = U·(ΣVᵀ) with U having
/// orthonormal columns, [a; a_new] and [ΣVᵀ; a_new] share singular values and
/// right singular vectors.
template <typename Scalar>
SvdFactors<Scalar> append_row_factors(const SvdFactors<Scalar>& before,
                                      const VectorX<Scalar>& a_new) {
  detail::check_dim(a_new.size(), before.cols(), "appended row");
  const Index r = before.rank_bound();
  MatrixX<Scalar> reduced(r + 1, before.cols());
  reduced.topRows(r) = before.sigma.asDiagonal() * before.v.transpose();
  reduced.row(r) = a_new.transpose();
  return svd(reduced);
}

/// θ_i between the i-th right singular vectors of a and [a; a_new], degrees.
template <typename Scalar>
std::vector<Scalar> empirical_angles(const MatrixX<Scalar>& a, const VectorX<Scalar>& a_new,
                                     Index k) {
  detail::check_perturbation_args(a, a_new, k);
  const auto before = svd(a);
  const auto after = append_row_factors(before, a_new);
  std::vector<Scalar> out;
  for (Index i = 0; i < k; ++i) {
    out.push_back(detail::unsigned_angle_deg<Scalar>(before.v.col(i), after.v.col(i)));
  }
  return out;
}

/// Report for appending a_new to the matrix whose thin SVD is `before`.
template <typename Scalar>
PerturbationReport<Scalar> verify_bound(const SvdFactors<Scalar>& before,
                                        const VectorX<Scalar>& a_new, Index k) {
  detail::check_dim(a_new.size(), before.cols(), "appended row");
  if (k < 1 || k >= before.rank_bound()) {
    throw Error(ErrorCode::RankOutOfBounds, "k = " + std::to_string(k) + " must satisfy 1 <= k < " +
                                                std::to_string(before.rank_bound()));
  }
  require_finite(a_new, "appended row");
  const auto after = append_row_factors(before, a_new);

  PerturbationReport<Scalar> rep;
  rep.terms = detail::dk_terms(before.sigma, a_new, k);
  Scalar sum = 0;
  for (Index i = 0; i < k; ++i) {
    rep.angles_deg.push_back(
        detail::unsigned_angle_deg<Scalar>(before.v.col(i), after.v.col(i)));
    sum += rep.angles_deg.back();
  }
  rep.mean_angle_deg = sum / Scalar(k);
  rep.sin_theta = sin_theta_distance<Scalar>(before.v.leftCols(k), after.v.leftCols(k));

  if (rep.terms.gap_degenerate) {
    rep.warnings.push_back("sigma_k and sigma_k+1 coincide; the bound is unbounded");
  } else {
    // sinΘ of identical subspaces still comes out at rounding level
    const Scalar slack = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::sqrt(Scalar(k));
    rep.bound_holds = rep.sin_theta <= rep.terms.bound + slack;
    rep.eigen_bound_holds = rep.sin_theta <= rep.terms.bound_eigen + slack;
    if (!rep.bound_holds) {
      rep.warnings.push_back("empirical sin(theta) exceeds delta_norm / (sigma_k - sigma_k+1)");
    }
  }
  return rep;
}

template <typename Scalar>
PerturbationReport<Scalar> verify_bound(const MatrixX<Scalar>& a, const VectorX<Scalar>& a_new,
                                        Index k) {
  detail::check_perturbation_args(a, a_new, k);
  return verify_bound(svd(a), a_new, k);
}

}  // namespace cerase
