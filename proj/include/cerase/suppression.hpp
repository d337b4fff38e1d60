#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cerase/concept.hpp"

namespace cerase {

/// A text condition: one row per token, with the role of each row.
template <typename Scalar>
struct ConditionTokens {
  MatrixX<Scalar> tokens;
  std::vector<TokenKind> roles;
  std::optional<std::string> source_text;

  Index n_tokens() const { return tokens.rows(); }
  Index d_c() const { return tokens.cols(); }
};

struct SuppressionConfig {
  Index k = 5;
  bool skip_sot = false;
  std::set<Index> skip_rows;
};

template <typename Scalar>
struct SuppressedCondition {
  MatrixX<Scalar> tokens;
  VectorX<Scalar> per_token_delta;  // mean squared change per row
  SuppressionConfig config_used;
};

namespace detail {

// Row 0 of the augmented matrix rebuilt from its singular triplets k+1, k+2, …
template <typename Scalar>
VectorX<Scalar> tail_row0(const SvdFactors<Scalar>& f, Index k) {
  const Index tail = f.rank_bound() - k;
  if (tail <= 0) return VectorX<Scalar>::Zero(f.cols());
  const auto u0 = f.u.row(0).tail(tail);
  return f.v.rightCols(tail) * (f.sigma.tail(tail).cwiseProduct(u0.transpose()));
}

template <typename Scalar>
MatrixX<Scalar> reduced_augmented(const VectorX<Scalar>& token, const SemanticSubspace<Scalar>& s) {
  // [token; R̂_t] = blockdiag(1, U_k) · [token; diag(σ)·Bᵀ]; the left factor has
  // orthonormal columns, so both share singular values and right vectors and
  // row 0 of any truncated reconstruction.
  MatrixX<Scalar> m(s.k() + 1, s.d_c());
  m.row(0) = token.transpose();
  m.bottomRows(s.k()) = s.sigma_k.asDiagonal() * s.basis.vectors().transpose();
  return m;
}

}  // namespace detail

/// Top-k right singular subspace of [token; R̂_t].
template <typename Scalar>
SubspaceBasis<Scalar> augmented_top_basis(const VectorX<Scalar>& token,
                                          const SemanticSubspace<Scalar>& s) {
  detail::check_dim(token.size(), s.d_c(), "augmented_top_basis");
  return basis(svd(detail::reduced_augmented(token, s)), s.k());
}

/// Concatenate the token above R̂_t, zero the top-k singular values of the
/// augmented matrix and return the rebuilt row 0. Runs on the (k+1)-row
/// reduced problem.
template <typename Scalar>
VectorX<Scalar> suppress_token(const VectorX<Scalar>& token, const SemanticSubspace<Scalar>& s) {
  detail::check_dim(token.size(), s.d_c(), "suppress_token");
  require_finite(token, "token");
  // row 0 of U is exactly zero then; skip the rounding noise of the SVD
  if ((token.array() == Scalar(0)).all()) return VectorX<Scalar>::Zero(token.size());
  return detail::tail_row0(svd(detail::reduced_augmented(token, s)), s.k());
}

/// Same as suppress_token but materializes the full (N+1)×d_c augmented matrix.
template <typename Scalar>
VectorX<Scalar> suppress_token_naive(const VectorX<Scalar>& token,
                                     const SemanticSubspace<Scalar>& s) {
  detail::check_dim(token.size(), s.d_c(), "suppress_token_naive");
  require_finite(token, "token");
  if ((token.array() == Scalar(0)).all()) return VectorX<Scalar>::Zero(token.size());
  MatrixX<Scalar> aug(s.n_rows() + 1, s.d_c());
  aug.row(0) = token.transpose();
  aug.bottomRows(s.n_rows()) = s.reconstruct();
  return detail::tail_row0(svd(aug), s.k());
}

template <typename Scalar>
SuppressedCondition<Scalar> suppress_condition(const ConditionTokens<Scalar>& c,
                                               const SemanticSubspace<Scalar>& s,
                                               const SuppressionConfig& cfg) {
  detail::check_dim(c.d_c(), s.d_c(), "suppress_condition");
  if (cfg.k != s.k()) {
    throw Error(ErrorCode::RankOutOfBounds, "suppression k = " + std::to_string(cfg.k) +
                                                " but the subspace has k = " +
                                                std::to_string(s.k()));
  }
  SuppressedCondition<Scalar> out{c.tokens, VectorX<Scalar>::Zero(c.n_tokens()), cfg};
  for (Index i = 0; i < c.n_tokens(); ++i) {
    const bool is_sot =
        static_cast<std::size_t>(i) < c.roles.size() && c.roles[i] == TokenKind::sot;
    if (cfg.skip_rows.count(i) || (cfg.skip_sot && is_sot)) continue;
    const VectorX<Scalar> before = c.tokens.row(i).transpose();
    const VectorX<Scalar> after = suppress_token(before, s);
    out.tokens.row(i) = after.transpose();
    out.per_token_delta(i) = (after - before).squaredNorm() / Scalar(c.d_c());
  }
  return out;
}

}  // namespace cerase
