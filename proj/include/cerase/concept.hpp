#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cerase/linalg.hpp"

namespace cerase {

/// Role of a token inside its sentence. `word` is used for text-condition
/// tokens, the others for concept manifests.
enum class TokenKind { target, eot, sot, other, word };

constexpr std::string_view to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::target: return "target";
    case TokenKind::eot: return "eot";
    case TokenKind::sot: return "sot";
    case TokenKind::other: return "other";
    case TokenKind::word: return "word";
  }
  return "other";
}

inline std::optional<TokenKind> parse_token_kind(std::string_view s) {
  for (TokenKind k : {TokenKind::target, TokenKind::eot, TokenKind::sot, TokenKind::other,
                      TokenKind::word}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

using KindSet = std::set<TokenKind>;

inline KindSet default_concept_selection() { return {TokenKind::target, TokenKind::eot}; }

template <typename Scalar>
struct TokenRecord {
  VectorX<Scalar> embedding;
  std::int64_t sentence_id = 0;
  std::int64_t position = 0;
  std::string text;
  TokenKind kind = TokenKind::other;
};

/// Stacked concept tokens R_t (N × d_c). `source_rows[i]` indexes the record
/// that produced row i.
template <typename Scalar>
struct ConceptTokenMatrix {
  MatrixX<Scalar> matrix;
  std::vector<std::size_t> source_rows;

  Index n_rows() const { return matrix.rows(); }
  Index d_c() const { return matrix.cols(); }
};

/// Rank-k factored semantic matrix R̂_t = u_k·diag(sigma_k)·basisᵀ.
template <typename Scalar>
struct SemanticSubspace {
  VectorX<Scalar> sigma_k;
  MatrixX<Scalar> u_k;
  SubspaceBasis<Scalar> basis;

  Index k() const { return sigma_k.size(); }
  Index n_rows() const { return u_k.rows(); }
  Index d_c() const { return basis.dim(); }

  MatrixX<Scalar> reconstruct() const {
    return u_k * sigma_k.asDiagonal() * basis.vectors().transpose();
  }
};

/// Rows whose kind is in `selection`, in input order.
template <typename Scalar>
ConceptTokenMatrix<Scalar> assemble_concept_matrix(const std::vector<TokenRecord<Scalar>>& records,
                                                   const KindSet& selection) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (selection.count(records[i].kind)) picked.push_back(i);
  }
  if (picked.empty()) {
    throw Error(ErrorCode::EmptySelection, "no token records match the requested kinds");
  }
  const Index d = records[picked.front()].embedding.size();
  ConceptTokenMatrix<Scalar> out;
  out.matrix.resize(static_cast<Index>(picked.size()), d);
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const auto& e = records[picked[r]].embedding;
    if (e.size() != d) {
      throw Error(ErrorCode::DimensionMismatch,
                  "token record " + std::to_string(picked[r]) + " has dimension " +
                      std::to_string(e.size()) + ", expected " + std::to_string(d));
    }
    require_finite(e, "token embedding");
    out.matrix.row(static_cast<Index>(r)) = e.transpose();
  }
  out.source_rows = std::move(picked);
  return out;
}

/// Column means removed; only used when centering is requested explicitly.
template <typename Scalar>
MatrixX<Scalar> center_columns(const MatrixX<Scalar>& m) {
  return m.rowwise() - m.colwise().mean();
}

/// Relative threshold below which σ_k no longer defines a k-dimensional span.
inline constexpr double kDegenerateConceptRatio = 1e-12;

template <typename Scalar>
SemanticSubspace<Scalar> build_semantic_subspace(const MatrixX<Scalar>& m, Index k) {
  detail::check_rank(k, std::min(m.rows(), m.cols()));
  const SvdFactors<Scalar> f = svd(m);
  const Scalar s1 = f.sigma(0);
  const Scalar sk = f.sigma(k - 1);
  if (!(s1 > Scalar(0)) || !(sk > Scalar(kDegenerateConceptRatio) * s1)) {
    throw Error(ErrorCode::DegenerateConcept,
                "sigma_" + std::to_string(k) + " = " + std::to_string(double(sk)) +
                    " is negligible against sigma_1 = " + std::to_string(double(s1)));
  }
  return SemanticSubspace<Scalar>{f.sigma.head(k), f.u.leftCols(k), basis(f, k)};
}

template <typename Scalar>
SemanticSubspace<Scalar> build_semantic_subspace(const ConceptTokenMatrix<Scalar>& m, Index k) {
  return build_semantic_subspace(m.matrix, k);
}

}  // namespace cerase
