// Writes the synthetic fixture used by the end-to-end tests:
//   concept.sseb   40 sentences x 8 tokens, 200 target/eot rows, d_c = 32,
//                  with a planted 5-dimensional concept subspace
//   condition.sseb one 8-token condition (sot, 6 words, eot); word 3 lies in
//                  the concept subspace
// Usage: cerase_make_fixture OUT_DIR [SEED]

#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "cerase/io.hpp"

namespace {

using cerase::Index;
using cerase::TokenKind;
using Mat = cerase::MatrixX<double>;
using Vec = cerase::VectorX<double>;

constexpr Index kDim = 32;
constexpr Index kConceptRank = 5;
constexpr int kSentences = 40;

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: " << argv[0] << " OUT_DIR [SEED]\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 42;
  std::filesystem::create_directories(dir);

  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  auto gaussian = [&](Index rows, Index cols) {
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) m(i, j) = normal(engine);
    }
    return m;
  };

  Eigen::HouseholderQR<Mat> qr(gaussian(kDim, kDim));
  const Mat q = qr.householderQ() * Mat::Identity(kDim, kDim);
  const Mat concept_dirs = q.leftCols(kConceptRank);
  const Mat other_dirs = q.rightCols(kDim - kConceptRank);
  Vec strength(kConceptRank);
  strength << 6.0, 5.0, 4.0, 3.0, 2.5;

  auto concept_row = [&]() -> Vec {
    return concept_dirs * strength.cwiseProduct(gaussian(kConceptRank, 1).col(0)) +
           0.1 * gaussian(kDim, 1).col(0);
  };
  auto generic_row = [&](double scale) -> Vec {
    return other_dirs * gaussian(kDim - kConceptRank, 1).col(0) * scale + 0.1 * gaussian(kDim, 1).col(0);
  };

  const std::vector<TokenKind> layout = {TokenKind::sot,    TokenKind::other,  TokenKind::target,
                                         TokenKind::target, TokenKind::other,  TokenKind::target,
                                         TokenKind::eot,    TokenKind::eot};
  const Index rows = Index(kSentences) * Index(layout.size());
  Mat concept_tokens(rows, kDim);
  cerase::io::EmbeddingMetadata meta;
  Index r = 0;
  for (int sidx = 0; sidx < kSentences; ++sidx) {
    meta.sentences.push_back("synthetic sentence " + std::to_string(sidx));
    for (std::size_t pos = 0; pos < layout.size(); ++pos, ++r) {
      const TokenKind kind = layout[pos];
      const bool carries_concept = kind == TokenKind::target || kind == TokenKind::eot;
      concept_tokens.row(r) = (carries_concept ? concept_row() : generic_row(1.5)).transpose();
      meta.tokens.push_back({r, sidx, Index(pos),
                             kind == TokenKind::target ? "w" + std::to_string(pos) : std::string(),
                             kind});
    }
  }
  cerase::io::write_embeddings(concept_tokens, meta, dir / "concept.sseb");

  Mat condition(8, kDim);
  cerase::io::EmbeddingMetadata cmeta;
  cmeta.sentences.push_back("synthetic condition");
  for (Index i = 0; i < 8; ++i) {
    const TokenKind kind = i == 0 ? TokenKind::sot : i == 7 ? TokenKind::eot : TokenKind::word;
    Vec row = generic_row(1.5);
    if (i == 3) row = concept_dirs * strength.cwiseProduct(gaussian(kConceptRank, 1).col(0));
    if (i == 7) row = 0.5 * concept_row() + 0.5 * generic_row(1.5);
    condition.row(i) = row.transpose();
    cmeta.tokens.push_back({i, 0, i, kind == TokenKind::word ? "t" + std::to_string(i) : "", kind});
  }
  cerase::io::write_embeddings(condition, cmeta, dir / "condition.sseb");

  std::cout << "wrote " << (dir / "concept.sseb") << " and " << (dir / "condition.sseb") << "\n";
  return 0;
}
