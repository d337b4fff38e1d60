#pragma once

// File formats shared with embedding producers.
//
// SSE-EMB v1, little-endian:
//   "SSEB" | u32 version = 1 | u64 rows | u64 cols | u8 dtype = 0 | rows·cols f32, row-major
// Optional sidecar <stem>.meta.json next to it:
//   {"sentences": [..], "tokens": [{"row", "sentence_id", "position", "text", "kind"}]}
//
// SSE-SUB v1, little-endian:
//   "SSES" | u32 version = 1 | u64 N | u64 d_c | u32 k | σ_1…σ_k f32
//   | U_k (N×k f32, row-major) | V_k (d_c×k f32, row-major)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cerase/concept.hpp"
#include "cerase/optimizer.hpp"
#include "cerase/suppression.hpp"

namespace cerase::io {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 25;
inline constexpr std::size_t kSubspaceHeaderBytes = 28;
/// Loaded V_k must be this close to orthonormal before it is accepted.
inline constexpr double kLoadOrthonormalityTolerance = 1e-6;

using Bytes = std::vector<std::uint8_t>;

struct TokenMeta {
  std::int64_t row = 0;
  std::int64_t sentence_id = 0;
  std::int64_t position = 0;
  std::string text;
  TokenKind kind = TokenKind::other;
};

struct EmbeddingMetadata {
  std::vector<std::string> sentences;
  std::vector<TokenMeta> tokens;
};

struct EmbeddingFile {
  MatrixX<double> matrix;
  std::optional<EmbeddingMetadata> meta;
};

/// Raw contents of an SSE-SUB file, kept in storage precision.
struct SubspaceBundle {
  VectorX<float> sigma;
  MatrixX<float> u;  // N × k
  MatrixX<float> v;  // d_c × k

  Index k() const { return sigma.size(); }
};

Bytes encode_embeddings(const MatrixX<double>& m);
MatrixX<double> decode_embeddings(std::span<const std::uint8_t> bytes);

std::filesystem::path sidecar_path(const std::filesystem::path& embeddings);
EmbeddingMetadata parse_metadata(const std::string& json_text, Index rows);
std::string dump_metadata(const EmbeddingMetadata& meta);

EmbeddingFile read_embeddings(const std::filesystem::path& path);
void write_embeddings(const MatrixX<double>& m, const std::optional<EmbeddingMetadata>& meta,
                      const std::filesystem::path& path);

Bytes encode_subspace(const SubspaceBundle& b);
SubspaceBundle decode_subspace(std::span<const std::uint8_t> bytes);
SubspaceBundle to_bundle(const SemanticSubspace<double>& s);
/// Widens to double and re-orthonormalizes U_k and V_k (signs preserved).
SemanticSubspace<double> to_subspace(const SubspaceBundle& b);

SubspaceBundle read_subspace_bundle(const std::filesystem::path& path);
SemanticSubspace<double> read_subspace(const std::filesystem::path& path);
void write_subspace(const SemanticSubspace<double>& s, const std::filesystem::path& path);
void write_subspace_bundle(const SubspaceBundle& b, const std::filesystem::path& path);

/// One TokenRecord per matrix row; rows absent from the sidecar get kind `other`.
std::vector<TokenRecord<double>> to_token_records(const EmbeddingFile& f);
/// Roles sot/eot from the sidecar, everything else (or no sidecar) is `word`.
ConditionTokens<double> to_condition(const EmbeddingFile& f);

struct RunConfig {
  int k = 5;
  int t_start = 30;
  int t_end = 50;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::plain_gd;
  int updates_per_step = 1;
  bool skip_sot = false;
  std::uint64_t seed = 42;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

struct VocabularyManifest {
  std::string concept_name;
  std::vector<std::string> words;
  std::vector<std::string> sentences;
  std::optional<std::string> template_text;

  /// Names inside {braces} of the template, in order of appearance.
  std::vector<std::string> template_slots() const;
};

VocabularyManifest parse_manifest(const std::string& json_text);
VocabularyManifest load_manifest(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cerase::io
