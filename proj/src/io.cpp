#include "cerase/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cerase::io {

namespace {

using nlohmann::json;

constexpr std::uint8_t kEmbeddingMagic[4] = {'S', 'S', 'E', 'B'};
constexpr std::uint8_t kSubspaceMagic[4] = {'S', 'S', 'E', 'S'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return raw(1)[0]; }
  std::uint32_t u32() {
    auto s = raw(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = raw(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(s[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Error(ErrorCode::TruncatedPayload, "expected " + std::to_string(n) +
                                                   " more bytes at offset " +
                                                   std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

float narrow(double v) {
  if (!std::isfinite(v) || std::abs(v) > double(std::numeric_limits<float>::max())) {
    throw Error(ErrorCode::NonFiniteInput, "value not representable as a finite f32");
  }
  return static_cast<float>(v);
}

void check_magic(std::span<const std::uint8_t> got, const std::uint8_t (&want)[4]) {
  for (int i = 0; i < 4; ++i) {
    if (got[i] != want[i]) {
      throw Error(ErrorCode::BadMagic, std::string("expected magic ") +
                                           std::string(std::begin(want), std::end(want)));
    }
  }
}

void check_version(std::uint32_t v) {
  if (v != kFormatVersion) {
    throw Error(ErrorCode::VersionUnsupported, "format version " + std::to_string(v));
  }
}

// rows·cols·4 without overflow, or throw
std::size_t payload_bytes(std::uint64_t rows, std::uint64_t cols, std::size_t available) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorCode::SchemaViolation, "matrix must have at least one row and column");
  }
  if (rows > available / 4 || cols > available / 4 / rows) {
    throw Error(ErrorCode::TruncatedPayload, "payload shorter than the header declares");
  }
  return static_cast<std::size_t>(rows * cols * 4);
}

[[noreturn]] void schema(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaViolation, path + ": " + what);
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaViolation, std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::int64_t get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) schema(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) schema(path, "expected a string");
  return j.get<std::string>();
}

std::vector<std::string> get_strings(const json& j, const std::string& path) {
  if (!j.is_array()) schema(path, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(get_string(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

MatrixX<double> orthonormalize_keep_signs(const MatrixX<double>& m) {
  Eigen::HouseholderQR<MatrixX<double>> qr(m);
  MatrixX<double> q = qr.householderQ() * MatrixX<double>::Identity(m.rows(), m.cols());
  const MatrixX<double> r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < m.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

Bytes encode_embeddings(const MatrixX<double>& m) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw Error(ErrorCode::SchemaViolation, "cannot write an empty matrix");
  }
  Writer w(kEmbeddingHeaderBytes + std::size_t(m.size()) * 4);
  w.raw(kEmbeddingMagic);
  w.u32(kFormatVersion);
  w.u64(std::uint64_t(m.rows()));
  w.u64(std::uint64_t(m.cols()));
  w.u8(kDtypeF32);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) w.f32(narrow(m(i, j)));
  }
  return w.take();
}

MatrixX<double> decode_embeddings(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r.raw(4), kEmbeddingMagic);
  check_version(r.u32());
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  const std::uint8_t dtype = r.u8();
  if (dtype != kDtypeF32) {
    throw Error(ErrorCode::VersionUnsupported, "dtype " + std::to_string(dtype));
  }
  const std::size_t n = payload_bytes(rows, cols, r.remaining());
  if (r.remaining() != n) {
    throw Error(ErrorCode::SchemaViolation, "trailing bytes after payload");
  }
  MatrixX<double> m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  }
  require_finite(m, "embedding payload");
  return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p.replace_extension(".meta.json");
  return p;
}

EmbeddingMetadata parse_metadata(const std::string& json_text, Index rows) {
  const json j = parse_json(json_text, "sidecar");
  if (!j.is_object()) schema("$", "expected an object");
  EmbeddingMetadata meta;
  if (j.contains("sentences")) meta.sentences = get_strings(j["sentences"], "$.sentences");
  if (j.contains("tokens")) {
    const json& toks = j["tokens"];
    if (!toks.is_array()) schema("$.tokens", "expected an array");
    std::set<std::int64_t> seen;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const std::string path = "$.tokens[" + std::to_string(i) + "]";
      const json& t = toks[i];
      if (!t.is_object()) schema(path, "expected an object");
      if (!t.contains("row")) schema(path + ".row", "missing");
      if (!t.contains("kind")) schema(path + ".kind", "missing");
      TokenMeta tm;
      tm.row = get_int(t["row"], path + ".row");
      if (tm.row < 0 || tm.row >= rows) {
        throw Error(ErrorCode::SidecarRowOutOfRange,
                    path + ".row = " + std::to_string(tm.row) + " but the payload has " +
                        std::to_string(rows) + " rows");
      }
      if (!seen.insert(tm.row).second) schema(path + ".row", "duplicate row index");
      if (t.contains("sentence_id")) tm.sentence_id = get_int(t["sentence_id"], path + ".sentence_id");
      if (t.contains("position")) tm.position = get_int(t["position"], path + ".position");
      if (t.contains("text")) tm.text = get_string(t["text"], path + ".text");
      const auto kind = parse_token_kind(get_string(t["kind"], path + ".kind"));
      if (!kind) schema(path + ".kind", "unknown token kind");
      tm.kind = *kind;
      meta.tokens.push_back(std::move(tm));
    }
  }
  return meta;
}

std::string dump_metadata(const EmbeddingMetadata& meta) {
  json toks = json::array();
  for (const auto& t : meta.tokens) {
    toks.push_back({{"row", t.row},
                    {"sentence_id", t.sentence_id},
                    {"position", t.position},
                    {"text", t.text},
                    {"kind", std::string(to_string(t.kind))}});
  }
  json j = {{"sentences", meta.sentences}, {"tokens", toks}};
  return j.dump(2) + "\n";
}

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  EmbeddingFile f;
  const Bytes bytes = read_file(path);
  f.matrix = decode_embeddings(bytes);
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) f.meta = parse_metadata(read_text(side), f.matrix.rows());
  return f;
}

void write_embeddings(const MatrixX<double>& m, const std::optional<EmbeddingMetadata>& meta,
                      const std::filesystem::path& path) {
  if (meta) {
    for (const auto& t : meta->tokens) {
      if (t.row < 0 || t.row >= m.rows()) {
        throw Error(ErrorCode::SidecarRowOutOfRange, "metadata row " + std::to_string(t.row));
      }
    }
  }
  write_file(path, encode_embeddings(m));
  if (meta) write_text(sidecar_path(path), dump_metadata(*meta));
}

Bytes encode_subspace(const SubspaceBundle& b) {
  const Index k = b.k();
  if (k < 1 || b.u.cols() != k || b.v.cols() != k || b.u.rows() < 1 || b.v.rows() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "inconsistent subspace bundle shapes");
  }
  Writer w(kSubspaceHeaderBytes + std::size_t(k + b.u.size() + b.v.size()) * 4);
  w.raw(kSubspaceMagic);
  w.u32(kFormatVersion);
  w.u64(std::uint64_t(b.u.rows()));
  w.u64(std::uint64_t(b.v.rows()));
  w.u32(std::uint32_t(k));
  for (Index i = 0; i < k; ++i) w.f32(b.sigma(i));
  for (Index i = 0; i < b.u.rows(); ++i) {
    for (Index j = 0; j < k; ++j) w.f32(b.u(i, j));
  }
  for (Index i = 0; i < b.v.rows(); ++i) {
    for (Index j = 0; j < k; ++j) w.f32(b.v(i, j));
  }
  return w.take();
}

SubspaceBundle decode_subspace(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r.raw(4), kSubspaceMagic);
  check_version(r.u32());
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  const std::uint32_t k = r.u32();
  if (k < 1 || k > n || k > d) {
    throw Error(ErrorCode::SchemaViolation, "k = " + std::to_string(k) + " inconsistent with N = " +
                                                std::to_string(n) + ", d_c = " + std::to_string(d));
  }
  const std::size_t avail = r.remaining();
  const std::size_t need = std::size_t(k) * 4 + payload_bytes(n, k, avail) + payload_bytes(d, k, avail);
  if (avail < need) throw Error(ErrorCode::TruncatedPayload, "subspace payload too short");
  if (avail > need) throw Error(ErrorCode::SchemaViolation, "trailing bytes after payload");

  SubspaceBundle b;
  b.sigma.resize(k);
  b.u.resize(static_cast<Index>(n), k);
  b.v.resize(static_cast<Index>(d), k);
  for (Index i = 0; i < Index(k); ++i) b.sigma(i) = r.f32();
  for (Index i = 0; i < b.u.rows(); ++i) {
    for (Index j = 0; j < Index(k); ++j) b.u(i, j) = r.f32();
  }
  for (Index i = 0; i < b.v.rows(); ++i) {
    for (Index j = 0; j < Index(k); ++j) b.v(i, j) = r.f32();
  }
  require_finite(b.sigma, "singular values");
  require_finite(b.u, "U_k");
  require_finite(b.v, "V_k");
  for (Index i = 0; i < Index(k); ++i) {
    if (!(b.sigma(i) > 0.0f) || (i > 0 && b.sigma(i) > b.sigma(i - 1))) {
      throw Error(ErrorCode::SchemaViolation, "singular values must be positive and non-increasing");
    }
  }
  const MatrixX<double> v = b.v.cast<double>();
  const double err = (v.transpose() * v - MatrixX<double>::Identity(k, k)).norm();
  if (!(err <= kLoadOrthonormalityTolerance)) {
    throw Error(ErrorCode::OrthonormalityViolation,
                "V_k deviates from orthonormal by " + std::to_string(err));
  }
  return b;
}

SubspaceBundle to_bundle(const SemanticSubspace<double>& s) {
  SubspaceBundle b;
  b.sigma = s.sigma_k.unaryExpr([](double x) { return narrow(x); });
  b.u = s.u_k.unaryExpr([](double x) { return narrow(x); });
  b.v = s.basis.vectors().unaryExpr([](double x) { return narrow(x); });
  return b;
}

SemanticSubspace<double> to_subspace(const SubspaceBundle& b) {
  return SemanticSubspace<double>{b.sigma.cast<double>(),
                                  orthonormalize_keep_signs(b.u.cast<double>()),
                                  SubspaceBasis<double>(orthonormalize_keep_signs(b.v.cast<double>()))};
}

SubspaceBundle read_subspace_bundle(const std::filesystem::path& path) {
  return decode_subspace(read_file(path));
}

SemanticSubspace<double> read_subspace(const std::filesystem::path& path) {
  return to_subspace(read_subspace_bundle(path));
}

void write_subspace(const SemanticSubspace<double>& s, const std::filesystem::path& path) {
  write_subspace_bundle(to_bundle(s), path);
}

void write_subspace_bundle(const SubspaceBundle& b, const std::filesystem::path& path) {
  write_file(path, encode_subspace(b));
}

std::vector<TokenRecord<double>> to_token_records(const EmbeddingFile& f) {
  std::vector<TokenRecord<double>> out(static_cast<std::size_t>(f.matrix.rows()));
  for (Index i = 0; i < f.matrix.rows(); ++i) {
    auto& rec = out[static_cast<std::size_t>(i)];
    rec.embedding = f.matrix.row(i).transpose();
    rec.position = i;
  }
  if (f.meta) {
    for (const auto& t : f.meta->tokens) {
      auto& rec = out[static_cast<std::size_t>(t.row)];
      rec.sentence_id = t.sentence_id;
      rec.position = t.position;
      rec.text = t.text;
      rec.kind = t.kind;
    }
  }
  return out;
}

ConditionTokens<double> to_condition(const EmbeddingFile& f) {
  ConditionTokens<double> c;
  c.tokens = f.matrix;
  c.roles.assign(static_cast<std::size_t>(f.matrix.rows()), TokenKind::word);
  if (f.meta) {
    for (const auto& t : f.meta->tokens) {
      if (t.kind == TokenKind::sot || t.kind == TokenKind::eot) {
        c.roles[static_cast<std::size_t>(t.row)] = t.kind;
      }
    }
    if (!f.meta->sentences.empty()) c.source_text = f.meta->sentences.front();
  }
  return c;
}

RunConfig parse_config(const std::string& json_text) {
  const json j = parse_json(json_text, "config");
  if (!j.is_object()) schema("$", "expected an object");
  RunConfig c;
  for (const auto& [key, val] : j.items()) {
    const std::string path = "$." + key;
    if (key == "k") {
      c.k = int(get_int(val, path));
      if (c.k < 1) schema(path, "k must be >= 1");
    } else if (key == "t_start") {
      c.t_start = int(get_int(val, path));
      if (c.t_start < 0) schema(path, "t_start must be >= 0");
    } else if (key == "t_end") {
      c.t_end = int(get_int(val, path));
      if (c.t_end < 0) schema(path, "t_end must be >= 0");
    } else if (key == "learning_rate") {
      if (!val.is_number()) schema(path, "expected a number");
      c.learning_rate = val.get<double>();
      if (!(c.learning_rate > 0) || !std::isfinite(c.learning_rate)) {
        schema(path, "learning_rate must be > 0");
      }
    } else if (key == "optimizer") {
      const std::string name = get_string(val, path);
      if (name == "plain_gd") {
        c.optimizer = OptimizerKind::plain_gd;
      } else if (name == "adam_like") {
        c.optimizer = OptimizerKind::adam_like;
      } else {
        schema(path, "optimizer must be plain_gd or adam_like");
      }
    } else if (key == "updates_per_step") {
      c.updates_per_step = int(get_int(val, path));
      if (c.updates_per_step < 1) schema(path, "updates_per_step must be >= 1");
    } else if (key == "skip_sot") {
      if (!val.is_boolean()) schema(path, "expected a boolean");
      c.skip_sot = val.get<bool>();
    } else if (key == "seed") {
      if (!val.is_number_unsigned() && !(val.is_number_integer() && val.get<std::int64_t>() >= 0)) {
        schema(path, "seed must be a non-negative integer");
      }
      c.seed = val.get<std::uint64_t>();
    } else {
      schema(path, "unknown key");
    }
  }
  if (c.t_start > c.t_end) schema("$.t_start", "t_start must not exceed t_end");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::vector<std::string> VocabularyManifest::template_slots() const {
  std::vector<std::string> slots;
  if (!template_text) return slots;
  const std::string& t = *template_text;
  std::size_t pos = 0;
  while ((pos = t.find('{', pos)) != std::string::npos) {
    const std::size_t close = t.find('}', pos + 1);
    if (close == std::string::npos) break;
    slots.push_back(t.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
  return slots;
}

VocabularyManifest parse_manifest(const std::string& json_text) {
  const json j = parse_json(json_text, "manifest");
  if (!j.is_object()) schema("$", "expected an object");
  VocabularyManifest m;
  if (!j.contains("concept")) schema("$.concept", "missing");
  m.concept_name = get_string(j["concept"], "$.concept");
  if (!j.contains("words")) schema("$.words", "missing");
  m.words = get_strings(j["words"], "$.words");
  if (m.words.empty()) schema("$.words", "must not be empty");
  if (!j.contains("sentences")) schema("$.sentences", "missing");
  m.sentences = get_strings(j["sentences"], "$.sentences");
  if (m.sentences.empty()) schema("$.sentences", "must not be empty");
  if (j.contains("template") && !j["template"].is_null()) {
    m.template_text = get_string(j["template"], "$.template");
    const std::string& t = *m.template_text;
    int depth = 0;
    for (char ch : t) {
      if (ch == '{' && ++depth > 1) schema("$.template", "nested braces");
      if (ch == '}' && --depth < 0) schema("$.template", "unbalanced braces");
    }
    if (depth != 0) schema("$.template", "unbalanced braces");
  }
  for (const auto& [key, val] : j.items()) {
    if (key != "concept" && key != "words" && key != "sentences" && key != "template") {
      schema("$." + key, "unknown key");
    }
  }
  return m;
}

VocabularyManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text(path));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace cerase::io
