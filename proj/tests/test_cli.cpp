#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "cerase/cli.hpp"
#include "cerase/io.hpp"
#include "test_support.hpp"

namespace cerase {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using testing::Mat;
using testing::Rng;
using testing::Vec;

const fs::path kFixtures = CERASE_FIXTURE_DIR;

int run(std::vector<std::string> args) {
  ::testing::internal::CaptureStdout();
  ::testing::internal::CaptureStderr();
  const int rc = cli::run(args);
  ::testing::internal::GetCapturedStdout();
  ::testing::internal::GetCapturedStderr();
  return rc;
}

json read_json(const fs::path& p) { return json::parse(io::read_text(p)); }

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          (std::string("cerase_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return (dir / name).string(); }
  std::string fixture(const std::string& name) const { return (kFixtures / name).string(); }

  void build_subspace() {
    ASSERT_EQ(run({"build-subspace", "--embeddings", fixture("concept.sseb"), "--k", "5", "--out",
                   p("s.sses")}),
              cli::kSuccess);
  }

  void write_condition(const Mat& m) {
    io::EmbeddingMetadata meta;
    meta.sentences = {"crafted"};
    for (Index i = 0; i < m.rows(); ++i) {
      meta.tokens.push_back({i, 0, i, "", i == 0 ? TokenKind::sot : TokenKind::word});
    }
    io::write_embeddings(m, meta, dir / "cond.sseb");
  }
};

TEST_F(CliTest, BuildSubspacePrintsShape) {
  ::testing::internal::CaptureStdout();
  const int rc = cli::run({"build-subspace", "--embeddings", fixture("concept.sseb"), "--k", "5",
                           "--out", p("s.sses")});
  const std::string out = ::testing::internal::GetCapturedStdout();
  ASSERT_EQ(rc, cli::kSuccess);
  EXPECT_NE(out.find("N = 200"), std::string::npos) << out;
  EXPECT_NE(out.find("d_c = 32"), std::string::npos);
  EXPECT_NE(out.find("k = 5"), std::string::npos);
  const auto s = io::read_subspace(dir / "s.sses");
  EXPECT_EQ(s.k(), 5);
  EXPECT_EQ(s.n_rows(), 200);
}

TEST_F(CliTest, BuildSubspaceUsageErrors) {
  EXPECT_EQ(run({"build-subspace", "--embeddings", fixture("concept.sseb"), "--k", "0", "--out",
                 p("s.sses")}),
            cli::kUsageError);
  EXPECT_EQ(run({"build-subspace", "--embeddings", fixture("concept.sseb"), "--out", p("s.sses")}),
            cli::kUsageError);
  EXPECT_EQ(run({"build-subspace", "--embeddings", fixture("concept.sseb"), "--k", "5", "--select",
                 "bogus", "--out", p("s.sses")}),
            cli::kUsageError);
  EXPECT_EQ(run({"frobnicate"}), cli::kUsageError);

  // a file with no `other` rows
  Rng rng(1);
  io::EmbeddingMetadata meta;
  for (Index i = 0; i < 4; ++i) meta.tokens.push_back({i, 0, i, "w", TokenKind::target});
  io::write_embeddings(rng.gaussian(4, 3), meta, dir / "t.sseb");
  EXPECT_EQ(run({"build-subspace", "--embeddings", p("t.sseb"), "--k", "1", "--select", "other",
                 "--out", p("s.sses")}),
            cli::kUsageError);
}

TEST_F(CliTest, FormatAndNumericalErrors) {
  EXPECT_EQ(run({"build-subspace", "--embeddings", p("missing.sseb"), "--k", "5", "--out", p("s.sses")}),
            cli::kFormatError);
  io::write_file(dir / "junk.sseb", io::Bytes{'J', 'U', 'N', 'K', 1, 0, 0, 0});
  EXPECT_EQ(run({"perturb", "--embeddings", p("junk.sseb"), "--k", "1", "--out", p("r.json")}),
            cli::kFormatError);

  // sidecar absent
  io::write_embeddings(Mat(Mat::Ones(3, 3)), std::nullopt, dir / "bare.sseb");
  EXPECT_EQ(run({"build-subspace", "--embeddings", p("bare.sseb"), "--k", "1", "--out", p("s.sses")}),
            cli::kFormatError);

  // rank-one concept asked for k = 2
  io::EmbeddingMetadata meta;
  for (Index i = 0; i < 4; ++i) meta.tokens.push_back({i, 0, i, "w", TokenKind::target});
  io::write_embeddings(Mat(Mat::Ones(4, 3)), meta, dir / "r1.sseb");
  EXPECT_EQ(run({"build-subspace", "--embeddings", p("r1.sseb"), "--k", "2", "--out", p("s.sses")}),
            cli::kNumericalError);
}

TEST_F(CliTest, SuppressZeroCondition) {
  build_subspace();
  write_condition(Mat::Zero(6, 32));
  ASSERT_EQ(run({"suppress", "--subspace", p("s.sses"), "--condition", p("cond.sseb"), "--out",
                 p("out.sseb"), "--report", p("rep.json")}),
            cli::kSuccess);
  EXPECT_EQ(io::read_embeddings(dir / "out.sseb").matrix.norm(), 0.0);
  const json rep = read_json(dir / "rep.json");
  EXPECT_EQ(rep["k"], 5);
  ASSERT_EQ(rep["tokens"].size(), 6u);
  for (const auto& t : rep["tokens"]) EXPECT_EQ(t["mse"].get<double>(), 0.0);
}

TEST_F(CliTest, SuppressReportSinglesOutConceptRow) {
  build_subspace();
  const auto s = io::read_subspace(dir / "s.sses");
  Rng rng(2);
  Mat m(6, 32);
  for (Index i = 0; i < 6; ++i) {
    m.row(i) = project_complement(rng.gaussian(32), s.basis).transpose() * 0.1;
  }
  m.row(4) = (s.basis.vectors() * rng.gaussian(5)).transpose() * 5.0;
  write_condition(m);
  ASSERT_EQ(run({"suppress", "--subspace", p("s.sses"), "--condition", p("cond.sseb"), "--out",
                 p("out.sseb"), "--report", p("rep.json")}),
            cli::kSuccess);
  const json rep = read_json(dir / "rep.json");
  double top = 0;
  int top_row = -1;
  double rest = 0;
  for (const auto& t : rep["tokens"]) {
    const double mse = t["mse"];
    if (mse > top) {
      rest = std::max(rest, top);
      top = mse;
      top_row = t["row"];
    } else {
      rest = std::max(rest, mse);
    }
  }
  EXPECT_EQ(top_row, 4);
  EXPECT_GT(top, 100.0 * rest);
  EXPECT_EQ(rep["tokens"][0]["kind"], "sot");
  ASSERT_TRUE(fs::exists(dir / "out.meta.json"));

  ASSERT_EQ(run({"suppress", "--subspace", p("s.sses"), "--condition", p("cond.sseb"), "--skip-sot",
                 "--out", p("out2.sseb"), "--report", p("rep2.json")}),
            cli::kSuccess);
  EXPECT_EQ(read_json(dir / "rep2.json")["tokens"][0]["mse"].get<double>(), 0.0);
  EXPECT_EQ(read_json(dir / "rep2.json")["skip_sot"], true);
}

TEST_F(CliTest, SuppressWidthMismatchIsFormatError) {
  build_subspace();
  write_condition(Mat::Ones(3, 31));
  EXPECT_EQ(run({"suppress", "--subspace", p("s.sses"), "--condition", p("cond.sseb"), "--out",
                 p("out.sseb"), "--report", p("rep.json")}),
            cli::kFormatError);
}

class CliPipeline : public CliTest {
 protected:
  void SetUp() override {
    CliTest::SetUp();
    build_subspace();
    ASSERT_EQ(run({"suppress", "--subspace", p("s.sses"), "--condition", fixture("condition.sseb"),
                   "--out", p("sup.sseb"), "--report", p("rep.json")}),
              cli::kSuccess);
  }

  std::vector<std::string> optimize_args(const std::string& tag) const {
    return {"optimize", "--subspace", p("s.sses"), "--original", fixture("condition.sseb"),
            "--suppressed", p("sup.sseb"), "--denoiser", "toy", "--out", p(tag + ".sseb"),
            "--trace", p(tag + ".json")};
  }
};

TEST_F(CliPipeline, OptimizeDefaultsAreMonotoneAndFrozen) {
  ASSERT_EQ(run(optimize_args("opt")), cli::kSuccess);
  const json trace = read_json(dir / "opt.json");
  EXPECT_EQ(trace["t_start"], 30);
  EXPECT_EQ(trace["t_end"], 50);
  EXPECT_EQ(trace["learning_rate"].get<double>(), 1e-3);
  EXPECT_TRUE(trace["subspace_frozen"].get<bool>());
  EXPECT_TRUE(trace["loss_monotone"].get<bool>());
  ASSERT_EQ(trace["steps"].size(), 20u);

  const auto s = io::read_subspace(dir / "s.sses");
  const Mat sup = io::read_embeddings(dir / "sup.sseb").matrix;
  const Mat out = io::read_embeddings(dir / "opt.sseb").matrix;
  // the file boundary rounds to f32, so the freeze holds to single precision here
  EXPECT_LE(((out - sup) * s.basis.vectors()).norm(), 1e-6 * sup.norm());
}

TEST_F(CliPipeline, OptimizeIsDeterministic) {
  ASSERT_EQ(run(optimize_args("a")), cli::kSuccess);
  ASSERT_EQ(run(optimize_args("b")), cli::kSuccess);
  EXPECT_EQ(io::read_file(dir / "a.sseb"), io::read_file(dir / "b.sseb"));
  EXPECT_EQ(io::read_text(dir / "a.json"), io::read_text(dir / "b.json"));
}

TEST_F(CliPipeline, OptimizeErrors) {
  auto args = optimize_args("x");
  args.insert(args.end(), {"--lr", "1e+6"});
  EXPECT_EQ(run(args), cli::kNumericalError);

  args = optimize_args("x");
  args.insert(args.end(), {"--t-start", "45", "--t-end", "40"});
  EXPECT_EQ(run(args), cli::kUsageError);

  args = optimize_args("x");
  args.insert(args.end(), {"--optimizer", "sgd"});
  EXPECT_EQ(run(args), cli::kUsageError);

  io::write_text(dir / "bad.json", R"({"k": 0})");
  args = optimize_args("x");
  args.insert(args.end(), {"--config", p("bad.json")});
  EXPECT_EQ(run(args), cli::kFormatError);
}

TEST_F(CliPipeline, OptimizeAdamFromConfig) {
  io::write_text(dir / "cfg.json", R"({"optimizer": "adam_like", "updates_per_step": 2, "seed": 5})");
  auto args = optimize_args("adam");
  args.insert(args.end(), {"--config", p("cfg.json")});
  ASSERT_EQ(run(args), cli::kSuccess);
  const json trace = read_json(dir / "adam.json");
  EXPECT_EQ(trace["optimizer"], "adam_like");
  EXPECT_EQ(trace["seed"], 5);
  EXPECT_TRUE(trace["subspace_frozen"].get<bool>());
}

TEST_F(CliTest, PerturbReportFields) {
  ASSERT_EQ(run({"perturb", "--embeddings", fixture("concept.sseb"), "--select", "target,eot", "--k",
                 "5", "--out", p("r.json")}),
            cli::kSuccess);
  const json r = read_json(dir / "r.json");
  std::vector<std::string> keys;
  for (const auto& [k, v] : r.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"angles_deg", "bound", "delta_norm", "gap_eigen",
                                            "gap_singular", "mean_angle_deg", "sin_theta"}));
  EXPECT_EQ(r["angles_deg"].size(), 5u);
  EXPECT_LE(r["sin_theta"].get<double>(), r["bound"].get<double>());
}

TEST_F(CliTest, PerturbZeroRowAndTrials) {
  ASSERT_EQ(run({"perturb", "--embeddings", fixture("concept.sseb"), "--k", "5", "--zero-row",
                 "--out", p("z.json")}),
            cli::kSuccess);
  const json z = read_json(dir / "z.json");
  for (const auto& th : z["angles_deg"]) EXPECT_LE(th.get<double>(), 1e-8);
  EXPECT_EQ(z["delta_norm"].get<double>(), 0.0);

  ASSERT_EQ(run({"perturb", "--embeddings", fixture("concept.sseb"), "--k", "5", "--trials", "10",
                 "--seed", "3", "--out", p("t.json")}),
            cli::kSuccess);
  const json t = read_json(dir / "t.json");
  EXPECT_EQ(t["trials"], 10);
  EXPECT_EQ(t["reports"].size(), 10u);
  EXPECT_EQ(t["bound_violations"], 0);
  EXPECT_GE(t["max_angle_deg"].get<double>(), t["mean_angle_deg"].get<double>());
}

TEST_F(CliTest, PerturbDegenerateGapWritesInfSentinel) {
  // exact in f32, so σ_2 = σ_3 survives the file round-trip
  Mat a = Mat::Zero(8, 4);
  a.diagonal() << 3, 2, 2, 1;
  io::write_embeddings(a, std::nullopt, dir / "deg.sseb");
  ASSERT_EQ(run({"perturb", "--embeddings", p("deg.sseb"), "--k", "2", "--zero-row", "--out",
                 p("d.json")}),
            cli::kSuccess);
  const json d = read_json(dir / "d.json");
  EXPECT_EQ(d["bound"], "+inf");
}

TEST_F(CliTest, PerturbRankOutOfBounds) {
  EXPECT_EQ(run({"perturb", "--embeddings", fixture("condition.sseb"), "--k", "8", "--out",
                 p("r.json")}),
            cli::kUsageError);
}

TEST(CliVerify, PristineSuitePasses) { EXPECT_EQ(run({"verify"}), cli::kSuccess); }

TEST(CliVerify, BrokenProjectorFails) {
  EXPECT_EQ(run({"verify", "--break-projector"}), cli::kVerificationFailure);
}

}  // namespace
}  // namespace cerase
