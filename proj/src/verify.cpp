#include "cerase/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <iomanip>
#include <random>

#include "cerase/io.hpp"
#include "cerase/optimizer.hpp"
#include "cerase/perturbation.hpp"
#include "cerase/suppression.hpp"

namespace cerase::verify {

namespace {

using Mat = MatrixX<double>;
using Vec = VectorX<double>;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Mat gaussian(Index rows, Index cols) {
    Mat m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) m(i, j) = normal_(engine_);
    }
    return m;
  }
  Vec gaussian(Index n) { return gaussian(n, 1); }
  Mat orthonormal(Index rows, Index cols) {
    Eigen::HouseholderQR<Mat> qr(gaussian(rows, cols));
    return qr.householderQ() * Mat::Identity(rows, cols);
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

// Concept-like matrix: k strong directions plus weak isotropic noise.
Mat planted_matrix(Rng& rng, Index n, Index d, Index k) {
  const Mat q = rng.orthonormal(d, k);
  Vec strength(k);
  for (Index j = 0; j < k; ++j) strength(j) = 3.0 * double(k - j) + 2.0;
  return rng.gaussian(n, k) * strength.asDiagonal() * q.transpose() + 0.05 * rng.gaussian(n, d);
}

// Singular values from the eigenvalues of mᵀm accumulated in long double.
Vec gram_singular_values(const Mat& m) {
  using LMat = MatrixX<long double>;
  const LMat ml = m.cast<long double>();
  const LMat gram = ml.transpose() * ml;
  Eigen::SelfAdjointEigenSolver<LMat> es(gram, Eigen::EigenvaluesOnly);
  const Index r = std::min(m.rows(), m.cols());
  Vec out(r);
  const auto& ev = es.eigenvalues();
  for (Index i = 0; i < r; ++i) {
    out(i) = double(std::sqrt(std::max(ev(ev.size() - 1 - i), 0.0L)));
  }
  return out;
}

struct Check {
  std::string name;
  double limit;
  std::function<double(Rng&, std::string&)> body;  // returns worst metric
};

bool same_bits(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

std::vector<PropertyResult> run_suite(const Options& opts) {
  const RowProjector proj = opts.projector ? opts.projector : [](const Mat& rows, const SubspaceBasis<double>& b) {
    return project_rows(rows, b);
  };

  std::vector<Check> checks;

  checks.push_back({"svd_vs_gram_oracle", 1e-8, [](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const Mat m = rng.gaussian(rng.uniform_int(2, 32), rng.uniform_int(2, 32));
      const Vec got = svd(m).sigma;
      const Vec want = gram_singular_values(m);
      for (Index i = 0; i < got.size(); ++i) {
        worst = std::max(worst, std::abs(got(i) - want(i)) / want(i));
      }
    }
    return worst;
  }});

  checks.push_back({"svd_orthonormal_factors", 1e-10, [](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const Mat m = rng.gaussian(rng.uniform_int(1, 40), rng.uniform_int(1, 40));
      const auto f = svd(m);
      const Index r = f.rank_bound();
      worst = std::max(worst, (f.u.transpose() * f.u - Mat::Identity(r, r)).norm());
      worst = std::max(worst, (f.v.transpose() * f.v - Mat::Identity(r, r)).norm());
    }
    return worst;
  }});

  checks.push_back({"svd_reconstruction", 1e-8, [](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const Mat m = rng.gaussian(rng.uniform_int(1, 40), rng.uniform_int(1, 40));
      const auto f = svd(m);
      worst = std::max(worst, (f.u * f.sigma.asDiagonal() * f.v.transpose() - m).norm() / m.norm());
    }
    return worst;
  }});

  checks.push_back({"eckart_young", 1e-8, [](Rng& rng, std::string& note) {
    double worst = 0;
    int beaten = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const Mat m = rng.gaussian(rng.uniform_int(3, 20), rng.uniform_int(3, 20));
      const auto f = svd(m);
      const Index k = rng.uniform_int(1, int(f.rank_bound()));
      const double err = (m - truncate_reconstruct(f, k)).norm();
      const double want = std::sqrt(f.sigma.tail(f.rank_bound() - k).squaredNorm());
      worst = std::max(worst, std::abs(err - want) / std::max(m.norm(), 1e-300));
      const Mat rival = rng.gaussian(m.rows(), k) * rng.gaussian(k, m.cols());
      if ((m - rival).norm() < err - 1e-12) ++beaten;
    }
    if (beaten) note = std::to_string(beaten) + " random rank-k matrices did better";
    return beaten ? 1.0 : worst;
  }});

  checks.push_back({"svd_determinism", 0.0, [](Rng& rng, std::string&) {
    const Mat m = rng.gaussian(30, 12);
    const auto a = svd(m);
    const auto b = svd(m);
    return same_bits(a.u, b.u) && same_bits(a.v, b.v) && same_bits(a.sigma, b.sigma) ? 0.0 : 1.0;
  }});

  checks.push_back({"projector_idempotent_symmetric", 1e-10, [proj](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Index d = rng.uniform_int(2, 64);
      const Index k = rng.uniform_int(1, int(std::min<Index>(8, d)));
      const SubspaceBasis<double> b(rng.orthonormal(d, k));
      const Mat p = proj(Mat::Identity(d, d), b);
      worst = std::max({worst, (p * p - p).norm(), (p - p.transpose()).norm()});
    }
    return worst;
  }});

  checks.push_back({"projector_trace", 1e-8, [proj](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Index d = rng.uniform_int(2, 64);
      const Index k = rng.uniform_int(1, int(std::min<Index>(8, d)));
      const SubspaceBasis<double> b(rng.orthonormal(d, k));
      worst = std::max(worst, std::abs(proj(Mat::Identity(d, d), b).trace() - double(k)));
    }
    return worst;
  }});

  checks.push_back({"pythagoras", 1e-10, [proj](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Index d = rng.uniform_int(2, 64);
      const Index k = rng.uniform_int(1, int(std::min<Index>(8, d)));
      const SubspaceBasis<double> b(rng.orthonormal(d, k));
      const Mat x = rng.gaussian(1, d);
      const Mat inside = proj(x, b);
      const Mat outside = x - inside;
      const double total = x.squaredNorm();
      worst = std::max(worst,
                       std::abs(total - inside.squaredNorm() - outside.squaredNorm()) / total);
    }
    return worst;
  }});

  checks.push_back({"gradient_orthogonality", 1e-10, [proj](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Index d = rng.uniform_int(4, 64);
      const Index k = rng.uniform_int(1, int(std::min<Index>(8, d - 1)));
      const SubspaceBasis<double> b(rng.orthonormal(d, k));
      const Mat g = rng.gaussian(rng.uniform_int(1, 8), d);
      const Mat perp = g - proj(g, b);
      const Mat dots = (perp * b.vectors()).cwiseAbs();
      for (Index i = 0; i < g.rows(); ++i) {
        worst = std::max(worst, dots.row(i).maxCoeff() / g.row(i).norm());
      }
    }
    return worst;
  }});

  checks.push_back({"suppression_exactness", 1e-8, [](Rng& rng, std::string&) {
    double worst = 0;
    const auto s = build_semantic_subspace(planted_matrix(rng, 60, 16, 3), 3);
    const Mat r_hat = s.reconstruct();
    for (int trial = 0; trial < 50; ++trial) {
      const Vec x = rng.gaussian(16) * (r_hat.rowwise().norm().mean() / 4.0);
      const Vec out = suppress_token(x, s);
      Mat aug(r_hat.rows() + 1, 16);
      aug.row(0) = x.transpose();
      aug.bottomRows(r_hat.rows()) = r_hat;
      const Mat top = svd(aug).v.leftCols(3);
      worst = std::max(worst, (top.transpose() * out).norm() / x.norm());
    }
    return worst;
  }});

  checks.push_back({"suppression_residual_energy", 0.05, [](Rng& rng, std::string&) {
    double worst = 0;
    // many rows keep row-scale tokens well below sigma_k
    const auto s = build_semantic_subspace(planted_matrix(rng, 300, 24, 4), 4);
    const double scale = s.reconstruct().rowwise().norm().mean();
    for (int trial = 0; trial < 100; ++trial) {
      const Vec x = rng.gaussian(24).normalized() * scale;
      worst = std::max(worst, residual_energy(suppress_token(x, s), s.basis));
    }
    return worst;
  }});

  checks.push_back({"suppression_rank_economy", 1e-8, [](Rng& rng, std::string& note) {
    double worst_fast = 0;
    double worst_rank = 0;
    const auto s = build_semantic_subspace(planted_matrix(rng, 50, 20, 5), 5);
    const Mat r_hat = s.reconstruct();
    for (int trial = 0; trial < 30; ++trial) {
      const Vec x = rng.gaussian(20);
      Mat aug(r_hat.rows() + 1, 20);
      aug.row(0) = x.transpose();
      aug.bottomRows(r_hat.rows()) = r_hat;
      const Vec sig = svd(aug).sigma;
      worst_rank = std::max(worst_rank, sig(6) / sig(0));
      worst_fast = std::max(worst_fast, (suppress_token(x, s) - suppress_token_naive(x, s)).norm() /
                                            x.norm());
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "sigma_k+2/sigma_1 = %.3g", worst_rank);
    note = buf;
    return worst_rank > 1e-9 ? 1.0 : worst_fast;
  }});

  checks.push_back({"suppression_batch_independence", 0.0, [](Rng& rng, std::string&) {
    const auto s = build_semantic_subspace(planted_matrix(rng, 40, 12, 3), 3);
    ConditionTokens<double> c{rng.gaussian(6, 12), std::vector<TokenKind>(6, TokenKind::word), {}};
    const auto batch = suppress_condition(c, s, SuppressionConfig{3, false, {}});
    for (Index i = 0; i < 6; ++i) {
      const Vec one = suppress_token<double>(c.tokens.row(i).transpose(), s);
      if (!same_bits(Mat(batch.tokens.row(i).transpose()), Mat(one))) return 1.0;
    }
    return 0.0;
  }});

  checks.push_back({"gradient_vs_finite_difference", 1e-5, [](Rng& rng, std::string&) {
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      ToyDenoiser<double>::Shape shape{rng.uniform_int(1, 4), rng.uniform_int(2, 10),
                                       rng.uniform_int(2, 12), rng.uniform_int(2, 12), 50};
      const ToyDenoiser<double> den(rng.next(), shape);
      const int t = rng.uniform_int(0, 50);
      const Vec x = rng.gaussian(shape.state_dim);
      const Mat c = rng.gaussian(shape.n_tokens, shape.d_c);
      const Vec target = rng.gaussian(shape.noise_dim);
      const Mat g = den.loss_gradient(x, t, c, target);
      const Mat fd = finite_diff_gradient<double>(den, x, t, c, target);
      worst = std::max(worst, (g - fd).norm() / std::max(g.norm(), 1e-12));
    }
    return worst;
  }});

  auto freeze_run = [](Rng& rng) {
    const auto s = build_semantic_subspace(planted_matrix(rng, 40, 16, 3), 3);
    ConditionTokens<double> orig{rng.gaussian(4, 16), std::vector<TokenKind>(4, TokenKind::word), {}};
    const auto sup = suppress_condition(orig, s, SuppressionConfig{3, false, {}});
    const ToyDenoiser<double> den(42, {4, 16, 32, 32, 50});
    return run_optimization(orig, sup, s, den, OptimizationConfig{}, rng.gaussian(32));
  };

  checks.push_back({"optimizer_subspace_freeze", 1e-8, [freeze_run](Rng& rng, std::string&) {
    const auto trace = freeze_run(rng);
    double worst = 0;
    for (const auto& st : trace.steps) {
      worst = std::max(worst, st.max_subspace_drift / std::max(st.token_scale, 1e-300));
    }
    return worst;
  }});

  checks.push_back({"optimizer_loss_descent", 0.0, [freeze_run](Rng& rng, std::string& note) {
    const auto trace = freeze_run(rng);
    double worst = 0;
    for (const auto& st : trace.steps) worst = std::max(worst, st.loss_after - st.loss_before);
    note = std::to_string(trace.steps.size()) + " steps";
    return worst;
  }});

  checks.push_back({"optimizer_trace_determinism", 0.0, [freeze_run](Rng& rng, std::string&) {
    const std::uint64_t seed = rng.next();
    Rng a(seed), b(seed);
    const auto ta = freeze_run(a);
    const auto tb = freeze_run(b);
    if (!same_bits(ta.final_tokens, tb.final_tokens) || ta.steps.size() != tb.steps.size()) {
      return 1.0;
    }
    for (std::size_t i = 0; i < ta.steps.size(); ++i) {
      if (ta.steps[i].loss_after != tb.steps[i].loss_after) return 1.0;
    }
    return 0.0;
  }});

  checks.push_back({"davis_kahan_bound", 1.0, [](Rng& rng, std::string& note) {
    double worst = 0;
    int violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Mat a = planted_matrix(rng, 60, 16, 3);
      const Vec row = rng.gaussian(16).normalized() * rng.uniform(0.1, 5.0);
      const auto rep = verify_bound(a, row, 3);
      if (!rep.bound_holds) ++violations;
      worst = std::max(worst, rep.sin_theta / rep.terms.bound);
    }
    note = std::to_string(violations) + " violations";
    return worst;
  }});

  checks.push_back({"sse_emb_roundtrip", 0.0, [](Rng& rng, std::string&) {
    for (int trial = 0; trial < 20; ++trial) {
      const Mat m = rng.gaussian(rng.uniform_int(1, 12), rng.uniform_int(1, 12));
      const io::Bytes bytes = io::encode_embeddings(m);
      if (io::encode_embeddings(io::decode_embeddings(bytes)) != bytes) return 1.0;
    }
    return 0.0;
  }});

  checks.push_back({"sse_sub_roundtrip", 0.0, [](Rng& rng, std::string&) {
    for (int trial = 0; trial < 20; ++trial) {
      const Index d = rng.uniform_int(3, 16);
      const Index k = rng.uniform_int(1, 3);
      const auto s = build_semantic_subspace(planted_matrix(rng, rng.uniform_int(4, 20), d, k), k);
      const io::Bytes bytes = io::encode_subspace(io::to_bundle(s));
      if (io::encode_subspace(io::decode_subspace(bytes)) != bytes) return 1.0;
    }
    return 0.0;
  }});

  checks.push_back({"header_fuzz_rejected", 0.0, [](Rng& rng, std::string&) {
    const io::Bytes good = io::encode_embeddings(rng.gaussian(3, 4));
    for (int trial = 0; trial < 200; ++trial) {
      io::Bytes bad = good;
      const auto pos = std::size_t(rng.uniform_int(0, 7));
      bad[pos] = static_cast<std::uint8_t>(bad[pos] ^ std::uint8_t(rng.uniform_int(1, 255)));
      try {
        io::decode_embeddings(bad);
        return 1.0;
      } catch (const Error&) {
      }
    }
    return 0.0;
  }});

  std::vector<PropertyResult> results;
  Rng seeder(opts.seed);
  for (const auto& c : checks) {
    Rng rng(seeder.next());
    PropertyResult r;
    r.name = c.name;
    r.limit = c.limit;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.metric = c.body(rng, r.note);
      r.passed = std::isfinite(r.metric) && r.metric <= c.limit;
    } catch (const std::exception& e) {
      r.passed = false;
      r.note = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

bool all_passed(const std::vector<PropertyResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

void print_table(std::ostream& os, const std::vector<PropertyResult>& results) {
  os << std::left << std::setw(34) << "property" << std::setw(6) << "ok" << std::setw(14)
     << "metric" << std::setw(10) << "limit" << std::setw(9) << "seconds" << "note\n";
  for (const auto& r : results) {
    os << std::left << std::setw(34) << r.name << std::setw(6) << (r.passed ? "PASS" : "FAIL")
       << std::setw(14) << std::setprecision(4) << r.metric << std::setw(10) << r.limit
       << std::setw(9) << std::fixed << std::setprecision(3) << r.seconds
       << std::defaultfloat << r.note << "\n";
  }
}

}  // namespace cerase::verify
