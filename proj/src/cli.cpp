#include "cerase/cli.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cerase/io.hpp"
#include "cerase/perturbation.hpp"
#include "cerase/verify.hpp"

namespace cerase::cli {

namespace {

using nlohmann::json;
using Mat = MatrixX<double>;
using Vec = VectorX<double>;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySelection:
    case ErrorCode::RankOutOfBounds:
      return kUsageError;
    case ErrorCode::DegenerateConcept:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteInput:
      return kNumericalError;
    default:
      return kFormatError;
  }
}

void progress(const std::string& msg) { std::cerr << "[cerase] " << msg << "\n"; }

KindSet parse_selection(const std::vector<std::string>& names) {
  KindSet out;
  for (const auto& n : names) {
    const auto k = parse_token_kind(n);
    if (!k) throw UsageError("unknown token kind '" + n + "'");
    out.insert(*k);
  }
  return out;
}

Vec gaussian_vector(std::mt19937_64& engine, Index n) {
  std::normal_distribution<double> normal;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(engine);
  return v;
}

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}

json report_json(const PerturbationReport<double>& r) {
  return {{"delta_norm", r.terms.delta_norm},
          {"gap_singular", r.terms.gap_singular},
          {"gap_eigen", r.terms.gap_eigen},
          {"bound", number_or_inf(r.terms.bound)},
          {"angles_deg", r.angles_deg},
          {"mean_angle_deg", r.mean_angle_deg},
          {"sin_theta", r.sin_theta}};
}

// ---------------------------------------------------------------- build-subspace

struct BuildOptions {
  std::string embeddings;
  int k = 0;
  std::vector<std::string> select{"target", "eot"};
  bool center = false;
  std::string config;
  std::string out;
};

int cmd_build_subspace(const BuildOptions& o, bool k_given) {
  int k = o.k;
  if (!k_given) {
    if (o.config.empty()) throw UsageError("--k is required (or a --config providing k)");
    k = io::load_config(o.config).k;
  }
  const KindSet selection = parse_selection(o.select);
  progress("reading " + o.embeddings);
  const io::EmbeddingFile file = io::read_embeddings(o.embeddings);
  if (!file.meta) {
    throw Error(ErrorCode::IoFailure, "missing sidecar " + io::sidecar_path(o.embeddings).string());
  }
  auto concept_matrix = assemble_concept_matrix(io::to_token_records(file), selection);
  if (o.center) concept_matrix.matrix = center_columns(concept_matrix.matrix);
  const auto s = build_semantic_subspace(concept_matrix, k);
  io::write_subspace(s, o.out);

  std::cout << "N = " << s.n_rows() << "\nd_c = " << s.d_c() << "\nk = " << s.k() << "\nsigma =";
  std::cout.precision(10);
  for (Index i = 0; i < s.k(); ++i) std::cout << " " << s.sigma_k(i);
  std::cout << "\n";
  return kSuccess;
}

// ---------------------------------------------------------------- suppress

struct SuppressOptions {
  std::string subspace;
  std::string condition;
  bool skip_sot = false;
  std::string config;
  std::string out;
  std::string report;
};

int cmd_suppress(const SuppressOptions& o) {
  bool skip_sot = o.skip_sot;
  if (!o.config.empty()) skip_sot = skip_sot || io::load_config(o.config).skip_sot;
  const auto s = io::read_subspace(o.subspace);
  const io::EmbeddingFile file = io::read_embeddings(o.condition);
  const ConditionTokens<double> c = io::to_condition(file);
  progress("suppressing " + std::to_string(c.n_tokens()) + " tokens with k = " +
           std::to_string(s.k()));
  const auto out = suppress_condition(c, s, SuppressionConfig{s.k(), skip_sot, {}});
  io::write_embeddings(out.tokens, file.meta, o.out);

  json rows = json::array();
  for (Index i = 0; i < c.n_tokens(); ++i) {
    rows.push_back({{"row", i},
                    {"kind", std::string(to_string(c.roles[std::size_t(i)]))},
                    {"mse", out.per_token_delta(i)}});
  }
  const json rep = {{"k", s.k()}, {"skip_sot", skip_sot}, {"tokens", rows}};
  io::write_text(o.report, rep.dump(2) + "\n");
  return kSuccess;
}

// ---------------------------------------------------------------- optimize

struct OptimizeOptions {
  std::string subspace;
  std::string original;
  std::string suppressed;
  std::string denoiser = "toy";
  std::string config;
  std::uint64_t seed = 42;
  int t_start = 30;
  int t_end = 50;
  int steps = 50;
  double lr = 1e-3;
  std::string optimizer = "plain_gd";
  int updates_per_step = 1;
  int state_dim = 32;
  int noise_dim = 32;
  std::string out;
  std::string trace;
};

int cmd_optimize(OptimizeOptions o, const CLI::App& sub) {
  if (!o.config.empty()) {
    const io::RunConfig rc = io::load_config(o.config);
    if (!sub.count("--seed")) o.seed = rc.seed;
    if (!sub.count("--t-start")) o.t_start = rc.t_start;
    if (!sub.count("--t-end")) o.t_end = rc.t_end;
    if (!sub.count("--lr")) o.lr = rc.learning_rate;
    if (!sub.count("--optimizer")) o.optimizer = std::string(to_string(rc.optimizer));
    if (!sub.count("--updates-per-step")) o.updates_per_step = rc.updates_per_step;
  }
  if (o.t_start > o.t_end) throw UsageError("--t-start must not exceed --t-end");
  if (o.t_end > o.steps) throw UsageError("--t-end must not exceed --steps");

  OptimizationConfig cfg;
  cfg.t_start = o.t_start;
  cfg.t_end = o.t_end;
  cfg.learning_rate = o.lr;
  cfg.optimizer = o.optimizer == "adam_like" ? OptimizerKind::adam_like : OptimizerKind::plain_gd;
  cfg.updates_per_step = o.updates_per_step;
  cfg.divergence_limit = double(std::numeric_limits<float>::max());  // output is f32

  const auto s = io::read_subspace(o.subspace);
  const io::EmbeddingFile orig_file = io::read_embeddings(o.original);
  const io::EmbeddingFile sup_file = io::read_embeddings(o.suppressed);
  const ConditionTokens<double> original = io::to_condition(orig_file);
  SuppressedCondition<double> suppressed;
  suppressed.tokens = sup_file.matrix;
  suppressed.per_token_delta = Vec::Zero(sup_file.matrix.rows());
  suppressed.config_used.k = s.k();

  const ToyDenoiser<double> den(
      o.seed, {original.n_tokens(), original.d_c(), o.state_dim, o.noise_dim, o.steps});
  std::mt19937_64 engine(o.seed);
  const Vec x_init = gaussian_vector(engine, o.state_dim);

  progress("optimizing t in [" + std::to_string(o.t_start) + ", " + std::to_string(o.t_end) +
           ") with " + o.optimizer + ", lr = " + std::to_string(o.lr));
  const auto trace = run_optimization(original, suppressed, s, den, cfg, x_init);
  io::write_embeddings(trace.final_tokens, orig_file.meta, o.out);

  json steps = json::array();
  bool frozen = true;
  bool monotone = true;
  for (const auto& st : trace.steps) {
    frozen = frozen && st.max_subspace_drift <= 1e-8 * std::max(st.token_scale, 1e-300);
    monotone = monotone && st.loss_after <= st.loss_before;
    steps.push_back({{"t", st.t},
                     {"loss_before", st.loss_before},
                     {"loss_after", st.loss_after},
                     {"max_subspace_drift", st.max_subspace_drift},
                     {"token_scale", st.token_scale},
                     {"grad_norm", st.grad_norm},
                     {"grad_subspace_component_norm", st.grad_subspace_component_norm}});
  }
  const json doc = {{"denoiser", o.denoiser},
                    {"seed", o.seed},
                    {"optimizer", o.optimizer},
                    {"learning_rate", o.lr},
                    {"t_start", o.t_start},
                    {"t_end", o.t_end},
                    {"steps_total", o.steps},
                    {"updates_per_step", o.updates_per_step},
                    {"subspace_frozen", frozen},
                    {"loss_monotone", monotone},
                    {"steps", steps}};
  io::write_text(o.trace, doc.dump(2) + "\n");
  return kSuccess;
}

// ---------------------------------------------------------------- perturb

struct PerturbOptions {
  std::string embeddings;
  int k = 5;
  int trials = 0;
  std::uint64_t seed = 42;
  double row_norm = 1.0;
  bool zero_row = false;
  std::vector<std::string> select;
  std::string out;
};

int cmd_perturb(const PerturbOptions& o) {
  const io::EmbeddingFile file = io::read_embeddings(o.embeddings);
  Mat a = file.matrix;
  if (!o.select.empty()) {
    a = assemble_concept_matrix(io::to_token_records(file), parse_selection(o.select)).matrix;
  }

  json doc;
  if (o.trials > 0) {
    progress("factoring " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
    const auto before = svd(a);
    std::mt19937_64 engine(o.seed);
    json reports = json::array();
    double mean_sum = 0;
    double max_angle = 0;
    double max_sin = 0;
    int violations = 0;
    for (int t = 0; t < o.trials; ++t) {
      const Vec row = o.zero_row ? Vec::Zero(a.cols())
                                 : Vec(gaussian_vector(engine, a.cols()).normalized() * o.row_norm);
      const auto rep = verify_bound(before, row, o.k);
      mean_sum += rep.mean_angle_deg;
      for (double th : rep.angles_deg) max_angle = std::max(max_angle, th);
      max_sin = std::max(max_sin, rep.sin_theta);
      if (!rep.bound_holds) ++violations;
      reports.push_back(report_json(rep));
    }
    doc = {{"trials", o.trials},
           {"seed", o.seed},
           {"mean_angle_deg", mean_sum / o.trials},
           {"max_angle_deg", max_angle},
           {"max_sin_theta", max_sin},
           {"bound_violations", violations},
           {"reports", reports}};
  } else if (o.zero_row) {
    doc = report_json(verify_bound(a, Vec(Vec::Zero(a.cols())), o.k));
  } else {
    if (a.rows() < 2) throw UsageError("need at least two rows to append the last one");
    const Mat head = a.topRows(a.rows() - 1);
    doc = report_json(verify_bound(head, Vec(a.row(a.rows() - 1).transpose()), o.k));
  }
  io::write_text(o.out, doc.dump(2) + "\n");
  return kSuccess;
}

// ---------------------------------------------------------------- verify

int cmd_verify(std::uint64_t seed, bool break_projector) {
  verify::Options opts;
  opts.seed = seed;
  if (break_projector) {
    opts.projector = [](const Mat& rows, const SubspaceBasis<double>& b) {
      return Mat(0.9 * project_rows(rows, b));
    };
  }
  const auto results = verify::run_suite(opts);
  verify::print_table(std::cout, results);
  return verify::all_passed(results) ? kSuccess : kVerificationFailure;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Concept subspace erasure toolkit"};
  app.require_subcommand(1);

  BuildOptions build;
  auto* b = app.add_subcommand("build-subspace", "Factor the concept token matrix into a subspace bundle");
  b->add_option("--embeddings", build.embeddings, "SSE-EMB file with sidecar")->required();
  auto* k_opt = b->add_option("--k", build.k, "Number of principal components")
                    ->check(CLI::PositiveNumber);
  b->add_option("--select", build.select, "Token kinds to stack")->delimiter(',');
  b->add_flag("--center", build.center, "Remove column means before factoring");
  b->add_option("--config", build.config, "RunConfig JSON");
  b->add_option("--out", build.out, "Output SSE-SUB path")->required();

  SuppressOptions sup;
  auto* s = app.add_subcommand("suppress", "Remove the concept components from every condition token");
  s->add_option("--subspace", sup.subspace)->required();
  s->add_option("--condition", sup.condition)->required();
  s->add_flag("--skip-sot", sup.skip_sot, "Leave the start-of-text token untouched");
  s->add_option("--config", sup.config);
  s->add_option("--out", sup.out)->required();
  s->add_option("--report", sup.report, "Per-token MSE report (JSON)")->required();

  OptimizeOptions opt;
  auto* o = app.add_subcommand("optimize", "Refine suppressed tokens with complement-projected gradients");
  o->add_option("--subspace", opt.subspace)->required();
  o->add_option("--original", opt.original)->required();
  o->add_option("--suppressed", opt.suppressed)->required();
  o->add_option("--denoiser", opt.denoiser)->check(CLI::IsMember({"toy"}));
  o->add_option("--config", opt.config);
  o->add_option("--seed", opt.seed);
  o->add_option("--t-start", opt.t_start)->check(CLI::NonNegativeNumber);
  o->add_option("--t-end", opt.t_end)->check(CLI::NonNegativeNumber);
  o->add_option("--steps", opt.steps, "Total sampling steps T")->check(CLI::PositiveNumber);
  o->add_option("--lr", opt.lr)->check(CLI::PositiveNumber);
  o->add_option("--optimizer", opt.optimizer)->check(CLI::IsMember({"plain_gd", "adam_like"}));
  o->add_option("--updates-per-step", opt.updates_per_step)->check(CLI::PositiveNumber);
  o->add_option("--state-dim", opt.state_dim)->check(CLI::PositiveNumber);
  o->add_option("--noise-dim", opt.noise_dim)->check(CLI::PositiveNumber);
  o->add_option("--out", opt.out)->required();
  o->add_option("--trace", opt.trace)->required();

  PerturbOptions per;
  auto* p = app.add_subcommand("perturb", "Measure how one appended row moves the top-k subspace");
  p->add_option("--embeddings", per.embeddings)->required();
  p->add_option("--k", per.k)->required()->check(CLI::PositiveNumber);
  p->add_option("--trials", per.trials, "Random unit rows to append")->check(CLI::NonNegativeNumber);
  p->add_option("--seed", per.seed);
  p->add_option("--row-norm", per.row_norm)->check(CLI::NonNegativeNumber);
  p->add_flag("--zero-row", per.zero_row, "Append the zero vector (control)");
  p->add_option("--select", per.select)->delimiter(',');
  p->add_option("--out", per.out)->required();

  std::uint64_t verify_seed = 42;
  bool break_projector = false;
  auto* v = app.add_subcommand("verify", "Run the built-in property suite");
  v->add_option("--seed", verify_seed);
  v->add_flag("--break-projector", break_projector)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (b->parsed()) return cmd_build_subspace(build, k_opt->count() > 0);
    if (s->parsed()) return cmd_suppress(sup);
    if (o->parsed()) return cmd_optimize(opt, *o);
    if (p->parsed()) return cmd_perturb(per);
    if (v->parsed()) return cmd_verify(verify_seed, break_projector);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFormatError;
  }
  return kUsageError;
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace cerase::cli
