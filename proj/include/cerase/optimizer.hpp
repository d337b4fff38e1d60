#pragma once

// Noise-guide refinement of suppressed condition tokens. Gradients are
// restricted to the orthogonal complement of the concept subspace, so the
// tokens never move inside it.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cerase/suppression.hpp"

namespace cerase {

/// Evaluator of ε(x, t, c) together with the exact gradient of
/// ½‖ε(x, t, c) − target‖² with respect to the condition c.
template <typename Scalar>
class DenoiserOracle {
 public:
  virtual ~DenoiserOracle() = default;

  virtual Index state_dim() const = 0;
  virtual Index noise_dim() const = 0;
  /// Number of sampling steps T; valid step indices are 0…T.
  virtual int max_step() const = 0;

  virtual VectorX<Scalar> predict(const VectorX<Scalar>& x, int t,
                                  const MatrixX<Scalar>& c) const = 0;
  virtual MatrixX<Scalar> loss_gradient(const VectorX<Scalar>& x, int t, const MatrixX<Scalar>& c,
                                        const VectorX<Scalar>& target) const = 0;
};

/// Linear stand-in for a conditional noise predictor:
///   ε(x, t, c) = A_t·x + L_t·vec(c) + d_t
/// with vec(c) the row-major flattening of the n_tokens × d_c condition.
/// Entries are regenerated on demand from (seed, t), each uniform with unit
/// variance and scaled by 1/√(column count).
template <typename Scalar>
class ToyDenoiser final : public DenoiserOracle<Scalar> {
 public:
  struct Shape {
    Index n_tokens = 4;
    Index d_c = 16;
    Index state_dim = 32;
    Index noise_dim = 32;
    int max_step = 50;
  };

  ToyDenoiser(std::uint64_t seed, Shape shape, Scalar coupling_scale = Scalar(1))
      : seed_(seed), shape_(shape), coupling_scale_(coupling_scale) {
    if (shape.n_tokens < 1 || shape.d_c < 1 || shape.state_dim < 1 || shape.noise_dim < 1 ||
        shape.max_step < 1) {
      throw Error(ErrorCode::ShapeMismatch, "toy denoiser dimensions must be positive");
    }
  }

  Index state_dim() const override { return shape_.state_dim; }
  Index noise_dim() const override { return shape_.noise_dim; }
  int max_step() const override { return shape_.max_step; }
  const Shape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }

  MatrixX<Scalar> state_map(int t) const {
    return generate(t, 1, shape_.noise_dim, shape_.state_dim, Scalar(1));
  }
  MatrixX<Scalar> coupling(int t) const {
    return generate(t, 2, shape_.noise_dim, shape_.n_tokens * shape_.d_c, coupling_scale_);
  }
  VectorX<Scalar> offset(int t) const {
    return generate(t, 3, shape_.noise_dim, 1, Scalar(1));
  }

  VectorX<Scalar> predict(const VectorX<Scalar>& x, int t,
                          const MatrixX<Scalar>& c) const override {
    check(x, t, c);
    const VectorX<Scalar> flat = c.transpose().reshaped();
    return state_map(t) * x + coupling(t) * flat + offset(t);
  }

  MatrixX<Scalar> loss_gradient(const VectorX<Scalar>& x, int t, const MatrixX<Scalar>& c,
                                const VectorX<Scalar>& target) const override {
    detail::check_dim(target.size(), shape_.noise_dim, "toy denoiser target");
    const VectorX<Scalar> residual = predict(x, t, c) - target;
    const VectorX<Scalar> g = coupling(t).transpose() * residual;
    return g.reshaped(shape_.d_c, shape_.n_tokens).transpose();
  }

 private:
  void check(const VectorX<Scalar>& x, int t, const MatrixX<Scalar>& c) const {
    detail::check_dim(x.size(), shape_.state_dim, "toy denoiser state");
    if (c.rows() != shape_.n_tokens || c.cols() != shape_.d_c) {
      throw Error(ErrorCode::ShapeMismatch, "condition is " + std::to_string(c.rows()) + "x" +
                                                std::to_string(c.cols()) + ", denoiser expects " +
                                                std::to_string(shape_.n_tokens) + "x" +
                                                std::to_string(shape_.d_c));
    }
    if (t < 0 || t > shape_.max_step) {
      throw Error(ErrorCode::ShapeMismatch, "step " + std::to_string(t) + " outside [0, T]");
    }
  }

  MatrixX<Scalar> generate(int t, std::uint32_t block, Index rows, Index cols,
                           Scalar scale) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(t), block};
    std::mt19937_64 engine(seq);
    const Scalar amplitude = scale * std::sqrt(Scalar(3)) / std::sqrt(Scalar(cols));
    MatrixX<Scalar> m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        // top 53 bits -> [0, 1), then affine to [-1, 1)
        const double u = double(engine() >> 11) * 0x1.0p-53;
        m(i, j) = amplitude * Scalar(2.0 * u - 1.0);
      }
    }
    return m;
  }

  std::uint64_t seed_;
  Shape shape_;
  Scalar coupling_scale_;
};

enum class OptimizerKind { plain_gd, adam_like };

constexpr std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::plain_gd ? "plain_gd" : "adam_like";
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizationConfig {
  int t_start = 30;
  int t_end = 50;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::plain_gd;
  AdamOptions adam;
  int updates_per_step = 1;
  /// Entries beyond this magnitude count as non-finite. Callers that store
  /// tokens as f32 set it to the f32 range.
  double divergence_limit = std::numeric_limits<double>::infinity();

  /// Throws SchemaViolation unless 0 ≤ t_start ≤ t_end ≤ t_max and η > 0.
  void validate(int t_max) const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::SchemaViolation, m); };
    if (t_start < 0) fail("t_start must be >= 0");
    if (t_start > t_end) fail("t_start must not exceed t_end");
    if (t_end > t_max) fail("t_end must not exceed T = " + std::to_string(t_max));
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (updates_per_step < 1) fail("updates_per_step must be >= 1");
    if (!(divergence_limit > 0.0)) fail("divergence_limit must be > 0");
  }
};

struct StepRecord {
  int t = 0;
  double loss_before = 0;
  double loss_after = 0;
  double max_subspace_drift = 0;  // ‖(c_after − c_before)·B‖_F
  double token_scale = 0;         // ‖c_before‖_F
  double grad_norm = 0;
  double grad_subspace_component_norm = 0;
};

template <typename Scalar>
struct OptimizationTrace {
  std::vector<StepRecord> steps;
  MatrixX<Scalar> final_tokens;
  VectorX<Scalar> final_state;
};

/// ‖ε̂ − ε‖²
template <typename Scalar>
Scalar noise_guide_loss(const VectorX<Scalar>& eps_hat, const VectorX<Scalar>& eps) {
  detail::check_dim(eps.size(), eps_hat.size(), "noise_guide_loss");
  return (eps_hat - eps).squaredNorm();
}

/// g − g·B·Bᵀ, row by row.
template <typename Scalar>
MatrixX<Scalar> project_gradient(const MatrixX<Scalar>& g, const SubspaceBasis<Scalar>& b) {
  return project_rows_complement(g, b);
}

/// Euler stand-in for the sampler update: x − eps / T.
template <typename Scalar>
VectorX<Scalar> toy_sampler_step(const VectorX<Scalar>& x, const VectorX<Scalar>& eps, int /*t*/,
                                 int total_steps) {
  detail::check_dim(eps.size(), x.size(), "toy_sampler_step");
  if (total_steps < 1) throw Error(ErrorCode::ShapeMismatch, "T must be >= 1");
  return x - eps / Scalar(total_steps);
}

/// Central differences of ½‖den(x, t, c) − target‖² over every entry of c.
template <typename Scalar>
MatrixX<Scalar> finite_diff_gradient(const DenoiserOracle<Scalar>& den, const VectorX<Scalar>& x,
                                     int t, const MatrixX<Scalar>& c,
                                     const VectorX<Scalar>& target) {
  const Scalar scale = std::max(Scalar(1), c.cwiseAbs().maxCoeff());
  const Scalar h = Scalar(1e-5) * scale;
  auto half_loss = [&](const MatrixX<Scalar>& cc) {
    return Scalar(0.5) * (den.predict(x, t, cc) - target).squaredNorm();
  };
  MatrixX<Scalar> g(c.rows(), c.cols());
  MatrixX<Scalar> probe = c;
  for (Index i = 0; i < c.rows(); ++i) {
    for (Index j = 0; j < c.cols(); ++j) {
      const Scalar orig = probe(i, j);
      probe(i, j) = orig + h;
      const Scalar up = half_loss(probe);
      probe(i, j) = orig - h;
      const Scalar down = half_loss(probe);
      probe(i, j) = orig;
      g(i, j) = (up - down) / (Scalar(2) * h);
    }
  }
  return g;
}

namespace detail {

template <typename Scalar>
void require_finite_gradient(const MatrixX<Scalar>& m, int t, const char* what, double limit) {
  if (!m.allFinite() || double(m.cwiseAbs().maxCoeff()) > limit) {
    throw Error(ErrorCode::NonFiniteGradient,
                std::string(what) + " became non-finite at step " + std::to_string(t) +
                    "; the learning rate is likely too large");
  }
}

}  // namespace detail

/// Refines `suppressed` so the denoiser output under it approaches the output
/// under `original`, one projected update per sampling step t ∈ [t_start, t_end).
/// The original-condition prediction is a constant target at each step.
template <typename Scalar>
OptimizationTrace<Scalar> run_optimization(const ConditionTokens<Scalar>& original,
                                           const SuppressedCondition<Scalar>& suppressed,
                                           const SemanticSubspace<Scalar>& s,
                                           const DenoiserOracle<Scalar>& den,
                                           const OptimizationConfig& cfg,
                                           const VectorX<Scalar>& x_init) {
  cfg.validate(den.max_step());
  if (original.tokens.rows() != suppressed.tokens.rows() ||
      original.tokens.cols() != suppressed.tokens.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "original and suppressed conditions differ in shape");
  }
  if (original.d_c() != s.d_c()) {
    throw Error(ErrorCode::ShapeMismatch, "condition width differs from the subspace dimension");
  }
  if (x_init.size() != den.state_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "initial state has the wrong dimension");
  }

  const auto& B = s.basis.vectors();
  const Scalar lr = Scalar(cfg.learning_rate);
  MatrixX<Scalar> current = suppressed.tokens;
  VectorX<Scalar> x = x_init;

  MatrixX<Scalar> m1 = MatrixX<Scalar>::Zero(current.rows(), current.cols());
  MatrixX<Scalar> m2 = m1;
  long adam_steps = 0;

  OptimizationTrace<Scalar> trace;
  for (int t = cfg.t_start; t < cfg.t_end; ++t) {
    const VectorX<Scalar> eps_hat = den.predict(x, t, original.tokens);
    const VectorX<Scalar> eps = den.predict(x, t, current);

    StepRecord rec;
    rec.t = t;
    rec.loss_before = double(noise_guide_loss(eps_hat, eps));
    rec.token_scale = double(current.norm());
    const MatrixX<Scalar> before = current;

    for (int u = 0; u < cfg.updates_per_step; ++u) {
      // d/dc ‖ε − ε̂‖² = 2·∂/∂c ½‖ε − ε̂‖²
      const MatrixX<Scalar> g = Scalar(2) * den.loss_gradient(x, t, current, eps_hat);
      detail::require_finite_gradient(g, t, "gradient", cfg.divergence_limit);
      if (u == 0) {
        rec.grad_norm = double(g.norm());
        rec.grad_subspace_component_norm = double((g * B).norm());
      }
      const MatrixX<Scalar> g_perp = project_gradient(g, s.basis);

      MatrixX<Scalar> update;
      if (cfg.optimizer == OptimizerKind::plain_gd) {
        update = g_perp;
      } else {
        const auto& a = cfg.adam;
        ++adam_steps;
        m1 = Scalar(a.beta1) * m1 + Scalar(1 - a.beta1) * g_perp;
        m2 = Scalar(a.beta2) * m2 + Scalar(1 - a.beta2) * g_perp.cwiseAbs2();
        const Scalar c1 = Scalar(1) - std::pow(Scalar(a.beta1), Scalar(adam_steps));
        const Scalar c2 = Scalar(1) - std::pow(Scalar(a.beta2), Scalar(adam_steps));
        const MatrixX<Scalar> adaptive =
            (m1 / c1).array() / ((m2 / c2).array().sqrt() + Scalar(a.epsilon));
        // coordinate-wise scaling and decay both leave the complement, so the
        // combined step is projected again
        update = project_gradient(MatrixX<Scalar>(adaptive + Scalar(a.weight_decay) * current),
                                  s.basis);
      }
      current -= lr * update;
      detail::require_finite_gradient(current, t, "tokens", cfg.divergence_limit);
    }

    rec.loss_after = double(noise_guide_loss(eps_hat, den.predict(x, t, current)));
    if (!std::isfinite(rec.loss_after)) {
      throw Error(ErrorCode::NonFiniteGradient,
                  "loss became non-finite at step " + std::to_string(t));
    }
    rec.max_subspace_drift = double(((current - before) * B).norm());
    trace.steps.push_back(rec);

    x = toy_sampler_step(x, eps, t, den.max_step());
  }
  trace.final_tokens = std::move(current);
  trace.final_state = std::move(x);
  return trace;
}

}  // namespace cerase
