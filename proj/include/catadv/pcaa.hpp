#pragma once

// Probabilistic categorical attack.
//
// The attack searches over unnormalized per-feature categorical parameters pi
// rather than over discrete inputs. It ascends the penalized objective
//
//   J(pi) = E_g[ loss(f(x'(pi, g)), y) ] - lambda * [ sum_i CE(x_i, pi_i) - zeta ]^+
//
// where x'(pi, g) is the Gumbel-Softmax relaxation and CE(x_i, pi_i) is the
// cross entropy of the clean category under the normalized row pi_i. The
// expectation is replaced by an average over n_g Gumbel draws per step. After
// optimisation, hard samples are drawn from pi and those within the l0 budget
// are queried on the model.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffcore.hpp"
#include "gumbel.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace catadv {

struct PcaaConfig {
  int epsilon = 1;
  /// Cross-entropy budget; negative means "derive from epsilon" (see effective_zeta).
  double zeta = -1.0;
  double zeta_per_feature = 1.0;
  double lambda = 1.0;
  double tau = 0.5;
  std::size_t n_gradient_samples = 8;
  std::size_t max_iterations = 50;
  double step_size = 0.5;
  double pi_min = kDefaultPiMin;
  double pi_max = kDefaultPiMax;
  /// Initial mass on the clean category, as a fraction of pi_max.
  double init_clean_mass = 0.9;
  std::size_t n_eval = 100;
  double delta = 0.05;

  double effective_zeta() const {
    return zeta >= 0.0 ? zeta : zeta_per_feature * static_cast<double>(epsilon);
  }

  void validate() const {
    if (epsilon < 0) throw ContractError("epsilon must be >= 0");
    if (zeta_per_feature < 0.0) throw ContractError("zeta per feature must be >= 0");
    if (lambda < 0.0) throw ContractError("lambda must be >= 0");
    if (!(tau > 0.0)) throw ContractError("tau must be > 0");
    if (n_gradient_samples == 0 || n_eval == 0) throw ContractError("sample counts must be >= 1");
    if (step_size < 0.0) throw ContractError("step size must be >= 0");
    if (!(pi_min > 0.0) || !(pi_max > pi_min)) throw ContractError("need 0 < pi_min < C");
    if (!(init_clean_mass > 0.0 && init_clean_mass <= 1.0)) {
      throw ContractError("initial clean mass must lie in (0, 1]");
    }
    if (!(delta >= 0.0 && delta < 1.0)) throw ContractError("delta must lie in [0, 1)");
  }
};

/// Outcome of one attack on one instance.
struct AttackResult {
  std::string method;
  bool success = false;
  std::optional<Features> best_example;
  double best_loss = -std::numeric_limits<double>::infinity();
  std::size_t samples_drawn = 0;
  std::size_t samples_admissible = 0;
  /// Forward passes on single inputs.
  std::size_t model_queries = 0;
  /// Input-gradient evaluations.
  std::size_t gradient_queries = 0;
  double wall_time = 0.0;
  /// Search aborted because its evaluation cap was hit.
  bool capped = false;
  /// Features chosen by a two-stage search's first stage, in selection order.
  std::vector<int> selected_features;

  std::size_t total_queries() const noexcept { return model_queries + gradient_queries; }
};

inline std::size_t l0_distance(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) {
    throw DimensionError("l0_distance: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i] ? 1 : 0;
  return diff;
}

/// Keeps the best candidate seen so far: a prediction flip beats any non-flip,
/// and within the same class the larger loss wins (first one on exact ties).
class CandidateTracker {
 public:
  void offer(std::span<const int> candidate, const Evaluation& eval, int label) {
    const bool flips = eval.predicted != label;
    const bool better = !best_ || (flips && !flips_) || (flips == flips_ && eval.loss > loss_);
    if (better) {
      best_ = Features(candidate.begin(), candidate.end());
      loss_ = eval.loss;
      flips_ = flips;
    }
  }

  void write(AttackResult& result) const {
    result.success = best_.has_value() && flips_;
    result.best_example = best_;
    result.best_loss = best_ ? loss_ : -std::numeric_limits<double>::infinity();
  }

 private:
  std::optional<Features> best_;
  double loss_ = -std::numeric_limits<double>::infinity();
  bool flips_ = false;
};

/// Warm start at the clean point: init_clean_mass * C on x_i, the rest of C
/// split over the other categories, then clamped.
inline AdversarialDistribution initial_distribution(std::span<const int> x, std::size_t d,
                                                    const PcaaConfig& config) {
  const double other = d > 1 ? config.pi_max * (1.0 - config.init_clean_mass) / static_cast<double>(d - 1)
                             : config.pi_max;
  Matrix pi(x.size(), d, other);
  for (std::size_t i = 0; i < x.size(); ++i) {
    pi(i, static_cast<std::size_t>(x[i])) = config.pi_max * config.init_clean_mass;
  }
  AdversarialDistribution::clamp(pi, config.pi_min, config.pi_max);
  return {std::move(pi), config.pi_min, config.pi_max};
}

/// Sum over features of -log(pi_{i,x_i} / sum_j pi_ij).
inline double total_cross_entropy(const AdversarialDistribution& pi, std::span<const int> x) {
  if (x.size() != pi.n()) throw DimensionError("feature count does not match pi");
  double total = 0.0;
  for (std::size_t i = 0; i < pi.n(); ++i) {
    double s = 0.0;
    for (double v : pi.pi().row(i)) s += v;
    total += std::log(s) - std::log(pi.pi()(i, static_cast<std::size_t>(x[i])));
  }
  return total;
}

/// [sum_i CE(x_i, pi_i) - zeta]^+ on pi's tape. The subgradient at the kink is 0.
inline Var ce_budget_penalty(const Var& pi, std::span<const int> x, double zeta) {
  if (x.size() != pi.rows()) throw DimensionError("feature count does not match pi");
  Var per_feature = sub(log(row_sum(pi)), log(gather_cols(pi, x)));
  return relu(add_scalar(sum(per_feature), -zeta));
}

inline double ce_budget_penalty(const AdversarialDistribution& pi, std::span<const int> x,
                                double zeta) {
  return std::max(0.0, total_cross_entropy(pi, x) - zeta);
}

/// Monte-Carlo estimate of J(pi) on a fixed set of Gumbel draws, recorded on pi's tape.
inline Var fixed_sample_objective(const Classifier& model, const Var& pi, std::span<const int> x,
                                  int y, std::span<const Matrix> gumbels, const PcaaConfig& config) {
  if (gumbels.empty()) throw ContractError("need at least one Gumbel sample");
  Tape& tape = pi.tape();
  std::vector<Var> rows;
  rows.reserve(gumbels.size());
  for (const Matrix& g : gumbels) {
    rows.push_back(reshape(gumbel_softmax(pi, g, config.tau), 1, model.input_width()));
  }
  auto params = model.parameters_on(tape, false);
  std::vector<int> labels(gumbels.size(), y);
  Var expected_loss = softmax_cross_entropy(model.forward(concat_rows(rows), params), labels);
  if (config.lambda == 0.0) return expected_loss;
  Var penalty = ce_budget_penalty(pi, x, config.effective_zeta());
  return sub(expected_loss, scale(penalty, config.lambda));
}

/// Gradient of the fixed-sample objective with respect to pi (n x d).
inline Matrix estimate_gradient(const Classifier& model, const AdversarialDistribution& pi,
                                std::span<const int> x, int y, std::span<const Matrix> gumbels,
                                const PcaaConfig& config, double* objective = nullptr) {
  Tape tape;
  Var p = tape.variable(pi.pi());
  Var j = fixed_sample_objective(model, p, x, y, gumbels, config);
  tape.backward(j);
  if (objective) *objective = j.scalar();
  return p.grad();
}

/// Draws n_g fresh Gumbel matrices and returns the averaged gradient.
inline Matrix estimate_gradient(const Classifier& model, const AdversarialDistribution& pi,
                                std::span<const int> x, int y, const PcaaConfig& config, Rng& rng) {
  std::vector<Matrix> gumbels;
  gumbels.reserve(config.n_gradient_samples);
  for (std::size_t s = 0; s < config.n_gradient_samples; ++s) {
    gumbels.push_back(sample_gumbel(pi.n(), pi.d(), rng));
  }
  return estimate_gradient(model, pi, x, y, gumbels, config);
}

struct PcaaTrace {
  std::vector<double> objective;  // fixed-sample objective at each step's draws
  std::vector<double> cross_entropy;
  std::size_t model_queries = 0;
};

/// Gradient ascent on pi with clamping to [pi_min, C] after every step.
inline AdversarialDistribution pcaa_optimize(const Classifier& model, std::span<const int> x, int y,
                                             const PcaaConfig& config, Rng& rng,
                                             PcaaTrace* trace = nullptr) {
  config.validate();
  if (x.size() != model.n()) throw DimensionError("example length does not match classifier");
  AdversarialDistribution pi = initial_distribution(x, model.d(), config);
  Matrix current = pi.pi();
  std::vector<Matrix> gumbels(config.n_gradient_samples);
  for (std::size_t t = 0; t < config.max_iterations; ++t) {
    for (Matrix& g : gumbels) g = sample_gumbel(model.n(), model.d(), rng);
    double objective = 0.0;
    const Matrix grad = estimate_gradient(model, pi, x, y, gumbels, config, &objective);
    for (std::size_t i = 0; i < current.size(); ++i) current[i] += config.step_size * grad[i];
    AdversarialDistribution::clamp(current, config.pi_min, config.pi_max);
    pi = AdversarialDistribution(current, config.pi_min, config.pi_max);
    if (trace) {
      trace->objective.push_back(objective);
      trace->cross_entropy.push_back(total_cross_entropy(pi, x));
      trace->model_queries += config.n_gradient_samples;
    }
  }
  return pi;
}

/// Draws n_eval hard samples, keeps those within the l0 budget and queries every
/// drawn sample once. Success iff an admissible sample changes the prediction.
inline AttackResult evaluate_samples(const Classifier& model, const AdversarialDistribution& pi,
                                     std::span<const int> x, int y, int epsilon, std::size_t n_eval,
                                     Rng& rng) {
  if (n_eval == 0) throw ContractError("n_eval must be >= 1");
  AttackResult result;
  result.method = "pcaa";
  CandidateTracker best;
  for (std::size_t s = 0; s < n_eval; ++s) {
    const Features sample = sample_hard(pi, rng);
    const Evaluation eval = model.evaluate(sample, y);
    ++result.model_queries;
    ++result.samples_drawn;
    if (l0_distance(sample, x) > static_cast<std::size_t>(epsilon)) continue;
    ++result.samples_admissible;
    best.offer(sample, eval, y);
  }
  best.write(result);
  return result;
}

struct PcaaOutcome {
  AdversarialDistribution distribution;
  AttackResult result;
};

/// Optimisation followed by sampling; wall_time covers both phases.
inline PcaaOutcome pcaa_attack(const Classifier& model, std::span<const int> x, int y,
                               const PcaaConfig& config, Rng& rng, double* optimize_seconds = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  AdversarialDistribution pi = pcaa_optimize(model, x, y, config, rng);
  const auto optimized = std::chrono::steady_clock::now();
  AttackResult result = evaluate_samples(model, pi, x, y, config.epsilon, config.n_eval, rng);
  const auto stop = std::chrono::steady_clock::now();
  result.model_queries += config.n_gradient_samples * config.max_iterations;
  result.wall_time = std::chrono::duration<double>(stop - start).count();
  if (optimize_seconds) *optimize_seconds = std::chrono::duration<double>(optimized - start).count();
  return {std::move(pi), std::move(result)};
}

}  // namespace catadv
