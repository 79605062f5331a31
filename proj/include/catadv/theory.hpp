#pragma once

// Numerical checks of the concentration and sampling-closeness results for
// optimized adversarial distributions.
//
// For an optimized pi*, with delta the largest per-feature mass left off the
// modal category:
//   alpha = 1 / (1 - delta)^n - 1
//   L* - L' <= alpha / (1 - alpha) * (Lbar - L*)
// where L* is the exact best admissible loss, L' the loss at the per-feature
// mode of pi*, and Lbar the exact expected loss under pi*. N independent
// samples contain the mode with probability at least 1 - exp(-N (1 - delta)^n).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gumbel.hpp"
#include "json.hpp"
#include "model.hpp"
#include "oracle.hpp"
#include "pcaa.hpp"
#include "rng.hpp"

namespace catadv {

inline double alpha(double delta, std::size_t n) {
  if (!(delta >= 0.0 && delta < 1.0)) throw ContractError("delta must lie in [0, 1)");
  return 1.0 / std::pow(1.0 - delta, static_cast<double>(n)) - 1.0;
}

/// Exact expectation of the loss under pi by enumerating all d^n inputs.
inline double expected_loss_exact(const Classifier& model, const AdversarialDistribution& pi,
                                  std::span<const int> x, int y, std::uint64_t cap = kDefaultOracleCap) {
  if (x.size() != pi.n() || pi.n() != model.n() || pi.d() != model.d()) {
    throw DimensionError("pi, example and classifier disagree on shape");
  }
  const std::size_t n = pi.n();
  const std::size_t d = pi.d();
  if (int_pow(d, n) > cap) {
    throw CapExceeded("exact expectation needs " + std::to_string(d) + "^" + std::to_string(n) +
                      " evaluations");
  }
  const Matrix p = pi.normalized();
  Features probe(n, 0);
  double total = 0.0;
  while (true) {
    double weight = 1.0;
    for (std::size_t i = 0; i < n; ++i) weight *= p(i, static_cast<std::size_t>(probe[i]));
    total += weight * model.loss(probe, y);
    std::size_t k = 0;
    while (k < n && ++probe[k] == static_cast<int>(d)) probe[k++] = 0;
    if (k == n) break;
  }
  return total;
}

struct ConcentrationReport {
  std::vector<double> max_mass;  // normalized, per feature
  double threshold = 0.5;
  double fraction_above = 0.0;
  Features mode;

  /// 1 - min_i max_mass_i.
  double delta_eff() const {
    double m = 1.0;
    for (double v : max_mass) m = std::min(m, v);
    return 1.0 - m;
  }
  /// Probability that one sample equals the mode: prod_i max_mass_i.
  double mode_probability() const {
    double q = 1.0;
    for (double v : max_mass) q *= v;
    return q;
  }
};

inline ConcentrationReport concentration_report(const AdversarialDistribution& pi, double threshold) {
  const Matrix p = pi.normalized();
  ConcentrationReport r;
  r.threshold = threshold;
  std::size_t above = 0;
  for (std::size_t i = 0; i < pi.n(); ++i) {
    auto row = p.row(i);
    const int j = argmax(row);
    r.mode.push_back(j);
    r.max_mass.push_back(row[static_cast<std::size_t>(j)]);
    above += row[static_cast<std::size_t>(j)] >= threshold ? 1 : 0;
  }
  r.fraction_above = static_cast<double>(above) / static_cast<double>(pi.n());
  return r;
}

/// Settings for one bound check.
struct TheoremConfig {
  PcaaConfig attack;
  /// Samples per repetition.
  std::size_t n_samples = 10;
  std::size_t repetitions = 200;
  OrderingMode ordering = OrderingMode::kCleanContext;
  std::uint64_t cap = kDefaultOracleCap;
  /// Slack on the inequality for floating-point noise in the loss values.
  double tolerance = 1e-9;
};

enum class TheoremStatus { kChecked, kAssumptionsNotMet };

struct TheoremReport {
  TheoremStatus status = TheoremStatus::kAssumptionsNotMet;
  std::string reason;
  double delta = 0.0;      // requested
  double delta_eff = 0.0;  // measured on pi*
  std::size_t n = 0;
  double alpha = 0.0;  // at delta_eff
  double expected_loss_bar = 0.0;
  double oracle_loss = 0.0;
  double mode_loss = 0.0;
  bool mode_admissible = false;
  double bound_rhs = 0.0;
  double gap = 0.0;
  bool inequality_holds = false;
  std::size_t n_samples = 0;
  double mode_probability = 0.0;
  double sampling_bound = 0.0;
  std::size_t repetitions = 0;
  double empirical_mode_hit_rate = 0.0;
  ConcentrationReport concentration;

  bool checked() const noexcept { return status == TheoremStatus::kChecked; }
};

inline double sampling_bound(std::size_t n_samples, double delta, std::size_t n) {
  return 1.0 - std::exp(-static_cast<double>(n_samples) * std::pow(1.0 - delta, static_cast<double>(n)));
}

/// Runs the attack, the oracle and the exact expectation on one instance.
/// Instances failing the ordering or uniqueness preconditions come back with
/// status kAssumptionsNotMet and no bound evaluation.
inline TheoremReport theorem_bound_check(const Classifier& model, std::span<const int> x, int y,
                                         int epsilon, double delta, const TheoremConfig& config,
                                         Rng& rng) {
  if (!(delta >= 0.0 && delta < 1.0)) throw ContractError("delta must lie in [0, 1)");
  TheoremReport r;
  r.delta = delta;
  r.n = model.n();
  r.n_samples = config.n_samples;
  r.repetitions = config.repetitions;

  if (ball_size(model.n(), model.d(), static_cast<std::uint64_t>(epsilon)) > config.cap ||
      int_pow(model.d(), model.n()) > config.cap) {
    r.reason = "instance exceeds the enumeration cap";
    return r;
  }
  try {
    if (!strictly_ordered_check(model, x, y, config.ordering, config.cap)) {
      r.reason = "model is not strictly ordered at this input";
      return r;
    }
  } catch (const CapExceeded&) {
    r.reason = "ordering check exceeds the enumeration cap";
    return r;
  }
  const OracleResult oracle = brute_force_optimal(model, x, y, epsilon, config.cap);
  if (!oracle.unique) {
    r.reason = "oracle maximizer is not unique";
    return r;
  }

  PcaaConfig attack = config.attack;
  attack.epsilon = epsilon;
  const AdversarialDistribution pi = pcaa_optimize(model, x, y, attack, rng);
  r.concentration = concentration_report(pi, 0.5);
  r.delta_eff = r.concentration.delta_eff();
  r.alpha = alpha(r.delta_eff, r.n);
  r.expected_loss_bar = expected_loss_exact(model, pi, x, y, config.cap);
  r.oracle_loss = oracle.best_loss;
  r.mode_loss = model.loss(r.concentration.mode, y);
  r.mode_admissible = l0_distance(r.concentration.mode, x) <= static_cast<std::size_t>(epsilon);
  r.gap = r.oracle_loss - r.mode_loss;
  r.bound_rhs = r.alpha / (1.0 - r.alpha) * (r.expected_loss_bar - r.oracle_loss);
  r.inequality_holds = r.gap <= r.bound_rhs + config.tolerance;
  r.mode_probability = r.concentration.mode_probability();
  r.sampling_bound = sampling_bound(config.n_samples, r.delta_eff, r.n);

  std::size_t hits = 0;
  for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
    for (std::size_t s = 0; s < config.n_samples; ++s) {
      if (sample_hard(pi, rng) == r.concentration.mode) {
        ++hits;
        break;
      }
    }
  }
  r.empirical_mode_hit_rate =
      config.repetitions ? static_cast<double>(hits) / static_cast<double>(config.repetitions) : 0.0;
  r.status = TheoremStatus::kChecked;
  return r;
}

inline nlohmann::json to_json(const ConcentrationReport& c) {
  return {{"max_mass", c.max_mass},
          {"threshold", c.threshold},
          {"fraction_above", c.fraction_above},
          {"mode", c.mode}};
}

inline nlohmann::json to_json(const TheoremReport& r) {
  nlohmann::json j = {{"status", r.checked() ? "checked" : "assumptions-not-met"}};
  if (!r.checked()) {
    j["reason"] = r.reason;
    return j;
  }
  j["delta"] = r.delta;
  j["delta_eff"] = r.delta_eff;
  j["n"] = r.n;
  j["alpha"] = r.alpha;
  j["expected_loss_bar"] = r.expected_loss_bar;
  j["oracle_loss"] = r.oracle_loss;
  j["mode_loss"] = r.mode_loss;
  j["mode_admissible"] = r.mode_admissible;
  j["bound_rhs"] = r.bound_rhs;
  j["gap"] = r.gap;
  j["inequality_holds"] = r.inequality_holds;
  j["n_samples"] = r.n_samples;
  j["mode_probability"] = r.mode_probability;
  j["sampling_bound"] = r.sampling_bound;
  j["repetitions"] = r.repetitions;
  j["empirical_mode_hit_rate"] = r.empirical_mode_hit_rate;
  return j;
}

}  // namespace catadv
