#pragma once

// Exact ground truth for small instances: the best admissible perturbation by
// enumeration, the exact budget-violation probability of a distribution, and
// the strict-ordering property of a model at a point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "baselines.hpp"
#include "gumbel.hpp"
#include "model.hpp"
#include "pcaa.hpp"

namespace catadv {

/// Loss values closer than this are treated as ties.
inline constexpr double kLossTieTolerance = 1e-9;
inline constexpr std::uint64_t kDefaultOracleCap = 1'000'000;

struct OracleResult {
  Features best;
  double best_loss = 0.0;
  /// No other admissible input is within kLossTieTolerance of best_loss.
  bool unique = true;
  /// Some admissible input changes the prediction.
  bool any_flip = false;
  /// Max-loss input among the prediction-changing ones, when any_flip.
  Features best_flip;
  double best_flip_loss = -std::numeric_limits<double>::infinity();
  std::uint64_t evaluated = 0;
};

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Number of inputs within l0 distance epsilon: sum_{k<=eps} C(n,k)(d-1)^k.
inline std::uint64_t ball_size(std::uint64_t n, std::uint64_t d, std::uint64_t epsilon) {
  std::uint64_t total = 0;
  for (std::uint64_t k = 0; k <= std::min(n, epsilon); ++k) {
    const std::uint64_t term = binomial(n, k);
    const std::uint64_t p = int_pow(d - 1, k);
    if (p != 0 && term > UINT64_MAX / p) return UINT64_MAX;
    const std::uint64_t add = term * p;
    if (total > UINT64_MAX - add) return UINT64_MAX;
    total += add;
  }
  return total;
}

namespace detail {

/// Lexicographically ordered walk over the l0 ball: feature by feature, each
/// feature either keeps its clean value or takes any other category while
/// budget remains. Visits every input in the ball exactly once.
template <typename Visit>
void walk_ball(std::span<const int> x, std::size_t d, int budget, std::size_t pos, Features& probe,
               Visit&& visit) {
  if (pos == x.size()) {
    visit(static_cast<const Features&>(probe));
    return;
  }
  for (int c = 0; c < static_cast<int>(d); ++c) {
    const bool changed = c != x[pos];
    if (changed && budget == 0) continue;
    probe[pos] = c;
    walk_ball(x, d, changed ? budget - 1 : budget, pos + 1, probe, visit);
  }
  probe[pos] = x[pos];
}

}  // namespace detail

/// Calls visit(features) for every input within l0 distance epsilon of x.
template <typename Visit>
void for_each_in_ball(std::span<const int> x, std::size_t d, int epsilon, Visit&& visit) {
  Features probe(x.begin(), x.end());
  detail::walk_ball(x, d, epsilon, 0, probe, visit);
}

/// Exhaustive maximizer of the loss over the l0 ball around x.
/// `unique` is cleared when the runner-up is within kLossTieTolerance; exact
/// ties keep the lexicographically smallest input.
inline OracleResult brute_force_optimal(const Classifier& model, std::span<const int> x, int y,
                                        int epsilon, std::uint64_t cap = kDefaultOracleCap) {
  if (epsilon < 0) throw ContractError("epsilon must be >= 0");
  if (x.size() != model.n()) throw DimensionError("example length does not match classifier");
  const std::uint64_t size = ball_size(model.n(), model.d(), static_cast<std::uint64_t>(epsilon));
  if (size > cap) {
    throw CapExceeded("oracle would evaluate " + std::to_string(size) + " inputs, cap is " +
                      std::to_string(cap));
  }
  OracleResult r;
  bool first = true;
  double runner_up = -std::numeric_limits<double>::infinity();
  // Walk order is lexicographic; a strict comparison keeps the earlier input on exact ties.
  for_each_in_ball(x, model.d(), epsilon, [&](const Features& f) {
    const Evaluation e = model.evaluate(f, y);
    ++r.evaluated;
    if (first || e.loss > r.best_loss) {
      if (!first) runner_up = r.best_loss;
      r.best = f;
      r.best_loss = e.loss;
      first = false;
    } else {
      runner_up = std::max(runner_up, e.loss);
    }
    if (e.predicted != y) {
      r.any_flip = true;
      if (e.loss > r.best_flip_loss) {
        r.best_flip = f;
        r.best_flip_loss = e.loss;
      }
    }
  });
  r.unique = r.best_loss - runner_up > kLossTieTolerance;
  return r;
}

/// Oracle answer packaged like the attack methods (success = some admissible flip).
inline AttackResult oracle_attack(const Classifier& model, std::span<const int> x, int y, int epsilon,
                                  std::uint64_t cap = kDefaultOracleCap) {
  const auto start = std::chrono::steady_clock::now();
  AttackResult result;
  result.method = "oracle";
  try {
    const OracleResult o = brute_force_optimal(model, x, y, epsilon, cap);
    result.success = o.any_flip;
    result.best_example = o.any_flip ? o.best_flip : o.best;
    result.best_loss = o.any_flip ? o.best_flip_loss : o.best_loss;
    result.model_queries = o.evaluated;
    result.samples_drawn = result.samples_admissible = o.evaluated;
  } catch (const CapExceeded&) {
    result.capped = true;
  }
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Per-feature probability that a sample from pi differs from x: 1 - pi_{i,x_i}/sum_j pi_ij.
inline std::vector<double> mismatch_probabilities(const AdversarialDistribution& pi,
                                                  std::span<const int> x) {
  if (x.size() != pi.n()) throw DimensionError("feature count does not match pi");
  const Matrix p = pi.normalized();
  std::vector<double> out(pi.n());
  for (std::size_t i = 0; i < pi.n(); ++i) out[i] = 1.0 - p(i, static_cast<std::size_t>(x[i]));
  return out;
}

/// Distribution of the number of successes of independent Bernoulli(p_i),
/// entries 0..n, by the standard O(n^2) recursion.
inline std::vector<double> poisson_binomial_pmf(std::span<const double> p) {
  std::vector<double> pmf(p.size() + 1, 0.0);
  pmf[0] = 1.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = i + 1; k > 0; --k) pmf[k] = pmf[k] * (1.0 - p[i]) + pmf[k - 1] * p[i];
    pmf[0] *= 1.0 - p[i];
  }
  return pmf;
}

/// Pr_{x' ~ pi}(||x' - x||_0 > epsilon), computed exactly.
inline double exact_violation_probability(const AdversarialDistribution& pi, std::span<const int> x,
                                          int epsilon) {
  if (epsilon < 0) throw ContractError("epsilon must be >= 0");
  const auto pmf = poisson_binomial_pmf(mismatch_probabilities(pi, x));
  double tail = 0.0;
  for (std::size_t k = static_cast<std::size_t>(epsilon) + 1; k < pmf.size(); ++k) tail += pmf[k];
  return std::clamp(tail, 0.0, 1.0);
}

enum class OrderingMode {
  /// Other features held at the clean example's values.
  kCleanContext,
  /// Every assignment of the other features (n <= 8).
  kExhaustive,
};

namespace detail {

inline bool distinct_losses(std::vector<double> losses) {
  std::sort(losses.begin(), losses.end());
  for (std::size_t k = 1; k < losses.size(); ++k) {
    if (losses[k] - losses[k - 1] <= kLossTieTolerance) return false;
  }
  return true;
}

inline bool feature_strictly_ordered(const Classifier& model, Features context, std::size_t i, int y) {
  std::vector<double> losses;
  for (int c = 0; c < static_cast<int>(model.d()); ++c) {
    context[i] = c;
    losses.push_back(model.loss(context, y));
  }
  return distinct_losses(std::move(losses));
}

}  // namespace detail

/// True iff, for every feature, the d losses obtained by varying that feature
/// alone are pairwise distinct beyond kLossTieTolerance.
inline bool strictly_ordered_check(const Classifier& model, std::span<const int> x, int y,
                                   OrderingMode mode = OrderingMode::kCleanContext,
                                   std::uint64_t cap = kDefaultOracleCap) {
  if (x.size() != model.n()) throw DimensionError("example length does not match classifier");
  const std::uint64_t n = model.n();
  const std::uint64_t d = model.d();
  if (mode == OrderingMode::kCleanContext) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!detail::feature_strictly_ordered(model, Features(x.begin(), x.end()), i, y)) return false;
    }
    return true;
  }
  if (n > 8) throw CapExceeded("exhaustive ordering check supports n <= 8");
  const std::uint64_t evaluations = n * int_pow(d, n);
  if (evaluations > cap) {
    throw CapExceeded("ordering check would evaluate " + std::to_string(evaluations) + " inputs");
  }
  Features context(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    // Enumerate every context of the other features (feature i is overwritten).
    std::fill(context.begin(), context.end(), 0);
    while (true) {
      if (!detail::feature_strictly_ordered(model, context, i, y)) return false;
      std::size_t k = 0;
      while (k < n) {
        if (k == i) {
          ++k;
          continue;
        }
        if (++context[k] < static_cast<int>(d)) break;
        context[k++] = 0;
      }
      if (k >= n) break;
    }
  }
  return true;
}

}  // namespace catadv
