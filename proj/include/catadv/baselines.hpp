#pragma once

// Two-stage search attacks.
//
// Stage 1 ranks features by impact and keeps the top epsilon:
//   loss-based (GS, GA): every single substitution is queried, n(d-1) forward passes;
//   gradient-based (GGS, GGA): one input gradient at the clean one-hot point.
// Stage 2 searches categories on the selected features:
//   exhaustive (GS, GGS): all d^epsilon combinations, originals included;
//   greedy (GA, GGA): features in descending impact order, each fixed to its
//   best alternative category given earlier fixes, epsilon(d-1) forward passes.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "model.hpp"
#include "pcaa.hpp"

namespace catadv {

enum class SearchMethod { kGS, kGA, kGGS, kGGA };

inline std::string_view method_name(SearchMethod m) {
  switch (m) {
    case SearchMethod::kGS: return "gs";
    case SearchMethod::kGA: return "ga";
    case SearchMethod::kGGS: return "ggs";
    case SearchMethod::kGGA: return "gga";
  }
  return "?";
}

inline SearchMethod parse_search_method(std::string_view name) {
  std::string lower(name);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "gs") return SearchMethod::kGS;
  if (lower == "ga") return SearchMethod::kGA;
  if (lower == "ggs") return SearchMethod::kGGS;
  if (lower == "gga") return SearchMethod::kGGA;
  throw ContractError("unknown search method '" + std::string(name) + "'");
}

struct ImpactScore {
  int feature = 0;
  double score = 0.0;
  int best_category = 0;
};

struct SearchConfig {
  /// Stage-2 evaluations above this abort GS/GGS with a capped result.
  std::uint64_t stage2_cap = 1'000'000;
};

struct QueryCount {
  std::uint64_t forward = 0;
  std::uint64_t gradient = 0;

  friend bool operator==(const QueryCount&, const QueryCount&) = default;
};

/// d^e, saturating at UINT64_MAX.
inline std::uint64_t int_pow(std::uint64_t base, std::uint64_t exp) {
  std::uint64_t r = 1;
  for (std::uint64_t i = 0; i < exp; ++i) {
    if (base != 0 && r > UINT64_MAX / base) return UINT64_MAX;
    r *= base;
  }
  return r;
}

/// Exact query counts of the search attacks.
///   GS:  n(d-1) + d^eps       GA:  n(d-1) + eps(d-1)
///   GGS: 1 grad + d^eps       GGA: 1 grad + eps(d-1)
inline QueryCount expected_query_count(SearchMethod method, std::uint64_t n, std::uint64_t d,
                                       std::uint64_t epsilon) {
  const std::uint64_t single_swaps = n * (d - 1);
  switch (method) {
    case SearchMethod::kGS: return {single_swaps + int_pow(d, epsilon), 0};
    case SearchMethod::kGA: return {single_swaps + epsilon * (d - 1), 0};
    case SearchMethod::kGGS: return {int_pow(d, epsilon), 1};
    case SearchMethod::kGGA: return {epsilon * (d - 1), 1};
  }
  throw ContractError("unknown search method");
}

inline QueryCount expected_query_count(std::string_view method, std::uint64_t n, std::uint64_t d,
                                       std::uint64_t epsilon) {
  return expected_query_count(parse_search_method(method), n, d, epsilon);
}

namespace detail {

/// Top-epsilon by score descending; ties go to the lower feature index.
inline std::vector<ImpactScore> top_features(std::vector<ImpactScore> scores, std::size_t epsilon) {
  std::stable_sort(scores.begin(), scores.end(),
                   [](const ImpactScore& a, const ImpactScore& b) { return a.score > b.score; });
  scores.resize(std::min(epsilon, scores.size()));
  return scores;
}

}  // namespace detail

/// Stage 1 by loss: every single substitution of every feature, n(d-1) queries.
/// The score is the largest loss over the substitutions of that feature.
inline std::vector<ImpactScore> loss_impact_scores(const Classifier& model, std::span<const int> x,
                                                   int y, AttackResult& counter) {
  std::vector<ImpactScore> scores;
  Features probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ImpactScore s{static_cast<int>(i), -std::numeric_limits<double>::infinity(), x[i]};
    for (int c = 0; c < static_cast<int>(model.d()); ++c) {
      if (c == x[i]) continue;
      probe[i] = c;
      const double l = model.loss(probe, y);
      ++counter.model_queries;
      if (l > s.score) {
        s.score = l;
        s.best_category = c;
      }
    }
    probe[i] = x[i];
    scores.push_back(s);
  }
  return scores;
}

/// Stage 1 by gradient: impact_i = max_{j != x_i} (G[i,j] - G[i,x_i]) for the
/// input gradient G at one_hot(x). One gradient query.
inline std::vector<ImpactScore> gradient_impact_scores(const Classifier& model, std::span<const int> x,
                                                       int y, AttackResult& counter) {
  const Matrix grad = model.input_gradient(one_hot(x, model.d()), y);
  ++counter.gradient_queries;
  std::vector<ImpactScore> scores;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double base = grad(i, static_cast<std::size_t>(x[i]));
    ImpactScore s{static_cast<int>(i), -std::numeric_limits<double>::infinity(), x[i]};
    for (int c = 0; c < static_cast<int>(model.d()); ++c) {
      if (c == x[i]) continue;
      const double v = grad(i, static_cast<std::size_t>(c)) - base;
      if (v > s.score) {
        s.score = v;
        s.best_category = c;
      }
    }
    scores.push_back(s);
  }
  return scores;
}

/// Every assignment of categories to `selected` (d^|selected| queries).
inline void exhaustive_stage(const Classifier& model, std::span<const int> x, int y,
                             const std::vector<ImpactScore>& selected, AttackResult& result,
                             CandidateTracker& best) {
  Features probe(x.begin(), x.end());
  const std::size_t e = selected.size();
  std::vector<int> digits(e, 0);
  const int d = static_cast<int>(model.d());
  while (true) {
    for (std::size_t k = 0; k < e; ++k) probe[static_cast<std::size_t>(selected[k].feature)] = digits[k];
    best.offer(probe, model.evaluate(probe, y), y);
    ++result.model_queries;
    ++result.samples_drawn;
    ++result.samples_admissible;
    std::size_t k = 0;
    while (k < e && ++digits[k] == d) digits[k++] = 0;
    if (k == e) break;
  }
}

/// Features in `selected` order, each set to its loss-maximizing alternative
/// given the earlier choices ((d-1) queries per feature).
inline void greedy_stage(const Classifier& model, std::span<const int> x, int y,
                         const std::vector<ImpactScore>& selected, AttackResult& result,
                         CandidateTracker& best) {
  Features current(x.begin(), x.end());
  for (const ImpactScore& s : selected) {
    const auto i = static_cast<std::size_t>(s.feature);
    Features probe = current;
    int best_cat = -1;
    double best_loss = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(model.d()); ++c) {
      if (c == x[i]) continue;
      probe[i] = c;
      const Evaluation eval = model.evaluate(probe, y);
      ++result.model_queries;
      ++result.samples_drawn;
      ++result.samples_admissible;
      best.offer(probe, eval, y);
      if (eval.loss > best_loss) {
        best_loss = eval.loss;
        best_cat = c;
      }
    }
    if (best_cat >= 0) current[i] = best_cat;
  }
}

/// Runs one of the four search attacks.
inline AttackResult search_attack(SearchMethod method, const Classifier& model, std::span<const int> x,
                                  int y, int epsilon, const SearchConfig& config = {}) {
  if (epsilon < 0) throw ContractError("epsilon must be >= 0");
  if (static_cast<std::size_t>(epsilon) > x.size()) throw ContractError("epsilon exceeds feature count");
  if (x.size() != model.n()) throw DimensionError("example length does not match classifier");
  const auto start = std::chrono::steady_clock::now();
  AttackResult result;
  result.method = std::string(method_name(method));
  const bool gradient_stage1 = method == SearchMethod::kGGS || method == SearchMethod::kGGA;
  const bool exhaustive = method == SearchMethod::kGS || method == SearchMethod::kGGS;

  auto scores = gradient_stage1 ? gradient_impact_scores(model, x, y, result)
                                : loss_impact_scores(model, x, y, result);
  const auto selected = detail::top_features(std::move(scores), static_cast<std::size_t>(epsilon));
  for (const auto& s : selected) result.selected_features.push_back(s.feature);

  CandidateTracker best;
  if (exhaustive) {
    if (int_pow(model.d(), static_cast<std::uint64_t>(epsilon)) > config.stage2_cap) {
      result.capped = true;
    } else {
      exhaustive_stage(model, x, y, selected, result, best);
    }
  } else {
    greedy_stage(model, x, y, selected, result, best);
  }
  best.write(result);
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline AttackResult greedy_search(const Classifier& model, std::span<const int> x, int y, int epsilon,
                                  const SearchConfig& config = {}) {
  return search_attack(SearchMethod::kGS, model, x, y, epsilon, config);
}
inline AttackResult greedy_attack(const Classifier& model, std::span<const int> x, int y, int epsilon) {
  return search_attack(SearchMethod::kGA, model, x, y, epsilon);
}
inline AttackResult gradient_guided_search(const Classifier& model, std::span<const int> x, int y,
                                           int epsilon, const SearchConfig& config = {}) {
  return search_attack(SearchMethod::kGGS, model, x, y, epsilon, config);
}
inline AttackResult gradient_guided_attack(const Classifier& model, std::span<const int> x, int y,
                                           int epsilon) {
  return search_attack(SearchMethod::kGGA, model, x, y, epsilon);
}

}  // namespace catadv
