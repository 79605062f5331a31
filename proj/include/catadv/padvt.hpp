#pragma once

// Adversarial training with the probabilistic attack as inner maximizer, and
// robustness evaluation across attacks.
//
// Each minibatch: optimize pi per instance at the current lambda, draw n_adv
// relaxed samples per instance, take one Adam step on their mean loss, then
//   lambda <- max(0, lambda - alpha * (n * zeta - mean_batch sum_i CE(x_i, pi_i))).
//
// zeta is a per-feature budget: the inner attack and the update both use the
// total n * zeta, so one grid of zeta values means the same across n.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "baselines.hpp"
#include "datastore.hpp"
#include "gumbel.hpp"
#include "model.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "pcaa.hpp"
#include "rng.hpp"

namespace catadv {

struct PadvtConfig {
  /// Inner attack; lambda and zeta are overwritten by the training loop.
  PcaaConfig attack = [] {
    PcaaConfig c;
    c.max_iterations = 10;
    return c;
  }();
  std::size_t n_adv = 4;
  double lambda0 = 1.0;
  double alpha_step = 0.1;
  /// Cross-entropy budget per feature.
  double zeta = 0.2;
  TrainConfig train;
  std::size_t jobs = 1;

  void validate() const {
    if (n_adv == 0) throw ContractError("n_adv must be >= 1");
    if (alpha_step < 0.0) throw ContractError("lambda step size must be >= 0");
    if (lambda0 < 0.0) throw ContractError("initial lambda must be >= 0");
    if (zeta < 0.0) throw ContractError("zeta must be >= 0");
    train.validate();
    attack.validate();
  }
};

struct PadvtResult {
  Classifier model;
  /// lambda after every minibatch update.
  std::vector<double> lambda_trajectory;
  /// Batch-mean total cross-entropy of the inner distributions.
  std::vector<double> batch_cross_entropy;
  std::vector<double> batch_loss;
};

inline double lambda_update(double lambda, double alpha_step, double zeta, double mean_ce) {
  return std::max(0.0, lambda - alpha_step * (zeta - mean_ce));
}

inline PadvtResult padvt_train(Classifier model, std::span<const CategoricalExample> data,
                               const PadvtConfig& config, Rng& rng) {
  config.validate();
  if (data.empty()) throw ContractError("cannot train on an empty dataset");
  for (const auto& ex : data) validate_example(ex, model.n(), model.d(), model.classes());

  const TrainConfig& tc = config.train;
  Adam adam(model, tc);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  PadvtResult out;
  double lambda = config.lambda0;
  std::vector<Layer> grads;
  const std::size_t width = model.input_width();
  const double zeta_total = config.zeta * static_cast<double>(model.n());

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t m = std::min(order.size(), start + tc.batch_size) - start;
      PcaaConfig attack = config.attack;
      attack.lambda = lambda;
      attack.zeta = zeta_total;
      std::vector<std::uint64_t> seeds(m);
      for (auto& s : seeds) s = rng.next_u64();

      Matrix batch(m * config.n_adv, width);
      std::vector<int> labels(m * config.n_adv);
      std::vector<double> ce(m);
      parallel_for(m, config.jobs, [&](std::size_t b) {
        const auto& ex = data[order[start + b]];
        Rng local(seeds[b]);
        const AdversarialDistribution pi = pcaa_optimize(model, ex.features, ex.label, attack, local);
        ce[b] = total_cross_entropy(pi, ex.features);
        for (std::size_t s = 0; s < config.n_adv; ++s) {
          const Matrix relaxed = gumbel_softmax(pi, sample_gumbel(model.n(), model.d(), local), attack.tau);
          const std::size_t row = b * config.n_adv + s;
          std::copy(relaxed.values().begin(), relaxed.values().end(), batch.row(row).begin());
          labels[row] = ex.label;
        }
      });
      out.batch_loss.push_back(batch_gradient(model, std::move(batch), labels, grads));
      adam.step(model, grads);

      double mean_ce = 0.0;
      for (double c : ce) mean_ce += c;
      mean_ce /= static_cast<double>(m);
      lambda = lambda_update(lambda, config.alpha_step, zeta_total, mean_ce);
      out.batch_cross_entropy.push_back(mean_ce);
      out.lambda_trajectory.push_back(lambda);
    }
  }
  TrainingSummary summary;
  summary.epochs = tc.epochs;
  summary.final_loss = mean_loss(model, data);
  summary.final_accuracy = accuracy(model, data);
  model.training() = summary;

  nlohmann::json prov;
  prov["mode"] = "padvt";
  prov["zeta_per_feature"] = config.zeta;
  prov["zeta_total"] = zeta_total;
  prov["n_adv"] = config.n_adv;
  prov["lambda0"] = config.lambda0;
  prov["alpha_step"] = config.alpha_step;
  prov["inner_iterations"] = config.attack.max_iterations;
  prov["inner_gradient_samples"] = config.attack.n_gradient_samples;
  prov["tau"] = config.attack.tau;
  const auto& lt = out.lambda_trajectory;
  prov["lambda"] = {{"updates", lt.size()},
                    {"final", lt.empty() ? config.lambda0 : lt.back()},
                    {"min", lt.empty() ? config.lambda0 : *std::min_element(lt.begin(), lt.end())},
                    {"max", lt.empty() ? config.lambda0 : *std::max_element(lt.begin(), lt.end())}};
  model.provenance() = prov;
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// Robustness evaluation
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAttackMethods[] = {"pcaa", "gs", "ga", "ggs", "gga", "oracle"};

inline bool is_attack_method(std::string_view name) {
  return std::find(std::begin(kAttackMethods), std::end(kAttackMethods), name) != std::end(kAttackMethods);
}

struct EvaluationConfig {
  PcaaConfig pcaa;
  SearchConfig search;
  std::uint64_t oracle_cap = kDefaultOracleCap;
  std::uint64_t seed = 1;
  /// Evaluate at most this many correctly classified instances (0 = all).
  std::size_t limit = 0;
  std::size_t jobs = 1;
};

/// Seed of the random stream for one (instance, method, epsilon) cell.
inline std::uint64_t attack_seed(std::uint64_t master, std::uint64_t instance, std::string_view method,
                                 int epsilon) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : method) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return stream_seed(stream_seed(master, instance), h ^ static_cast<std::uint64_t>(epsilon));
}

/// Runs one named attack.
inline AttackResult run_attack(std::string_view method, const Classifier& model, std::span<const int> x,
                               int y, int epsilon, const EvaluationConfig& config, Rng& rng) {
  if (method == "pcaa") {
    PcaaConfig c = config.pcaa;
    c.epsilon = epsilon;
    return pcaa_attack(model, x, y, c, rng).result;
  }
  if (method == "oracle") return oracle_attack(model, x, y, epsilon, config.oracle_cap);
  return search_attack(parse_search_method(method), model, x, y, epsilon, config.search);
}

inline ReportRow to_report_row(const AttackResult& r, std::uint64_t instance_id, int epsilon,
                               std::span<const int> x, std::uint64_t seed) {
  ReportRow row;
  row.method = r.method;
  row.instance_id = instance_id;
  row.epsilon = epsilon;
  row.success = r.success;
  if (r.best_example) {
    row.l0 = l0_distance(*r.best_example, x);
    row.best_loss = r.best_loss;
  }
  row.queries = r.total_queries();
  row.wall_time_s = r.wall_time;
  row.seed = seed;
  row.capped = r.capped;
  return row;
}

/// Indices (into `data`) of the instances the model classifies correctly,
/// truncated to `limit` when nonzero.
inline std::vector<std::size_t> correctly_classified(const Classifier& model,
                                                     std::span<const CategoricalExample> data,
                                                     std::size_t limit = 0) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (limit && out.size() >= limit) break;
    if (model.predict(data[i].features) == data[i].label) out.push_back(i);
  }
  return out;
}

/// One row per (instance, method, epsilon) over the correctly classified
/// instances; instance_id is the index into `data`. Rows are ordered by
/// method, then epsilon, then instance.
inline std::vector<ReportRow> evaluate_robustness(const Classifier& model,
                                                  std::span<const CategoricalExample> data,
                                                  const std::vector<std::string>& methods,
                                                  const std::vector<int>& epsilons,
                                                  const EvaluationConfig& config) {
  for (const auto& m : methods) {
    if (!is_attack_method(m)) throw ContractError("unknown attack method '" + m + "'");
  }
  const auto instances = correctly_classified(model, data, config.limit);
  std::vector<ReportRow> rows;
  for (const auto& method : methods) {
    for (int eps : epsilons) {
      std::vector<ReportRow> block(instances.size());
      parallel_for(instances.size(), config.jobs, [&](std::size_t k) {
        const std::size_t id = instances[k];
        const auto& ex = data[id];
        Rng rng(attack_seed(config.seed, id, method, eps));
        const AttackResult r = run_attack(method, model, ex.features, ex.label, eps, config, rng);
        block[k] = to_report_row(r, id, eps, ex.features, config.seed);
      });
      rows.insert(rows.end(), block.begin(), block.end());
    }
  }
  return rows;
}

inline double success_rate(const std::vector<ReportRow>& rows, std::string_view method, int epsilon) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& r : rows) {
    if (r.method != method || r.epsilon != epsilon) continue;
    ++total;
    hits += r.success ? 1 : 0;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

/// Fraction of `data` on which the attack succeeds; misclassified instances
/// count as successes (the clean input already fools the model).
inline double attack_success_over_all(const Classifier& model, std::span<const CategoricalExample> data,
                                      std::string_view method, int epsilon,
                                      const EvaluationConfig& config) {
  if (data.empty()) return 0.0;
  const auto rows = evaluate_robustness(model, data, {std::string(method)}, {epsilon}, config);
  std::size_t correct = rows.size();
  std::size_t hits = 0;
  for (const auto& r : rows) hits += r.success ? 1 : 0;
  return static_cast<double>(data.size() - correct + hits) / static_cast<double>(data.size());
}

struct AblationRow {
  double zeta = 0.0;
  double clean_error = 0.0;
  double final_lambda = 0.0;
  /// Success rate per attack method at the ablation epsilon.
  std::map<std::string, double> success_rate;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

/// Trains one robust model per zeta from the same initial model and seed and
/// measures clean error and attack success on the test examples.
inline std::vector<AblationRow> zeta_ablation(const Classifier& init, std::span<const CategoricalExample> train,
                                              std::span<const CategoricalExample> test,
                                              const std::vector<double>& zeta_grid,
                                              const PadvtConfig& config, const std::vector<std::string>& methods,
                                              int epsilon, const EvaluationConfig& eval) {
  if (zeta_grid.empty()) throw ContractError("zeta grid must not be empty");
  std::vector<AblationRow> table;
  for (double zeta : zeta_grid) {
    PadvtConfig c = config;
    c.zeta = zeta;
    Rng rng(stream_seed(config.train.seed, 0xAB1A));
    PadvtResult trained = padvt_train(init, train, c, rng);
    AblationRow row;
    row.zeta = zeta;
    row.clean_error = 1.0 - accuracy(trained.model, test);
    row.final_lambda = trained.lambda_trajectory.empty() ? c.lambda0 : trained.lambda_trajectory.back();
    for (const auto& m : methods) {
      row.success_rate[m] = attack_success_over_all(trained.model, test, m, epsilon, eval);
    }
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace catadv
