// catadv: data generation, training, attacks, benchmarks and bound checks.
//
// Exit codes: 0 done, 2 usage error, 3 I/O or parse error, 1 anything else.
// Report files (NDJSON) carry no timing so reruns with the same seed are
// byte-identical; timings and the effective configuration go to
// <out stem>.meta.json.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "catadv.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace catadv::cli {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shared {
  std::string data;
  std::string model;
  std::string out;
  std::uint64_t seed = 1;
  std::size_t jobs = default_jobs();
  std::string config;
  bool has_header = false;
  double test_fraction = 0.2;
};

struct PcaaFlags {
  std::size_t n_eval = 100;
  std::size_t iterations = 50;
  std::size_t n_g = 8;
  double tau = 0.5;
  double lambda = 1.0;
  double step = 0.5;
  double zeta = -1.0;
  double zeta_per_feature = 1.0;
  double pi_min = kDefaultPiMin;
  double pi_max = kDefaultPiMax;

  PcaaConfig config() const {
    PcaaConfig c;
    c.n_eval = n_eval;
    c.max_iterations = iterations;
    c.n_gradient_samples = n_g;
    c.tau = tau;
    c.lambda = lambda;
    c.step_size = step;
    c.zeta = zeta;
    c.zeta_per_feature = zeta_per_feature;
    c.pi_min = pi_min;
    c.pi_max = pi_max;
    return c;
  }
};

void add_pcaa_flags(CLI::App* sub, PcaaFlags& f) {
  sub->add_option("--n-eval", f.n_eval, "hard samples drawn after optimisation");
  sub->add_option("--iterations", f.iterations, "gradient steps on pi");
  sub->add_option("--n-g", f.n_g, "Gumbel draws per gradient estimate");
  sub->add_option("--tau", f.tau, "Gumbel-Softmax temperature");
  sub->add_option("--lambda", f.lambda, "penalty coefficient");
  sub->add_option("--step", f.step, "step size on pi");
  sub->add_option("--zeta", f.zeta, "cross-entropy budget (negative: zeta-per-feature * epsilon)");
  sub->add_option("--zeta-per-feature", f.zeta_per_feature);
  sub->add_option("--pi-min", f.pi_min);
  sub->add_option("--pi-max", f.pi_max, "upper bound C on pi entries");
}

void add_shared_flags(CLI::App* sub, Shared& s, bool data, bool model) {
  if (data) {
    sub->add_option("--data", s.data, "dataset CSV (n category columns, then the label)")->required();
    sub->add_flag("--has-header", s.has_header, "first CSV line is a header");
    sub->add_option("--test-fraction", s.test_fraction, "trailing share of rows held out for testing")
        ->check(CLI::Range(0.0, 0.99));
  }
  if (model) sub->add_option("--model", s.model, "checkpoint JSON (trained on the fly when omitted)");
  sub->add_option("--out", s.out, "output path")->required();
  sub->add_option("--seed", s.seed);
  sub->add_option("--jobs", s.jobs, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--config", s.config, "JSON file of flag defaults");
}

// ---------------------------------------------------------------------------
// Config file and metadata

/// Flat JSON object of flag values (keys without the leading dashes), with an
/// optional per-subcommand object that overrides the top level. Keys the
/// subcommand does not know are ignored so one file can serve every command.
std::vector<std::string> config_arguments(const std::string& path, CLI::App* sub,
                                          const std::set<std::string>& given) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw catadv::ParseError(std::string("bad config JSON: ") + e.what(), 0, 0);
  }
  if (!j.is_object()) throw catadv::ParseError("config must be a JSON object", 0, 0);
  json merged = json::object();
  for (auto& [k, v] : j.items()) {
    if (!v.is_object()) merged[k] = v;
  }
  if (j.contains(sub->get_name()) && j[sub->get_name()].is_object()) {
    for (auto& [k, v] : j[sub->get_name()].items()) merged[k] = v;
  }
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> args;
  for (auto& [k, v] : merged.items()) {
    const std::string flag = "--" + k;
    if (k == "config" || given.count(flag) || !sub->get_option_no_throw(flag)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    if (v.is_array()) {
      for (const auto& e : v) args.push_back(scalar(e));
    } else {
      args.push_back(scalar(v));
    }
  }
  return args;
}

json effective_config(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

std::string sibling(const std::string& out, const std::string& suffix) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

void write_meta(const std::string& out, const std::string& command, const CLI::App* sub, json extra,
                double seconds) {
  json meta = {{"command", command}, {"config", effective_config(sub)}, {"wall_time_s", seconds}};
  for (auto& [k, v] : extra.items()) meta[k] = v;
  write_text(sibling(out, ".meta.json"), meta.dump(2) + "\n");
}

void ensure_parent(const std::string& out) {
  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// ---------------------------------------------------------------------------
// Data and models

CategoricalDataset load_dataset(const Shared& s) {
  CsvOptions opts;
  opts.has_header = s.has_header;
  CategoricalDataset data = load_csv(s.data, opts);
  const auto n_test = static_cast<std::size_t>(std::floor(s.test_fraction * static_cast<double>(data.size()) + 1e-9));
  data.splits.assign(data.size(), Split::kTrain);
  for (std::size_t k = data.size() - n_test; k < data.size(); ++k) data.splits[k] = Split::kTest;
  return data;
}

/// Instances attacked by the evaluation commands: the test split, or every row
/// when nothing is held out.
std::vector<CategoricalExample> evaluation_set(const CategoricalDataset& data) {
  auto test = data.test();
  return test.empty() ? data.examples : test;
}

void check_compatible(const Classifier& model, const CategoricalDataset& data) {
  if (model.n() != data.n) {
    throw UsageError("model expects " + std::to_string(model.n()) + " features, data has " +
                     std::to_string(data.n));
  }
  if (data.d > model.d() || data.classes > model.classes()) {
    throw UsageError("data categories or labels exceed the model's range");
  }
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : bytes) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

/// Loads --model, or trains a clean model on the training split. With
/// CATADV_CACHE_DIR set, trained models are cached there keyed by the data
/// bytes and the seed.
Classifier resolve_model(const Shared& s, const CategoricalDataset& data) {
  if (!s.model.empty()) {
    Classifier m = load_checkpoint(s.model);
    check_compatible(m, data);
    return m;
  }
  std::string cache_path;
  if (const char* dir = std::getenv("CATADV_CACHE_DIR"); dir && *dir) {
    std::ifstream in(s.data, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    char name[96];
    std::snprintf(name, sizeof name, "clean-%016llx-%llu-%g.json",
                  static_cast<unsigned long long>(fnv1a(bytes)), static_cast<unsigned long long>(s.seed),
                  s.test_fraction);
    fs::create_directories(dir);
    cache_path = (fs::path(dir) / name).string();
    if (fs::exists(cache_path)) {
      Classifier m = load_checkpoint(cache_path);
      check_compatible(m, data);
      return m;
    }
  }
  TrainConfig tc;
  tc.seed = s.seed;
  Classifier m = train_clean(Classifier(data.n, data.d, data.classes, {kDefaultHidden}, s.seed), data.train(), tc);
  if (!cache_path.empty()) save_checkpoint(m, cache_path);
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json timing_summary(const std::vector<ReportRow>& rows) {
  const PivotTable t = pivot(rows);
  json out = json::array();
  for (const auto& m : t.methods) {
    for (int e : t.epsilons) {
      if (const PivotCell* c = t.find(m, e)) {
        out.push_back({{"method", m}, {"epsilon", e}, {"mean_time_s", c->mean_time_s}});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataFlags {
  std::size_t n = 20;
  std::size_t d = 10;
  std::size_t classes = 3;
  std::size_t size = 2000;
  double noise = 0.1;
  std::size_t informative = 0;
};

int cmd_gen_data(const Shared& s, const GenDataFlags& f, const CLI::App* sub) {
  const auto t0 = std::chrono::steady_clock::now();
  const CategoricalDataset data = gen_synthetic(f.n, f.d, f.classes, f.size, f.noise, s.seed, f.informative);
  ensure_parent(s.out);
  save_csv(data, s.out);
  write_meta(s.out, "gen-data", sub,
             {{"provenance", data.provenance}, {"train", data.train().size()}, {"test", data.test().size()}},
             seconds_since(t0));
  std::cout << "wrote " << data.size() << " examples to " << s.out << "\n";
  return 0;
}

struct TrainFlags {
  std::string mode = "clean";
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  std::vector<std::size_t> hidden{kDefaultHidden};
  double zeta = 0.2;
  std::size_t n_adv = 4;
  double lambda0 = 1.0;
  double alpha_step = 0.1;
  std::size_t inner_iterations = 10;
};

int cmd_train(const Shared& s, const TrainFlags& f, const PcaaFlags& pf, const CLI::App* sub) {
  const auto t0 = std::chrono::steady_clock::now();
  const CategoricalDataset data = load_dataset(s);
  TrainConfig tc;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch_size;
  tc.learning_rate = f.learning_rate;
  tc.seed = s.seed;
  Classifier init(data.n, data.d, data.classes, f.hidden, s.seed);
  json extra;
  Classifier model;
  if (f.mode == "clean") {
    model = train_clean(init, data.train(), tc);
  } else {
    PadvtConfig pc;
    pc.attack = pf.config();
    pc.attack.max_iterations = f.inner_iterations;
    pc.n_adv = f.n_adv;
    pc.lambda0 = f.lambda0;
    pc.alpha_step = f.alpha_step;
    pc.zeta = f.zeta;
    pc.train = tc;
    pc.jobs = s.jobs;
    Rng rng(stream_seed(s.seed, 0x7A1D));
    PadvtResult r = padvt_train(init, data.train(), pc, rng);
    model = std::move(r.model);
    extra["lambda_final"] = r.lambda_trajectory.empty() ? pc.lambda0 : r.lambda_trajectory.back();
  }
  const auto test = data.test();
  const double acc = test.empty() ? model.training().final_accuracy : accuracy(model, test);
  ensure_parent(s.out);
  save_checkpoint(model, s.out);
  extra["test_accuracy"] = acc;
  write_meta(s.out, "train", sub, extra, seconds_since(t0));
  std::printf("%s model: %s accuracy %.4f\n", f.mode.c_str(), test.empty() ? "train" : "test", acc);
  return 0;
}

struct AttackFlags {
  std::vector<std::string> methods;
  std::vector<int> epsilons;
  std::size_t limit = 0;
  std::uint64_t oracle_cap = kDefaultOracleCap;
  std::uint64_t stage2_cap = 1'000'000;
};

EvaluationConfig evaluation_config(const Shared& s, const AttackFlags& f, const PcaaFlags& pf) {
  EvaluationConfig ec;
  ec.pcaa = pf.config();
  ec.pcaa.validate();
  ec.search.stage2_cap = f.stage2_cap;
  ec.oracle_cap = f.oracle_cap;
  ec.seed = s.seed;
  ec.limit = f.limit;
  ec.jobs = s.jobs;
  return ec;
}

void check_epsilons(const std::vector<int>& eps, std::size_t n) {
  for (int e : eps) {
    if (e < 0 || static_cast<std::size_t>(e) > n) {
      throw UsageError("epsilon " + std::to_string(e) + " outside [0, " + std::to_string(n) + "]");
    }
  }
}

int cmd_attack(const Shared& s, const AttackFlags& f, const PcaaFlags& pf, const CLI::App* sub) {
  const auto t0 = std::chrono::steady_clock::now();
  const CategoricalDataset data = load_dataset(s);
  const Classifier model = resolve_model(s, data);
  check_epsilons(f.epsilons, data.n);
  const EvaluationConfig ec = evaluation_config(s, f, pf);
  const auto rows = evaluate_robustness(model, evaluation_set(data), f.methods, f.epsilons, ec);
  ensure_parent(s.out);
  const ReportFiles files = save_report(rows, s.out, false);
  write_meta(s.out, "attack", sub, {{"rows", rows.size()}, {"timing", timing_summary(rows)}}, seconds_since(t0));
  std::cout << pivot_csv(pivot(rows));
  std::cout << "wrote " << files.ndjson << " and " << files.pivot_csv << "\n";
  return 0;
}

/// Two-column series per method: epsilon against success rate, mean queries
/// and mean time. Capped cells are listed as comments.
void write_plot_data(const std::vector<ReportRow>& rows, const std::string& out) {
  const PivotTable t = pivot(rows);
  for (const auto& m : t.methods) {
    std::ostringstream sr, q, time;
    sr << "# epsilon success_rate (" << m << ")\n";
    q << "# epsilon mean_queries (" << m << ")\n";
    time << "# epsilon mean_time_s (" << m << ")\n";
    for (int e : t.epsilons) {
      const PivotCell* c = t.find(m, e);
      if (!c) continue;
      if (c->capped) {
        for (auto* os : {&sr, &q, &time}) *os << "# " << e << " capped\n";
        continue;
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, "%d %.6g\n", e, c->success_rate());
      sr << buf;
      std::snprintf(buf, sizeof buf, "%d %.6g\n", e, c->mean_queries);
      q << buf;
      std::snprintf(buf, sizeof buf, "%d %.6g\n", e, c->mean_time_s);
      time << buf;
    }
    write_text(sibling(out, "." + m + ".sr.dat"), sr.str());
    write_text(sibling(out, "." + m + ".queries.dat"), q.str());
    write_text(sibling(out, "." + m + ".time.dat"), time.str());
  }
}

int cmd_bench(const Shared& s, const AttackFlags& f, const PcaaFlags& pf, const CLI::App* sub) {
  const auto t0 = std::chrono::steady_clock::now();
  const CategoricalDataset data = load_dataset(s);
  const Classifier model = resolve_model(s, data);
  check_epsilons(f.epsilons, data.n);
  const EvaluationConfig ec = evaluation_config(s, f, pf);
  const auto rows = evaluate_robustness(model, evaluation_set(data), f.methods, f.epsilons, ec);
  ensure_parent(s.out);
  const ReportFiles files = save_report(rows, s.out, false);
  write_plot_data(rows, s.out);
  write_meta(s.out, "bench", sub, {{"rows", rows.size()}, {"timing", timing_summary(rows)}}, seconds_since(t0));
  std::cout << pivot_csv(pivot(rows));
  std::cout << "wrote " << files.ndjson << ", " << files.pivot_csv << " and plot series\n";
  return 0;
}

struct TheoryFlags {
  int epsilon = 2;
  double delta = 0.05;
  double threshold = 0.5;
  std::size_t n_samples = 10;
  std::size_t repetitions = 200;
  std::string ordering = "clean";
  std::size_t limit = 0;
  std::uint64_t cap = kDefaultOracleCap;
  std::size_t bins = 20;
};

int cmd_verify_theory(const Shared& s, const TheoryFlags& f, const PcaaFlags& pf, const CLI::App* sub) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!(f.delta >= 0.0 && f.delta < 1.0)) throw UsageError("--delta must lie in [0, 1)");
  const CategoricalDataset data = load_dataset(s);
  const Classifier model = resolve_model(s, data);
  check_epsilons({f.epsilon}, data.n);
  const auto eval = evaluation_set(data);
  const auto ids = correctly_classified(model, eval, f.limit);

  TheoremConfig tc;
  tc.attack = pf.config();
  tc.attack.epsilon = f.epsilon;
  tc.attack.validate();
  tc.n_samples = f.n_samples;
  tc.repetitions = f.repetitions;
  tc.ordering = f.ordering == "exhaustive" ? OrderingMode::kExhaustive : OrderingMode::kCleanContext;
  tc.cap = f.cap;

  std::vector<ConcentrationReport> conc(ids.size());
  std::vector<TheoremReport> theorem(ids.size());
  parallel_for(ids.size(), s.jobs, [&](std::size_t k) {
    const auto& ex = eval[ids[k]];
    Rng rng(attack_seed(s.seed, ids[k], "concentration", f.epsilon));
    conc[k] = concentration_report(pcaa_optimize(model, ex.features, ex.label, tc.attack, rng), f.threshold);
    Rng trng(attack_seed(s.seed, ids[k], "theorem", f.epsilon));
    theorem[k] = theorem_bound_check(model, ex.features, ex.label, f.epsilon, f.delta, tc, trng);
  });

  std::ostringstream nd;
  std::vector<std::size_t> hist(f.bins, 0);
  std::size_t features = 0, above = 0, checked = 0, qualifying = 0, holds = 0, hit_ok = 0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    ordered_json row;
    row["instance_id"] = ids[k];
    row["concentration"] = to_json(conc[k]);
    row["theorem"] = to_json(theorem[k]);
    nd << row.dump() << '\n';
    for (double m : conc[k].max_mass) {
      hist[std::min(f.bins - 1, static_cast<std::size_t>(m * static_cast<double>(f.bins)))]++;
      ++features;
      above += m >= f.threshold ? 1 : 0;
    }
    const TheoremReport& r = theorem[k];
    if (!r.checked()) continue;
    ++checked;
    if (r.delta_eff > f.delta) continue;
    ++qualifying;
    holds += r.inequality_holds ? 1 : 0;
    const double sigma = std::sqrt(r.sampling_bound * (1.0 - r.sampling_bound) / static_cast<double>(r.repetitions));
    hit_ok += r.empirical_mode_hit_rate >= r.sampling_bound - 3.0 * sigma ? 1 : 0;
  }
  ensure_parent(s.out);
  write_text(s.out, nd.str());

  std::ostringstream h;
  h << "# max_mass_bin_center count\n";
  for (std::size_t b = 0; b < f.bins; ++b) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f %zu\n", (static_cast<double>(b) + 0.5) / static_cast<double>(f.bins), hist[b]);
    h << buf;
  }
  write_text(sibling(s.out, ".mass.dat"), h.str());

  auto rate = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  ordered_json summary;
  summary["instances"] = ids.size();
  summary["fraction_features_above_threshold"] = rate(above, features);
  summary["threshold"] = f.threshold;
  summary["checked"] = checked;
  summary["qualifying"] = qualifying;
  summary["bound_hold_rate"] = rate(holds, qualifying);
  summary["mode_hit_pass_rate"] = rate(hit_ok, qualifying);
  write_text(sibling(s.out, ".summary.json"), summary.dump(2) + "\n");
  write_meta(s.out, "verify-theory", sub, json::object(), seconds_since(t0));
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

std::set<std::string> given_flags(const std::vector<std::string>& args) {
  std::set<std::string> out;
  for (const auto& a : args) {
    if (a.rfind("--", 0) == 0) out.insert(a.substr(0, a.find('=')));
  }
  return out;
}

std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

int run(int argc, char** argv) {
  CLI::App app{"Probabilistic categorical adversarial attacks and robust training"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Shared shared;
  PcaaFlags pcaa;

  GenDataFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic categorical dataset");
  gen_cmd->add_option("--n", gen.n, "features")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--d", gen.d, "categories per feature")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--classes", gen.classes)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "examples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--noise", gen.noise, "per-feature substitution probability")
      ->check(CLI::Range(0.0, 0.999999));
  gen_cmd->add_option("--informative", gen.informative, "class-specific positions (0: n/4)");
  add_shared_flags(gen_cmd, shared, false, false);

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "train a classifier (standard or probabilistic adversarial)");
  add_shared_flags(train_cmd, shared, true, false);
  train_cmd->add_option("--mode", train.mode)->check(CLI::IsMember({"clean", "padvt"}));
  train_cmd->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", train.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train.learning_rate);
  train_cmd->add_option("--hidden", train.hidden, "hidden layer widths")->delimiter(',');
  train_cmd->add_option("--zeta", train.zeta, "per-feature cross-entropy budget of the inner attack")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--n-adv", train.n_adv, "relaxed samples per instance")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda0", train.lambda0)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--alpha-step", train.alpha_step, "lambda step size")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--inner-iterations", train.inner_iterations);
  train_cmd->add_option("--tau", pcaa.tau);
  train_cmd->add_option("--n-g", pcaa.n_g);
  train_cmd->add_option("--step", pcaa.step);
  train_cmd->add_option("--pi-max", pcaa.pi_max);

  AttackFlags attack;
  attack.methods = {"pcaa"};
  attack.epsilons = {1};
  auto* attack_cmd = app.add_subcommand("attack", "run one attack over the evaluation split");
  add_shared_flags(attack_cmd, shared, true, true);
  attack_cmd->add_option_function<std::string>(
                "--method", [&](const std::string& m) { attack.methods = {m}; }, "pcaa|gs|ga|ggs|gga|oracle")
      ->check(CLI::IsMember({"pcaa", "gs", "ga", "ggs", "gga", "oracle"}))
      ->default_str("pcaa");
  attack_cmd->add_option("--epsilon", attack.epsilons, "l0 budgets")->delimiter(',');
  attack_cmd->add_option("--limit", attack.limit, "attack at most this many instances (0: all)");
  attack_cmd->add_option("--oracle-cap", attack.oracle_cap);
  attack_cmd->add_option("--stage2-cap", attack.stage2_cap);
  add_pcaa_flags(attack_cmd, pcaa);

  AttackFlags bench;
  bench.methods = {"pcaa", "gs", "ga", "ggs", "gga", "oracle"};
  bench.epsilons = {1, 2, 3, 4, 5};
  auto* bench_cmd = app.add_subcommand("bench", "success rate, time and queries per method and budget");
  add_shared_flags(bench_cmd, shared, true, true);
  bench_cmd->add_option("--methods", bench.methods)
      ->delimiter(',')
      ->check(CLI::IsMember({"pcaa", "gs", "ga", "ggs", "gga", "oracle"}));
  bench_cmd->add_option("--epsilons", bench.epsilons)->delimiter(',');
  bench_cmd->add_option("--limit", bench.limit);
  bench_cmd->add_option("--oracle-cap", bench.oracle_cap);
  bench_cmd->add_option("--stage2-cap", bench.stage2_cap);
  add_pcaa_flags(bench_cmd, pcaa);

  TheoryFlags theory;
  auto* theory_cmd = app.add_subcommand("verify-theory", "concentration and optimality-bound checks");
  add_shared_flags(theory_cmd, shared, true, true);
  theory_cmd->add_option("--epsilon", theory.epsilon);
  theory_cmd->add_option("--delta", theory.delta, "concentration level, in [0, 1)");
  theory_cmd->add_option("--threshold", theory.threshold, "max-mass threshold for the concentration share");
  theory_cmd->add_option("--n-samples", theory.n_samples)->check(CLI::PositiveNumber);
  theory_cmd->add_option("--repetitions", theory.repetitions)->check(CLI::PositiveNumber);
  theory_cmd->add_option("--ordering", theory.ordering)->check(CLI::IsMember({"clean", "exhaustive"}));
  theory_cmd->add_option("--limit", theory.limit);
  theory_cmd->add_option("--cap", theory.cap, "enumeration cap");
  theory_cmd->add_option("--bins", theory.bins, "histogram bins")->check(CLI::PositiveNumber);
  add_pcaa_flags(theory_cmd, pcaa);

  std::vector<std::string> args(argv + 1, argv + argc);
  const std::string config = find_config(args);
  if (!config.empty() && !args.empty()) {
    CLI::App* sub = app.get_subcommand_no_throw(args.front());
    if (sub) {
      auto extra = config_arguments(config, sub, given_flags(args));
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    }
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*gen_cmd) return cmd_gen_data(shared, gen, gen_cmd);
  if (*train_cmd) return cmd_train(shared, train, pcaa, train_cmd);
  if (*attack_cmd) return cmd_attack(shared, attack, pcaa, attack_cmd);
  if (*bench_cmd) return cmd_bench(shared, bench, pcaa, bench_cmd);
  return cmd_verify_theory(shared, theory, pcaa, theory_cmd);
}

}  // namespace catadv::cli

int main(int argc, char** argv) {
  using namespace catadv;
  try {
    return cli::run(argc, argv);
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const IndexError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const catadv::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
