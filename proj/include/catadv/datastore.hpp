#pragma once

// Datasets and on-disk formats.
//
// Dataset CSV: one example per line, n integer category cells followed by one
// integer label cell. An optional header line is preserved on save.
// Report NDJSON: one JSON object per attack instance.
// Pivot CSV: method x epsilon summary (success rate, mean time, mean queries).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "json.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace catadv {

enum class Split { kTrain, kTest };

struct CategoricalDataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t classes = 0;
  std::vector<CategoricalExample> examples;
  std::vector<Split> splits;
  std::string provenance;
  /// Column names when loaded from a file with a header.
  std::vector<std::string> header;

  std::size_t size() const noexcept { return examples.size(); }

  std::vector<CategoricalExample> subset(Split which) const {
    std::vector<CategoricalExample> out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (splits[i] == which) out.push_back(examples[i]);
    }
    return out;
  }
  std::vector<CategoricalExample> train() const { return subset(Split::kTrain); }
  std::vector<CategoricalExample> test() const { return subset(Split::kTest); }

  void validate() const {
    if (splits.size() != examples.size()) throw ContractError("one split tag per example required");
    for (const auto& ex : examples) validate_example(ex, n, d, classes);
  }
};

/// Tags the last `fraction` of a seeded permutation as test.
inline void assign_holdout(CategoricalDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ContractError("holdout fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(stream_seed(seed, 0x5B11));
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size())));
  data.splits.assign(data.size(), Split::kTrain);
  for (std::size_t k = 0; k < n_test; ++k) data.splits[order[order.size() - 1 - k]] = Split::kTest;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline int parse_int_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string cell = trim(raw);
  int value = 0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw ParseError("non-integer cell '" + cell + "'", row, col);
  }
  return value;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

}  // namespace detail

struct CsvOptions {
  bool has_header = false;
  std::optional<std::size_t> d;
  std::optional<std::size_t> classes;
};

/// Loads an integer CSV. d and K default to (max observed + 1).
/// Errors carry the 1-based file row and column of the offending cell.
inline CategoricalDataset load_csv(const std::string& path, const CsvOptions& options = {}) {
  const auto lines = detail::read_lines(path);
  CategoricalDataset data;
  data.provenance = path;
  std::size_t first = 0;
  if (options.has_header) {
    if (lines.empty()) throw ParseError("missing header", 1, 0);
    for (auto& c : detail::split_csv_line(lines[0])) data.header.push_back(detail::trim(c));
    first = 1;
  }
  if (lines.size() <= first) throw ParseError("no data rows in " + path, first + 1, 0);
  std::size_t width = 0;
  int max_category = -1;
  int max_label = -1;
  std::vector<std::pair<std::size_t, std::size_t>> where_max;  // (row, col) of first max
  for (std::size_t r = first; r < lines.size(); ++r) {
    const std::size_t row = r + 1;
    const auto cells = detail::split_csv_line(lines[r]);
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw ParseError("need at least one feature column and a label", row, 1);
      if (!data.header.empty() && data.header.size() != width) {
        throw ParseError("header has " + std::to_string(data.header.size()) + " columns but row has " +
                             std::to_string(width),
                         row, cells.size());
      }
    } else if (cells.size() != width) {
      throw ParseError("ragged row: " + std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(width),
                       row, std::min(cells.size(), width) + 1);
    }
    CategoricalExample ex;
    for (std::size_t c = 0; c + 1 < width; ++c) {
      const int v = detail::parse_int_cell(cells[c], row, c + 1);
      if (v < 0) throw ParseError("negative category", row, c + 1);
      if (options.d && static_cast<std::size_t>(v) >= *options.d) {
        throw ParseError("category " + std::to_string(v) + " >= d=" + std::to_string(*options.d), row,
                         c + 1);
      }
      max_category = std::max(max_category, v);
      ex.features.push_back(v);
    }
    ex.label = detail::parse_int_cell(cells[width - 1], row, width);
    if (ex.label < 0) throw ParseError("negative label", row, width);
    if (options.classes && static_cast<std::size_t>(ex.label) >= *options.classes) {
      throw ParseError("label " + std::to_string(ex.label) + " >= K=" + std::to_string(*options.classes),
                       row, width);
    }
    max_label = std::max(max_label, ex.label);
    data.examples.push_back(std::move(ex));
  }
  data.n = width - 1;
  data.d = options.d.value_or(static_cast<std::size_t>(max_category + 1));
  data.classes = options.classes.value_or(static_cast<std::size_t>(max_label + 1));
  data.splits.assign(data.examples.size(), Split::kTrain);
  data.validate();
  return data;
}

inline void save_csv(const CategoricalDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  if (!data.header.empty()) {
    for (std::size_t c = 0; c < data.header.size(); ++c) out << (c ? "," : "") << data.header[c];
    out << '\n';
  }
  for (const auto& ex : data.examples) {
    for (int v : ex.features) out << v << ',';
    out << ex.label << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

/// Per-column string-to-index maps for datasets with symbolic cells.
struct Vocabulary {
  std::vector<std::vector<std::string>> features;  // one list per feature column
  std::vector<std::string> labels;
};

inline nlohmann::json to_json(const Vocabulary& v) {
  return {{"features", v.features}, {"labels", v.labels}};
}

inline void save_vocabulary(const Vocabulary& v, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(v).dump(1) << '\n';
}

/// Loads a CSV with arbitrary string cells; categories are numbered per column
/// in order of first appearance. d is the largest per-column vocabulary.
inline std::pair<CategoricalDataset, Vocabulary> load_symbolic_csv(const std::string& path,
                                                                   bool has_header) {
  const auto lines = detail::read_lines(path);
  CategoricalDataset data;
  Vocabulary vocab;
  data.provenance = path;
  std::size_t first = has_header ? 1 : 0;
  if (has_header && !lines.empty()) {
    for (auto& c : detail::split_csv_line(lines[0])) data.header.push_back(detail::trim(c));
  }
  if (lines.size() <= first) throw ParseError("no data rows in " + path, first + 1, 0);
  std::size_t width = 0;
  std::vector<std::map<std::string, int>> index;
  std::map<std::string, int> label_index;
  for (std::size_t r = first; r < lines.size(); ++r) {
    const auto cells = detail::split_csv_line(lines[r]);
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw ParseError("need at least one feature column and a label", r + 1, 1);
      index.resize(width - 1);
      vocab.features.resize(width - 1);
    } else if (cells.size() != width) {
      throw ParseError("ragged row", r + 1, std::min(cells.size(), width) + 1);
    }
    CategoricalExample ex;
    for (std::size_t c = 0; c + 1 < width; ++c) {
      const std::string cell = detail::trim(cells[c]);
      auto [it, inserted] = index[c].emplace(cell, static_cast<int>(vocab.features[c].size()));
      if (inserted) vocab.features[c].push_back(cell);
      ex.features.push_back(it->second);
    }
    const std::string lab = detail::trim(cells[width - 1]);
    auto [it, inserted] = label_index.emplace(lab, static_cast<int>(vocab.labels.size()));
    if (inserted) vocab.labels.push_back(lab);
    ex.label = it->second;
    data.examples.push_back(std::move(ex));
  }
  data.n = width - 1;
  for (const auto& f : vocab.features) data.d = std::max(data.d, f.size());
  data.classes = vocab.labels.size();
  data.splits.assign(data.examples.size(), Split::kTrain);
  return {std::move(data), std::move(vocab)};
}

/// Number of class-bearing positions used when the caller passes 0.
inline std::size_t default_informative(std::size_t n) { return std::max<std::size_t>(1, n / 4); }

/// Synthetic task. A base pattern is shared by all classes; each class
/// prototype overwrites `informative` fixed positions with class-specific
/// categories (distinct across classes where d >= K). Each example copies its
/// class's prototype and replaces each feature, with probability `noise`, by a
/// uniformly drawn different category. Labels are drawn uniformly. The last
/// 20% of examples are tagged test.
inline CategoricalDataset gen_synthetic(std::size_t n, std::size_t d, std::size_t classes,
                                        std::size_t size, double noise, std::uint64_t seed,
                                        std::size_t informative = 0) {
  if (n == 0 || d == 0 || classes == 0 || size == 0) throw ContractError("all counts must be >= 1");
  if (!(noise >= 0.0 && noise < 1.0)) throw ContractError("noise must lie in [0, 1)");
  if (classes > 1 && d == 1) throw ContractError("d = 1 cannot separate several classes");
  if (informative == 0) informative = default_informative(n);
  informative = std::min(informative, n);
  Rng rng(stream_seed(seed, 0xDA7A));

  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  rng.shuffle(positions);
  positions.resize(informative);
  std::sort(positions.begin(), positions.end());

  Features base(n);
  for (int& v : base) v = static_cast<int>(rng.below(d));
  std::vector<Features> prototypes;
  std::set<Features> seen;
  for (std::size_t attempt = 0; prototypes.size() < classes; ++attempt) {
    if (attempt > 1000 * classes) throw ContractError("cannot plant distinct prototypes; raise d or informative");
    prototypes.assign(classes, base);
    seen.clear();
    for (std::size_t pos : positions) {
      std::vector<int> cats(d);
      for (std::size_t c = 0; c < d; ++c) cats[c] = static_cast<int>(c);
      rng.shuffle(cats);
      for (std::size_t k = 0; k < classes; ++k) {
        prototypes[k][pos] = d >= classes ? cats[k] : static_cast<int>(rng.below(d));
      }
    }
    for (const auto& p : prototypes) seen.insert(p);
    if (seen.size() < classes) prototypes.clear();
  }

  CategoricalDataset data;
  data.n = n;
  data.d = d;
  data.classes = classes;
  for (std::size_t s = 0; s < size; ++s) {
    CategoricalExample ex;
    ex.label = static_cast<int>(rng.below(classes));
    ex.features = prototypes[static_cast<std::size_t>(ex.label)];
    for (int& v : ex.features) {
      if (d > 1 && rng.uniform() < noise) {
        const int shift = 1 + static_cast<int>(rng.below(d - 1));
        v = (v + shift) % static_cast<int>(d);
      }
    }
    data.examples.push_back(std::move(ex));
  }
  const std::size_t n_train = size - size / 5;
  data.splits.assign(size, Split::kTrain);
  for (std::size_t s = n_train; s < size; ++s) data.splits[s] = Split::kTest;
  data.provenance = "synthetic n=" + std::to_string(n) + " d=" + std::to_string(d) +
                    " classes=" + std::to_string(classes) + " size=" + std::to_string(size) +
                    " informative=" + std::to_string(informative) + " seed=" + std::to_string(seed);
  return data;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string method;
  std::uint64_t instance_id = 0;
  int epsilon = 0;
  bool success = false;
  std::optional<std::size_t> l0;
  std::optional<double> best_loss;
  std::uint64_t queries = 0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  bool capped = false;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline nlohmann::ordered_json to_json(const ReportRow& r, bool include_timing = true) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["instance_id"] = r.instance_id;
  j["epsilon"] = r.epsilon;
  j["success"] = r.success;
  j["l0"] = r.l0 ? nlohmann::ordered_json(*r.l0) : nlohmann::ordered_json(nullptr);
  j["best_loss"] = r.best_loss ? nlohmann::ordered_json(*r.best_loss) : nlohmann::ordered_json(nullptr);
  j["queries"] = r.queries;
  if (include_timing) j["wall_time_s"] = r.wall_time_s;
  j["seed"] = r.seed;
  j["capped"] = r.capped;
  return j;
}

inline ReportRow report_row_from_json(const nlohmann::json& j) {
  ReportRow r;
  r.method = j.at("method").get<std::string>();
  r.instance_id = j.at("instance_id").get<std::uint64_t>();
  r.epsilon = j.at("epsilon").get<int>();
  r.success = j.at("success").get<bool>();
  if (!j.at("l0").is_null()) r.l0 = j["l0"].get<std::size_t>();
  if (!j.at("best_loss").is_null()) r.best_loss = j["best_loss"].get<double>();
  r.queries = j.at("queries").get<std::uint64_t>();
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.seed = j.at("seed").get<std::uint64_t>();
  r.capped = j.value("capped", false);
  return r;
}

inline void write_ndjson(const std::vector<ReportRow>& rows, const std::string& path,
                         bool include_timing = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : rows) out << to_json(r, include_timing).dump() << '\n';
  if (!out) throw IoError("failed writing " + path);
}

inline std::vector<ReportRow> load_ndjson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      rows.push_back(report_row_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad report row: ") + e.what(), line_no, 0);
    }
  }
  return rows;
}

/// One (method, epsilon) cell of the pivot table.
struct PivotCell {
  std::size_t instances = 0;
  std::size_t successes = 0;
  double mean_time_s = 0.0;
  double mean_queries = 0.0;
  bool capped = false;

  double success_rate() const {
    return instances == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(instances);
  }
};

struct PivotTable {
  std::vector<std::string> methods;  // first-appearance order
  std::vector<int> epsilons;         // ascending
  std::map<std::pair<std::string, int>, PivotCell> cells;

  const PivotCell* find(const std::string& method, int eps) const {
    auto it = cells.find({method, eps});
    return it == cells.end() ? nullptr : &it->second;
  }
};

inline PivotTable pivot(const std::vector<ReportRow>& rows) {
  PivotTable t;
  std::set<int> eps;
  for (const auto& r : rows) {
    if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) {
      t.methods.push_back(r.method);
    }
    eps.insert(r.epsilon);
    PivotCell& c = t.cells[{r.method, r.epsilon}];
    ++c.instances;
    c.successes += r.success ? 1 : 0;
    c.mean_time_s += r.wall_time_s;
    c.mean_queries += static_cast<double>(r.queries);
    c.capped = c.capped || r.capped;
  }
  for (auto& [key, c] : t.cells) {
    c.mean_time_s /= static_cast<double>(c.instances);
    c.mean_queries /= static_cast<double>(c.instances);
  }
  t.epsilons.assign(eps.begin(), eps.end());
  return t;
}

/// Table layout: one row per method; SR (percent), T (mean seconds) and Q
/// (mean queries) per epsilon. Capped cells print "-".
inline std::string pivot_csv(const PivotTable& t) {
  std::ostringstream out;
  out << "method";
  for (int e : t.epsilons) out << ",SR@" << e << ",T@" << e << ",Q@" << e;
  out << '\n';
  char buf[64];
  for (const auto& m : t.methods) {
    out << m;
    for (int e : t.epsilons) {
      const PivotCell* c = t.find(m, e);
      if (!c || c->capped) {
        out << ",-,-,-";
        continue;
      }
      std::snprintf(buf, sizeof buf, ",%.1f,%.6g,%.6g", 100.0 * c->success_rate(), c->mean_time_s,
                    c->mean_queries);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

/// Paths written by save_report.
struct ReportFiles {
  std::string ndjson;
  std::string pivot_csv;
};

/// Writes `path` (NDJSON rows) and `<path stem>.pivot.csv`.
inline ReportFiles save_report(const std::vector<ReportRow>& rows, const std::string& path,
                               bool include_timing = true) {
  ReportFiles files{path, (std::filesystem::path(path).replace_extension(".pivot.csv")).string()};
  write_ndjson(rows, files.ndjson, include_timing);
  std::ofstream out(files.pivot_csv, std::ios::binary);
  if (!out) throw IoError("cannot write " + files.pivot_csv);
  if (!rows.empty()) out << pivot_csv(pivot(rows));
  if (!out) throw IoError("failed writing " + files.pivot_csv);
  return files;
}

}  // namespace catadv
