#pragma once

// Differentiable classifier over categorical inputs.
//
// Inputs are n x d matrices whose rows are one-hot (discrete examples) or
// probability vectors (relaxed examples). The network flattens them to a
// 1 x (n*d) row and applies affine/relu layers ending in K logits.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffcore.hpp"
#include "errors.hpp"
#include "json.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace catadv {

using Features = std::vector<int>;

struct CategoricalExample {
  Features features;
  int label = 0;

  friend bool operator==(const CategoricalExample&, const CategoricalExample&) = default;
};

/// Throws IndexError unless every feature is in [0, d) and label in [0, classes).
inline void validate_example(const CategoricalExample& ex, std::size_t n, std::size_t d,
                             std::size_t classes) {
  if (ex.features.size() != n) {
    throw DimensionError("example has " + std::to_string(ex.features.size()) +
                         " features, expected " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ex.features[i] < 0 || static_cast<std::size_t>(ex.features[i]) >= d) {
      throw IndexError("feature " + std::to_string(i) + " has category " +
                       std::to_string(ex.features[i]) + " outside [0, " + std::to_string(d) + ")");
    }
  }
  if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= classes) {
    throw IndexError("label " + std::to_string(ex.label) + " outside [0, " +
                     std::to_string(classes) + ")");
  }
}

/// n x d matrix with a single 1 per row at the feature's category.
inline Matrix one_hot(std::span<const int> features, std::size_t d) {
  Matrix m(features.size(), d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i] < 0 || static_cast<std::size_t>(features[i]) >= d) {
      throw IndexError("one_hot: category out of range");
    }
    m(i, static_cast<std::size_t>(features[i])) = 1.0;
  }
  return m;
}

/// Row-wise argmax, lowest column on ties.
inline Features argmax_rows(const Matrix& m) {
  Features out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

/// Index of the largest entry; lowest index wins ties.
inline int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ContractError("epochs and batch size must be >= 1");
    if (learning_rate < 0.0) throw ContractError("learning rate must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ContractError("Adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw ContractError("Adam epsilon must be positive");
  }
};

struct Layer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

/// Loss and prediction produced by one forward pass.
struct Evaluation {
  double loss = 0.0;
  int predicted = 0;
};

struct TrainingSummary {
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Hidden width of the default one-hidden-layer architecture.
inline constexpr std::size_t kDefaultHidden = 64;

enum class OutputInit { kRandom, kZero };

class Classifier {
 public:
  Classifier() = default;

  /// He-uniform initialisation from `seed`. hidden = {} gives a linear model.
  Classifier(std::size_t n, std::size_t d, std::size_t classes, std::vector<std::size_t> hidden,
             std::uint64_t seed, OutputInit output_init = OutputInit::kRandom)
      : n_(n), d_(d), classes_(classes), seed_(seed) {
    if (n == 0 || d == 0 || classes < 2) throw ContractError("classifier needs n, d >= 1 and K >= 2");
    widths_.push_back(n * d);
    for (std::size_t h : hidden) {
      if (h == 0) throw ContractError("hidden width must be positive");
      widths_.push_back(h);
    }
    widths_.push_back(classes);
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      Layer layer{Matrix(widths_[l], widths_[l + 1]), Matrix(1, widths_[l + 1])};
      const bool last = l + 2 == widths_.size();
      if (!(last && output_init == OutputInit::kZero)) {
        // One-hot inputs have n active entries, so fan-in is n for the first layer.
        const double fan_in = l == 0 ? static_cast<double>(n) : static_cast<double>(widths_[l]);
        const double limit = std::sqrt(6.0 / fan_in);
        for (double& w : layer.weight.values()) w = rng.uniform(-limit, limit);
      }
      layers_.push_back(std::move(layer));
    }
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return d_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t input_width() const noexcept { return n_ * d_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  TrainingSummary& training() noexcept { return training_; }
  const TrainingSummary& training() const noexcept { return training_; }
  /// Free-form block carried through checkpoints (used by robust training).
  nlohmann::json& provenance() noexcept { return provenance_; }
  const nlohmann::json& provenance() const noexcept { return provenance_; }

  /// Parameters as tape leaves, in layer order (weight, bias, weight, bias, ...).
  std::vector<Var> parameters_on(Tape& tape, bool trainable) const {
    std::vector<Var> params;
    for (const Layer& layer : layers_) {
      params.push_back(trainable ? tape.variable(layer.weight) : tape.constant(layer.weight));
      params.push_back(trainable ? tape.variable(layer.bias) : tape.constant(layer.bias));
    }
    return params;
  }

  /// Logits for a batch of flattened inputs (rows x n*d) using the given parameter leaves.
  Var forward(const Var& batch, std::span<const Var> params) const {
    if (batch.cols() != input_width()) {
      throw DimensionError("classifier expects " + std::to_string(input_width()) +
                           " input columns, got " + std::to_string(batch.cols()));
    }
    Var h = batch;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = affine(h, params[2 * l], params[2 * l + 1]);
      if (l + 1 < layers_.size()) h = relu(h);
    }
    return h;
  }

  /// Logits for one n x d input, with the model parameters as constants.
  Var forward(const Var& input) const {
    Tape& tape = input.tape();
    auto params = parameters_on(tape, false);
    return forward(reshape(input, 1, input_width()), params);
  }

  /// Cross-entropy of a relaxed or one-hot n x d input.
  double loss(const Matrix& input, int label) const {
    check_input(input);
    check_label(label);
    Tape tape;
    return softmax_cross_entropy(forward(tape.constant(input)), label).scalar();
  }

  /// d loss / d input, shaped n x d.
  Matrix input_gradient(const Matrix& input, int label) const {
    check_input(input);
    check_label(label);
    Tape tape;
    Var x = tape.variable(input);
    tape.backward(softmax_cross_entropy(forward(x), label));
    return x.grad();
  }

  /// Logits of a discrete example. Sums the selected first-layer rows instead of
  /// multiplying a one-hot matrix; numerically this matches forward() on one_hot().
  std::vector<double> logits(std::span<const int> features) const {
    if (features.size() != n_) throw DimensionError("example length does not match classifier");
    const Layer& first = layers_.front();
    std::vector<double> h(first.bias.values());
    for (std::size_t i = 0; i < n_; ++i) {
      const int c = features[i];
      if (c < 0 || static_cast<std::size_t>(c) >= d_) throw IndexError("category out of range");
      auto w = first.weight.row(i * d_ + static_cast<std::size_t>(c));
      for (std::size_t j = 0; j < h.size(); ++j) h[j] += w[j];
    }
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      for (double& v : h) v = v > 0.0 ? v : 0.0;
      const Layer& layer = layers_[l];
      std::vector<double> next(layer.bias.values());
      for (std::size_t k = 0; k < h.size(); ++k) {
        if (h[k] == 0.0) continue;
        auto w = layer.weight.row(k);
        for (std::size_t j = 0; j < next.size(); ++j) next[j] += h[k] * w[j];
      }
      h = std::move(next);
    }
    return h;
  }

  Evaluation evaluate(std::span<const int> features, int label) const {
    check_label(label);
    const auto z = logits(features);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double ce = m + std::log(s) - z[static_cast<std::size_t>(label)];
    return {std::max(0.0, ce), argmax(z)};
  }

  double loss(std::span<const int> features, int label) const {
    return evaluate(features, label).loss;
  }

  /// argmax of the logits; ties go to the lowest class index.
  int predict(std::span<const int> features) const { return argmax(logits(features)); }

 private:
  void check_input(const Matrix& input) const {
    if (input.rows() != n_ || input.cols() != d_) {
      throw DimensionError("classifier expects a " + std::to_string(n_) + "x" + std::to_string(d_) +
                           " input, got " + input.shape_string());
    }
  }
  void check_label(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= classes_) {
      throw IndexError("label " + std::to_string(label) + " out of range");
    }
  }

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::size_t classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> widths_;
  std::vector<Layer> layers_;
  TrainingSummary training_;
  nlohmann::json provenance_;
};

/// Adam over a classifier's parameter list.
class Adam {
 public:
  Adam(const Classifier& model, const TrainConfig& config) : config_(config) {
    for (const Layer& layer : model.layers()) {
      m_.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                    Matrix(layer.bias.rows(), layer.bias.cols())});
      v_.push_back(m_.back());
    }
  }

  void step(Classifier& model, const std::vector<Layer>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto update = [&](Matrix& param, const Matrix& g, Matrix& m, Matrix& v) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        param[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      }
    };
    for (std::size_t l = 0; l < grads.size(); ++l) {
      Layer& layer = model.layers()[l];
      update(layer.weight, grads[l].weight, m_[l].weight, v_[l].weight);
      update(layer.bias, grads[l].bias, m_[l].bias, v_[l].bias);
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig config_;
  std::vector<Layer> m_;
  std::vector<Layer> v_;
  std::size_t t_ = 0;
};

/// Mean cross-entropy of a batch of flattened inputs and its parameter gradient.
inline double batch_gradient(const Classifier& model, Matrix batch, std::span<const int> labels,
                             std::vector<Layer>& grads) {
  Tape tape;
  auto params = model.parameters_on(tape, true);
  Var loss = softmax_cross_entropy(model.forward(tape.constant(std::move(batch)), params), labels);
  tape.backward(loss);
  grads.clear();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    grads.push_back({params[2 * l].grad(), params[2 * l + 1].grad()});
  }
  return loss.scalar();
}

inline double accuracy(const Classifier& model, std::span<const CategoricalExample> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) hits += model.predict(ex.features) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline double mean_loss(const Classifier& model, std::span<const CategoricalExample> data) {
  if (data.empty()) return 0.0;
  double s = 0.0;
  for (const auto& ex : data) s += model.loss(ex.features, ex.label);
  return s / static_cast<double>(data.size());
}

/// Standard training: Adam on the mean cross-entropy of one-hot inputs.
/// `model` supplies the architecture and the starting parameters.
inline Classifier train_clean(Classifier model, std::span<const CategoricalExample> data,
                              const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw ContractError("cannot train on an empty dataset");
  for (const auto& ex : data) validate_example(ex, model.n(), model.d(), model.classes());

  Rng rng(stream_seed(config.seed, 0x7EA1));
  Adam adam(model, config);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Layer> grads;
  TrainingSummary summary;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      Matrix batch(stop - start, model.input_width());
      std::vector<int> labels;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& ex = data[order[b]];
        for (std::size_t i = 0; i < model.n(); ++i) {
          batch(b - start, i * model.d() + static_cast<std::size_t>(ex.features[i])) = 1.0;
        }
        labels.push_back(ex.label);
      }
      const double l = batch_gradient(model, std::move(batch), labels, grads);
      epoch_loss += l * static_cast<double>(stop - start);
      adam.step(model, grads);
    }
    summary.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  summary.epochs = config.epochs;
  summary.final_loss = mean_loss(model, data);
  summary.final_accuracy = accuracy(model, data);
  model.training() = summary;
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw DimensionError("matrix must be a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw DimensionError("ragged matrix in checkpoint");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const Classifier& model) {
  nlohmann::json j;
  j["format"] = "catadv-classifier";
  j["version"] = 1;
  j["n"] = model.n();
  j["d"] = model.d();
  j["classes"] = model.classes();
  j["widths"] = model.widths();
  j["seed"] = model.seed();
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : model.layers()) {
    layers.push_back({{"weight", matrix_to_json(layer.weight)}, {"bias", matrix_to_json(layer.bias)}});
  }
  j["layers"] = std::move(layers);
  const auto& t = model.training();
  j["training"] = {{"epochs", t.epochs},
                   {"final_loss", t.final_loss},
                   {"final_accuracy", t.final_accuracy},
                   {"epoch_loss", t.epoch_loss}};
  if (!model.provenance().is_null()) j["provenance"] = model.provenance();
  return j;
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "catadv-classifier") throw ContractError("not a classifier checkpoint");
  const auto widths = j.at("widths").get<std::vector<std::size_t>>();
  if (widths.size() < 2) throw DimensionError("checkpoint needs at least two widths");
  const auto n = j.at("n").get<std::size_t>();
  const auto d = j.at("d").get<std::size_t>();
  const auto k = j.at("classes").get<std::size_t>();
  if (widths.front() != n * d || widths.back() != k) {
    throw DimensionError("checkpoint widths inconsistent with n, d, classes");
  }
  std::vector<std::size_t> hidden(widths.begin() + 1, widths.end() - 1);
  Classifier model(n, d, k, hidden, j.at("seed").get<std::uint64_t>());
  const auto& layers = j.at("layers");
  if (layers.size() != model.layers().size()) throw DimensionError("checkpoint layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix w = matrix_from_json(layers[l].at("weight"));
    Matrix b = matrix_from_json(layers[l].at("bias"));
    if (!w.same_shape(model.layers()[l].weight) || !b.same_shape(model.layers()[l].bias)) {
      throw DimensionError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
    }
    model.layers()[l] = {std::move(w), std::move(b)};
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    model.training().epochs = t.value("epochs", std::size_t{0});
    model.training().final_loss = t.value("final_loss", 0.0);
    model.training().final_accuracy = t.value("final_accuracy", 0.0);
    model.training().epoch_loss = t.value("epoch_loss", std::vector<double>{});
  }
  if (j.contains("provenance")) model.provenance() = j["provenance"];
  return model;
}

inline void save_checkpoint(const Classifier& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << to_json(model).dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline Classifier load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
  return classifier_from_json(j);
}

}  // namespace catadv
