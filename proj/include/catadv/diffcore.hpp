#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every primitive evaluated on its Vars. backward() replays the
// record in reverse and accumulates d(root)/d(node) into each node that
// requires a gradient. Tapes are rebuilt per forward pass and a tape may be
// differentiated once; call reset() to reuse the storage.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace catadv {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is reset.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient accumulated by the last backward(); zeros if the node was not reached.
  Matrix grad() const;
  bool has_grad() const;
  bool requires_grad() const;

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Backprop rule: given this node's accumulated gradient, push into parents.
  using Backprop = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is wanted.
  Var variable(Matrix value) { return push(std::move(value), true, {}); }
  /// Leaf treated as a constant.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Records an op result. requires_grad is inherited from the parents.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backprop) : Backprop{});
  }
  Var record(Matrix value, std::span<const Var> parents, Backprop backprop) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backprop) : Backprop{});
  }

  void backward(const Var& root) {
    check_owner(root);
    if (backward_done_) throw ContractError("backward called twice on the same tape; reset() first");
    const Matrix& rv = nodes_[root.id()].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ContractError("backward root must be scalar, got " + rv.shape_string());
    }
    backward_done_ = true;
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.empty() || !node.backprop) continue;
      // The rule may grow parents' grads but never this node's, so a copy is unnecessary.
      node.backprop(*this, node.grad);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool differentiated() const noexcept { return backward_done_; }

  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad_of(std::size_t id) const { return !nodes_[id].grad.empty(); }
  Matrix grad_of(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  }

  /// Gradient buffer of a parent, allocated on first touch. Null for constants.
  Matrix* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  void check_owner(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
      throw ContractError("Var does not belong to this tape");
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Matrix value, bool requires_grad, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backprop)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->value_of(id_); }
inline Matrix Var::grad() const { return tape_->grad_of(id_); }
inline bool Var::has_grad() const { return tape_->has_grad_of(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad_of(id_); }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("scalar() on non-scalar " + v.shape_string());
  return v[0];
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// input * weight + bias, with a 1 x out bias broadcast over the rows of input.
inline Var affine(const Var& input, const Var& weight, const Var& bias) {
  Tape& tape = detail::same_tape(input, weight);
  detail::same_tape(input, bias);
  const Matrix& x = input.value();
  const Matrix& w = weight.value();
  const Matrix& b = bias.value();
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: input " + x.shape_string() + ", weight " + w.shape_string() +
                         ", bias " + b.shape_string());
  }
  Matrix out = matmul(x, w);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) row[c] += b[c];
  }
  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias](Tape& t, const Matrix& g) {
                       if (Matrix* gx = t.grad_buffer(input)) *gx += matmul_nt(g, weight.value());
                       if (Matrix* gw = t.grad_buffer(weight)) *gw += matmul_tn(input.value(), g);
                       if (Matrix* gb = t.grad_buffer(bias)) {
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g(r, c);
                         }
                       }
                     });
}

/// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
inline Var relu(const Var& input) {
  Matrix out = input.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return input.tape().record(std::move(out), {input}, [input](Tape& t, const Matrix& g) {
    Matrix* gx = t.grad_buffer(input);
    const Matrix& x = input.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  return tape.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(a)) *ga += g;
    if (Matrix* gb = t.grad_buffer(b)) *gb += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  return tape.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(a)) *ga += g;
    if (Matrix* gb = t.grad_buffer(b)) *gb -= g;
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    }
    if (Matrix* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

/// a + c for a constant matrix c of the same shape.
inline Var add_constant(const Var& a, const Matrix& c) {
  if (!a.value().same_shape(c)) {
    throw DimensionError("add_constant: " + a.value().shape_string() + " vs " + c.shape_string());
  }
  return a.tape().record(a.value() + c, {a}, [a](Tape& t, const Matrix& g) {
    *t.grad_buffer(a) += g;
  });
}

inline Var add_scalar(const Var& a, double c) {
  Matrix out = a.value();
  for (double& v : out.values()) v += c;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    *t.grad_buffer(a) += g;
  });
}

/// Natural log; inputs must be strictly positive.
inline Var log(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.values()) {
    if (!(v > 0.0)) throw ContractError("log of non-positive value");
    v = std::log(v);
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a.value()[i];
  });
}

/// Sum of all entries, as a 1x1 result.
inline Var sum(const Var& a) {
  return a.tape().record(Matrix(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (double& v : ga->values()) v += g[0];
  });
}

inline Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Per-row sum, rows x 1.
inline Var row_sum(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    out(r, 0) = s;
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < ga->rows(); ++r) {
      for (double& v : ga->row(r)) v += g(r, 0);
    }
  });
}

/// out[r] = a[r, index[r]], rows x 1.
inline Var gather_cols(const Var& a, std::span<const int> index) {
  const Matrix& x = a.value();
  if (index.size() != x.rows()) throw DimensionError("gather_cols: one index per row required");
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= x.cols()) {
      throw IndexError("gather_cols: column index out of range");
    }
    out(r, 0) = x(r, static_cast<std::size_t>(index[r]));
  }
  std::vector<int> idx(index.begin(), index.end());
  return a.tape().record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < idx.size(); ++r) (*ga)(r, static_cast<std::size_t>(idx[r])) += g(r, 0);
  });
}

/// Numerically stable softmax applied to every row independently.
inline Var row_softmax(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : in) m = std::max(m, v);
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - m);
      z += o[c];
    }
    for (double& v : o) v /= z;
  }
  Matrix y = out;
  return a.tape().record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

/// Same entries laid out with a new shape.
inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  return a.tape().record(a.value().reshaped(rows, cols), {a}, [a](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

/// Stacks equally wide matrices vertically.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &tape) throw ContractError("operands recorded on different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [keep = std::move(keep), cols](Tape& t, const Matrix& g) {
    std::size_t base = 0;
    for (const Var& p : keep) {
      const std::size_t n = p.rows() * cols;
      if (Matrix* gp = t.grad_buffer(p)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[base + i];
      }
      base += n;
    }
  });
}

/// Mean over rows of -log softmax(logits[r])[labels[r]], as a 1x1 result.
///
/// Uses max-subtraction, so saturated logits neither overflow nor lose the
/// correct limit. The gradient is (softmax - onehot) / rows.
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(z.rows()) + " rows");
  }
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= z.cols()) {
      throw IndexError("label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(z.cols()) + " classes");
    }
    auto in = z.row(r);
    auto p = probs.row(r);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : in) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      p[c] = std::exp(in[c] - m);
      s += p[c];
    }
    const double log_z = m + std::log(s);
    total += log_z - in[static_cast<std::size_t>(labels[r])];
    for (double& v : p) v /= s;
  }
  const double inv_rows = 1.0 / static_cast<double>(z.rows());
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Matrix(1, 1, std::max(0.0, total * inv_rows)), {logits},
      [logits, probs = std::move(probs), lab = std::move(lab), inv_rows](Tape& t, const Matrix& g) {
        Matrix* gz = t.grad_buffer(logits);
        const double s = g[0] * inv_rows;
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double target = static_cast<std::size_t>(lab[r]) == c ? 1.0 : 0.0;
            (*gz)(r, c) += s * (probs(r, c) - target);
          }
        }
      });
}

inline Var softmax_cross_entropy(const Var& logits, int label) {
  if (logits.rows() != 1) throw DimensionError("single-label cross entropy expects one row");
  return softmax_cross_entropy(logits, std::span<const int>(&label, 1));
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// Entries skipped because the function is not smooth within one step of
  /// the point (a relu kink was crossed).
  std::size_t kinked_entries = 0;
  std::size_t checked_entries = 0;
};

/// Relative error of one gradient entry; magnitudes below `floor` are compared absolutely.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares the autodiff gradient of `fn` at `point` with central differences.
///
/// `fn` receives a fresh tape and the input Var and must return a scalar Var.
/// Each entry is also differenced at half the step; if the two central
/// quotients disagree the function is not smooth there and the entry is
/// counted in kinked_entries instead of the error.
template <typename Fn>
GradCheckResult grad_check(Fn&& fn, const Matrix& point, double step = 1e-6) {
  if (!(step > 0.0)) throw ContractError("grad_check step must be positive");
  Matrix analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = fn(tape, x);
    tape.backward(y);
    analytic = x.grad();
  }
  auto eval = [&](const Matrix& at) {
    Tape tape;
    Var x = tape.constant(at);
    return fn(tape, x).scalar();
  };
  GradCheckResult result;
  Matrix probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto central = [&](double h) {
      probe[i] = point[i] + h;
      const double up = eval(probe);
      probe[i] = point[i] - h;
      const double down = eval(probe);
      probe[i] = point[i];
      return (up - down) / (2.0 * h);
    };
    const double full = central(step);
    const double half = central(step / 2.0);
    if (relative_error(full, half) > 1e-5) {
      ++result.kinked_entries;
      continue;
    }
    ++result.checked_entries;
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[i], full));
  }
  return result;
}

}  // namespace catadv
