#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "diffcore.hpp"
#include "errors.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace catadv {

inline constexpr double kDefaultPiMin = 1e-6;
inline constexpr double kDefaultPiMax = 1.0;

/// Unnormalized per-feature categorical parameters, every entry in [pi_min, C].
class AdversarialDistribution {
 public:
  AdversarialDistribution() = default;
  AdversarialDistribution(Matrix pi, double pi_min = kDefaultPiMin, double pi_max = kDefaultPiMax)
      : pi_(std::move(pi)), pi_min_(pi_min), pi_max_(pi_max) {
    if (!(pi_min > 0.0) || !(pi_max >= pi_min)) throw ContractError("need 0 < pi_min <= C");
    if (pi_.empty()) throw DimensionError("adversarial distribution needs n, d >= 1");
    for (double v : pi_.values()) {
      if (!(v >= pi_min_ && v <= pi_max_)) {
        throw ContractError("pi entry " + std::to_string(v) + " outside [pi_min, C]");
      }
    }
  }

  /// Uniform parameters (every entry equal to `value`).
  static AdversarialDistribution uniform(std::size_t n, std::size_t d, double value,
                                         double pi_min = kDefaultPiMin, double pi_max = kDefaultPiMax) {
    return {Matrix(n, d, value), pi_min, pi_max};
  }

  /// `heavy` at each feature's category, pi_min elsewhere.
  static AdversarialDistribution concentrated(std::span<const int> features, std::size_t d,
                                              double heavy, double pi_min = kDefaultPiMin,
                                              double pi_max = kDefaultPiMax) {
    Matrix pi(features.size(), d, pi_min);
    for (std::size_t i = 0; i < features.size(); ++i) pi(i, static_cast<std::size_t>(features[i])) = heavy;
    return {std::move(pi), pi_min, pi_max};
  }

  std::size_t n() const noexcept { return pi_.rows(); }
  std::size_t d() const noexcept { return pi_.cols(); }
  double pi_min() const noexcept { return pi_min_; }
  double pi_max() const noexcept { return pi_max_; }
  const Matrix& pi() const noexcept { return pi_; }

  /// Rows rescaled to sum to one.
  Matrix normalized() const {
    Matrix p = pi_;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      auto row = p.row(r);
      double s = 0.0;
      for (double v : row) s += v;
      for (double& v : row) v /= s;
    }
    return p;
  }

  /// Projects every entry back into [pi_min, C].
  static void clamp(Matrix& pi, double pi_min, double pi_max) {
    for (double& v : pi.values()) v = std::clamp(v, pi_min, pi_max);
  }

 private:
  Matrix pi_;
  double pi_min_ = kDefaultPiMin;
  double pi_max_ = kDefaultPiMax;
};

/// Uniform draws are clamped to [kUniformClamp, 1 - kUniformClamp] before the double log.
inline constexpr double kUniformClamp = 1e-12;

/// n x d matrix of independent Gumbel(0, 1) draws, g = -log(-log u).
inline Matrix sample_gumbel(std::size_t n, std::size_t d, Rng& rng) {
  Matrix g(n, d);
  for (double& v : g.values()) {
    const double u = std::clamp(rng.uniform(), kUniformClamp, 1.0 - kUniformClamp);
    v = -std::log(-std::log(u));
  }
  return g;
}

/// Relaxed sample softmax((log pi + g) / tau) per row, recorded on pi's tape.
inline Var gumbel_softmax(const Var& pi, const Matrix& gumbel, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  if (!pi.value().same_shape(gumbel)) {
    throw DimensionError("gumbel noise " + gumbel.shape_string() + " does not match pi " +
                         pi.value().shape_string());
  }
  return row_softmax(scale(add_constant(log(pi), gumbel), 1.0 / tau));
}

/// Tape-free relaxed sample.
inline Matrix gumbel_softmax(const AdversarialDistribution& pi, const Matrix& gumbel, double tau) {
  Tape tape;
  return gumbel_softmax(tape.constant(pi.pi()), gumbel, tau).value();
}

/// Discrete sample using the given noise: per row argmax_j(log pi_ij + g_ij).
inline Features sample_hard(const AdversarialDistribution& pi, const Matrix& gumbel) {
  if (!pi.pi().same_shape(gumbel)) throw DimensionError("gumbel noise shape mismatch");
  Features out(pi.n());
  for (std::size_t r = 0; r < pi.n(); ++r) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < pi.d(); ++c) {
      const double s = std::log(pi.pi()(r, c)) + gumbel(r, c);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

/// Discrete sample; each row is categorical with probability pi_ij / sum_k pi_ik.
inline Features sample_hard(const AdversarialDistribution& pi, Rng& rng) {
  return sample_hard(pi, sample_gumbel(pi.n(), pi.d(), rng));
}

}  // namespace catadv
