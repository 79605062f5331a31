#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "catadv.hpp"

namespace catadv::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline Features random_features(std::size_t n, std::size_t d, Rng& rng) {
  Features f(n);
  for (int& v : f) v = static_cast<int>(rng.below(d));
  return f;
}

/// Unnormalized pi with entries in [lo, hi].
inline AdversarialDistribution random_pi(std::size_t n, std::size_t d, Rng& rng, double lo = 0.05,
                                         double hi = 1.0) {
  return {random_matrix(n, d, rng, lo, hi), kDefaultPiMin, kDefaultPiMax};
}

/// Row-stochastic n x d matrix.
inline Matrix random_relaxed(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m = random_matrix(n, d, rng, 0.05, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    for (double& v : m.row(r)) v /= s;
  }
  return m;
}

/// Clean model trained on a synthetic task.
struct TrainedSuite {
  CategoricalDataset data;
  Classifier model;
};

inline TrainedSuite trained_suite(std::size_t n, std::size_t d, std::size_t classes, std::size_t size,
                                  double noise, std::uint64_t seed, std::size_t epochs = 30) {
  TrainedSuite s;
  s.data = gen_synthetic(n, d, classes, size, noise, seed);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  s.model = train_clean(Classifier(n, d, classes, {kDefaultHidden}, seed), s.data.train(), tc);
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("catadv_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace catadv::testing
