#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace catadv {
namespace {

using testing::random_matrix;
using testing::random_pi;

TEST(SampleGumbel, MeanIsEulerMascheroni) {
  Rng rng(1);
  const Matrix g = sample_gumbel(1000, 1000, rng);
  EXPECT_NEAR(g.sum() / static_cast<double>(g.size()), 0.5772156649, 0.01);
}

TEST(SampleGumbel, FiniteEverywhereAndDeterministic) {
  Rng a(2);
  Rng b(2);
  const Matrix ga = sample_gumbel(50, 40, a);
  EXPECT_TRUE(ga.all_finite());
  EXPECT_EQ(ga, sample_gumbel(50, 40, b));
  // Extreme uniforms map to finite values after clamping.
  EXPECT_TRUE(std::isfinite(-std::log(-std::log(kUniformClamp))));
  EXPECT_TRUE(std::isfinite(-std::log(-std::log(1.0 - kUniformClamp))));
}

TEST(GumbelSoftmax, UniformPiZeroNoiseGivesUniformRows) {
  const auto pi = AdversarialDistribution::uniform(3, 4, 0.5);
  const Matrix x = gumbel_softmax(pi, Matrix(3, 4), 0.7);
  for (double v : x.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(GumbelSoftmax, LowTemperatureApproachesHardSample) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pi = random_pi(4, 5, rng);
    const Matrix g = sample_gumbel(4, 5, rng);
    const Matrix x = gumbel_softmax(pi, g, 1e-4);
    const Features hard = sample_hard(pi, g);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_GE(x(r, static_cast<std::size_t>(hard[r])), 1.0 - 1e-6);
  }
}

TEST(GumbelSoftmax, NonPositiveTemperatureIsContractError) {
  const auto pi = AdversarialDistribution::uniform(2, 2, 0.5);
  EXPECT_THROW(gumbel_softmax(pi, Matrix(2, 2), 0.0), ContractError);
  EXPECT_THROW(gumbel_softmax(pi, Matrix(2, 2), -1.0), ContractError);
}

TEST(GumbelSoftmax, NoiseShapeMismatchIsDimensionError) {
  const auto pi = AdversarialDistribution::uniform(2, 3, 0.5);
  EXPECT_THROW(gumbel_softmax(pi, Matrix(3, 2), 1.0), DimensionError);
}

TEST(GumbelSoftmax, GradientWithRespectToPiMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pi = random_pi(3, 4, rng);
    const Matrix g = sample_gumbel(3, 4, rng);
    const Matrix coef = random_matrix(3, 4, rng);
    const double tau = rng.uniform(0.3, 2.0);
    auto r = grad_check([&](Tape& t, Var p) { return sum(mul(gumbel_softmax(p, g, tau), t.constant(coef))); },
                        pi.pi());
    EXPECT_LT(r.max_relative_error, 1e-4);
  }
}

TEST(GumbelSoftmax, RowsSumToOneAndArgmaxMatchesHardSample) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pi = random_pi(3, 6, rng, 1e-4, 1.0);
    const Matrix g = sample_gumbel(3, 6, rng);
    const double tau = std::exp(rng.uniform(std::log(0.01), std::log(10.0)));
    const Matrix x = gumbel_softmax(pi, g, tau);
    EXPECT_EQ(argmax_rows(x), sample_hard(pi, g));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : x.row(r)) {
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(SampleHard, ConcentratedPiPicksHeavyIndex) {
  const Features heavy{2, 0, 1};
  const auto pi = AdversarialDistribution::concentrated(heavy, 3, 1e3, kDefaultPiMin, 1e3);
  Rng rng(6);
  for (int s = 0; s < 1000; ++s) EXPECT_EQ(sample_hard(pi, rng), heavy);
}

TEST(SampleHard, SingleCategoryAlwaysZero) {
  const auto pi = AdversarialDistribution::uniform(1, 1, 0.3);
  Rng rng(7);
  for (int s = 0; s < 100; ++s) EXPECT_EQ(sample_hard(pi, rng), Features{0});
}

TEST(SampleHard, FrequenciesWithinThreeSigmaOfNormalizedPi) {
  Rng rng(8);
  const auto pi = random_pi(2, 4, rng, 0.05, 1.0);
  const Matrix p = pi.normalized();
  const int draws = 100000;
  Matrix counts(2, 4);
  for (int s = 0; s < draws; ++s) {
    const Features f = sample_hard(pi, rng);
    for (std::size_t i = 0; i < 2; ++i) counts(i, static_cast<std::size_t>(f[i])) += 1.0;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double q = p(i, j);
      const double sigma = std::sqrt(q * (1.0 - q) / draws);
      EXPECT_NEAR(counts(i, j) / draws, q, 3.0 * sigma);
    }
  }
}

// Pearson chi-square against normalized pi at significance 0.01.
TEST(SampleHard, ChiSquareGoodnessOfFitOnRandomPi) {
  // Upper 1% quantiles of chi-square with k degrees of freedom.
  const double critical[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086};
  Rng rng(9);
  int rejections = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.below(5);  // 2..6 categories
    const auto pi = random_pi(1, d, rng, 0.05, 1.0);
    const Matrix p = pi.normalized();
    const int draws = 20000;
    std::vector<double> counts(d, 0.0);
    for (int s = 0; s < draws; ++s) counts[static_cast<std::size_t>(sample_hard(pi, rng)[0])] += 1.0;
    double chi2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double expected = draws * p(0, j);
      chi2 += (counts[j] - expected) * (counts[j] - expected) / expected;
    }
    rejections += chi2 > critical[d - 1] ? 1 : 0;
  }
  // At the 1% level, more than two rejections out of twenty has probability < 0.1%.
  EXPECT_LE(rejections, 2);
}

TEST(AdversarialDistribution, RejectsEntriesOutsideBounds) {
  EXPECT_THROW(AdversarialDistribution(Matrix(2, 2, 0.0)), ContractError);
  EXPECT_THROW(AdversarialDistribution(Matrix(2, 2, 2.0), kDefaultPiMin, 1.0), ContractError);
  EXPECT_THROW(AdversarialDistribution{Matrix{}}, DimensionError);
  EXPECT_NO_THROW(AdversarialDistribution(Matrix(2, 2, 1.0), kDefaultPiMin, 1.0));
}

TEST(AdversarialDistribution, NormalizedRowsSumToOne) {
  Rng rng(10);
  const auto pi = random_pi(5, 3, rng);
  const Matrix p = pi.normalized();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

}  // namespace
}  // namespace catadv
