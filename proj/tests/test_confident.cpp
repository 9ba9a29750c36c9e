#include "cozad/confident.hpp"
#include "cozad/errors.hpp"
#include "oracles/oracles.hpp"
#include "support/gradcheck.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace cozad;

TEST(Iqr, HandExample) {
  const std::vector<double> s{0, 1, 2, 3, 4};
  EXPECT_EQ(iqr_threshold(s, 1.5), 6.0);
  EXPECT_EQ(oracles::iqr_threshold(s, 1.5), 6.0);
}

TEST(Iqr, KappaZeroIsThirdQuartile) {
  const std::vector<double> s{5.0, 0.5, 2.0, 9.0, 1.0, 3.5};
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(iqr_threshold(s, 0.0), interpolated_quantile(sorted, 0.75));
  EXPECT_EQ(iqr_threshold(s, 0.0), oracles::counting_quantile(s, 0.75));
}

TEST(Iqr, ConstantScores) {
  const std::vector<double> s(9, 0.7);
  EXPECT_EQ(iqr_threshold(s, 1.5), 0.7);
}

TEST(Iqr, NonPositiveFallback) {
  const std::vector<double> s{-3.0, -2.0, -1.5, -1.0};
  EXPECT_EQ(iqr_threshold(s, 1.5), 3.0 + 1e-8);
  EXPECT_THROW(iqr_threshold(std::vector<double>{}, 1.5), ContractError);
}

TEST(Iqr, MatchesOracleExactly) {
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_int_distribution<int> len(1, 60), coarse(0, 6);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> s(static_cast<std::size_t>(len(rng)));
    const bool ties = t % 3 == 0;
    for (double& v : s) v = ties ? coarse(rng) * 0.5 : n(rng);
    const double kappa = t % 4 * 0.5;
    EXPECT_EQ(iqr_threshold(s, kappa), oracles::iqr_threshold(s, kappa)) << "instance " << t;
  }
}

TEST(Weights, HandExamples) {
  const double tau = 2.5;
  const std::vector<double> a{tau, 2 * tau, tau / 10, -1.0, 0.0};
  const auto w = confidence_weights(a, tau);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 0.5);
  EXPECT_EQ(w[2], 1.0);
  EXPECT_EQ(w[3], 1.0);
  EXPECT_EQ(w[4], 1.0);
}

TEST(Weights, BoundedAndMonotone) {
  Rng rng(6);
  std::normal_distribution<double> n(1.0, 3.0);
  std::vector<double> s(200);
  for (double& v : s) v = n(rng);
  const double tau = iqr_threshold(s, 1.5);
  const auto w = confidence_weights(s, tau);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_GE(w[i], 0.0);
    EXPECT_LE(w[i], 1.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[i] >= s[j] && s[j] > 0) {
        EXPECT_LE(w[i], w[j]);
      }
    }
  }
}

TEST(Weights, ScaleInvariance) {
  const std::vector<double> s{0.5, 1.0, 1.5, 2.0, 8.0, 40.0};
  const double tau = iqr_threshold(s, 1.5);
  const auto w = confidence_weights(s, tau);
  for (double c : {2.0, 4.0, 0.5}) {
    std::vector<double> scaled(s);
    for (double& v : scaled) v *= c;
    const double tau_c = iqr_threshold(scaled, 1.5);
    EXPECT_EQ(tau_c, c * tau);
    EXPECT_EQ(confidence_weights(scaled, tau_c), w);
  }
}

TEST(Covariance, Examples) {
  LossHistory h;
  EXPECT_FALSE(loss_covariance(h).has_value());
  h.push(1, 2);
  EXPECT_FALSE(loss_covariance(h).has_value());
  h.push(1, 2);
  h.push(1, 2);
  EXPECT_EQ(*loss_covariance(h), Eigen::Matrix2d::Zero());

  LossHistory two;
  two.push(0, 0);
  two.push(2, 2);
  const auto sigma = *loss_covariance(two);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(sigma.data()[i], 2.0, 1e-10);
}

TEST(Covariance, EqualSequencesHaveZeroDeterminant) {
  LossHistory h;
  for (double v : {0.9, 0.7, 0.72, 0.6, 0.55}) h.push(v, v);
  const auto s = *loss_covariance(h);
  EXPECT_NEAR(s.determinant(), 0.0, 1e-15);
  EXPECT_EQ(current_lambda({}, h), 1e-5);
}

TEST(Covariance, MatchesNaiveOracleAndWindow) {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  LossHistory h(4);
  std::vector<double> tr, va;
  for (int i = 0; i < 9; ++i) {
    const double a = n(rng), b = n(rng);
    h.push(a, b);
    tr.push_back(a);
    va.push_back(b);
  }
  ASSERT_EQ(h.size(), 4u);
  const std::vector<double> t4(tr.end() - 4, tr.end()), v4(va.end() - 4, va.end());
  const auto naive = oracles::naive_covariance(t4, v4);
  const auto s = *loss_covariance(h);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(s(r, c), naive[static_cast<std::size_t>(2 * r + c)], 1e-14);
  }
  EXPECT_GE(s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0), -1e-12);
  EXPECT_GE(current_lambda({}, h), 1e-5);
}

TEST(Lambda, Examples) {
  const RegConfig cfg{1e-5, 1.0};
  EXPECT_EQ(adaptive_lambda(cfg, Eigen::Matrix2d::Zero()), 1e-5);
  Eigen::Matrix2d det3;
  det3 << 3, 0, 0, 1;
  EXPECT_NEAR(adaptive_lambda(cfg, det3), 4e-5, 1e-18);
  EXPECT_EQ(adaptive_lambda({1e-5, 0.0}, det3), 1e-5);
  Eigen::Matrix2d negative;
  negative << 1, 1.0000001, 1.0000001, 1;
  EXPECT_EQ(adaptive_lambda(cfg, negative), 1e-5);
}

TEST(Refresh, ConstantScoresGiveUnitWeights) {
  ModelParams p = init_params(8, 8, 8, 0);
  p.disc_w1.setZero();
  p.disc_w2.setZero();
  p.disc_b2 = -0.3;
  SynthConfig cfg;
  cfg.n_normal = 3;
  cfg.feat_dim = 8;
  const FeatureDataset d = synth_generate(cfg);
  const ConfidenceState s = refresh_confidence({}, p, d, 4);
  EXPECT_EQ(s.last_refresh_epoch, 4);
  EXPECT_EQ(s.tau, 0.3);
  ASSERT_EQ(s.weights.size(), d.n_patches());
  for (double w : s.weights) EXPECT_EQ(w, 1.0);
}

TEST(Refresh, FarOutlierIsDownWeighted) {
  // The discriminator is linear in the first adapted coordinate, so the
  // anomaly score of a patch is proportional to that coordinate.
  const int dim = 4;
  ModelParams p = init_params(dim, dim, 1, 0);
  p.disc_w1.setZero();
  p.disc_w1(0, 0) = 1.0;
  p.disc_b1.setZero();
  p.leaky_slope = 1.0;
  p.disc_w2 = Vector::Constant(1, -1.0);
  p.disc_b2 = 0.0;
  p.bn_running_var.setConstant(1.0 - kBatchNormEps);

  SynthConfig cfg;
  cfg.n_normal = 4;
  cfg.feat_dim = dim;
  cfg.intrinsic_dim = 0;
  cfg.contamination = 0.1;
  FeatureDataset d = synth_generate(cfg);
  Rng rng(1);
  std::uniform_real_distribution<float> u(0.9f, 1.1f);
  for (std::size_t i = 0; i < d.n_patches(); ++i) {
    d.features[i * dim] = u(rng);
  }
  d.features[17 * dim] = 100.0f;

  const ConfidenceState s = refresh_confidence({}, p, d, 0);
  const Vector scores = anomaly_score(p, d.all_patches());
  std::vector<double> sorted(scores.data(), scores.data() + scores.size());
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  EXPECT_GT(scores(17), 90.0 * median);
  EXPECT_LT(s.weights[17], 0.1);
  EXPECT_NEAR(s.weights[17], s.tau / scores(17), 1e-15);
  for (std::size_t i = 0; i < s.weights.size(); ++i) {
    if (scores(static_cast<Eigen::Index>(i)) <= median) {
      EXPECT_EQ(s.weights[i], 1.0);
    }
  }
}

TEST(Refresh, Deterministic) {
  const ModelParams p = test::random_params(64, 64, 64, 3);
  SynthConfig cfg;
  cfg.n_normal = 4;
  const FeatureDataset d = synth_generate(cfg);
  const auto a = refresh_confidence({}, p, d, 1);
  const auto b = refresh_confidence({}, p, d, 1);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.tau, b.tau);
}
