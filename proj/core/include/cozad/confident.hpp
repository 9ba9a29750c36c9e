#pragma once

#include "cozad/feature_io.hpp"
#include "cozad/model.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace cozad {

/// Per-patch confidence weights derived from anomaly scores.
struct ConfidenceState {
  std::vector<double> weights;
  /// Scores the weights were derived from (kept for the diagnostic dump).
  std::vector<double> scores;
  double tau = 0.0;
  double kappa = 1.5;
  int last_refresh_epoch = -1;
};

/// Sliding window of paired (train, validation) losses.
class LossHistory {
 public:
  explicit LossHistory(std::size_t window = 10);

  void push(double train_loss, double val_loss);
  std::size_t size() const { return train_.size(); }
  std::size_t window() const { return window_; }
  const std::deque<double>& train_losses() const { return train_; }
  const std::deque<double>& val_losses() const { return val_; }

 private:
  std::size_t window_;
  std::deque<double> train_;
  std::deque<double> val_;
};

struct RegConfig {
  double lambda0 = 1e-5;
  double gamma = 1.0;
};

/// Quantile by linear interpolation between order statistics at (n-1)*p.
/// `sorted` must be ascending.
double interpolated_quantile(std::span<const double> sorted, double p);

/// Q3 + kappa * (Q3 - Q1), falling back to max|score| + 1e-8 when that is not positive.
double iqr_threshold(std::span<const double> scores, double kappa);

/// min(1, tau / a) for a > 0, and 1 for a <= 0.
std::vector<double> confidence_weights(std::span<const double> scores, double tau);

/// Sample covariance of the paired loss sequences, or nullopt with fewer than two pairs.
std::optional<Eigen::Matrix2d> loss_covariance(const LossHistory& history);

/// lambda0 * (1 + gamma * max(0, det(sigma))).
double adaptive_lambda(const RegConfig& cfg, const Eigen::Matrix2d& sigma);

/// adaptive_lambda on the current history, or lambda0 if the history is too short.
double current_lambda(const RegConfig& cfg, const LossHistory& history);

/// Scores every patch with the eval-mode model and recomputes tau and all weights.
ConfidenceState refresh_confidence(const ConfidenceState& state, const ModelParams& params,
                                   const FeatureDataset& dataset, int epoch);

}  // namespace cozad
