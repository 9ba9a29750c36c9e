#include "cozad/confident.hpp"

#include "cozad/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cozad {

namespace {
constexpr double kTauFloor = 1e-8;
}

LossHistory::LossHistory(std::size_t window) : window_(window) {
  require(window >= 2, "LossHistory: window must hold at least two pairs");
}

void LossHistory::push(double train_loss, double val_loss) {
  train_.push_back(train_loss);
  val_.push_back(val_loss);
  if (train_.size() > window_) {
    train_.pop_front();
    val_.pop_front();
  }
}

double interpolated_quantile(std::span<const double> sorted, double p) {
  require(!sorted.empty(), "quantile of an empty sample");
  const double pos = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double iqr_threshold(std::span<const double> scores, double kappa) {
  require(!scores.empty(), "iqr_threshold: empty score vector");
  require(kappa >= 0.0, "iqr_threshold: kappa must be >= 0");
  std::vector<double> sorted(scores.begin(), scores.end());
  require(std::all_of(sorted.begin(), sorted.end(), [](double v) { return std::isfinite(v); }),
          "iqr_threshold: non-finite score");
  std::sort(sorted.begin(), sorted.end());
  const double q1 = interpolated_quantile(sorted, 0.25);
  const double q3 = interpolated_quantile(sorted, 0.75);
  const double tau = q3 + kappa * (q3 - q1);
  if (tau > 0.0) return tau;
  return std::max(std::abs(sorted.front()), std::abs(sorted.back())) + kTauFloor;
}

std::vector<double> confidence_weights(std::span<const double> scores, double tau) {
  require(tau > 0.0, "confidence_weights: tau must be > 0");
  std::vector<double> weights(scores.size());
  std::transform(scores.begin(), scores.end(), weights.begin(), [tau](double a) {
    return a > 0.0 ? std::min(1.0, tau / a) : 1.0;
  });
  return weights;
}

std::optional<Eigen::Matrix2d> loss_covariance(const LossHistory& history) {
  const std::size_t n = history.size();
  if (n < 2) return std::nullopt;
  const auto& t = history.train_losses();
  const auto& v = history.val_losses();
  double mean_t = 0.0, mean_v = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_t += t[i];
    mean_v += v[i];
  }
  mean_t /= static_cast<double>(n);
  mean_v /= static_cast<double>(n);
  double tt = 0.0, tv = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = t[i] - mean_t;
    const double dv = v[i] - mean_v;
    tt += dt * dt;
    tv += dt * dv;
    vv += dv * dv;
  }
  const double denom = static_cast<double>(n - 1);
  Eigen::Matrix2d sigma;
  sigma << tt / denom, tv / denom, tv / denom, vv / denom;
  return sigma;
}

double adaptive_lambda(const RegConfig& cfg, const Eigen::Matrix2d& sigma) {
  // Covariance determinants are >= 0; clamp rounding noise.
  const double det = std::max(0.0, sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(1, 0));
  return cfg.lambda0 * (1.0 + cfg.gamma * det);
}

double current_lambda(const RegConfig& cfg, const LossHistory& history) {
  const auto sigma = loss_covariance(history);
  return sigma ? adaptive_lambda(cfg, *sigma) : cfg.lambda0;
}

ConfidenceState refresh_confidence(const ConfidenceState& state, const ModelParams& params,
                                   const FeatureDataset& dataset, int epoch) {
  require(dataset.n_patches() > 0, "refresh_confidence: empty dataset");
  ConfidenceState next;
  next.kappa = state.kappa;
  next.scores.reserve(dataset.n_patches());
  for (std::size_t img = 0; img < dataset.n_images; ++img) {
    const Vector s = anomaly_score(params, dataset.image_patches(img));
    next.scores.insert(next.scores.end(), s.data(), s.data() + s.size());
  }
  next.tau = iqr_threshold(next.scores, next.kappa);
  next.weights = confidence_weights(next.scores, next.tau);
  next.last_refresh_epoch = epoch;
  return next;
}

}  // namespace cozad
