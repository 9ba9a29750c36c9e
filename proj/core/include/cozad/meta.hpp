#pragma once

#include "cozad/confident.hpp"
#include "cozad/contrastive.hpp"
#include "cozad/feature_io.hpp"
#include "cozad/model.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cozad {

struct MetaConfig {
  /// Inner-loop (plain gradient descent) learning rate.
  double alpha = 1e-4;
  /// Outer Adam learning rates per parameter group.
  double beta_adaptor = 1e-4;
  double beta_disc = 2e-4;
  double weight_decay = 1e-5;
  std::size_t inner_steps = 1;
  std::size_t n_tasks = 4;
  double support_fraction = 0.5;
  std::size_t epochs = 40;
  /// Images per minibatch; a minibatch holds all their patches.
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Switches for the three training components. All off is the plain
/// discriminator loop.
struct Components {
  bool use_confident = true;
  bool use_meta = true;
  bool use_contrastive = true;
};

struct TrainOptions {
  MetaConfig meta;
  ContrastiveConfig contrastive;
  RegConfig reg;
  NoiseConfig noise;
  MarginConfig margin;
  Components components;
  double kappa = 1.5;
  std::size_t history_window = 10;
  /// 0 selects feat_dim (adapted) and adapted_dim (hidden).
  std::size_t adapted_dim = 0;
  std::size_t hidden_dim = 0;
  double leaky_slope = 0.2;

  void validate() const;
};

struct WeightSummary {
  double min = 1.0;
  double mean = 1.0;
  double fraction_below_one = 0.0;
  /// Ten equal-width bins over [0, 1].
  std::vector<std::size_t> histogram;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double det_sigma = 0.0;
  double lambda = 0.0;
  std::size_t updates = 0;
  WeightSummary weights;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::string checkpoint_path;
  /// Fully resolved configuration, echoed verbatim for reproducibility.
  std::string config_echo;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  ConfidenceState confidence;
  TrainReport report;
};

struct InnerResult {
  ModelParams adapted;
  /// Weighted margin loss on the support set before adaptation.
  double support_loss = 0.0;
};

/// `steps` plain gradient-descent steps on the weighted loss over the support
/// batch. The base parameters are not modified.
InnerResult inner_adapt(const ModelParams& params, const Matrix& support,
                        std::span<const double> weights, double reg_lambda, double alpha,
                        std::size_t steps, const NoiseConfig& noise, Rng& rng,
                        const MarginConfig& margin = {});

struct MetaObjectiveResult {
  double loss = 0.0;
  /// Weighted margin loss alone.
  double data_loss = 0.0;
  double contrastive_loss = 0.0;
  double lambda = 0.0;
  std::vector<double> weights;
  ParamGrads grads;
  BatchStats stats;
};

/// Meta-objective with every stochastic and data-dependent input fixed:
/// weighted margin loss + lambda * ||theta'||^2 + lambda_cont * contrastive.
/// `augmented` is ignored when use_contrastive is false.
MetaObjectiveResult meta_objective_fixed(const ModelParams& adapted, const Matrix& query,
                                         std::span<const double> weights, double reg_lambda,
                                         const Matrix& noise, const Matrix& augmented,
                                         const ContrastiveConfig& cont, bool use_contrastive,
                                         const MarginConfig& margin = {});

struct MetaObjectiveInputs {
  bool use_confident = true;
  bool use_contrastive = true;
  double kappa = 1.5;
  RegConfig reg;
  ContrastiveConfig contrastive;
  NoiseConfig noise;
  MarginConfig margin;
};

/// Recomputes query confidence weights with theta', takes lambda from the
/// history, draws the anomaly noise and augmentations, then evaluates
/// meta_objective_fixed. Weights and lambda are constants for the gradient.
MetaObjectiveResult meta_objective(const ModelParams& adapted, const Matrix& query,
                                   const LossHistory& history, const MetaObjectiveInputs& inputs,
                                   Rng& rng);

/// Averages the task gradients in task_id order and applies one Adam step.
void outer_update(ModelParams& params, AdamState& adam,
                  std::vector<std::pair<int, ParamGrads>> task_grads, const MetaConfig& cfg);

TrainResult train(const FeatureDataset& dataset, const TrainOptions& options);

/// Reference loop: shuffled minibatches, unit weights, lambda0 penalty and
/// one Adam step each. train() with every component off must match it bit for bit.
TrainResult train_plain(const FeatureDataset& dataset, const TrainOptions& options);

std::string report_to_json(const TrainReport& report);

}  // namespace cozad
