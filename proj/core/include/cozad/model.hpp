#pragma once

#include "cozad/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace cozad {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Optimizer parameter groups; each has its own learning rate.
enum class ParamGroup { kAdaptor, kDiscriminator };

/// Bias-free feature adaptor followed by the discriminator
/// linear -> batchnorm -> LeakyReLU -> linear.
struct ModelParams {
  Matrix adaptor_weight;  // [feat_dim x adapted_dim]
  Matrix disc_w1;         // [adapted_dim x hidden_dim]
  RowVector disc_b1;      // [hidden_dim]
  RowVector bn_gamma;
  RowVector bn_beta;
  RowVector bn_running_mean;
  RowVector bn_running_var;
  Vector disc_w2;  // [hidden_dim]
  double disc_b2 = 0.0;
  double leaky_slope = 0.2;

  Eigen::Index feat_dim() const { return adaptor_weight.rows(); }
  Eigen::Index adapted_dim() const { return adaptor_weight.cols(); }
  Eigen::Index hidden_dim() const { return disc_w1.cols(); }

  void validate() const;
  /// Sum of squares over trainable parameters (running statistics excluded).
  double squared_norm() const;

  bool operator==(const ModelParams& other) const;
};

/// Gradient carrier with the same trainable layout as ModelParams.
struct ParamGrads {
  Matrix adaptor_weight;
  Matrix disc_w1;
  RowVector disc_b1;
  RowVector bn_gamma;
  RowVector bn_beta;
  Vector disc_w2;
  double disc_b2 = 0.0;

  static ParamGrads zeros_like(const ModelParams& params);

  ParamGrads& operator+=(const ParamGrads& other);
  ParamGrads& operator*=(double scale);
  /// this += scale * other
  ParamGrads& add_scaled(const ParamGrads& other, double scale);
  double squared_norm() const;
  bool all_finite() const;
};

/// Named view over one trainable tensor.
struct ParamBlock {
  std::string_view name;
  ParamGroup group;
  std::span<double> values;
};

struct ConstParamBlock {
  std::string_view name;
  ParamGroup group;
  std::span<const double> values;
};

inline constexpr std::size_t kTrainableBlocks = 7;

/// Trainable tensors in declaration order. ModelParams and ParamGrads yield
/// the same sequence of names and sizes.
std::array<ParamBlock, kTrainableBlocks> trainable_blocks(ModelParams& params);
std::array<ConstParamBlock, kTrainableBlocks> trainable_blocks(const ModelParams& params);
std::array<ParamBlock, kTrainableBlocks> trainable_blocks(ParamGrads& grads);
std::array<ConstParamBlock, kTrainableBlocks> trainable_blocks(const ParamGrads& grads);

/// Concatenation of trainable blocks, and its inverse.
std::vector<double> flatten(const ModelParams& params);
void unflatten(std::span<const double> flat, ModelParams& params);
std::vector<double> flatten(const ParamGrads& grads);

/// Synthetic-anomaly noise.
struct NoiseConfig {
  double sigma = 0.015;
};

struct MarginConfig {
  double th_pos = 0.5;
  double th_neg = 0.5;
};

enum class Mode { kTrain, kEval };

/// Intermediate activations kept for the backward pass.
struct DiscCache {
  Mode mode = Mode::kEval;
  Matrix input;       // [N x adapted_dim]
  Matrix normalized;  // batchnorm output before scale/shift
  Matrix pre_act;     // after scale/shift
  Matrix act;         // after LeakyReLU
  RowVector batch_mean;
  RowVector batch_var;  // biased
  RowVector inv_std;
};

/// Batch statistics produced by a train-mode forward, to be folded into the
/// running statistics with apply_batch_stats.
struct BatchStats {
  RowVector mean;
  RowVector var_unbiased;
};

ModelParams init_params(Eigen::Index feat_dim, Eigen::Index adapted_dim, Eigen::Index hidden_dim,
                        std::uint64_t seed);

Matrix adaptor_forward(const ModelParams& params, const Matrix& features);
/// Gradient of the adaptor weight given the gradient at its output.
Matrix adaptor_backward(const Matrix& features, const Matrix& d_adapted);

/// adapted + N(0, sigma^2) per element.
Matrix synth_anomaly(const Matrix& adapted, const NoiseConfig& noise, Rng& rng);

/// Scores each row. Train mode uses batch statistics and updates the running
/// statistics of `params`; eval mode uses running statistics and leaves
/// `params` untouched.
std::pair<Vector, DiscCache> discriminator_forward(ModelParams& params, const Matrix& adapted,
                                                   Mode mode);
/// Pure variant: train mode computes batch statistics without storing them.
std::pair<Vector, DiscCache> discriminator_forward_pure(const ModelParams& params,
                                                        const Matrix& adapted, Mode mode);
BatchStats batch_stats(const DiscCache& cache);
void apply_batch_stats(ModelParams& params, const BatchStats& stats);

/// Accumulates discriminator gradients into `grads` and returns d(scores)/d(input).
Matrix discriminator_backward(const ModelParams& params, const DiscCache& cache,
                              const Vector& d_scores, ParamGrads& grads);

/// Mean over samples of max(0, th_pos - pos) + max(0, neg + th_neg).
double margin_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                   double th_pos = 0.5, double th_neg = 0.5);

/// -D(G(x)) per row with the eval-mode discriminator; higher is more anomalous.
Vector anomaly_score(const ModelParams& params, const Matrix& features);

struct LossResult {
  double loss = 0.0;
  /// Weighted margin term alone, without the L2 penalty.
  double data_loss = 0.0;
  ParamGrads grads;
  BatchStats stats;
  /// Adaptor outputs of the clean batch, reused by the contrastive term.
  Matrix adapted;
};

/// Confidence-weighted margin loss plus reg_lambda * ||theta||^2 and its exact
/// gradient. The positives are G(batch) and the negatives G(batch) + noise;
/// both pass through one train-mode batchnorm. The weighted sum is divided by
/// the total weight.
LossResult loss_backward(const ModelParams& params, const Matrix& batch, const Matrix& noise,
                         std::span<const double> sample_weights, double reg_lambda,
                         const MarginConfig& margin = {});
LossResult loss_backward(const ModelParams& params, const Matrix& batch, const NoiseConfig& noise,
                         Rng& rng, std::span<const double> sample_weights, double reg_lambda,
                         const MarginConfig& margin = {});

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  ParamGrads first_moment;
  ParamGrads second_moment;

  static AdamState for_params(const ModelParams& params);
  bool operator==(const AdamState& other) const;
};

/// Adam with one learning rate per parameter group. weight_decay is added to
/// the gradient as an L2 term before the moment updates.
void adam_step(AdamState& state, ModelParams& params, const ParamGrads& grads, double lr_adaptor,
               double lr_disc, double weight_decay);

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cozad
