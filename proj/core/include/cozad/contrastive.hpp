#pragma once

#include "cozad/model.hpp"
#include "cozad/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace cozad {

struct ContrastiveConfig {
  double temperature = 0.07;
  std::size_t k_nn = 5;
  /// Std of the Gaussian augmentation that produces each anchor's own positive.
  double sigma_aug = 0.01;
  std::size_t chunk_size = 256;
  double lambda_cont = 1.0;

  void validate() const;
};

/// u.v / (|u| |v|); throws ContractError on a zero vector.
double cosine_sim(std::span<const double> u, std::span<const double> v);

Matrix augment(const Matrix& embeddings, double sigma_aug, Rng& rng);

/// For each row, the k other rows with the highest cosine similarity,
/// most similar first; ties go to the lower index.
std::vector<std::vector<std::size_t>> knn_positives(const Matrix& embeddings, std::size_t k);

struct ContrastiveResult {
  double loss = 0.0;
  /// d(loss)/d(embeddings), including the path through the augmented views.
  Matrix grad;
  /// Largest similarity matrix materialized, in entries.
  std::size_t peak_similarity_entries = 0;
};

/// Multi-positive InfoNCE over the whole batch. Positives of anchor i are its
/// augmented view and its k nearest neighbours; negatives are every other row.
ContrastiveResult contrastive_loss(const Matrix& embeddings, const ContrastiveConfig& config,
                                   Rng& rng);
/// Same, with the augmented views supplied by the caller.
ContrastiveResult contrastive_loss(const Matrix& embeddings, const Matrix& augmented,
                                   const ContrastiveConfig& config);

/// Anchor-averaged loss where each anchor only sees rows of its own chunk of
/// chunk_size consecutive rows. A trailing chunk of a single row is merged into
/// the previous chunk, and k is capped at chunk rows - 1.
ContrastiveResult batch_contrastive(const Matrix& embeddings, const ContrastiveConfig& config,
                                    Rng& rng);
ContrastiveResult batch_contrastive(const Matrix& embeddings, const Matrix& augmented,
                                    const ContrastiveConfig& config);

struct LossAndGrads {
  double loss = 0.0;
  ParamGrads grads;
};

/// Maps embedding gradients of a contrastive loss on adaptor outputs back to
/// the adaptor weight.
LossAndGrads contrastive_param_grads(const ModelParams& params, const Matrix& features,
                                     const ContrastiveResult& result);

/// scl + lambda_cont * cont, for the value and every gradient entry.
LossAndGrads total_loss(const LossAndGrads& scl, const LossAndGrads& cont, double lambda_cont);

}  // namespace cozad
