#include "cozad/contrastive.hpp"

#include "cozad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cozad {

namespace {

Matrix normalize_rows(const Matrix& x, Vector& norms, const char* what) {
  norms = x.rowwise().norm();
  if ((norms.array() <= 0.0).any()) {
    throw ContractError(std::string("contrastive: zero-norm row in ") + what);
  }
  return x.array().colwise() / norms.array();
}

/// d/dx of a gradient taken w.r.t. x/|x|.
Matrix through_normalization(const Matrix& unit, const Vector& norms, const Matrix& d_unit) {
  const Vector radial = (unit.array() * d_unit.array()).rowwise().sum();
  Matrix out = d_unit - (unit.array().colwise() * radial.array()).matrix();
  return out.array().colwise() / norms.array();
}

std::vector<std::size_t> top_k_row(const Matrix& sims, Eigen::Index row, std::size_t k) {
  std::vector<std::size_t> candidates;
  candidates.reserve(static_cast<std::size_t>(sims.cols()));
  for (Eigen::Index j = 0; j < sims.cols(); ++j) {
    if (j != row) candidates.push_back(static_cast<std::size_t>(j));
  }
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), [&](std::size_t a, std::size_t b) {
                      const double sa = sims(row, static_cast<Eigen::Index>(a));
                      const double sb = sims(row, static_cast<Eigen::Index>(b));
                      return sa != sb ? sa > sb : a < b;
                    });
  candidates.resize(k);
  return candidates;
}

struct ChunkResult {
  double loss_sum = 0.0;
  Matrix grad;
};

/// Summed anchor losses over one chunk; gradients are scaled by `grad_scale`.
ChunkResult chunk_loss(const Matrix& x, const Matrix& x_aug, std::size_t k, double temperature,
                       double grad_scale) {
  const Eigen::Index n = x.rows();
  Vector norms, aug_norms;
  const Matrix unit = normalize_rows(x, norms, "embeddings");
  const Matrix unit_aug = normalize_rows(x_aug, aug_norms, "augmented views");
  const Matrix sims = unit * unit.transpose();
  const Vector aug_sims = (unit.array() * unit_aug.array()).rowwise().sum();

  Matrix d_sims = Matrix::Zero(n, n);
  Vector d_aug = Vector::Zero(n);
  std::vector<char> is_pos(static_cast<std::size_t>(n));
  ChunkResult out;
  const double inv_t = 1.0 / temperature;

  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(is_pos.begin(), is_pos.end(), 0);
    for (std::size_t j : top_k_row(sims, i, k)) is_pos[j] = 1;

    double max_logit = aug_sims(i) * inv_t;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) max_logit = std::max(max_logit, sims(i, j) * inv_t);
    }
    const double e_aug = std::exp(aug_sims(i) * inv_t - max_logit);
    double pos_sum = e_aug;
    double neg_sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double e = std::exp(sims(i, j) * inv_t - max_logit);
      (is_pos[static_cast<std::size_t>(j)] ? pos_sum : neg_sum) += e;
    }
    const double all_sum = pos_sum + neg_sum;
    out.loss_sum += std::log(all_sum) - std::log(pos_sum);

    // d(loss_i)/d(logit_j) = softmax over all terms - softmax over positives
    d_aug(i) = grad_scale * inv_t * (e_aug / all_sum - e_aug / pos_sum);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double e = std::exp(sims(i, j) * inv_t - max_logit);
      const double pos_part = is_pos[static_cast<std::size_t>(j)] ? e / pos_sum : 0.0;
      d_sims(i, j) = grad_scale * inv_t * (e / all_sum - pos_part);
    }
  }

  // sims = U U^T, so dU = (dS + dS^T) U; aug_sims_i = u_i . ua_i.
  Matrix d_unit = (d_sims + d_sims.transpose()) * unit;
  d_unit += (unit_aug.array().colwise() * d_aug.array()).matrix();
  const Matrix d_unit_aug = unit.array().colwise() * d_aug.array();
  // The augmented view is x + noise, so its gradient also lands on x.
  out.grad = through_normalization(unit, norms, d_unit) +
             through_normalization(unit_aug, aug_norms, d_unit_aug);
  return out;
}

}  // namespace

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("contrastive: temperature must be > 0");
  if (!(sigma_aug > 0.0)) throw ConfigError("contrastive: sigma_aug must be > 0");
  if (chunk_size < 2) throw ConfigError("contrastive: chunk_size must be >= 2");
  if (!(lambda_cont >= 0.0)) throw ConfigError("contrastive: lambda_cont must be >= 0");
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "cosine_sim: length mismatch");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  require(uu > 0.0 && vv > 0.0, "cosine_sim: zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

Matrix augment(const Matrix& embeddings, double sigma_aug, Rng& rng) {
  require(sigma_aug > 0.0, "augment: sigma_aug must be > 0");
  return embeddings + gaussian_matrix(embeddings.rows(), embeddings.cols(), sigma_aug, rng);
}

std::vector<std::vector<std::size_t>> knn_positives(const Matrix& embeddings, std::size_t k) {
  if (k >= static_cast<std::size_t>(embeddings.rows())) {
    throw ConfigError("knn_positives: k=" + std::to_string(k) + " needs more than " +
                      std::to_string(embeddings.rows()) + " rows");
  }
  Vector norms;
  const Matrix unit = normalize_rows(embeddings, norms, "embeddings");
  const Matrix sims = unit * unit.transpose();
  std::vector<std::vector<std::size_t>> out;
  out.reserve(static_cast<std::size_t>(embeddings.rows()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) out.push_back(top_k_row(sims, i, k));
  return out;
}

ContrastiveResult contrastive_loss(const Matrix& embeddings, const Matrix& augmented,
                                   const ContrastiveConfig& config) {
  config.validate();
  const Eigen::Index n = embeddings.rows();
  require(n >= 2, "contrastive_loss: batch needs at least 2 rows");
  require(augmented.rows() == n && augmented.cols() == embeddings.cols(),
          "contrastive_loss: augmented views must match embeddings");
  if (config.k_nn >= static_cast<std::size_t>(n)) {
    throw ConfigError("contrastive_loss: k_nn must be smaller than the batch");
  }
  const double scale = 1.0 / static_cast<double>(n);
  auto chunk = chunk_loss(embeddings, augmented, config.k_nn, config.temperature, scale);
  return {chunk.loss_sum * scale, std::move(chunk.grad), static_cast<std::size_t>(n * n)};
}

ContrastiveResult contrastive_loss(const Matrix& embeddings, const ContrastiveConfig& config,
                                   Rng& rng) {
  config.validate();
  return contrastive_loss(embeddings, augment(embeddings, config.sigma_aug, rng), config);
}

ContrastiveResult batch_contrastive(const Matrix& embeddings, const Matrix& augmented,
                                    const ContrastiveConfig& config) {
  config.validate();
  const Eigen::Index n = embeddings.rows();
  require(n >= 2, "batch_contrastive: batch needs at least 2 rows");
  require(augmented.rows() == n && augmented.cols() == embeddings.cols(),
          "batch_contrastive: augmented views must match embeddings");

  const auto chunk = static_cast<Eigen::Index>(config.chunk_size);
  const double scale = 1.0 / static_cast<double>(n);
  ContrastiveResult result;
  result.grad = Matrix::Zero(n, embeddings.cols());
  double loss_sum = 0.0;
  for (Eigen::Index begin = 0; begin < n;) {
    Eigen::Index rows = std::min(chunk, n - begin);
    if (n - begin - rows == 1) rows += 1;
    const auto k = std::min(config.k_nn, static_cast<std::size_t>(rows - 1));
    auto part = chunk_loss(embeddings.middleRows(begin, rows), augmented.middleRows(begin, rows),
                           k, config.temperature, scale);
    loss_sum += part.loss_sum;
    result.grad.middleRows(begin, rows) = part.grad;
    result.peak_similarity_entries =
        std::max(result.peak_similarity_entries, static_cast<std::size_t>(rows * rows));
    begin += rows;
  }
  result.loss = loss_sum * scale;
  return result;
}

ContrastiveResult batch_contrastive(const Matrix& embeddings, const ContrastiveConfig& config,
                                    Rng& rng) {
  config.validate();
  return batch_contrastive(embeddings, augment(embeddings, config.sigma_aug, rng), config);
}

LossAndGrads contrastive_param_grads(const ModelParams& params, const Matrix& features,
                                     const ContrastiveResult& result) {
  LossAndGrads out{result.loss, ParamGrads::zeros_like(params)};
  out.grads.adaptor_weight = adaptor_backward(features, result.grad);
  return out;
}

LossAndGrads total_loss(const LossAndGrads& scl, const LossAndGrads& cont, double lambda_cont) {
  LossAndGrads out = scl;
  out.loss += lambda_cont * cont.loss;
  out.grads.add_scaled(cont.grads, lambda_cont);
  return out;
}

}  // namespace cozad
