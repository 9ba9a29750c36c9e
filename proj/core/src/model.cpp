#include "cozad/model.hpp"

#include "cozad/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cozad {

namespace {

template <typename Derived>
std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> span_of(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Blocks>
bool blocks_equal(const Blocks& a, const Blocks& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].values.size() != b[i].values.size() ||
        !std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin())) {
      return false;
    }
  }
  return true;
}

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

// Block order is the checkpoint declaration order minus the running statistics.
std::array<ParamBlock, kTrainableBlocks> trainable_blocks(ModelParams& p) {
  return {{{"adaptor_weight", ParamGroup::kAdaptor, span_of(p.adaptor_weight)},
           {"disc_w1", ParamGroup::kDiscriminator, span_of(p.disc_w1)},
           {"disc_b1", ParamGroup::kDiscriminator, span_of(p.disc_b1)},
           {"bn_gamma", ParamGroup::kDiscriminator, span_of(p.bn_gamma)},
           {"bn_beta", ParamGroup::kDiscriminator, span_of(p.bn_beta)},
           {"disc_w2", ParamGroup::kDiscriminator, span_of(p.disc_w2)},
           {"disc_b2", ParamGroup::kDiscriminator, {&p.disc_b2, 1}}}};
}

std::array<ConstParamBlock, kTrainableBlocks> trainable_blocks(const ModelParams& p) {
  return {{{"adaptor_weight", ParamGroup::kAdaptor, span_of(p.adaptor_weight)},
           {"disc_w1", ParamGroup::kDiscriminator, span_of(p.disc_w1)},
           {"disc_b1", ParamGroup::kDiscriminator, span_of(p.disc_b1)},
           {"bn_gamma", ParamGroup::kDiscriminator, span_of(p.bn_gamma)},
           {"bn_beta", ParamGroup::kDiscriminator, span_of(p.bn_beta)},
           {"disc_w2", ParamGroup::kDiscriminator, span_of(p.disc_w2)},
           {"disc_b2", ParamGroup::kDiscriminator, {&p.disc_b2, 1}}}};
}

std::array<ParamBlock, kTrainableBlocks> trainable_blocks(ParamGrads& g) {
  return {{{"adaptor_weight", ParamGroup::kAdaptor, span_of(g.adaptor_weight)},
           {"disc_w1", ParamGroup::kDiscriminator, span_of(g.disc_w1)},
           {"disc_b1", ParamGroup::kDiscriminator, span_of(g.disc_b1)},
           {"bn_gamma", ParamGroup::kDiscriminator, span_of(g.bn_gamma)},
           {"bn_beta", ParamGroup::kDiscriminator, span_of(g.bn_beta)},
           {"disc_w2", ParamGroup::kDiscriminator, span_of(g.disc_w2)},
           {"disc_b2", ParamGroup::kDiscriminator, {&g.disc_b2, 1}}}};
}

std::array<ConstParamBlock, kTrainableBlocks> trainable_blocks(const ParamGrads& g) {
  return {{{"adaptor_weight", ParamGroup::kAdaptor, span_of(g.adaptor_weight)},
           {"disc_w1", ParamGroup::kDiscriminator, span_of(g.disc_w1)},
           {"disc_b1", ParamGroup::kDiscriminator, span_of(g.disc_b1)},
           {"bn_gamma", ParamGroup::kDiscriminator, span_of(g.bn_gamma)},
           {"bn_beta", ParamGroup::kDiscriminator, span_of(g.bn_beta)},
           {"disc_w2", ParamGroup::kDiscriminator, span_of(g.disc_w2)},
           {"disc_b2", ParamGroup::kDiscriminator, {&g.disc_b2, 1}}}};
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  for (const auto& block : trainable_blocks(params)) {
    out.insert(out.end(), block.values.begin(), block.values.end());
  }
  return out;
}

void unflatten(std::span<const double> flat, ModelParams& params) {
  std::size_t offset = 0;
  for (auto& block : trainable_blocks(params)) {
    require(offset + block.values.size() <= flat.size(), "unflatten: vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), block.values.size(),
                block.values.begin());
    offset += block.values.size();
  }
  require(offset == flat.size(), "unflatten: vector too long");
}

std::vector<double> flatten(const ParamGrads& grads) {
  std::vector<double> out;
  for (const auto& block : trainable_blocks(grads)) {
    out.insert(out.end(), block.values.begin(), block.values.end());
  }
  return out;
}

void ModelParams::validate() const {
  const auto d = adapted_dim();
  const auto h = hidden_dim();
  require(feat_dim() >= 1 && d >= 1 && h >= 1, "params: empty dimension");
  require(disc_w1.rows() == d, "params: disc_w1 rows must equal adapted_dim");
  require(disc_b1.size() == h && bn_gamma.size() == h && bn_beta.size() == h &&
              bn_running_mean.size() == h && bn_running_var.size() == h && disc_w2.size() == h,
          "params: hidden vectors must have hidden_dim entries");
  for (const auto& block : trainable_blocks(*this)) {
    require(std::all_of(block.values.begin(), block.values.end(),
                        [](double v) { return std::isfinite(v); }),
            std::string("params: non-finite entry in ") + std::string(block.name));
  }
  require(bn_running_mean.allFinite(), "params: non-finite running mean");
  require((bn_running_var.array() > 0.0).all() && bn_running_var.allFinite(),
          "params: running variance must be positive");
}

double ModelParams::squared_norm() const {
  double total = 0.0;
  for (const auto& block : trainable_blocks(*this)) {
    for (double v : block.values) total += v * v;
  }
  return total;
}

bool ModelParams::operator==(const ModelParams& other) const {
  return blocks_equal(trainable_blocks(*this), trainable_blocks(other)) &&
         bn_running_mean == other.bn_running_mean && bn_running_var == other.bn_running_var &&
         leaky_slope == other.leaky_slope;
}

ParamGrads ParamGrads::zeros_like(const ModelParams& p) {
  ParamGrads g;
  g.adaptor_weight = Matrix::Zero(p.adaptor_weight.rows(), p.adaptor_weight.cols());
  g.disc_w1 = Matrix::Zero(p.disc_w1.rows(), p.disc_w1.cols());
  g.disc_b1 = RowVector::Zero(p.disc_b1.size());
  g.bn_gamma = RowVector::Zero(p.bn_gamma.size());
  g.bn_beta = RowVector::Zero(p.bn_beta.size());
  g.disc_w2 = Vector::Zero(p.disc_w2.size());
  g.disc_b2 = 0.0;
  return g;
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) { return add_scaled(other, 1.0); }

ParamGrads& ParamGrads::operator*=(double scale) {
  for (auto& block : trainable_blocks(*this)) {
    for (double& v : block.values) v *= scale;
  }
  return *this;
}

ParamGrads& ParamGrads::add_scaled(const ParamGrads& other, double scale) {
  auto mine = trainable_blocks(*this);
  const auto theirs = trainable_blocks(other);
  for (std::size_t b = 0; b < mine.size(); ++b) {
    require(mine[b].values.size() == theirs[b].values.size(), "grads: shape mismatch");
    for (std::size_t i = 0; i < mine[b].values.size(); ++i) {
      mine[b].values[i] += scale * theirs[b].values[i];
    }
  }
  return *this;
}

double ParamGrads::squared_norm() const {
  double total = 0.0;
  for (const auto& block : trainable_blocks(*this)) {
    for (double v : block.values) total += v * v;
  }
  return total;
}

bool ParamGrads::all_finite() const {
  for (const auto& block : trainable_blocks(*this)) {
    for (double v : block.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ModelParams init_params(Eigen::Index feat_dim, Eigen::Index adapted_dim, Eigen::Index hidden_dim,
                        std::uint64_t seed) {
  require(feat_dim >= 1 && adapted_dim >= 1 && hidden_dim >= 1, "init_params: dims must be >= 1");
  Rng rng(seed);
  auto uniform = [&rng](double bound) {
    return std::uniform_real_distribution<double>(-bound, bound)(rng);
  };

  ModelParams p;
  p.adaptor_weight = Matrix::Identity(feat_dim, adapted_dim);
  if (feat_dim != adapted_dim) {
    const double scale = 0.1 / std::sqrt(static_cast<double>(feat_dim));
    for (Eigen::Index i = 0; i < p.adaptor_weight.size(); ++i) {
      p.adaptor_weight.data()[i] += uniform(scale);
    }
  }
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(adapted_dim));
  p.disc_w1.resize(adapted_dim, hidden_dim);
  for (Eigen::Index i = 0; i < p.disc_w1.size(); ++i) p.disc_w1.data()[i] = uniform(bound1);
  p.disc_b1.resize(hidden_dim);
  for (Eigen::Index i = 0; i < hidden_dim; ++i) p.disc_b1(i) = uniform(bound1);
  p.bn_gamma = RowVector::Ones(hidden_dim);
  p.bn_beta = RowVector::Zero(hidden_dim);
  p.bn_running_mean = RowVector::Zero(hidden_dim);
  p.bn_running_var = RowVector::Ones(hidden_dim);
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  p.disc_w2.resize(hidden_dim);
  for (Eigen::Index i = 0; i < hidden_dim; ++i) p.disc_w2(i) = uniform(bound2);
  p.disc_b2 = uniform(bound2);
  return p;
}

Matrix adaptor_forward(const ModelParams& params, const Matrix& features) {
  if (features.cols() != params.feat_dim()) {
    throw ContractError("adaptor_forward: input has " + std::to_string(features.cols()) +
                        " columns, adaptor expects " + std::to_string(params.feat_dim()));
  }
  return features * params.adaptor_weight;
}

Matrix adaptor_backward(const Matrix& features, const Matrix& d_adapted) {
  return features.transpose() * d_adapted;
}

Matrix synth_anomaly(const Matrix& adapted, const NoiseConfig& noise, Rng& rng) {
  require(noise.sigma > 0.0, "synth_anomaly: sigma must be > 0");
  return adapted + gaussian_matrix(adapted.rows(), adapted.cols(), noise.sigma, rng);
}

std::pair<Vector, DiscCache> discriminator_forward_pure(const ModelParams& params,
                                                        const Matrix& adapted, Mode mode) {
  require(adapted.cols() == params.adapted_dim(), "discriminator: input width mismatch");
  const auto n = adapted.rows();
  if (mode == Mode::kTrain && n < 2) {
    throw ContractError("discriminator: train mode needs a batch of at least 2 rows");
  }
  DiscCache cache;
  cache.mode = mode;
  cache.input = adapted;
  Matrix hidden = adapted * params.disc_w1;
  hidden.rowwise() += params.disc_b1;

  if (mode == Mode::kTrain) {
    cache.batch_mean = hidden.colwise().mean();
    hidden.rowwise() -= cache.batch_mean;
    cache.batch_var = hidden.array().square().colwise().sum() / static_cast<double>(n);
    cache.inv_std = (cache.batch_var.array() + kBatchNormEps).rsqrt();
  } else {
    hidden.rowwise() -= params.bn_running_mean;
    cache.inv_std = (params.bn_running_var.array() + kBatchNormEps).rsqrt();
  }
  cache.normalized = hidden.array().rowwise() * cache.inv_std.array();
  cache.pre_act = (cache.normalized.array().rowwise() * params.bn_gamma.array()).rowwise() +
                  params.bn_beta.array();
  const double slope = params.leaky_slope;
  cache.act = cache.pre_act.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  Vector scores = cache.act * params.disc_w2;
  scores.array() += params.disc_b2;
  return {std::move(scores), std::move(cache)};
}

BatchStats batch_stats(const DiscCache& cache) {
  require(cache.mode == Mode::kTrain, "batch_stats: cache is not from a train-mode pass");
  const auto n = static_cast<double>(cache.input.rows());
  return {cache.batch_mean, cache.batch_var * (n / (n - 1.0))};
}

void apply_batch_stats(ModelParams& params, const BatchStats& stats) {
  params.bn_running_mean =
      (1.0 - kBatchNormMomentum) * params.bn_running_mean + kBatchNormMomentum * stats.mean;
  params.bn_running_var =
      (1.0 - kBatchNormMomentum) * params.bn_running_var + kBatchNormMomentum * stats.var_unbiased;
}

std::pair<Vector, DiscCache> discriminator_forward(ModelParams& params, const Matrix& adapted,
                                                   Mode mode) {
  auto result = discriminator_forward_pure(params, adapted, mode);
  if (mode == Mode::kTrain) {
    apply_batch_stats(params, batch_stats(result.second));
  }
  return result;
}

Matrix discriminator_backward(const ModelParams& params, const DiscCache& cache,
                              const Vector& d_scores, ParamGrads& grads) {
  const auto n = cache.input.rows();
  require(d_scores.size() == n, "discriminator_backward: gradient length mismatch");

  grads.disc_w2 += cache.act.transpose() * d_scores;
  grads.disc_b2 += d_scores.sum();
  Matrix d_act = d_scores * params.disc_w2.transpose();
  const double slope = params.leaky_slope;
  Matrix d_pre = d_act.array() *
                 cache.pre_act.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }).array();
  grads.bn_gamma += (d_pre.array() * cache.normalized.array()).colwise().sum().matrix();
  grads.bn_beta += d_pre.colwise().sum();
  Matrix d_norm = d_pre.array().rowwise() * params.bn_gamma.array();

  Matrix d_hidden;
  if (cache.mode == Mode::kTrain) {
    // Batch statistics depend on every row, so each row's gradient picks up
    // the mean and variance terms.
    const double count = static_cast<double>(n);
    const RowVector sum_d = d_norm.colwise().sum();
    const RowVector sum_d_xhat = (d_norm.array() * cache.normalized.array()).colwise().sum();
    d_hidden = count * d_norm;
    d_hidden.rowwise() -= sum_d;
    d_hidden -= (cache.normalized.array().rowwise() * sum_d_xhat.array()).matrix();
    d_hidden = (d_hidden.array().rowwise() * (cache.inv_std.array() / count)).matrix();
  } else {
    d_hidden = d_norm.array().rowwise() * cache.inv_std.array();
  }
  grads.disc_w1 += cache.input.transpose() * d_hidden;
  grads.disc_b1 += d_hidden.colwise().sum();
  return d_hidden * params.disc_w1.transpose();
}

double margin_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                   double th_pos, double th_neg) {
  require(!pos_scores.empty() && pos_scores.size() == neg_scores.size(),
          "margin_loss: score vectors must be non-empty and of equal length");
  double total = 0.0;
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    total += std::max(0.0, th_pos - pos_scores[i]) + std::max(0.0, neg_scores[i] + th_neg);
  }
  return total / static_cast<double>(pos_scores.size());
}

Vector anomaly_score(const ModelParams& params, const Matrix& features) {
  auto [scores, cache] = discriminator_forward_pure(params, adaptor_forward(params, features),
                                                    Mode::kEval);
  return -scores;
}

LossResult loss_backward(const ModelParams& params, const Matrix& batch, const Matrix& noise,
                         std::span<const double> sample_weights, double reg_lambda,
                         const MarginConfig& margin) {
  const auto b = batch.rows();
  require(static_cast<Eigen::Index>(sample_weights.size()) == b,
          "loss_backward: one weight per sample required");
  require(reg_lambda >= 0.0, "loss_backward: reg_lambda must be >= 0");
  double weight_sum = 0.0;
  for (double w : sample_weights) {
    require(w >= 0.0 && w <= 1.0, "loss_backward: weights must lie in [0, 1]");
    weight_sum += w;
  }
  require(weight_sum > 0.0, "loss_backward: all sample weights are zero");

  LossResult result;
  result.adapted = adaptor_forward(params, batch);
  require(noise.rows() == b && noise.cols() == result.adapted.cols(),
          "loss_backward: noise shape mismatch");
  const Matrix negatives = result.adapted + noise;
  auto [scores, cache] =
      discriminator_forward_pure(params, stack_rows(result.adapted, negatives), Mode::kTrain);

  Vector d_scores = Vector::Zero(2 * b);
  double data = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double w = sample_weights[static_cast<std::size_t>(i)] / weight_sum;
    const double pos_gap = margin.th_pos - scores(i);
    const double neg_gap = scores(b + i) + margin.th_neg;
    if (pos_gap > 0.0) {
      data += w * pos_gap;
      d_scores(i) = -w;
    }
    if (neg_gap > 0.0) {
      data += w * neg_gap;
      d_scores(b + i) = w;
    }
  }

  result.grads = ParamGrads::zeros_like(params);
  const Matrix d_input = discriminator_backward(params, cache, d_scores, result.grads);
  const Matrix d_adapted = d_input.topRows(b) + d_input.bottomRows(b);
  result.grads.adaptor_weight += adaptor_backward(batch, d_adapted);

  result.data_loss = data;
  result.loss = data;
  if (reg_lambda > 0.0) {
    result.loss += reg_lambda * params.squared_norm();
    auto g = trainable_blocks(result.grads);
    const auto p = trainable_blocks(params);
    for (std::size_t blk = 0; blk < g.size(); ++blk) {
      for (std::size_t i = 0; i < g[blk].values.size(); ++i) {
        g[blk].values[i] += 2.0 * reg_lambda * p[blk].values[i];
      }
    }
  }
  result.stats = batch_stats(cache);
  return result;
}

LossResult loss_backward(const ModelParams& params, const Matrix& batch, const NoiseConfig& noise,
                         Rng& rng, std::span<const double> sample_weights, double reg_lambda,
                         const MarginConfig& margin) {
  require(noise.sigma > 0.0, "loss_backward: noise sigma must be > 0");
  const Matrix eps = gaussian_matrix(batch.rows(), params.adapted_dim(), noise.sigma, rng);
  return loss_backward(params, batch, eps, sample_weights, reg_lambda, margin);
}

}  // namespace cozad
