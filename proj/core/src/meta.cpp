#include "cozad/meta.hpp"

#include "cozad/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cozad {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kNoiseStream = 7;
constexpr std::uint64_t kTaskStream = 1000;
constexpr std::uint64_t kShuffleStream = 2000;

ModelParams initial_params(const FeatureDataset& dataset, const TrainOptions& options) {
  const auto feat = static_cast<Eigen::Index>(dataset.feat_dim);
  const auto adapted =
      options.adapted_dim ? static_cast<Eigen::Index>(options.adapted_dim) : feat;
  const auto hidden = options.hidden_dim ? static_cast<Eigen::Index>(options.hidden_dim) : adapted;
  ModelParams params = init_params(feat, adapted, hidden, derive_seed(options.meta.seed, kInitStream));
  params.leaky_slope = options.leaky_slope;
  return params;
}

void check_training_data(const FeatureDataset& dataset) {
  dataset.validate();
  if (dataset.has_anomaly_labels()) {
    throw ContractError("train: training data contains labeled anomalies");
  }
  require(dataset.n_patches() >= 2, "train: need at least two patches");
}

std::vector<std::size_t> shuffled_patches(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  return order;
}

std::vector<double> gather_weights(const std::vector<double>& all,
                                   std::span<const std::size_t> indices) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = all[indices[i]];
  return out;
}

WeightSummary summarize(const std::vector<double>& weights) {
  WeightSummary s;
  s.histogram.assign(10, 0);
  if (weights.empty()) return s;
  s.min = *std::min_element(weights.begin(), weights.end());
  double sum = 0.0;
  std::size_t below = 0;
  for (double w : weights) {
    sum += w;
    if (w < 1.0) ++below;
    s.histogram[std::min<std::size_t>(9, static_cast<std::size_t>(w * 10.0))] += 1;
  }
  s.mean = sum / static_cast<double>(weights.size());
  s.fraction_below_one = static_cast<double>(below) / static_cast<double>(weights.size());
  return s;
}

/// Slice `part` of `count` near-equal contiguous slices of `items`.
std::span<const std::size_t> slice(const std::vector<std::size_t>& items, std::size_t part,
                                   std::size_t count) {
  const std::size_t begin = part * items.size() / count;
  const std::size_t end = (part + 1) * items.size() / count;
  return std::span<const std::size_t>(items).subspan(begin, end - begin);
}

TrainResult train_epochwise(const FeatureDataset& dataset, const TrainOptions& options);
TrainResult train_meta(const FeatureDataset& dataset, const TrainOptions& options);

}  // namespace

void MetaConfig::validate() const {
  if (!(alpha > 0.0) || !(beta_adaptor > 0.0) || !(beta_disc > 0.0)) {
    throw ConfigError("meta: learning rates must be > 0");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("meta: weight_decay must be >= 0");
  if (inner_steps < 1) throw ConfigError("meta: inner_steps must be >= 1");
  if (n_tasks < 1) throw ConfigError("meta: n_tasks must be >= 1");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("meta: support_fraction must lie in (0, 1)");
  }
  if (epochs < 1) throw ConfigError("meta: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("meta: batch_size must be >= 1");
}

void TrainOptions::validate() const {
  meta.validate();
  contrastive.validate();
  if (!(reg.lambda0 >= 0.0) || !(reg.gamma >= 0.0)) {
    throw ConfigError("reg: lambda0 and gamma must be >= 0");
  }
  if (!(noise.sigma > 0.0)) throw ConfigError("noise: sigma must be > 0");
  if (!(kappa >= 0.0)) throw ConfigError("confident: kappa must be >= 0");
  if (history_window < 2) throw ConfigError("confident: history_window must be >= 2");
}

InnerResult inner_adapt(const ModelParams& params, const Matrix& support,
                        std::span<const double> weights, double reg_lambda, double alpha,
                        std::size_t steps, const NoiseConfig& noise, Rng& rng,
                        const MarginConfig& margin) {
  require(support.rows() > 0, "inner_adapt: empty support set");
  require(alpha >= 0.0, "inner_adapt: alpha must be >= 0");
  InnerResult out{params, 0.0};
  for (std::size_t step = 0; step < steps; ++step) {
    const LossResult r = loss_backward(out.adapted, support, noise, rng, weights, reg_lambda, margin);
    if (step == 0) out.support_loss = r.data_loss;
    auto p = trainable_blocks(out.adapted);
    const auto g = trainable_blocks(r.grads);
    for (std::size_t b = 0; b < p.size(); ++b) {
      for (std::size_t i = 0; i < p[b].values.size(); ++i) {
        p[b].values[i] -= alpha * g[b].values[i];
      }
    }
    apply_batch_stats(out.adapted, r.stats);
  }
  return out;
}

MetaObjectiveResult meta_objective_fixed(const ModelParams& adapted, const Matrix& query,
                                         std::span<const double> weights, double reg_lambda,
                                         const Matrix& noise, const Matrix& augmented,
                                         const ContrastiveConfig& cont, bool use_contrastive,
                                         const MarginConfig& margin) {
  require(query.rows() > 0, "meta_objective: empty query set");
  LossResult scl = loss_backward(adapted, query, noise, weights, reg_lambda, margin);
  MetaObjectiveResult out;
  out.data_loss = scl.data_loss;
  out.lambda = reg_lambda;
  out.weights.assign(weights.begin(), weights.end());
  out.stats = std::move(scl.stats);
  LossAndGrads total{scl.loss, std::move(scl.grads)};
  if (use_contrastive && cont.lambda_cont > 0.0) {
    const ContrastiveResult c = batch_contrastive(scl.adapted, augmented, cont);
    out.contrastive_loss = c.loss;
    total = total_loss(total, contrastive_param_grads(adapted, query, c), cont.lambda_cont);
  }
  out.loss = total.loss;
  out.grads = std::move(total.grads);
  return out;
}

MetaObjectiveResult meta_objective(const ModelParams& adapted, const Matrix& query,
                                   const LossHistory& history, const MetaObjectiveInputs& inputs,
                                   Rng& rng) {
  require(query.rows() > 0, "meta_objective: empty query set");
  std::vector<double> weights(static_cast<std::size_t>(query.rows()), 1.0);
  double lambda = inputs.reg.lambda0;
  if (inputs.use_confident) {
    const Vector s = anomaly_score(adapted, query);
    const std::span<const double> scores(s.data(), static_cast<std::size_t>(s.size()));
    weights = confidence_weights(scores, iqr_threshold(scores, inputs.kappa));
    lambda = current_lambda(inputs.reg, history);
  }
  const Matrix noise = gaussian_matrix(query.rows(), adapted.adapted_dim(), inputs.noise.sigma, rng);
  Matrix augmented;
  if (inputs.use_contrastive && inputs.contrastive.lambda_cont > 0.0) {
    augmented = augment(adaptor_forward(adapted, query), inputs.contrastive.sigma_aug, rng);
  }
  return meta_objective_fixed(adapted, query, weights, lambda, noise, augmented,
                              inputs.contrastive, inputs.use_contrastive, inputs.margin);
}

void outer_update(ModelParams& params, AdamState& adam,
                  std::vector<std::pair<int, ParamGrads>> task_grads, const MetaConfig& cfg) {
  require(!task_grads.empty(), "outer_update: no task gradients");
  std::sort(task_grads.begin(), task_grads.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  ParamGrads mean = ParamGrads::zeros_like(params);
  for (const auto& [id, g] : task_grads) mean += g;
  mean *= 1.0 / static_cast<double>(task_grads.size());
  adam_step(adam, params, mean, cfg.beta_adaptor, cfg.beta_disc, cfg.weight_decay);
}

namespace {

TrainResult train_epochwise(const FeatureDataset& dataset, const TrainOptions& options) {
  const auto& cfg = options.meta;
  const auto& use = options.components;
  TrainResult result;
  result.params = initial_params(dataset, options);
  result.adam = AdamState::for_params(result.params);
  result.confidence.kappa = options.kappa;
  Rng rng(derive_seed(cfg.seed, kNoiseStream));

  const std::size_t n = dataset.n_patches();
  const std::size_t batch = std::max<std::size_t>(2, cfg.batch_size * dataset.patches_per_image());
  // Without a query split there is no validation sequence, so lambda stays at lambda0.
  const double lambda = options.reg.lambda0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (use.use_confident) {
      result.confidence =
          refresh_confidence(result.confidence, result.params, dataset, static_cast<int>(epoch));
    }
    const auto order = shuffled_patches(n, derive_seed(cfg.seed, kShuffleStream + epoch));
    EpochStats stats;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin + 2 <= n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      if (end - begin < 2) break;
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix x = dataset.gather(idx);
      const std::vector<double> w = use.use_confident ? gather_weights(result.confidence.weights, idx)
                                                      : std::vector<double>(idx.size(), 1.0);
      LossResult r = loss_backward(result.params, x, options.noise, rng, w, lambda, options.margin);
      LossAndGrads total{r.loss, std::move(r.grads)};
      if (use.use_contrastive && options.contrastive.lambda_cont > 0.0) {
        const ContrastiveResult c = batch_contrastive(r.adapted, options.contrastive, rng);
        total = total_loss(total, contrastive_param_grads(result.params, x, c),
                           options.contrastive.lambda_cont);
      }
      apply_batch_stats(result.params, r.stats);
      adam_step(result.adam, result.params, total.grads, cfg.beta_adaptor, cfg.beta_disc,
                cfg.weight_decay);
      loss_sum += r.data_loss;
      stats.updates += 1;
    }
    stats.train_loss = stats.updates ? loss_sum / static_cast<double>(stats.updates) : 0.0;
    stats.val_loss = stats.train_loss;
    stats.lambda = lambda;
    stats.weights = summarize(use.use_confident ? result.confidence.weights
                                                : std::vector<double>(n, 1.0));
    result.report.epochs.push_back(std::move(stats));
  }
  return result;
}

TrainResult train_meta(const FeatureDataset& dataset, const TrainOptions& options) {
  const auto& cfg = options.meta;
  const auto& use = options.components;
  TrainResult result;
  result.params = initial_params(dataset, options);
  result.adam = AdamState::for_params(result.params);
  result.confidence.kappa = options.kappa;
  Rng rng(derive_seed(cfg.seed, kNoiseStream));
  LossHistory history(options.history_window);

  const MetaObjectiveInputs inputs{use.use_confident, use.use_contrastive, options.kappa,
                                   options.reg,       options.contrastive, options.noise,
                                   options.margin};
  const std::size_t n = dataset.n_patches();
  const std::size_t batch = std::max<std::size_t>(2, cfg.batch_size * dataset.patches_per_image());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (use.use_confident) {
      result.confidence =
          refresh_confidence(result.confidence, result.params, dataset, static_cast<int>(epoch));
    }
    const auto tasks = split_tasks(dataset, cfg.n_tasks, cfg.support_fraction,
                                   derive_seed(cfg.seed, kTaskStream + epoch));
    // One meta-iteration consumes about one minibatch of patches spread over
    // all tasks; every slice keeps at least two rows for batchnorm.
    std::size_t iterations = (n + batch - 1) / batch;
    for (const auto& task : tasks) {
      const std::size_t smallest = std::min(task.support_indices.size(), task.query_indices.size());
      iterations = std::min(iterations, std::max<std::size_t>(1, smallest / 2));
    }

    EpochStats stats;
    double train_sum = 0.0, val_sum = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      const double lambda = use.use_confident ? current_lambda(options.reg, history)
                                              : options.reg.lambda0;
      std::vector<std::pair<int, ParamGrads>> task_grads;
      RowVector running_mean = RowVector::Zero(result.params.hidden_dim());
      RowVector running_var = RowVector::Zero(result.params.hidden_dim());
      double support_sum = 0.0, query_sum = 0.0;
      for (const auto& task : tasks) {
        const auto support = slice(task.support_indices, it, iterations);
        const auto query = slice(task.query_indices, it, iterations);
        const std::vector<double> ws = use.use_confident
                                           ? gather_weights(result.confidence.weights, support)
                                           : std::vector<double>(support.size(), 1.0);
        InnerResult inner = inner_adapt(result.params, dataset.gather(support), ws, lambda,
                                        cfg.alpha, cfg.inner_steps, options.noise, rng,
                                        options.margin);
        MetaObjectiveResult mo =
            meta_objective(inner.adapted, dataset.gather(query), history, inputs, rng);
        apply_batch_stats(inner.adapted, mo.stats);
        running_mean += inner.adapted.bn_running_mean;
        running_var += inner.adapted.bn_running_var;
        support_sum += inner.support_loss;
        query_sum += mo.data_loss;
        task_grads.emplace_back(task.task_id, std::move(mo.grads));
      }
      const double n_tasks = static_cast<double>(tasks.size());
      history.push(support_sum / n_tasks, query_sum / n_tasks);
      outer_update(result.params, result.adam, std::move(task_grads), cfg);
      result.params.bn_running_mean = running_mean / n_tasks;
      result.params.bn_running_var = running_var / n_tasks;
      train_sum += support_sum / n_tasks;
      val_sum += query_sum / n_tasks;
      stats.updates += 1;
    }
    stats.train_loss = train_sum / static_cast<double>(stats.updates);
    stats.val_loss = val_sum / static_cast<double>(stats.updates);
    if (const auto sigma = loss_covariance(history)) {
      stats.det_sigma = (*sigma)(0, 0) * (*sigma)(1, 1) - (*sigma)(0, 1) * (*sigma)(1, 0);
    }
    stats.lambda = use.use_confident ? current_lambda(options.reg, history) : options.reg.lambda0;
    stats.weights = summarize(use.use_confident ? result.confidence.weights
                                                : std::vector<double>(n, 1.0));
    result.report.epochs.push_back(std::move(stats));
  }
  return result;
}

}  // namespace

TrainResult train(const FeatureDataset& dataset, const TrainOptions& options) {
  options.validate();
  check_training_data(dataset);
  return options.components.use_meta ? train_meta(dataset, options)
                                     : train_epochwise(dataset, options);
}

TrainResult train_plain(const FeatureDataset& dataset, const TrainOptions& options) {
  options.validate();
  check_training_data(dataset);
  const auto& cfg = options.meta;
  TrainResult result;
  result.params = initial_params(dataset, options);
  result.adam = AdamState::for_params(result.params);
  Rng rng(derive_seed(cfg.seed, kNoiseStream));

  const std::size_t n = dataset.n_patches();
  const std::size_t batch = std::max<std::size_t>(2, cfg.batch_size * dataset.patches_per_image());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_patches(n, derive_seed(cfg.seed, kShuffleStream + epoch));
    EpochStats stats;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin + 2 <= n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      if (end - begin < 2) break;
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix x = dataset.gather(idx);
      const std::vector<double> ones(idx.size(), 1.0);
      LossResult r =
          loss_backward(result.params, x, options.noise, rng, ones, options.reg.lambda0, options.margin);
      apply_batch_stats(result.params, r.stats);
      adam_step(result.adam, result.params, r.grads, cfg.beta_adaptor, cfg.beta_disc,
                cfg.weight_decay);
      loss_sum += r.data_loss;
      stats.updates += 1;
    }
    stats.train_loss = stats.updates ? loss_sum / static_cast<double>(stats.updates) : 0.0;
    stats.val_loss = stats.train_loss;
    stats.lambda = options.reg.lambda0;
    stats.weights = summarize(std::vector<double>(n, 1.0));
    result.report.epochs.push_back(std::move(stats));
  }
  return result;
}

std::string report_to_json(const TrainReport& report) {
  nlohmann::ordered_json doc;
  doc["checkpoint"] = report.checkpoint_path;
  doc["config"] = report.config_echo;
  auto& epochs = doc["epochs"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const EpochStats& e = report.epochs[i];
    epochs.push_back({{"epoch", i},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"det_sigma", e.det_sigma},
                      {"lambda", e.lambda},
                      {"updates", e.updates},
                      {"weights",
                       {{"min", e.weights.min},
                        {"mean", e.weights.mean},
                        {"fraction_below_one", e.weights.fraction_below_one},
                        {"histogram", e.weights.histogram}}}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace cozad
