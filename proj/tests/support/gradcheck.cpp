#include "support/gradcheck.hpp"

#include "cozad/meta.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace cozad::test {

namespace {

constexpr double kKinkMargin = 2e-3;

struct Dims {
  Eigen::Index feat;
  Eigen::Index adapted;
  Eigen::Index hidden;
  Eigen::Index batch;
};

Dims random_dims(Rng& rng) {
  auto pick = [&](int lo, int hi) {
    return static_cast<Eigen::Index>(std::uniform_int_distribution<int>(lo, hi)(rng));
  };
  Dims d{};
  d.feat = pick(2, 8);
  d.adapted = pick(2, 8);
  d.hidden = pick(2, 8);
  d.batch = pick(2, 6);
  return d;
}

double pick_temperature(Rng& rng) {
  constexpr double kTemperatures[] = {0.07, 0.2, 0.5};
  return kTemperatures[std::uniform_int_distribution<int>(0, 2)(rng)];
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
  return gaussian_matrix(rows, cols, sigma, rng);
}

/// True when the stacked forward of loss_backward keeps every hinge argument
/// and LeakyReLU input away from zero.
bool away_from_kinks(const ModelParams& p, const Matrix& batch, const Matrix& noise,
                     const MarginConfig& margin) {
  const Matrix adapted = adaptor_forward(p, batch);
  Matrix stacked(2 * batch.rows(), adapted.cols());
  stacked << adapted, adapted + noise;
  const auto [scores, cache] = discriminator_forward_pure(p, stacked, Mode::kTrain);
  if ((cache.pre_act.array().abs() < kKinkMargin).any()) return false;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    if (std::abs(margin.th_pos - scores(i)) < kKinkMargin) return false;
    if (std::abs(scores(batch.rows() + i) + margin.th_neg) < kKinkMargin) return false;
  }
  return true;
}

/// True when every anchor's k-th and (k+1)-th neighbour similarities are
/// separated, so small perturbations cannot swap the positive set.
bool stable_neighbours(const Matrix& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k == 0 || k + 1 >= n) return true;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sims;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      sims.push_back(x.row(ii).dot(x.row(jj)) / (x.row(ii).norm() * x.row(jj).norm()));
    }
    std::sort(sims.begin(), sims.end(), std::greater<>());
    if (sims[k - 1] - sims[k] < kKinkMargin) return false;
  }
  return true;
}

GradCheck compare(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  GradCheck out;
  out.entries = analytic.size();
  out.ok = analytic.size() == numeric.size();
  for (std::size_t i = 0; out.ok && i < analytic.size(); ++i) {
    double rel = 0.0;
    const bool good = close_rel(analytic[i], numeric[i], rel);
    if (std::max(std::abs(analytic[i]), std::abs(numeric[i])) * kFdRelTol >= kFdAbsFloor) {
      out.max_rel_error = std::max(out.max_rel_error, rel);
    }
    if (!good) {
      out.ok = false;
      std::ostringstream msg;
      msg << "entry " << i << ": analytic " << analytic[i] << " vs numeric " << numeric[i];
      out.detail = msg.str();
    }
  }
  return out;
}

std::optional<GradCheck> check_scl(std::uint64_t seed, bool weighted) {
  Rng rng(seed);
  const Dims d = random_dims(rng);
  const ModelParams p = random_params(d.feat, d.adapted, d.hidden, seed);
  const Matrix batch = random_matrix(d.batch, d.feat, 1.0, rng);
  const Matrix noise = random_matrix(d.batch, d.adapted, 0.3, rng);
  std::vector<double> w(static_cast<std::size_t>(d.batch), 1.0);
  double lambda = 0.0;
  if (weighted) {
    std::uniform_real_distribution<double> uw(0.05, 1.0);
    for (double& v : w) v = uw(rng);
    lambda = 0.05;
  }
  const MarginConfig margin{};
  if (!away_from_kinks(p, batch, noise, margin)) return std::nullopt;

  const LossResult r = loss_backward(p, batch, noise, w, lambda, margin);
  auto fn = [&](std::span<const double> flat) {
    ModelParams q = p;
    unflatten(flat, q);
    return loss_backward(q, batch, noise, w, lambda, margin).loss;
  };
  const std::vector<double> point = flatten(p);
  return compare(flatten(r.grads), oracles::fd_gradient(fn, point, kFdStep));
}

std::optional<GradCheck> check_contrastive(std::uint64_t seed) {
  Rng rng(seed);
  const Dims d = random_dims(rng);
  const Eigen::Index b = std::max<Eigen::Index>(d.batch, 3);
  const Matrix x = random_matrix(b, d.adapted, 1.0, rng);
  const Matrix delta = random_matrix(b, d.adapted, 0.1, rng);
  ContrastiveConfig cfg;
  cfg.temperature = pick_temperature(rng);
  cfg.k_nn = std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(b) - 2)(rng);
  if (!stable_neighbours(x, cfg.k_nn)) return std::nullopt;

  const ContrastiveResult r = contrastive_loss(x, x + delta, cfg);
  auto fn = [&](std::span<const double> flat) {
    Matrix y(b, d.adapted);
    std::copy(flat.begin(), flat.end(), y.data());
    return contrastive_loss(y, y + delta, cfg).loss;
  };
  const std::vector<double> point(x.data(), x.data() + x.size());
  const std::vector<double> analytic(r.grad.data(), r.grad.data() + r.grad.size());
  return compare(analytic, oracles::fd_gradient(fn, point, kFdStep));
}

std::optional<GradCheck> check_meta(std::uint64_t seed) {
  Rng rng(seed);
  const Dims d = random_dims(rng);
  const Eigen::Index b = std::max<Eigen::Index>(d.batch, 3);
  const ModelParams p = random_params(d.feat, d.adapted, d.hidden, seed);
  const Matrix query = random_matrix(b, d.feat, 1.0, rng);
  const Matrix noise = random_matrix(b, d.adapted, 0.3, rng);
  const Matrix delta = random_matrix(b, d.adapted, 0.1, rng);
  std::vector<double> w(static_cast<std::size_t>(b));
  std::uniform_real_distribution<double> uw(0.05, 1.0);
  for (double& v : w) v = uw(rng);
  const double lambda = 0.02;
  ContrastiveConfig cfg;
  cfg.temperature = pick_temperature(rng);
  cfg.k_nn = 1;
  cfg.lambda_cont = 0.7;
  const MarginConfig margin{};
  if (!away_from_kinks(p, query, noise, margin)) return std::nullopt;
  if (!stable_neighbours(adaptor_forward(p, query), cfg.k_nn)) return std::nullopt;

  auto eval = [&](const ModelParams& q) {
    const Matrix aug = adaptor_forward(q, query) + delta;
    return meta_objective_fixed(q, query, w, lambda, noise, aug, cfg, true, margin);
  };
  const MetaObjectiveResult r = eval(p);
  auto fn = [&](std::span<const double> flat) {
    ModelParams q = p;
    unflatten(flat, q);
    return eval(q).loss;
  };
  return compare(flatten(r.grads), oracles::fd_gradient(fn, flatten(p), kFdStep));
}

}  // namespace

const char* grad_kind_name(GradKind kind) {
  switch (kind) {
    case GradKind::kMargin:
      return "margin loss";
    case GradKind::kWeighted:
      return "weighted SCL loss";
    case GradKind::kContrastive:
      return "contrastive loss";
    case GradKind::kMetaObjective:
      return "meta-objective";
  }
  return "?";
}

bool close_rel(double analytic, double numeric, double& rel_error) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  rel_error = scale > 0.0 ? diff / scale : 0.0;
  return diff <= kFdRelTol * scale + kFdAbsFloor;
}

ModelParams random_params(Eigen::Index feat_dim, Eigen::Index adapted_dim,
                          Eigen::Index hidden_dim, std::uint64_t seed, double scale) {
  ModelParams p = init_params(feat_dim, adapted_dim, hidden_dim, seed);
  Rng rng(derive_seed(seed, 99));
  std::vector<double> flat = flatten(p);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : flat) v += n(rng);
  unflatten(flat, p);
  return p;
}

oracles::Rows to_rows(const Matrix& m) {
  oracles::Rows rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows[static_cast<std::size_t>(r)].assign(m.row(r).data(), m.row(r).data() + m.cols());
  }
  return rows;
}

std::optional<GradCheck> check_gradient(GradKind kind, std::uint64_t seed) {
  switch (kind) {
    case GradKind::kMargin:
      return check_scl(seed, false);
    case GradKind::kWeighted:
      return check_scl(seed, true);
    case GradKind::kContrastive:
      return check_contrastive(seed);
    case GradKind::kMetaObjective:
      return check_meta(seed);
  }
  return std::nullopt;
}

std::vector<GradCheck> gradient_suite(GradKind kind, std::size_t count, std::uint64_t seed) {
  std::vector<GradCheck> out;
  for (std::uint64_t s = seed; out.size() < count && s < seed + 100 * count; ++s) {
    if (auto c = check_gradient(kind, s)) out.push_back(*c);
  }
  return out;
}

}  // namespace cozad::test
