#include "cozad/errors.hpp"
#include "cozad/feature_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cozad {

namespace {

RowVector random_unit(Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector v(dim);
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

std::size_t uniform_index(std::size_t lo, std::size_t hi, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_normal + n_anomalous < 1) throw ContractError("synth: need at least one image");
  if (feat_dim < 1 || grid_h < 1 || grid_w < 1 || n_clusters < 1) {
    throw ContractError("synth: feat_dim, grid and n_clusters must be >= 1");
  }
  if (!(anomaly_shift > 0.0)) throw ContractError("synth: anomaly_shift must be > 0");
  if (!(noise_std > 0.0)) throw ContractError("synth: noise_std must be > 0");
  if (intrinsic_dim > feat_dim) throw ContractError("synth: intrinsic_dim must be <= feat_dim");
  if (!(contamination >= 0.0 && contamination < 1.0)) {
    throw ContractError("synth: contamination must lie in [0, 1)");
  }
}

Matrix synth_cluster_centers(const SynthConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0));
  Matrix centers(config.n_clusters, config.feat_dim);
  for (std::uint32_t c = 0; c < config.n_clusters; ++c) {
    centers.row(c) = random_unit(config.feat_dim, rng);
  }
  return centers;
}

Matrix synth_cluster_basis(const SynthConfig& config, std::uint32_t cluster) {
  config.validate();
  require(cluster < config.n_clusters, "synth: cluster index out of range");
  const std::uint32_t rank = config.intrinsic_dim == 0 ? config.feat_dim : config.intrinsic_dim;
  if (rank == config.feat_dim) return Matrix::Identity(rank, rank);
  // Gram-Schmidt over Gaussian rows.
  Rng rng(derive_seed(derive_seed(config.seed, 2), cluster));
  Matrix basis(rank, config.feat_dim);
  for (std::uint32_t r = 0; r < rank; ++r) {
    RowVector v;
    do {
      v = random_unit(config.feat_dim, rng);
      for (std::uint32_t q = 0; q < r; ++q) v -= v.dot(basis.row(q)) * basis.row(q);
    } while (v.norm() < 1e-6);
    basis.row(r) = v / v.norm();
  }
  return basis;
}

FeatureDataset synth_generate(const SynthConfig& config) {
  const Matrix centers = synth_cluster_centers(config);
  std::vector<Matrix> bases;
  for (std::uint32_t c = 0; c < config.n_clusters; ++c) bases.push_back(synth_cluster_basis(config, c));
  Rng rng(derive_seed(derive_seed(config.seed, 1), config.sample_stream));
  std::normal_distribution<double> noise(0.0, config.noise_std);

  FeatureDataset d;
  d.n_images = config.n_normal + config.n_anomalous;
  d.grid_h = config.grid_h;
  d.grid_w = config.grid_w;
  d.feat_dim = config.feat_dim;
  const std::size_t per = d.patches_per_image();
  d.features.resize(d.n_patches() * d.feat_dim);
  d.image_labels.emplace(d.n_images, 0);
  d.pixel_masks.emplace(d.n_patches(), 0);

  // Contaminated patches: a random subset of the normal images' patches.
  std::vector<std::uint8_t> contaminated(std::size_t{config.n_normal} * per, 0);
  const auto n_contaminated = static_cast<std::size_t>(
      std::llround(config.contamination * static_cast<double>(contaminated.size())));
  if (n_contaminated > 0) {
    std::vector<std::size_t> order(contaminated.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n_contaminated; ++i) {
      std::swap(order[i], order[uniform_index(i, order.size() - 1, rng)]);
      contaminated[order[i]] = 1;
    }
  }

  const double displacement = config.anomaly_shift * config.noise_std;
  RowVector x(d.feat_dim);
  for (std::size_t img = 0; img < d.n_images; ++img) {
    const bool anomalous = img >= config.n_normal;
    std::size_t top = 0, left = 0, rh = 0, rw = 0;
    RowVector direction;
    if (anomalous) {
      (*d.image_labels)[img] = 1;
      const std::size_t lo_h = std::max<std::size_t>(1, d.grid_h / 4);
      const std::size_t lo_w = std::max<std::size_t>(1, d.grid_w / 4);
      rh = uniform_index(lo_h, std::max<std::size_t>(lo_h, d.grid_h / 2), rng);
      rw = uniform_index(lo_w, std::max<std::size_t>(lo_w, d.grid_w / 2), rng);
      top = uniform_index(0, d.grid_h - rh, rng);
      left = uniform_index(0, d.grid_w - rw, rng);
      direction = random_unit(d.feat_dim, rng);
    }
    for (std::size_t p = 0; p < per; ++p) {
      const std::size_t row = p / d.grid_w;
      const std::size_t col = p % d.grid_w;
      const std::size_t cluster = uniform_index(0, config.n_clusters - 1, rng);
      const Matrix& basis = bases[cluster];
      x = centers.row(static_cast<Eigen::Index>(cluster));
      for (Eigen::Index r = 0; r < basis.rows(); ++r) x += noise(rng) * basis.row(r);
      const bool in_region = anomalous && row >= top && row < top + rh && col >= left &&
                             col < left + rw;
      if (in_region) {
        x += displacement * direction;
        (*d.pixel_masks)[img * per + p] = 1;
      } else if (!anomalous && contaminated[img * per + p]) {
        x += displacement * random_unit(d.feat_dim, rng);
      }
      x /= x.norm();
      float* dst = d.features.data() + (img * per + p) * d.feat_dim;
      for (std::uint32_t k = 0; k < d.feat_dim; ++k) dst[k] = static_cast<float>(x(k));
    }
  }

  std::ostringstream meta;
  meta << "synth seed=" << config.seed << " stream=" << config.sample_stream
       << " clusters=" << config.n_clusters << " shift=" << config.anomaly_shift
       << " noise_std=" << config.noise_std << " intrinsic_dim=" << config.intrinsic_dim
       << " contamination=" << config.contamination;
  d.meta = meta.str();
  return d;
}

}  // namespace cozad
