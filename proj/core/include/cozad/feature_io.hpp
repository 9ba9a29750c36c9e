#pragma once

#include "cozad/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cozad {

/// Per-image patch-feature grids, as produced by a frozen backbone.
///
/// Features are stored image-major and row-major within the grid, so patch
/// `(image, row, col)` lives at flat patch index
/// `image * grid_h * grid_w + row * grid_w + col`. Everything downstream
/// addresses patches by this flat index.
struct FeatureDataset {
  std::uint32_t n_images = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t feat_dim = 0;
  std::vector<float> features;
  std::optional<std::vector<std::uint8_t>> image_labels;
  /// n_images * grid_h * grid_w entries, 1 marks an anomalous patch.
  std::optional<std::vector<std::uint8_t>> pixel_masks;
  std::string meta;

  std::size_t patches_per_image() const { return std::size_t{grid_h} * grid_w; }
  std::size_t n_patches() const { return n_images * patches_per_image(); }

  std::span<const float> patch(std::size_t flat_index) const {
    return {features.data() + flat_index * feat_dim, feat_dim};
  }

  /// Gathers the given patches into a [indices.size() x feat_dim] matrix.
  Matrix gather(std::span<const std::size_t> indices) const;
  /// All patches of one image, in grid order.
  Matrix image_patches(std::size_t image) const;
  Matrix all_patches() const;

  bool has_anomaly_labels() const;

  /// Throws ContractError naming the first violated invariant.
  void validate() const;

  bool operator==(const FeatureDataset&) const = default;
};

FeatureDataset read_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureDataset& dataset, const std::filesystem::path& path);

/// In-memory COZF codec; the file functions are thin wrappers around these.
std::vector<std::uint8_t> encode_feature_file(const FeatureDataset& dataset);
FeatureDataset decode_feature_file(std::span<const std::uint8_t> bytes);

struct SynthConfig {
  std::uint32_t n_normal = 200;
  std::uint32_t n_anomalous = 0;
  std::uint32_t feat_dim = 64;
  std::uint32_t grid_h = 8;
  std::uint32_t grid_w = 8;
  std::uint32_t n_clusters = 4;
  /// Displacement of anomalous patches, in units of noise_std.
  double anomaly_shift = 6.0;
  double noise_std = 0.02;
  /// Rank of each cluster's spread: noise lies in a random subspace of this
  /// dimension around the center. 0 spreads over all feat_dim directions.
  std::uint32_t intrinsic_dim = 8;
  /// Cluster centers depend on the seed only.
  std::uint64_t seed = 0;
  /// Selects the sample stream, so that train and test splits drawn with the
  /// same seed share cluster centers but not samples.
  std::uint64_t sample_stream = 0;
  /// Fraction of patches in normal-labeled images that are displaced like
  /// anomalies but keep label 0 and a clean mask (label noise).
  double contamination = 0.0;

  void validate() const;
};

FeatureDataset synth_generate(const SynthConfig& config);

/// Unit-norm cluster centers used by synth_generate, one row per cluster.
Matrix synth_cluster_centers(const SynthConfig& config);

/// Orthonormal rows spanning the spread of one cluster, [rank x feat_dim].
Matrix synth_cluster_basis(const SynthConfig& config, std::uint32_t cluster);

/// Support/query split of flat patch indices for one meta-learning task.
struct TaskBatch {
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> query_indices;
  int task_id = 0;
};

/// Partitions every patch of an all-normal dataset into n_tasks tasks.
std::vector<TaskBatch> split_tasks(const FeatureDataset& dataset, std::size_t n_tasks,
                                   double support_fraction, std::uint64_t seed);

}  // namespace cozad
