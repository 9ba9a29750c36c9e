#pragma once

#include "cozad/feature_io.hpp"
#include "cozad/model.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cozad {

/// Exact AUROC by rank statistic with average ranks for ties, i.e.
/// P(pos > neg) + P(pos == neg) / 2. nullopt when either class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Image-level score: the maximum patch score.
double image_score(const Matrix& patch_grid);

/// Bilinear upsampling (half-pixel centers) of a patch-score grid followed by
/// a Gaussian blur with std `smooth_sigma` output pixels and reflected borders.
/// smooth_sigma == 0 disables the blur.
Matrix anomaly_map(const Matrix& patch_grid, std::size_t out_h, std::size_t out_w,
                   double smooth_sigma);

struct MapConfig {
  double smooth_sigma = 4.0;
  /// Maps are built at max(mask resolution, map_size) per side; masks are
  /// upsampled by nearest neighbour to match.
  std::size_t map_size = 256;
};

struct ScoreReport {
  std::vector<double> image_scores;
  std::optional<std::vector<std::uint8_t>> labels;
  /// One [grid_h x grid_w] matrix of patch anomaly scores per image.
  std::vector<Matrix> patch_grids;
  std::optional<double> i_auroc;
  std::optional<double> p_auroc;
  /// "ok", "missing labels", "missing masks" or "undefined metric".
  std::string i_auroc_status;
  std::string p_auroc_status;
  std::size_t map_h = 0;
  std::size_t map_w = 0;
};

/// Per-image patch scores for every image of the dataset.
std::vector<Matrix> score_patches(const ModelParams& params, const FeatureDataset& dataset,
                                  std::size_t threads = 1);

ScoreReport evaluate(const ModelParams& params, const FeatureDataset& dataset,
                     const MapConfig& map_cfg = {}, std::size_t threads = 1);

/// Anomaly maps of every image packed as a COZF dataset with feat_dim 1 and
/// the map as the grid; labels and upsampled masks are carried over.
FeatureDataset maps_as_dataset(const ScoreReport& report, const FeatureDataset& source,
                               const MapConfig& map_cfg);

std::string score_report_json(const ScoreReport& report);
/// image_index,image_score,label
std::string image_scores_csv(const ScoreReport& report);

}  // namespace cozad
