#include "cozad/eval.hpp"

#include "cozad/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace cozad {

namespace {

/// scipy.ndimage "reflect" boundary: d c b a | a b c d | d c b a
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(4.0 * sigma + 0.5);
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Matrix blur_rows(const Matrix& in, const std::vector<double>& kernel) {
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto w = static_cast<std::size_t>(in.cols());
  Matrix out(in.rows(), in.cols());
  // Reflected padding once per row keeps the modulo out of the tap loop.
  std::vector<double> padded(w + 2 * static_cast<std::size_t>(radius));
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    for (std::size_t i = 0; i < padded.size(); ++i) {
      padded[i] = in(r, static_cast<Eigen::Index>(
                            reflect_index(static_cast<std::ptrdiff_t>(i) - radius, w)));
    }
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * padded[c + t];
      out(r, static_cast<Eigen::Index>(c)) = acc;
    }
  }
  return out;
}

std::vector<std::uint8_t> upsample_mask(std::span<const std::uint8_t> mask, std::size_t gh,
                                        std::size_t gw, std::size_t out_h, std::size_t out_w) {
  std::vector<std::uint8_t> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * gh / out_h;
    for (std::size_t x = 0; x < out_w; ++x) {
      out[y * out_w + x] = mask[sy * gw + x * gw / out_w];
    }
  }
  return out;
}

std::size_t map_side(std::size_t grid, const MapConfig& cfg) { return std::max(grid, cfg.map_size); }

}  // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), "auroc: scores and labels differ in length");
  require(std::none_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); }),
          "auroc: NaN score");
  std::size_t n_pos = 0;
  for (std::uint8_t l : labels) {
    require(l <= 1, "auroc: labels must be 0 or 1");
    n_pos += l;
  }
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks are multiples of 1/2, so the rank sum is exact in double.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]]) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double image_score(const Matrix& patch_grid) {
  require(patch_grid.size() > 0, "image_score: empty grid");
  return patch_grid.maxCoeff();
}

Matrix anomaly_map(const Matrix& patch_grid, std::size_t out_h, std::size_t out_w,
                   double smooth_sigma) {
  const auto gh = static_cast<std::size_t>(patch_grid.rows());
  const auto gw = static_cast<std::size_t>(patch_grid.cols());
  require(gh >= 1 && gw >= 1, "anomaly_map: empty grid");
  require(out_h >= gh && out_w >= gw, "anomaly_map: output smaller than the grid");
  require(smooth_sigma >= 0.0, "anomaly_map: smooth_sigma must be >= 0");

  auto source = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                         static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  Matrix map(static_cast<Eigen::Index>(out_h), static_cast<Eigen::Index>(out_w));
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, gh, out_h);
    const auto y0 = static_cast<Eigen::Index>(std::floor(sy));
    const auto y1 = std::min<Eigen::Index>(y0 + 1, static_cast<Eigen::Index>(gh - 1));
    const double wy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, gw, out_w);
      const auto x0 = static_cast<Eigen::Index>(std::floor(sx));
      const auto x1 = std::min<Eigen::Index>(x0 + 1, static_cast<Eigen::Index>(gw - 1));
      const double wx = sx - static_cast<double>(x0);
      const double top = (1.0 - wx) * patch_grid(y0, x0) + wx * patch_grid(y0, x1);
      const double bottom = (1.0 - wx) * patch_grid(y1, x0) + wx * patch_grid(y1, x1);
      map(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) =
          (1.0 - wy) * top + wy * bottom;
    }
  }
  if (smooth_sigma == 0.0) return map;
  const auto kernel = gaussian_kernel(smooth_sigma);
  Matrix blurred = blur_rows(map, kernel);
  Matrix transposed = blurred.transpose();
  return blur_rows(transposed, kernel).transpose();
}

std::vector<Matrix> score_patches(const ModelParams& params, const FeatureDataset& dataset,
                                  std::size_t threads) {
  if (dataset.feat_dim != static_cast<std::uint32_t>(params.feat_dim())) {
    throw ContractError("model expects feat_dim " + std::to_string(params.feat_dim()) +
                        " but data has feat_dim " + std::to_string(dataset.feat_dim));
  }
  std::vector<Matrix> grids(dataset.n_images);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t img = begin; img < end; ++img) {
      const Vector s = anomaly_score(params, dataset.image_patches(img));
      grids[img] = Eigen::Map<const Matrix>(s.data(), dataset.grid_h, dataset.grid_w);
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, dataset.n_images));
  if (threads == 1) {
    work(0, dataset.n_images);
    return grids;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back(work, t * dataset.n_images / threads, (t + 1) * dataset.n_images / threads);
  }
  for (auto& th : pool) th.join();
  return grids;
}

ScoreReport evaluate(const ModelParams& params, const FeatureDataset& dataset,
                     const MapConfig& map_cfg, std::size_t threads) {
  dataset.validate();
  ScoreReport report;
  report.patch_grids = score_patches(params, dataset, threads);
  report.image_scores.reserve(dataset.n_images);
  for (const Matrix& g : report.patch_grids) report.image_scores.push_back(image_score(g));
  report.labels = dataset.image_labels;

  if (!dataset.image_labels) {
    report.i_auroc_status = "missing labels";
  } else {
    report.i_auroc = auroc(report.image_scores, *dataset.image_labels);
    report.i_auroc_status = report.i_auroc ? "ok" : "undefined metric";
  }

  if (!dataset.pixel_masks) {
    report.p_auroc_status = "missing masks";
    return report;
  }
  const std::size_t out_h = map_side(dataset.grid_h, map_cfg);
  const std::size_t out_w = map_side(dataset.grid_w, map_cfg);
  report.map_h = out_h;
  report.map_w = out_w;
  const std::size_t per_map = out_h * out_w;
  std::vector<double> pixel_scores(dataset.n_images * per_map);
  std::vector<std::uint8_t> pixel_labels(dataset.n_images * per_map);
  const std::size_t per = dataset.patches_per_image();
  for (std::size_t img = 0; img < dataset.n_images; ++img) {
    const Matrix map = anomaly_map(report.patch_grids[img], out_h, out_w, map_cfg.smooth_sigma);
    std::copy_n(map.data(), per_map, pixel_scores.begin() + static_cast<std::ptrdiff_t>(img * per_map));
    const auto mask = upsample_mask(
        std::span<const std::uint8_t>(*dataset.pixel_masks).subspan(img * per, per),
        dataset.grid_h, dataset.grid_w, out_h, out_w);
    std::copy(mask.begin(), mask.end(), pixel_labels.begin() + static_cast<std::ptrdiff_t>(img * per_map));
  }
  report.p_auroc = auroc(pixel_scores, pixel_labels);
  report.p_auroc_status = report.p_auroc ? "ok" : "undefined metric";
  return report;
}

FeatureDataset maps_as_dataset(const ScoreReport& report, const FeatureDataset& source,
                               const MapConfig& map_cfg) {
  const std::size_t out_h = map_side(source.grid_h, map_cfg);
  const std::size_t out_w = map_side(source.grid_w, map_cfg);
  FeatureDataset maps;
  maps.n_images = source.n_images;
  maps.grid_h = static_cast<std::uint32_t>(out_h);
  maps.grid_w = static_cast<std::uint32_t>(out_w);
  maps.feat_dim = 1;
  maps.image_labels = source.image_labels;
  maps.features.reserve(source.n_images * out_h * out_w);
  if (source.pixel_masks) maps.pixel_masks.emplace();
  const std::size_t per = source.patches_per_image();
  for (std::size_t img = 0; img < source.n_images; ++img) {
    const Matrix map = anomaly_map(report.patch_grids[img], out_h, out_w, map_cfg.smooth_sigma);
    for (Eigen::Index i = 0; i < map.size(); ++i) {
      maps.features.push_back(static_cast<float>(map.data()[i]));
    }
    if (source.pixel_masks) {
      const auto mask = upsample_mask(
          std::span<const std::uint8_t>(*source.pixel_masks).subspan(img * per, per),
          source.grid_h, source.grid_w, out_h, out_w);
      maps.pixel_masks->insert(maps.pixel_masks->end(), mask.begin(), mask.end());
    }
  }
  maps.meta = "anomaly maps smooth_sigma=" + std::to_string(map_cfg.smooth_sigma);
  return maps;
}

std::string score_report_json(const ScoreReport& report) {
  nlohmann::ordered_json doc;
  doc["n_images"] = report.image_scores.size();
  doc["i_auroc"] = report.i_auroc ? nlohmann::ordered_json(*report.i_auroc) : nlohmann::ordered_json(nullptr);
  doc["i_auroc_status"] = report.i_auroc_status;
  doc["p_auroc"] = report.p_auroc ? nlohmann::ordered_json(*report.p_auroc) : nlohmann::ordered_json(nullptr);
  doc["p_auroc_status"] = report.p_auroc_status;
  if (report.map_h > 0) doc["map_size"] = {report.map_h, report.map_w};
  doc["image_scores"] = report.image_scores;
  return doc.dump(2) + "\n";
}

std::string image_scores_csv(const ScoreReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "image_index,image_score,label\n";
  for (std::size_t i = 0; i < report.image_scores.size(); ++i) {
    out << i << ',' << report.image_scores[i] << ',';
    if (report.labels) out << static_cast<int>((*report.labels)[i]);
    out << '\n';
  }
  return out.str();
}

}  // namespace cozad
