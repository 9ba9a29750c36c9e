#include "cozad/feature_io.hpp"

#include "cozad/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cozad {

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'O', 'Z', 'F'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFlagLabels = 0x1;
constexpr std::uint8_t kFlagMasks = 0x2;
constexpr std::size_t kHeaderBytes = 8 + 4 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  }
  return v;
}

bool all_binary(const std::vector<std::uint8_t>& values) {
  return std::all_of(values.begin(), values.end(), [](std::uint8_t v) { return v <= 1; });
}

}  // namespace

Matrix FeatureDataset::gather(std::span<const std::size_t> indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), feat_dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const float* src = features.data() + indices[r] * feat_dim;
    for (std::uint32_t c = 0; c < feat_dim; ++c) {
      out(static_cast<Eigen::Index>(r), c) = src[c];
    }
  }
  return out;
}

Matrix FeatureDataset::image_patches(std::size_t image) const {
  const std::size_t per = patches_per_image();
  Matrix out(static_cast<Eigen::Index>(per), feat_dim);
  const float* src = features.data() + image * per * feat_dim;
  for (std::size_t r = 0; r < per; ++r) {
    for (std::uint32_t c = 0; c < feat_dim; ++c) {
      out(static_cast<Eigen::Index>(r), c) = src[r * feat_dim + c];
    }
  }
  return out;
}

Matrix FeatureDataset::all_patches() const {
  Matrix out(static_cast<Eigen::Index>(n_patches()), feat_dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    out.data()[i] = features[i];
  }
  return out;
}

bool FeatureDataset::has_anomaly_labels() const {
  if (image_labels && std::any_of(image_labels->begin(), image_labels->end(),
                                  [](std::uint8_t v) { return v != 0; })) {
    return true;
  }
  return false;
}

void FeatureDataset::validate() const {
  require(feat_dim > 0, "dataset: feat_dim must be positive");
  require(grid_h >= 1 && grid_w >= 1, "dataset: grid dimensions must be at least 1");
  require(features.size() == n_patches() * feat_dim,
          "dataset: feature buffer size does not match dimensions");
  require(std::all_of(features.begin(), features.end(), [](float v) { return std::isfinite(v); }),
          "dataset: non-finite feature value");
  if (image_labels) {
    require(image_labels->size() == n_images, "dataset: label count differs from n_images");
    require(all_binary(*image_labels), "dataset: labels must be 0 or 1");
  }
  if (pixel_masks) {
    require(pixel_masks->size() == n_patches(), "dataset: mask size differs from n_images*grid");
    require(all_binary(*pixel_masks), "dataset: mask entries must be 0 or 1");
    if (image_labels) {
      const std::size_t per = patches_per_image();
      for (std::size_t i = 0; i < n_images; ++i) {
        if ((*image_labels)[i] == 0) {
          auto first = pixel_masks->begin() + static_cast<std::ptrdiff_t>(i * per);
          require(std::all_of(first, first + static_cast<std::ptrdiff_t>(per),
                              [](std::uint8_t v) { return v == 0; }),
                  "dataset: normal image " + std::to_string(i) + " has a non-empty mask");
        }
      }
    }
  }
}

std::vector<std::uint8_t> encode_feature_file(const FeatureDataset& dataset) {
  dataset.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + dataset.features.size() * 4 + dataset.meta.size() + 4 +
              dataset.n_patches() + dataset.n_images);
  for (std::uint8_t c : kMagic) out.push_back(c);
  out.push_back(kVersion);
  std::uint8_t flags = 0;
  if (dataset.image_labels) flags |= kFlagLabels;
  if (dataset.pixel_masks) flags |= kFlagMasks;
  out.push_back(flags);
  out.push_back(0);
  out.push_back(0);
  put_u32(out, dataset.n_images);
  put_u32(out, dataset.grid_h);
  put_u32(out, dataset.grid_w);
  put_u32(out, dataset.feat_dim);
  for (float v : dataset.features) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (dataset.image_labels) {
    out.insert(out.end(), dataset.image_labels->begin(), dataset.image_labels->end());
  }
  if (dataset.pixel_masks) {
    out.insert(out.end(), dataset.pixel_masks->begin(), dataset.pixel_masks->end());
  }
  put_u32(out, static_cast<std::uint32_t>(dataset.meta.size()));
  out.insert(out.end(), dataset.meta.begin(), dataset.meta.end());
  return out;
}

FeatureDataset decode_feature_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("COZF: bad magic bytes");
  }
  if (bytes.size() < kHeaderBytes) {
    throw CorruptionError("COZF: truncated header");
  }
  if (bytes[4] != kVersion) {
    throw FormatError("COZF: unsupported version " + std::to_string(bytes[4]));
  }
  const std::uint8_t flags = bytes[5];
  if ((flags & ~(kFlagLabels | kFlagMasks)) != 0 || bytes[6] != 0 || bytes[7] != 0) {
    throw FormatError("COZF: unknown flags or non-zero reserved bytes");
  }

  FeatureDataset d;
  d.n_images = get_u32(bytes, 8);
  d.grid_h = get_u32(bytes, 12);
  d.grid_w = get_u32(bytes, 16);
  d.feat_dim = get_u32(bytes, 20);
  if (d.feat_dim == 0 || d.grid_h == 0 || d.grid_w == 0) {
    throw CorruptionError("COZF: zero dimension in header");
  }

  // 64-bit arithmetic; 32-bit dims cannot overflow until the last product, checked below.
  const std::uint64_t n_patches = std::uint64_t{d.n_images} * d.grid_h * d.grid_w;
  if (n_patches != 0 && d.feat_dim > (bytes.size() / 4) / n_patches + 1) {
    throw CorruptionError("COZF: header dimensions exceed payload length");
  }
  const std::uint64_t n_floats = n_patches * d.feat_dim;
  std::uint64_t expected = kHeaderBytes + n_floats * 4;
  if (flags & kFlagLabels) expected += d.n_images;
  if (flags & kFlagMasks) expected += n_patches;
  expected += 4;
  if (bytes.size() < expected) {
    throw CorruptionError("COZF: payload shorter than header dimensions imply");
  }

  std::size_t offset = kHeaderBytes;
  d.features.resize(static_cast<std::size_t>(n_floats));
  for (float& v : d.features) {
    v = std::bit_cast<float>(get_u32(bytes, offset));
    offset += 4;
  }
  if (flags & kFlagLabels) {
    d.image_labels.emplace(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                           bytes.begin() + static_cast<std::ptrdiff_t>(offset + d.n_images));
    offset += d.n_images;
  }
  if (flags & kFlagMasks) {
    d.pixel_masks.emplace(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                          bytes.begin() + static_cast<std::ptrdiff_t>(offset + n_patches));
    offset += static_cast<std::size_t>(n_patches);
  }
  const std::uint32_t meta_len = get_u32(bytes, offset);
  offset += 4;
  if (bytes.size() != offset + meta_len) {
    throw CorruptionError("COZF: meta length disagrees with file size");
  }
  d.meta.assign(reinterpret_cast<const char*>(bytes.data() + offset), meta_len);

  try {
    d.validate();
  } catch (const ContractError& e) {
    throw CorruptionError(std::string("COZF: ") + e.what());
  }
  return d;
}

FeatureDataset read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_feature_file(bytes);
}

void write_feature_file(const FeatureDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_feature_file(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

}  // namespace cozad
