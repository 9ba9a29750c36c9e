#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace cozad {

/// Dense row-major matrix; one row per sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Single source of randomness. Every stochastic operation takes one by reference
/// so that a run is fully determined by its seed.
using Rng = std::mt19937_64;

/// Deterministically derives an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Fills a rows x cols matrix with i.i.d. N(0, sigma^2) draws in row-major order.
inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = normal(rng);
    }
  }
  return out;
}

}  // namespace cozad
