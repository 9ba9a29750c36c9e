#include "cozad/errors.hpp"
#include "cozad/feature_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cozad {

std::vector<TaskBatch> split_tasks(const FeatureDataset& dataset, std::size_t n_tasks,
                                   double support_fraction, std::uint64_t seed) {
  if (dataset.has_anomaly_labels()) {
    throw ContractError("split_tasks: training data must not contain labeled anomalies");
  }
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("split_tasks: support_fraction must lie in (0, 1)");
  }
  if (n_tasks < 1) throw ConfigError("split_tasks: n_tasks must be >= 1");
  const std::size_t n = dataset.n_patches();
  // Each task needs one support and one query patch.
  if (2 * n_tasks > n) {
    throw ConfigError("split_tasks: n_tasks=" + std::to_string(n_tasks) +
                      " exceeds what " + std::to_string(n) + " patches can populate");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }

  std::vector<TaskBatch> tasks(n_tasks);
  std::size_t begin = 0;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const std::size_t size = n / n_tasks + (t < n % n_tasks ? 1 : 0);
    auto n_support = static_cast<std::size_t>(std::llround(support_fraction * static_cast<double>(size)));
    n_support = std::clamp<std::size_t>(n_support, 1, size - 1);
    auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
    tasks[t].task_id = static_cast<int>(t);
    tasks[t].support_indices.assign(first, first + static_cast<std::ptrdiff_t>(n_support));
    tasks[t].query_indices.assign(first + static_cast<std::ptrdiff_t>(n_support),
                                  first + static_cast<std::ptrdiff_t>(size));
    begin += size;
  }
  return tasks;
}

}  // namespace cozad
