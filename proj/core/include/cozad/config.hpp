#pragma once

#include "cozad/eval.hpp"
#include "cozad/meta.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cozad {

/// Every tunable of a run. Defaults are the published settings where they exist.
struct RunConfig {
  TrainOptions train;
  MapConfig map;
  std::size_t threads = 1;
  std::string train_path;
  std::string test_path;
  std::string checkpoint_path;
  std::string report_path;

  bool operator==(const RunConfig& other) const;
};

/// Parses `key = value` lines (`#` starts a comment) on top of the defaults.
/// Unknown keys and out-of-range values throw ConfigError naming the key.
RunConfig load_config(std::string_view text);
RunConfig load_config_file(const std::filesystem::path& path);

/// Applies the lines of `text` on top of an existing config.
void merge_config(RunConfig& config, std::string_view text);

/// Sets one key from its textual value.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Fully resolved config in the same `key = value` format; load_config of the
/// result reproduces `config` exactly.
std::string echo_config(const RunConfig& config);

/// All recognised keys, in echo order.
std::vector<std::string_view> config_keys();

}  // namespace cozad
