#include "cozad/config.hpp"

#include "cozad/errors.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace cozad {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_real(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(text) +
                      "' is not a finite number");
  }
  return v;
}

std::uint64_t parse_count(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(text) +
                      "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': '" + std::string(text) +
                    "' is not a boolean");
}

std::string format_real(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

enum class Bound { kAny, kNonNegative, kPositive, kOpenUnit };

void check_bound(std::string_view key, double v, Bound bound) {
  const char* rule = nullptr;
  switch (bound) {
    case Bound::kAny:
      return;
    case Bound::kNonNegative:
      if (v < 0.0) rule = ">= 0";
      break;
    case Bound::kPositive:
      if (v <= 0.0) rule = "> 0";
      break;
    case Bound::kOpenUnit:
      if (v <= 0.0 || v >= 1.0) rule = "in (0, 1)";
      break;
  }
  if (rule) {
    throw ConfigError("config key '" + std::string(key) + "' must be " + rule + ", got " +
                      format_real(v));
  }
}

struct Entry {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Entry real(std::string_view key, Access access, Bound bound) {
  return {key,
          [=](RunConfig& c, std::string_view text) {
            const double v = parse_real(key, text);
            check_bound(key, v, bound);
            access(c) = v;
          },
          [=](const RunConfig& c) { return format_real(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Entry count(std::string_view key, Access access, std::uint64_t min_value) {
  return {key,
          [=](RunConfig& c, std::string_view text) {
            const std::uint64_t v = parse_count(key, text);
            if (v < min_value) {
              throw ConfigError("config key '" + std::string(key) + "' must be >= " +
                                std::to_string(min_value) + ", got " + std::to_string(v));
            }
            access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(v);
          },
          [=](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Entry flag(std::string_view key, Access access) {
  return {key, [=](RunConfig& c, std::string_view text) { access(c) = parse_bool(key, text); },
          [=](const RunConfig& c) {
            return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Access>
Entry text(std::string_view key, Access access) {
  return {key, [=](RunConfig& c, std::string_view v) { access(c) = std::string(v); },
          [=](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      count("seed", FIELD(train.meta.seed), 0),
      count("epochs", FIELD(train.meta.epochs), 1),
      count("batch_size", FIELD(train.meta.batch_size), 1),
      count("n_tasks", FIELD(train.meta.n_tasks), 1),
      count("inner_steps", FIELD(train.meta.inner_steps), 1),
      real("support_fraction", FIELD(train.meta.support_fraction), Bound::kOpenUnit),
      real("alpha", FIELD(train.meta.alpha), Bound::kPositive),
      real("lr_adaptor", FIELD(train.meta.beta_adaptor), Bound::kPositive),
      real("lr_disc", FIELD(train.meta.beta_disc), Bound::kPositive),
      real("weight_decay", FIELD(train.meta.weight_decay), Bound::kNonNegative),
      real("noise_sigma", FIELD(train.noise.sigma), Bound::kPositive),
      real("th_pos", FIELD(train.margin.th_pos), Bound::kNonNegative),
      real("th_neg", FIELD(train.margin.th_neg), Bound::kNonNegative),
      real("kappa", FIELD(train.kappa), Bound::kNonNegative),
      real("lambda0", FIELD(train.reg.lambda0), Bound::kNonNegative),
      real("gamma", FIELD(train.reg.gamma), Bound::kNonNegative),
      count("history_window", FIELD(train.history_window), 2),
      real("temperature", FIELD(train.contrastive.temperature), Bound::kPositive),
      count("k_nn", FIELD(train.contrastive.k_nn), 0),
      real("sigma_aug", FIELD(train.contrastive.sigma_aug), Bound::kPositive),
      count("chunk_size", FIELD(train.contrastive.chunk_size), 2),
      real("lambda_cont", FIELD(train.contrastive.lambda_cont), Bound::kNonNegative),
      count("adapted_dim", FIELD(train.adapted_dim), 0),
      count("hidden_dim", FIELD(train.hidden_dim), 0),
      real("leaky_slope", FIELD(train.leaky_slope), Bound::kNonNegative),
      flag("use_confident", FIELD(train.components.use_confident)),
      flag("use_meta", FIELD(train.components.use_meta)),
      flag("use_contrastive", FIELD(train.components.use_contrastive)),
      real("smooth_sigma", FIELD(map.smooth_sigma), Bound::kNonNegative),
      count("map_size", FIELD(map.map_size), 1),
      count("threads", FIELD(threads), 1),
      text("train_path", FIELD(train_path)),
      text("test_path", FIELD(test_path)),
      text("checkpoint_path", FIELD(checkpoint_path)),
      text("report_path", FIELD(report_path)),
  };
  return table;
}

#undef FIELD

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const {
  return echo_config(*this) == echo_config(other);
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const Entry& e : entries()) {
    if (e.key == key) {
      e.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void merge_config(RunConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(std::string_view text) {
  RunConfig config;
  merge_config(config, text);
  return config;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_config(buffer.str());
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  for (const Entry& e : entries()) {
    out += std::string(e.key) + " = " + e.get(config) + "\n";
  }
  return out;
}

std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> keys;
  for (const Entry& e : entries()) keys.push_back(e.key);
  return keys;
}

}  // namespace cozad
