#include "cozad/config.hpp"
#include "cozad/errors.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace cozad;

TEST(Config, EmptyTextGivesPublishedDefaults) {
  const RunConfig c = load_config("");
  EXPECT_EQ(c.train.noise.sigma, 0.015);
  EXPECT_EQ(c.train.kappa, 1.5);
  EXPECT_EQ(c.train.contrastive.k_nn, 5u);
  EXPECT_EQ(c.train.contrastive.lambda_cont, 1.0);
  EXPECT_EQ(c.train.meta.epochs, 40u);
  EXPECT_EQ(c.train.meta.batch_size, 16u);
  EXPECT_EQ(c.train.meta.beta_adaptor, 1e-4);
  EXPECT_EQ(c.train.meta.beta_disc, 2e-4);
  EXPECT_EQ(c.train.meta.weight_decay, 1e-5);
  EXPECT_EQ(c.train.margin.th_pos, 0.5);
  EXPECT_EQ(c.train.margin.th_neg, 0.5);
  EXPECT_NO_THROW(c.train.validate());
}

TEST(Config, ParsesValuesAndComments) {
  const RunConfig c = load_config(
      "# sweep\n"
      "kappa = 0.5   # trailing\n"
      "\n"
      "  use_meta=false\n"
      "k_nn = 3\n"
      "train_path = data/train.cozf\n");
  EXPECT_EQ(c.train.kappa, 0.5);
  EXPECT_FALSE(c.train.components.use_meta);
  EXPECT_EQ(c.train.contrastive.k_nn, 3u);
  EXPECT_EQ(c.train_path, "data/train.cozf");
}

TEST(Config, RangeErrorNamesKey) {
  try {
    load_config("kappa = -1");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("kappa"), std::string::npos);
  }
  EXPECT_THROW(load_config("temperature = 0"), ConfigError);
  EXPECT_THROW(load_config("epochs = 2.5"), ConfigError);
  EXPECT_THROW(load_config("use_meta = maybe"), ConfigError);
  EXPECT_THROW(load_config("noise_sigma = abc"), ConfigError);
}

TEST(Config, UnknownKeyNamed) {
  try {
    load_config("sigam = 0.1");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sigam"), std::string::npos);
  }
  EXPECT_THROW(load_config("no equals sign"), ConfigError);
}

TEST(Config, EchoRoundTrips) {
  RunConfig c = load_config("alpha = 0.000123456789\nlambda0 = 3e-7\nsmooth_sigma = 2.5\nseed = 99\n");
  const std::string echo = echo_config(c);
  const RunConfig back = load_config(echo);
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.train.meta.alpha, 0.000123456789);
  EXPECT_EQ(echo_config(back), echo);
  EXPECT_EQ(load_config(echo_config(RunConfig{})), RunConfig{});
}

TEST(Config, EveryKeyIsEchoed) {
  const std::string echo = echo_config(RunConfig{});
  for (auto key : config_keys()) {
    EXPECT_NE(echo.find(std::string(key) + " = "), std::string::npos) << key;
  }
}

TEST(Config, MergeAndSetOverride) {
  RunConfig c = load_config("epochs = 5\nk_nn = 2\n");
  merge_config(c, "k_nn = 4\n");
  set_config_value(c, "epochs", "7");
  EXPECT_EQ(c.train.meta.epochs, 7u);
  EXPECT_EQ(c.train.contrastive.k_nn, 4u);
  EXPECT_THROW(set_config_value(c, "bogus", "1"), ConfigError);
}

TEST(Config, FileLoading) {
  const auto path = std::filesystem::temp_directory_path() / "cozad_test.cfg";
  std::ofstream(path) << "threads = 3\n";
  EXPECT_EQ(load_config_file(path).threads, 3u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config_file(path), IoError);
}
