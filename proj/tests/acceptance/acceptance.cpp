// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "cli.hpp"
#include "cozad/confident.hpp"
#include "cozad/contrastive.hpp"
#include "cozad/eval.hpp"
#include "cozad/meta.hpp"
#include "oracles/oracles.hpp"
#include "support/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

using namespace cozad;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s  %s  (%s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

SynthConfig acceptance_synth(std::uint64_t seed, bool test_split) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.feat_dim = 64;
  cfg.grid_h = 8;
  cfg.grid_w = 8;
  cfg.anomaly_shift = 6.0;
  if (test_split) {
    cfg.n_normal = 50;
    cfg.n_anomalous = 50;
    cfg.sample_stream = 1;
  } else {
    cfg.n_normal = 200;
    cfg.n_anomalous = 0;
  }
  return cfg;
}

TrainOptions paper_defaults(std::uint64_t seed) {
  TrainOptions o;
  o.meta.seed = seed;
  return o;
}

double i_auroc_of(const ModelParams& p, const FeatureDataset& test) {
  MapConfig map;
  map.map_size = 8;
  return evaluate(p, test, map).i_auroc.value_or(-1.0);
}

void gradient_suite() {
  Stopwatch clock;
  std::size_t instances = 0, bad = 0;
  double worst = 0.0;
  std::string first_failure;
  for (auto kind : {test::GradKind::kMargin, test::GradKind::kWeighted,
                    test::GradKind::kContrastive, test::GradKind::kMetaObjective}) {
    for (const auto& c : test::gradient_suite(kind, 50, 5000)) {
      ++instances;
      worst = std::max(worst, c.max_rel_error);
      if (!c.ok) {
        ++bad;
        if (first_failure.empty()) first_failure = std::string(test::grad_kind_name(kind)) + ": " + c.detail;
      }
    }
  }
  const double t = clock.seconds();
  report(bad == 0 && instances >= 50 && t < 30.0, "gradient suite vs central differences",
         std::to_string(instances) + " instances, " + std::to_string(bad) +
             " failing, worst rel err (|g| >= 1e-3) " + fmt(worst, 3) + ", " + fmt(t, 3) + " s" +
             (first_failure.empty() ? "" : ", " + first_failure));
}

void oracle_equivalence() {
  Stopwatch clock;
  Rng rng(42);
  std::uniform_int_distribution<int> len(2, 200), coarse(0, 9);
  std::normal_distribution<double> normal;

  std::size_t auroc_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = t % 2 ? coarse(rng) : std::round(normal(rng) * 8.0) / 8.0;
      l[i] = static_cast<std::uint8_t>(coarse(rng) < 4);
    }
    l[0] = 0;
    l[1] = 1;
    if (*auroc(s, l) != *oracles::pairwise_auroc(s, l)) ++auroc_bad;
  }

  std::size_t cont_n = 0;
  double cont_worst = 0.0;
  std::uniform_int_distribution<int> bsize(2, 32);
  for (int t = 0; t < 300; ++t) {
    const int b = bsize(rng);
    const Matrix x = gaussian_matrix(b, 8, 1.0, rng);
    ContrastiveConfig cfg;
    cfg.k_nn = std::uniform_int_distribution<std::size_t>(0, std::min(5, b - 1))(rng);
    cfg.chunk_size = static_cast<std::size_t>(b) + static_cast<std::size_t>(t % 3);
    const Matrix aug = augment(x, cfg.sigma_aug, rng);
    const double got = batch_contrastive(x, aug, cfg).loss;
    const double want = oracles::naive_contrastive(test::to_rows(x), test::to_rows(aug),
                                                   cfg.temperature, cfg.k_nn);
    cont_worst = std::max(cont_worst, std::abs(got - want));
    ++cont_n;
  }

  std::size_t iqr_bad = 0;
  std::uniform_int_distribution<int> vlen(1, 80);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(static_cast<std::size_t>(vlen(rng)));
    for (double& x : v) x = t % 3 == 0 ? coarse(rng) * 0.25 : normal(rng) * 3.0;
    const double kappa = (t % 5) * 0.75;
    if (iqr_threshold(v, kappa) != oracles::iqr_threshold(v, kappa)) ++iqr_bad;
  }
  const double t = clock.seconds();
  report(auroc_bad == 0 && cont_worst <= 1e-10 && iqr_bad == 0 && t < 60.0,
         "oracle equivalence",
         "AUROC 1000 instances, " + std::to_string(auroc_bad) + " mismatches; contrastive " +
             std::to_string(cont_n) + " instances, max abs diff " + fmt(cont_worst, 3) +
             "; IQR 500 vectors, " + std::to_string(iqr_bad) + " mismatches; " + fmt(t, 3) + " s");
}

void hand_anchored() {
  const std::vector<double> pos{0.2, 0.8}, neg{-0.1, 0.3};
  const double margin = margin_loss(pos, neg);
  const std::vector<double> scores{0, 1, 2, 3, 4};
  const double tau = iqr_threshold(scores, 1.5);
  const std::vector<double> at_two_tau{2.0 * 1.7};
  const double w = confidence_weights(at_two_tau, 1.7)[0];
  const double lambda = adaptive_lambda(RegConfig{}, Eigen::Matrix2d::Zero());
  LossHistory h;
  h.push(0.0, 0.0);
  h.push(2.0, 2.0);
  const Eigen::Matrix2d sigma = *loss_covariance(h);
  const bool pass = std::abs(margin - 0.75) <= 1e-10 && std::abs(tau - 6.0) <= 1e-10 &&
                    std::abs(w - 0.5) <= 1e-10 && std::abs(lambda - RegConfig{}.lambda0) <= 1e-10 &&
                    (sigma.array() - 2.0).abs().maxCoeff() <= 1e-10;
  report(pass, "hand-anchored values",
         "margin " + fmt(margin, 17) + ", tau " + fmt(tau, 17) + ", weight " + fmt(w, 17) +
             ", lambda " + fmt(lambda, 17) + ", cov entries " + fmt(sigma(0, 0), 17) + "/" +
             fmt(sigma(0, 1), 17) + "/" + fmt(sigma(1, 0), 17) + "/" + fmt(sigma(1, 1), 17));
}

void reduction_fidelity(const FeatureDataset& train_set) {
  TrainOptions o = paper_defaults(1);
  o.components = {false, false, false};
  const TrainResult a = train(train_set, o);
  const TrainResult b = train_plain(train_set, o);
  const auto ca = encode_checkpoint({a.params, a.adam});
  const auto cb = encode_checkpoint({b.params, b.adam});
  report(ca == cb, "reduction fidelity (all components off == plain loop)",
         "checkpoint bytes " + std::string(ca == cb ? "identical" : "differ") + ", " +
             std::to_string(ca.size()) + " bytes, " + std::to_string(o.meta.epochs) + " epochs");
}

void end_to_end(const FeatureDataset& train_set, const FeatureDataset& test_set) {
  Stopwatch clock;
  const TrainResult full = train(train_set, paper_defaults(1));
  const ScoreReport r = evaluate(full.params, test_set);
  const double t_full = clock.seconds();

  TrainOptions base = paper_defaults(1);
  base.components = {false, false, false};
  const TrainResult baseline = train(train_set, base);
  const ScoreReport rb = evaluate(baseline.params, test_set);

  const double i = r.i_auroc.value_or(-1.0), p = r.p_auroc.value_or(-1.0);
  const double ib = rb.i_auroc.value_or(-1.0);
  report(i >= 0.95 && p >= 0.90 && ib >= 0.85 && t_full < 300.0, "end-to-end synthetic run",
         "full I-AUROC " + fmt(i) + " (>= 0.95), P-AUROC " + fmt(p) + " (>= 0.90); baseline I-AUROC " +
             fmt(ib) + " (>= 0.85), P-AUROC " + fmt(rb.p_auroc.value_or(-1.0)) + "; full run " +
             fmt(t_full, 3) + " s");

  // Patch-level sanity on the trained model.
  const Vector s = anomaly_score(full.params, test_set.all_patches());
  double anom = 0.0, norm = 0.0;
  std::size_t na = 0, nn = 0;
  for (std::size_t k = 0; k < test_set.n_patches(); ++k) {
    if ((*test_set.pixel_masks)[k]) {
      anom += s(static_cast<Eigen::Index>(k));
      ++na;
    } else {
      norm += s(static_cast<Eigen::Index>(k));
      ++nn;
    }
  }
  report(anom / na > norm / nn, "trained model scores anomalous patches higher",
         "mean anomalous " + fmt(anom / na) + " vs normal " + fmt(norm / nn));
}

void contamination_direction() {
  std::vector<double> with, without;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthConfig tc = acceptance_synth(seed, false);
    tc.contamination = 0.1;
    const FeatureDataset train_set = synth_generate(tc);
    const FeatureDataset test_set = synth_generate(acceptance_synth(seed, true));
    TrainOptions on = paper_defaults(seed);
    TrainOptions off = on;
    off.components.use_confident = false;
    with.push_back(i_auroc_of(train(train_set, on).params, test_set));
    without.push_back(i_auroc_of(train(train_set, off).params, test_set));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m_on = median(with), m_off = median(without);
  std::string per_seed;
  for (std::size_t k = 0; k < with.size(); ++k) {
    per_seed += (k ? ", " : "") + fmt(with[k]) + "/" + fmt(without[k]);
  }
  report(m_on >= m_off, "contamination direction (confident on >= off, median of 5 seeds)",
         "median I-AUROC " + fmt(m_on) + " vs " + fmt(m_off) + "; per seed on/off: " + per_seed);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism() {
  const fs::path dir = fs::temp_directory_path() / "cozad_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::vector<std::string>> commands = {
      {"synth-gen", "--out", p("train.cozf"), "--seed", "9", "--n-normal", "20"},
      {"synth-gen", "--out", p("test.cozf"), "--seed", "9", "--stream", "1", "--n-normal", "5",
       "--n-anomalous", "5"},
      {"train", "--data", p("train.cozf"), "--out", p("m.cozm"), "--epochs", "3", "--seed", "9",
       "--confidence-dump", p("conf.csv")},
      {"score", "--model", p("m.cozm"), "--data", p("test.cozf"), "--out", p("scores.csv"),
       "--maps", p("maps.cozf"), "--threads", "3"},
      {"eval", "--model", p("m.cozm"), "--data", p("test.cozf"), "--out", p("eval.json")},
      {"inspect", p("m.cozm"), "--data", p("train.cozf"), "--confidence-out", p("inspect.csv")},
  };
  const std::vector<std::string> artifacts = {"train.cozf", "test.cozf",   "m.cozm",
                                              "m.cozm.json", "conf.csv",   "scores.csv",
                                              "maps.cozf",  "eval.json",   "inspect.csv"};
  std::vector<std::vector<std::string>> runs;
  std::vector<std::string> stdout_runs;
  bool commands_ok = true;
  for (int round = 0; round < 2; ++round) {
    std::string all_out;
    for (auto args : commands) {
      args.insert(args.begin(), "cozad");
      std::ostringstream out, err;
      commands_ok = commands_ok && cli::run(args, out, err) == 0;
      all_out += out.str();
    }
    std::vector<std::string> bytes;
    for (const auto& a : artifacts) bytes.push_back(slurp(dir / a));
    runs.push_back(bytes);
    stdout_runs.push_back(all_out);
  }
  std::size_t differing = 0;
  for (std::size_t k = 0; k < artifacts.size(); ++k) differing += runs[0][k] != runs[1][k];
  const bool pass = commands_ok && differing == 0 && stdout_runs[0] == stdout_runs[1];
  report(pass, "determinism (every command rerun gives identical artifacts)",
         std::to_string(commands.size()) + " commands, " + std::to_string(artifacts.size()) +
             " artifacts, " + std::to_string(differing) + " differing" +
             (commands_ok ? "" : ", a command failed"));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  gradient_suite();
  oracle_equivalence();
  hand_anchored();
  const FeatureDataset train_set = synth_generate(acceptance_synth(1, false));
  const FeatureDataset test_set = synth_generate(acceptance_synth(1, true));
  reduction_fidelity(train_set);
  end_to_end(train_set, test_set);
  contamination_direction();
  determinism();
  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
