#include "cli.hpp"

#include "cozad/config.hpp"
#include "cozad/confident.hpp"
#include "cozad/errors.hpp"
#include "cozad/eval.hpp"
#include "cozad/feature_io.hpp"
#include "cozad/meta.hpp"
#include "cozad/model.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace cozad::cli {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

/// defaults < config file (--config, else $COZAD_CONFIG) < --set overrides
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig config;
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("COZAD_CONFIG"); env != nullptr) path = env;
  }
  if (!path.empty()) config = load_config_file(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

std::string confidence_csv(const ConfidenceState& state) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "index,score,weight,tau,epoch\n";
  for (std::size_t i = 0; i < state.weights.size(); ++i) {
    out << i << ',' << state.scores[i] << ',' << state.weights[i] << ',' << state.tau << ','
        << state.last_refresh_epoch << '\n';
  }
  return out.str();
}

void check_dims(const ModelParams& params, const FeatureDataset& data) {
  if (static_cast<std::int64_t>(data.feat_dim) != params.feat_dim()) {
    throw ContractError("dimension mismatch: checkpoint feat_dim=" +
                        std::to_string(params.feat_dim()) +
                        " but data feat_dim=" + std::to_string(data.feat_dim));
  }
}

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string report;
  std::string confidence_dump;
  std::optional<std::size_t> epochs;
  bool no_confident = false;
  bool no_meta = false;
  bool no_contrastive = false;
};

struct ScoreArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string maps;
  std::optional<double> smooth_sigma;
  std::optional<std::size_t> map_size;
};

struct InspectArgs {
  std::string file;
  std::string data;
  std::string confidence_out;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file (default: $COZAD_CONFIG)");
  cmd->add_option("--set", args.overrides, "Override one config key, as key=value")
      ->take_all()
      ->allow_extra_args(false);
  cmd->add_option("--seed", args.seed, "Seed for every random stream");
  cmd->add_option("--threads", args.threads, "Worker threads for scoring")->check(CLI::PositiveNumber);
}

RunConfig config_from(const ConfigArgs& args) {
  RunConfig config = resolve_config(args.config_path, args.overrides);
  if (args.seed) config.train.meta.seed = *args.seed;
  if (args.threads) config.threads = *args.threads;
  return config;
}

int cmd_synth_gen(const SynthArgs& args, std::ostream& out) {
  const FeatureDataset d = synth_generate(args.cfg);
  write_feature_file(d, args.out);
  out << "wrote " << args.out << ": images=" << d.n_images << " (normal=" << args.cfg.n_normal
      << ", anomalous=" << args.cfg.n_anomalous << ") grid=" << d.grid_h << "x" << d.grid_w
      << " feat_dim=" << d.feat_dim << " seed=" << args.cfg.seed << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args, const ConfigArgs& cargs, std::ostream& out) {
  RunConfig config = config_from(cargs);
  if (args.epochs) set_config_value(config, "epochs", std::to_string(*args.epochs));
  if (args.no_confident) config.train.components.use_confident = false;
  if (args.no_meta) config.train.components.use_meta = false;
  if (args.no_contrastive) config.train.components.use_contrastive = false;
  config.train_path = args.data;
  config.checkpoint_path = args.out;
  config.report_path = args.report.empty() ? args.out + ".json" : args.report;
  config.train.validate();

  const FeatureDataset data = read_feature_file(args.data);
  if (data.has_anomaly_labels()) {
    throw ContractError("training file " + args.data + " contains labeled anomalies");
  }
  TrainResult result = train(data, config.train);
  write_checkpoint({result.params, result.adam}, config.checkpoint_path);
  result.report.checkpoint_path = config.checkpoint_path;
  result.report.config_echo = echo_config(config);
  write_text(config.report_path, report_to_json(result.report));

  if (!args.confidence_dump.empty()) {
    const ConfidenceState state =
        config.train.components.use_confident
            ? result.confidence
            : refresh_confidence(result.confidence, result.params, data,
                                 static_cast<int>(config.train.meta.epochs));
    write_text(args.confidence_dump, confidence_csv(state));
  }
  const auto& last = result.report.epochs.back();
  out << "trained " << config.train.meta.epochs << " epochs on " << data.n_patches()
      << " patches: final train_loss=" << last.train_loss << " val_loss=" << last.val_loss
      << "\nwrote " << config.checkpoint_path << " and " << config.report_path << "\n";
  return kExitOk;
}

ScoreReport score_with(const ScoreArgs& args, const RunConfig& config, FeatureDataset& data,
                       MapConfig& map_cfg) {
  const Checkpoint ck = read_checkpoint(args.model);
  data = read_feature_file(args.data);
  check_dims(ck.params, data);
  map_cfg = config.map;
  if (args.smooth_sigma) map_cfg.smooth_sigma = *args.smooth_sigma;
  if (args.map_size) map_cfg.map_size = *args.map_size;
  return evaluate(ck.params, data, map_cfg, config.threads);
}

int cmd_score(const ScoreArgs& args, const ConfigArgs& cargs, std::ostream& out) {
  const RunConfig config = config_from(cargs);
  FeatureDataset data;
  MapConfig map_cfg;
  const ScoreReport report = score_with(args, config, data, map_cfg);
  write_text(args.out, image_scores_csv(report));
  out << "scored " << report.image_scores.size() << " images -> " << args.out << "\n";
  if (!args.maps.empty()) {
    write_feature_file(maps_as_dataset(report, data, map_cfg), args.maps);
    out << "wrote anomaly maps -> " << args.maps << "\n";
  }
  return kExitOk;
}

int cmd_eval(const ScoreArgs& args, const ConfigArgs& cargs, std::ostream& out) {
  const RunConfig config = config_from(cargs);
  FeatureDataset data;
  MapConfig map_cfg;
  const ScoreReport report = score_with(args, config, data, map_cfg);
  const std::string json = score_report_json(report);
  if (args.out.empty()) {
    out << json;
    return kExitOk;
  }
  write_text(args.out, json);
  out << std::setprecision(6) << "i_auroc="
      << (report.i_auroc ? std::to_string(*report.i_auroc) : report.i_auroc_status)
      << " p_auroc=" << (report.p_auroc ? std::to_string(*report.p_auroc) : report.p_auroc_status)
      << "\nwrote " << args.out << "\n";
  return kExitOk;
}

int cmd_inspect(const InspectArgs& args, std::ostream& out) {
  std::ifstream in(args.file, std::ios::binary);
  if (!in) throw IoError("cannot open " + args.file);
  char magic[4] = {};
  in.read(magic, 4);
  const std::string tag(magic, static_cast<std::size_t>(in.gcount()));
  if (tag == "COZF") {
    const FeatureDataset d = read_feature_file(args.file);
    std::size_t anomalous = 0;
    if (d.image_labels) {
      for (auto l : *d.image_labels) anomalous += l;
    }
    out << "COZF v1\nn_images: " << d.n_images << "\ngrid: " << d.grid_h << "x" << d.grid_w
        << "\nfeat_dim: " << d.feat_dim << "\nlabels: " << (d.image_labels ? "yes" : "no")
        << "\nmasks: " << (d.pixel_masks ? "yes" : "no") << "\nanomalous_images: " << anomalous
        << "\nmeta: " << d.meta << "\n";
    return kExitOk;
  }
  if (tag == "COZM") {
    const Checkpoint ck = read_checkpoint(args.file);
    out << "COZM v1\nfeat_dim: " << ck.params.feat_dim()
        << "\nadapted_dim: " << ck.params.adapted_dim()
        << "\nhidden_dim: " << ck.params.hidden_dim()
        << "\nleaky_slope: " << ck.params.leaky_slope
        << "\noptimizer_state: " << (ck.adam ? "yes" : "no");
    if (ck.adam) out << "\nadam_step: " << ck.adam->step;
    out << "\n";
    if (!args.data.empty()) {
      const FeatureDataset d = read_feature_file(args.data);
      check_dims(ck.params, d);
      ConfidenceState state;
      const std::string csv = confidence_csv(refresh_confidence(state, ck.params, d, 0));
      if (args.confidence_out.empty()) {
        out << csv;
      } else {
        write_text(args.confidence_out, csv);
        out << "wrote confidence table -> " << args.confidence_out << "\n";
      }
    }
    return kExitOk;
  }
  throw FormatError(args.file + ": not a COZF or COZM file");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CoZAD zero-shot anomaly detection engine", "cozad"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate a synthetic COZF feature dataset");
  synth_cmd->add_option("--out", synth.out, "Output COZF path")->required();
  synth_cmd->add_option("--seed", synth.cfg.seed, "Seed (cluster centers)");
  synth_cmd->add_option("--stream", synth.cfg.sample_stream, "Sample stream (e.g. 0 train, 1 test)");
  synth_cmd->add_option("--n-normal", synth.cfg.n_normal);
  synth_cmd->add_option("--n-anomalous", synth.cfg.n_anomalous);
  synth_cmd->add_option("--feat-dim", synth.cfg.feat_dim);
  synth_cmd->add_option("--grid-h", synth.cfg.grid_h);
  synth_cmd->add_option("--grid-w", synth.cfg.grid_w);
  synth_cmd->add_option("--n-clusters", synth.cfg.n_clusters);
  synth_cmd->add_option("--anomaly-shift", synth.cfg.anomaly_shift);
  synth_cmd->add_option("--noise-std", synth.cfg.noise_std);
  synth_cmd->add_option("--intrinsic-dim", synth.cfg.intrinsic_dim,
                        "Rank of each cluster's spread (0: all directions)");
  synth_cmd->add_option("--contamination", synth.cfg.contamination,
                        "Fraction of normal-labeled patches that are unlabeled anomalies");

  TrainArgs train_args;
  ConfigArgs train_cfg;
  auto* train_cmd = app.add_subcommand("train", "Train on an all-normal COZF file");
  train_cmd->add_option("--data", train_args.data, "Training COZF file")->required();
  train_cmd->add_option("--out", train_args.out, "Output COZM checkpoint")->required();
  train_cmd->add_option("--report", train_args.report, "Report JSON (default: <out>.json)");
  train_cmd->add_option("--confidence-dump", train_args.confidence_dump,
                        "CSV of final confidence weights");
  train_cmd->add_option("--epochs", train_args.epochs);
  train_cmd->add_flag("--no-confident", train_args.no_confident, "Disable soft confident learning");
  train_cmd->add_flag("--no-meta", train_args.no_meta, "Disable meta-learning");
  train_cmd->add_flag("--no-contrastive", train_args.no_contrastive, "Disable the contrastive loss");
  add_config_options(train_cmd, train_cfg);

  ScoreArgs score_args;
  ConfigArgs score_cfg;
  auto* score_cmd = app.add_subcommand("score", "Write per-image anomaly scores");
  score_cmd->add_option("--model", score_args.model, "COZM checkpoint")->required();
  score_cmd->add_option("--data", score_args.data, "COZF file to score")->required();
  score_cmd->add_option("--out", score_args.out, "Per-image score CSV")->required();
  score_cmd->add_option("--maps", score_args.maps, "Optional anomaly-map dump (COZF)");
  score_cmd->add_option("--smooth-sigma", score_args.smooth_sigma);
  score_cmd->add_option("--map-size", score_args.map_size);
  add_config_options(score_cmd, score_cfg);

  ScoreArgs eval_args;
  ConfigArgs eval_cfg;
  auto* eval_cmd = app.add_subcommand("eval", "Compute I-AUROC and P-AUROC");
  eval_cmd->add_option("--model", eval_args.model, "COZM checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data, "Labeled COZF file")->required();
  eval_cmd->add_option("--out", eval_args.out, "Report JSON (default: stdout)");
  eval_cmd->add_option("--smooth-sigma", eval_args.smooth_sigma);
  eval_cmd->add_option("--map-size", eval_args.map_size);
  add_config_options(eval_cmd, eval_cfg);

  InspectArgs inspect_args;
  auto* inspect_cmd = app.add_subcommand("inspect", "Describe a COZF or COZM file");
  inspect_cmd->add_option("file", inspect_args.file, "COZF or COZM file")->required();
  inspect_cmd->add_option("--data", inspect_args.data,
                          "With a checkpoint: COZF file for the confidence table");
  inspect_cmd->add_option("--confidence-out", inspect_args.confidence_out,
                          "Write the confidence table here instead of stdout");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'cozad --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth_gen(synth, out);
    if (*train_cmd) return cmd_train(train_args, train_cfg, out);
    if (*score_cmd) return cmd_score(score_args, score_cfg, out);
    if (*eval_cmd) return cmd_eval(eval_args, eval_cfg, out);
    if (*inspect_cmd) return cmd_inspect(inspect_args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cozad::cli
