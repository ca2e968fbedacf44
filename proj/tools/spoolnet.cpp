// spoolnet: experiment driver for the stochastic-pooling network library.
// Subcommands cover training, evaluation, the train/test pooling-mode
// matrix, pooling-size and reduced-training-set sweeps, deconvolutional
// visualization, and the house-number raw-file converter.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spool/common.hpp"
#include "spool/data.hpp"
#include "spool/harness.hpp"

namespace {

spool::ExperimentConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return spool::ExperimentConfig{};
  return spool::load_config_file(config_path);
}

std::vector<spool::PoolingMode> parse_mode_list(const std::string& csv) {
  std::vector<spool::PoolingMode> modes;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) modes.push_back(spool::parse_pooling_mode(tok));
  return modes;
}

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "experiment config (JSON)");
    cmd->add_option("--out", out, "output directory (overrides config)");
    cmd->add_option("--seed", seed, "master seed (overrides config)");
    cmd->add_option("--threads", threads, "worker threads (overrides config)");
  }

  spool::ExperimentConfig resolve() const {
    spool::ExperimentConfig cfg = load_or_default(config);
    if (!out.empty()) cfg.out_dir = out;
    if (seed) cfg.master_seed = *seed;
    if (threads) cfg.threads = *threads;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic-pooling network experiments"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string train_resume;
  CLI::App* train = app.add_subcommand("train", "train a network");
  train_flags.attach(train);
  train->add_option("--resume", train_resume, "checkpoint directory to continue");

  CommonFlags eval_flags;
  std::string eval_checkpoint, eval_mode;
  std::optional<std::uint64_t> eval_seed;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")
      ->required();
  eval->add_option("--mode", eval_mode,
                   "pooling mode (avg|max|stochastic|stochastic-N|prob-weight)");

  CommonFlags combo_flags;
  std::string combo_train = "avg,max,stochastic,prob-weight";
  std::string combo_test = "avg,max,stochastic,prob-weight";
  CLI::App* combo = app.add_subcommand(
      "combo-matrix", "train under each mode, evaluate under every mode");
  combo_flags.attach(combo);
  combo->add_option("--train-modes", combo_train, "comma list of train modes");
  combo->add_option("--test-modes", combo_test, "comma list of test modes");

  CommonFlags sweep_flags;
  std::vector<std::size_t> sweep_sizes = {2, 3, 4};
  CLI::App* sweep = app.add_subcommand("sweep-pool-size",
                                       "train avg/max/stochastic per pool size");
  sweep_flags.attach(sweep);
  sweep->add_option("--sizes", sweep_sizes, "pooling window sizes")
      ->delimiter(',');

  CommonFlags reduced_flags;
  std::vector<std::size_t> reduced_sizes = {500, 1000};
  CLI::App* reduced = app.add_subcommand(
      "reduced-set", "train avg/max/stochastic per training-set size");
  reduced_flags.attach(reduced);
  reduced->add_option("--sizes", reduced_sizes, "training-set sizes")
      ->delimiter(',');

  spool::VisualizeArgs viz;
  CLI::App* visualize =
      app.add_subcommand("visualize", "deconvolutional reconstructions");
  visualize->add_option("--checkpoint", viz.checkpoint_dir, "checkpoint directory")
      ->required();
  visualize->add_option("--image", viz.image_path, "input tensor (SP4T)")
      ->required();
  visualize->add_option("--sources", viz.sources,
                        "switch sources per pool layer: rec|ff|un, comma list");
  visualize->add_option("--grid", viz.grid, "montage grid side");
  visualize->add_option("--from-layer", viz.from_layer,
                        "layer whose output seeds the walk (default: top pool)");
  visualize->add_flag("--rectify,!--no-rectify", viz.rectify,
                      "clamp negatives at rectifier stages (default on)");
  visualize->add_option("--seed", viz.seed, "resampling seed");
  visualize->add_option("--out", viz.out_dir, "output directory");

  std::string svhn_images, svhn_labels, svhn_out;
  CLI::App* svhn = app.add_subcommand(
      "convert-svhn", "convert raw house-number bytes to loadable records");
  svhn->add_option("--images", svhn_images, "raw 32x32 RGB interleaved file")
      ->required();
  svhn->add_option("--labels", svhn_labels, "raw label bytes (1..10)")
      ->required();
  svhn->add_option("--out-file", svhn_out, "output record file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return spool::run_train(train_flags.resolve(), train_resume);
    if (*eval) {
      std::optional<spool::PoolingMode> mode;
      if (!eval_mode.empty()) mode = spool::parse_pooling_mode(eval_mode);
      return spool::run_eval(eval_flags.resolve(), eval_checkpoint, mode,
                             eval_flags.seed);
    }
    if (*combo)
      return spool::run_combo_matrix(combo_flags.resolve(),
                                     parse_mode_list(combo_train),
                                     parse_mode_list(combo_test));
    if (*sweep)
      return spool::run_sweep_pool_size(sweep_flags.resolve(), sweep_sizes);
    if (*reduced)
      return spool::run_reduced_set(reduced_flags.resolve(), reduced_sizes);
    if (*visualize) return spool::run_visualize(viz);
    if (*svhn) {
      spool::convert_svhn_raw(svhn_images, svhn_labels, svhn_out);
      std::cout << "wrote " << svhn_out << "\n";
      return 0;
    }
  } catch (const spool::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const spool::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const spool::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
