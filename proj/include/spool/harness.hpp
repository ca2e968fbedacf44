#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spool/data.hpp"
#include "spool/network.hpp"
#include "spool/optim.hpp"
#include "spool/pooling.hpp"

namespace spool {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON on disk; schema in docs/config.md).

struct DatasetConfig {
  // digits            idx files when present, otherwise the built-in
  //                   synthetic digit corpus
  // mnist             idx files, required
  // cifar10/cifar100  binary batches, required
  // svhn              pre-converted 10-class records (convert-svhn)
  // blobs | synthetic-digits   always generated
  std::string name = "digits";
  std::string dir;  // dataset directory; "" = default search
  bool scale_unit = true;
  bool mean_subtract = false;
  bool lcn = false;
  std::size_t lcn_radius = 4;
  std::optional<double> lcn_floor;  // unset = auto
  std::size_t subsample_n = 0;      // training rows kept; 0 = all
  std::uint64_t subsample_seed = 1;
  std::size_t synthetic_train = 2000;  // generated-set sizes
  std::size_t synthetic_test = 1000;
  std::uint64_t synthetic_seed = 9001;
};

struct ExperimentConfig {
  DatasetConfig dataset;

  std::string preset = "desk-28";
  std::string inline_layers_json;  // JSON layer array; overrides preset
  std::size_t pool_window = 3;
  std::size_t pool_stride = 2;
  PoolingMode train_mode = PoolingMode::stochastic();
  PoolingMode test_mode = PoolingMode::prob_weight();
  bool response_norm = true;
  double init_std = 0.01;

  SgdHyper sgd;  // total_epochs is overwritten from `epochs`
  std::size_t epochs = 20;
  std::size_t batch = 50;
  std::uint64_t master_seed = 1;
  std::size_t checkpoint_every = 0;  // extra cadence; final always saved

  std::string out_dir = "runs/out";
  std::size_t threads = 1;
};

ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Data and network assembly.

struct PreparedData {
  Dataset train;
  Dataset test;
  Tensor4 mean_image;  // valid when has_mean
  bool has_mean = false;
};

// Loads (or generates), then applies the configured preprocessing chain:
// scale -> mean subtract -> lcn -> train-set subsample.
PreparedData prepare_data(const DatasetConfig& cfg);

NetworkSpec build_network(const ExperimentConfig& cfg, const Dataset& train);

// Stochastic and Stochastic-N nets report train error under prob-weight
// (their deterministic test-time form); deterministic modes report under
// themselves. Keeps a trained model's train error independent of the
// evaluation mode column.
PoolingMode canonical_eval_mode(const PoolingMode& train_mode);

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalOutcome {
  double error_pct = 0.0;
  std::size_t count = 0;
  std::vector<std::uint64_t> confusion;  // class_count x class_count row-major
};

// Deterministic for deterministic modes regardless of `stream`; stochastic
// and stochastic-N modes draw from per-slice substreams so the result is
// independent of thread count.
EvalOutcome evaluate_dataset(const NetworkSpec& spec,
                             const NetworkParams& params, const Dataset& data,
                             const PoolingMode& mode, RngStream stream,
                             std::size_t threads);

// ---------------------------------------------------------------------------
// Training.

struct MetricsRow {
  std::size_t epoch = 0;
  double train_error_pct = 0.0;
  double test_error_pct = 0.0;
  double train_loss = 0.0;
  double lr_conv = 0.0;
  double lr_softmax = 0.0;
  double wall_seconds = 0.0;  // emitted to timings.csv, not metrics.csv
};

struct TrainOutcome {
  Checkpoint final_checkpoint;
  std::vector<MetricsRow> history;
  std::string checkpoint_dir;
};

// Full training loop: per-epoch seeded shuffle, fixed-chunk batch gradients
// merged in chunk order (thread-count independent), momentum update,
// per-epoch train/test evaluation, incremental metrics.csv + timings.csv,
// checkpoints. `resume_dir` continues a run from its checkpoint.
TrainOutcome train_experiment(const ExperimentConfig& cfg,
                              const PreparedData& data,
                              const std::string& resume_dir = "");

// ---------------------------------------------------------------------------
// Command entry points (wired to the CLI; reusable from tests).

int run_train(const ExperimentConfig& cfg, const std::string& resume_dir);

int run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir,
             const std::optional<PoolingMode>& mode_flag,
             std::optional<std::uint64_t> seed_flag);

int run_combo_matrix(const ExperimentConfig& cfg,
                     const std::vector<PoolingMode>& train_modes,
                     const std::vector<PoolingMode>& test_modes);

int run_sweep_pool_size(const ExperimentConfig& cfg,
                        const std::vector<std::size_t>& sizes);

int run_reduced_set(const ExperimentConfig& cfg,
                    const std::vector<std::size_t>& sizes);

struct VisualizeArgs {
  std::string checkpoint_dir;
  std::string image_path;  // SP4T tensor, one row used
  std::string sources = "ff";  // comma list per pool layer, or one for all
  std::size_t grid = 4;
  std::size_t from_layer = static_cast<std::size_t>(-1);  // default: top pool
  bool rectify = true;
  std::uint64_t seed = 1;
  std::string out_dir = "viz";
};

int run_visualize(const VisualizeArgs& args);

// ---------------------------------------------------------------------------
// Small shared utilities.

// Shortest round-trip decimal form (std::to_chars), locale-independent.
std::string format_double(double v);

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

std::vector<std::size_t> shuffled_indices(std::size_t count, RngStream stream);

PoolingMode pooling_mode_from_flag(const std::string& flag);

}  // namespace spool
