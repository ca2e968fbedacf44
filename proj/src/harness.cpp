#include "spool/harness.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "spool/common.hpp"
#include "spool/deconviz.hpp"

namespace spool {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Utilities

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<std::size_t> shuffled_indices(std::size_t count, RngStream stream) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  for (std::size_t i = count; i-- > 1;)
    std::swap(idx[i], idx[stream.next_below(i + 1)]);
  return idx;
}

PoolingMode pooling_mode_from_flag(const std::string& flag) {
  return parse_pooling_mode(flag);
}

PoolingMode canonical_eval_mode(const PoolingMode& train_mode) {
  if (train_mode.kind == PoolingModeKind::Stochastic ||
      train_mode.kind == PoolingModeKind::StochasticN)
    return PoolingMode::prob_weight();
  return train_mode;
}

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  if (!j.is_object())
    throw ConfigError(std::string("config: ") + where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string("config: unknown key \"") + item.key() +
                        "\" in " + where);
  }
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    check_keys(j, {"dataset", "network", "optimizer", "train", "output"},
               "top level");
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      check_keys(d,
                 {"name", "dir", "scale_unit", "mean_subtract", "lcn",
                  "lcn_radius", "lcn_floor", "subsample", "synthetic"},
                 "dataset");
      DatasetConfig& dc = cfg.dataset;
      dc.name = d.value("name", dc.name);
      dc.dir = d.value("dir", dc.dir);
      dc.scale_unit = d.value("scale_unit", dc.scale_unit);
      dc.mean_subtract = d.value("mean_subtract", dc.mean_subtract);
      dc.lcn = d.value("lcn", dc.lcn);
      dc.lcn_radius = d.value("lcn_radius", dc.lcn_radius);
      if (d.contains("lcn_floor") && !d["lcn_floor"].is_null())
        dc.lcn_floor = d["lcn_floor"].get<double>();
      if (d.contains("subsample")) {
        check_keys(d["subsample"], {"n", "seed"}, "dataset.subsample");
        dc.subsample_n = d["subsample"].value("n", dc.subsample_n);
        dc.subsample_seed = d["subsample"].value("seed", dc.subsample_seed);
      }
      if (d.contains("synthetic")) {
        check_keys(d["synthetic"], {"train", "test", "seed"},
                   "dataset.synthetic");
        dc.synthetic_train = d["synthetic"].value("train", dc.synthetic_train);
        dc.synthetic_test = d["synthetic"].value("test", dc.synthetic_test);
        dc.synthetic_seed = d["synthetic"].value("seed", dc.synthetic_seed);
      }
    }
    if (j.contains("network")) {
      const json& n = j["network"];
      check_keys(n, {"preset", "layers", "pool", "response_norm", "init_std"},
                 "network");
      cfg.preset = n.value("preset", cfg.preset);
      if (n.contains("layers")) cfg.inline_layers_json = n["layers"].dump();
      if (n.contains("pool")) {
        check_keys(n["pool"], {"window", "stride", "train", "test"},
                   "network.pool");
        cfg.pool_window = n["pool"].value("window", cfg.pool_window);
        cfg.pool_stride = n["pool"].value("stride", cfg.pool_stride);
        if (n["pool"].contains("train"))
          cfg.train_mode =
              parse_pooling_mode(n["pool"]["train"].get<std::string>());
        if (n["pool"].contains("test"))
          cfg.test_mode =
              parse_pooling_mode(n["pool"]["test"].get<std::string>());
      }
      cfg.response_norm = n.value("response_norm", cfg.response_norm);
      cfg.init_std = n.value("init_std", cfg.init_std);
    }
    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      check_keys(o, {"momentum", "weight_decay", "lr_conv", "lr_softmax"},
                 "optimizer");
      cfg.sgd.momentum = o.value("momentum", cfg.sgd.momentum);
      cfg.sgd.weight_decay = o.value("weight_decay", cfg.sgd.weight_decay);
      cfg.sgd.lr_conv = o.value("lr_conv", cfg.sgd.lr_conv);
      cfg.sgd.lr_softmax = o.value("lr_softmax", cfg.sgd.lr_softmax);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"epochs", "batch", "seed", "checkpoint_every", "threads"},
                 "train");
      cfg.epochs = t.value("epochs", cfg.epochs);
      cfg.batch = t.value("batch", cfg.batch);
      cfg.master_seed = t.value("seed", cfg.master_seed);
      cfg.checkpoint_every = t.value("checkpoint_every", cfg.checkpoint_every);
      cfg.threads = t.value("threads", cfg.threads);
    }
    if (j.contains("output")) {
      check_keys(j["output"], {"dir"}, "output");
      cfg.out_dir = j["output"].value("dir", cfg.out_dir);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.epochs == 0 || cfg.batch == 0)
    throw ConfigError("config: epochs and batch must be > 0");
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_json(text.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  json d;
  d["name"] = cfg.dataset.name;
  d["dir"] = cfg.dataset.dir;
  d["scale_unit"] = cfg.dataset.scale_unit;
  d["mean_subtract"] = cfg.dataset.mean_subtract;
  d["lcn"] = cfg.dataset.lcn;
  d["lcn_radius"] = cfg.dataset.lcn_radius;
  if (cfg.dataset.lcn_floor)
    d["lcn_floor"] = *cfg.dataset.lcn_floor;
  else
    d["lcn_floor"] = nullptr;
  d["subsample"] = {{"n", cfg.dataset.subsample_n},
                    {"seed", cfg.dataset.subsample_seed}};
  d["synthetic"] = {{"train", cfg.dataset.synthetic_train},
                    {"test", cfg.dataset.synthetic_test},
                    {"seed", cfg.dataset.synthetic_seed}};
  j["dataset"] = d;

  json n;
  n["preset"] = cfg.preset;
  if (!cfg.inline_layers_json.empty())
    n["layers"] = json::parse(cfg.inline_layers_json);
  n["pool"] = {{"window", cfg.pool_window},
               {"stride", cfg.pool_stride},
               {"train", pooling_mode_name(cfg.train_mode)},
               {"test", pooling_mode_name(cfg.test_mode)}};
  n["response_norm"] = cfg.response_norm;
  n["init_std"] = cfg.init_std;
  j["network"] = n;

  j["optimizer"] = {{"momentum", cfg.sgd.momentum},
                    {"weight_decay", cfg.sgd.weight_decay},
                    {"lr_conv", cfg.sgd.lr_conv},
                    {"lr_softmax", cfg.sgd.lr_softmax}};
  j["train"] = {{"epochs", cfg.epochs},
                {"batch", cfg.batch},
                {"seed", cfg.master_seed},
                {"checkpoint_every", cfg.checkpoint_every},
                {"threads", cfg.threads}};
  j["output"] = {{"dir", cfg.out_dir}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Data

namespace {

bool file_exists(const fs::path& p) {
  std::error_code ec;
  return fs::exists(p, ec);
}

std::string dataset_dir(const DatasetConfig& cfg, const char* env,
                        const char* fallback) {
  if (!cfg.dir.empty()) return cfg.dir;
  if (const char* v = std::getenv(env)) return v;
  return fallback;
}

Dataset load_mnist_dir(const std::string& dir, bool train_split) {
  const fs::path base(dir);
  const fs::path img =
      base / (train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte");
  const fs::path lab =
      base / (train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte");
  return load_idx(img.string(), lab.string());
}

bool mnist_dir_complete(const std::string& dir) {
  const fs::path base(dir);
  return file_exists(base / "train-images-idx3-ubyte") &&
         file_exists(base / "train-labels-idx1-ubyte") &&
         file_exists(base / "t10k-images-idx3-ubyte") &&
         file_exists(base / "t10k-labels-idx1-ubyte");
}

}  // namespace

PreparedData prepare_data(const DatasetConfig& cfg) {
  PreparedData out;
  if (cfg.name == "blobs") {
    out.train = make_blobs(cfg.synthetic_train, cfg.synthetic_seed);
    out.test = make_blobs(cfg.synthetic_test, cfg.synthetic_seed + 1);
  } else if (cfg.name == "synthetic-digits") {
    make_synthetic_digits(cfg.synthetic_train, cfg.synthetic_test,
                          cfg.synthetic_seed, out.train, out.test);
  } else if (cfg.name == "digits") {
    const std::string dir = dataset_dir(cfg, "SPOOLNET_MNIST_DIR", "data/mnist");
    if (mnist_dir_complete(dir)) {
      out.train = load_mnist_dir(dir, true);
      out.test = load_mnist_dir(dir, false);
    } else {
      std::cerr << "[data] no idx files under \"" << dir
                << "\"; using the built-in synthetic digit corpus\n";
      make_synthetic_digits(cfg.synthetic_train, cfg.synthetic_test,
                            cfg.synthetic_seed, out.train, out.test);
    }
  } else if (cfg.name == "mnist") {
    const std::string dir = dataset_dir(cfg, "SPOOLNET_MNIST_DIR", "data/mnist");
    if (!mnist_dir_complete(dir))
      throw DataError("mnist: idx files not found under \"" + dir + "\"");
    out.train = load_mnist_dir(dir, true);
    out.test = load_mnist_dir(dir, false);
  } else if (cfg.name == "cifar10") {
    const std::string dir = dataset_dir(cfg, "SPOOLNET_CIFAR_DIR", "data/cifar10");
    std::vector<std::string> train_files;
    for (int b = 1; b <= 5; ++b)
      train_files.push_back((fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string());
    out.train = load_cifar_binary(train_files, 10);
    out.test = load_cifar_binary({(fs::path(dir) / "test_batch.bin").string()}, 10);
  } else if (cfg.name == "cifar100") {
    const std::string dir = dataset_dir(cfg, "SPOOLNET_CIFAR100_DIR", "data/cifar100");
    out.train = load_cifar_binary({(fs::path(dir) / "train.bin").string()}, 100);
    out.test = load_cifar_binary({(fs::path(dir) / "test.bin").string()}, 100);
  } else if (cfg.name == "svhn") {
    const std::string dir = dataset_dir(cfg, "SPOOLNET_SVHN_DIR", "data/svhn");
    out.train = load_cifar_binary({(fs::path(dir) / "train.cifarbin").string()}, 10);
    out.test = load_cifar_binary({(fs::path(dir) / "test.cifarbin").string()}, 10);
  } else {
    throw ConfigError("dataset: unknown name \"" + cfg.name + "\"");
  }

  if (cfg.scale_unit) {
    out.train = scale_unit(std::move(out.train));
    out.test = scale_unit(std::move(out.test));
  }
  if (cfg.mean_subtract) {
    MeanSubtracted ms =
        per_pixel_mean_subtract({std::move(out.train), std::move(out.test)});
    out.train = std::move(ms.splits[0]);
    out.test = std::move(ms.splits[1]);
    out.mean_image = std::move(ms.mean_image);
    out.has_mean = true;
  }
  if (cfg.lcn) {
    out.train = local_contrast_normalize(std::move(out.train), cfg.lcn_radius,
                                         cfg.lcn_floor);
    out.test = local_contrast_normalize(std::move(out.test), cfg.lcn_radius,
                                        cfg.lcn_floor);
  }
  if (cfg.subsample_n > 0 && cfg.subsample_n < out.train.size())
    out.train = subsample(out.train, cfg.subsample_n, cfg.subsample_seed);
  return out;
}

NetworkSpec build_network(const ExperimentConfig& cfg, const Dataset& train) {
  const Shape4& s = train.images.shape();
  if (!cfg.inline_layers_json.empty()) {
    json wrap;
    wrap["input"] = {{"c", s.c}, {"h", s.h}, {"w", s.w}};
    wrap["layers"] = json::parse(cfg.inline_layers_json);
    NetworkSpec spec = network_spec_from_json(wrap.dump());
    if (spec.classes() != train.class_count)
      throw ConfigError("network: softmax has " +
                        std::to_string(spec.classes()) + " classes, dataset " +
                        std::to_string(train.class_count));
    return spec;
  }
  return make_preset(cfg.preset, s.c, s.h, s.w, train.class_count,
                     cfg.train_mode, cfg.test_mode, cfg.response_norm,
                     cfg.pool_window, cfg.pool_stride);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

constexpr std::size_t kEvalSlice = 256;

int argmax_class(const Tensor4& probs, std::size_t row) {
  const std::size_t classes = probs.shape().c;
  int best = 0;
  double best_v = probs(row, 0, 0, 0);
  for (std::size_t c = 1; c < classes; ++c)
    if (probs(row, c, 0, 0) > best_v) {
      best_v = probs(row, c, 0, 0);
      best = static_cast<int>(c);
    }
  return best;
}

}  // namespace

EvalOutcome evaluate_dataset(const NetworkSpec& spec,
                             const NetworkParams& params, const Dataset& data,
                             const PoolingMode& mode, RngStream stream,
                             std::size_t threads) {
  const std::size_t n = data.size();
  const std::size_t classes = spec.classes();
  if (data.class_count != classes)
    throw std::invalid_argument("evaluate: dataset has " +
                                std::to_string(data.class_count) +
                                " classes, network " + std::to_string(classes));
  EvalOutcome out;
  out.count = n;
  out.confusion.assign(classes * classes, 0);
  if (n == 0) return out;

  const std::size_t slices = (n + kEvalSlice - 1) / kEvalSlice;
  std::vector<int> preds(n, -1);
  parallel_for(slices, threads, [&](std::size_t si) {
    const std::size_t b0 = si * kEvalSlice;
    const std::size_t b1 = std::min(n, b0 + kEvalSlice);
    const Tensor4 slice = data.images.batch_slice(b0, b1);
    RngStream ss = stream.substream(si);
    Tensor4 probs;
    if (mode.kind == PoolingModeKind::Stochastic ||
        mode.kind == PoolingModeKind::StochasticN) {
      const int samples =
          mode.kind == PoolingModeKind::StochasticN ? mode.sample_count : 1;
      probs = predict_stochastic_n(spec, params, slice, samples, ss);
    } else {
      ForwardOptions opts;
      opts.mode_override = mode;
      RngStream unused(0);
      probs = network_predict(spec, params, slice, Phase::Test, unused, opts);
    }
    for (std::size_t r = 0; r < b1 - b0; ++r)
      preds[b0 + r] = argmax_class(probs, r);
  });

  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = data.labels[i];
    out.confusion[static_cast<std::size_t>(label) * classes +
                  static_cast<std::size_t>(preds[i])]++;
    if (preds[i] != label) ++wrong;
  }
  out.error_pct = 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

bool grads_all_finite(const std::vector<LayerGrads>& grads) {
  for (const LayerGrads& g : grads) {
    if (g.filters.size() > 0 && !g.filters.all_finite()) return false;
    for (double b : g.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

void write_csv_header(std::ofstream& out, const char* header) {
  out << header << "\n";
  out.flush();
}

Tensor4 gather_rows(const Tensor4& images, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end) {
  const Shape4& s = images.shape();
  Tensor4 out(end - begin, s.c, s.h, s.w);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t i = begin; i < end; ++i)
    std::copy_n(images.data() + order[i] * per, per,
                out.data() + (i - begin) * per);
  return out;
}

}  // namespace

TrainOutcome train_experiment(const ExperimentConfig& cfg,
                              const PreparedData& data,
                              const std::string& resume_dir) {
  const NetworkSpec spec = build_network(cfg, data.train);
  SgdHyper hyper = cfg.sgd;
  hyper.total_epochs = cfg.epochs;

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream echo(fs::path(cfg.out_dir) / "config.json");
    echo << config_to_json(cfg) << "\n";
  }
  if (data.has_mean)
    data.mean_image.save_file((fs::path(cfg.out_dir) / "mean_image.sp4t").string());

  NetworkParams params;
  SgdState state;
  std::size_t start_epoch = 0;
  if (resume_dir.empty()) {
    params = init_params(spec, RngStream(cfg.master_seed).substream(rng_tags::kInit),
                         cfg.init_std);
    state = SgdState::make(hyper, params);
  } else {
    Checkpoint cp = load_checkpoint(resume_dir);
    if (network_spec_hash(cp.spec) != network_spec_hash(spec))
      throw ConfigError("resume: checkpoint network differs from config");
    if (cp.master_seed != cfg.master_seed)
      throw ConfigError("resume: checkpoint seed " +
                        std::to_string(cp.master_seed) + " != config seed " +
                        std::to_string(cfg.master_seed));
    if (cp.epoch >= cfg.epochs)
      throw ConfigError("resume: checkpoint already covers " +
                        std::to_string(cp.epoch) + " epochs");
    params = std::move(cp.params);
    state.hyper = hyper;
    state.velocity = std::move(cp.velocity);
    start_epoch = cp.epoch;
  }

  const RngStream master(cfg.master_seed);
  const RngStream train_root = master.substream(rng_tags::kTrain);
  const RngStream shuffle_root = master.substream(rng_tags::kShuffle);
  const RngStream eval_root = master.substream(rng_tags::kEval);
  const PoolingMode train_eval_mode = canonical_eval_mode(cfg.train_mode);

  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.csv");
  std::ofstream timings(fs::path(cfg.out_dir) / "timings.csv");
  if (!metrics || !timings)
    throw DataError("cannot write metrics under " + cfg.out_dir);
  write_csv_header(
      metrics, "epoch,train_error_pct,test_error_pct,train_loss,lr_conv,lr_softmax");
  write_csv_header(timings, "epoch,wall_clock_seconds");

  const std::size_t n = data.train.size();
  if (n == 0) throw ConfigError("train: empty training set");

  const auto save_point = [&](std::uint64_t completed, const std::string& name) {
    Checkpoint cp;
    cp.spec = spec;
    cp.params = params;
    cp.velocity = state.velocity;
    cp.epoch = completed;
    cp.master_seed = cfg.master_seed;
    const std::string dir = (fs::path(cfg.out_dir) / name).string();
    save_checkpoint(cp, dir);
    std::ofstream echo(fs::path(dir) / "config.json");
    echo << config_to_json(cfg) << "\n";
    if (data.has_mean)
      data.mean_image.save_file((fs::path(dir) / "mean_image.sp4t").string());
    return dir;
  };

  TrainOutcome outcome;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order =
        shuffled_indices(n, shuffle_root.substream(epoch));
    const RngStream epoch_stream = train_root.substream(epoch);

    double loss_accum = 0.0;
    std::size_t batches = 0;
    for (std::size_t offset = 0, batch_index = 0; offset < n;
         offset += cfg.batch, ++batch_index) {
      const std::size_t bs = std::min(cfg.batch, n - offset);
      const Tensor4 batch = gather_rows(data.train.images, order, offset, offset + bs);
      std::vector<int> labels(bs);
      for (std::size_t i = 0; i < bs; ++i)
        labels[i] = data.train.labels[order[offset + i]];

      // Gradients come from a fixed number of chunks merged in chunk order,
      // so the result is the same at any thread count.
      const RngStream batch_stream = epoch_stream.substream(batch_index);
      const std::size_t chunk_count = std::min<std::size_t>(bs, 8);
      std::vector<BackwardResult> chunk_out(chunk_count);
      parallel_for(chunk_count, cfg.threads, [&](std::size_t ci) {
        const std::size_t c0 = ci * bs / chunk_count;
        const std::size_t c1 = (ci + 1) * bs / chunk_count;
        const Tensor4 chunk = batch.batch_slice(c0, c1);
        const std::vector<int> chunk_labels(labels.begin() + c0,
                                            labels.begin() + c1);
        RngStream cs = batch_stream.substream(ci);
        const ForwardTrace trace =
            network_forward(spec, params, chunk, Phase::Train, cs);
        chunk_out[ci] =
            network_backward(spec, params, trace, chunk_labels, bs);
      });

      std::vector<LayerGrads> grads = zero_grads_like(params);
      double batch_loss = 0.0;
      for (std::size_t ci = 0; ci < chunk_count; ++ci) {
        accumulate_grads(grads, chunk_out[ci].layer);
        batch_loss += chunk_out[ci].loss;
      }
      if (!std::isfinite(batch_loss) || !grads_all_finite(grads)) {
        const std::string dir = save_point(epoch, "checkpoint-abort");
        throw NumericError("train: non-finite loss/gradient in epoch " +
                           std::to_string(epoch) +
                           "; last good state saved to " + dir);
      }
      momentum_step(state, spec, params, grads, epoch);
      loss_accum += batch_loss;
      ++batches;
    }

    const EvalOutcome train_eval = evaluate_dataset(
        spec, params, data.train, train_eval_mode,
        eval_root.substream(epoch).substream(1), cfg.threads);
    const EvalOutcome test_eval =
        evaluate_dataset(spec, params, data.test, cfg.test_mode,
                         eval_root.substream(epoch), cfg.threads);

    MetricsRow row;
    row.epoch = epoch;
    row.train_error_pct = train_eval.error_pct;
    row.test_error_pct = test_eval.error_pct;
    row.train_loss = loss_accum / static_cast<double>(batches);
    row.lr_conv = lr_at_epoch(hyper.lr_conv, epoch, cfg.epochs);
    row.lr_softmax = lr_at_epoch(hyper.lr_softmax, epoch, cfg.epochs);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    outcome.history.push_back(row);

    metrics << row.epoch << "," << format_double(row.train_error_pct) << ","
            << format_double(row.test_error_pct) << ","
            << format_double(row.train_loss) << ","
            << format_double(row.lr_conv) << ","
            << format_double(row.lr_softmax) << "\n";
    metrics.flush();
    timings << row.epoch << "," << format_double(row.wall_seconds) << "\n";
    timings.flush();

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      save_point(epoch + 1, "checkpoint-epoch-" + std::to_string(epoch + 1));
  }

  outcome.checkpoint_dir = save_point(cfg.epochs, "checkpoint-final");
  outcome.final_checkpoint.spec = spec;
  outcome.final_checkpoint.params = std::move(params);
  outcome.final_checkpoint.velocity = std::move(state.velocity);
  outcome.final_checkpoint.epoch = cfg.epochs;
  outcome.final_checkpoint.master_seed = cfg.master_seed;
  return outcome;
}

// ---------------------------------------------------------------------------
// Commands

int run_train(const ExperimentConfig& cfg, const std::string& resume_dir) {
  const PreparedData data = prepare_data(cfg.dataset);
  const TrainOutcome outcome = train_experiment(cfg, data, resume_dir);
  const MetricsRow& last = outcome.history.back();
  std::cout << "final epoch " << last.epoch
            << ": train_error_pct=" << format_double(last.train_error_pct)
            << " test_error_pct=" << format_double(last.test_error_pct)
            << " checkpoint=" << outcome.checkpoint_dir << "\n";
  return 0;
}

int run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir,
             const std::optional<PoolingMode>& mode_flag,
             std::optional<std::uint64_t> seed_flag) {
  if (checkpoint_dir.empty())
    throw ConfigError("eval: --checkpoint is required");
  const Checkpoint cp = load_checkpoint(checkpoint_dir);
  const PreparedData data = prepare_data(cfg.dataset);
  const PoolingMode mode = mode_flag ? *mode_flag : cfg.test_mode;
  const std::uint64_t seed = seed_flag ? *seed_flag : cp.master_seed;
  // Matches the stream of the training run's final logged test evaluation,
  // so stochastic evals reproduce the last metrics row.
  const RngStream stream = RngStream(seed)
                               .substream(rng_tags::kEval)
                               .substream(cp.epoch > 0 ? cp.epoch - 1 : 0);
  const EvalOutcome eval = evaluate_dataset(cp.spec, cp.params, data.test,
                                            mode, stream, cfg.threads);

  fs::create_directories(cfg.out_dir);
  std::ofstream conf(fs::path(cfg.out_dir) / "confusion.csv");
  const std::size_t classes = cp.spec.classes();
  conf << "label\\pred";
  for (std::size_t c = 0; c < classes; ++c) conf << "," << c;
  conf << "\n";
  for (std::size_t r = 0; r < classes; ++r) {
    conf << r;
    for (std::size_t c = 0; c < classes; ++c)
      conf << "," << eval.confusion[r * classes + c];
    conf << "\n";
  }
  std::cout << "mode=" << pooling_mode_name(mode)
            << " error_pct=" << format_double(eval.error_pct)
            << " count=" << eval.count << "\n";
  return 0;
}

int run_combo_matrix(const ExperimentConfig& cfg,
                     const std::vector<PoolingMode>& train_modes,
                     const std::vector<PoolingMode>& test_modes) {
  if (train_modes.empty() || test_modes.empty())
    throw ConfigError("combo-matrix: mode lists must be non-empty");
  const PreparedData data = prepare_data(cfg.dataset);
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "combo.csv");
  write_csv_header(csv, "train_mode,test_mode,train_error_pct,test_error_pct");

  for (const PoolingMode& tm : train_modes) {
    ExperimentConfig sub = cfg;
    sub.train_mode = tm;
    sub.test_mode = canonical_eval_mode(tm);
    sub.out_dir =
        (fs::path(cfg.out_dir) / ("train-" + pooling_mode_name(tm))).string();
    const TrainOutcome outcome = train_experiment(sub, data);
    const double train_err = outcome.history.back().train_error_pct;
    const Checkpoint& cp = outcome.final_checkpoint;
    for (const PoolingMode& em : test_modes) {
      const RngStream stream = RngStream(cfg.master_seed)
                                   .substream(rng_tags::kEval)
                                   .substream(cfg.epochs - 1);
      const EvalOutcome eval = evaluate_dataset(cp.spec, cp.params, data.test,
                                                em, stream, cfg.threads);
      csv << pooling_mode_name(tm) << "," << pooling_mode_name(em) << ","
          << format_double(train_err) << "," << format_double(eval.error_pct)
          << "\n";
      csv.flush();
      std::cout << "train=" << pooling_mode_name(tm)
                << " test=" << pooling_mode_name(em)
                << " train_error_pct=" << format_double(train_err)
                << " test_error_pct=" << format_double(eval.error_pct) << "\n";
    }
  }
  return 0;
}

int run_sweep_pool_size(const ExperimentConfig& cfg,
                        const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw ConfigError("sweep-pool-size: no sizes given");
  const PreparedData data = prepare_data(cfg.dataset);
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "sweep.csv");
  write_csv_header(csv, "pool_size,mode,status,train_error_pct,test_error_pct");

  const PoolingMode modes[] = {PoolingMode::average(), PoolingMode::max(),
                               PoolingMode::stochastic()};
  for (std::size_t size : sizes) {
    for (const PoolingMode& m : modes) {
      ExperimentConfig sub = cfg;
      sub.pool_window = size;
      sub.train_mode = m;
      sub.test_mode = canonical_eval_mode(m);
      sub.out_dir = (fs::path(cfg.out_dir) /
                     ("size-" + std::to_string(size) + "-" + pooling_mode_name(m)))
                        .string();
      std::string status = "ok";
      double train_err = 0.0, test_err = 0.0;
      try {
        build_network(sub, data.train);
      } catch (const ConfigError&) {
        status = "skipped";
      } catch (const std::invalid_argument&) {
        status = "skipped";  // size the layer stack itself rejects
      }
      if (status == "ok") {
        const TrainOutcome outcome = train_experiment(sub, data);
        train_err = outcome.history.back().train_error_pct;
        test_err = outcome.history.back().test_error_pct;
      }
      csv << size << "," << pooling_mode_name(m) << "," << status << ","
          << format_double(train_err) << "," << format_double(test_err) << "\n";
      csv.flush();
      std::cout << "size=" << size << " mode=" << pooling_mode_name(m)
                << " status=" << status
                << " train_error_pct=" << format_double(train_err)
                << " test_error_pct=" << format_double(test_err) << "\n";
    }
  }
  return 0;
}

int run_reduced_set(const ExperimentConfig& cfg,
                    const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw ConfigError("reduced-set: no sizes given");
  std::vector<std::size_t> sorted = sizes;
  std::sort(sorted.begin(), sorted.end());
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "reduced.csv");
  write_csv_header(csv, "n,mode,train_error_pct,test_error_pct");

  const PoolingMode modes[] = {PoolingMode::average(), PoolingMode::max(),
                               PoolingMode::stochastic()};
  for (std::size_t n : sorted) {
    ExperimentConfig base = cfg;
    base.dataset.subsample_n = n;
    const PreparedData data = prepare_data(base.dataset);
    for (const PoolingMode& m : modes) {
      ExperimentConfig sub = base;
      sub.train_mode = m;
      sub.test_mode = canonical_eval_mode(m);
      sub.out_dir = (fs::path(cfg.out_dir) /
                     ("n-" + std::to_string(n) + "-" + pooling_mode_name(m)))
                        .string();
      const TrainOutcome outcome = train_experiment(sub, data);
      csv << n << "," << pooling_mode_name(m) << ","
          << format_double(outcome.history.back().train_error_pct) << ","
          << format_double(outcome.history.back().test_error_pct) << "\n";
      csv.flush();
      std::cout << "n=" << n << " mode=" << pooling_mode_name(m)
                << " train_error_pct="
                << format_double(outcome.history.back().train_error_pct)
                << " test_error_pct="
                << format_double(outcome.history.back().test_error_pct) << "\n";
    }
  }
  return 0;
}

int run_visualize(const VisualizeArgs& args) {
  if (args.checkpoint_dir.empty() || args.image_path.empty())
    throw ConfigError("visualize: --checkpoint and --image are required");
  if (args.grid == 0) throw ConfigError("visualize: grid must be >= 1");
  const Checkpoint cp = load_checkpoint(args.checkpoint_dir);
  const Tensor4 stored = Tensor4::load_file(args.image_path);
  if (stored.shape().n == 0)
    throw DataError("visualize: empty image tensor");
  const Tensor4 image = stored.batch_slice(0, 1);

  std::size_t from_layer = args.from_layer;
  if (from_layer == static_cast<std::size_t>(-1)) {
    for (std::size_t i = 0; i < cp.spec.layers.size(); ++i)
      if (cp.spec.layers[i].kind == LayerKind::Pool) from_layer = i;
    if (from_layer == static_cast<std::size_t>(-1))
      throw ConfigError("visualize: network has no pool layer");
  }
  if (from_layer >= cp.spec.layers.size())
    throw ConfigError("visualize: layer index out of range");

  std::size_t pools = 0;
  for (std::size_t i = 0; i <= from_layer; ++i)
    if (cp.spec.layers[i].kind == LayerKind::Pool) ++pools;

  std::vector<SwitchSource> sources;
  {
    std::stringstream ss(args.sources);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) sources.push_back(parse_switch_source(tok));
  }
  if (sources.size() == 1 && pools > 1)
    sources.assign(pools, sources[0]);
  if (sources.size() != pools)
    throw ConfigError("visualize: " + std::to_string(pools) +
                      " pool layers need " + std::to_string(pools) +
                      " switch sources, got " + std::to_string(sources.size()));

  const RngStream root = RngStream(args.seed).substream(rng_tags::kViz);
  RngStream trace_stream = root.substream(0);
  ForwardOptions opts;
  opts.mode_override = PoolingMode::stochastic();
  const ForwardTrace trace = network_forward(cp.spec, cp.params, image,
                                             Phase::Test, trace_stream, opts);

  fs::create_directories(args.out_dir);
  ReconstructOptions ropts;
  ropts.rectify = args.rectify;
  const std::size_t tiles = args.grid * args.grid;
  std::vector<Tensor4> recons;
  recons.reserve(tiles);
  const std::string ext = image.shape().c == 3 ? ".ppm" : ".pgm";
  for (std::size_t t = 0; t < tiles; ++t) {
    RngStream tile_stream = root.substream(100 + t);
    Tensor4 recon = reconstruct(cp.spec, cp.params, trace, from_layer, sources,
                                tile_stream, ropts);
    char name[32];
    std::snprintf(name, sizeof name, "recon-%03zu", t);
    recon.save_file((fs::path(args.out_dir) / (std::string(name) + ".sp4t")).string());
    write_image((fs::path(args.out_dir) / (name + ext)).string(), recon);
    recons.push_back(std::move(recon));
  }
  write_image((fs::path(args.out_dir) / ("montage" + ext)).string(),
              montage(recons, args.grid));

  RngStream sim_stream = root.substream(7);
  const VizSimilarity sim = viz_similarity(cp.spec, cp.params, trace,
                                           from_layer, tiles < 2 ? 2 : tiles,
                                           sim_stream, ropts);
  std::ofstream sim_csv(fs::path(args.out_dir) / "similarity.csv");
  write_csv_header(sim_csv, "ff_ff,ff_un");
  sim_csv << format_double(sim.ff_ff) << "," << format_double(sim.ff_un) << "\n";
  std::cout << "wrote " << tiles << " reconstructions to " << args.out_dir
            << " (ff_ff=" << format_double(sim.ff_ff)
            << " ff_un=" << format_double(sim.ff_un) << ")\n";
  return 0;
}

}  // namespace spool
