#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spool/conv.hpp"
#include "spool/layers.hpp"
#include "spool/pooling.hpp"
#include "spool/rng.hpp"
#include "spool/tensor.hpp"

namespace spool {

// Parameters aligned 1:1 with NetworkSpec::layers; entries for layers
// without parameters stay empty. The softmax classifier is stored as a
// full-map convolution: filters (classes, c, h, w) over the final pooled
// maps, which is exactly a dense layer on the channel-major flattening.
struct NetworkParams {
  std::vector<ConvParams> layer;

  bool has(std::size_t i) const {
    return i < layer.size() && layer[i].filters.size() > 0;
  }
};

// Gaussian(0, init_std) filters, zero biases. One rng substream per layer.
NetworkParams init_params(const NetworkSpec& spec, RngStream rng,
                          double init_std = 0.01);

enum class Phase { Train, Test };

// Per-pool-layer sampling control for a single forward call.
//   - mode_override replaces every pool layer's phase-selected mode;
//   - frozen_switches[i] (layer index i) replays a recorded SwitchMap
//     instead of sampling, which makes a stochastic network a fixed
//     differentiable function (finite-difference tests, resume replay).
struct ForwardOptions {
  std::optional<PoolingMode> mode_override;
  const std::vector<std::pair<std::size_t, const SwitchMap*>>* frozen_switches =
      nullptr;
};

struct ForwardTrace {
  Phase phase = Phase::Test;
  // inputs[i] feeds layers[i]; logits is the final softmax-layer output.
  std::vector<Tensor4> inputs;
  Tensor4 logits;
  // Aligned with layers; meaningful where spec.layers[i] is a pool.
  std::vector<PoolingGeometry> pool_geom;
  std::vector<PoolingMode> pool_mode_used;
  std::vector<std::optional<SwitchMap>> switches;
  // Call keys consumed from the rng stream by sampling layers, in order.
  std::vector<std::uint64_t> rng_calls;
};

ForwardTrace network_forward(const NetworkSpec& spec,
                             const NetworkParams& params, const Tensor4& batch,
                             Phase phase, RngStream& rng,
                             const ForwardOptions& opts = {});

// Forward without trace retention; returns softmax probabilities.
Tensor4 network_predict(const NetworkSpec& spec, const NetworkParams& params,
                        const Tensor4& batch, Phase phase, RngStream& rng,
                        const ForwardOptions& opts = {});

struct LayerGrads {
  Tensor4 filters;
  std::vector<double> bias;
};

struct BackwardResult {
  double loss = 0.0;        // per-row loss sum / divisor
  std::vector<LayerGrads> layer;  // aligned with spec.layers
  Tensor4 grad_input;
};

// Exact gradients for every parameter given a trace from network_forward on
// the same params. `divisor` scales the batch mean (0 = this batch's size);
// chunked training passes the full batch size so chunk results sum.
BackwardResult network_backward(const NetworkSpec& spec,
                                const NetworkParams& params,
                                const ForwardTrace& trace,
                                const std::vector<int>& labels,
                                std::size_t divisor = 0);

// Mean softmax output of n independent stochastic-pooling forward passes.
// Consumes exactly one value from `rng` regardless of n.
Tensor4 predict_stochastic_n(const NetworkSpec& spec,
                             const NetworkParams& params, const Tensor4& batch,
                             int n, RngStream& rng);

void accumulate_grads(std::vector<LayerGrads>& into,
                      const std::vector<LayerGrads>& from);
std::vector<LayerGrads> zero_grads_like(const NetworkParams& params);

// --- Checkpoints -----------------------------------------------------------
// A checkpoint is a directory:
//   manifest.txt   key=value lines (format, epoch, master_seed, spec_hash,
//                  parameter file list)
//   spec.json      the NetworkSpec
//   layerNNN_filters.sp4t / layerNNN_bias.sp4t        parameters
//   layerNNN_vfilters.sp4t / layerNNN_vbias.sp4t      optimizer velocities

struct Checkpoint {
  NetworkSpec spec;
  NetworkParams params;
  std::vector<LayerGrads> velocity;  // same shapes as params
  std::uint64_t epoch = 0;           // epochs completed
  std::uint64_t master_seed = 0;
};

void save_checkpoint(const Checkpoint& cp, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

std::string network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const std::string& text);

// FNV-1a over the canonical JSON form; detects spec drift on resume.
std::uint64_t network_spec_hash(const NetworkSpec& spec);

}  // namespace spool
