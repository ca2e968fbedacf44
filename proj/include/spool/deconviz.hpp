#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spool/network.hpp"
#include "spool/pooling.hpp"
#include "spool/rng.hpp"
#include "spool/tensor.hpp"

namespace spool {

// How to pick pooling locations for the top-down pass at one pool layer:
// replay the recorded switches, resample from the activation-proportional
// distribution of the traced input ("feed-forward"), or resample uniformly
// over each region.
enum class SwitchSourceKind { Recorded, FeedForward, Uniform };

struct SwitchSource {
  SwitchSourceKind kind = SwitchSourceKind::Recorded;
  static SwitchSource recorded() { return {SwitchSourceKind::Recorded}; }
  static SwitchSource feed_forward() { return {SwitchSourceKind::FeedForward}; }
  static SwitchSource uniform() { return {SwitchSourceKind::Uniform}; }
};

SwitchSource parse_switch_source(const std::string& s);  // rec | ff | un

// Scatter pooled values to their switch locations on a zero map.
// Overlapping windows accumulate; NONE entries place nothing.
Tensor4 unpool(const Tensor4& pooled, const SwitchMap& switches,
               const PoolingGeometry& geometry);

// Transposed-filter projection: the adjoint of the bias-free forward
// convolution, mapping a layer's output shape back to its input shape.
Tensor4 deconv_layer(const Tensor4& feature, const ConvParams& params,
                     const Shape4& input_shape);

struct ReconstructOptions {
  // Clamp negatives between top-down stages (mirrors the feed-forward
  // rectification). Response normalization is always skipped top-down.
  bool rectify = true;
};

// Walk from the output of `from_layer` down to pixel space. `sources` has
// one entry per pool layer with index <= from_layer, ordered bottom-up.
// Only resampling sources consume rng.
Tensor4 reconstruct(const NetworkSpec& spec, const NetworkParams& params,
                    const ForwardTrace& trace, std::size_t from_layer,
                    const std::vector<SwitchSource>& sources, RngStream& rng,
                    const ReconstructOptions& opts = {});

// Pearson correlation of two equally-shaped maps (mean-removed, normalized);
// 0 when either side has no variance.
double normalized_cross_correlation(const Tensor4& a, const Tensor4& b);

// Reconstruction-similarity statistic: draw `samples` feed-forward-resampled
// and `samples` uniform-resampled reconstructions from one trace, then
// average pairwise correlation within the feed-forward set (ff_ff) and
// across the two sets (ff_un).
struct VizSimilarity {
  double ff_ff = 0.0;
  double ff_un = 0.0;
};

VizSimilarity viz_similarity(const NetworkSpec& spec,
                             const NetworkParams& params,
                             const ForwardTrace& trace, std::size_t from_layer,
                             std::size_t samples, RngStream& rng,
                             const ReconstructOptions& opts = {});

// --- Image emission ----------------------------------------------------
// Maps are min-max normalized per image to 0..255. Single-channel rows go
// out as binary PGM (P5), three-channel as binary PPM (P6).
void write_image(const std::string& path, const Tensor4& image,
                 std::size_t row = 0);

// Row-major grid of equally-shaped tiles, each normalized independently.
Tensor4 montage(const std::vector<Tensor4>& tiles, std::size_t grid_cols);

}  // namespace spool
