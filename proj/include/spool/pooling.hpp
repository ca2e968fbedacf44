#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "spool/rng.hpp"
#include "spool/tensor.hpp"

namespace spool {

// Square pooling window slid with `stride` over an (input_h, input_w) map.
// Output grid per dimension: floor((dim - window)/stride) + 1 base windows,
// plus one appended row/column when the last base window stops short of the
// border; appended windows are clamped inside bounds, shrinking the region.
// With the reference 3x3/stride-2 config neighboring regions overlap by one
// element and border regions shrink to 3x2 / 2x2.
struct PoolingGeometry {
  std::size_t window_h = 0, window_w = 0;
  std::size_t stride = 0;
  std::size_t input_h = 0, input_w = 0;
  std::size_t out_h = 0, out_w = 0;

  // Row extent [begin, end) of output row oy; same for columns.
  std::size_t row_begin(std::size_t oy) const { return oy * stride; }
  std::size_t row_end(std::size_t oy) const {
    const std::size_t e = oy * stride + window_h;
    return e < input_h ? e : input_h;
  }
  std::size_t col_begin(std::size_t ox) const { return ox * stride; }
  std::size_t col_end(std::size_t ox) const {
    const std::size_t e = ox * stride + window_w;
    return e < input_w ? e : input_w;
  }
  std::size_t region_size(std::size_t oy, std::size_t ox) const {
    return (row_end(oy) - row_begin(oy)) * (col_end(ox) - col_begin(ox));
  }
};

// Throws std::invalid_argument when the window exceeds the input or any
// dimension is zero.
PoolingGeometry make_pooling_geometry(std::size_t window, std::size_t stride,
                                      std::size_t input_h,
                                      std::size_t input_w);
PoolingGeometry make_pooling_geometry(std::size_t window_h,
                                      std::size_t window_w, std::size_t stride,
                                      std::size_t input_h,
                                      std::size_t input_w);

// Flat input indices (y*input_w + x) covered by each output cell, row-major
// over output cells. Mostly a test/oracle surface; kernels index regions
// implicitly through the geometry.
std::vector<std::vector<std::size_t>> enumerate_regions(
    const PoolingGeometry& g);

// Per output cell: the selected flat spatial index into the input map, or
// kNone for regions whose activations are all exactly zero.
struct SwitchMap {
  static constexpr std::int32_t kNone = -1;

  std::size_t batch = 0, channels = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t input_h = 0, input_w = 0;
  std::size_t window_h = 0, window_w = 0, stride = 0;
  std::vector<std::int32_t> flat;  // batch*channels*out_h*out_w entries

  std::size_t index(std::size_t n, std::size_t c, std::size_t oy,
                    std::size_t ox) const {
    return ((n * channels + c) * out_h + oy) * out_w + ox;
  }
  std::int32_t at(std::size_t n, std::size_t c, std::size_t oy,
                  std::size_t ox) const {
    return flat[index(n, c, oy, ox)];
  }

  // SPSW: "SPSW" magic, u32 LE header (batch, channels, out_h, out_w,
  // input_h, input_w, window_h, window_w, stride), then one i32 LE per
  // output cell (-1 for NONE).
  void save(std::ostream& out) const;
  static SwitchMap load(std::istream& in);
  void save_file(const std::string& path) const;
  static SwitchMap load_file(const std::string& path);
};

SwitchMap make_switch_map(const Shape4& input_shape, const PoolingGeometry& g);

enum class PoolingModeKind { Average, Max, Stochastic, ProbWeight, StochasticN };

struct PoolingMode {
  PoolingModeKind kind = PoolingModeKind::Max;
  int sample_count = 1;  // StochasticN only

  static PoolingMode average() { return {PoolingModeKind::Average, 1}; }
  static PoolingMode max() { return {PoolingModeKind::Max, 1}; }
  static PoolingMode stochastic() { return {PoolingModeKind::Stochastic, 1}; }
  static PoolingMode prob_weight() { return {PoolingModeKind::ProbWeight, 1}; }
  static PoolingMode stochastic_n(int n);

  bool deterministic() const {
    return kind == PoolingModeKind::Average ||
           kind == PoolingModeKind::Max || kind == PoolingModeKind::ProbWeight;
  }
  bool operator==(const PoolingMode&) const = default;
};

// "avg", "max", "stochastic", "prob-weight", "stochastic-N".
PoolingMode parse_pooling_mode(const std::string& s);
std::string pooling_mode_name(const PoolingMode& m);

// Multinomial weights over one region: p_i = a_i / sum_k a_k. Degenerate
// (all-zero) regions carry no distribution. Negative activations violate
// the rectified-input contract and throw std::domain_error.
struct RegionDistribution {
  std::vector<double> p;
  bool degenerate = false;
};

RegionDistribution region_probabilities(const std::vector<double>& acts);

// --- forward kernels -------------------------------------------------------

Tensor4 avg_pool_forward(const Tensor4& input, const PoolingGeometry& g);

std::pair<Tensor4, SwitchMap> max_pool_forward(const Tensor4& input,
                                               const PoolingGeometry& g);

// Samples each region's location from the multinomial over its activations
// (inverse CDF, one uniform per region). Consumes one value from `rng` to
// key the call, then addresses per-(element, channel, region) draws on
// substreams, so results do not depend on the execution schedule.
std::pair<Tensor4, SwitchMap> stochastic_pool_forward(const Tensor4& input,
                                                      const PoolingGeometry& g,
                                                      RngStream& rng);

Tensor4 prob_weight_forward(const Tensor4& input, const PoolingGeometry& g);

// Sampling split out for the visualizer and for frozen-switch replay.
SwitchMap sample_switches(const Tensor4& input, const PoolingGeometry& g,
                          RngStream& rng);
SwitchMap sample_switches_uniform(const Shape4& input_shape,
                                  const PoolingGeometry& g, RngStream& rng);
// s_j = a_{l_j}; NONE regions produce 0.
Tensor4 gather_switches(const Tensor4& input, const SwitchMap& switches,
                        const PoolingGeometry& g);

// --- backward kernels ------------------------------------------------------

// Max / stochastic backward: routes each region's upstream gradient to its
// recorded switch location. Overlapping regions accumulate.
Tensor4 switch_pool_backward(const Tensor4& grad_output,
                             const SwitchMap& switches,
                             const PoolingGeometry& g);

Tensor4 avg_pool_backward(const Tensor4& grad_output,
                          const PoolingGeometry& g);

// d s_j / d a_m = (2 a_m S - Q) / S^2 with S = sum a_k, Q = sum a_k^2 over
// the region; degenerate regions contribute nothing.
Tensor4 prob_weight_backward(const Tensor4& input, const PoolingGeometry& g,
                             const Tensor4& grad_output);

// --- model counting --------------------------------------------------------

// Number of distinct deterministic networks selectable by stochastic pooling
// with `region_count` regions of `region_size` elements: region_size ^
// region_count. `value` is valid only when `exact`; log10 always is.
struct ModelCount {
  bool exact = false;
  std::uint64_t value = 0;
  double log10 = 0.0;
};

ModelCount model_count(std::uint64_t region_size, std::uint64_t region_count);

}  // namespace spool
