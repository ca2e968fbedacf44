#include "spool/pooling.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "spool/common.hpp"
#include "spool/detail/wire.hpp"

namespace spool {

namespace {

std::size_t grid_dim(std::size_t dim, std::size_t window, std::size_t stride) {
  std::size_t base = (dim - window) / stride + 1;
  const std::size_t last_end = (base - 1) * stride + window;
  // Append a clamped border window when the last full one stops short.
  if (last_end < dim && base * stride < dim) ++base;
  return base;
}

void require_rectified(const Tensor4& input, const char* op) {
  const double* d = input.data();
  for (std::size_t i = 0; i < input.size(); ++i)
    if (d[i] < 0.0)
      throw std::domain_error(std::string(op) +
                              ": negative activation; this mode requires "
                              "rectified (non-negative) inputs");
}

void require_matching(const Tensor4& t, const PoolingGeometry& g,
                      const char* op, bool output_shaped) {
  const Shape4& s = t.shape();
  if (output_shaped) {
    if (s.h != g.out_h || s.w != g.out_w)
      throw std::invalid_argument(std::string(op) + ": tensor " + s.str() +
                                  " does not match pooling output grid (" +
                                  std::to_string(g.out_h) + "," +
                                  std::to_string(g.out_w) + ")");
  } else {
    if (s.h != g.input_h || s.w != g.input_w)
      throw std::invalid_argument(std::string(op) + ": tensor " + s.str() +
                                  " does not match pooling input (" +
                                  std::to_string(g.input_h) + "," +
                                  std::to_string(g.input_w) + ")");
  }
}

// Inverse-CDF pick over one region given a uniform u in [0,1). Returns the
// flat spatial index, or SwitchMap::kNone when the region sums to zero.
std::int32_t pick_location(const Tensor4& input, std::size_t n, std::size_t c,
                           const PoolingGeometry& g, std::size_t oy,
                           std::size_t ox, double u) {
  double total = 0.0;
  for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
    for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x)
      total += input(n, c, y, x);
  if (total == 0.0) return SwitchMap::kNone;

  const double target = u * total;
  double acc = 0.0;
  std::int32_t last_positive = SwitchMap::kNone;
  for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y) {
    for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x) {
      const double a = input(n, c, y, x);
      if (a > 0.0) last_positive = static_cast<std::int32_t>(y * g.input_w + x);
      acc += a;
      if (acc > target)
        return static_cast<std::int32_t>(y * g.input_w + x);
    }
  }
  // Rounding pushed the target to the very top of the CDF.
  return last_positive;
}

}  // namespace

PoolingGeometry make_pooling_geometry(std::size_t window, std::size_t stride,
                                      std::size_t input_h,
                                      std::size_t input_w) {
  return make_pooling_geometry(window, window, stride, input_h, input_w);
}

PoolingGeometry make_pooling_geometry(std::size_t window_h,
                                      std::size_t window_w, std::size_t stride,
                                      std::size_t input_h,
                                      std::size_t input_w) {
  if (window_h == 0 || window_w == 0 || stride == 0)
    throw std::invalid_argument("pooling: window and stride must be > 0");
  if (input_h == 0 || input_w == 0)
    throw std::invalid_argument("pooling: empty input map");
  if (window_h > input_h || window_w > input_w)
    throw std::invalid_argument(
        "pooling: window " + std::to_string(window_h) + "x" +
        std::to_string(window_w) + " larger than input " +
        std::to_string(input_h) + "x" + std::to_string(input_w));
  PoolingGeometry g;
  g.window_h = window_h;
  g.window_w = window_w;
  g.stride = stride;
  g.input_h = input_h;
  g.input_w = input_w;
  g.out_h = grid_dim(input_h, window_h, stride);
  g.out_w = grid_dim(input_w, window_w, stride);
  return g;
}

std::vector<std::vector<std::size_t>> enumerate_regions(
    const PoolingGeometry& g) {
  std::vector<std::vector<std::size_t>> regions;
  regions.reserve(g.out_h * g.out_w);
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      std::vector<std::size_t> idx;
      idx.reserve(g.region_size(oy, ox));
      for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
        for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x)
          idx.push_back(y * g.input_w + x);
      regions.push_back(std::move(idx));
    }
  }
  return regions;
}

void SwitchMap::save(std::ostream& out) const {
  out.write("SPSW", 4);
  for (std::size_t v : {batch, channels, out_h, out_w, input_h, input_w,
                        window_h, window_w, stride})
    wire::put_u32(out, static_cast<std::uint32_t>(v));
  for (std::int32_t v : flat) wire::put_i32(out, v);
  if (!out) throw DataError("SPSW write failed");
}

SwitchMap SwitchMap::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SPSW", 4) != 0)
    throw DataError("SPSW: bad magic");
  SwitchMap m;
  m.batch = wire::get_u32(in);
  m.channels = wire::get_u32(in);
  m.out_h = wire::get_u32(in);
  m.out_w = wire::get_u32(in);
  m.input_h = wire::get_u32(in);
  m.input_w = wire::get_u32(in);
  m.window_h = wire::get_u32(in);
  m.window_w = wire::get_u32(in);
  m.stride = wire::get_u32(in);
  if (!in) throw DataError("SPSW: truncated header");
  m.flat.resize(m.batch * m.channels * m.out_h * m.out_w);
  for (auto& v : m.flat) v = wire::get_i32(in);
  if (!in) throw DataError("SPSW: truncated payload");
  return m;
}

void SwitchMap::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  save(out);
}

SwitchMap SwitchMap::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  return load(in);
}

SwitchMap make_switch_map(const Shape4& input_shape,
                          const PoolingGeometry& g) {
  SwitchMap m;
  m.batch = input_shape.n;
  m.channels = input_shape.c;
  m.out_h = g.out_h;
  m.out_w = g.out_w;
  m.input_h = g.input_h;
  m.input_w = g.input_w;
  m.window_h = g.window_h;
  m.window_w = g.window_w;
  m.stride = g.stride;
  m.flat.assign(m.batch * m.channels * m.out_h * m.out_w, SwitchMap::kNone);
  return m;
}

PoolingMode PoolingMode::stochastic_n(int n) {
  if (n < 1)
    throw std::invalid_argument("stochastic-N: sample count must be >= 1");
  return {PoolingModeKind::StochasticN, n};
}

PoolingMode parse_pooling_mode(const std::string& s) {
  if (s == "avg" || s == "average") return PoolingMode::average();
  if (s == "max") return PoolingMode::max();
  if (s == "stochastic") return PoolingMode::stochastic();
  if (s == "prob-weight" || s == "prob_weight" || s == "prob" ||
      s == "probability-weighting")
    return PoolingMode::prob_weight();
  if (s.rfind("stochastic-", 0) == 0) {
    const std::string num = s.substr(11);
    try {
      return PoolingMode::stochastic_n(std::stoi(num));
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
  }
  throw ConfigError("unknown pooling mode: \"" + s + "\"");
}

std::string pooling_mode_name(const PoolingMode& m) {
  switch (m.kind) {
    case PoolingModeKind::Average: return "avg";
    case PoolingModeKind::Max: return "max";
    case PoolingModeKind::Stochastic: return "stochastic";
    case PoolingModeKind::ProbWeight: return "prob-weight";
    case PoolingModeKind::StochasticN:
      return "stochastic-" + std::to_string(m.sample_count);
  }
  return "?";
}

RegionDistribution region_probabilities(const std::vector<double>& acts) {
  RegionDistribution d;
  double sum = 0.0;
  for (double a : acts) {
    if (a < 0.0)
      throw std::domain_error(
          "region_probabilities: negative activation; rectified inputs "
          "required");
    sum += a;
  }
  if (sum == 0.0) {
    d.degenerate = true;
    d.p.assign(acts.size(), 0.0);
    return d;
  }
  d.p.reserve(acts.size());
  for (double a : acts) d.p.push_back(a / sum);
  return d;
}

Tensor4 avg_pool_forward(const Tensor4& input, const PoolingGeometry& g) {
  require_matching(input, g, "avg_pool_forward", false);
  const Shape4& s = input.shape();
  Tensor4 out(s.n, s.c, g.out_h, g.out_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x)
              acc += input(n, c, y, x);
          out(n, c, oy, ox) = acc / static_cast<double>(g.region_size(oy, ox));
        }
  return out;
}

std::pair<Tensor4, SwitchMap> max_pool_forward(const Tensor4& input,
                                               const PoolingGeometry& g) {
  require_matching(input, g, "max_pool_forward", false);
  const Shape4& s = input.shape();
  Tensor4 out(s.n, s.c, g.out_h, g.out_w);
  SwitchMap sw = make_switch_map(s, g);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::int32_t best_idx = SwitchMap::kNone;
          // Ties keep the lowest flat index.
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x) {
              const double a = input(n, c, y, x);
              if (a > best) {
                best = a;
                best_idx = static_cast<std::int32_t>(y * g.input_w + x);
              }
            }
          out(n, c, oy, ox) = best;
          sw.flat[sw.index(n, c, oy, ox)] = best_idx;
        }
  return {std::move(out), std::move(sw)};
}

SwitchMap sample_switches(const Tensor4& input, const PoolingGeometry& g,
                          RngStream& rng) {
  require_matching(input, g, "stochastic_pool_forward", false);
  require_rectified(input, "stochastic_pool_forward");
  const Shape4& s = input.shape();
  SwitchMap sw = make_switch_map(s, g);
  const RngStream call = rng.substream(rng.next_u64());
  for (std::size_t n = 0; n < s.n; ++n) {
    const RngStream elem = call.substream(n);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double u = elem.unit_at((c * g.out_h + oy) * g.out_w + ox);
          sw.flat[sw.index(n, c, oy, ox)] = pick_location(input, n, c, g, oy, ox, u);
        }
  }
  return sw;
}

SwitchMap sample_switches_uniform(const Shape4& input_shape,
                                  const PoolingGeometry& g, RngStream& rng) {
  SwitchMap sw = make_switch_map(input_shape, g);
  const RngStream call = rng.substream(rng.next_u64());
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    const RngStream elem = call.substream(n);
    for (std::size_t c = 0; c < input_shape.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double u = elem.unit_at((c * g.out_h + oy) * g.out_w + ox);
          const std::size_t rows = g.row_end(oy) - g.row_begin(oy);
          const std::size_t cols = g.col_end(ox) - g.col_begin(ox);
          const std::size_t k =
              std::min(static_cast<std::size_t>(u * static_cast<double>(rows * cols)),
                       rows * cols - 1);
          const std::size_t y = g.row_begin(oy) + k / cols;
          const std::size_t x = g.col_begin(ox) + k % cols;
          sw.flat[sw.index(n, c, oy, ox)] =
              static_cast<std::int32_t>(y * g.input_w + x);
        }
  }
  return sw;
}

Tensor4 gather_switches(const Tensor4& input, const SwitchMap& sw,
                        const PoolingGeometry& g) {
  require_matching(input, g, "gather_switches", false);
  const Shape4& s = input.shape();
  if (sw.batch != s.n || sw.channels != s.c || sw.out_h != g.out_h ||
      sw.out_w != g.out_w)
    throw std::invalid_argument("gather_switches: switch map does not match");
  Tensor4 out(s.n, s.c, g.out_h, g.out_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const std::int32_t l = sw.at(n, c, oy, ox);
          out(n, c, oy, ox) =
              l == SwitchMap::kNone
                  ? 0.0
                  : input(n, c,
                          static_cast<std::size_t>(l) / g.input_w,
                          static_cast<std::size_t>(l) % g.input_w);
        }
  return out;
}

std::pair<Tensor4, SwitchMap> stochastic_pool_forward(const Tensor4& input,
                                                      const PoolingGeometry& g,
                                                      RngStream& rng) {
  SwitchMap sw = sample_switches(input, g, rng);
  Tensor4 out = gather_switches(input, sw, g);
  return {std::move(out), std::move(sw)};
}

Tensor4 prob_weight_forward(const Tensor4& input, const PoolingGeometry& g) {
  require_matching(input, g, "prob_weight_forward", false);
  require_rectified(input, "prob_weight_forward");
  const Shape4& s = input.shape();
  Tensor4 out(s.n, s.c, g.out_h, g.out_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double sum = 0.0, sq = 0.0;
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x) {
              const double a = input(n, c, y, x);
              sum += a;
              sq += a * a;
            }
          out(n, c, oy, ox) = sum > 0.0 ? sq / sum : 0.0;
        }
  return out;
}

Tensor4 switch_pool_backward(const Tensor4& grad_output, const SwitchMap& sw,
                             const PoolingGeometry& g) {
  require_matching(grad_output, g, "switch_pool_backward", true);
  const Shape4& s = grad_output.shape();
  if (sw.batch != s.n || sw.channels != s.c)
    throw std::invalid_argument("switch_pool_backward: switch map mismatch");
  Tensor4 gin(s.n, s.c, g.input_h, g.input_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const std::int32_t l = sw.at(n, c, oy, ox);
          if (l == SwitchMap::kNone) continue;
          const std::size_t y = static_cast<std::size_t>(l) / g.input_w;
          const std::size_t x = static_cast<std::size_t>(l) % g.input_w;
          if (y < g.row_begin(oy) || y >= g.row_end(oy) ||
              x < g.col_begin(ox) || x >= g.col_end(ox))
            throw std::logic_error(
                "switch_pool_backward: switch index outside its region");
          gin(n, c, y, x) += grad_output(n, c, oy, ox);
        }
  return gin;
}

Tensor4 avg_pool_backward(const Tensor4& grad_output,
                          const PoolingGeometry& g) {
  require_matching(grad_output, g, "avg_pool_backward", true);
  const Shape4& s = grad_output.shape();
  Tensor4 gin(s.n, s.c, g.input_h, g.input_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double share = grad_output(n, c, oy, ox) /
                               static_cast<double>(g.region_size(oy, ox));
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x)
              gin(n, c, y, x) += share;
        }
  return gin;
}

Tensor4 prob_weight_backward(const Tensor4& input, const PoolingGeometry& g,
                             const Tensor4& grad_output) {
  require_matching(input, g, "prob_weight_backward", false);
  require_matching(grad_output, g, "prob_weight_backward", true);
  require_rectified(input, "prob_weight_backward");
  const Shape4& s = input.shape();
  if (grad_output.shape().n != s.n || grad_output.shape().c != s.c)
    throw std::invalid_argument("prob_weight_backward: batch/channel mismatch");
  Tensor4 gin(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double sum = 0.0, sq = 0.0;
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x) {
              const double a = input(n, c, y, x);
              sum += a;
              sq += a * a;
            }
          if (sum <= 0.0) continue;
          const double go = grad_output(n, c, oy, ox);
          const double inv_s2 = 1.0 / (sum * sum);
          for (std::size_t y = g.row_begin(oy); y < g.row_end(oy); ++y)
            for (std::size_t x = g.col_begin(ox); x < g.col_end(ox); ++x) {
              const double a = input(n, c, y, x);
              gin(n, c, y, x) += go * (2.0 * a * sum - sq) * inv_s2;
            }
        }
  return gin;
}

ModelCount model_count(std::uint64_t region_size, std::uint64_t region_count) {
  if (region_size < 1)
    throw std::invalid_argument("model_count: region size must be >= 1");
  ModelCount mc;
  mc.log10 = static_cast<double>(region_count) *
             std::log10(static_cast<double>(region_size));
  mc.exact = true;
  mc.value = 1;
  for (std::uint64_t i = 0; i < region_count; ++i) {
    if (__builtin_mul_overflow(mc.value, region_size, &mc.value)) {
      mc.exact = false;
      mc.value = 0;
      break;
    }
  }
  return mc;
}

}  // namespace spool
