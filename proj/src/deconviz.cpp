#include "spool/deconviz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "spool/common.hpp"
#include "spool/conv.hpp"

namespace spool {

namespace {

PoolingGeometry geometry_of(const SwitchMap& sw) {
  return make_pooling_geometry(sw.window_h, sw.window_w, sw.stride, sw.input_h,
                               sw.input_w);
}

void require_consistent(const SwitchMap& sw, const PoolingGeometry& g) {
  if (sw.input_h != g.input_h || sw.input_w != g.input_w ||
      sw.window_h != g.window_h || sw.window_w != g.window_w ||
      sw.stride != g.stride || sw.out_h != g.out_h || sw.out_w != g.out_w)
    throw std::invalid_argument("unpool: switch map disagrees with geometry");
}

}  // namespace

SwitchSource parse_switch_source(const std::string& s) {
  if (s == "rec" || s == "recorded") return SwitchSource::recorded();
  if (s == "ff" || s == "feed-forward") return SwitchSource::feed_forward();
  if (s == "un" || s == "uniform") return SwitchSource::uniform();
  throw ConfigError("unknown switch source \"" + s +
                    "\" (expected rec, ff, or un)");
}

Tensor4 unpool(const Tensor4& pooled, const SwitchMap& switches,
               const PoolingGeometry& geometry) {
  require_consistent(switches, geometry);
  const Shape4& s = pooled.shape();
  if (s.n != switches.batch || s.c != switches.channels ||
      s.h != switches.out_h || s.w != switches.out_w)
    throw std::invalid_argument("unpool: pooled tensor " + s.str() +
                                " does not match switch map");
  Tensor4 out(s.n, s.c, geometry.input_h, geometry.input_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < s.h; ++oy)
        for (std::size_t ox = 0; ox < s.w; ++ox) {
          const std::int32_t l = switches.at(n, c, oy, ox);
          if (l == SwitchMap::kNone) continue;
          const std::size_t y = static_cast<std::size_t>(l) / geometry.input_w;
          const std::size_t x = static_cast<std::size_t>(l) % geometry.input_w;
          if (y < geometry.row_begin(oy) || y >= geometry.row_end(oy) ||
              x < geometry.col_begin(ox) || x >= geometry.col_end(ox))
            throw std::invalid_argument(
                "unpool: switch index outside its pooling region");
          out(n, c, y, x) += pooled(n, c, oy, ox);
        }
  return out;
}

Tensor4 deconv_layer(const Tensor4& feature, const ConvParams& params,
                     const Shape4& input_shape) {
  return conv2d_adjoint_input(params, feature, input_shape);
}

Tensor4 reconstruct(const NetworkSpec& spec, const NetworkParams& params,
                    const ForwardTrace& trace, std::size_t from_layer,
                    const std::vector<SwitchSource>& sources, RngStream& rng,
                    const ReconstructOptions& opts) {
  if (from_layer >= spec.layers.size())
    throw std::invalid_argument("reconstruct: layer index out of range");
  if (trace.inputs.size() != spec.layers.size())
    throw std::invalid_argument("reconstruct: trace does not cover network");

  std::size_t pools_below = 0;
  for (std::size_t i = 0; i <= from_layer; ++i)
    if (spec.layers[i].kind == LayerKind::Pool) ++pools_below;
  if (sources.size() != pools_below)
    throw std::invalid_argument(
        "reconstruct: " + std::to_string(pools_below) +
        " pool layers at or below layer " + std::to_string(from_layer) +
        " but " + std::to_string(sources.size()) + " switch sources");

  Tensor4 cur = from_layer + 1 < spec.layers.size()
                    ? trace.inputs[from_layer + 1]
                    : trace.logits;
  std::size_t ordinal = pools_below;
  for (std::size_t i = from_layer + 1; i-- > 0;) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Softmax:
        cur = deconv_layer(cur, params.layer[i], trace.inputs[i].shape());
        break;
      case LayerKind::Relu:
        if (opts.rectify)
          for (std::size_t k = 0; k < cur.size(); ++k)
            cur[k] = std::max(0.0, cur[k]);
        break;
      case LayerKind::ResponseNorm:
        break;  // not invertible; identity on the way down
      case LayerKind::Pool: {
        const PoolingGeometry& g = trace.pool_geom[i];
        const SwitchSource& src = sources[--ordinal];
        SwitchMap sw;
        switch (src.kind) {
          case SwitchSourceKind::Recorded:
            if (!trace.switches[i])
              throw std::invalid_argument(
                  "reconstruct: no recorded switches for pool layer " +
                  std::to_string(i));
            sw = *trace.switches[i];
            break;
          case SwitchSourceKind::FeedForward:
            sw = sample_switches(trace.inputs[i], g, rng);
            break;
          case SwitchSourceKind::Uniform:
            sw = sample_switches_uniform(trace.inputs[i].shape(), g, rng);
            break;
        }
        cur = unpool(cur, sw, g);
        break;
      }
    }
  }
  return cur;
}

double normalized_cross_correlation(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "normalized_cross_correlation");
  const std::size_t n = a.size();
  if (n == 0) return 0.0;
  // Zero variance means all-equal; catch it exactly, before the mean
  // subtraction below can leave correlated rounding residue.
  bool const_a = true, const_b = true;
  for (std::size_t i = 1; i < n && (const_a || const_b); ++i) {
    const_a = const_a && a[i] == a[0];
    const_b = const_b && b[i] == b[0];
  }
  if (const_a || const_b) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double dot = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    dot += da * db;
    sa += da * da;
    sb += db * db;
  }
  if (sa == 0.0 || sb == 0.0) return 0.0;
  return dot / std::sqrt(sa * sb);
}

VizSimilarity viz_similarity(const NetworkSpec& spec,
                             const NetworkParams& params,
                             const ForwardTrace& trace, std::size_t from_layer,
                             std::size_t samples, RngStream& rng,
                             const ReconstructOptions& opts) {
  if (samples < 2)
    throw std::invalid_argument("viz_similarity: need at least 2 samples");
  std::size_t pools = 0;
  for (std::size_t i = 0; i <= from_layer && i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::Pool) ++pools;

  const std::vector<SwitchSource> all_ff(pools, SwitchSource::feed_forward());
  const std::vector<SwitchSource> all_un(pools, SwitchSource::uniform());
  std::vector<Tensor4> ff, un;
  ff.reserve(samples);
  un.reserve(samples);
  for (std::size_t k = 0; k < samples; ++k)
    ff.push_back(reconstruct(spec, params, trace, from_layer, all_ff, rng, opts));
  for (std::size_t k = 0; k < samples; ++k)
    un.push_back(reconstruct(spec, params, trace, from_layer, all_un, rng, opts));

  VizSimilarity r;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = i + 1; j < samples; ++j) {
      r.ff_ff += normalized_cross_correlation(ff[i], ff[j]);
      ++pairs;
    }
  r.ff_ff /= static_cast<double>(pairs);
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = 0; j < samples; ++j)
      r.ff_un += normalized_cross_correlation(ff[i], un[j]);
  r.ff_un /= static_cast<double>(samples * samples);
  return r;
}

namespace {

void normalize_row(const Tensor4& image, std::size_t row, double* out,
                   std::size_t count) {
  const double* src = image.data() + row * count;
  double lo = src[0], hi = src[0];
  for (std::size_t i = 1; i < count; ++i) {
    lo = std::min(lo, src[i]);
    hi = std::max(hi, src[i]);
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < count; ++i)
    out[i] = span > 0.0 ? (src[i] - lo) / span : 0.0;
}

}  // namespace

void write_image(const std::string& path, const Tensor4& image,
                 std::size_t row) {
  const Shape4& s = image.shape();
  if (row >= s.n)
    throw std::invalid_argument("write_image: row out of range");
  if (s.c != 1 && s.c != 3)
    throw std::invalid_argument(
        "write_image: need 1 (PGM) or 3 (PPM) channels, got " +
        std::to_string(s.c));
  const std::size_t count = s.c * s.h * s.w;
  std::vector<double> unit(count);
  normalize_row(image, row, unit.data(), count);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out << (s.c == 1 ? "P5" : "P6") << "\n"
      << s.w << " " << s.h << "\n255\n";
  std::vector<unsigned char> bytes(count);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < s.c; ++c)
        bytes[(y * s.w + x) * s.c + c] = static_cast<unsigned char>(
            std::lround(unit[(c * s.h + y) * s.w + x] * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

Tensor4 montage(const std::vector<Tensor4>& tiles, std::size_t grid_cols) {
  if (tiles.empty() || grid_cols == 0)
    throw std::invalid_argument("montage: no tiles or zero columns");
  const Shape4 ts = tiles[0].shape();
  for (const Tensor4& t : tiles)
    if (!(t.shape() == ts))
      throw std::invalid_argument("montage: tiles differ in shape");
  const std::size_t rows = (tiles.size() + grid_cols - 1) / grid_cols;
  Tensor4 out(1, ts.c, rows * ts.h, grid_cols * ts.w);
  std::vector<double> unit(ts.c * ts.h * ts.w);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    normalize_row(tiles[t], 0, unit.data(), unit.size());
    const std::size_t gy = t / grid_cols, gx = t % grid_cols;
    for (std::size_t c = 0; c < ts.c; ++c)
      for (std::size_t y = 0; y < ts.h; ++y)
        for (std::size_t x = 0; x < ts.w; ++x)
          out(0, c, gy * ts.h + y, gx * ts.w + x) =
              unit[(c * ts.h + y) * ts.w + x];
  }
  return out;
}

}  // namespace spool
