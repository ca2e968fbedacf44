#include "spool/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "spool/common.hpp"
#include "spool/conv.hpp"

namespace spool {

namespace {

void check_lrn(const LrnParams& p) {
  if (p.size == 0 || p.size % 2 == 0)
    throw std::invalid_argument("response norm: window size must be odd");
  if (p.k <= 0.0)
    throw std::invalid_argument("response norm: k must be > 0");
  if (p.alpha < 0.0)
    throw std::invalid_argument("response norm: alpha must be >= 0");
}

}  // namespace

Tensor4 lrn_forward(const Tensor4& input, const LrnParams& p) {
  check_lrn(p);
  const Shape4& s = input.shape();
  const std::size_t half = p.size / 2;
  Tensor4 out(s);
  std::vector<double> den(s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t lo = c >= half ? c - half : 0;
          const std::size_t hi = std::min(c + half, s.c - 1);
          double acc = 0.0;
          for (std::size_t m = lo; m <= hi; ++m) {
            const double v = input(n, m, y, x);
            acc += v * v;
          }
          den[c] = p.k + p.alpha * acc;
        }
        for (std::size_t c = 0; c < s.c; ++c)
          out(n, c, y, x) = input(n, c, y, x) * std::pow(den[c], -p.beta);
      }
  return out;
}

Tensor4 lrn_backward(const Tensor4& input, const Tensor4& grad_output,
                     const LrnParams& p) {
  check_lrn(p);
  require_same_shape(input, grad_output, "lrn_backward");
  const Shape4& s = input.shape();
  const std::size_t half = p.size / 2;
  Tensor4 gin(s);
  std::vector<double> den(s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t lo = c >= half ? c - half : 0;
          const std::size_t hi = std::min(c + half, s.c - 1);
          double acc = 0.0;
          for (std::size_t m = lo; m <= hi; ++m) {
            const double v = input(n, m, y, x);
            acc += v * v;
          }
          den[c] = p.k + p.alpha * acc;
        }
        // d out[c] / d in[m] = den[c]^-b [c==m]
        //                      - 2 a b x[c] x[m] den[c]^{-b-1} [m in W(c)]
        // and the window relation is symmetric: m in W(c) iff c in W(m).
        for (std::size_t m = 0; m < s.c; ++m) {
          const std::size_t lo = m >= half ? m - half : 0;
          const std::size_t hi = std::min(m + half, s.c - 1);
          double g = grad_output(n, m, y, x) * std::pow(den[m], -p.beta);
          double cross = 0.0;
          for (std::size_t c = lo; c <= hi; ++c)
            cross += grad_output(n, c, y, x) * input(n, c, y, x) *
                     std::pow(den[c], -p.beta - 1.0);
          g -= 2.0 * p.alpha * p.beta * input(n, m, y, x) * cross;
          gin(n, m, y, x) = g;
        }
      }
  return gin;
}

SoftmaxXent softmax_xent(const Tensor4& logits, const std::vector<int>& labels,
                         std::size_t divisor) {
  const Shape4& s = logits.shape();
  if (s.h != 1 || s.w != 1)
    throw std::invalid_argument("softmax_xent: logits must be (n, classes, 1, 1), got " +
                                s.str());
  if (labels.size() != s.n)
    throw std::invalid_argument("softmax_xent: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(s.n));
  if (divisor == 0) divisor = s.n;
  const double inv = 1.0 / static_cast<double>(divisor);

  SoftmaxXent r;
  r.probs = Tensor4(s);
  r.grad = Tensor4(s);
  double loss_sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= s.c)
      throw std::invalid_argument("softmax_xent: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(s.c) + ")");
    double mx = logits(n, 0, 0, 0);
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, logits(n, c, 0, 0));
    double z = 0.0;
    for (std::size_t c = 0; c < s.c; ++c)
      z += std::exp(logits(n, c, 0, 0) - mx);
    const double log_z = std::log(z);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double pr = std::exp(logits(n, c, 0, 0) - mx) / z;
      r.probs(n, c, 0, 0) = pr;
      r.grad(n, c, 0, 0) =
          (pr - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) * inv;
    }
    loss_sum += log_z - (logits(n, static_cast<std::size_t>(label), 0, 0) - mx);
  }
  r.loss = loss_sum * inv;
  if (!std::isfinite(r.loss))
    throw NumericError("softmax_xent: non-finite loss");
  return r;
}

Tensor4 softmax_probs(const Tensor4& logits) {
  const Shape4& s = logits.shape();
  if (s.h != 1 || s.w != 1)
    throw std::invalid_argument("softmax_probs: logits must be (n, classes, 1, 1)");
  Tensor4 out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    double mx = logits(n, 0, 0, 0);
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, logits(n, c, 0, 0));
    double z = 0.0;
    for (std::size_t c = 0; c < s.c; ++c)
      z += std::exp(logits(n, c, 0, 0) - mx);
    for (std::size_t c = 0; c < s.c; ++c)
      out(n, c, 0, 0) = std::exp(logits(n, c, 0, 0) - mx) / z;
  }
  return out;
}

LayerSpec LayerSpec::conv(std::size_t maps, std::size_t kernel,
                          std::size_t stride) {
  if (maps == 0 || kernel == 0 || stride == 0)
    throw std::invalid_argument("conv layer: maps, kernel, stride must be > 0");
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.conv_maps = maps;
  l.conv_kernel = kernel;
  l.conv_stride = stride;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::Relu;
  return l;
}

LayerSpec LayerSpec::pool(std::size_t window, std::size_t stride,
                          PoolingMode train_mode, PoolingMode test_mode) {
  if (window == 0 || stride == 0)
    throw std::invalid_argument("pool layer: window and stride must be > 0");
  LayerSpec l;
  l.kind = LayerKind::Pool;
  l.pool_window = window;
  l.pool_stride = stride;
  l.pool_train = train_mode;
  l.pool_test = test_mode;
  return l;
}

LayerSpec LayerSpec::response_norm(const LrnParams& p) {
  check_lrn(p);
  LayerSpec l;
  l.kind = LayerKind::ResponseNorm;
  l.lrn = p;
  return l;
}

LayerSpec LayerSpec::softmax(std::size_t classes) {
  if (classes < 2)
    throw std::invalid_argument("softmax layer: need at least 2 classes");
  LayerSpec l;
  l.kind = LayerKind::Softmax;
  l.classes = classes;
  return l;
}

std::size_t NetworkSpec::classes() const {
  if (layers.empty() || layers.back().kind != LayerKind::Softmax)
    throw ConfigError("network: stack must end in a softmax classifier");
  return layers.back().classes;
}

std::vector<Shape4> NetworkSpec::shape_walk(std::size_t batch) const {
  if (input_c == 0 || input_h == 0 || input_w == 0)
    throw ConfigError("network: input shape not set");
  std::vector<Shape4> shapes;
  shapes.push_back({batch, input_c, input_h, input_w});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape4 in = shapes.back();
    try {
      switch (l.kind) {
        case LayerKind::Conv:
          shapes.push_back(conv2d_output_shape(in, l.conv_maps, l.conv_kernel,
                                               l.conv_kernel, l.conv_stride));
          break;
        case LayerKind::Relu:
        case LayerKind::ResponseNorm:
          shapes.push_back(in);
          break;
        case LayerKind::Pool: {
          const PoolingGeometry g = make_pooling_geometry(
              l.pool_window, l.pool_stride, in.h, in.w);
          shapes.push_back({in.n, in.c, g.out_h, g.out_w});
          break;
        }
        case LayerKind::Softmax:
          if (i + 1 != layers.size())
            throw ConfigError("network: softmax must be the final layer");
          shapes.push_back({in.n, l.classes, 1, 1});
          break;
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError("network: layer " + std::to_string(i) +
                        " does not fit on " + in.str() + ": " + e.what());
    }
  }
  return shapes;
}

void NetworkSpec::validate() const {
  if (layers.empty() || layers.back().kind != LayerKind::Softmax)
    throw ConfigError("network: stack must end in a softmax classifier");
  shape_walk(1);
}

std::string NetworkSpec::summary() const {
  std::ostringstream os;
  const auto shapes = shape_walk(1);
  os << "input " << input_c << "x" << input_h << "x" << input_w << "\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    os << "  [" << i << "] ";
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.conv_maps << "x" << l.conv_kernel << "x"
           << l.conv_kernel << " stride " << l.conv_stride;
        break;
      case LayerKind::Relu: os << "relu"; break;
      case LayerKind::Pool:
        os << "pool " << l.pool_window << "x" << l.pool_window << " stride "
           << l.pool_stride << " train=" << pooling_mode_name(l.pool_train)
           << " test=" << pooling_mode_name(l.pool_test);
        break;
      case LayerKind::ResponseNorm:
        os << "response-norm size " << l.lrn.size;
        break;
      case LayerKind::Softmax: os << "softmax " << l.classes; break;
    }
    const Shape4& s = shapes[i + 1];
    os << " -> " << s.c << "x" << s.h << "x" << s.w << "\n";
  }
  return os.str();
}

namespace {

// Appends conv(maps,5) -> relu -> pool -> [response norm] to `net`, tracking
// the running map size. The pool window shrinks to the map side when the map
// is already smaller than the nominal window.
void push_stage(NetworkSpec& net, std::size_t maps, std::size_t& h,
                std::size_t& w, PoolingMode train, PoolingMode test,
                bool with_rn, std::size_t window, std::size_t stride) {
  if (h < 5 || w < 5)
    throw ConfigError("network preset: stage needs a 5x5 map, have " +
                      std::to_string(h) + "x" + std::to_string(w));
  net.layers.push_back(LayerSpec::conv(maps, 5));
  h -= 4;
  w -= 4;
  net.layers.push_back(LayerSpec::relu());
  const std::size_t win = std::min(window, std::min(h, w));
  net.layers.push_back(LayerSpec::pool(win, stride, train, test));
  const PoolingGeometry g = make_pooling_geometry(win, stride, h, w);
  h = g.out_h;
  w = g.out_w;
  if (with_rn) net.layers.push_back(LayerSpec::response_norm());
}

NetworkSpec staged_stack(const std::vector<std::size_t>& maps,
                         std::size_t input_c, std::size_t input_h,
                         std::size_t input_w, std::size_t classes,
                         PoolingMode train, PoolingMode test, bool with_rn,
                         std::size_t window, std::size_t stride) {
  NetworkSpec net;
  net.input_c = input_c;
  net.input_h = input_h;
  net.input_w = input_w;
  std::size_t h = input_h, w = input_w;
  for (std::size_t m : maps)
    push_stage(net, m, h, w, train, test, with_rn, window, stride);
  net.layers.push_back(LayerSpec::softmax(classes));
  net.validate();
  return net;
}

}  // namespace

NetworkSpec make_preset(const std::string& name, std::size_t input_c,
                        std::size_t input_h, std::size_t input_w,
                        std::size_t classes, PoolingMode train_mode,
                        PoolingMode test_mode, bool with_response_norm,
                        std::size_t pool_window, std::size_t pool_stride) {
  if (name == "reference-64-64-64")
    return staged_stack({64, 64, 64}, input_c, input_h, input_w, classes,
                        train_mode, test_mode, with_response_norm, pool_window,
                        pool_stride);
  if (name == "reference-64-64-128")
    return staged_stack({64, 64, 128}, input_c, input_h, input_w, classes,
                        train_mode, test_mode, with_response_norm, pool_window,
                        pool_stride);
  if (name == "desk-28" || name == "desk-32")
    return staged_stack({8, 16}, input_c, input_h, input_w, classes,
                        train_mode, test_mode, with_response_norm, pool_window,
                        pool_stride);
  if (name == "tiny-10")
    return staged_stack({6}, input_c, input_h, input_w, classes, train_mode,
                        test_mode, with_response_norm, pool_window,
                        pool_stride);
  throw ConfigError("unknown network preset: \"" + name + "\"");
}

std::vector<std::string> preset_names() {
  return {"reference-64-64-64", "reference-64-64-128", "desk-28", "desk-32",
          "tiny-10"};
}

}  // namespace spool
