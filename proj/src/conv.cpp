#include "spool/conv.hpp"

#include <stdexcept>
#include <string>

namespace spool {

namespace {

void validate(const Shape4& in, const ConvParams& p) {
  if (p.stride == 0) throw std::invalid_argument("conv2d: stride must be > 0");
  if (p.filters.shape().n == 0 || p.filters.size() == 0)
    throw std::invalid_argument("conv2d: empty filter bank");
  if (p.bias.size() != p.out_maps())
    throw std::invalid_argument("conv2d: bias length " +
                                std::to_string(p.bias.size()) +
                                " != out_maps " + std::to_string(p.out_maps()));
  if (in.c != p.in_maps())
    throw std::invalid_argument("conv2d: input channels " +
                                std::to_string(in.c) + " != filter in_maps " +
                                std::to_string(p.in_maps()));
  if (in.h < p.kh() || in.w < p.kw())
    throw std::invalid_argument("conv2d: input " + in.str() +
                                " smaller than kernel " +
                                p.filters.shape().str());
}

}  // namespace

Shape4 conv2d_output_shape(const Shape4& input, const ConvParams& params) {
  validate(input, params);
  return Shape4{input.n, params.out_maps(),
                (input.h - params.kh()) / params.stride + 1,
                (input.w - params.kw()) / params.stride + 1};
}

Shape4 conv2d_output_shape(const Shape4& input, std::size_t out_maps,
                           std::size_t kh, std::size_t kw,
                           std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be > 0");
  if (out_maps == 0 || kh == 0 || kw == 0)
    throw std::invalid_argument("conv2d: empty filter bank");
  if (input.h < kh || input.w < kw)
    throw std::invalid_argument("conv2d: input " + input.str() +
                                " smaller than kernel " + std::to_string(kh) +
                                "x" + std::to_string(kw));
  return Shape4{input.n, out_maps, (input.h - kh) / stride + 1,
                (input.w - kw) / stride + 1};
}

Tensor4 conv2d_forward(const Tensor4& input, const ConvParams& params) {
  const Shape4 in = input.shape();
  const Shape4 os = conv2d_output_shape(in, params);
  const std::size_t kh = params.kh(), kw = params.kw(), s = params.stride;
  Tensor4 out(os);

  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t co = 0; co < os.c; ++co) {
      double* omap = out.data() + out.index(n, co, 0, 0);
      const double b = params.bias[co];
      for (std::size_t i = 0; i < os.h * os.w; ++i) omap[i] = b;
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        for (std::size_t fy = 0; fy < kh; ++fy) {
          const double* wrow =
              params.filters.data() + params.filters.index(co, ci, fy, 0);
          for (std::size_t fx = 0; fx < kw; ++fx) {
            const double wv = wrow[fx];
            if (wv == 0.0) continue;
            for (std::size_t oy = 0; oy < os.h; ++oy) {
              const double* irow =
                  input.data() + input.index(n, ci, oy * s + fy, fx);
              double* orow = omap + oy * os.w;
              for (std::size_t ox = 0; ox < os.w; ++ox)
                orow[ox] += wv * irow[ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor4 conv2d_adjoint_input(const ConvParams& params,
                             const Tensor4& grad_output,
                             const Shape4& input_shape) {
  const Shape4 expect = conv2d_output_shape(input_shape, params);
  if (grad_output.shape() != expect)
    throw std::invalid_argument("conv2d_adjoint: grad_output shape " +
                                grad_output.shape().str() + " != expected " +
                                expect.str());
  const std::size_t kh = params.kh(), kw = params.kw(), s = params.stride;
  const Shape4 os = grad_output.shape();
  Tensor4 gin(input_shape);

  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t co = 0; co < os.c; ++co) {
      const double* gmap = grad_output.data() + grad_output.index(n, co, 0, 0);
      for (std::size_t ci = 0; ci < input_shape.c; ++ci) {
        for (std::size_t fy = 0; fy < kh; ++fy) {
          const double* wrow =
              params.filters.data() + params.filters.index(co, ci, fy, 0);
          for (std::size_t fx = 0; fx < kw; ++fx) {
            const double wv = wrow[fx];
            if (wv == 0.0) continue;
            for (std::size_t oy = 0; oy < os.h; ++oy) {
              const double* grow = gmap + oy * os.w;
              double* irow = gin.data() + gin.index(n, ci, oy * s + fy, fx);
              for (std::size_t ox = 0; ox < os.w; ++ox)
                irow[ox * s] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return gin;
}

ConvGrads conv2d_backward(const Tensor4& input, const ConvParams& params,
                          const Tensor4& grad_output) {
  const Shape4 in = input.shape();
  const Shape4 expect = conv2d_output_shape(in, params);
  if (grad_output.shape() != expect)
    throw std::invalid_argument("conv2d_backward: grad_output shape " +
                                grad_output.shape().str() + " != expected " +
                                expect.str());
  const std::size_t kh = params.kh(), kw = params.kw(), s = params.stride;
  const Shape4 os = grad_output.shape();

  ConvGrads g;
  g.input = conv2d_adjoint_input(params, grad_output, in);
  g.filters = Tensor4(params.filters.shape());
  g.bias.assign(params.bias.size(), 0.0);

  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t co = 0; co < os.c; ++co) {
      const double* gmap = grad_output.data() + grad_output.index(n, co, 0, 0);
      double bsum = 0.0;
      for (std::size_t i = 0; i < os.h * os.w; ++i) bsum += gmap[i];
      g.bias[co] += bsum;
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        for (std::size_t fy = 0; fy < kh; ++fy) {
          double* gwrow = g.filters.data() + g.filters.index(co, ci, fy, 0);
          for (std::size_t oy = 0; oy < os.h; ++oy) {
            const double* grow = gmap + oy * os.w;
            const double* irow = input.data() + input.index(n, ci, oy * s + fy, 0);
            for (std::size_t fx = 0; fx < kw; ++fx) {
              double acc = 0.0;
              for (std::size_t ox = 0; ox < os.w; ++ox)
                acc += grow[ox] * irow[ox * s + fx];
              gwrow[fx] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor4 relu_forward(const Tensor4& input) {
  Tensor4 out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  return out;
}

Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_output) {
  require_same_shape(input, grad_output, "relu_backward");
  Tensor4 gin(input.shape());
  const double* in = input.data();
  const double* go = grad_output.data();
  double* gi = gin.data();
  for (std::size_t i = 0; i < input.size(); ++i)
    gi[i] = in[i] > 0.0 ? go[i] : 0.0;
  return gin;
}

}  // namespace spool
