#pragma once

#include <vector>

#include "spool/tensor.hpp"

namespace spool {

// Filters are (out_maps, in_maps, kh, kw). Convolution is cross-correlation
// (no filter flip), valid (no padding).
struct ConvParams {
  Tensor4 filters;
  std::vector<double> bias;
  std::size_t stride = 1;

  std::size_t out_maps() const { return filters.shape().n; }
  std::size_t in_maps() const { return filters.shape().c; }
  std::size_t kh() const { return filters.shape().h; }
  std::size_t kw() const { return filters.shape().w; }
};

struct ConvGrads {
  Tensor4 input;
  Tensor4 filters;
  std::vector<double> bias;
};

// Output shape (n, out_maps, (h-kh)/stride+1, (w-kw)/stride+1).
Shape4 conv2d_output_shape(const Shape4& input, const ConvParams& params);
Shape4 conv2d_output_shape(const Shape4& input, std::size_t out_maps,
                           std::size_t kh, std::size_t kw, std::size_t stride);

Tensor4 conv2d_forward(const Tensor4& input, const ConvParams& params);

ConvGrads conv2d_backward(const Tensor4& input, const ConvParams& params,
                          const Tensor4& grad_output);

// Adjoint of the bias-free forward map: scatters `grad_output` back through
// the filters onto an input-shaped tensor. conv2d_backward's grad_input and
// the deconvolution visualizer both go through here.
Tensor4 conv2d_adjoint_input(const ConvParams& params,
                             const Tensor4& grad_output,
                             const Shape4& input_shape);

Tensor4 relu_forward(const Tensor4& input);

// Subgradient at exactly 0 is 0.
Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_output);

}  // namespace spool
