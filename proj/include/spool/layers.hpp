#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spool/pooling.hpp"
#include "spool/tensor.hpp"

namespace spool {

// Cross-map response normalization:
//   out[c] = in[c] / (k + alpha * sum_{c' in window(c)} in[c']^2)^beta
// where window(c) spans `size` maps centered on c, clamped at the edges.
struct LrnParams {
  std::size_t size = 5;  // maps per window, odd
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

Tensor4 lrn_forward(const Tensor4& input, const LrnParams& p);
Tensor4 lrn_backward(const Tensor4& input, const Tensor4& grad_output,
                     const LrnParams& p);

// Mean cross-entropy against a numerically stable (max-subtracted) softmax.
// Logits are (n, classes, 1, 1). grad is d(loss)/d(logits) with the batch
// mean folded in: (softmax - onehot) / divisor. divisor defaults to the
// batch size; callers accumulating chunks of a larger batch pass the full
// batch size instead. loss is likewise the per-row sum / divisor.
struct SoftmaxXent {
  double loss = 0.0;
  Tensor4 grad;
  Tensor4 probs;
};

SoftmaxXent softmax_xent(const Tensor4& logits, const std::vector<int>& labels,
                         std::size_t divisor = 0);

// Softmax probabilities alone (rows sum to 1), same stability scheme.
Tensor4 softmax_probs(const Tensor4& logits);

enum class LayerKind { Conv, Relu, Pool, ResponseNorm, Softmax };

// Declarative layer description. Parameter shapes (filter tensors, dense
// weights) are derived from the incoming shape when a network is
// instantiated, so the spec itself stays architecture-only.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;

  // Conv
  std::size_t conv_maps = 0;
  std::size_t conv_kernel = 0;
  std::size_t conv_stride = 1;

  // Pool
  std::size_t pool_window = 0;
  std::size_t pool_stride = 0;
  PoolingMode pool_train = PoolingMode::stochastic();
  PoolingMode pool_test = PoolingMode::prob_weight();

  // ResponseNorm
  LrnParams lrn;

  // Softmax (dense classifier over the flattened incoming maps)
  std::size_t classes = 0;

  static LayerSpec conv(std::size_t maps, std::size_t kernel,
                        std::size_t stride = 1);
  static LayerSpec relu();
  static LayerSpec pool(std::size_t window, std::size_t stride,
                        PoolingMode train_mode = PoolingMode::stochastic(),
                        PoolingMode test_mode = PoolingMode::prob_weight());
  static LayerSpec response_norm(const LrnParams& p = {});
  static LayerSpec softmax(std::size_t classes);
};

struct NetworkSpec {
  std::size_t input_c = 0, input_h = 0, input_w = 0;
  std::vector<LayerSpec> layers;

  std::size_t classes() const;  // from the final softmax layer

  // Throws ConfigError when shapes fail to compose or the stack does not
  // end in a softmax classifier.
  void validate() const;

  // Output shape of every layer for a given batch size; index 0 is the
  // input shape, index i+1 the output of layer i.
  std::vector<Shape4> shape_walk(std::size_t batch) const;

  std::string summary() const;
};

// Named reference stacks.
//   reference-64-64-64  : three 5x5 conv stages of 64 maps, 3x3/2 pooling
//                         with response norm after each pool (32x32 inputs)
//   reference-64-64-128 : same but 128 maps in stage 3
//   desk-28             : two small conv stages for 28x28 single-channel
//                         inputs (fits a single CPU core)
//   desk-32             : the same two-stage stack for 32x32 RGB inputs
//   tiny-10             : one six-map stage; fits 10x10 toy inputs
// Pool windows are clamped to the incoming map side where the stack would
// otherwise be infeasible (the third reference stage pools a 1x1 map).
NetworkSpec make_preset(const std::string& name, std::size_t input_c,
                        std::size_t input_h, std::size_t input_w,
                        std::size_t classes,
                        PoolingMode train_mode = PoolingMode::stochastic(),
                        PoolingMode test_mode = PoolingMode::prob_weight(),
                        bool with_response_norm = true,
                        std::size_t pool_window = 3, std::size_t pool_stride = 2);

std::vector<std::string> preset_names();

}  // namespace spool
