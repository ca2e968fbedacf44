#pragma once

#include <cstddef>
#include <vector>

#include "spool/network.hpp"

namespace spool {

struct SgdHyper {
  double momentum = 0.9;
  double weight_decay = 0.001;
  double lr_conv = 1e-2;    // convolutional parameter group
  double lr_softmax = 1.0;  // classifier parameter group
  std::size_t total_epochs = 280;
};

// Linear anneal from `base` at epoch 0 down to base/100 at the final epoch.
// Throws std::invalid_argument when epoch is outside [0, total_epochs).
double lr_at_epoch(double base, std::size_t epoch, std::size_t total_epochs);

// One velocity-form update on a flat parameter span:
//   g' = grad + weight_decay * param
//   v  = momentum * v - lr * g'
//   param += v
// Throws NumericError on non-finite gradients.
void sgd_update(double* param, double* velocity, const double* grad,
                std::size_t count, double lr, double momentum,
                double weight_decay);

struct SgdState {
  SgdHyper hyper;
  std::vector<LayerGrads> velocity;  // shapes mirror the parameters

  static SgdState make(const SgdHyper& hyper, const NetworkParams& params);
};

// Applies one batch update to every parameterized layer. Filters decay;
// biases do not. The classifier layer uses lr_softmax, everything else
// lr_conv, both annealed by lr_at_epoch.
void momentum_step(SgdState& state, const NetworkSpec& spec,
                   NetworkParams& params, const std::vector<LayerGrads>& grads,
                   std::size_t epoch);

}  // namespace spool
