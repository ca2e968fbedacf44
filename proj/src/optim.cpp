#include "spool/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spool/common.hpp"

namespace spool {

double lr_at_epoch(double base, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs == 0)
    throw std::invalid_argument("lr_at_epoch: zero-length schedule");
  if (epoch >= total_epochs)
    throw std::invalid_argument("lr_at_epoch: epoch " + std::to_string(epoch) +
                                " outside schedule of " +
                                std::to_string(total_epochs));
  if (total_epochs == 1) return base;
  const double t =
      static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return base * (1.0 - 0.99 * t);
}

void sgd_update(double* param, double* velocity, const double* grad,
                std::size_t count, double lr, double momentum,
                double weight_decay) {
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(grad[i]))
      throw NumericError("sgd_update: non-finite gradient at element " +
                         std::to_string(i));
    const double g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] - lr * g;
    param[i] += velocity[i];
  }
}

SgdState SgdState::make(const SgdHyper& hyper, const NetworkParams& params) {
  if (hyper.momentum < 0.0 || hyper.weight_decay < 0.0 || hyper.lr_conv <= 0.0 ||
      hyper.lr_softmax <= 0.0 || hyper.total_epochs == 0)
    throw std::invalid_argument("sgd: bad hyperparameters");
  SgdState s;
  s.hyper = hyper;
  s.velocity = zero_grads_like(params);
  return s;
}

void momentum_step(SgdState& state, const NetworkSpec& spec,
                   NetworkParams& params, const std::vector<LayerGrads>& grads,
                   std::size_t epoch) {
  if (params.layer.size() != spec.layers.size() ||
      grads.size() != spec.layers.size() ||
      state.velocity.size() != spec.layers.size())
    throw std::invalid_argument("momentum_step: layer count mismatch");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    ConvParams& p = params.layer[i];
    if (p.filters.size() == 0) continue;
    require_same_shape(p.filters, grads[i].filters, "momentum_step");
    require_same_shape(p.filters, state.velocity[i].filters, "momentum_step");
    if (grads[i].bias.size() != p.bias.size())
      throw std::invalid_argument("momentum_step: bias length mismatch at layer " +
                                  std::to_string(i));
    const double base = spec.layers[i].kind == LayerKind::Softmax
                            ? state.hyper.lr_softmax
                            : state.hyper.lr_conv;
    const double lr = lr_at_epoch(base, epoch, state.hyper.total_epochs);
    try {
      sgd_update(p.filters.data(), state.velocity[i].filters.data(),
                 grads[i].filters.data(), p.filters.size(), lr,
                 state.hyper.momentum, state.hyper.weight_decay);
      sgd_update(p.bias.data(), state.velocity[i].bias.data(),
                 grads[i].bias.data(), p.bias.size(), lr, state.hyper.momentum,
                 /*weight_decay=*/0.0);
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
}

}  // namespace spool
