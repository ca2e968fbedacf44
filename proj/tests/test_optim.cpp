#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "spool/common.hpp"
#include "spool/network.hpp"
#include "spool/optim.hpp"
#include "support.hpp"

using namespace spool;

namespace {

NetworkSpec two_param_spec() {
  NetworkSpec spec;
  spec.input_c = 1;
  spec.input_h = 6;
  spec.input_w = 6;
  spec.layers = {LayerSpec::conv(2, 3), LayerSpec::relu(),
                 LayerSpec::pool(2, 2), LayerSpec::softmax(3)};
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints, midpoint, monotonicity") {
  CHECK(lr_at_epoch(0.01, 0, 280) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at_epoch(0.01, 279, 280) ==
        doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at_epoch(1.0, 0, 280) == 1.0);
  CHECK(lr_at_epoch(1.0, 279, 280) == doctest::Approx(0.01).epsilon(1e-12));
  // Middle of a 3-epoch schedule: 1 - 0.99/2.
  CHECK(lr_at_epoch(1.0, 1, 3) == doctest::Approx(0.505).epsilon(1e-15));
  // Single-epoch schedule runs at the base rate.
  CHECK(lr_at_epoch(0.7, 0, 1) == 0.7);

  double prev = lr_at_epoch(1.0, 0, 50);
  for (std::size_t e = 1; e < 50; ++e) {
    const double cur = lr_at_epoch(1.0, e, 50);
    CHECK(cur < prev);
    CHECK(cur > 0.0);
    prev = cur;
  }

  CHECK_THROWS_AS((void)lr_at_epoch(1.0, 5, 5), std::invalid_argument);
  CHECK_THROWS_AS((void)lr_at_epoch(1.0, 0, 0), std::invalid_argument);
}

TEST_CASE("two momentum steps on a unit gradient") {
  // v <- m v - lr g ; x <- x + v, with m=0.9, lr=0.1, g=1:
  // step 1: v=-0.1, x=-0.1 ; step 2: v=-0.19, x=-0.29.
  double x = 0.0, v = 0.0;
  const double g = 1.0;
  sgd_update(&x, &v, &g, 1, 0.1, 0.9, 0.0);
  CHECK(v == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(x == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_update(&x, &v, &g, 1, 0.1, 0.9, 0.0);
  CHECK(v == doctest::Approx(-0.19).epsilon(1e-15));
  CHECK(x == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("momentum-free descent on a quadratic bowl") {
  // f(x)=x^2, so x <- x - eps*2x = 0.9x from x0=1. f drops below 1e-6 when
  // |x| < 1e-3, i.e. after ceil(ln 1e-3 / ln 0.9) = 66 steps.
  double x = 1.0, v = 0.0;
  int t = 0;
  while (x * x >= 1e-6 && t < 200) {
    const double g = 2.0 * x;
    sgd_update(&x, &v, &g, 1, 0.05, 0.0, 0.0);
    ++t;
  }
  CHECK(x * x < 1e-6);
  CHECK(t == 66);
}

TEST_CASE("momentum trajectory matches an independent recurrence") {
  double x = 1.0, v = 0.0;
  double rx = 1.0, rv = 0.0;
  for (int t = 0; t < 50; ++t) {
    const double g = 2.0 * x;
    sgd_update(&x, &v, &g, 1, 0.05, 0.9, 0.0);
    rv = 0.9 * rv - 0.05 * (2.0 * rx);
    rx += rv;
    CHECK(x == rx);
    CHECK(v == rv);
  }
  CHECK(std::abs(x) < 1.0);  // still contracting
}

TEST_CASE("zero momentum and zero decay reduce to vanilla descent") {
  double x = 0.3, v = 0.0;
  const double g = 0.7;
  sgd_update(&x, &v, &g, 1, 0.2, 0.0, 0.0);
  CHECK(x == doctest::Approx(0.3 - 0.2 * 0.7).epsilon(1e-15));
  // Linearity in the gradient.
  double x2 = 0.3, v2 = 0.0;
  const double g2 = 1.4;
  sgd_update(&x2, &v2, &g2, 1, 0.2, 0.0, 0.0);
  CHECK((0.3 - x2) == doctest::Approx(2.0 * (0.3 - x)).epsilon(1e-12));
}

TEST_CASE("weight decay pulls filters toward zero, never biases") {
  NetworkSpec spec = two_param_spec();
  NetworkParams params = init_params(spec, RngStream(1), 0.5);
  params.layer[0].bias = {0.25, -0.5};
  SgdHyper hyper;
  hyper.momentum = 0.0;
  hyper.weight_decay = 0.01;
  hyper.lr_conv = 0.1;
  hyper.lr_softmax = 0.1;
  hyper.total_epochs = 1;
  SgdState state = SgdState::make(hyper, params);

  std::vector<LayerGrads> grads = zero_grads_like(params);
  const double w0 = params.layer[0].filters[0];
  momentum_step(state, spec, params, grads, 0);
  CHECK(params.layer[0].filters[0] ==
        doctest::Approx(w0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
  CHECK(params.layer[0].bias[0] == 0.25);
  CHECK(params.layer[0].bias[1] == -0.5);
}

TEST_CASE("the classifier layer trains at its own rate") {
  NetworkSpec spec = two_param_spec();
  NetworkParams params = init_params(spec, RngStream(2), 0.0);
  SgdHyper hyper;
  hyper.momentum = 0.0;
  hyper.weight_decay = 0.0;
  hyper.lr_conv = 0.01;
  hyper.lr_softmax = 1.0;
  hyper.total_epochs = 2;
  SgdState state = SgdState::make(hyper, params);

  std::vector<LayerGrads> grads = zero_grads_like(params);
  grads[0].filters.fill(1.0);
  grads[3].filters.fill(1.0);
  momentum_step(state, spec, params, grads, 0);
  CHECK(params.layer[0].filters[0] == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(params.layer[3].filters[0] == doctest::Approx(-1.0).epsilon(1e-15));

  // Second epoch anneals both rates by the same schedule.
  params = init_params(spec, RngStream(2), 0.0);
  state = SgdState::make(hyper, params);
  momentum_step(state, spec, params, grads, 1);
  CHECK(params.layer[0].filters[0] ==
        doctest::Approx(-0.01 * 0.01).epsilon(1e-12));
  CHECK(params.layer[3].filters[0] ==
        doctest::Approx(-1.0 * 0.01).epsilon(1e-12));
}

TEST_CASE("state reuse carries velocity across steps") {
  NetworkSpec spec = two_param_spec();
  NetworkParams params = init_params(spec, RngStream(3), 0.0);
  SgdHyper hyper;
  hyper.momentum = 0.9;
  hyper.weight_decay = 0.0;
  hyper.lr_conv = 0.1;
  hyper.lr_softmax = 0.1;
  hyper.total_epochs = 1;
  SgdState state = SgdState::make(hyper, params);
  std::vector<LayerGrads> grads = zero_grads_like(params);
  grads[0].filters.fill(1.0);
  momentum_step(state, spec, params, grads, 0);
  momentum_step(state, spec, params, grads, 0);
  CHECK(params.layer[0].filters[0] == doctest::Approx(-0.29).epsilon(1e-12));
  CHECK(state.velocity[0].filters[0] == doctest::Approx(-0.19).epsilon(1e-12));
}

TEST_CASE("rejects bad hyperparameters and non-finite gradients") {
  NetworkSpec spec = two_param_spec();
  NetworkParams params = init_params(spec, RngStream(4), 0.1);
  SgdHyper bad;
  bad.lr_conv = 0.0;
  CHECK_THROWS_AS((void)SgdState::make(bad, params), std::invalid_argument);
  bad = SgdHyper{};
  bad.momentum = -0.1;
  CHECK_THROWS_AS((void)SgdState::make(bad, params), std::invalid_argument);
  bad = SgdHyper{};
  bad.total_epochs = 0;
  CHECK_THROWS_AS((void)SgdState::make(bad, params), std::invalid_argument);

  SgdHyper ok;
  ok.total_epochs = 1;
  SgdState state = SgdState::make(ok, params);
  std::vector<LayerGrads> grads = zero_grads_like(params);
  grads[0].filters[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(momentum_step(state, spec, params, grads, 0), NumericError);

  std::vector<LayerGrads> wrong = zero_grads_like(params);
  wrong.pop_back();
  CHECK_THROWS_AS(momentum_step(state, spec, params, wrong, 0),
                  std::invalid_argument);
}

TEST_CASE("reference hyperparameter defaults") {
  SgdHyper h;
  CHECK(h.momentum == 0.9);
  CHECK(h.weight_decay == 0.001);
  CHECK(h.lr_conv == 0.01);
  CHECK(h.lr_softmax == 1.0);
  CHECK(h.total_epochs == 280);
}
