#include <doctest.h>

#include <cmath>

#include "drivecap/control.hpp"

using namespace drivecap;

namespace {

ControlHead make_head(size_t channels, size_t frames, uint64_t seed) {
  Rng rng(seed);
  return ControlHead::init(16, channels, frames, 1, 2, 2, rng);
}

Tensor make_tokens(size_t rows, uint64_t seed, bool grad = false) {
  Rng rng(seed);
  return Tensor::randn({rows, 16}, rng, 1.0, grad);
}

}  // namespace

TEST_CASE("prediction covers frames 2..T") {
  ControlHead head = make_head(2, 32, 1);
  Tensor tokens = make_tokens(16 * 4, 2);  // 16 slices x 4 spatial tokens
  Tensor pred = head.predict(tokens, 16, 4);
  CHECK(pred.shape() == Shape{31, 2});
}

TEST_CASE("single-channel configuration predicts 1-tuples") {
  ControlHead head = make_head(1, 8, 3);
  Tensor tokens = make_tokens(4 * 2, 4);
  CHECK(head.predict(tokens, 4, 2).shape() == Shape{7, 1});
}

TEST_CASE("zeroed read-out weights give all-zero predictions") {
  ControlHead head = make_head(2, 8, 5);
  for (auto& v : head.readout.weight.mutable_data()) v = 0.0;
  for (auto& v : head.readout.bias.mutable_data()) v = 0.0;
  Tensor tokens = make_tokens(4 * 2, 6);
  Tensor pred = head.predict(tokens, 4, 2);
  for (double v : pred.data()) CHECK(v == 0.0);
}

TEST_CASE("loss hand cases") {
  // identity
  Tensor truth = Tensor::leaf({3, 1}, {1, 2, 3});
  Tensor exact = Tensor::leaf({2, 1}, {2, 3});
  CHECK(control_loss(truth, exact).item() == 0.0);

  // S=(1),(2),(3), predictions (2),(4): ((2-2)^2 + (4-3)^2)/2 = 0.5 exactly
  Tensor pred = Tensor::leaf({2, 1}, {2, 4});
  CHECK(control_loss(truth, pred).item() == 0.5);

  // doubling residuals quadruples the loss
  Tensor pred2 = Tensor::leaf({2, 1}, {2, 5});  // residuals 0, 2
  CHECK(control_loss(truth, pred2).item() == doctest::Approx(4 * 0.5).epsilon(1e-15));

  CHECK_THROWS_AS(control_loss(truth, Tensor::leaf({3, 1}, {1, 2, 3})), ContractError);
}

TEST_CASE("loss is nonnegative, zero only at exact match") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor truth = Tensor::randn({5, 2}, rng, 2.0);
    Tensor pred = Tensor::randn({4, 2}, rng, 2.0);
    const double loss = control_loss(truth, pred).item();
    CHECK(loss >= 0.0);
    std::vector<double> tail(truth.data().begin() + 2, truth.data().end());
    CHECK(control_loss(truth, Tensor::leaf({4, 2}, tail)).item() == 0.0);
  }
}

TEST_CASE("analytic gradient of the loss is 2(pred - truth)/(T-1)") {
  Rng rng(11);
  Tensor truth = Tensor::randn({5, 2}, rng, 1.0, false);
  Tensor pred = Tensor::randn({4, 2}, rng, 1.0, true);
  {
    Tape tape;
    Tensor loss = control_loss(truth, pred);
    tape.backward(loss);
  }
  REQUIRE(pred.has_grad());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double expected = 2.0 * (pred.data()[i] - truth.data()[i + 2]) / 4.0;
    CHECK(pred.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  // and against finite differences
  auto f = [&](const Tensor& p) { return control_loss(truth, p); };
  CHECK(grad_check(f, pred, 1e-5, 1e-5).pass);
}

TEST_CASE("full head gradient reaches the input tokens and read-out") {
  ControlHead head = make_head(2, 4, 13);
  Tensor tokens = make_tokens(2 * 2, 14, true);
  Rng rng(15);
  Tensor truth = Tensor::randn({4, 2}, rng, 1.0, false);
  auto f = [&](const Tensor& t) { return control_loss(truth, head.predict(t, 2, 2)); };
  CHECK(grad_check(f, tokens, 1e-5, 1e-4).pass);
  auto g = [&](const Tensor& w) {
    ControlHead h = head;
    h.readout.weight = w;
    return control_loss(truth, h.predict(tokens, 2, 2));
  };
  CHECK(grad_check(g, head.readout.weight, 1e-5, 1e-4).pass);
}

TEST_CASE("head rejects zero channels and mismatched grids") {
  Rng rng(17);
  CHECK_THROWS_AS(ControlHead::init(16, 0, 8, 1, 2, 2, rng), ConfigError);
  ControlHead head = make_head(2, 8, 18);
  Tensor tokens = make_tokens(6, 19);
  CHECK_THROWS_AS(head.predict(tokens, 4, 2), ContractError);  // 6 != 4*2
}
