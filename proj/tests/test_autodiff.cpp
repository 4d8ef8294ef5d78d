#include <catch2/catch.hpp>

#include <cmath>

#include "fcmnet/ops.hpp"
#include "fcmnet/rng.hpp"
#include "fcmnet/tape.hpp"
#include "fcmnet/verification.hpp"

using namespace fcmnet;

TEST_CASE("d/dx sum(x) is all ones") {
  auto x = make_tensor<double>(Shape4{2, 3, 4, 4});
  Rng rng(1);
  uniform_fill(*x, -1.0, 1.0, rng);
  Tape<double> tape;
  auto loss = reduce_sum(&tape, x);
  tape.backward(loss);
  for (double g : x->grad) REQUIRE(g == 1.0);
}

TEST_CASE("d/dx sum(x*x) is 2x") {
  auto x = make_tensor<double>(Shape4{1, 2, 3, 3});
  Rng rng(2);
  uniform_fill(*x, -1.0, 1.0, rng);
  Tape<double> tape;
  auto loss = reduce_sum(&tape, eltwise_mul(&tape, x, x));
  tape.backward(loss);
  for (size_t i = 0; i < x->data.size(); ++i) REQUIRE(x->grad[i] == Approx(2.0 * x->data[i]).margin(1e-15));
}

TEST_CASE("backward requires a recorded scalar root") {
  auto x = make_tensor<double>(Shape4{1, 1, 2, 2});
  Tape<double> tape;
  auto unrecorded = make_scalar<double>(1.0);
  REQUIRE_THROWS_AS(tape.backward(unrecorded), UsageError);

  auto y = eltwise_add(&tape, x, x);  // recorded but not scalar
  REQUIRE_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("repeat backward after zeroing is deterministic; without zeroing it accumulates") {
  auto x = make_tensor<double>(Shape4{1, 1, 2, 2});
  Rng rng(3);
  uniform_fill(*x, -1.0, 1.0, rng);
  Tape<double> tape;
  auto loss = reduce_sum(&tape, eltwise_mul(&tape, x, x));
  tape.backward(loss);
  const std::vector<double> first = x->grad;

  tape.zero_grads();
  x->zero_grad();
  tape.backward(loss);
  REQUIRE(x->grad == first);

  SECTION("without zeroing, a single-node chain accumulates") {
    auto y = make_tensor<double>(Shape4{1, 1, 2, 2}, 0.5);
    Tape<double> t2;
    auto l2 = reduce_sum(&t2, y);
    t2.backward(l2);
    t2.backward(l2);
    for (double g : y->grad) REQUIRE(g == 2.0);
  }
}

TEST_CASE("gradients accumulate across multiple uses of a value") {
  auto x = make_tensor<double>(Shape4{1, 1, 1, 2});
  x->data = {3.0, -2.0};
  Tape<double> tape;
  auto y = eltwise_add(&tape, x, x);
  auto loss = reduce_sum(&tape, eltwise_mul(&tape, y, x));  // sum(2x * x) = 2*sum(x^2)
  tape.backward(loss);
  REQUIRE(x->grad[0] == Approx(4.0 * 3.0));
  REQUIRE(x->grad[1] == Approx(4.0 * -2.0));
}

TEST_CASE("gradcheck on a quadratic is exact to machine-precision scale") {
  auto theta = make_tensor<double>(Shape4{1, 1, 2, 3});
  Rng rng(4);
  uniform_fill(*theta, -1.0, 1.0, rng);
  auto result = gradcheck<double>(
      [&](Tape<double>* t) { return reduce_sum(t, eltwise_mul(t, theta, theta)); }, {{"theta", theta}});
  REQUIRE(result.ok);
  REQUIRE(result.max_rel_err < 1e-9);
}

TEST_CASE("gradcheck reports non-finite losses") {
  auto theta = make_tensor<double>(Shape4{1, 1, 1, 1});
  theta->data[0] = std::numeric_limits<double>::quiet_NaN();
  auto result = gradcheck<double>(
      [&](Tape<double>* t) { return reduce_sum(t, theta); }, {{"theta", theta}});
  REQUIRE_FALSE(result.ok);
  REQUIRE(result.message.find("non-finite") != std::string::npos);
}

TEST_CASE("every op passes its gradient check") {
  for (const auto& check : op_gradcheck_suite(20240801)) {
    INFO(check.name << ": " << check.detail);
    CHECK(check.ok);
  }
}

TEST_CASE("fault hook corrupts the conv backward and the checker notices") {
  faults::conv2d_backward_perturb = 1e-3;
  bool conv_failed = false;
  for (const auto& check : op_gradcheck_suite(20240801)) {
    if (check.name.find("conv2d") != std::string::npos && !check.ok) conv_failed = true;
  }
  faults::conv2d_backward_perturb = 0.0;
  REQUIRE(conv_failed);
}

TEST_CASE("conv2d weight gradient matches finite differences") {
  Rng rng(5);
  auto x = make_tensor<double>(Shape4{1, 3, 6, 6});
  uniform_fill(*x, -1.0, 1.0, rng);
  ConvSpec spec = ConvSpec::standard(3, 2, 3, 1, 1);
  auto w = make_tensor<double>(spec.weight_shape());
  uniform_fill(*w, -1.0, 1.0, rng);
  const double gain = readout_gain(conv2d<double>(nullptr, x, spec, w));
  auto result = gradcheck<double>(
      [&](Tape<double>* t) { return gradcheck_readout(t, conv2d(t, x, spec, w), gain); }, {{"w", w}});
  INFO(result.summary());
  REQUIRE(result.ok);
  REQUIRE(result.max_rel_err < 1e-5);
}

TEST_CASE("float instantiation runs forward and backward") {
  auto x = make_tensor<float>(Shape4{1, 2, 4, 4});
  Rng rng(6);
  uniform_fill(*x, -1.0, 1.0, rng);
  ConvSpec spec = ConvSpec::depthwise(2, 3);
  auto w = make_tensor<float>(spec.weight_shape());
  uniform_fill(*w, -1.0, 1.0, rng);
  Tape<float> tape;
  auto loss = reduce_mean(&tape, silu(&tape, conv2d(&tape, x, spec, w)));
  tape.backward(loss);
  REQUIRE(w->has_grad());
  float sum = 0;
  for (float g : w->grad) sum += std::fabs(g);
  REQUIRE(sum > 0.0f);
}
