#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "ssat/tape.hpp"

using namespace ssat;
using ssat_test::fd_check;
using ssat_test::random_tensor;

TEST_CASE("f(x) = x*x at x=3 gives value 9 and gradient 6") {
  Tape tape;
  const int x = tape.leaf(Tensor::scalar(3.0));
  const int y = tape.mul(x, x);
  const ValueGrad vg = value_and_grad(tape, y, {x});
  CHECK(vg.value == doctest::Approx(9.0));
  CHECK(vg.grads[0].data[0] == doctest::Approx(6.0));
}

TEST_CASE("cross-entropy of uniform logits is ln(10) with softmax-minus-onehot gradient") {
  Tape tape;
  const int logits = tape.leaf(Tensor(1, 10, 0.0));
  Tensor onehot(1, 10);
  onehot.data[0] = 1.0;
  const int picked = tape.mul(tape.log_softmax(logits), tape.constant(onehot));
  const int loss = tape.scale(tape.sum(picked), -1.0);
  const ValueGrad vg = value_and_grad(tape, loss, {logits});
  CHECK(vg.value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(vg.grads[0].data[0] == doctest::Approx(0.1 - 1.0).epsilon(1e-12));
  for (std::size_t c = 1; c < 10; ++c) {
    CHECK(vg.grads[0].data[c] == doctest::Approx(0.1).epsilon(1e-12));
  }
}

TEST_CASE("two-layer perceptron gradient matches central differences") {
  Rng rng(7);
  const Tensor x = random_tensor(1, 8, rng);
  const Tensor w1 = random_tensor(8, 6, rng);
  const Tensor b1 = random_tensor(1, 6, rng);
  const Tensor w2 = random_tensor(6, 1, rng);
  const Tensor b2 = random_tensor(1, 1, rng);
  const auto build = [](Tape& t, const std::vector<int>& leaves) {
    const int h = t.tanh_(t.affine(leaves[0], leaves[1], leaves[2]));
    const int out = t.affine(h, leaves[3], leaves[4]);
    return t.sum(out);
  };
  const auto report = fd_check(build, {x, w1, b1, w2, b2});
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("every op kind matches finite differences") {
  Rng rng(99);
  // Some ops need constrained inputs (log/sqrt positive, distinct entries
  // for row extrema).
  const auto check = [&](const char* name, const ssat_test::GraphBuilder& b,
                         const std::vector<Tensor>& leaves) {
    const auto report = fd_check(b, leaves);
    INFO(name);
    CHECK(report.max_rel_error < 1e-4);
  };

  const Tensor a = random_tensor(3, 4, rng);
  const Tensor b = random_tensor(3, 4, rng);
  const Tensor row = random_tensor(1, 4, rng);
  const Tensor pos = random_tensor(3, 4, rng, 0.5, 2.0);

  check("add", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.add(l[0], l[1]));
  }, {a, b});
  check("add_broadcast", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.add(l[0], l[1]));
  }, {a, row});
  check("sub", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.sub(l[0], l[1]));
  }, {a, b});
  check("sub_broadcast", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.sub(l[0], l[1]));
  }, {a, row});
  check("mul", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.mul(l[0], l[1]));
  }, {a, b});
  check("mul_broadcast", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.mul(l[0], l[1]));
  }, {a, row});
  check("scale_add_scalar", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.add_scalar(t.scale(l[0], -1.7), 0.3));
  }, {a});
  check("matmul", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.matmul(l[0], l[1]));
  }, {random_tensor(3, 4, rng), random_tensor(4, 2, rng)});
  check("affine", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.affine(l[0], l[1], l[2]));
  }, {random_tensor(3, 4, rng), random_tensor(4, 2, rng),
      random_tensor(1, 2, rng)});
  check("relu", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.relu(l[0]));
  }, {a});
  check("tanh", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.tanh_(l[0]));
  }, {a});
  check("exp", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.exp_(l[0]));
  }, {a});
  check("log", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.log_(l[0]));
  }, {pos});
  check("sqrt", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.sqrt_(l[0]));
  }, {pos});
  check("sum", [](Tape& t, const std::vector<int>& l) {
    return t.sum(l[0]);
  }, {a});
  check("mean", [](Tape& t, const std::vector<int>& l) {
    return t.mean(t.mul(l[0], l[0]));
  }, {a});
  check("row_sum", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.row_sum(l[0]));
  }, {a});
  check("softmax", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.softmax(l[0]));
  }, {a});
  check("log_softmax", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.log_softmax(l[0]));
  }, {a});
  check("sqnorm", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(l[0]);
  }, {a});
  check("kl_categorical", [](Tape& t, const std::vector<int>& l) {
    return t.mean(t.kl_categorical(l[0], l[1]));
  }, {a, b});
  check("concat_cols", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.concat_cols(l[0], l[1]));
  }, {a, random_tensor(3, 2, rng)});
  check("sin", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.sin_(l[0]));
  }, {a});
  check("cos", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.cos_(l[0]));
  }, {a});
  check("row_max", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.row_max(l[0]));
  }, {a});
  check("row_min", [](Tape& t, const std::vector<int>& l) {
    return t.sqnorm(t.row_min(l[0]));
  }, {a});
}

TEST_CASE("output adjoint is one and unreachable nodes stay zero") {
  Tape tape;
  const int x = tape.leaf(Tensor::scalar(2.0));
  const int unused = tape.leaf(Tensor::scalar(5.0));
  const int dead_branch = tape.mul(unused, unused);
  const int y = tape.mul(x, x);
  tape.backward(y);
  CHECK(tape.adjoint(y).data[0] == 1.0);
  CHECK(tape.adjoint(unused).data[0] == 0.0);
  CHECK(tape.adjoint(dead_branch).data[0] == 0.0);
}

TEST_CASE("shape mismatch errors name the offending node") {
  Tape tape;
  const int a = tape.leaf(Tensor(2, 3));
  const int b = tape.leaf(Tensor(4, 3));
  try {
    tape.add(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("tape node") != std::string::npos);
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("non-finite forward values raise instead of propagating NaN") {
  Tape tape;
  Tensor neg(1, 1);
  neg.data[0] = -1.0;
  const int x = tape.leaf(neg);
  CHECK_THROWS_AS(tape.log_(x), Error);  // log(-1) = NaN
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  const int x = tape.leaf(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("gradients accumulate when a leaf feeds several paths") {
  // f = sum(x) + sqnorm(x): df/dx_i = 1 + 2 x_i.
  Tape tape;
  Tensor v(1, 3);
  v.data = {1.0, -2.0, 0.5};
  const int x = tape.leaf(v);
  const int out = tape.add(tape.sum(x), tape.sqnorm(x));
  const ValueGrad vg = value_and_grad(tape, out, {x});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(vg.grads[0].data[i] ==
          doctest::Approx(1.0 + 2.0 * v.data[i]).epsilon(1e-12));
  }
}
