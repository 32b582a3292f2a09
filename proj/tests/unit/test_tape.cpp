#include "doctest.h"
#include "helpers.hpp"

#include "advsim/error.hpp"
#include "advsim/tape.hpp"

using namespace advsim;
using testutil::max_rel_error;
using testutil::random_tensor;

TEST_CASE("gradient of a plain sum is all ones") {
  Tape tape;
  Var x = tape.leaf(random_tensor({4, 4, 3}, 1), true);
  Var loss = sum(x);
  Tensor g = grad_wrt_input(tape, loss, x);
  CHECK(g == Tensor({4, 4, 3}, 1.0));
}

TEST_CASE("gradient of a constant is all zeros") {
  Tape tape;
  Var x = tape.leaf(random_tensor({3, 3, 3}, 2), true);
  Var c = tape.leaf(Tensor::vector({1, 2}), false);
  Var loss = sum(c);
  CHECK(grad_wrt_input(tape, loss, x) == Tensor({3, 3, 3}));
}

TEST_CASE("non-scalar loss is a contract error") {
  Tape tape;
  Var x = tape.leaf(random_tensor({2, 2, 1}, 3), true);
  Var y = relu(x);
  CHECK_THROWS_AS(grad_wrt_input(tape, y, x), ContractError);
}

TEST_CASE("finite differences") {
  auto squares = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return s;
  };
  Tensor g = finite_diff_gradient(squares, Tensor({5}, 1.0));
  for (double v : g.data()) CHECK(v == doctest::Approx(2.0).epsilon(1e-8));

  auto linear = [](const Tensor& t) { return 3.0 * t[0] - 2.0 * t[1]; };
  Tensor h = finite_diff_gradient(linear, Tensor::vector({0.3, 0.7}), 0.5);
  CHECK(h[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(h[1] == doctest::Approx(-2.0).epsilon(1e-12));
}

namespace {

// Small network touching every differentiable op.
struct SmallNet {
  Tensor k1 = random_tensor({3, 3, 3, 4}, 11, -0.5, 0.5);
  Tensor b1 = random_tensor({4}, 12, -0.1, 0.1);
  Tensor w = random_tensor({3 * 3 * 4, 5}, 13, -0.5, 0.5);
  Tensor b2 = random_tensor({5}, 14, -0.1, 0.1);

  Var build(Tape& tape, Var x) const {
    Var h = scale(x, 1.0 / 255.0);
    h = maxpool2(relu(add_bias(conv2d(h, tape.leaf(k1), 1), tape.leaf(b1))));
    return dense(h, tape.leaf(w), tape.leaf(b2));
  }
};

}  // namespace

TEST_CASE("analytic input gradient matches finite differences") {
  const SmallNet net;
  const Tensor target = Tensor::vector({0.1, 0.2, 0.4, 0.2, 0.1});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x0 = random_tensor({8, 8, 3}, seed, 0, 255);
    for (int head = 0; head < 2; ++head) {
      auto loss_of = [&](const Tensor& x) {
        Tape t;
        Var out = net.build(t, t.leaf(x));
        return (head == 0 ? ce_loss(softmax(out), target) : bce_loss(sigmoid(out), target)).value()[0];
      };
      Tape tape;
      Var x = tape.leaf(x0, true);
      Var out = net.build(tape, x);
      Var loss = head == 0 ? ce_loss(softmax(out), target) : bce_loss(sigmoid(out), target);
      const Tensor analytic = grad_wrt_input(tape, loss, x);
      const Tensor numeric = finite_diff_gradient(loss_of, x0);
      CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
  }
}

TEST_CASE("parameter gradients match finite differences") {
  const SmallNet net;
  const Tensor x0 = random_tensor({8, 8, 3}, 21, 0, 255);
  auto loss_of = [&](const Tensor& k) {
    SmallNet n = net;
    n.k1 = k;
    Tape t;
    return sum(n.build(t, t.leaf(x0))).value()[0];
  };
  Tape tape;
  Var x = tape.leaf(x0);
  Var h = scale(x, 1.0 / 255.0);
  Var k = tape.leaf(net.k1, true);
  h = maxpool2(relu(add_bias(conv2d(h, k, 1), tape.leaf(net.b1))));
  Var loss = sum(dense(h, tape.leaf(net.w), tape.leaf(net.b2)));
  tape.backward(loss);
  CHECK(max_rel_error(tape.grad(k), finite_diff_gradient(loss_of, net.k1)) < 1e-4);
}

TEST_CASE("replay reproduces the recorded output") {
  const SmallNet net;
  Tape tape;
  Var x = tape.leaf(random_tensor({8, 8, 3}, 5, 0, 255), true);
  Var out = softmax(net.build(tape, x));
  const Tensor recorded = out.value();
  CHECK(tape.replay(out) == recorded);

  const Tensor other = random_tensor({8, 8, 3}, 6, 0, 255);
  tape.set_leaf(x, other);
  Tape fresh;
  Var y = softmax(net.build(fresh, fresh.leaf(other)));
  CHECK(tape.replay(out) == y.value());
}

TEST_CASE("records are topologically ordered") {
  const SmallNet net;
  Tape tape;
  net.build(tape, tape.leaf(random_tensor({8, 8, 3}, 7), true));
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (std::size_t in : tape.record(id).inputs) CHECK(in < id);
  }
}
