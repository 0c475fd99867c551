#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_cases.hpp"
#include "silencio/errors.hpp"
#include "silencio/gradcheck.hpp"
#include "silencio/optim.hpp"
#include "silencio/tensorgrad.hpp"
#include "test_support.hpp"

using namespace silencio;
using tg::Node;
using tg::Tape;
using testing::random_tensor;

TEST_CASE("tensor rejects zero extents and reports shapes") {
  CHECK_THROWS_AS(Tensor(0, 3), DimensionError);
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  const Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.shape_string() == "2x3");
  CHECK(transpose(t)(2, 1) == 6);
  CHECK(slice_rows(t, 1, 1)(0, 0) == 4);
}

TEST_CASE("matmul with identity returns the operand") {
  std::mt19937_64 rng(1);
  Tape tape;
  const Tensor x = random_tensor(2, 3, rng);
  const Node out = tg::matmul(tape, tape.constant(Tensor::identity(2)), tape.constant(x));
  CHECK(tape.value(out) == x);
}

TEST_CASE("tanh of zeros is zeros") {
  Tape tape;
  const Node out = tg::tanh(tape, tape.constant(Tensor(3, 2)));
  CHECK(tape.value(out) == Tensor(3, 2));
}

TEST_CASE("conv1d matches a direct sliding-window sum") {
  std::mt19937_64 rng(2);
  const std::size_t len = 5, c_in = 2, c_out = 3, kernel = 3;
  const Tensor x = random_tensor(len, c_in, rng);
  const Tensor w = random_tensor(kernel * c_in, c_out, rng);
  Tape tape;
  const Tensor& got = tape.value(tg::conv1d(tape, tape.constant(x), tape.constant(w), kernel));
  REQUIRE(got.rows() == len);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double expect = 0.0;
      for (int k = -1; k <= 1; ++k) {
        const int src = static_cast<int>(t) + k;
        if (src < 0 || src >= static_cast<int>(len)) continue;
        for (std::size_t c = 0; c < c_in; ++c)
          expect += x(static_cast<std::size_t>(src), c) * w(static_cast<std::size_t>(k + 1) * c_in + c, o);
      }
      CHECK(got(t, o) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("shape errors name the op") {
  Tape tape;
  const Node a = tape.constant(Tensor(2, 3));
  const Node b = tape.constant(Tensor(2, 3));
  try {
    tg::matmul(tape, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(tg::add(tape, a, tape.constant(Tensor(3, 3))), DimensionError);
  CHECK_THROWS_AS(tg::slice_time(tape, a, 1, 2), DimensionError);
  CHECK_THROWS_AS(tg::conv1d(tape, a, tape.constant(Tensor(4, 2)), 3), DimensionError);
}

TEST_CASE("maxpool and slices forward") {
  Tape tape;
  const Node x = tape.constant(Tensor::from_rows({{1, -1}, {3, -5}, {2, 0}, {-4, 7}, {0, 1}}));
  CHECK(tape.value(tg::maxpool_time(tape, x, 2)) == Tensor::from_rows({{3, -1}, {2, 7}, {0, 1}}));
  CHECK(tape.value(tg::slice_time(tape, x, 3, 2)) == Tensor::from_rows({{-4, 7}, {0, 1}}));
  CHECK(tape.value(tg::concat_features(tape, {x, x})).cols() == 4);
}

TEST_CASE("softmax cross-entropy forward") {
  Tape tape;
  const Node logits = tape.constant(Tensor::from_rows({{0.0, 0.0}, {2.0, -1.0}}));
  const double ce = tape.value(tg::softmax_cross_entropy(tape, logits, {0, 1}))[0];
  const double expect = 0.5 * (std::log(2.0) + (3.0 + std::log1p(std::exp(-3.0))));
  CHECK(ce == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("squared error gradient has the analytic form") {
  std::mt19937_64 rng(3);
  const Tensor x0 = random_tensor(3, 4, rng), t0 = random_tensor(3, 4, rng);
  Tape tape;
  const Node x = tape.leaf(x0);
  const auto grads = tape.backward(tg::squared_error_mean(tape, x, tape.constant(t0)));
  for (std::size_t i = 0; i < x0.size(); ++i)
    CHECK(grads.at(x)[i] == doctest::Approx(2.0 * (x0[i] - t0[i]) / 12.0).epsilon(1e-14));
}

TEST_CASE("mean(tanh(Wx)) gradient matches finite differences") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(5, 3, rng);
  const double err = tg::grad_check(
      [&](Tape& tape, Node w) { return tg::mean(tape, tg::tanh(tape, tg::matmul(tape, tape.constant(x), w))); },
      random_tensor(3, 2, rng));
  CHECK(err <= 1e-6);
}

TEST_CASE("loss independent of a leaf yields a zero gradient") {
  Tape tape;
  const Node x = tape.leaf(Tensor(2, 2, 1.0));
  const Node y = tape.leaf(Tensor(1, 3, 2.0));
  const auto grads = tape.backward(tg::mean(tape, y));
  CHECK(grads.at(x) == Tensor(2, 2));
}

TEST_CASE("backward needs a scalar loss") {
  Tape tape;
  const Node x = tape.leaf(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(tg::tanh(tape, x)), ContractError);
}

TEST_CASE("every primitive passes grad_check") {
  for (const auto& c : testing::primitive_cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(seed + 100);
      CAPTURE(c.name);
      CAPTURE(seed);
      CHECK(tg::grad_check(c.fn, c.points(rng)) <= 1e-5);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor(3, 3, rng), w0 = random_tensor(3, 3, rng);
  const double a = 0.7, b = -1.9;
  auto grads_for = [&](double ca, double cb) {
    Tape tape;
    const Node x = tape.leaf(x0);
    const Node l1 = tg::mean(tape, tg::tanh(tape, tg::matmul(tape, x, tape.constant(w0))));
    const Node l2 = tg::squared_error_mean(tape, tg::relu(tape, x), tape.constant(w0));
    return tape.backward(tg::add(tape, tg::scale(tape, l1, ca), tg::scale(tape, l2, cb))).at(x);
  };
  const Tensor combined = grads_for(a, b);
  const Tensor g1 = grads_for(1.0, 0.0), g2 = grads_for(0.0, 1.0);
  for (std::size_t i = 0; i < combined.size(); ++i)
    CHECK(std::abs(combined[i] - (a * g1[i] + b * g2[i])) <= 1e-12);
}

TEST_CASE("grl_mark is identity forward and scales gradients by -lambda") {
  std::mt19937_64 rng(6);
  const Tensor x0 = random_tensor(3, 2, rng);
  Tape probe;
  CHECK(probe.value(tg::grl_mark(probe, probe.constant(x0), 0.5)) == x0);

  auto grad = [&](std::optional<double> lambda) {
    Tape tape;
    const Node x = tape.leaf(x0);
    Node y = tg::tanh(tape, x);
    if (lambda) y = tg::grl_mark(tape, y, *lambda);
    return tape.backward(tg::mean(tape, tg::mul(tape, y, y))).at(x);
  };
  const Tensor plain = grad(std::nullopt);
  for (double lambda : {0.0, 0.3, 1.0}) {
    const Tensor marked = grad(lambda);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(std::abs(marked[i] + lambda * plain[i]) <= 1e-12);
  }
  CHECK(grad(0.0) == Tensor(3, 2));
  CHECK(testing::grl_fd_error(rng, 0.4) <= 1e-5);

  Tape tape;
  const Node x = tape.leaf(x0);
  CHECK_THROWS_AS(tg::grl_mark(tape, x, -0.1), ContractError);
  CHECK_THROWS_AS(tg::grl_mark(tape, x, std::nan("")), ContractError);
}

TEST_CASE("grad_check reference functions") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor(3, 3, rng);
  // sum(x) = mean(x) * N
  CHECK(tg::grad_check([](Tape& t, Node a) { return tg::scale(t, tg::mean(t, a), 9.0); }, x) <= 1e-9);
  CHECK(tg::grad_check([](Tape& t, Node a) { return tg::mean(t, tg::mul(t, a, a)); }, x) <= 1e-6);
  CHECK(tg::grad_check([](Tape& t, Node) { return t.constant(Tensor::scalar(3.0)); }, x) == 0.0);
  CHECK_THROWS_AS(tg::grad_check([](Tape& t, Node a) { return tg::mean(t, a); }, x, 0.0), ContractError);
  CHECK_THROWS_AS(tg::grad_check(
                      [](Tape& t, Node a) {
                        return tg::scale(t, tg::mean(t, a), std::numeric_limits<double>::infinity());
                      },
                      x),
                  NumericError);
}

TEST_CASE("replay reproduces forward values without mutating leaves") {
  std::mt19937_64 rng(8);
  const Tensor x0 = random_tensor(4, 3, rng);
  Tape tape;
  const Node x = tape.leaf(x0);
  const Node y = tg::relu(tape, tg::conv1d(tape, x, tape.constant(random_tensor(9, 2, rng)), 3));
  const Node loss = tg::mean(tape, tg::maxpool_time(tape, y, 2));
  const auto replayed = tape.replay();
  REQUIRE(replayed.size() == tape.size());
  CHECK(replayed[loss.id] == tape.value(loss));
  CHECK(replayed[y.id] == tape.value(y));
  CHECK(tape.value(x) == x0);
}

TEST_CASE("adam steps") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{Tensor(2, 2, 1.5)};
    std::vector<Tensor> grads{Tensor(2, 2)};
    auto state = tg::make_opt_state(params);
    tg::optimizer_step(params, grads, state, 1e-3);
    CHECK(params[0] == Tensor(2, 2, 1.5));
    CHECK(state.first_moment[0] == Tensor(2, 2));
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    std::vector<Tensor> params{Tensor::from_rows({{0.0, 0.0, 0.0}})};
    std::vector<Tensor> grads{Tensor::from_rows({{2.0, -0.5, 1e-3}})};
    auto state = tg::make_opt_state(params);
    tg::optimizer_step(params, grads, state, 1e-3);
    // m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps).
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = grads[0][i];
      CHECK(params[0][i] == doctest::Approx(-1e-3 * g / (std::abs(g) + 1e-8)).epsilon(1e-12));
    }
  }
  SUBCASE("identical calls are bitwise identical") {
    std::mt19937_64 rng(9);
    std::vector<Tensor> p1{random_tensor(3, 3, rng)}, g{random_tensor(3, 3, rng)};
    auto p2 = p1;
    auto s1 = tg::make_opt_state(p1), s2 = tg::make_opt_state(p2);
    for (int i = 0; i < 3; ++i) {
      tg::optimizer_step(p1, g, s1, 1e-3);
      tg::optimizer_step(p2, g, s2, 1e-3);
    }
    CHECK(p1 == p2);
    CHECK(s1.second_moment == s2.second_moment);
  }
  SUBCASE("mismatched shapes and bad learning rates") {
    std::vector<Tensor> params{Tensor(2, 2)};
    std::vector<Tensor> grads{Tensor(2, 3)};
    auto state = tg::make_opt_state(params);
    CHECK_THROWS_AS(tg::optimizer_step(params, grads, state, 1e-3), DimensionError);
    std::vector<Tensor> ok{Tensor(2, 2)};
    CHECK_THROWS_AS(tg::optimizer_step(params, ok, state, 0.0), ContractError);
  }
  SUBCASE("sgd") {
    std::vector<Tensor> params{Tensor(1, 2, 1.0)};
    std::vector<Tensor> grads{Tensor::from_rows({{2.0, -4.0}})};
    tg::sgd_step(params, grads, 0.5);
    CHECK(params[0] == Tensor::from_rows({{0.0, 3.0}}));
  }
}
