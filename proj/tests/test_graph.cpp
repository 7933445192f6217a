#include <doctest.h>

#include <cmath>

#include "catgrad/graph.hpp"
#include "catgrad/oracle.hpp"
#include "test_util.hpp"

using namespace catgrad;
using testutil::grad_rel_error;
using testutil::random_tensor;

TEST_CASE("softmax of equal logits is uniform") {
  Graph g;
  Value x = g.constant(Tensor({3}, {0, 0, 0}));
  Tensor y = softmax(x, 0).tensor();
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("log_sum_exp of (0,0) is log 2") {
  Graph g;
  Value x = g.constant(Tensor({2}, {0, 0}));
  CHECK(log_sum_exp(x, 0).scalar() == doctest::Approx(0.6931471805599453));
}

TEST_CASE("matmul shape rule") {
  Graph g;
  Value a = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Value b = g.constant(Tensor({3, 1}, {1, 1, 1}));
  Tensor c = matmul(a, b).tensor();
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 6);
  CHECK(c[1] == 15);
  Value bad = g.constant(Tensor({2, 2}));
  CHECK_THROWS_AS(matmul(a, bad), Error);
}

TEST_CASE("backward of sum gives ones") {
  Graph g;
  Value theta = g.parameter(Tensor({3}, {0.3, -1.2, 2.0}));
  auto grads = g.backward(sum_all(theta));
  const Tensor& gt = grads.at(theta.id);
  for (std::size_t i = 0; i < 3; ++i) CHECK(gt[i] == 1.0);
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Graph g;
  Value x = g.parameter(Tensor::scalar(0.0));
  auto grads = g.backward(sigmoid(x));
  CHECK(grads.at(x.id)[0] == doctest::Approx(0.25));
}

TEST_CASE("backward requires scalar loss and runs once") {
  Graph g;
  Value x = g.parameter(Tensor({2}, {1.0, 2.0}));
  Value y = mul(x, x);
  CHECK_THROWS_AS(g.backward(y), Error);

  Graph g2;
  Value x2 = g2.parameter(Tensor({2}, {1.0, 2.0}));
  Value loss = sum_all(mul(x2, x2));
  g2.backward(loss);
  CHECK_THROWS_AS(g2.backward(loss), Error);
}

TEST_CASE("log rejects non-positive input") {
  Graph g;
  Value x = g.constant(Tensor({2}, {1.0, 0.0}));
  CHECK_THROWS_AS(log_op(x), Error);
}

TEST_CASE("stop_gradient and argmax_one_hot block gradients exactly") {
  Graph g;
  Value theta = g.parameter(Tensor({3}, {0.5, 2.0, -1.0}));
  Value blocked = stop_gradient(mul(theta, theta));
  Value hard = argmax_one_hot(theta, 0);
  Value loss = add(sum_all(blocked), sum_all(mul(hard, theta)));
  auto grads = g.backward(loss);
  // only the direct (one-hot . theta) term contributes
  CHECK(grads.at(theta.id)[0] == 0.0);
  CHECK(grads.at(theta.id)[1] == 1.0);
  CHECK(grads.at(theta.id)[2] == 0.0);
}

TEST_CASE("argmax one-hot breaks ties at the lowest index") {
  Graph g;
  Value x = g.constant(Tensor({4}, {2.0, 5.0, 5.0, 1.0}));
  Tensor z = argmax_one_hot(x, 0).tensor();
  CHECK(z[1] == 1.0);
  CHECK(z[2] == 0.0);
}

TEST_CASE("non-reparameterized samples stop the backward pass") {
  RngStream rng(11);
  Graph g;
  Value theta = g.parameter(Tensor({3}, {0.1, 0.2, 0.3}));
  Value z = categorical_sample_node(theta, 0, rng);
  Value loss = sum_all(mul(z, g.constant(Tensor({3}, {1.0, 2.0, 3.0}))));
  auto grads = g.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(grads.at(theta.id)[i] == 0.0);
}

TEST_CASE("reparameterized gumbel-softmax flows to logits") {
  RngStream rng(12);
  Graph g;
  Value theta = g.parameter(Tensor({3}, {0.1, 0.2, 0.3}));
  Value y = gumbel_softmax_node(theta, 0, 0.8, rng);
  auto grads = g.backward(sum_all(mul(y, g.constant(Tensor({3}, {1.0, 2.0, 3.0})))));
  double norm = 0;
  for (std::size_t i = 0; i < 3; ++i) norm += std::abs(grads.at(theta.id)[i]);
  CHECK(norm > 0.0);
}

// Every differentiable op against the central finite-difference oracle.
TEST_CASE("autodiff matches finite differences per op") {
  RngStream rng(2024);
  const Shape mat{2, 3};
  Tensor coeffs_m = random_tensor(mat, rng);
  Tensor coeffs_v = random_tensor({3}, rng);
  Tensor other = random_tensor(mat, rng);
  Tensor row = random_tensor({3}, rng);
  Tensor weights = random_tensor({3, 2}, rng);

  struct Case {
    const char* name;
    Shape shape;
    std::function<Value(Graph&, Value)> build;
  };
  std::vector<Case> cases = {
      {"add", mat, [&](Graph& g, Value x) { return add(x, g.constant(other)); }},
      {"add_broadcast", mat, [&](Graph& g, Value x) { return add(x, g.constant(row)); }},
      {"sub", mat, [&](Graph& g, Value x) { return sub(g.constant(other), x); }},
      {"mul", mat, [&](Graph& g, Value x) { return mul(x, g.constant(other)); }},
      {"mul_broadcast", mat, [&](Graph& g, Value x) { return mul(x, g.constant(row)); }},
      {"matmul", mat, [&](Graph& g, Value x) { return matmul(x, g.constant(weights)); }},
      {"sigmoid", mat, [&](Graph&, Value x) { return sigmoid(x); }},
      {"tanh", mat, [&](Graph&, Value x) { return tanh_op(x); }},
      {"exp", mat, [&](Graph&, Value x) { return exp_op(x); }},
      {"softplus", mat, [&](Graph&, Value x) { return softplus(x); }},
      {"log_sum_exp", mat, [&](Graph&, Value x) { return log_sum_exp(x, 1); }},
      {"softmax", mat, [&](Graph&, Value x) { return softmax(x, 1); }},
      {"tempered_softmax", mat, [&](Graph&, Value x) { return tempered_softmax(x, 1, 0.37); }},
      {"sum_axis0", mat, [&](Graph&, Value x) { return sum(x, 0); }},
      {"mean_axis1", mat, [&](Graph&, Value x) { return mean(x, 1); }},
      {"concat", mat,
       [&](Graph& g, Value x) { return concat({x, g.constant(other)}, 1); }},
      {"slice", mat, [&](Graph&, Value x) { return slice(x, 1, 1, 3); }},
      {"reshape", mat, [&](Graph&, Value x) { return reshape(x, {3, 2}); }},
  };

  auto fixed_weights = [](const Shape& s) {
    RngStream wrng(99);
    return random_tensor(s, wrng);
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    Tensor theta = random_tensor(c.shape, rng);
    auto scalar_fn = [&](const Tensor& t) {
      Graph g;
      Value x = g.parameter(t);
      Value out = c.build(g, x);
      return sum_all(mul(out, g.constant(fixed_weights(out.shape())))).scalar();
    };
    Graph g;
    Value x = g.parameter(theta);
    Value out = c.build(g, x);
    auto grads = g.backward(sum_all(mul(out, g.constant(fixed_weights(out.shape())))));
    Tensor fd = finite_difference(scalar_fn, theta);
    CHECK(grad_rel_error(grads.at(x.id), fd) < 1e-5);
  }
}

TEST_CASE("relu and log match finite differences away from kinks") {
  RngStream rng(77);
  Tensor pos = random_tensor({2, 3}, rng, 0.5, 3.0);
  auto log_fn = [&](const Tensor& t) {
    Graph g;
    Value x = g.parameter(t);
    return sum_all(log_op(x)).scalar();
  };
  Graph g;
  Value x = g.parameter(pos);
  auto grads = g.backward(sum_all(log_op(x)));
  CHECK(grad_rel_error(grads.at(x.id), finite_difference(log_fn, pos)) < 1e-5);

  Tensor mixed({4}, {-2.0, -0.5, 0.5, 2.0});
  auto relu_fn = [](const Tensor& t) {
    Graph g;
    Value x = g.parameter(t);
    return sum_all(relu(x)).scalar();
  };
  Graph g2;
  Value x2 = g2.parameter(mixed);
  auto grads2 = g2.backward(sum_all(relu(x2)));
  CHECK(grad_rel_error(grads2.at(x2.id), finite_difference(relu_fn, mixed)) < 1e-5);
}

TEST_CASE("composite loss through tempered softmax matches finite differences") {
  RngStream rng(31);
  Tensor theta = random_tensor({4}, rng);
  Tensor target = random_tensor({4}, rng, 0.0, 1.0);
  auto fn = [&](const Tensor& t) {
    Graph g;
    Value x = g.parameter(t);
    Value p = tempered_softmax(x, 0, 1.0);
    Value d = sub(p, g.constant(target));
    return sum_all(mul(d, d)).scalar();
  };
  Graph g;
  Value x = g.parameter(theta);
  Value p = tempered_softmax(x, 0, 1.0);
  Value d = sub(p, g.constant(target));
  auto grads = g.backward(sum_all(mul(d, d)));
  CHECK(grad_rel_error(grads.at(x.id), finite_difference(fn, theta)) < 1e-5);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  RngStream rng(5);
  Graph g;
  Value x = g.constant(random_tensor({5, 7}, rng, -10.0, 10.0));
  Tensor y = softmax(x, 1).tensor();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(y.at(r, c) > 0.0);
      s += y.at(r, c);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("sgd momentum single step decreases by lr*g") {
  std::vector<Tensor> params{Tensor({2}, {1.0, 1.0})};
  std::vector<Tensor> grads{Tensor({2}, {0.5, -0.25})};
  SgdMomentum state{.lr = 0.1, .momentum = 0.9};
  sgd_momentum_step(params, grads, state);
  CHECK(params[0][0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(params[0][1] == doctest::Approx(1.0 + 0.1 * 0.25));
}

TEST_CASE("sgd momentum velocity decays by 0.9 on zero gradients") {
  std::vector<Tensor> params{Tensor({1}, {0.0})};
  SgdMomentum state{.lr = 1.0, .momentum = 0.9};
  sgd_momentum_step(params, {Tensor({1}, {1.0})}, state);
  for (int i = 0; i < 3; ++i) sgd_momentum_step(params, {Tensor({1}, {0.0})}, state);
  CHECK(state.velocity[0][0] == doctest::Approx(0.9 * 0.9 * 0.9));
}

TEST_CASE("sgd momentum two constant steps displace by lr*g*2.9") {
  // hand recursion: v1 = g, v2 = 1.9 g -> total displacement lr*g*(1 + 1.9)
  std::vector<Tensor> params{Tensor({1}, {0.0})};
  std::vector<Tensor> grads{Tensor({1}, {2.0})};
  SgdMomentum state{.lr = 0.01, .momentum = 0.9};
  sgd_momentum_step(params, grads, state);
  sgd_momentum_step(params, grads, state);
  CHECK(params[0][0] == doctest::Approx(-0.01 * 2.0 * 2.9));
}

TEST_CASE("sgd rejects non-finite gradients without touching params") {
  std::vector<Tensor> params{Tensor({1}, {1.0})};
  std::vector<Tensor> grads{Tensor({1}, {std::nan("")})};
  SgdMomentum state{.lr = 0.1, .momentum = 0.9};
  CHECK_THROWS_AS(sgd_momentum_step(params, grads, state), Error);
  CHECK(params[0][0] == 1.0);
}
