#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "rarecp/grad/gradcheck.hpp"
#include "rarecp/grad/ops.hpp"
#include "rarecp/grad/optim.hpp"
#include "rarecp/grad/tape.hpp"
#include "rarecp/nn.hpp"

using namespace rarecp;
using namespace rarecp::grad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Reduces a tensor-valued op to a scalar with fixed random weights so every
// output component contributes to the check.
Var weighted_sum(const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return dot(reshape(y, {y.size()}), y.tape().constant(Tensor::vector(w.values())));
}

double check_unary(const std::function<Var(const Var&)>& op, Tensor x) {
  auto f = [&](Tape&, std::span<const Var> p) { return weighted_sum(op(p[0]), 77); };
  return finite_diff_check(f, {std::move(x)}).max_rel_error;
}

double check_binary(const std::function<Var(const Var&, const Var&)>& op, Tensor a, Tensor b) {
  auto f = [&](Tape&, std::span<const Var> p) { return weighted_sum(op(p[0], p[1]), 78); };
  return finite_diff_check(f, {std::move(a), std::move(b)}).max_rel_error;
}

}  // namespace

TEST_SUITE("grad") {

TEST_CASE("forward examples") {
  Tape tape;
  auto v = tape.constant(Tensor::vector({3.0, 4.0}));
  const auto n = l2_normalize(v).value();
  CHECK(n[0] == doctest::Approx(0.6));
  CHECK(n[1] == doctest::Approx(0.8));
  const auto s = softmax_with_temperature(tape.constant(Tensor::vector({0.0, 0.0})), 1.0).value();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  const auto sp = softplus_with_temperature(tape.constant(Tensor::scalar(0.0)), 0.5).value();
  CHECK(sp.item() == doctest::Approx(0.5 * std::log(2.0)));
  CHECK(softplus_value(0.0, 0.5) == doctest::Approx(0.5 * std::log(2.0)));
  CHECK(l2_normalize(tape.constant(Tensor::vector({0.0, 0.0}))).value().all_finite());
}

TEST_CASE("backward examples") {
  Tape tape;
  auto x = tape.parameter(Tensor::vector({1.0, 2.0}));
  auto loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);

  Tape t2;
  auto y = t2.parameter(Tensor::vector({1.0, 2.0}));
  auto c = t2.parameter(Tensor::scalar(3.0));
  auto l2 = square(c);
  t2.backward(l2);
  CHECK(y.grad()[0] == 0.0);
  CHECK(y.grad()[1] == 0.0);
  CHECK(c.grad().item() == 6.0);
}

TEST_CASE("finite_diff_check is tight on a quadratic") {
  auto f = [](Tape& tape, std::span<const Var> p) {
    auto a = tape.constant(Tensor::vector({1.0, -2.0, 0.5}));
    return add(dot(p[0], p[0]), scale(dot(a, p[0]), 3.0));
  };
  CHECK(finite_diff_check(f, {Tensor::vector({0.3, -1.2, 2.0})}).max_rel_error < 1e-8);
}

TEST_CASE("every primitive's VJP matches central differences") {
  std::mt19937_64 rng(1234);
  const double tol = 1e-4;
  auto mat = [&](std::size_t r, std::size_t c) { return random_tensor({r, c}, rng); };
  auto vec = [&](std::size_t n) { return random_tensor({n}, rng); };
  auto pos = [&](std::size_t n) { return random_tensor({n}, rng, 0.5, 2.0); };

  CHECK(check_binary([](const Var& a, const Var& b) { return add(a, b); }, vec(5), vec(5)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return sub(a, b); }, mat(2, 3), mat(2, 3)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return mul(a, b); }, vec(5), vec(5)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return matmul(a, b); }, mat(3, 4), mat(4, 2)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return matmul(a, b); }, mat(3, 4), vec(4)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return matmul(a, b); }, vec(4), mat(4, 3)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return dot(a, b); }, vec(6), vec(6)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return scale_by(a, b); }, vec(4), Tensor::scalar(0.7)) < tol);
  CHECK(check_binary([](const Var& a, const Var& b) { return div_by(a, b); }, vec(4), Tensor::scalar(1.3)) < tol);
  {
    auto f = [](Tape&, std::span<const Var> p) { return weighted_sum(affine(p[0], p[1], p[2]), 5); };
    CHECK(finite_diff_check(f, {mat(3, 4), mat(2, 4), vec(2)}).max_rel_error < tol);
    CHECK(finite_diff_check(f, {vec(4), mat(2, 4), vec(2)}).max_rel_error < tol);
  }
  {
    auto f = [](Tape&, std::span<const Var> p) {
      const Var parts[] = {p[0], p[1]};
      return weighted_sum(concat(parts), 6);
    };
    CHECK(finite_diff_check(f, {vec(3), vec(2)}).max_rel_error < tol);
    CHECK(finite_diff_check(f, {mat(2, 3), mat(2, 1)}).max_rel_error < tol);
  }

  CHECK(check_unary([](const Var& x) { return scale(x, -2.5); }, vec(4)) < tol);
  CHECK(check_unary([](const Var& x) { return add_scalar(x, 0.3); }, vec(4)) < tol);
  CHECK(check_unary([](const Var& x) { return sum(x); }, mat(2, 3)) < tol);
  CHECK(check_unary([](const Var& x) { return mean(x); }, mat(2, 3)) < tol);
  CHECK(check_unary([](const Var& x) { return l2_normalize(x); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return l2_normalize(x); }, mat(3, 4)) < tol);
  CHECK(check_unary([](const Var& x) { return softmax_with_temperature(x, 0.3); }, vec(6)) < tol);
  CHECK(check_unary([](const Var& x) { return sigmoid(x); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return softplus_with_temperature(x, 0.4); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return tanh(x); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return relu(x); }, pos(5)) < tol);
  CHECK(check_unary([](const Var& x) { return log(x); }, pos(5)) < tol);
  CHECK(check_unary([](const Var& x) { return exp(x); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return square(x); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return sqrt(x); }, pos(5)) < tol);
  CHECK(check_unary([](const Var& x) { return index_select(x, {2, 0, 2, 4}); }, vec(5)) < tol);
  CHECK(check_unary([](const Var& x) { return index_select(x, {1, 1, 0}); }, mat(3, 2)) < tol);
  CHECK(check_unary([](const Var& x) { return reshape(x, {3, 2}); }, vec(6)) < tol);
  CHECK(check_unary([](const Var& x) { return slice(x, 1, 4); }, vec(6)) < tol);
  CHECK(check_unary([](const Var& x) { return cumsum(x); }, vec(6)) < tol);
}

TEST_CASE("primitives stay finite on their domain") {
  Tape tape;
  auto big = tape.constant(Tensor::vector({-800.0, 0.0, 800.0}));
  CHECK(sigmoid(big).value().all_finite());
  CHECK(softplus_with_temperature(big, 1e-4).value().all_finite());
  CHECK(softmax_with_temperature(big, 1e-3).value().all_finite());
  CHECK(tanh(big).value().all_finite());
  CHECK(relu(big).value().all_finite());
  auto small = tape.constant(Tensor::vector({1e-300, 1.0}));
  CHECK(log(small).value().all_finite());
  CHECK(sqrt(tape.constant(Tensor::vector({0.0, 4.0}))).value().all_finite());
}

TEST_CASE("random three-layer network matches finite differences") {
  std::mt19937_64 rng(31);
  Mlp mlp = Mlp::init(5, 7, 2, 3, Activation::tanh, rng);
  const Tensor x = random_tensor({4, 5}, rng);
  std::vector<Tensor> params;
  for (auto* t : mlp.parameters()) params.push_back(*t);
  auto f = [&](Tape& tape, std::span<const Var> p) {
    return weighted_sum(mlp.forward(tape.constant(x), p), 9);
  };
  CHECK(finite_diff_check(f, params).max_rel_error < 1e-4);

  // differentiable and plain forward agree
  Tape tape;
  std::vector<Var> vars;
  for (auto& t : params) vars.push_back(tape.constant(t));
  const auto a = mlp.forward(tape.constant(x), vars).value();
  const auto b = mlp.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(41);
  const Tensor w = random_tensor({6, 6}, rng);
  const Tensor x = random_tensor({6}, rng);
  auto run = [&] {
    Tape tape;
    auto W = tape.parameter(w);
    auto h = tanh(matmul(W, tape.constant(x)));
    auto loss = sum(softplus_with_temperature(h, 0.1));
    tape.backward(loss);
    return W.grad().values();
  };
  CHECK(run() == run());
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  Adam opt(AdamConfig{0.1});
  Tensor p = Tensor::vector({1.0, -1.0, 0.0});
  opt.step({&p}, {Tensor::vector({2.0, -0.5, 0.0})});
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-0.9));
  CHECK(p[2] == 0.0);
  CHECK(opt.steps() == 1);
}

}
