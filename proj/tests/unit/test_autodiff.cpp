#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "qmotion/autodiff.hpp"
#include "qmotion/error.hpp"
#include "qmotion/random.hpp"

using namespace qmotion;
using namespace qmotion::ad;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Projects a tensor-valued function to a scalar with fixed random weights so
/// every output coordinate participates in the check.
Var weighted(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(rng, y.shape());
  return sum(mul(y, y.tape().constant(std::move(w))));
}

void expect_gradcheck(const std::string& name, const ScalarFunction& f, const std::vector<Tensor>& inputs) {
  CAPTURE(name);
  const GradCheckResult r = check_gradients(f, inputs);
  CAPTURE(r.worst);
  CHECK(r.passed);
  CHECK(r.checked > 0);
}

}  // namespace

TEST_CASE("basic derivatives") {
  Tape t;
  Var x = t.variable(Tensor::scalar(3.0));
  Var y = square(x);
  t.backward(y);
  CHECK(x.grad().item() == 6.0);

  Tape t2;
  Var v = t2.variable(Tensor({4}, {1, 2, 3, 4}));
  t2.backward(mean(v));
  const Tensor gv = v.grad();
  for (double g : gv.values()) CHECK(g == 0.25);

  Tape t3;
  Var a = t3.variable(Tensor({3}, {1, 2, 3}));
  Var c = t3.constant(Tensor::scalar(5.0));
  t3.backward(c);
  const Tensor ga = a.grad();
  for (double g : ga.values()) CHECK(g == 0.0);

  Tape t4;
  Var lin = t4.variable(Tensor({3}, {0.1, -0.2, 0.3}));
  Var coef = t4.constant(Tensor({3}, {2.0, -1.0, 0.5}));
  t4.backward(sum(mul(lin, coef)));
  CHECK(lin.grad() == Tensor({3}, {2.0, -1.0, 0.5}));
}

TEST_CASE("tape errors") {
  Tape t;
  Var x = t.variable(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
  Var s = sum(x);
  t.backward(s);
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(s), InputError);
  CHECK_THROWS_AS(t.constant(Tensor::scalar(1.0)), InputError);

  Tape t2;
  CHECK_THROWS_AS(t2.constant(Tensor::scalar(std::numeric_limits<double>::quiet_NaN())), NumericalError);
  Var a = t2.variable(Tensor({2}, {1, 2}));
  Var b = t2.variable(Tensor({3}, {1, 2, 3}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("leaky relu slope") {
  Tape t;
  Var x = t.constant(Tensor({2}, {-1.0, 2.0}));
  Var y = leaky_relu(x, 0.05);
  CHECK(y.value()[0] == doctest::Approx(-0.05));
  CHECK(y.value()[1] == 2.0);
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(7);
  const Tensor a23 = random_tensor(rng, {2, 3});
  const Tensor b23 = random_tensor(rng, {2, 3});
  const Tensor b3 = random_tensor(rng, {3});
  const Tensor m34 = random_tensor(rng, {3, 4});
  const Tensor pos23 = random_tensor(rng, {2, 3}, 0.5, 2.0);
  const Tensor q = random_tensor(rng, {3, 4});
  const Tensor q2 = random_tensor(rng, {3, 4});
  const Tensor v3 = random_tensor(rng, {3, 3});
  const Tensor e = random_tensor(rng, {2, 3}, -1.2, 1.2);
  const Tensor tiny = random_tensor(rng, {1, 3}, -1e-4, 1e-4);

  expect_gradcheck("add", [](Tape&, const std::vector<Var>& x) { return weighted(add(x[0], x[1]), 1); }, {a23, b23});
  expect_gradcheck("sub", [](Tape&, const std::vector<Var>& x) { return weighted(sub(x[0], x[1]), 2); }, {a23, b23});
  expect_gradcheck("mul", [](Tape&, const std::vector<Var>& x) { return weighted(mul(x[0], x[1]), 3); }, {a23, b23});
  expect_gradcheck("add_bias", [](Tape&, const std::vector<Var>& x) { return weighted(add_bias(x[0], x[1]), 4); }, {a23, b3});
  expect_gradcheck("add_scalar", [](Tape&, const std::vector<Var>& x) { return weighted(add_scalar(x[0], 0.3), 5); }, {a23});
  expect_gradcheck("scale", [](Tape&, const std::vector<Var>& x) { return weighted(scale(x[0], -1.7), 6); }, {a23});
  expect_gradcheck("neg", [](Tape&, const std::vector<Var>& x) { return weighted(neg(x[0]), 7); }, {a23});
  expect_gradcheck("matmul", [](Tape&, const std::vector<Var>& x) { return weighted(matmul(x[0], x[1]), 8); }, {a23, m34});
  expect_gradcheck("concat", [](Tape&, const std::vector<Var>& x) { return weighted(concat({x[0], x[1], x[0]}), 9); }, {a23, b23});
  expect_gradcheck("slice", [](Tape&, const std::vector<Var>& x) { return weighted(slice(x[0], 1, 3), 10); }, {a23});
  expect_gradcheck("concat_rows", [](Tape&, const std::vector<Var>& x) { return weighted(concat_rows({x[0], x[1]}), 11); }, {a23, b23});
  expect_gradcheck("slice_rows", [](Tape&, const std::vector<Var>& x) { return weighted(slice_rows(x[0], 1, 2), 12); }, {a23});
  expect_gradcheck("reshape", [](Tape&, const std::vector<Var>& x) { return weighted(reshape(x[0], {3, 2}), 13); }, {a23});
  expect_gradcheck("sum", [](Tape&, const std::vector<Var>& x) { return square(sum(x[0])); }, {a23});
  expect_gradcheck("mean", [](Tape&, const std::vector<Var>& x) { return square(mean(x[0])); }, {a23});
  expect_gradcheck("sum_last", [](Tape&, const std::vector<Var>& x) { return weighted(sum_last(x[0]), 14); }, {a23});
  expect_gradcheck("square", [](Tape&, const std::vector<Var>& x) { return weighted(square(x[0]), 15); }, {a23});
  expect_gradcheck("sqrt", [](Tape&, const std::vector<Var>& x) { return weighted(sqrt(x[0]), 16); }, {pos23});
  expect_gradcheck("abs", [](Tape&, const std::vector<Var>& x) { return weighted(abs(x[0]), 17); }, {a23});
  expect_gradcheck("tanh", [](Tape&, const std::vector<Var>& x) { return weighted(tanh(x[0]), 18); }, {a23});
  expect_gradcheck("sigmoid", [](Tape&, const std::vector<Var>& x) { return weighted(sigmoid(x[0]), 19); }, {a23});
  expect_gradcheck("leaky_relu", [](Tape&, const std::vector<Var>& x) { return weighted(leaky_relu(x[0], 0.05), 20); }, {a23});
  expect_gradcheck("sin", [](Tape&, const std::vector<Var>& x) { return weighted(sin(x[0]), 21); }, {a23});
  expect_gradcheck("cos", [](Tape&, const std::vector<Var>& x) { return weighted(cos(x[0]), 22); }, {a23});
  expect_gradcheck("atan2", [](Tape&, const std::vector<Var>& x) { return weighted(atan2(x[0], x[1]), 23); }, {a23, pos23});
  expect_gradcheck("wrap_angle", [](Tape&, const std::vector<Var>& x) { return weighted(wrap_angle(x[0]), 24); }, {a23});
  expect_gradcheck("l2norm", [](Tape&, const std::vector<Var>& x) { return weighted(l2norm(x[0]), 25); }, {a23});
  expect_gradcheck("normalize", [](Tape&, const std::vector<Var>& x) { return weighted(normalize(x[0]), 26); }, {q});
  expect_gradcheck("qmul", [](Tape&, const std::vector<Var>& x) { return weighted(qmul(x[0], x[1]), 27); }, {q, q2});
  expect_gradcheck("qrot", [](Tape&, const std::vector<Var>& x) { return weighted(qrot(x[0], x[1]), 28); }, {q, v3});
  expect_gradcheck("expmap_to_quat", [](Tape&, const std::vector<Var>& x) { return weighted(expmap_to_quat(x[0]), 29); }, {e});
  expect_gradcheck("expmap_to_quat small", [](Tape&, const std::vector<Var>& x) { return weighted(expmap_to_quat(x[0]), 30); }, {tiny});
  for (rot::EulerOrder o : rot::kAllEulerOrders) {
    expect_gradcheck(std::string("euler_to_quat ") + std::string(rot::to_string(o)),
                     [o](Tape&, const std::vector<Var>& x) { return weighted(euler_to_quat(x[0], o), 31); }, {e});
    expect_gradcheck(std::string("quat_to_euler ") + std::string(rot::to_string(o)),
                     [o](Tape&, const std::vector<Var>& x) { return weighted(quat_to_euler(normalize(x[0]), o), 32); },
                     {q});
  }
}

TEST_CASE("composite conversions match the scalar library") {
  Rng rng(41);
  Tape t;
  const Tensor e = random_tensor(rng, {5, 3}, -1.5, 1.5);
  Var eq = expmap_to_quat(t.constant(e));
  for (std::size_t r = 0; r < 5; ++r) {
    const rot::Quat ref = rot::expmap_to_quat({e.at(r, 0), e.at(r, 1), e.at(r, 2)});
    CHECK(std::abs(eq.value().at(r, 0) - ref.w) <= 1e-15);
    CHECK(std::abs(eq.value().at(r, 3) - ref.z) <= 1e-15);
  }
  for (rot::EulerOrder o : rot::kAllEulerOrders) {
    Var q = euler_to_quat(t.constant(e), o);
    Var back = quat_to_euler(q, o);
    for (std::size_t r = 0; r < 5; ++r) {
      const rot::Quat ref = rot::euler_to_quat({e.at(r, 0), e.at(r, 1), e.at(r, 2), o});
      CHECK(std::abs(q.value().at(r, 0) - ref.w) <= 1e-12);
      CHECK(std::abs(q.value().at(r, 2) - ref.y) <= 1e-12);
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(back.value().at(r, c) - e.at(r, c)) <= 1e-9);
    }
  }
}

TEST_CASE("normalize gradient is orthogonal to its input") {
  Rng rng(43);
  for (int i = 0; i < 20; ++i) {
    Tape t;
    Var x = t.variable(random_tensor(rng, {1, 4}));
    t.backward(weighted(normalize(x), 100 + i));
    double d = 0.0;
    for (std::size_t k = 0; k < 4; ++k) d += x.grad()[k] * x.value()[k];
    CHECK(std::abs(d) <= 1e-9);
  }
}

TEST_CASE("gradients are deterministic") {
  auto run = [] {
    Rng rng(47);
    Tape t;
    Var w = t.variable(random_tensor(rng, {4, 4}));
    Var x = t.constant(random_tensor(rng, {3, 4}));
    Var y = tanh(matmul(x, w));
    t.backward(mean(square(y)));
    return w.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("parameter sets and bindings") {
  ParameterSet ps;
  const std::size_t iw = ps.add("w", Tensor({2}, {1.0, 2.0}));
  ps.add("b", Tensor::scalar(0.5));
  CHECK_THROWS_AS(ps.add("w", Tensor::scalar(0)), ConfigError);
  CHECK(ps.scalar_count() == 3);
  CHECK(ps.index_of("b") == 1);
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    Binding bind(t, ps);
    Var y = add_scalar(sum(square(bind["w"])), 0.0);
    t.backward(add(y, mul(bind["b"], bind["b"])));
    bind.accumulate_grads();
  }
  CHECK(ps.grad(iw) == Tensor({2}, {4.0, 8.0}));
  CHECK(ps.grad(1).item() == 2.0);
  ps.zero_grad();
  CHECK(ps.grad(iw) == Tensor({2}, {0.0, 0.0}));
}

TEST_CASE("subset gradient checks are reproducible") {
  Rng rng(53);
  const Tensor x = random_tensor(rng, {10, 4});
  GradCheckOptions opts;
  opts.max_coordinates = 7;
  opts.seed = 5;
  auto f = [](Tape&, const std::vector<Var>& v) { return weighted(normalize(v[0]), 60); };
  const auto r1 = check_gradients(f, {x}, opts);
  const auto r2 = check_gradients(f, {x}, opts);
  CHECK(r1.checked == 7);
  CHECK(r1.passed);
  CHECK(r1.worst == r2.worst);
}

TEST_CASE("kink handling excuses one-sided matches only") {
  // |x| with x inside the step: the central difference sees a smaller slope.
  const Tensor x({3}, {0.7, 3e-6, -1.2});
  auto f = [](Tape&, const std::vector<Var>& v) { return sum(abs(v[0])); };
  const auto strict = check_gradients(f, {x});
  CHECK_FALSE(strict.passed);
  GradCheckOptions opts;
  opts.skip_kinks = true;
  const auto lenient = check_gradients(f, {x}, opts);
  CHECK(lenient.passed);
  CHECK(lenient.kinks == 1);
  CHECK(lenient.checked == 3);

  // A wrong gradient on a smooth function is still caught.
  auto wrong = [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], detach(v[0]))); };
  const auto r = check_gradients(wrong, {Tensor({2}, {0.5, -2.0})}, opts);
  CHECK_FALSE(r.passed);
  CHECK(r.kinks == 0);
}
