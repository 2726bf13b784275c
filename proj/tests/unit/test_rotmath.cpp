#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "qmotion/error.hpp"
#include "qmotion/random.hpp"
#include "qmotion/rotmath.hpp"

using namespace qmotion;
using namespace qmotion::rot;
using doctest::Approx;

namespace {

constexpr double kPi = std::numbers::pi;
const double kHalfSqrt2 = std::sqrt(0.5);

Quat random_unit(Rng& rng) {
  return normalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
}

void check_quat(const Quat& a, const Quat& b, double tol = 1e-12) {
  CHECK(std::abs(a.w - b.w) <= tol);
  CHECK(std::abs(a.x - b.x) <= tol);
  CHECK(std::abs(a.y - b.y) <= tol);
  CHECK(std::abs(a.z - b.z) <= tol);
}

}  // namespace

TEST_CASE("qmul basic products") {
  const Quat q{0.1, 0.2, 0.3, 0.4};
  check_quat(qmul(Quat::identity(), q), q);
  check_quat(qmul(q, Quat::identity()), q);
  check_quat(qmul({0, 1, 0, 0}, {0, 0, 1, 0}), {0, 0, 0, 1});
  const Quat q90z{kHalfSqrt2, 0, 0, kHalfSqrt2};
  check_quat(qmul(q90z, q90z), {0, 0, 0, 1}, 1e-15);
}

TEST_CASE("qmul algebraic properties") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Quat a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
    CHECK(std::abs(norm(qmul(a, b)) - norm(a) * norm(b)) <= 1e-12);
    const Quat l = qmul(qmul(a, b), c), r = qmul(a, qmul(b, c));
    CHECK(oracle::quat_distance(l, r) <= 1e-12 * 4);
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const Vec3 lhs = rotate_vector(qmul(a, b), v);
    const Vec3 rhs = rotate_vector(a, rotate_vector(b, v));
    CHECK(norm(lhs - rhs) <= 1e-9);
  }
}

TEST_CASE("rotate_vector") {
  const Quat q90z{kHalfSqrt2, 0, 0, kHalfSqrt2};
  const Vec3 r = rotate_vector(q90z, {1, 0, 0});
  CHECK(norm(r - Vec3{0, 1, 0}) <= 1e-15);
  CHECK(rotate_vector(Quat::identity(), {3, -2, 7}) == Vec3{3, -2, 7});
  CHECK_THROWS_AS(rotate_vector({1.1, 0, 0, 0}, {1, 0, 0}), InvalidRotationError);

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Quat q = random_unit(rng);
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const auto o = oracle::apply(oracle::quat_matrix(q), {v.x, v.y, v.z});
    const Vec3 got = rotate_vector(q, v);
    CHECK(norm(got - Vec3{o[0], o[1], o[2]}) <= 1e-9);
    CHECK(std::abs(norm(got) - norm(v)) <= 1e-9);
  }
}

TEST_CASE("normalize") {
  check_quat(normalize({2, 0, 0, 0}), {1, 0, 0, 0});
  check_quat(normalize({1, 1, 1, 1}), {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(normalize({0, 0, 0, 0}), DegenerateQuaternionError);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    CHECK(std::abs(norm(normalize(q)) - 1.0) <= 1e-9);
  }
}

TEST_CASE("euler conversions") {
  for (EulerOrder o : kAllEulerOrders) {
    check_quat(euler_to_quat({0, 0, 0, o}), Quat::identity());
  }
  const Quat px = euler_to_quat({kPi, 0, 0, EulerOrder::kXYZ});
  CHECK(oracle::quat_distance(px, {0, 1, 0, 0}) <= 1e-15);

  // matrix composition oracle
  const EulerAngles e{kPi / 2, kPi / 4, -kPi / 3, EulerOrder::kZYX};
  const auto m = oracle::matmul(oracle::matmul(oracle::axis_matrix(2, e.a1), oracle::axis_matrix(1, e.a2)),
                                oracle::axis_matrix(0, e.a3));
  CHECK(oracle::quat_distance(euler_to_quat(e), oracle::matrix_quat(m)) <= 1e-12);

  CHECK(parse_euler_order("ZYX") == EulerOrder::kZYX);
  CHECK_THROWS_AS(parse_euler_order("xyx"), InputError);
}

TEST_CASE("euler round trip in every order") {
  Rng rng(17);
  for (EulerOrder o : kAllEulerOrders) {
    const auto ax = axes_of(o);
    for (int i = 0; i < 300; ++i) {
      const EulerAngles e{rng.uniform(-kPi, kPi), rng.uniform(-kPi / 2 + 1e-3, kPi / 2 - 1e-3),
                          rng.uniform(-kPi, kPi), o};
      const Quat q = euler_to_quat(e);
      const auto m = oracle::matmul(
          oracle::matmul(oracle::axis_matrix(ax[0], e.a1), oracle::axis_matrix(ax[1], e.a2)),
          oracle::axis_matrix(ax[2], e.a3));
      CHECK(oracle::quat_distance(q, oracle::matrix_quat(m)) <= 1e-9);
      const EulerConversion back = quat_to_euler(q, o);
      CHECK_FALSE(back.singular);
      CHECK(angle_distance_l1(back.angles.a1, e.a1) <= 1e-9);
      CHECK(angle_distance_l1(back.angles.a2, e.a2) <= 1e-9);
      CHECK(angle_distance_l1(back.angles.a3, e.a3) <= 1e-9);
    }
  }
}

TEST_CASE("gimbal lock is flagged and still reproduces the rotation") {
  for (EulerOrder o : kAllEulerOrders) {
    const EulerAngles e{0.7, kPi / 2, -0.4, o};
    const Quat q = euler_to_quat(e);
    const EulerConversion c = quat_to_euler(q, o);
    CHECK(c.singular);
    CHECK(c.angles.a3 == 0.0);
    CHECK(oracle::quat_distance(euler_to_quat(c.angles), q) <= 1e-7);
  }
}

TEST_CASE("exponential map") {
  check_quat(expmap_to_quat({0, 0, 0}), Quat::identity());
  CHECK(oracle::quat_distance(expmap_to_quat({kPi, 0, 0}), {0, 1, 0, 0}) <= 1e-15);
  const Quat q = expmap_to_quat({0.3, -0.4, 1.2});
  CHECK(oracle::quat_distance(q, oracle::matrix_quat(oracle::rodrigues(0.3, -0.4, 1.2))) <= 1e-12);

  const ExpMap tiny = quat_to_expmap(expmap_to_quat({1e-10, -2e-10, 3e-10}));
  CHECK(std::abs(tiny.x - 1e-10) <= 1e-20);
  CHECK(std::abs(tiny.z - 3e-10) <= 1e-20);

  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double th = rng.uniform(1e-6, kPi - 1e-6);
    const Vec3 v = (th / norm(axis)) * axis;
    const ExpMap back = quat_to_expmap(expmap_to_quat({v.x, v.y, v.z}));
    CHECK(std::abs(back.x - v.x) <= 1e-9);
    CHECK(std::abs(back.y - v.y) <= 1e-9);
    CHECK(std::abs(back.z - v.z) <= 1e-9);
  }
  // the other hemisphere maps to θ in [0, π]
  const ExpMap canon = quat_to_expmap({-0.2, 0.5, 0.5, 0.5});
  CHECK(canon.angle() <= kPi + 1e-12);
}

TEST_CASE("fix_continuity") {
  const Quat q = normalize({0.3, 0.1, -0.5, 0.7});
  QuaternionSequence seq(0, 1, 30.0);
  for (const Quat& f : {q, -q, q}) seq.push_frame(std::span<const Quat>(&f, 1));
  const auto fixed = fix_continuity(seq);
  for (std::size_t t = 0; t < 3; ++t) CHECK(fixed.at(t, 0) == q);
  CHECK(fix_continuity(fixed).data() == fixed.data());
  CHECK_THROWS_AS(fix_continuity(QuaternionSequence()), InputError);

  Rng rng(29);
  QuaternionSequence noisy(50, 4, 30.0);
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      const Quat r = random_unit(rng);
      noisy.at(t, j) = rng.bernoulli(0.5) ? -r : r;
    }
  const auto out = fix_continuity(noisy);
  for (std::size_t t = 1; t < 50; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(dot(out.at(t, j), out.at(t - 1, j)) >= 0.0);
      CHECK((out.at(t, j) == noisy.at(t, j) || out.at(t, j) == -noisy.at(t, j)));
    }
  CHECK(fix_continuity(out).data() == out.data());
}

TEST_CASE("angle_distance_l1") {
  CHECK(angle_distance_l1(kPi - 0.1, -kPi + 0.1) == Approx(0.2).epsilon(1e-12));
  CHECK(angle_distance_l1(1.3, 1.3) == 0.0);
  CHECK(angle_distance_l1(0.5, -0.3) == Approx(0.8).epsilon(1e-12));

  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10), c = rng.uniform(-10, 10);
    const double d = angle_distance_l1(a, b);
    CHECK(std::abs(d - oracle::wrapped_l1(a, b)) <= 1e-12);
    CHECK(d == angle_distance_l1(b, a));
    CHECK(d <= angle_distance_l1(a, c) + angle_distance_l1(c, b) + 1e-12);
    CHECK(std::abs(angle_distance_l1(a + 6 * kPi, b) - d) <= 1e-9);
    CHECK(d <= kPi);
  }
}

TEST_CASE("slerp") {
  const Quat q90z{kHalfSqrt2, 0, 0, kHalfSqrt2};
  Rng rng(37);
  const Quat a = random_unit(rng), b = random_unit(rng);
  CHECK(oracle::quat_distance(slerp(a, b, 0.0), a) <= 1e-12);
  CHECK(oracle::quat_distance(slerp(a, b, 1.0), b) <= 1e-12);
  const Quat half = slerp(Quat::identity(), q90z, 0.5);
  CHECK(oracle::quat_distance(half, axis_angle({0, 0, 1}, kPi / 4)) <= 1e-12);
  const Quat close = axis_angle({1, 0, 0}, 1e-3);
  const Quat mid = slerp(Quat::identity(), close, 0.5);
  CHECK(oracle::quat_distance(mid, axis_angle({1, 0, 0}, 5e-4)) <= 1e-8);
  CHECK(std::abs(norm(mid) - 1.0) <= 1e-12);
}

TEST_CASE("rng reproduces the published engine vector") {
  Rng rng;
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ULL);

  Rng a(99);
  a.uniform();
  const std::string state = a.save_state();
  const double next = a.uniform();
  Rng b;
  b.restore_state(state);
  CHECK(b.uniform() == next);
  for (int i = 0; i < 1000; ++i) {
    const auto k = a.uniform_int(3, 7);
    CHECK(k >= 3);
    CHECK(k <= 7);
  }
}
