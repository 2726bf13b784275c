#include "qmotion/diagnostics.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "qmotion/models.hpp"
#include "qmotion/motiondata.hpp"
#include "qmotion/random.hpp"
#include "qmotion/training.hpp"

namespace qmotion::diag {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

Tensor randn(Rng& rng, Shape shape, double scale = 1.0, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) {
    double x = scale * rng.normal();
    if (std::abs(x) < min_abs) x = x < 0.0 ? x - min_abs : x + min_abs;
    v = x;
  }
  return t;
}

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

Tensor unit_quats(Rng& rng, std::size_t rows) {
  Tensor t({rows, 4});
  for (std::size_t i = 0; i < rows; ++i) {
    const rot::Quat q = rot::normalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    t[4 * i] = q.w;
    t[4 * i + 1] = q.x;
    t[4 * i + 2] = q.y;
    t[4 * i + 3] = q.z;
  }
  return t;
}

/// Sum of x times fixed pseudo-random weights; the same weights on every call.
Var weighted(Tape& tape, Var x, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(x, tape.constant(randn(rng, x.shape()))));
}

std::vector<Var> head(const std::vector<Var>& v, std::size_t n) { return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)}; }

class Runner {
 public:
  explicit Runner(const SuiteOptions& opts) : opts_(opts) {}

  void check(const std::string& name, const ad::ScalarFunction& f, const std::vector<Tensor>& inputs,
             std::size_t max_coordinates = 0) {
    ad::GradCheckOptions o = opts_.check;
    if (max_coordinates > 0) {
      o.max_coordinates = max_coordinates;
      o.skip_kinks = true;
    }
    o.seed = opts_.seed + entries_.size();
    const auto t0 = std::chrono::steady_clock::now();
    SuiteEntry e;
    e.name = name;
    e.result = ad::check_gradients(f, inputs, o);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    entries_.push_back(std::move(e));
  }

  /// Check of a unary primitive through a weighted sum.
  void unary(const std::string& name, const std::function<Var(Var)>& op, Tensor x) {
    check(name, [op](Tape& t, const std::vector<Var>& v) { return weighted(t, op(v[0]), 1); }, {std::move(x)});
  }

  std::vector<SuiteEntry> take() { return std::move(entries_); }

 private:
  const SuiteOptions& opts_;
  std::vector<SuiteEntry> entries_;
};

void primitives(Runner& r, Rng& rng) {
  auto binary = [&](const std::string& name, Var (*op)(Var, Var), Shape a, Shape b) {
    r.check(name, [op](Tape& t, const std::vector<Var>& v) { return weighted(t, op(v[0], v[1]), 2); },
            {randn(rng, std::move(a)), randn(rng, std::move(b))});
  };
  binary("add", ad::add, {3, 4}, {3, 4});
  binary("sub", ad::sub, {3, 4}, {3, 4});
  binary("mul", ad::mul, {3, 4}, {3, 4});
  binary("add_bias", ad::add_bias, {3, 4}, {4});
  binary("matmul", ad::matmul, {3, 5}, {5, 2});
  binary("qmul", ad::qmul, {3, 4}, {3, 4});
  r.check("qrot", [](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::qrot(v[0], v[1]), 3); },
          {unit_quats(rng, 3), randn(rng, {3, 3})});
  r.check("atan2", [](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::atan2(v[0], v[1]), 4); },
          {randn(rng, {2, 3}, 1.0, 0.3), randn(rng, {2, 3}, 1.0, 0.3)});
  r.unary("add_scalar", [](Var a) { return ad::add_scalar(a, 0.7); }, randn(rng, {2, 3}));
  r.unary("scale", [](Var a) { return ad::scale(a, -1.3); }, randn(rng, {2, 3}));
  r.unary("neg", ad::neg, randn(rng, {2, 3}));
  r.check("concat",
          [](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::concat({v[0], v[1]}), 5); },
          {randn(rng, {3, 2}), randn(rng, {3, 3})});
  r.check("concat_rows",
          [](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::concat_rows({v[0], v[1]}), 6); },
          {randn(rng, {2, 3}), randn(rng, {1, 3})});
  r.unary("slice", [](Var a) { return ad::slice(a, 1, 3); }, randn(rng, {3, 4}));
  r.unary("slice_rows", [](Var a) { return ad::slice_rows(a, 1, 3); }, randn(rng, {4, 3}));
  r.unary("reshape", [](Var a) { return ad::reshape(a, {4, 3}); }, randn(rng, {3, 4}));
  r.check("sum", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(v[0])); }, {randn(rng, {2, 3})});
  r.check("mean", [](Tape&, const std::vector<Var>& v) { return ad::mean(ad::square(v[0])); }, {randn(rng, {2, 3})});
  r.unary("sum_last", ad::sum_last, randn(rng, {3, 4}));
  r.unary("square", ad::square, randn(rng, {2, 3}));
  r.unary("sqrt", ad::sqrt, uniform(rng, {2, 3}, 0.5, 2.0));
  r.unary("abs", ad::abs, randn(rng, {2, 3}, 1.0, 0.1));
  r.unary("tanh", ad::tanh, randn(rng, {2, 3}));
  r.unary("sigmoid", ad::sigmoid, randn(rng, {2, 3}));
  r.unary("leaky_relu", [](Var a) { return ad::leaky_relu(a, 0.05); }, randn(rng, {2, 3}, 1.0, 0.1));
  r.unary("sin", ad::sin, randn(rng, {2, 3}, 2.0));
  r.unary("cos", ad::cos, randn(rng, {2, 3}, 2.0));
  {
    Tensor a({2, 3});
    for (double& v : a.storage()) v = rng.uniform(-2.5, 2.5) + 2.0 * std::numbers::pi * (static_cast<double>(rng.uniform_int(0, 2)) - 1.0);
    r.unary("wrap_angle", ad::wrap_angle, std::move(a));
  }
  r.unary("l2norm", ad::l2norm, randn(rng, {3, 4}));
  r.unary("normalize", ad::normalize, randn(rng, {3, 4}));
  r.unary("expmap_to_quat", ad::expmap_to_quat, randn(rng, {4, 3}));
  for (rot::EulerOrder order : rot::kAllEulerOrders) {
    const std::string o(rot::to_string(order));
    r.unary("euler_to_quat_" + o, [order](Var a) { return ad::euler_to_quat(a, order); }, uniform(rng, {3, 3}, -1.5, 1.5));
    Tensor q({3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
      const rot::Quat u = rot::euler_to_quat({rng.uniform(-2.5, 2.5), rng.uniform(-1.2, 1.2), rng.uniform(-2.5, 2.5), order});
      q[4 * i] = u.w;
      q[4 * i + 1] = u.x;
      q[4 * i + 2] = u.y;
      q[4 * i + 3] = u.z;
    }
    r.unary("quat_to_euler_" + o, [order](Var a) { return ad::quat_to_euler(a, order); }, std::move(q));
  }
}

void losses(Runner& r, Rng& rng, const kin::Skeleton& skel) {
  const std::size_t A = skel.active_count(), J = skel.size(), F = 2;
  const Tensor ref = randn(rng, {F, J, 3});
  r.check("positional_loss_fk",
          [&skel, ref](Tape& t, const std::vector<Var>& v) { return train::loss_positional(skel, v[0], v[1], t.constant(ref)); },
          {randn(rng, {F, 3}), unit_quats(rng, F * A).reshaped({F, A, 4})});
  std::vector<rot::EulerOrder> orders;
  for (std::size_t j : skel.active_joints()) orders.push_back(skel.joint(j).euler_order);
  Tensor q({F, A, 4}), target({F, A, 3});
  for (std::size_t i = 0; i < F * A; ++i) {
    const rot::EulerAngles e{rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-2, 2), orders[i % A]};
    const rot::Quat u = rot::euler_to_quat(e);
    q[4 * i] = u.w;
    q[4 * i + 1] = u.x;
    q[4 * i + 2] = u.y;
    q[4 * i + 3] = u.z;
    target[3 * i] = e.a1 + 0.4;
    target[3 * i + 1] = e.a2 - 0.3;
    target[3 * i + 2] = e.a3 + 0.35;
  }
  r.check("euler_l1_loss",
          [target, orders](Tape&, const std::vector<Var>& v) { return train::loss_euler_l1(v[0], target, orders); }, {q});
  const Tensor other = unit_quats(rng, 5);
  r.check("quat_dot_loss",
          [other](Tape& t, const std::vector<Var>& v) { return train::loss_quat_dot(v[0], t.constant(other)); },
          {unit_quats(rng, 5)});
  r.check("unit_norm_penalty",
          [](Tape&, const std::vector<Var>& v) { return train::penalty_unit_norm(v[0], 0.01); }, {randn(rng, {2, 8})});
  Tensor a = randn(rng, {2, 3}), b = a;
  for (double& v : b.storage()) v += rng.bernoulli(0.5) ? 0.5 : -0.5;
  r.check("mae_loss", [b](Tape& t, const std::vector<Var>& v) { return train::loss_mae(v[0], t.constant(b)); }, {a});
}

std::vector<Tensor> param_values(const ad::ParameterSet& ps) {
  std::vector<Tensor> out;
  for (const auto& e : ps.entries()) out.push_back(e.value);
  return out;
}

Tensor control_rows(Rng& rng, std::size_t rows) {
  Tensor t({rows, models::kControlSize});
  for (std::size_t i = 0; i < rows; ++i) {
    const double a = rng.uniform(0, 2 * std::numbers::pi), b = rng.uniform(0, 2 * std::numbers::pi);
    const double amp = rng.uniform(0.5, 2.0), th = rng.uniform(0, 2 * std::numbers::pi);
    const double row[6] = {std::cos(a), std::sin(a), std::cos(b), std::sin(b), amp * std::cos(th), amp * std::sin(th)};
    for (std::size_t c = 0; c < models::kControlSize; ++c) t.at(i, c) = row[c];
  }
  return t;
}

void networks(Runner& r, Rng& rng, std::size_t joints, std::size_t coords, std::uint64_t seed) {
  {
    models::PoseNetworkConfig c = models::PoseNetworkConfig::desk(joints);
    c.include_controls = c.include_translations = true;
    const models::PoseNetwork net(c, seed + 1);
    auto& params = const_cast<ad::ParameterSet&>(net.params());
    std::vector<Tensor> inputs = param_values(params);
    const std::size_t P = inputs.size();
    const std::size_t B = 2, steps = 3;
    inputs.push_back(unit_quats(rng, B * joints).reshaped({B, 4 * joints}));
    inputs.push_back(randn(rng, {B, models::kTranslationSize}));
    for (std::size_t s = 0; s < steps; ++s) inputs.push_back(control_rows(rng, B));
    r.check(
        "recurrent_rollout",
        [&net, &params, P, steps](Tape& t, const std::vector<Var>& v) {
          ad::Binding b(params, head(v, P));
          auto state = net.initial_state(b, 2);
          models::StepInput in{v[P], v[P + 1], {}};
          Var loss;
          for (std::size_t s = 0; s < steps; ++s) {
            in.controls = v[P + 2 + s];
            const models::StepOutput y = net.step(b, state, in);
            Var term = weighted(t, y.pose, 10 + s) + weighted(t, y.translations, 20 + s) + weighted(t, y.raw, 30 + s);
            loss = loss.valid() ? loss + term : term;
            in.pose = y.pose;
            in.translations = y.translations;
          }
          return loss;
        },
        inputs, coords);
  }
  {
    models::PoseNetworkConfig c = models::PoseNetworkConfig::desk(joints);
    c.backbone = models::Backbone::kConvolutional;
    c.include_controls = c.include_translations = true;
    const models::PoseNetwork net(c, seed + 2);
    auto& params = const_cast<ad::ParameterSet&>(net.params());
    std::vector<Tensor> inputs = param_values(params);
    const std::size_t P = inputs.size();
    const std::size_t T = c.receptive_field() + 1;
    for (std::size_t s = 0; s < T; ++s) {
      inputs.push_back(unit_quats(rng, joints).reshaped({1, 4 * joints}));
      inputs.push_back(randn(rng, {1, models::kTranslationSize}));
      inputs.push_back(control_rows(rng, 1));
    }
    r.check(
        "convolutional_window",
        [&net, &params, P, T](Tape& t, const std::vector<Var>& v) {
          ad::Binding b(params, head(v, P));
          std::vector<models::StepInput> frames;
          for (std::size_t s = 0; s < T; ++s) frames.push_back({v[P + 3 * s], v[P + 3 * s + 1], v[P + 3 * s + 2]});
          Var loss;
          std::uint64_t k = 40;
          for (const auto& y : net.convolve(b, frames)) {
            Var term = weighted(t, y.pose, k) + weighted(t, y.translations, k + 1) + weighted(t, y.raw, k + 2);
            k += 3;
            loss = loss.valid() ? loss + term : term;
          }
          return loss;
        },
        inputs, coords);
  }
  for (auto variant : {models::PaceVariant::kBidirectional, models::PaceVariant::kOnline}) {
    models::PaceNetworkConfig c;
    c.variant = variant;
    const models::PaceNetwork net(c, seed + 3);
    auto& params = const_cast<ad::ParameterSet&>(net.params());
    std::vector<Tensor> inputs = param_values(params);
    const std::size_t P = inputs.size(), S = 6;
    for (std::size_t s = 0; s < S; ++s) inputs.push_back(randn(rng, {1, models::kPaceInputs}));
    r.check(
        std::string("pace_") + (variant == models::PaceVariant::kOnline ? "online" : "bidirectional"),
        [&net, &params, P, S](Tape& t, const std::vector<Var>& v) {
          ad::Binding b(params, head(v, P));
          Var loss;
          std::uint64_t k = 60;
          for (const Var& o : net.forward(b, {v.begin() + static_cast<std::ptrdiff_t>(P), v.begin() + static_cast<std::ptrdiff_t>(P + S)})) {
            Var term = weighted(t, o, k++);
            loss = loss.valid() ? loss + term : term;
          }
          return loss;
        },
        inputs, coords);
  }
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& opts) {
  Runner r(opts);
  Rng rng(opts.seed);
  const kin::Skeleton skel = data::synth_skeleton(opts.joints);
  if (opts.include_primitives) primitives(r, rng);
  if (opts.include_losses) losses(r, rng, skel);
  if (opts.include_models) networks(r, rng, skel.active_count(), opts.model_coordinates, opts.seed);
  return r.take();
}

}  // namespace qmotion::diag
