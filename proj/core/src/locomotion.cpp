#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "qmotion/error.hpp"
#include "qmotion/models.hpp"
#include "qmotion/random.hpp"

namespace qmotion::models {

using data::Vec2;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double dot2(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
double cross2(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

Vec2 rotate2(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 unit2(const Vec2& v, const Vec2& fallback) {
  const double n = std::hypot(v.x, v.y);
  return n < 1e-12 ? fallback : Vec2{v.x / n, v.y / n};
}

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

ad::Tensor row_tensor(const std::vector<double>& v) { return ad::Tensor({1, v.size()}, v); }

}  // namespace

// ---------------------------------------------------------------------------
// Pace network

std::string to_string(PaceVariant v) { return v == PaceVariant::kBidirectional ? "bidirectional" : "online"; }

PaceVariant parse_pace_variant(const std::string& s) {
  if (s == "bidirectional" || s == "offline") return PaceVariant::kBidirectional;
  if (s == "online" || s == "delayed") return PaceVariant::kOnline;
  throw ConfigError("unknown pace variant '" + s + "'");
}

void PaceNetworkConfig::validate() const {
  if (hidden == 0) throw ConfigError("pace network needs hidden > 0");
}

std::string to_json(const PaceNetworkConfig& c) {
  return json{{"hidden", c.hidden}, {"variant", to_string(c.variant)}, {"delay", c.delay}}.dump();
}

PaceNetworkConfig pace_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    PaceNetworkConfig c;
    c.hidden = j.at("hidden").get<std::size_t>();
    c.variant = parse_pace_variant(j.at("variant").get<std::string>());
    c.delay = j.at("delay").get<std::size_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("pace network config: ") + e.what());
  }
}

PaceNetwork::PaceNetwork(PaceNetworkConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t H = cfg_.hidden;
  const double k = 1.0 / std::sqrt(static_cast<double>(H));
  std::vector<std::string> dirs{"pace.fwd."};
  if (cfg_.variant == PaceVariant::kBidirectional) dirs.emplace_back("pace.bwd.");
  for (const std::string& d : dirs) {
    params_.add(d + "w_ih", uniform_tensor({kPaceInputs, 3 * H}, k, rng));
    params_.add(d + "w_hh", uniform_tensor({H, 3 * H}, k, rng));
    params_.add(d + "b_ih", uniform_tensor({3 * H}, k, rng));
    params_.add(d + "b_hh", uniform_tensor({3 * H}, k, rng));
    params_.add(d + "h0", ad::Tensor({H}, 0.0));
  }
  const std::size_t in = H * dirs.size();
  params_.add("pace.head.w", uniform_tensor({in, kPaceOutputs}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  // Facing along the tangent, unit frequency and speed.
  params_.add("pace.head.b", ad::Tensor({kPaceOutputs}, std::vector<double>{1.0, 0.0, 1.0, 1.0}));
}

std::vector<ad::Var> PaceNetwork::run_direction(const ad::Binding& b, const std::vector<ad::Var>& inputs,
                                                const std::string& prefix, bool reverse) const {
  const std::size_t H = cfg_.hidden;
  const std::size_t S = inputs.size();
  const std::size_t B = inputs[0].value().dim(0);
  ad::Var h = ad::add_bias(b.tape().constant(ad::Tensor({B, H}, 0.0)), b[prefix + "h0"]);
  std::vector<ad::Var> states(S);
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t s = reverse ? S - 1 - i : i;
    ad::Var gi = ad::add_bias(ad::matmul(inputs[s], b[prefix + "w_ih"]), b[prefix + "b_ih"]);
    ad::Var gh = ad::add_bias(ad::matmul(h, b[prefix + "w_hh"]), b[prefix + "b_hh"]);
    ad::Var r = ad::sigmoid(ad::slice(gi, 0, H) + ad::slice(gh, 0, H));
    ad::Var z = ad::sigmoid(ad::slice(gi, H, 2 * H) + ad::slice(gh, H, 2 * H));
    ad::Var n = ad::tanh(ad::slice(gi, 2 * H, 3 * H) + r * ad::slice(gh, 2 * H, 3 * H));
    h = n + z * (h - n);
    states[s] = h;
  }
  return states;
}

std::vector<ad::Var> PaceNetwork::forward(const ad::Binding& b, const std::vector<ad::Var>& inputs) const {
  if (inputs.empty()) throw ShapeError("pace network needs at least one segment");
  const std::size_t B = inputs[0].value().dim(0);
  for (const ad::Var& v : inputs) {
    if (v.value().rank() != 2 || v.value().dim(0) != B || v.value().dim(1) != kPaceInputs) {
      throw ShapeError("pace inputs must be [B, 2], got " + ad::shape_string(v.shape()));
    }
  }
  std::vector<ad::Var> out;
  out.reserve(inputs.size());
  if (cfg_.variant == PaceVariant::kBidirectional) {
    const auto fwd = run_direction(b, inputs, "pace.fwd.", false);
    const auto bwd = run_direction(b, inputs, "pace.bwd.", true);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      out.push_back(ad::add_bias(ad::matmul(ad::concat({fwd[s], bwd[s]}), b["pace.head.w"]), b["pace.head.b"]));
    }
  } else {
    // The last input is repeated past the end so every output sees `delay` segments ahead.
    std::vector<ad::Var> padded = inputs;
    for (std::size_t i = 0; i < cfg_.delay; ++i) padded.push_back(inputs.back());
    const auto fwd = run_direction(b, padded, "pace.fwd.", false);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      out.push_back(ad::add_bias(ad::matmul(fwd[s + cfg_.delay], b["pace.head.w"]), b["pace.head.b"]));
    }
  }
  return out;
}

std::vector<std::array<double, kPaceInputs>> pace_inputs(const data::TrajectorySpline& spline, double average_speed) {
  std::vector<std::array<double, kPaceInputs>> out(spline.segments());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {spline.curvature[k], average_speed};
  return out;
}

PaceOutputs PaceNetwork::predict(const data::TrajectorySpline& spline, double average_speed) const {
  if (spline.segments() == 0) throw InputError("pace network needs a spline with at least one segment");
  ad::Tape tape;
  ad::Binding b(tape, const_cast<ad::ParameterSet&>(params_), false);
  std::vector<ad::Var> inputs;
  for (const auto& in : pace_inputs(spline, average_speed)) {
    inputs.push_back(tape.constant(row_tensor({in.begin(), in.end()})));
  }
  PaceOutputs out;
  for (const ad::Var& v : forward(b, inputs)) {
    const ad::Tensor& t = v.value();
    out.facing.push_back(unit2({t[0], t[1]}, {1.0, 0.0}));
    out.frequency.push_back(t[2]);
    out.speed.push_back(t[3]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-plane helpers

double yaw_of(const Vec2& dir) { return std::atan2(dir.x, dir.y); }

Vec2 to_frame(const Vec2& v, const Vec2& axis) { return {dot2(axis, v), cross2(axis, v)}; }

Vec2 from_frame(const Vec2& v, const Vec2& axis) {
  return {v.x * axis.x - v.y * axis.y, v.x * axis.y + v.y * axis.x};
}

Vec2 tangent_at(const data::TrajectorySpline& spline, double s) {
  const std::size_t S = spline.segments();
  if (S == 0) throw InputError("tangent_at: empty spline");
  const double u = s / spline.segment_length - 0.5;
  if (u <= 0.0) return spline.tangents.front();
  if (u >= static_cast<double>(S - 1)) return spline.tangents.back();
  const auto k = static_cast<std::size_t>(u);
  const Vec2& a = spline.tangents[k];
  const Vec2& b = spline.tangents[k + 1];
  const double turn = std::atan2(cross2(a, b), dot2(a, b));
  return rotate2(a, (u - static_cast<double>(k)) * turn);
}

double project_onto(const data::TrajectorySpline& spline, const Vec2& p, std::size_t& hint) {
  const std::size_t S = spline.segments();
  if (S == 0) throw InputError("project_onto: empty spline");
  const double L = spline.segment_length;
  const std::size_t lo = hint > 0 ? hint - 1 : 0;
  const std::size_t hi = std::min(S - 1, hint + 8);
  double best = std::numeric_limits<double>::infinity();
  double arc = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) {
    const Vec2 d{p.x - spline.points[k].x, p.y - spline.points[k].y};
    const double u = std::clamp(dot2(d, spline.tangents[k]), 0.0, L);
    const double e = std::hypot(d.x - u * spline.tangents[k].x, d.y - u * spline.tangents[k].y);
    if (e < best - 1e-12) {
      best = e;
      arc = static_cast<double>(k) * L + u;
      hint = k;
    }
  }
  return arc;
}

// ---------------------------------------------------------------------------
// Locomotion features

double default_segment_length(const data::GaitFeatures& g) {
  if (g.degenerate || g.frames() == 0) {
    throw InputError("cannot infer a stride length from a clip without footsteps; give the segment length");
  }
  double speed = 0.0, freq = 0.0;
  for (std::size_t t = 0; t < g.frames(); ++t) {
    speed += g.speed[t];
    freq += g.frequency[t];
  }
  if (!(freq > 0.0) || !(speed > 0.0)) {
    throw InputError("cannot infer a stride length from a stationary clip; give the segment length");
  }
  return speed / freq / 4.0;
}

LocomotionSequence make_locomotion_sequence(const data::MotionClip& clip, std::size_t left_foot,
                                            std::size_t right_foot, double segment_length) {
  clip.validate();
  LocomotionSequence seq;
  seq.gait = data::extract_gait_features(clip, left_foot, right_foot);
  const double L = segment_length > 0.0 ? segment_length : default_segment_length(seq.gait);
  const std::size_t T = clip.frames();
  std::vector<Vec2> pts(T);
  for (std::size_t t = 0; t < T; ++t) pts[t] = data::ground(clip.root_positions[t]);
  seq.spline = data::fit_spline(pts, L);

  seq.arc.resize(T);
  std::size_t hint = 0;
  for (std::size_t t = 0; t < T; ++t) seq.arc[t] = project_onto(seq.spline, pts[t], hint);

  seq.local = clip;
  seq.translations.resize(T);
  seq.controls.resize(T);
  const bool root_active = clip.skeleton.active_slot(0) >= 0;
  double speed_sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Vec2 tan = tangent_at(seq.spline, seq.arc[t]);
    if (root_active) {
      seq.local.rotations.at(t, 0) =
          rot::normalize(rot::qmul(rot::axis_angle(data::kUp, -yaw_of(tan)), clip.rotations.at(t, 0)));
    }
    seq.translations[t] = {clip.root_positions[t].y, seq.gait.offset[t]};
    const Vec2 ahead = to_frame(tangent_at(seq.spline, seq.arc[t] + L), tan);
    const Vec2 facing = to_frame(seq.gait.facing[t], tan);
    const Vec2 g = seq.gait.gait_signal(t);
    seq.controls[t] = {ahead.x, ahead.y, facing.x, facing.y, g.x, g.y};
    speed_sum += seq.gait.speed[t];
  }
  seq.local.rotations = rot::fix_continuity(seq.local.rotations);
  seq.average_speed = speed_sum / static_cast<double>(T);
  return seq;
}

std::vector<std::array<double, kPaceOutputs>> pace_targets(const LocomotionSequence& seq) {
  const std::size_t S = seq.spline.segments();
  std::vector<std::array<double, kPaceOutputs>> sums(S, {0.0, 0.0, 0.0, 0.0});
  std::vector<std::size_t> count(S, 0);
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    const std::size_t k = seq.spline.segment_at(seq.arc[t]);
    sums[k][0] += seq.controls[t][2];
    sums[k][1] += seq.controls[t][3];
    sums[k][2] += seq.gait.frequency[t];
    sums[k][3] += seq.gait.speed[t];
    ++count[k];
  }
  std::vector<std::array<double, kPaceOutputs>> out(S);
  std::vector<bool> have(S, false);
  for (std::size_t k = 0; k < S; ++k) {
    if (count[k] == 0) continue;
    const double n = static_cast<double>(count[k]);
    const Vec2 f = unit2({sums[k][0], sums[k][1]}, {1.0, 0.0});
    out[k] = {f.x, f.y, sums[k][2] / n, sums[k][3] / n};
    have[k] = true;
  }
  const auto first = std::find(have.begin(), have.end(), true);
  if (first == have.end()) throw InputError("pace_targets: no frames fall on the spline");
  std::size_t last = static_cast<std::size_t>(first - have.begin());
  for (std::size_t k = 0; k < S; ++k) {
    if (have[k]) {
      last = k;
    } else {
      out[k] = out[last];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct FrameInput {
  std::vector<double> pose;
  std::array<double, kTranslationSize> translations{};
  std::array<double, kControlSize> controls{};
};

StepInput constants(ad::Tape& tape, const std::vector<const FrameInput*>& rows) {
  const std::size_t B = rows.size();
  const std::size_t P = rows[0]->pose.size();
  ad::Tensor pose({B, P}), trans({B, kTranslationSize}), ctrl({B, kControlSize});
  for (std::size_t i = 0; i < B; ++i) {
    std::copy(rows[i]->pose.begin(), rows[i]->pose.end(), pose.data() + i * P);
    std::copy(rows[i]->translations.begin(), rows[i]->translations.end(), trans.data() + i * kTranslationSize);
    std::copy(rows[i]->controls.begin(), rows[i]->controls.end(), ctrl.data() + i * kControlSize);
  }
  return {tape.constant(std::move(pose)), tape.constant(std::move(trans)), tape.constant(std::move(ctrl))};
}

}  // namespace

data::MotionClip generate_locomotion(const PoseNetwork& pose_net, const PaceNetwork& pace, const kin::Skeleton& skel,
                                     const data::TrajectorySpline& spline, const LocomotionSequence& init,
                                     const GenerateOptions& opts) {
  const PoseNetworkConfig& cfg = pose_net.config();
  if (!cfg.include_controls || !cfg.include_translations) {
    throw ConfigError("locomotion generation needs a pose network with controls and translations");
  }
  if (cfg.parameterization == Parameterization::kPosition) throw ConfigError("locomotion needs a rotation model");
  if (skel.active_count() != cfg.joints) {
    throw InputError("skeleton has " + std::to_string(skel.active_count()) + " active joints, model expects " +
                     std::to_string(cfg.joints));
  }
  if (!(opts.frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  if (opts.frames == 0) throw ConfigError("requested frame count must be positive");
  if (opts.average_speed < 0.0) throw ConfigError("average speed must be non-negative");
  const std::size_t n = init.frames();
  const std::size_t min_init = cfg.backbone == Backbone::kConvolutional ? cfg.receptive_field() : 2;
  if (n < min_init) {
    throw InputError("generation needs at least " + std::to_string(min_init) + " initial frames, got " +
                     std::to_string(n));
  }

  PaceOutputs pc = pace.predict(spline, opts.average_speed);
  double mean_speed = 0.0;
  for (double& v : pc.speed) {
    v = std::max(v, 0.0);
    mean_speed += v;
  }
  mean_speed /= static_cast<double>(pc.segments());
  for (double& v : pc.speed) v = mean_speed > 1e-9 ? v * opts.average_speed / mean_speed : opts.average_speed;
  for (double& f : pc.frequency) f = std::max(f, 0.0);

  // Inputs for predicting frame t: pose and translations of t - 1, controls of t.
  std::vector<FrameInput> history;
  FrameInput prev;
  prev.pose = pose_features(cfg.parameterization, skel, init.local.pose(0));
  prev.translations = init.translations[0];
  for (std::size_t t = 1; t < n; ++t) {
    FrameInput in = prev;
    in.controls = init.controls[t];
    history.push_back(in);
    prev.pose = pose_features(cfg.parameterization, skel, init.local.pose(t));
    prev.translations = init.translations[t];
  }

  auto& params = const_cast<ad::ParameterSet&>(pose_net.params());
  std::vector<ad::Tensor> state;
  if (cfg.backbone == Backbone::kRecurrent) {
    ad::Tape tape;
    ad::Binding b(tape, params, false);
    std::vector<ad::Var> s = pose_net.initial_state(b, 1);
    for (const FrameInput& in : history) pose_net.step(b, s, constants(tape, {&in}));
    for (const ad::Var& v : s) state.push_back(v.value());
  }
  std::deque<FrameInput> window(history.begin(), history.end());

  data::MotionClip out;
  out.skeleton = skel;
  out.frame_rate = opts.frame_rate;
  out.subject = "generated";
  out.action = "locomotion";
  out.rotations = rot::QuaternionSequence(0, skel.size(), opts.frame_rate);
  const bool root_active = skel.active_slot(0) >= 0;
  const double limit = opts.divergence_factor * std::max(skel.reach(), 1e-6);

  double s = 0.0;
  double theta = init.gait.phase.empty() ? 0.0 : init.gait.phase.back();
  for (std::size_t i = 0; i < opts.frames; ++i) {
    const std::size_t k = spline.segment_at(s);
    const double v = pc.speed[k];
    theta += kTwoPi * pc.frequency[k] / opts.frame_rate;
    const Vec2 tan = tangent_at(spline, s);
    const Vec2 ahead = to_frame(tangent_at(spline, s + spline.segment_length), tan);
    FrameInput in = prev;
    in.controls = {ahead.x, ahead.y, pc.facing[k].x, pc.facing[k].y, v * std::cos(theta), v * std::sin(theta)};

    ad::Tape tape;
    ad::Binding b(tape, params, false);
    StepOutput y;
    if (cfg.backbone == Backbone::kRecurrent) {
      std::vector<ad::Var> sv;
      for (const ad::Tensor& t : state) sv.push_back(tape.constant(t));
      y = pose_net.step(b, sv, constants(tape, {&in}));
      for (std::size_t l = 0; l < sv.size(); ++l) state[l] = sv[l].value();
    } else {
      window.push_back(in);
      while (window.size() > cfg.receptive_field()) window.pop_front();
      std::vector<StepInput> frames;
      for (const FrameInput& f : window) frames.push_back(constants(tape, {&f}));
      y = pose_net.convolve(b, frames).back();
    }

    prev.pose.assign(y.pose.value().values().begin(), y.pose.value().values().end());
    prev.translations = {y.translations.value()[0], y.translations.value()[1]};
    if (!std::all_of(prev.pose.begin(), prev.pose.end(), [](double x) { return std::isfinite(x); }) ||
        !std::isfinite(prev.translations[0]) || !std::isfinite(prev.translations[1])) {
      throw InstabilityError("generation produced non-finite values at frame " + std::to_string(i));
    }

    kin::Pose pose;
    pose.rotations = features_to_quats(cfg.parameterization, prev.pose);
    if (root_active) {
      const auto slot = static_cast<std::size_t>(skel.active_slot(0));
      pose.rotations[slot] = rot::normalize(rot::qmul(rot::axis_angle(data::kUp, yaw_of(tan)), pose.rotations[slot]));
    }
    const Vec2 g = spline.point_at(s + prev.translations[1]);
    pose.root_position = {g.x, prev.translations[0], g.y};
    const kin::JointPositions pos = kin::forward_kinematics(skel, pose);
    const Vec2 anchor = spline.point_at(s);
    for (const rot::Vec3& p : pos) {
      if (rot::norm(p - rot::Vec3{anchor.x, 0.0, anchor.y}) > limit) {
        throw InstabilityError("generation diverged at frame " + std::to_string(i) +
                               ": a joint moved too far from the spline");
      }
    }
    out.root_positions.push_back(pose.root_position);
    const std::vector<rot::Quat> all = kin::local_rotations(skel, pose);
    out.rotations.push_frame(all);
    s += v / opts.frame_rate;
  }
  out.rotations = rot::fix_continuity(out.rotations);
  return out;
}

}  // namespace qmotion::models
