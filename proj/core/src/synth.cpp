#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "qmotion/error.hpp"
#include "qmotion/motiondata.hpp"

namespace qmotion::data {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kThigh = 0.45;
constexpr double kShin = 0.45;
constexpr double kLeg = kThigh + kShin;
constexpr double kHipWidth = 0.1;

kin::Joint joint(const std::string& name, int parent, Vec3 offset) {
  kin::Joint j;
  j.name = name;
  j.parent = parent;
  j.offset = offset;
  return j;
}

kin::Joint leaf(const std::string& name, int parent, Vec3 offset) {
  kin::Joint j = joint(name, parent, offset);
  j.dof_active = false;
  j.constant_rotation = Quat::identity();
  return j;
}

}  // namespace

kin::Skeleton synth_skeleton(std::size_t joints) {
  if (joints != 7 && joints != 8 && joints != 12) {
    throw ConfigError("synthetic skeleton supports 7, 8 or 12 joints, not " + std::to_string(joints));
  }
  std::vector<kin::Joint> js{
      joint("Hips", -1, {0, 0, 0}),
      joint("LeftUpLeg", 0, {kHipWidth, 0, 0}),
      joint("LeftLeg", 1, {0, -kThigh, 0}),
      leaf("LeftFoot", 2, {0, -kShin, 0}),
      joint("RightUpLeg", 0, {-kHipWidth, 0, 0}),
      joint("RightLeg", 4, {0, -kThigh, 0}),
      leaf("RightFoot", 5, {0, -kShin, 0}),
  };
  if (joints == 8) js.push_back(leaf("Spine", 0, {0, 0.5, 0}));
  if (joints == 12) {
    js.push_back(joint("Spine", 0, {0, 0.5, 0}));
    js.push_back(joint("LeftArm", 7, {0.2, 0.05, 0}));
    js.push_back(leaf("LeftHand", 8, {0, -0.6, 0}));
    js.push_back(joint("RightArm", 7, {-0.2, 0.05, 0}));
    js.push_back(leaf("RightHand", 10, {0, -0.6, 0}));
  }
  return kin::Skeleton(std::move(js));
}

SwapMap synth_swap_map(std::size_t joints) {
  SwapMap m{{"LeftUpLeg", "RightUpLeg"}, {"LeftLeg", "RightLeg"}, {"LeftFoot", "RightFoot"}};
  if (joints == 12) {
    m.emplace_back("LeftArm", "RightArm");
    m.emplace_back("LeftHand", "RightHand");
  }
  return m;
}

SynthClip synth_gait(const SynthParams& p) {
  if (!(p.frame_rate > 0.0) || !(p.duration > 0.0)) throw ConfigError("synth_gait: duration and frame rate must be positive");
  if (p.speed < 0.0 || p.stride_frequency < 0.0) throw ConfigError("synth_gait: speed and frequency must be non-negative");
  if (p.surge < 0.0 || p.surge >= 1.0) throw ConfigError("synth_gait: surge must lie in [0, 1)");

  SynthClip out;
  MotionClip& clip = out.clip;
  clip.skeleton = synth_skeleton(p.joints);
  clip.frame_rate = p.frame_rate;
  clip.subject = "synth";
  clip.action = "walk";
  out.left_foot = clip.skeleton.index_of("LeftFoot");
  out.right_foot = clip.skeleton.index_of("RightFoot");
  out.truth.speed = p.speed;

  const std::size_t nj = clip.skeleton.size();
  const auto frames = static_cast<std::size_t>(std::max<long>(1, std::lround(p.duration * p.frame_rate)));
  clip.rotations = rot::QuaternionSequence(frames, nj, p.frame_rate);
  clip.root_positions.resize(frames);

  Rng rng(p.seed);
  const double phase0 = rng.uniform();
  const double lift = 0.12 * rng.uniform(0.8, 1.2);
  const double arm_amp = rng.uniform(0.25, 0.45);
  const double twist = rng.uniform(0.05, 0.15);
  const double heading0 = rng.uniform(0.0, 2.0 * kPi);

  const bool moving = p.speed > 0.0 && p.stride_frequency > 0.0;
  if (!moving) {
    for (std::size_t t = 0; t < frames; ++t) {
      clip.root_positions[t] = {0.0, kLeg, 0.0};
      for (std::size_t j = 0; j < nj; ++j) clip.rotations.at(t, j) = Quat::identity();
      clip.rotations.at(t, 0) = rot::axis_angle(kUp, heading0);
    }
    return out;
  }
  out.truth.stride_frequency = p.stride_frequency;

  const double f = p.stride_frequency;
  const double v = p.speed;
  const double step = v / (2.0 * f);
  const double sin_a0 = step / (2.0 * kLeg);
  if (sin_a0 >= 0.95) throw ConfigError("synth_gait: speed too high for the stride frequency");
  const double surge_amp = p.surge * step / (2.0 * kPi);

  auto cycle = [&](double t) { return f * t + phase0; };
  // Distance walked along the path.
  auto dist = [&](double t) {
    return v * t + surge_amp * (std::sin(4.0 * kPi * cycle(t)) - std::sin(4.0 * kPi * phase0));
  };
  auto heading = [&](double t) { return heading0 + p.turn_rate * t; };
  // Character-frame (lateral, forward) offset rotated into the ground plane.
  auto to_world = [&](double t, double lateral, double forward) {
    return rot::rotate_vector(rot::axis_angle(kUp, heading(t)), Vec3{lateral, 0.0, forward});
  };
  auto half_of = [&](double t) { return static_cast<long>(std::floor(2.0 * cycle(t))); };
  auto half_start = [&](long n) { return (static_cast<double>(n) / 2.0 - phase0) / f; };
  auto lateral = [&](long n) { return n % 2 == 0 ? kHipWidth : -kHipWidth; };

  // The stance foot is planted at `planted`; the root is placed from it so
  // the foot stays fixed on curved paths as well.
  long current = half_of(0.0);
  Vec3 planted = to_world(0.0, lateral(current), dist(half_start(current)) + step / 2.0 - dist(0.0));
  const std::size_t i_left = 1, i_lknee = 2, i_right = 4, i_rknee = 5;

  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / p.frame_rate;
    while (half_of(t) > current) {
      const double ts = half_start(current + 1);
      const Vec3 root = planted - to_world(ts, lateral(current), -step / 2.0);
      ++current;
      planted = root + to_world(ts, lateral(current), step / 2.0);
    }

    const double c = cycle(t);
    const double s = 2.0 * c - static_cast<double>(current);
    const bool left_stance = current % 2 == 0;
    const double contact = dist(half_start(current)) + step / 2.0;
    const double stance_alpha = std::asin(std::clamp((contact - dist(t)) / kLeg, -1.0, 1.0));
    // Swing foot: straight-line advance from lift-off to the next contact
    // with a sine lift, solved as a two-link chain in the sagittal plane.
    const double root_y = kLeg * std::cos(stance_alpha);
    const double foot_fwd = contact - step + 2.0 * step * s - dist(t);
    const double foot_dn = root_y - lift * std::sin(kPi * s);
    const double reach = std::min(std::hypot(foot_fwd, foot_dn), kLeg);
    const double cos_knee = (kThigh * kThigh + kShin * kShin - reach * reach) / (2.0 * kThigh * kShin);
    const double knee = kPi - std::acos(std::clamp(cos_knee, -1.0, 1.0));
    const double cos_hip = (kThigh * kThigh + reach * reach - kShin * kShin) / (2.0 * kThigh * reach);
    const double swing_alpha = std::atan2(foot_fwd, foot_dn) + std::acos(std::clamp(cos_hip, -1.0, 1.0));

    const Vec3 ground_root = planted - to_world(t, lateral(current), contact - dist(t));
    clip.root_positions[i] = {ground_root.x, root_y, ground_root.z};
    for (std::size_t j = 0; j < nj; ++j) clip.rotations.at(i, j) = Quat::identity();
    clip.rotations.at(i, 0) = rot::axis_angle(kUp, heading(t));
    const Vec3 pitch{1.0, 0.0, 0.0};
    const double left_alpha = left_stance ? stance_alpha : swing_alpha;
    const double right_alpha = left_stance ? swing_alpha : stance_alpha;
    clip.rotations.at(i, i_left) = rot::axis_angle(pitch, -left_alpha);
    clip.rotations.at(i, i_right) = rot::axis_angle(pitch, -right_alpha);
    clip.rotations.at(i, i_lknee) = rot::axis_angle(pitch, left_stance ? 0.0 : knee);
    clip.rotations.at(i, i_rknee) = rot::axis_angle(pitch, left_stance ? knee : 0.0);
    if (p.joints == 12) {
      const double swing = std::cos(2.0 * kPi * c);
      clip.rotations.at(i, 7) = rot::axis_angle(kUp, twist * std::sin(2.0 * kPi * c));
      clip.rotations.at(i, 8) = rot::axis_angle(pitch, arm_amp * swing);
      clip.rotations.at(i, 10) = rot::axis_angle(pitch, -arm_amp * swing);
    }
  }
  clip.rotations = rot::fix_continuity(clip.rotations);

  const double t_end = static_cast<double>(frames - 1) / p.frame_rate;
  for (double k = std::floor(phase0); ; k += 1.0) {
    const double tl = (k - phase0) / f;
    const double tr = (k + 0.5 - phase0) / f;
    if (tl > t_end && tr > t_end) break;
    if (tl > 0.0 && tl <= t_end) out.truth.left_contact_times.push_back(tl);
    if (tr > 0.0 && tr <= t_end) out.truth.right_contact_times.push_back(tr);
  }
  return out;
}

std::vector<SynthClip> synth_corpus(const CorpusParams& params) {
  if (params.min_speed > params.max_speed || params.min_speed <= 0.0) {
    throw ConfigError("synth_corpus: need 0 < min_speed <= max_speed");
  }
  Rng rng(params.seed);
  std::vector<SynthClip> out;
  for (std::size_t i = 0; i < params.clips; ++i) {
    SynthParams p;
    p.joints = params.joints;
    p.duration = params.duration;
    p.frame_rate = params.frame_rate;
    p.speed = rng.uniform(params.min_speed, params.max_speed);
    p.stride_frequency = (0.55 + 0.35 * p.speed) * rng.uniform(0.92, 1.08);
    p.turn_rate = rng.uniform(-params.max_turn_rate, params.max_turn_rate);
    p.seed = rng.next_u64();
    SynthClip c = synth_gait(p);
    char name[32];
    std::snprintf(name, sizeof name, "walk_%03zu", i);
    c.clip.action = name;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace qmotion::data
