// Acceptance runner: one PASS / FAIL / SKIP line per criterion.
//
//   qmotion_acceptance [criterion ...]
//
// Criterion 6 reads exponential-map text files from $QMOTION_H36M_DIR
// (S5/walking_1.txt, S5/walking_2.txt) and is skipped when it is unset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qmotion/diagnostics.hpp"
#include "qmotion/evaluation.hpp"
#include "qmotion/kinematics.hpp"
#include "qmotion/models.hpp"
#include "qmotion/motiondata.hpp"
#include "qmotion/random.hpp"
#include "qmotion/rotmath.hpp"
#include "qmotion/training.hpp"
#include "test_support.hpp"

namespace {

using namespace qmotion;
using rot::Quat;
using rot::Vec3;

namespace tol {
constexpr double kRoundTrip = 1e-9;
constexpr double kOracle = 1e-9;
constexpr double kFk = 1e-9;
constexpr double kBone = 1e-9;
constexpr double kRotationSeconds = 10.0;
constexpr double kGradcheckSeconds = 60.0;
constexpr double kIqrShrink = 3.0;
constexpr double kProtocolSeconds = 300.0;
constexpr double kStandardProtocol = 0.02;
constexpr double kProposedProtocol = 0.01;
constexpr double kSmokeReduction = 0.20;
constexpr double kSmokeSeconds = 600.0;
constexpr double kClipNorm = 0.1 + 1e-12;
constexpr double kTailQuantile = 0.99;
constexpr double kIkError = 1e-3;
constexpr double kIkSeconds = 5.0;
constexpr std::size_t kReceptiveField = 32;
}  // namespace tol

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kFail;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::kPass : Status::kFail, std::move(detail)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double max_entry_diff(const oracle::Mat3& a, const oracle::Mat3& b) {
  double m = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  }
  return m;
}

Vec3 random_axis(Rng& rng) {
  const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
  const double n = rot::norm(v);
  return {v.x / n, v.y / n, v.z / n};
}

double wrapped(double a, double b) { return oracle::wrapped_l1(a, b); }

std::vector<data::MotionClip> clips_of(const std::vector<data::SynthClip>& synth) {
  std::vector<data::MotionClip> out;
  for (const auto& s : synth) out.push_back(s.clip);
  return out;
}

// ---------------------------------------------------------------------------
// 1. Rotation algebra

Outcome rotation_algebra() {
  const Stopwatch watch;
  constexpr std::size_t kTrials = 10000;
  constexpr double pi = std::numbers::pi;
  Rng rng(101);
  double euler_rt = 0.0, quat_rt = 0.0, exp_rt = 0.0, exp_quat_rt = 0.0, oracle_err = 0.0;
  for (auto order : rot::kAllEulerOrders) {
    const auto axes = rot::axes_of(order);
    for (std::size_t i = 0; i < kTrials; ++i) {
      const rot::EulerAngles e{rng.uniform(-pi, pi), rng.uniform(-pi / 2 + 0.01, pi / 2 - 0.01),
                               rng.uniform(-pi, pi), order};
      const Quat q = rot::euler_to_quat(e);
      const auto back = rot::quat_to_euler(q, order).angles;
      euler_rt = std::max({euler_rt, wrapped(back.a1, e.a1), wrapped(back.a2, e.a2), wrapped(back.a3, e.a3)});
      const oracle::Mat3 r = oracle::matmul(oracle::matmul(oracle::axis_matrix(axes[0], e.a1),
                                                           oracle::axis_matrix(axes[1], e.a2)),
                                            oracle::axis_matrix(axes[2], e.a3));
      oracle_err = std::max(oracle_err, max_entry_diff(oracle::quat_matrix(q), r));

      const Quat u = testing::random_unit(rng);
      const auto conv = rot::quat_to_euler(u, order);
      if (!conv.singular) quat_rt = std::max(quat_rt, oracle::quat_distance(rot::euler_to_quat(conv.angles), u));
    }
  }
  for (std::size_t i = 0; i < kTrials; ++i) {
    const Vec3 axis = random_axis(rng);
    const double angle = i % 10 == 0 ? std::pow(10.0, rng.uniform(-12.0, -2.0)) : rng.uniform(0.0, pi - 1e-6);
    const rot::ExpMap e{axis.x * angle, axis.y * angle, axis.z * angle};
    const Quat q = rot::expmap_to_quat(e);
    const rot::ExpMap back = rot::quat_to_expmap(q);
    exp_rt = std::max({exp_rt, std::abs(back.x - e.x), std::abs(back.y - e.y), std::abs(back.z - e.z)});
    oracle_err = std::max(oracle_err, max_entry_diff(oracle::quat_matrix(q), oracle::rodrigues(e.x, e.y, e.z)));

    const Quat u = testing::random_unit(rng);
    exp_quat_rt = std::max(exp_quat_rt, oracle::quat_distance(rot::expmap_to_quat(rot::quat_to_expmap(u)), u));
  }
  for (std::size_t i = 0; i < kTrials; ++i) {
    const Quat a = testing::random_unit(rng), b = testing::random_unit(rng);
    oracle_err = std::max(oracle_err, max_entry_diff(oracle::quat_matrix(rot::qmul(a, b)),
                                                     oracle::matmul(oracle::quat_matrix(a), oracle::quat_matrix(b))));
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const Vec3 w = rot::rotate_vector(a, v);
    const oracle::V3 ref = oracle::apply(oracle::quat_matrix(a), {v.x, v.y, v.z});
    oracle_err = std::max({oracle_err, std::abs(w.x - ref[0]), std::abs(w.y - ref[1]), std::abs(w.z - ref[2])});
  }
  const double secs = watch.seconds();
  const double worst = std::max({euler_rt, quat_rt, exp_rt, exp_quat_rt});
  return verdict(worst <= tol::kRoundTrip && oracle_err <= tol::kOracle && secs < tol::kRotationSeconds,
                 format("round trip max %.2e (euler %.1e, quat %.1e, expmap %.1e / %.1e), oracle max %.2e, %.2f s",
                        worst, euler_rt, quat_rt, exp_rt, exp_quat_rt, oracle_err, secs));
}

// ---------------------------------------------------------------------------
// 2. FK against homogeneous matrices

Outcome fk_oracle() {
  Rng rng(202);
  double fk_err = 0.0, bone_err = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.uniform_int(0, 9);
    std::vector<kin::Joint> joints;
    for (std::size_t j = 0; j < n; ++j) {
      kin::Joint jt;
      jt.name = "j" + std::to_string(j);
      jt.parent = static_cast<int>(j) - 1;
      jt.offset = {rng.normal(), rng.normal(), rng.normal()};
      if (j > 0 && rng.bernoulli(0.2)) {
        jt.dof_active = false;
        jt.constant_rotation = testing::random_unit(rng);
      }
      joints.push_back(jt);
    }
    const kin::Skeleton skel(joints);
    const kin::Pose pose = testing::random_pose(rng, skel);
    const auto pos = kin::forward_kinematics(skel, pose);

    std::vector<int> parents;
    std::vector<oracle::V3> offsets;
    std::vector<oracle::Mat3> rots;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& jt = skel.joint(j);
      parents.push_back(jt.parent);
      offsets.push_back({jt.offset.x, jt.offset.y, jt.offset.z});
      const int slot = skel.active_slot(j);
      rots.push_back(oracle::quat_matrix(slot >= 0 ? pose.rotations[static_cast<std::size_t>(slot)]
                                                   : *jt.constant_rotation));
    }
    const auto& r = pose.root_position;
    const auto ref = oracle::matrix_fk(parents, offsets, rots, {r.x, r.y, r.z});
    for (std::size_t j = 0; j < n; ++j) {
      fk_err = std::max({fk_err, std::abs(pos[j].x - ref[j][0]), std::abs(pos[j].y - ref[j][1]),
                         std::abs(pos[j].z - ref[j][2])});
      if (j > 0) {
        const Vec3& p = pos[static_cast<std::size_t>(parents[j])];
        const double len = std::hypot(pos[j].x - p.x, pos[j].y - p.y, pos[j].z - p.z);
        bone_err = std::max(bone_err, std::abs(len - rot::norm(skel.joint(j).offset)));
      }
    }
  }
  return verdict(fk_err <= tol::kFk && bone_err <= tol::kBone,
                 format("1000 chains, max position diff %.2e, max bone length diff %.2e", fk_err, bone_err));
}

// ---------------------------------------------------------------------------
// 3. Gradient checks

Outcome gradient_checks() {
  const Stopwatch watch;
  const auto entries = diag::run_gradcheck_suite();
  const double secs = watch.seconds();
  std::set<std::string> names;
  std::vector<std::string> failed;
  std::size_t kinks = 0;
  double worst = 0.0;
  for (const auto& e : entries) {
    names.insert(e.name);
    kinks += e.result.kinks;
    worst = std::max(worst, e.result.max_abs_error);
    if (!e.result.passed) failed.push_back(e.name);
  }
  std::vector<std::string> missing;
  for (const char* required :
       {"positional_loss_fk", "recurrent_rollout", "convolutional_window", "add", "mul", "matmul", "qmul", "qrot",
        "atan2", "tanh", "sigmoid", "leaky_relu", "sqrt", "normalize", "expmap_to_quat"}) {
    if (!names.count(required)) missing.push_back(required);
  }
  std::string detail = format("%zu checks, %zu failed, %zu missing, worst abs diff %.2e, %zu kink coordinates, %.1f s",
                              entries.size(), failed.size(), missing.size(), worst, kinks, secs);
  for (const auto& f : failed) detail += " [" + f + "]";
  return verdict(failed.empty() && missing.empty() && secs < tol::kGradcheckSeconds, detail);
}

// ---------------------------------------------------------------------------
// 4. Continuity fix

rot::QuaternionSequence smooth_sequence(Rng& rng, std::size_t frames, std::size_t joints, double max_step) {
  rot::QuaternionSequence seq(0, joints, 30.0);
  std::vector<Quat> cur(joints);
  for (auto& q : cur) q = testing::random_unit(rng);
  for (std::size_t t = 0; t < frames; ++t) {
    seq.push_frame(cur);
    for (auto& q : cur) {
      const Vec3 axis = random_axis(rng);
      q = rot::normalize(rot::qmul(q, rot::axis_angle(axis, rng.uniform(0.0, max_step))));
    }
  }
  return seq;
}

Outcome continuity_fix() {
  Rng rng(404);
  std::size_t frames_checked = 0, negative = 0, non_idempotent = 0, not_antipodal = 0;
  for (std::size_t s = 0; s < 120; ++s) {
    const std::size_t pattern = s % 6;
    const double max_step = pattern == 5 ? std::numbers::pi * 0.999 : 0.4;
    rot::QuaternionSequence seq = smooth_sequence(rng, 300, 5, max_step);
    for (std::size_t t = 0; t < seq.frames(); ++t) {
      for (std::size_t j = 0; j < seq.joints(); ++j) {
        bool flip = false;
        switch (pattern) {
          case 0: flip = t % 2 == 1; break;
          case 1: flip = rng.bernoulli(0.5); break;
          case 2: flip = (t / 7 + j) % 2 == 1; break;
          case 3: flip = t >= 150; break;
          case 4: flip = rng.bernoulli(0.95); break;
          default: flip = rng.bernoulli(0.5); break;
        }
        if (flip) seq.at(t, j) = -seq.at(t, j);
      }
    }
    const auto fixed = rot::fix_continuity(seq);
    const auto twice = rot::fix_continuity(fixed);
    for (std::size_t t = 0; t < seq.frames(); ++t) {
      for (std::size_t j = 0; j < seq.joints(); ++j) {
        const Quat& in = seq.at(t, j);
        const Quat& out = fixed.at(t, j);
        if (!(out == in || out == -in)) ++not_antipodal;
        if (!(twice.at(t, j) == out)) ++non_idempotent;
        if (t > 0) {
          ++frames_checked;
          if (rot::dot(fixed.at(t - 1, j), out) < 0.0) ++negative;
        }
      }
    }
  }
  return verdict(negative == 0 && non_idempotent == 0 && not_antipodal == 0,
                 format("%zu transitions, %zu negative dots, %zu changed by a second pass, %zu not equal to +-input",
                        frames_checked, negative, non_idempotent, not_antipodal));
}

// ---------------------------------------------------------------------------
// 5. Protocol variance

Outcome protocol_variance() {
  const Stopwatch watch;
  data::CorpusParams cp;
  cp.clips = 4;
  cp.duration = 40.0;
  cp.frame_rate = 25.0;
  cp.seed = 505;
  const auto clips = clips_of(data::synth_corpus(cp));
  const auto predictor = eval::zero_velocity_predictor();
  constexpr std::size_t kSeeds = 200;

  auto seed_means = [&](std::size_t s) {
    eval::EvalProtocol p;
    p.samples_per_sequence = s;
    p.bootstrap_resamples = 0;
    std::vector<std::vector<double>> means;  // [row][seed]
    for (std::size_t seed = 0; seed < kSeeds; ++seed) {
      p.seed = 1000 + seed;
      const auto report = eval::run_protocol(predictor, clips, p);
      means.resize(report.rows.size());
      for (std::size_t r = 0; r < report.rows.size(); ++r) means[r].push_back(report.rows[r].mean_error);
    }
    return means;
  };
  const auto few = seed_means(4);
  const auto many = seed_means(128);

  double min_shrink = 1e300, worst_gap = 0.0;
  bool agree = true;
  for (std::size_t r = 0; r < few.size(); ++r) {
    auto iqr = [](const std::vector<double>& v) { return eval::quantile(v, 0.75) - eval::quantile(v, 0.25); };
    min_shrink = std::min(min_shrink, iqr(few[r]) / iqr(many[r]));
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const auto ci_few = eval::bootstrap_ci(few[r], 1000, 0.025, 0.975, 1);
    const auto ci_many = eval::bootstrap_ci(many[r], 1000, 0.025, 0.975, 2);
    const double gap = std::abs(mean(few[r]) - mean(many[r]));
    const double allowed = 0.5 * (ci_few.high - ci_few.low) + 0.5 * (ci_many.high - ci_many.low);
    worst_gap = std::max(worst_gap, gap / allowed);
    if (gap > allowed) agree = false;
  }
  const double secs = watch.seconds();
  return verdict(min_shrink >= tol::kIqrShrink && agree && secs < tol::kProtocolSeconds,
                 format("%zu action/horizon rows, min IQR shrink %.2fx, worst mean gap %.2f of combined CI, %.1f s",
                        few.size(), min_shrink, worst_gap, secs));
}

// ---------------------------------------------------------------------------
// 6. Baselines on recorded exponential-map data

Outcome recorded_baselines() {
  const char* root = std::getenv("QMOTION_H36M_DIR");
  if (root == nullptr || *root == '\0') return {Status::kSkip, "QMOTION_H36M_DIR not set"};
  namespace fs = std::filesystem;
  const kin::Skeleton skel = eval::expmap_benchmark_skeleton();
  std::vector<data::MotionClip> clips;
  for (const char* name : {"walking_1.txt", "walking_2.txt"}) {
    fs::path path = fs::path(root) / "S5" / name;
    if (!fs::exists(path)) path = fs::path(root) / name;
    if (!fs::exists(path)) return {Status::kSkip, "no S5 walking files under " + std::string(root)};
    data::MotionClip clip = data::downsample_all_phases(eval::load_expmap_text(path, skel, 50.0), 2).front();
    clip.action = "walking";
    clips.push_back(std::move(clip));
  }
  struct Expected {
    const char* name;
    eval::Predictor predictor;
    std::size_t samples;
    std::vector<double> values;
    double tolerance;
  };
  const std::vector<Expected> expected = {
      {"zerovel standard", eval::zero_velocity_predictor(), 4, {0.39, 0.68, 0.99, 1.15}, tol::kStandardProtocol},
      {"runavg4 standard", eval::running_average_predictor(4), 4, {0.64, 0.87, 1.07, 1.20}, tol::kStandardProtocol},
      {"zerovel S=128", eval::zero_velocity_predictor(), 128, {0.43, 0.78, 1.23, 1.34}, tol::kProposedProtocol},
  };
  bool ok = true;
  std::string detail;
  for (const auto& e : expected) {
    eval::EvalProtocol p;
    p.samples_per_sequence = e.samples;
    p.bootstrap_resamples = 0;
    p.angles.order = rot::EulerOrder::kXYZ;
    const auto report = eval::run_protocol(e.predictor, clips, p);
    detail += std::string(detail.empty() ? "" : "; ") + e.name + ":";
    for (std::size_t h = 0; h < p.horizons_ms.size(); ++h) {
      const double got = report.row("walking", p.horizons_ms[h]).mean_error;
      ok = ok && std::abs(got - e.values[h]) <= e.tolerance;
      detail += format(" %.3f/%.2f", got, e.values[h]);
    }
  }
  return verdict(ok, detail);
}

// ---------------------------------------------------------------------------
// 7. Learning smoke test

struct SmokeData {
  std::vector<data::MotionClip> train;
  std::vector<data::MotionClip> test;
};

SmokeData smoke_data() {
  data::CorpusParams cp;
  cp.clips = 16;
  cp.duration = 16.0;
  cp.frame_rate = 25.0;
  cp.seed = 707;
  SmokeData d;
  d.train = clips_of(data::synth_corpus(cp));
  cp.clips = 4;
  cp.seed = 708;
  d.test = clips_of(data::synth_corpus(cp));
  return d;
}

train::TrainConfig smoke_config() {
  train::TrainConfig tc;
  tc.conditioning = 50;
  tc.prediction = 10;
  tc.batch_size = 16;
  tc.samples_per_epoch = 32;
  tc.epochs = 300;
  tc.lr0 = 3e-3;
  tc.validation_episodes = 16;
  tc.seed = 77;
  return tc;
}

struct Shared {
  std::optional<SmokeData> smoke;
  std::optional<models::PoseNetwork> rotation_model;
};

bool same_parameters(const ad::ParameterSet& a, const ad::ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.value(i) == b.value(i))) return false;
  }
  return true;
}

Outcome learning_smoke(Shared& shared) {
  const Stopwatch watch;
  if (!shared.smoke) shared.smoke = smoke_data();
  const auto& d = *shared.smoke;
  const auto ds = train::make_pose_dataset(d.train, models::Parameterization::kQuaternion);
  const auto val = train::make_pose_dataset(d.test, models::Parameterization::kQuaternion);
  const auto mc = models::PoseNetworkConfig::desk(ds.skeleton.active_count());
  const train::TrainConfig tc = smoke_config();
  constexpr std::size_t kSnapshotEpoch = 2;

  models::PoseNetwork net(mc, 7);
  train::PoseTrainer trainer(net, ds, &val, tc);
  trainer.run([&](const train::EpochLog&) { return trainer.epoch() >= kSnapshotEpoch; });
  const ad::ParameterSet snapshot = net.params();
  const auto snapshot_log = trainer.log();
  trainer.run();
  const double train_secs = watch.seconds();

  models::PoseNetwork again(mc, 7);
  train::TrainConfig short_cfg = tc;
  short_cfg.epochs = kSnapshotEpoch;
  train::PoseTrainer rerun(again, ds, &val, short_cfg);
  rerun.run();
  bool reproducible = same_parameters(snapshot, again.params());
  for (std::size_t e = 0; e < kSnapshotEpoch; ++e) reproducible = reproducible && snapshot_log[e].same_values(rerun.log()[e]);

  eval::EvalProtocol p;
  p.samples_per_sequence = 128;
  p.bootstrap_resamples = 0;
  p.horizons_ms = {80};
  auto average = [&](const eval::EvalReport& r) {
    double s = 0.0;
    for (const auto& row : r.rows) s += row.mean_error;
    return s / static_cast<double>(r.rows.size());
  };
  const double model_err = average(eval::run_protocol(eval::model_predictor(net), d.test, p));
  const double zero_err = average(eval::run_protocol(eval::zero_velocity_predictor(), d.test, p));
  const double reduction = 1.0 - model_err / zero_err;
  shared.rotation_model = std::move(net);
  return verdict(reduction >= tol::kSmokeReduction && train_secs < tol::kSmokeSeconds && reproducible,
                 format("80 ms error %.4f vs zero-velocity %.4f (%.1f%% reduction), %zu epochs in %.1f s, "
                        "rerun %s",
                        model_err, zero_err, 100.0 * reduction, tc.epochs, train_secs,
                        reproducible ? "bit-identical" : "DIFFERS"));
}

// ---------------------------------------------------------------------------
// 8. Schedules and clipping

Outcome schedules() {
  train::TrainConfig tc;
  tc.lr0 = 2e-3;
  std::size_t mismatches = 0;
  for (std::size_t e = 0; e < 5000; ++e) {
    if (train::learning_rate(tc, e) != tc.lr0 * std::pow(0.999, static_cast<double>(e))) ++mismatches;
    if (train::sampling_probability(tc, e) != std::pow(0.995, static_cast<double>(e))) ++mismatches;
  }

  data::CorpusParams cp;
  cp.clips = 4;
  cp.joints = 7;
  cp.duration = 6.0;
  cp.seed = 808;
  const auto ds = train::make_pose_dataset(clips_of(data::synth_corpus(cp)), models::Parameterization::kQuaternion);
  tc.conditioning = 10;
  tc.prediction = 5;
  tc.epochs = 40;
  tc.samples_per_epoch = 8;
  tc.batch_size = 4;
  tc.validation_episodes = 4;
  auto mc = models::PoseNetworkConfig::desk(ds.skeleton.active_count());
  mc.hidden = 16;
  models::PoseNetwork net(mc, 3);
  train::PoseTrainer trainer(net, ds, &ds, tc);
  double max_norm = 0.0;
  for (const auto& row : trainer.run()) {
    const double E = static_cast<double>(row.epoch);
    if (row.lr != tc.lr0 * std::pow(0.999, E) || row.p != std::pow(0.995, E)) ++mismatches;
    max_norm = std::max(max_norm, row.max_clipped_norm);
  }

  ad::ParameterSet params;
  params.add("w", ad::Tensor({4}, {0.0, 0.0, 0.0, 0.0}));
  params.grad(0) = ad::Tensor({4}, {6.0, -8.0, 0.0, 0.0});
  train::Adam adam(params, train::AdamConfig{});
  const auto step = adam.step(params, 1e-3);
  max_norm = std::max(max_norm, step.clipped_norm);

  return verdict(mismatches == 0 && max_norm <= tol::kClipNorm && std::abs(step.clipped_norm - 0.1) <= 1e-12,
                 format("%zu schedule mismatches over 5000 epochs and a 40-epoch log, max post-clip norm %.17g, "
                        "norm-10 gradient clipped to %.17g",
                        mismatches, max_norm, step.clipped_norm));
}

// ---------------------------------------------------------------------------
// 9. Parameterization ablation

Outcome parameterization_ablation() {
  const Stopwatch watch;
  data::CorpusParams cp;
  cp.clips = 8;
  cp.joints = 8;
  cp.duration = 12.0;
  cp.frame_rate = 25.0;
  cp.max_turn_rate = 3.0;
  cp.seed = 909;
  const auto train_clips = clips_of(data::synth_corpus(cp));
  cp.clips = 4;
  cp.seed = 910;
  const auto val_clips = clips_of(data::synth_corpus(cp));

  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u}) {
    eval::ComparisonConfig cfg;
    cfg.variants = {models::Parameterization::kQuaternion, models::Parameterization::kExpMap,
                    models::Parameterization::kEulerYZX};
    cfg.base = models::PoseNetworkConfig::desk(train_clips.front().skeleton.active_count());
    cfg.train.conditioning = 25;
    cfg.train.prediction = 10;
    cfg.train.epochs = 400;
    cfg.train.samples_per_epoch = 32;
    cfg.train.lr0 = 3e-3;
    cfg.train.validation_episodes = 8;
    cfg.train.seed = seed;
    cfg.model_seed = seed;
    cfg.eval_episodes = 128;
    const auto runs = eval::compare_parameterizations(train_clips, val_clips, cfg);
    const auto& quat = runs[0];
    const auto& expmap = runs[1];
    const auto& yzx = runs[2];
    const double threshold = eval::quantile(quat.velocity_errors, tol::kTailQuantile);
    const double tail_q = eval::tail_mass(quat.velocity_errors, threshold);
    const double tail_e = eval::tail_mass(yzx.velocity_errors, threshold);
    const bool tail_ok = tail_q < tail_e;
    const bool pos_ok = quat.final_position <= expmap.final_position * 1.05;
    ok = ok && tail_ok && pos_ok;
    detail += format("%sseed %llu: tail quat %.4f vs yzx %.4f, position quat %.4f vs expmap %.4f", detail.empty() ? "" : "; ",
                     static_cast<unsigned long long>(seed), tail_q, tail_e, quat.final_position,
                     expmap.final_position);
  }
  detail += format(" (%.1f s)", watch.seconds());
  return verdict(ok, detail);
}

// ---------------------------------------------------------------------------
// 10. IK reprojection

Outcome ik_reprojection(Shared& shared) {
  Rng rng(1010);
  const Stopwatch watch;
  double worst = 0.0, bone_dev = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    std::vector<kin::Joint> joints;
    for (std::size_t j = 0; j < 5; ++j) {
      joints.push_back({"c" + std::to_string(j), static_cast<int>(j) - 1,
                        j == 0 ? Vec3{} : Vec3{rng.normal(), rng.uniform(0.3, 1.0), rng.normal()}});
    }
    const kin::Skeleton skel(joints);
    const kin::Pose truth = testing::random_pose(rng, skel);
    const auto target = kin::forward_kinematics(skel, truth);
    kin::Pose init;
    init.root_position = truth.root_position;
    init.rotations.assign(skel.active_count(), Quat{});
    const auto fit = kin::ik_reproject(skel, target, init);
    worst = std::max(worst, fit.error);
    bone_dev = std::max(bone_dev, eval::bone_length_deviation(skel, {kin::forward_kinematics(skel, fit.pose)}));
  }
  const double ik_secs = watch.seconds();

  if (!shared.smoke) shared.smoke = smoke_data();
  if (!shared.rotation_model) return {Status::kFail, "needs the rotation model of criterion 7"};
  const auto& d = *shared.smoke;
  const auto pos_ds = train::make_pose_dataset(d.train, models::Parameterization::kPosition);
  const auto pos_val = train::make_pose_dataset(d.test, models::Parameterization::kPosition);
  auto mc = models::PoseNetworkConfig::desk(0);
  mc.parameterization = models::Parameterization::kPosition;
  mc.position_joints = pos_ds.skeleton.size();
  mc.mode = models::OutputMode::kAbsolute;
  models::PoseNetwork position_model(mc, 10);
  train::TrainConfig tc = smoke_config();
  tc.epochs = 60;
  train::PoseTrainer trainer(position_model, pos_ds, &pos_val, tc);
  trainer.run();
  const auto report = eval::compare_position_regression(*shared.rotation_model, position_model, d.test, 50, 10, 128,
                                                        11);
  const auto& quat = report.variant("quaternion");
  const auto& proj = report.variant("position+ik");
  const double threshold = eval::quantile(quat.velocity_errors, tol::kTailQuantile);
  const double tail_q = eval::tail_mass(quat.velocity_errors, threshold);
  const double tail_p = eval::tail_mass(proj.velocity_errors, threshold);
  bone_dev = std::max(bone_dev, proj.bone_length_deviation);

  return verdict(worst < tol::kIkError && ik_secs < tol::kIkSeconds && bone_dev <= tol::kBone && tail_p > tail_q,
                 format("50 chains: max error %.2e in %.2f s; bone deviation %.2e; velocity tail position+ik %.4f vs "
                        "quaternion %.4f",
                        worst, ik_secs, bone_dev, tail_p, tail_q));
}

// ---------------------------------------------------------------------------
// 11. Receptive field

Outcome receptive_field() {
  auto mc = models::PoseNetworkConfig::desk(6);
  mc.backbone = models::Backbone::kConvolutional;
  const models::PoseNetwork net(mc, 11);
  const std::size_t rf = mc.receptive_field();
  constexpr std::size_t T = 64;
  Rng rng(1111);
  std::vector<ad::Tensor> frames;
  for (std::size_t t = 0; t < T; ++t) {
    ad::Tensor f({1, mc.pose_size()});
    for (std::size_t a = 0; a < mc.joints; ++a) {
      const Quat q = testing::random_unit(rng);
      f[4 * a] = q.w;
      f[4 * a + 1] = q.x;
      f[4 * a + 2] = q.y;
      f[4 * a + 3] = q.z;
    }
    frames.push_back(f);
  }
  auto last_output = [&](const std::vector<ad::Tensor>& in) {
    ad::Tape tape;
    ad::Binding b(tape, const_cast<ad::ParameterSet&>(net.params()), false);
    std::vector<models::StepInput> steps;
    for (const auto& f : in) steps.push_back({tape.constant(f), {}, {}});
    return net.convolve(b, steps).back().raw.value();
  };
  const ad::Tensor base = last_output(frames);
  std::size_t leaked = 0, blind = 0;
  for (std::size_t t = 0; t < T; ++t) {
    auto perturbed = frames;
    for (double& v : perturbed[t].storage()) v += 0.5;
    const ad::Tensor out = last_output(perturbed);
    double diff = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) diff = std::max(diff, std::abs(out[i] - base[i]));
    const bool inside = t + rf >= T;
    if (inside && diff == 0.0) ++blind;
    if (!inside && diff != 0.0) ++leaked;
  }
  return verdict(rf == tol::kReceptiveField && leaked == 0 && blind == 0,
                 format("receptive field %zu; %zu older frames change the output, %zu recent frames do not", rf,
                        leaked, blind));
}

}  // namespace

int main(int argc, char** argv) {
  Shared shared;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, rotation_algebra},
      {2, fk_oracle},
      {3, gradient_checks},
      {4, continuity_fix},
      {5, protocol_variance},
      {6, recorded_baselines},
      {7, [&] { return learning_smoke(shared); }},
      {8, schedules},
      {9, parameterization_ablation},
      {10, [&] { return ik_reprojection(shared); }},
      {11, receptive_field},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  if (only.count(10)) only.insert(7);

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const Stopwatch watch;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
    if (o.status == Status::kFail) ++failures;
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", id, tag, o.detail.c_str(), watch.seconds());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
