#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "qmotion/error.hpp"
#include "qmotion/evaluation.hpp"
#include "test_support.hpp"

using namespace qmotion;
using namespace qmotion::eval;

namespace {

double quat_gap(const rot::Quat& a, const rot::Quat& b) {
  return std::min(std::abs(a.w - b.w) + std::abs(a.x - b.x) + std::abs(a.y - b.y) + std::abs(a.z - b.z),
                  std::abs(a.w + b.w) + std::abs(a.x + b.x) + std::abs(a.y + b.y) + std::abs(a.z + b.z));
}

data::MotionClip constant_clip(std::size_t frames, double fps, const std::string& action, std::uint64_t seed) {
  Rng rng(seed);
  const kin::Skeleton skel = data::synth_skeleton(8);
  data::MotionClip c;
  c.skeleton = skel;
  c.frame_rate = fps;
  c.action = action;
  c.rotations = rot::QuaternionSequence(0, skel.size(), fps);
  std::vector<rot::Quat> frame(skel.size());
  for (std::size_t j = 0; j < skel.size(); ++j) {
    frame[j] = skel.joint(j).dof_active ? testing::random_unit(rng) : *skel.joint(j).constant_rotation;
  }
  for (std::size_t t = 0; t < frames; ++t) {
    c.root_positions.push_back({0.1 * static_cast<double>(t), 1.0, 0.0});
    c.rotations.push_frame(frame);
  }
  return c;
}

std::vector<data::MotionClip> gait_clips(double fps) {
  std::vector<data::MotionClip> out;
  for (int i = 0; i < 3; ++i) {
    data::SynthParams p;
    p.joints = 8;
    p.duration = 6.0;
    p.frame_rate = fps;
    p.speed = 1.0 + 0.3 * i;
    p.turn_rate = 0.2 * i;
    p.seed = 40 + i;
    auto c = data::synth_gait(p).clip;
    c.action = i == 2 ? "turning" : "walking";
    out.push_back(std::move(c));
  }
  return out;
}

EvalProtocol small_protocol() {
  EvalProtocol p;
  p.conditioning = 10;
  p.samples_per_sequence = 8;
  p.bootstrap_resamples = 200;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Baselines

TEST_CASE("zero-velocity repeats the last prefix frame") {
  Rng rng(1);
  std::vector<Frame> prefix;
  for (int t = 0; t < 3; ++t) prefix.push_back({testing::random_unit(rng), testing::random_unit(rng)});
  const auto out = baseline_zero_velocity(prefix, 5);
  REQUIRE(out.size() == 5);
  for (const auto& f : out) CHECK(f == prefix.back());
  CHECK_THROWS_AS(baseline_zero_velocity({}, 3), InputError);
}

TEST_CASE("running average of a constant prefix equals zero-velocity") {
  Rng rng(2);
  const Frame f{testing::random_unit(rng), testing::random_unit(rng)};
  std::vector<Frame> prefix(4, f);
  prefix[1][0] = -prefix[1][0];
  for (std::size_t w : {2, 4}) {
    const auto avg = baseline_running_average(prefix, w, 3);
    const auto zv = baseline_zero_velocity(prefix, 3);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 2; ++j) CHECK(quat_gap(avg[t][j], zv[t][j]) < 1e-12);
    }
  }
  CHECK_THROWS_AS(baseline_running_average(prefix, 5, 1), InputError);
}

TEST_CASE("two-frame running average is the slerp midpoint") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const rot::Quat q = testing::random_unit(rng);
    const auto avg = baseline_running_average({{q}, {rot::Quat::identity()}}, 2, 1);
    const rot::Quat mid = rot::slerp(q, rot::Quat::identity(), 0.5);
    CHECK(quat_gap(avg[0][0], mid) < 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Angle errors

TEST_CASE("Euclidean XYZ error matches the benchmark matrix convention") {
  Rng rng(4);
  std::vector<kin::Joint> joints{{"root", -1, {}}, {"a", 0, {0, 1, 0}}, {"b", 1, {0, 1, 0}}};
  const kin::Skeleton skel(joints);
  AngleErrorOptions opts;
  opts.order = rot::EulerOrder::kXYZ;
  for (int i = 0; i < 200; ++i) {
    Frame pred, ref;
    double expected = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double e1[3] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const double e2[3] = {e1[0] + rng.uniform(-0.3, 0.3), e1[1] + rng.uniform(-0.3, 0.3), e1[2] + rng.uniform(-0.3, 0.3)};
      pred.push_back(rot::expmap_to_quat({e1[0], e1[1], e1[2]}));
      ref.push_back(rot::expmap_to_quat({e2[0], e2[1], e2[2]}));
      if (j == 0) continue;
      const auto a = oracle::benchmark_euler(oracle::rodrigues(e1[0], e1[1], e1[2]));
      const auto b = oracle::benchmark_euler(oracle::rodrigues(e2[0], e2[1], e2[2]));
      for (int c = 0; c < 3; ++c) expected += std::pow(oracle::wrapped_l1(a[c], b[c]), 2);
    }
    CHECK(frame_angle_error(skel, pred, ref, opts) == doctest::Approx(std::sqrt(expected)).epsilon(1e-9));
  }
}

TEST_CASE("angle error is zero for identical frames and rejects wrong sizes") {
  Rng rng(5);
  const kin::Skeleton skel = data::synth_skeleton(7);
  Frame f;
  for (std::size_t a = 0; a < skel.active_count(); ++a) f.push_back(testing::random_unit(rng));
  CHECK(frame_angle_error(skel, f, f) == 0.0);
  Frame g = f;
  g.pop_back();
  CHECK_THROWS_AS(frame_angle_error(skel, f, g), ShapeError);
  CHECK(parse_angle_metric("mean_l1") == AngleMetric::kMeanL1);
  CHECK_THROWS_AS(parse_angle_metric("l2"), ConfigError);
}

// ---------------------------------------------------------------------------
// Protocol

TEST_CASE("protocol horizons and validation") {
  EvalProtocol p;
  CHECK(p.horizon_frames() == std::vector<std::size_t>{2, 4, 8, 10});
  CHECK(p.max_horizon() == 10);
  p.horizons_ms = {80, 90};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.horizons_ms = {10};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.horizons_ms = {};
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("chunk plans are reproducible and in range") {
  auto clips = gait_clips(25.0);
  clips.push_back(constant_clip(15, 25.0, "short", 1));
  const EvalProtocol p = small_protocol();
  const ChunkPlan a = plan_chunks(clips, p), b = plan_chunks(clips, p);
  REQUIRE(a.chunks.size() == 3 * p.samples_per_sequence);
  CHECK(a.skipped == std::vector<std::size_t>{3});
  for (std::size_t i = 0; i < a.chunks.size(); ++i) {
    CHECK(a.chunks[i].clip == b.chunks[i].clip);
    CHECK(a.chunks[i].start == b.chunks[i].start);
    CHECK(a.chunks[i].start + p.conditioning + p.max_horizon() <= clips[a.chunks[i].clip].frames());
  }
  EvalProtocol other = p;
  other.seed = p.seed + 1;
  const ChunkPlan c = plan_chunks(clips, other);
  bool differs = false;
  for (std::size_t i = 0; i < c.chunks.size(); ++i) differs |= c.chunks[i].start != a.chunks[i].start;
  CHECK(differs);
}

TEST_CASE("zero-velocity on constant clips gives an all-zero report") {
  const std::vector<data::MotionClip> clips = {constant_clip(80, 25.0, "still", 1), constant_clip(90, 25.0, "idle", 2)};
  const EvalReport r = run_protocol(zero_velocity_predictor(), clips, small_protocol());
  REQUIRE(r.rows.size() == 8);
  CHECK(r.actions() == std::vector<std::string>{"still", "idle"});
  for (const auto& row : r.rows) {
    CHECK(row.mean_error == 0.0);
    CHECK(row.ci_low == 0.0);
    CHECK(row.ci_high == 0.0);
    CHECK(row.n_samples == 8);
  }
  const EvalReport avg = run_protocol(running_average_predictor(4), clips, small_protocol());
  for (const auto& row : avg.rows) CHECK(row.mean_error < 1e-7);
}

TEST_CASE("protocol errors match a brute-force recomputation") {
  const auto clips = gait_clips(25.0);
  EvalProtocol p = small_protocol();
  p.angles.metric = AngleMetric::kMeanL1;
  p.angles.include_root = true;
  const EvalReport r = run_protocol(zero_velocity_predictor(), clips, p);
  const ChunkPlan plan = plan_chunks(clips, p);
  const auto& skel = clips[0].skeleton;
  std::vector<rot::EulerOrder> orders;
  for (std::size_t j : skel.active_joints()) orders.push_back(skel.joint(j).euler_order);
  const auto horizons = p.horizon_frames();
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    std::vector<double> walking;
    for (const auto& chunk : plan.chunks) {
      const auto& clip = clips[chunk.clip];
      const auto last = clip.pose(chunk.start + p.conditioning - 1).rotations;
      const auto ref = clip.pose(chunk.start + p.conditioning + horizons[h] - 1).rotations;
      double sum = 0.0;
      for (std::size_t a = 0; a < last.size(); ++a) {
        const auto e = rot::quat_to_euler(last[a], orders[a]).angles;
        const auto g = rot::quat_to_euler(ref[a], orders[a]).angles;
        sum += oracle::wrapped_l1(e.a1, g.a1) + oracle::wrapped_l1(e.a2, g.a2) + oracle::wrapped_l1(e.a3, g.a3);
      }
      const double err = sum / static_cast<double>(3 * last.size());
      // Same value through the training loss on the repeated frame.
      ad::Tape tape;
      ad::Tensor pred({1, last.size(), 4}), gt({1, last.size(), 3});
      for (std::size_t a = 0; a < last.size(); ++a) {
        pred[4 * a] = last[a].w;
        pred[4 * a + 1] = last[a].x;
        pred[4 * a + 2] = last[a].y;
        pred[4 * a + 3] = last[a].z;
        const auto g = rot::quat_to_euler(ref[a], orders[a]).angles;
        gt[3 * a] = g.a1;
        gt[3 * a + 1] = g.a2;
        gt[3 * a + 2] = g.a3;
      }
      CHECK(train::loss_euler_l1(tape.constant(pred), gt, orders).value().item() == doctest::Approx(err).epsilon(1e-10));
      if (clip.action == "walking") walking.push_back(err);
    }
    const EvalRow& row = r.row("walking", p.horizons_ms[h]);
    REQUIRE(row.samples.size() == walking.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < walking.size(); ++i) {
      CHECK(row.samples[i] == doctest::Approx(walking[i]).epsilon(1e-12));
      mean += row.samples[i];
    }
    mean /= static_cast<double>(walking.size());
    CHECK(std::abs(row.mean_error - mean) <= 1e-12);
    CHECK(row.mean_error > 0.0);
    CHECK(row.ci_low <= row.mean_error);
    CHECK(row.ci_high >= row.mean_error);
  }
  // Zero velocity is exact at the conditioning boundary, so errors grow from 0.
  CHECK(r.row("walking", 80).mean_error < r.row("walking", 400).mean_error);
}

TEST_CASE("protocol reports are deterministic and validate inputs") {
  const auto clips = gait_clips(25.0);
  const auto a = run_protocol(running_average_predictor(2), clips, small_protocol());
  const auto b = run_protocol(running_average_predictor(2), clips, small_protocol());
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.to_csv().rfind("action,horizon_ms,mean_error,ci_low,ci_high,n_samples\n", 0) == 0);
  CHECK(a.to_table().find("turning") != std::string::npos);
  CHECK_THROWS_AS(run_protocol(zero_velocity_predictor(), gait_clips(30.0), small_protocol()), InputError);
  CHECK_THROWS_AS(run_protocol(zero_velocity_predictor(), {}, small_protocol()), InputError);

  auto with_short = clips;
  with_short.push_back(constant_clip(12, 25.0, "short", 3));
  const auto c = run_protocol(zero_velocity_predictor(), with_short, small_protocol());
  CHECK(c.skipped_clips == 1);
  CHECK(c.warnings.size() >= 1);
}

TEST_CASE("model predictor matches direct autoregressive prediction") {
  const auto clips = gait_clips(25.0);
  models::PoseNetworkConfig mc = models::PoseNetworkConfig::desk(clips[0].skeleton.active_count());
  mc.hidden = 6;
  mc.layers = 1;
  const models::PoseNetwork net(mc, 8);
  const EvalProtocol p = small_protocol();
  const ChunkPlan plan = plan_chunks(clips, p);
  const auto via = model_predictor(net, 5)(clips, plan.chunks, p.conditioning, 4);
  const auto ds = train::make_pose_dataset(clips, models::Parameterization::kQuaternion);
  const auto direct = train::predict_episodes(net, ds, plan.chunks, p.conditioning, 4);
  REQUIRE(via.size() == plan.chunks.size());
  for (std::size_t i = 0; i < via.size(); ++i) {
    for (std::size_t f = 0; f < 4; ++f) {
      const auto q = models::features_to_quats(models::Parameterization::kQuaternion, direct[i][f]);
      for (std::size_t a = 0; a < q.size(); ++a) CHECK(quat_gap(q[a], via[i][f][a]) < 1e-12);
    }
  }
  auto pc = mc;
  pc.parameterization = models::Parameterization::kPosition;
  pc.mode = models::OutputMode::kAbsolute;
  pc.position_joints = 4;
  CHECK_THROWS_AS(model_predictor(models::PoseNetwork(pc, 1)), ConfigError);
}

// ---------------------------------------------------------------------------
// Statistics

TEST_CASE("bootstrap intervals") {
  const Interval flat = bootstrap_ci(std::vector<double>(10, 0.7));
  CHECK(flat.low == doctest::Approx(0.7));
  CHECK(flat.high == doctest::Approx(0.7));
  Rng rng(6);
  std::vector<double> s;
  for (int i = 0; i < 50; ++i) s.push_back(rng.normal());
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= 50.0;
  const Interval ci = bootstrap_ci(s, 1000, 0.25, 0.75, 1);
  CHECK(ci.low <= mean);
  CHECK(ci.high >= mean);
  CHECK_THROWS_AS(bootstrap_ci({1.0}), InputError);
  CHECK_THROWS_AS(bootstrap_ci(s, 0), ConfigError);
  CHECK_THROWS_AS(bootstrap_ci(s, 10, 0.8, 0.2), ConfigError);
}

TEST_CASE("bootstrap width scales with one over root sample size") {
  Rng rng(7);
  auto mean_width = [&](std::size_t n) {
    double w = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> s(n);
      for (double& v : s) v = rng.normal();
      const Interval ci = bootstrap_ci(s, 500, 0.25, 0.75, static_cast<std::uint64_t>(rep));
      w += ci.high - ci.low;
    }
    return w / 20.0;
  };
  const double ratio = mean_width(25) / mean_width(400);
  CHECK(ratio > 3.2);
  CHECK(ratio < 4.8);
  // The quartile width of a normal mean is 2 * 0.6745 / sqrt(n).
  CHECK(mean_width(100) == doctest::Approx(2 * 0.6745 / 10.0).epsilon(0.15));
}

TEST_CASE("quantiles, tail mass and histograms") {
  CHECK(quantile({3, 1, 2, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({3, 1, 2, 4}, 0.0) == 1.0);
  CHECK(quantile({3, 1, 2, 4}, 1.0) == 4.0);
  CHECK_THROWS_AS(quantile({}, 0.5), InputError);
  CHECK(tail_mass({1, 2, 3, 4}, 2.0) == 0.5);
  const Histogram h = histogram({-1, 0.1, 0.5, 0.9, 2}, 2, 0.0, 1.0);
  CHECK(h.counts == std::vector<std::size_t>{2, 3});
  CHECK(h.edges.size() == 3);
  CHECK(h.to_csv().rfind("bin_low,bin_high,count\n", 0) == 0);
}

TEST_CASE("bone length deviation") {
  Rng rng(8);
  const kin::Skeleton skel = testing::random_tree(rng, 6, 0.0);
  std::vector<kin::JointPositions> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(kin::forward_kinematics(skel, testing::random_pose(rng, skel)));
  CHECK(bone_length_deviation(skel, frames) < 1e-12);
  frames[2][3].x += 0.5;
  CHECK(bone_length_deviation(skel, frames) > 1e-3);
}

// ---------------------------------------------------------------------------
// Ablations

TEST_CASE("plateau detection") {
  CHECK(plateau_index({1.0, 1.0, 1.0, 1.0}) == 0);
  CHECK(plateau_index({5.0, 3.0, 2.0, 1.98, 1.97}) == 2);
  CHECK(plateau_index({5.0, 4.0, 3.0}) == 2);
  CHECK_THROWS_AS(plateau_index({}), InputError);
  const auto rows = ablate_conditioning({1, 2, 5}, [](std::size_t n) { return 1.0 / static_cast<double>(n); });
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].n == 5);
  CHECK(rows[2].error == doctest::Approx(0.2));
}

TEST_CASE("parameterization comparison and position regression harnesses") {
  data::CorpusParams cp;
  cp.clips = 3;
  cp.joints = 7;
  cp.duration = 3.0;
  cp.seed = 9;
  std::vector<data::MotionClip> clips;
  for (auto& s : data::synth_corpus(cp)) clips.push_back(s.clip);
  ComparisonConfig cfg;
  cfg.base = models::PoseNetworkConfig::desk(clips[0].skeleton.active_count());
  cfg.base.hidden = 6;
  cfg.base.layers = 1;
  cfg.train.conditioning = 4;
  cfg.train.prediction = 3;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  cfg.train.samples_per_epoch = 2;
  cfg.train.validation_episodes = 2;
  cfg.eval_episodes = 4;
  const auto runs = compare_parameterizations(clips, clips, cfg);
  REQUIRE(runs.size() == 4);
  for (const auto& r : runs) {
    CHECK(r.log.size() == 2);
    CHECK(r.velocity_errors.size() == 4 * 3);
    CHECK(std::isfinite(r.final_position));
  }
  const auto again = compare_parameterizations(clips, clips, cfg);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t e = 0; e < 2; ++e) CHECK(runs[i].log[e].same_values(again[i].log[e]));
  }

  models::PoseNetworkConfig qc = cfg.base;
  models::PoseNetworkConfig pc = cfg.base;
  pc.parameterization = models::Parameterization::kPosition;
  pc.mode = models::OutputMode::kAbsolute;
  pc.position_joints = clips[0].skeleton.size();
  const models::PoseNetwork qnet(qc, 1), pnet(pc, 2);
  kin::IkConfig ik;
  ik.max_steps = 300;
  ik.restarts = 0;
  const RegressionReport rep = compare_position_regression(qnet, pnet, clips, 4, 3, 3, 5, ik);
  REQUIRE(rep.variants.size() == 3);
  CHECK(rep.variant("quaternion").bone_length_deviation < 1e-9);
  CHECK(rep.variant("position+ik").bone_length_deviation < 1e-9);
  CHECK(rep.variant("position").bone_length_deviation > 1e-6);
  CHECK_THROWS_AS(compare_position_regression(pnet, pnet, clips, 4, 3, 3, 5), ConfigError);
}

// ---------------------------------------------------------------------------
// Exponential-map text

TEST_CASE("exponential-map text parsing") {
  const kin::Skeleton skel = expmap_benchmark_skeleton();
  REQUIRE(skel.size() == 32);
  CHECK(skel.parent(16) == 12);
  Rng rng(10);
  std::string text;
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> row;
    for (int i = 0; i < 99; ++i) row.push_back(i < 3 ? 100.0 * rng.normal() : 0.5 * rng.normal());
    for (std::size_t i = 0; i < row.size(); ++i) text += (i ? "," : "") + std::to_string(row[i]);
    text += "\n";
    rows.push_back(row);
  }
  const data::MotionClip clip = parse_expmap_text(text, skel, 50.0);
  REQUIRE(clip.frames() == 3);
  CHECK(clip.root_positions[1].y == doctest::Approx(rows[1][1]).epsilon(1e-5));
  for (std::size_t j = 0; j < 32; ++j) {
    const auto& r = rows[2];
    const auto q = oracle::matrix_quat(oracle::rodrigues(std::stod(std::to_string(r[3 + 3 * j])),
                                                         std::stod(std::to_string(r[4 + 3 * j])),
                                                         std::stod(std::to_string(r[5 + 3 * j]))));
    CHECK(quat_gap(q, clip.rotations.at(2, j)) < 1e-9);
  }
  CHECK_THROWS_AS(parse_expmap_text("1,2,3\n", skel, 50.0), ParseError);
  CHECK_THROWS_AS(parse_expmap_text(std::string(98, ' ') + "x", skel, 50.0), ParseError);
  CHECK_THROWS_AS(parse_expmap_text("", skel, 50.0), ParseError);
}
