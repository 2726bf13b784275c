#include <benchmark/benchmark.h>

#include <vector>

#include "qmotion/autodiff.hpp"
#include "qmotion/evaluation.hpp"
#include "qmotion/kinematics.hpp"
#include "qmotion/models.hpp"
#include "qmotion/motiondata.hpp"
#include "qmotion/random.hpp"
#include "qmotion/rotmath.hpp"
#include "qmotion/training.hpp"

namespace {

using namespace qmotion;

rot::Quat random_quat(Rng& rng) {
  return rot::normalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
}

void BM_EulerRoundTrip(benchmark::State& state) {
  Rng rng(1);
  std::vector<rot::Quat> qs(1024);
  for (auto& q : qs) q = random_quat(rng);
  for (auto _ : state) {
    for (const auto& q : qs) benchmark::DoNotOptimize(rot::euler_to_quat(rot::quat_to_euler(q, rot::EulerOrder::kZYX).angles));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(qs.size()));
}
BENCHMARK(BM_EulerRoundTrip);

void BM_ForwardKinematics(benchmark::State& state) {
  const auto clip = data::synth_gait({}).clip;
  std::size_t t = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(kin::forward_kinematics(clip.skeleton, clip.pose(t)));
    t = (t + 1) % clip.frames();
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ForwardKinematics);

void BM_PositionalLossBackward(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const kin::Skeleton skel = data::synth_skeleton(12);
  const std::size_t A = skel.active_count();
  Rng rng(2);
  ad::Tensor root({frames, 3}), rotations({frames, A, 4}), ref({frames, skel.size(), 3});
  for (std::size_t i = 0; i < frames * A; ++i) {
    const rot::Quat q = random_quat(rng);
    rotations[4 * i] = q.w;
    rotations[4 * i + 1] = q.x;
    rotations[4 * i + 2] = q.y;
    rotations[4 * i + 3] = q.z;
  }
  for (double& v : ref.storage()) v = rng.normal();
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var r = tape.variable(root);
    ad::Var q = tape.variable(rotations);
    ad::Var loss = train::loss_positional(skel, r, q, tape.constant(ref));
    tape.backward(loss);
    benchmark::DoNotOptimize(q.grad());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(frames));
}
BENCHMARK(BM_PositionalLossBackward)->Arg(16)->Arg(256);

void BM_RecurrentStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  models::PoseNetwork net(models::PoseNetworkConfig::desk(8), 3);
  Rng rng(4);
  ad::Tensor pose({batch, 32});
  for (double& v : pose.storage()) v = rng.normal();
  for (auto _ : state) {
    ad::Tape tape;
    ad::Binding b(tape, net.params(), false);
    auto s = net.initial_state(b, batch);
    benchmark::DoNotOptimize(net.step(b, s, {tape.constant(pose), {}, {}}).pose.value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_RecurrentStep)->Arg(1)->Arg(16);

void BM_TrainingStep(benchmark::State& state) {
  const auto corpus = data::synth_corpus({.clips = 4, .joints = 8, .duration = 6.0});
  std::vector<data::MotionClip> clips;
  for (const auto& c : corpus) clips.push_back(c.clip);
  const train::PoseDataset ds = train::make_pose_dataset(clips, models::Parameterization::kQuaternion);
  models::PoseNetwork net(models::PoseNetworkConfig::desk(ds.skeleton.active_count()), 5);
  train::TrainConfig cfg;
  cfg.conditioning = 25;
  cfg.prediction = 10;
  train::Adam adam(net.params(), cfg.adam);
  data::EpisodeSampler sampler({ds.sequences[0].frames()}, 35, 6);
  Rng rng(7);
  for (auto _ : state) {
    std::vector<data::Episode> eps;
    for (int i = 0; i < 16; ++i) eps.push_back(sampler.sample());
    ad::Tape tape;
    ad::Binding b(tape, net.params());
    const auto r = train::scheduled_sampling_rollout(net, b, ds, eps, cfg, 0.9, rng);
    tape.backward(r.loss);
    net.params().zero_grad();
    b.accumulate_grads();
    adam.step(net.params(), 1e-3);
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

void BM_ZeroVelocityProtocol(benchmark::State& state) {
  const auto corpus = data::synth_corpus({.clips = 8, .duration = 20.0, .frame_rate = 25.0});
  std::vector<data::MotionClip> clips;
  for (const auto& c : corpus) clips.push_back(c.clip);
  eval::EvalProtocol p;
  p.samples_per_sequence = static_cast<std::size_t>(state.range(0));
  p.bootstrap_resamples = 0;
  for (auto _ : state) benchmark::DoNotOptimize(eval::run_protocol(eval::zero_velocity_predictor(), clips, p).rows);
}
BENCHMARK(BM_ZeroVelocityProtocol)->Arg(4)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
