#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "qmotion/error.hpp"
#include "qmotion/evaluation.hpp"
#include "qmotion/models.hpp"
#include "qmotion/training.hpp"

namespace qmotion::cli {

using nlohmann::json;

namespace {

json checkpoint_meta(const models::Checkpoint& ck) {
  try {
    return json::parse(ck.meta_json);
  } catch (const json::exception&) {
    return json::object();
  }
}

/// Throws InputError when the checkpoint was trained on another skeleton.
void require_skeleton(const json& meta, const models::PoseNetwork& net, const kin::Skeleton& skel,
                      const fs::path& ckpt) {
  const std::string saved = meta.value("skeleton", std::string());
  if (!saved.empty()) {
    if (!(data::skeleton_from_json(saved) == skel)) {
      throw InputError("skeleton mismatch: checkpoint '" + ckpt.string() + "' was trained on a different skeleton");
    }
  } else if (net.config().joints != skel.active_count()) {
    throw InputError("skeleton mismatch: checkpoint '" + ckpt.string() + "' expects " +
                     std::to_string(net.config().joints) + " active joints, data has " +
                     std::to_string(skel.active_count()));
  }
}

struct PredictOptions {
  CommonOptions common;
  fs::path model;
  fs::path data;
  std::size_t conditioning = 50;
  double horizon_ms = 400.0;
  std::size_t episodes = 8;
  bool bvh = false;
};

void run_predict(const Context& ctx, const CLI::App& sub, const PredictOptions& o) {
  require_exists(o.model, "model");
  require_exists(o.data, "dataset");
  if (o.conditioning == 0) throw ConfigError("--conditioning must be positive");
  if (!(o.horizon_ms > 0.0)) throw ConfigError("--horizon-ms must be positive");
  if (o.episodes == 0) throw ConfigError("--episodes must be positive");
  begin_run(ctx, sub, o.common);

  const models::Checkpoint ck = models::load_checkpoint(o.model);
  const models::PoseNetwork net = models::pose_network_from(ck);
  const models::PoseNetworkConfig& cfg = net.config();
  if (cfg.include_controls || cfg.include_translations) {
    throw ConfigError("'" + o.model.string() + "' is a locomotion model; use generate");
  }
  if (cfg.parameterization == models::Parameterization::kPosition) {
    throw ConfigError("predict needs a rotation model, '" + o.model.string() + "' regresses positions");
  }
  const std::vector<data::MotionClip> clips = load_clips(o.data);
  require_uniform(clips);
  const kin::Skeleton& skel = clips[0].skeleton;
  require_skeleton(checkpoint_meta(ck), net, skel, o.model);

  const double fps = clips[0].frame_rate;
  const std::size_t n = o.conditioning;
  const auto k = static_cast<std::size_t>(std::llround(o.horizon_ms * fps / 1000.0));
  if (k == 0) throw ConfigError("--horizon-ms is shorter than one frame");
  std::vector<std::size_t> lengths;
  for (const auto& c : clips) lengths.push_back(c.frames());
  data::EpisodeSampler sampler(lengths, n + k, o.common.seed);
  std::vector<data::Episode> episodes;
  for (std::size_t i = 0; i < o.episodes; ++i) episodes.push_back(sampler.sample());

  const train::PoseDataset ds = train::make_pose_dataset(clips, cfg.parameterization);
  const auto preds = train::predict_episodes(net, ds, episodes, n, k);

  std::vector<double> angle_sum(k, 0.0), pos_sum(k, 0.0);
  std::ostringstream per_episode;
  per_episode.precision(10);
  per_episode << "episode,clip,start,action,mean_angle_error,mean_position_error\n";
  std::vector<data::MotionClip> outputs;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    const data::MotionClip& src = clips[ep.clip];
    const train::PoseSequence& seq = ds.sequences[ep.clip];
    data::MotionClip out;
    out.skeleton = skel;
    out.frame_rate = fps;
    out.subject = src.subject;
    out.action = src.action;
    out.rotations = rot::QuaternionSequence(0, skel.size(), fps);
    double ep_angle = 0.0, ep_pos = 0.0;
    for (std::size_t t = 0; t < n + k; ++t) {
      const std::size_t f = ep.start + t;
      std::vector<rot::Quat> full(src.rotations.frame(f).begin(), src.rotations.frame(f).end());
      if (t < n) {
        out.root_positions.push_back(src.root_positions[f]);
      } else {
        const std::size_t i = t - n;
        const std::vector<rot::Quat> q = models::features_to_quats(cfg.parameterization, preds[e][i]);
        for (std::size_t a = 0; a < q.size(); ++a) full[skel.active_joints()[a]] = q[a];
        out.root_positions.push_back(src.root_positions[ep.start + n - 1]);
        const double angle = eval::frame_angle_error(skel, q, seq.rotations[f]);
        const kin::JointPositions p = kin::forward_kinematics(skel, kin::Pose{{0, 0, 0}, q});
        const kin::JointPositions r = kin::forward_kinematics(skel, kin::Pose{{0, 0, 0}, seq.rotations[f]});
        const double pos = kin::position_error(std::span(&p, 1), std::span(&r, 1));
        angle_sum[i] += angle;
        pos_sum[i] += pos;
        ep_angle += angle / static_cast<double>(k);
        ep_pos += pos / static_cast<double>(k);
      }
      out.rotations.push_frame(full);
    }
    per_episode << e << ',' << ep.clip << ',' << ep.start << ',' << src.action << ',' << ep_angle << ',' << ep_pos
                << '\n';
    outputs.push_back(std::move(out));
  }

  std::ostringstream metrics;
  metrics.precision(10);
  metrics << "frame,horizon_ms,angle_error,position_error\n";
  const double count = static_cast<double>(episodes.size());
  for (std::size_t i = 0; i < k; ++i) {
    metrics << i + 1 << ',' << 1000.0 * static_cast<double>(i + 1) / fps << ',' << angle_sum[i] / count << ','
            << pos_sum[i] / count << '\n';
  }
  write_clips(outputs, o.common.out / "predictions", o.bvh);
  write_text(o.common.out / "metrics.csv", metrics.str());
  write_text(o.common.out / "episodes.csv", per_episode.str());
  std::printf("predicted %zu episodes of %zu frames; angle error at %.0f ms: %.4f\n", episodes.size(), k,
              1000.0 * static_cast<double>(k) / fps, angle_sum[k - 1] / count);
}

struct GenerateOptions {
  CommonOptions common;
  fs::path pose;
  fs::path pace;
  fs::path spline;
  fs::path init;
  double speed = 1.4;
  std::size_t frames = 0;
  double divergence = 10.0;
  bool bvh = false;
};

void run_generate(const Context& ctx, const CLI::App& sub, const GenerateOptions& o) {
  require_exists(o.pose, "pose model");
  require_exists(o.pace, "pace model");
  require_exists(o.spline, "spline");
  require_exists(o.init, "init clip");
  if (o.speed < 0.0) throw ConfigError("--speed must be non-negative");
  begin_run(ctx, sub, o.common);

  const models::Checkpoint pose_ck = models::load_checkpoint(o.pose);
  const models::PoseNetwork pose = models::pose_network_from(pose_ck);
  const models::PaceNetwork pace = models::pace_network_from(models::load_checkpoint(o.pace));
  if (!pose.config().include_controls || !pose.config().include_translations) {
    throw ConfigError("'" + o.pose.string() + "' is not a locomotion model (train it with --locomotion)");
  }
  const json meta = checkpoint_meta(pose_ck);
  const data::MotionClip init = load_clips(o.init).at(0);
  require_skeleton(meta, pose, init.skeleton, o.pose);
  const double segment = meta.value("segment_length", 0.0);
  const kin::Skeleton& skel = init.skeleton;
  const std::size_t lf = skel.index_of(meta.value("left_foot", std::string("LeftFoot")));
  const std::size_t rf = skel.index_of(meta.value("right_foot", std::string("RightFoot")));
  const models::LocomotionSequence seq = models::make_locomotion_sequence(init, lf, rf, segment);
  const data::TrajectorySpline spline = data::fit_spline(read_waypoints(o.spline), seq.spline.segment_length);

  models::GenerateOptions g;
  g.frame_rate = init.frame_rate;
  g.average_speed = o.speed;
  g.divergence_factor = o.divergence;
  g.frames = o.frames;
  if (g.frames == 0) {
    if (o.speed <= 0.0) throw ConfigError("--frames is required when --speed is 0");
    g.frames = static_cast<std::size_t>(std::llround(spline.length() / o.speed * g.frame_rate));
  }
  const data::MotionClip clip = models::generate_locomotion(pose, pace, skel, spline, seq, g);

  std::ostringstream traj;
  traj.precision(10);
  traj << "frame,root_x,root_y,root_z,ground_speed,distance\n";
  double distance = 0.0;
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    const auto& r = clip.root_positions[t];
    double v = 0.0;
    if (t > 0) {
      const auto& q = clip.root_positions[t - 1];
      const double step = std::hypot(r.x - q.x, r.z - q.z);
      distance += step;
      v = step * clip.frame_rate;
    }
    traj << t << ',' << r.x << ',' << r.y << ',' << r.z << ',' << v << ',' << distance << '\n';
  }
  data::save_clip(clip, o.common.out / "generated.qmc");
  if (o.bvh) data::save_bvh(clip, o.common.out / "generated.bvh");
  write_text(o.common.out / "trajectory.csv", traj.str());
  std::printf("generated %zu frames along a %.3f spline, root travelled %.3f\n", clip.frames(), spline.length(),
              distance);
}

}  // namespace

void add_predict(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<PredictOptions>();
  CLI::App* sub = app.add_subcommand("predict", "Predict future frames of sampled episodes");
  add_common(*sub, o->common);
  sub->add_option("--model", o->model, "Pose checkpoint")->required();
  sub->add_option("--data", o->data, "Clips to condition on")->required();
  sub->add_option("--conditioning", o->conditioning, "Conditioning frames")->capture_default_str();
  sub->add_option("--horizon-ms", o->horizon_ms, "Prediction horizon in milliseconds")->capture_default_str();
  sub->add_option("--episodes", o->episodes, "Number of sampled episodes")->capture_default_str();
  sub->add_flag("--bvh", o->bvh, "Also write BVH files");
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_predict(ctx, *sub, *o); }; });
}

void add_generate(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<GenerateOptions>();
  CLI::App* sub = app.add_subcommand("generate", "Generate locomotion along a ground-plane spline");
  add_common(*sub, o->common);
  sub->add_option("--pose", o->pose, "Locomotion pose checkpoint")->required();
  sub->add_option("--pace", o->pace, "Pace checkpoint")->required();
  sub->add_option("--spline", o->spline, "CSV of ground-plane waypoints x,z")->required();
  sub->add_option("--init", o->init, "Clip supplying the initial frames")->required();
  sub->add_option("--speed", o->speed, "Average speed")->capture_default_str();
  sub->add_option("--frames", o->frames, "Frames to generate (0: spline length / speed)")->capture_default_str();
  sub->add_option("--divergence", o->divergence, "Abort distance in units of skeleton reach")->capture_default_str();
  sub->add_flag("--bvh", o->bvh, "Also write generated.bvh");
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_generate(ctx, *sub, *o); }; });
}

}  // namespace qmotion::cli
