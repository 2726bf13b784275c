#include <cstdio>
#include <memory>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "qmotion/error.hpp"
#include "qmotion/models.hpp"
#include "qmotion/training.hpp"

namespace qmotion::cli {

using nlohmann::json;

namespace {

struct FeetOptions {
  std::string left_foot = "LeftFoot";
  std::string right_foot = "RightFoot";
  /// Spline segment length; 0 derives it from the clips' strides.
  double segment = 0.0;
};

void add_feet(CLI::App& sub, FeetOptions& f) {
  sub.add_option("--left-foot", f.left_foot, "Left foot joint name")->capture_default_str();
  sub.add_option("--right-foot", f.right_foot, "Right foot joint name")->capture_default_str();
  sub.add_option("--segment", f.segment, "Spline segment length; 0 uses a quarter of the mean stride")
      ->capture_default_str();
}

/// Locomotion views of every clip with one shared segment length.
std::vector<models::LocomotionSequence> locomotion_sequences(const std::vector<data::MotionClip>& clips,
                                                             const FeetOptions& f, double& segment) {
  const kin::Skeleton& skel = clips.at(0).skeleton;
  const std::size_t lf = skel.index_of(f.left_foot), rf = skel.index_of(f.right_foot);
  if (segment <= 0.0) {
    double sum = 0.0;
    for (const auto& c : clips) sum += models::default_segment_length(data::extract_gait_features(c, lf, rf));
    segment = sum / static_cast<double>(clips.size());
  }
  std::vector<models::LocomotionSequence> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(models::make_locomotion_sequence(c, lf, rf, segment));
  return out;
}

std::string csv_losses(const std::vector<double>& losses) {
  std::ostringstream s;
  s.precision(17);
  s << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) s << e << ',' << losses[e] << '\n';
  return s.str();
}

struct TrainPoseOptions {
  CommonOptions common;
  fs::path data;
  fs::path val;
  fs::path resume;
  std::string preset = "desk";
  std::string backbone = "recurrent";
  std::string mode = "velocity";
  std::string parameterization = "quaternion";
  std::string loss = "positional";
  std::size_t hidden = 0;
  std::size_t layers = 0;
  std::size_t channels = 0;
  std::size_t conv_layers = 0;
  train::TrainConfig train;
  bool teacher_forcing = false;
  std::size_t stop_after = 0;
  bool locomotion = false;
  FeetOptions feet;
};

models::PoseNetworkConfig network_config(const TrainPoseOptions& o, const kin::Skeleton& skel) {
  models::PoseNetworkConfig c;
  if (o.preset == "desk") {
    c = models::PoseNetworkConfig::desk(skel.active_count());
  } else if (o.preset == "full") {
    c = models::PoseNetworkConfig::full(skel.active_count());
  } else {
    throw ConfigError("unknown preset '" + o.preset + "'");
  }
  c.backbone = models::parse_backbone(o.backbone);
  c.mode = models::parse_output_mode(o.mode);
  c.parameterization = models::parse_parameterization(o.parameterization);
  if (c.parameterization == models::Parameterization::kPosition) c.position_joints = skel.size();
  if (o.hidden > 0) c.hidden = o.hidden;
  if (o.layers > 0) c.layers = o.layers;
  if (o.channels > 0) c.channels = o.channels;
  if (o.conv_layers > 0) c.conv_layers = o.conv_layers;
  c.include_controls = c.include_translations = o.locomotion;
  c.validate();
  return c;
}

train::PoseDataset prepare(const std::vector<data::MotionClip>& clips, const TrainPoseOptions& o,
                           models::Parameterization p, double& segment) {
  require_uniform(clips);
  if (!o.locomotion) return train::make_pose_dataset(clips, p);
  return train::make_pose_dataset(locomotion_sequences(clips, o.feet, segment), p);
}

void run_train_pose(const Context& ctx, const CLI::App& sub, TrainPoseOptions o) {
  require_exists(o.data, "dataset");
  if (!o.val.empty()) require_exists(o.val, "validation dataset");
  if (!o.resume.empty()) require_exists(o.resume, "checkpoint");
  o.train.seed = o.common.seed;
  o.train.loss = train::parse_loss_kind(o.loss);
  o.train.scheduled_sampling = !o.teacher_forcing;
  o.train.validate();

  std::optional<models::Checkpoint> resume;
  json resume_meta;
  if (!o.resume.empty()) {
    resume = models::load_checkpoint(o.resume);
    resume_meta = json::parse(resume->meta_json);
    o.locomotion = resume_meta.value("locomotion", false);
    o.feet.segment = resume_meta.value("segment_length", 0.0);
  }
  begin_run(ctx, sub, o.common);

  const std::vector<data::MotionClip> clips = load_clips(o.data);
  double segment = o.feet.segment;
  models::PoseNetworkConfig net_cfg = network_config(o, clips.at(0).skeleton);
  const train::PoseDataset train_data = prepare(clips, o, net_cfg.parameterization, segment);
  std::optional<train::PoseDataset> val_data;
  if (!o.val.empty()) {
    const std::vector<data::MotionClip> val_clips = load_clips(o.val);
    if (!(val_clips.at(0).skeleton == clips[0].skeleton)) throw InputError("validation clips use a different skeleton");
    val_data = prepare(val_clips, o, net_cfg.parameterization, segment);
  }

  const std::string skeleton_json = data::skeleton_to_json(train_data.skeleton);
  models::PoseNetwork net;
  if (resume) {
    if (resume_meta.value("skeleton", std::string()) != skeleton_json) {
      throw InputError("skeleton mismatch between checkpoint '" + o.resume.string() + "' and the dataset");
    }
    net = models::pose_network_from(*resume);
  } else {
    net = models::PoseNetwork(net_cfg, o.common.seed);
  }

  train::PoseTrainer trainer(net, train_data, val_data ? &*val_data : nullptr, o.train);
  if (resume) trainer.resume(*resume);

  auto save = [&] {
    models::Checkpoint ck = trainer.checkpoint();
    json meta = json::parse(ck.meta_json);
    meta["skeleton"] = skeleton_json;
    meta["frame_rate"] = train_data.frame_rate;
    meta["locomotion"] = o.locomotion;
    meta["left_foot"] = o.feet.left_foot;
    meta["right_foot"] = o.feet.right_foot;
    meta["segment_length"] = segment;
    ck.meta_json = meta.dump();
    models::save_checkpoint(ck, o.common.out / "pose.qmk");
    train::write_training_log(trainer.log(), o.common.out / "training_log.csv");
  };

  std::size_t ran = 0;
  if (trainer.epoch() >= o.train.epochs) save();
  trainer.run([&](const train::EpochLog& row) {
    ++ran;
    save();
    std::printf("epoch %zu  lr %.6g  p %.4f  train %.6f  val pos %.6f  vel %.6f\n", row.epoch, row.lr, row.p,
                row.train_loss, row.val_position_loss, row.val_velocity_loss);
    std::fflush(stdout);
    return o.stop_after > 0 && ran >= o.stop_after;
  });
}

struct TrainPaceOptions {
  CommonOptions common;
  fs::path data;
  FeetOptions feet;
  models::PaceNetworkConfig net;
  std::string variant = "bidirectional";
  train::PaceTrainConfig train;
};

void run_train_pace(const Context& ctx, const CLI::App& sub, TrainPaceOptions o) {
  require_exists(o.data, "dataset");
  o.net.variant = models::parse_pace_variant(o.variant);
  o.net.validate();
  o.train.seed = o.common.seed;
  begin_run(ctx, sub, o.common);

  const std::vector<data::MotionClip> clips = load_clips(o.data);
  require_uniform(clips);
  double segment = o.feet.segment;
  std::vector<train::PaceSample> samples;
  for (const auto& seq : locomotion_sequences(clips, o.feet, segment)) samples.push_back(train::make_pace_sample(seq));

  models::PaceNetwork net(o.net, o.common.seed);
  const std::vector<double> losses = train::train_pace(net, samples, o.train);
  json meta{{"segment_length", segment}, {"epochs", o.train.epochs}, {"final_loss", losses.empty() ? 0.0 : losses.back()}};
  models::save_checkpoint(models::make_checkpoint(net, meta.dump()), o.common.out / "pace.qmk");
  write_text(o.common.out / "pace_log.csv", csv_losses(losses));
  std::printf("pace training: %zu samples, final loss %.6f\n", samples.size(), losses.empty() ? 0.0 : losses.back());
}

}  // namespace

void add_train_pose(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<TrainPoseOptions>();
  CLI::App* sub = app.add_subcommand("train-pose", "Train a pose network");
  add_common(*sub, o->common);
  sub->add_option("--data", o->data, "Training dataset (directory or clip file)")->required();
  sub->add_option("--val", o->val, "Validation dataset");
  sub->add_option("--resume", o->resume, "Continue from a checkpoint written by this command");
  sub->add_option("--preset", o->preset, "Network size")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  sub->add_option("--backbone", o->backbone, "recurrent | convolutional")->capture_default_str();
  sub->add_option("--mode", o->mode, "velocity | absolute")->capture_default_str();
  sub->add_option("--parameterization", o->parameterization, "quaternion | expmap | euler_xyz | euler_yzx | position")
      ->capture_default_str();
  sub->add_option("--loss", o->loss, "positional | euler_l1 | quat_dot")->capture_default_str();
  sub->add_option("--hidden", o->hidden, "GRU width (0: preset)")->capture_default_str();
  sub->add_option("--layers", o->layers, "GRU layers (0: preset)")->capture_default_str();
  sub->add_option("--channels", o->channels, "Convolution channels (0: preset)")->capture_default_str();
  sub->add_option("--conv-layers", o->conv_layers, "Convolution layers (0: preset)")->capture_default_str();
  sub->add_option("--lr", o->train.lr0, "Initial learning rate")->capture_default_str();
  sub->add_option("--epochs", o->train.epochs, "Total epochs")->capture_default_str();
  sub->add_option("--batch", o->train.batch_size, "Episodes per batch")->capture_default_str();
  sub->add_option("--samples-per-epoch", o->train.samples_per_epoch, "Episodes per epoch (0: number of sequences)")
      ->capture_default_str();
  sub->add_option("--conditioning", o->train.conditioning, "Conditioning frames n")->capture_default_str();
  sub->add_option("--prediction", o->train.prediction, "Predicted frames k")->capture_default_str();
  sub->add_option("--penalty", o->train.penalty_weight, "Unit-norm penalty weight")->capture_default_str();
  sub->add_option("--validation-episodes", o->train.validation_episodes, "Validation episodes")->capture_default_str();
  sub->add_flag("--teacher-forcing", o->teacher_forcing, "Disable scheduled sampling");
  sub->add_option("--stop-after", o->stop_after, "Stop after this many epochs in this invocation (0: run all)")
      ->capture_default_str();
  sub->add_flag("--locomotion", o->locomotion, "Train with spline controls and root translations");
  add_feet(*sub, o->feet);
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_train_pose(ctx, *sub, *o); }; });
}

void add_train_pace(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<TrainPaceOptions>();
  CLI::App* sub = app.add_subcommand("train-pace", "Train a pace network on locomotion clips");
  add_common(*sub, o->common);
  sub->add_option("--data", o->data, "Training dataset (directory or clip file)")->required();
  add_feet(*sub, o->feet);
  sub->add_option("--hidden", o->net.hidden, "GRU width")->capture_default_str();
  sub->add_option("--variant", o->variant, "bidirectional | online")->capture_default_str();
  sub->add_option("--delay", o->net.delay, "Look-ahead segments of the online variant")->capture_default_str();
  sub->add_option("--lr", o->train.lr0, "Initial learning rate")->capture_default_str();
  sub->add_option("--epochs", o->train.epochs, "Epochs")->capture_default_str();
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_train_pace(ctx, *sub, *o); }; });
}

}  // namespace qmotion::cli
