#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "qmotion/autodiff.hpp"
#include "qmotion/kinematics.hpp"
#include "qmotion/models.hpp"
#include "qmotion/motiondata.hpp"
#include "qmotion/random.hpp"

namespace qmotion::train {

// ---------------------------------------------------------------------------
// Losses

/// Mean joint distance between FK(root, rotations) and `ref` ([F, J, 3]).
/// rotations: [F, A, 4] unit quaternions.
ad::Var loss_positional(const kin::Skeleton& skel, ad::Var root, ad::Var rotations, ad::Var ref);

/// Mean over rows and components of the wrapped L1 distance between the
/// Euler angles of `pred` ([F, A, 4]) and `ref` ([F, A, 3]); joint a uses
/// orders[a].
ad::Var loss_euler_l1(ad::Var pred, const ad::Tensor& ref, const std::vector<rot::EulerOrder>& orders);

/// Mean over rows of 1 - p.q for [..., 4] inputs.
ad::Var loss_quat_dot(ad::Var pred, ad::Var ref);

/// lambda * mean over quaternions of (|q|^2 - 1)^2 for [..., 4] raw outputs.
ad::Var penalty_unit_norm(ad::Var raw, double lambda);

/// Mean absolute error over all elements.
ad::Var loss_mae(ad::Var pred, ad::Var ref);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient norm limit; 0 disables clipping.
  double clip_norm = 0.1;
};

struct StepReport {
  double grad_norm = 0.0;
  double clipped_norm = 0.0;
};

/// Adam with global-norm clipping over every parameter of a set.
class Adam {
 public:
  Adam() = default;
  Adam(const ad::ParameterSet& params, AdamConfig cfg);

  /// Updates values from the gradient buffers. A non-finite gradient throws
  /// NumericalError and leaves the parameters unchanged.
  StepReport step(ad::ParameterSet& params, double lr);

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

  /// Moments as named tensors ("adam.m/<param>", "adam.v/<param>").
  std::vector<std::pair<std::string, ad::Tensor>> state(const ad::ParameterSet& params) const;
  void restore(const ad::ParameterSet& params, const std::vector<std::pair<std::string, ad::Tensor>>& tensors,
               std::size_t steps);

 private:
  AdamConfig cfg_;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
  std::size_t t_ = 0;
};

/// Global L2 norm of the gradient buffers.
double gradient_norm(const ad::ParameterSet& params);

// ---------------------------------------------------------------------------
// Configuration and schedules

enum class LossKind { kEulerL1, kQuatDot, kPositional };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_decay = 0.999;
  double sampling_decay = 0.995;
  double penalty_weight = 0.01;
  /// Conditioning length n and prediction length k.
  std::size_t conditioning = 25;
  std::size_t prediction = 10;
  LossKind loss = LossKind::kPositional;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  /// Episodes per epoch; 0 means the number of sequences.
  std::size_t samples_per_epoch = 0;
  /// False keeps p = 1 (teacher forcing).
  bool scheduled_sampling = true;
  std::size_t validation_episodes = 32;
  std::uint64_t seed = 0;
  AdamConfig adam;

  /// Throws ConfigError: decays in (0, 1), lambda in [0.001, 0.1], n, k > 0.
  void validate() const;
};

/// lr0 * lr_decay^epoch.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);
/// sampling_decay^epoch (1 without scheduled sampling).
double sampling_probability(const TrainConfig& cfg, std::size_t epoch);

// ---------------------------------------------------------------------------
// Pose data

/// One clip prepared for pose training.
struct PoseSequence {
  /// Network input features per frame.
  std::vector<std::vector<double>> features;
  /// Active-joint unit quaternions per frame, continuity-fixed.
  std::vector<std::vector<rot::Quat>> rotations;
  /// Joint positions relative to the root position (root rotation applied).
  std::vector<kin::JointPositions> positions;
  std::vector<std::array<double, models::kTranslationSize>> translations;
  std::vector<std::array<double, models::kControlSize>> controls;
  std::string action;

  std::size_t frames() const { return features.size(); }
};

struct PoseDataset {
  kin::Skeleton skeleton;
  models::Parameterization parameterization = models::Parameterization::kQuaternion;
  double frame_rate = 0.0;
  std::vector<PoseSequence> sequences;

  std::size_t size() const { return sequences.size(); }
};

/// Clips must share a skeleton (InputError otherwise).
PoseDataset make_pose_dataset(const std::vector<data::MotionClip>& clips, models::Parameterization p);
/// Locomotion sequences: root-local clips with translations and controls.
PoseDataset make_pose_dataset(const std::vector<models::LocomotionSequence>& seqs, models::Parameterization p);

// ---------------------------------------------------------------------------
// Rollouts

struct RolloutResult {
  ad::Var loss;
  /// Predicted frames n .. n + k - 1, each [B, pose_size].
  std::vector<ad::Var> poses;
  std::vector<ad::Var> translations;
};

/// Conditions on n frames and predicts k for each episode of the batch. For
/// each predicted frame after the first, every batch element independently
/// observes the ground truth with probability p or its own prediction.
/// Recurrent backbones keep the fed-back predictions differentiable;
/// convolutional ones detach them. Throws InputError when an episode is
/// shorter than n + k (or a conv window does not fit).
RolloutResult scheduled_sampling_rollout(const models::PoseNetwork& net, const ad::Binding& b, const PoseDataset& data,
                                         const std::vector<data::Episode>& episodes, const TrainConfig& cfg, double p,
                                         Rng& rng);

/// Autoregressive prediction of k frames from the first n frames of an
/// episode without gradients. Returns [k][pose_size] features per episode.
std::vector<std::vector<std::vector<double>>> predict_episodes(const models::PoseNetwork& net, const PoseDataset& data,
                                                               const std::vector<data::Episode>& episodes,
                                                               std::size_t n, std::size_t k);

// ---------------------------------------------------------------------------
// Training loops

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double p = 0.0;
  double train_loss = 0.0;
  double val_position_loss = 0.0;
  double val_velocity_loss = 0.0;
  double wall_time = 0.0;
  /// Largest post-clip global gradient norm of the epoch.
  double max_clipped_norm = 0.0;

  /// Equality ignoring wall time.
  bool same_values(const EpochLog& o) const;
};

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);
std::vector<EpochLog> read_training_log(const std::filesystem::path& path);

/// Position and velocity losses (mean joint distance of frames and of
/// frame differences) of autoregressive k-frame predictions.
struct ValidationLoss {
  double position = 0.0;
  double velocity = 0.0;
};

ValidationLoss validation_loss(const models::PoseNetwork& net, const PoseDataset& data,
                               const std::vector<data::Episode>& episodes, std::size_t n, std::size_t k);

/// Epoch-by-epoch pose training with resumable state.
class PoseTrainer {
 public:
  PoseTrainer(models::PoseNetwork& net, const PoseDataset& train, const PoseDataset* validation, TrainConfig cfg);

  /// Runs one epoch and returns its log row.
  EpochLog run_epoch();
  /// Runs until cfg.epochs epochs are done or `stop` returns true.
  const std::vector<EpochLog>& run(const std::function<bool(const EpochLog&)>& stop = {});

  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochLog>& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }

  /// Network parameters plus optimizer and sampler state.
  models::Checkpoint checkpoint() const;
  /// Restores a checkpoint written by checkpoint(); the config must match.
  void resume(const models::Checkpoint& ckpt);

 private:
  models::PoseNetwork* net_;
  const PoseDataset* train_;
  const PoseDataset* val_;
  TrainConfig cfg_;
  Adam adam_;
  data::EpisodeSampler sampler_;
  std::vector<data::Episode> val_episodes_;
  std::size_t epoch_ = 0;
  std::vector<EpochLog> log_;
};

// ---------------------------------------------------------------------------
// Pace training

struct PaceSample {
  std::vector<std::array<double, models::kPaceInputs>> inputs;
  std::vector<std::array<double, models::kPaceOutputs>> targets;
};

PaceSample make_pace_sample(const models::LocomotionSequence& seq);

/// MAE of normalized facing, frequency and speed for one sample.
ad::Var pace_loss(const models::PaceNetwork& net, const ad::Binding& b, const PaceSample& sample);

struct PaceTrainConfig {
  double lr0 = 1e-2;
  double lr_decay = 0.999;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  AdamConfig adam;
};

/// One optimizer step per sample, in a shuffled order each epoch. Returns the
/// mean training loss per epoch. Throws InputError for an empty dataset.
std::vector<double> train_pace(models::PaceNetwork& net, const std::vector<PaceSample>& samples,
                               const PaceTrainConfig& cfg);

}  // namespace qmotion::train
