#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qmotion/kinematics.hpp"
#include "qmotion/models.hpp"
#include "qmotion/motiondata.hpp"
#include "qmotion/rotmath.hpp"
#include "qmotion/training.hpp"

namespace qmotion::eval {

/// Active-joint rotations of one frame.
using Frame = std::vector<rot::Quat>;

// ---------------------------------------------------------------------------
// Baselines

/// k copies of the last prefix frame. Throws InputError for an empty prefix.
std::vector<Frame> baseline_zero_velocity(const std::vector<Frame>& prefix, std::size_t k);

/// k copies of the per-joint quaternion average of the last `window` frames:
/// signs aligned to the last frame, arithmetic mean, normalized. Throws
/// InputError when the prefix is shorter than the window.
std::vector<Frame> baseline_running_average(const std::vector<Frame>& prefix, std::size_t window, std::size_t k);

// ---------------------------------------------------------------------------
// Angle errors

enum class AngleMetric {
  /// Per frame: Euclidean norm of the wrapped Euler angle differences.
  kEuclidean,
  /// Per frame: mean absolute wrapped difference.
  kMeanL1,
};

std::string to_string(AngleMetric m);
AngleMetric parse_angle_metric(const std::string& s);

struct AngleErrorOptions {
  AngleMetric metric = AngleMetric::kEuclidean;
  /// Skip the root joint's rotation.
  bool include_root = false;
  /// One order for every joint instead of each joint's authored order.
  std::optional<rot::EulerOrder> order;
};

/// Error of one predicted frame against the reference frame.
double frame_angle_error(const kin::Skeleton& skel, const Frame& pred, const Frame& ref,
                         const AngleErrorOptions& opts = {});

// ---------------------------------------------------------------------------
// Protocol

/// Predicts k frames for every chunk; chunk i covers frames
/// [start, start + n) of clips[chunk.clip] as conditioning. Returns
/// [chunk][k] active-joint frames.
using Predictor = std::function<std::vector<std::vector<Frame>>(
    const std::vector<data::MotionClip>& clips, const std::vector<data::Episode>& chunks, std::size_t n, std::size_t k)>;

Predictor zero_velocity_predictor();
Predictor running_average_predictor(std::size_t window);
/// Batched autoregressive prediction with a rotation model.
Predictor model_predictor(const models::PoseNetwork& net, std::size_t batch = 256);

struct EvalProtocol {
  /// Chunks per test clip: 4 in the standard protocol, 128 in the proposed one.
  std::size_t samples_per_sequence = 4;
  std::uint64_t seed = 1234567890;
  std::size_t conditioning = 50;
  std::vector<double> horizons_ms = {80, 160, 320, 400};
  double frame_rate = 25.0;
  AngleErrorOptions angles;
  /// Bootstrap resamples for the intervals; 0 disables them.
  std::size_t bootstrap_resamples = 1000;
  double ci_low_quantile = 0.25;
  double ci_high_quantile = 0.75;

  /// Throws ConfigError for empty, non-positive or duplicate horizons.
  void validate() const;
  /// round(ms * frame_rate / 1000) per horizon.
  std::vector<std::size_t> horizon_frames() const;
  std::size_t max_horizon() const;
  std::string descriptor() const;
};

/// Chunk starts: uniform over [0, len - n - max_horizon] inclusive, S per clip,
/// one rng stream over the clips in order. Clips that are too short are
/// listed in `skipped`.
struct ChunkPlan {
  std::vector<data::Episode> chunks;
  std::vector<std::size_t> skipped;
};

ChunkPlan plan_chunks(const std::vector<data::MotionClip>& clips, const EvalProtocol& protocol);

struct EvalRow {
  std::string action;
  double horizon_ms = 0.0;
  double mean_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_samples = 0;
  /// Per-chunk errors in chunk order.
  std::vector<double> samples;
};

struct EvalReport {
  std::string protocol;
  /// Actions in order of first appearance, horizons in protocol order.
  std::vector<EvalRow> rows;
  std::size_t skipped_clips = 0;
  std::vector<std::string> warnings;

  const EvalRow& row(const std::string& action, double horizon_ms) const;
  std::vector<std::string> actions() const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Evaluates `predictor` on chunks drawn per `protocol`. Clips must be at the
/// protocol frame rate (InputError otherwise); clips too short for
/// n + max horizon are skipped with a warning.
EvalReport run_protocol(const Predictor& predictor, const std::vector<data::MotionClip>& clips,
                        const EvalProtocol& protocol);

// ---------------------------------------------------------------------------
// Statistics

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap of the sample mean. Throws InputError for fewer than
/// two samples and ConfigError for bad quantiles or zero resamples.
Interval bootstrap_ci(const std::vector<double>& samples, std::size_t resamples = 1000, double q_low = 0.25,
                      double q_high = 0.75, std::uint64_t seed = 0);

/// Linear-interpolation quantile, q in [0, 1]. Throws InputError when empty.
double quantile(std::vector<double> values, double q);

/// Fraction of values strictly above the threshold.
double tail_mass(const std::vector<double>& values, double threshold);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::string to_csv() const;
};

/// `bins` equal bins over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi);

/// Largest |bone length - offset length| over frames and non-root joints.
double bone_length_deviation(const kin::Skeleton& skel, const std::vector<kin::JointPositions>& frames);

// ---------------------------------------------------------------------------
// Ablations

struct ConditioningRow {
  std::size_t n = 0;
  double error = 0.0;
};

/// Runs `train_and_eval(n)` (the short-horizon error of a model trained with
/// conditioning n) for each n.
std::vector<ConditioningRow> ablate_conditioning(const std::vector<std::size_t>& ns,
                                                 const std::function<double(std::size_t)>& train_and_eval);

/// First index from which every successive change is below `rel` times the
/// current value. Throws InputError for an empty curve.
std::size_t plateau_index(const std::vector<double>& errors, double rel = 0.05);

/// Autoregressive predictions of a model on episodes, as root-relative joint
/// positions. Frame 0 is the last conditioning frame (ground truth); frames
/// 1..k are predicted. Rotation models use FK; position models are returned
/// as predicted.
std::vector<std::vector<kin::JointPositions>> predicted_positions(const models::PoseNetwork& net,
                                                                  const train::PoseDataset& data,
                                                                  const std::vector<data::Episode>& episodes,
                                                                  std::size_t n, std::size_t k);

/// Matching ground truth for predicted_positions.
std::vector<std::vector<kin::JointPositions>> reference_positions(const train::PoseDataset& data,
                                                                  const std::vector<data::Episode>& episodes,
                                                                  std::size_t n, std::size_t k);

struct ParameterizationRun {
  models::Parameterization parameterization = models::Parameterization::kQuaternion;
  std::vector<train::EpochLog> log;
  double final_position = 0.0;
  double final_velocity = 0.0;
  /// Per-frame velocity errors over the evaluation episodes.
  std::vector<double> velocity_errors;
};

struct ComparisonConfig {
  std::vector<models::Parameterization> variants = {
      models::Parameterization::kQuaternion, models::Parameterization::kExpMap,
      models::Parameterization::kEulerXYZ, models::Parameterization::kEulerYZX};
  /// Network settings shared by all variants. Non-quaternion variants use
  /// absolute outputs.
  models::PoseNetworkConfig base;
  train::TrainConfig train;
  std::uint64_t model_seed = 0;
  std::size_t eval_episodes = 64;
};

/// Trains one model per parameterization under the same budget, all with the
/// positional loss through FK, and collects their curves and velocity errors.
std::vector<ParameterizationRun> compare_parameterizations(const std::vector<data::MotionClip>& train_clips,
                                                           const std::vector<data::MotionClip>& val_clips,
                                                           const ComparisonConfig& cfg);

struct RegressionVariant {
  std::string name;
  double position_loss = 0.0;
  double velocity_loss = 0.0;
  std::vector<double> velocity_errors;
  double bone_length_deviation = 0.0;
};

struct RegressionReport {
  /// "quaternion", "position" and "position+ik".
  std::vector<RegressionVariant> variants;
  const RegressionVariant& variant(const std::string& name) const;
};

/// Compares a rotation model, a position model and the position model's
/// outputs after IK reprojection on the same episodes.
RegressionReport compare_position_regression(const models::PoseNetwork& rotation_model,
                                             const models::PoseNetwork& position_model,
                                             const std::vector<data::MotionClip>& clips, std::size_t n,
                                             std::size_t k, std::size_t episodes, std::uint64_t seed,
                                             const kin::IkConfig& ik = {});

// ---------------------------------------------------------------------------
// Exponential-map text data

/// 32-joint topology of the common exponential-map benchmark export. Offsets
/// are zero: the skeleton carries rotations only.
kin::Skeleton expmap_benchmark_skeleton();

/// Rows of comma-separated values: root position (3) then one exponential
/// map (3) per joint of `skel`. Throws ParseError on malformed rows.
data::MotionClip parse_expmap_text(const std::string& text, const kin::Skeleton& skel, double frame_rate,
                                   const std::string& source = "<expmap>");
data::MotionClip load_expmap_text(const std::filesystem::path& path, const kin::Skeleton& skel, double frame_rate);

}  // namespace qmotion::eval
