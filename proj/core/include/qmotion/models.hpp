#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmotion/autodiff.hpp"
#include "qmotion/kinematics.hpp"
#include "qmotion/motiondata.hpp"

namespace qmotion::models {

enum class Backbone { kRecurrent, kConvolutional };
enum class OutputMode { kAbsolute, kVelocity };

/// What the pose network reads and writes per joint. Everything except
/// kPosition is converted to quaternions before forward kinematics.
enum class Parameterization { kQuaternion, kExpMap, kEulerXYZ, kEulerYZX, kPosition };

std::string to_string(Backbone b);
std::string to_string(OutputMode m);
std::string to_string(Parameterization p);
Backbone parse_backbone(const std::string& s);
OutputMode parse_output_mode(const std::string& s);
Parameterization parse_parameterization(const std::string& s);

/// Scalars per joint: 4 (quaternion), 3 otherwise.
std::size_t joint_width(Parameterization p);

inline constexpr std::size_t kControlSize = 6;
inline constexpr std::size_t kTranslationSize = 2;

struct PoseNetworkConfig {
  /// Rotating joints (active joints of the skeleton). kPosition models use
  /// `position_joints` instead.
  std::size_t joints = 0;
  std::size_t position_joints = 0;
  OutputMode mode = OutputMode::kVelocity;
  Backbone backbone = Backbone::kRecurrent;
  Parameterization parameterization = Parameterization::kQuaternion;
  std::size_t hidden = 1000;
  std::size_t layers = 2;
  std::size_t channels = 1024;
  std::size_t conv_layers = 5;
  std::size_t filter_width = 2;
  bool include_controls = false;
  bool include_translations = false;
  std::size_t control_units = 30;
  double leaky_slope = 0.05;

  /// H = 64 / C = 64.
  static PoseNetworkConfig desk(std::size_t joints);
  /// H = 1000 / C = 1024.
  static PoseNetworkConfig full(std::size_t joints);

  /// Throws ConfigError for inconsistent settings.
  void validate() const;
  std::size_t pose_size() const;
  std::size_t input_size() const;
  std::size_t output_size() const;
  /// Dilation of convolution layer k (0-based): 2^k.
  std::size_t dilation(std::size_t k) const;
  /// 1 + (W - 1) * sum of dilations; 32 for the default.
  std::size_t receptive_field() const;

  friend bool operator==(const PoseNetworkConfig&, const PoseNetworkConfig&) = default;
};

std::string to_json(const PoseNetworkConfig& cfg);
PoseNetworkConfig pose_config_from_json(const std::string& text);

/// Closed-form parameter count.
///   GRU layer l with input I_l: 3H(I_l + H) + 6H weights/biases + H (learned h0)
///   head: H * O + O; control encoder: 6*30 + 30 + 30*30 + 30
///   conv layer with fan-in I and fan-out C: W*I*C + C
std::size_t expected_parameter_count(const PoseNetworkConfig& cfg);

/// One time step of network input, batched over rows.
struct StepInput {
  ad::Var pose;          // [B, pose_size]
  ad::Var translations;  // [B, 2] when enabled
  ad::Var controls;      // [B, 6] when enabled
};

struct StepOutput {
  /// Head output for the pose before normalization or QMul.
  ad::Var raw;
  /// Next pose in the network's parameterization (unit quaternions for
  /// quaternion models).
  ad::Var pose;
  ad::Var translations;
};

class PoseNetwork {
 public:
  PoseNetwork() = default;
  PoseNetwork(PoseNetworkConfig cfg, std::uint64_t seed);

  const PoseNetworkConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// Learned initial states, one [B, H] tensor per layer.
  std::vector<ad::Var> initial_state(const ad::Binding& b, std::size_t batch) const;
  /// Recurrent step; `state` is advanced in place.
  StepOutput step(const ad::Binding& b, std::vector<ad::Var>& state, const StepInput& in) const;

  /// Causal convolution over T >= receptive_field() frames. Output i predicts
  /// the frame after input frame receptive_field() - 1 + i.
  std::vector<StepOutput> convolve(const ad::Binding& b, const std::vector<StepInput>& frames) const;

  /// encode_controls: 6 -> 30 -> 30 with leaky ReLU after each layer.
  ad::Var encode_controls(const ad::Binding& b, ad::Var controls) const;

  /// Flattened [B, J, 4] unit quaternions of a pose tensor (converting from
  /// exp-map or Euler when needed). Invalid for kPosition.
  ad::Var to_quaternions(ad::Var pose) const;

 private:
  ad::Var features(const ad::Binding& b, const StepInput& in) const;
  void check_input(const StepInput& in, std::size_t batch) const;
  /// Splits head output into pose and translations relative to `prev`.
  StepOutput finish(ad::Var raw, const StepInput& prev) const;

  PoseNetworkConfig cfg_;
  ad::ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Pose features <-> rotations

/// Per-frame pose features for the given parameterization. `rotations`
/// holds the skeleton's active-joint rotations; kPosition uses root-relative
/// FK positions of all joints.
std::vector<double> pose_features(Parameterization p, const kin::Skeleton& skel, const kin::Pose& pose);

/// Inverse of pose_features for rotation parameterizations.
std::vector<rot::Quat> features_to_quats(Parameterization p, std::span<const double> features);

// ---------------------------------------------------------------------------
// Pace network

enum class PaceVariant { kBidirectional, kOnline };

std::string to_string(PaceVariant v);
PaceVariant parse_pace_variant(const std::string& s);

inline constexpr std::size_t kPaceInputs = 2;   // curvature, target average speed
inline constexpr std::size_t kPaceOutputs = 4;  // facing (2), frequency, speed

struct PaceNetworkConfig {
  std::size_t hidden = 30;
  PaceVariant variant = PaceVariant::kBidirectional;
  std::size_t delay = 4;

  void validate() const;
  friend bool operator==(const PaceNetworkConfig&, const PaceNetworkConfig&) = default;
};

std::string to_json(const PaceNetworkConfig& cfg);
PaceNetworkConfig pace_config_from_json(const std::string& text);

struct PaceOutputs {
  /// Facing direction relative to the segment tangent (unit).
  std::vector<data::Vec2> facing;
  std::vector<double> frequency;
  std::vector<double> speed;

  std::size_t segments() const { return speed.size(); }
};

class PaceNetwork {
 public:
  PaceNetwork() = default;
  PaceNetwork(PaceNetworkConfig cfg, std::uint64_t seed);

  const PaceNetworkConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// Per-segment inputs [B, 2] -> per-segment raw outputs [B, 4]. The
  /// online variant's output s sees inputs up to s + delay.
  std::vector<ad::Var> forward(const ad::Binding& b, const std::vector<ad::Var>& inputs) const;

  PaceOutputs predict(const data::TrajectorySpline& spline, double average_speed) const;

 private:
  /// Hidden state after each input, in input order.
  std::vector<ad::Var> run_direction(const ad::Binding& b, const std::vector<ad::Var>& inputs,
                                     const std::string& prefix, bool reverse) const;

  PaceNetworkConfig cfg_;
  ad::ParameterSet params_;
};

/// Pace inputs for a spline.
std::vector<std::array<double, kPaceInputs>> pace_inputs(const data::TrajectorySpline& spline, double average_speed);

// ---------------------------------------------------------------------------
// Locomotion features

/// Frame-level view of a clip relative to its fitted spline.
struct LocomotionSequence {
  data::TrajectorySpline spline;
  /// Clip with the root rotation expressed relative to the yaw of the
  /// spline tangent at each frame.
  data::MotionClip local;
  std::vector<std::array<double, kTranslationSize>> translations;  // root height, spline offset
  std::vector<std::array<double, kControlSize>> controls;
  /// Arc position of the root on the spline (before offset).
  std::vector<double> arc;
  data::GaitFeatures gait;
  double average_speed = 0.0;

  std::size_t frames() const { return local.frames(); }
};

/// Average stride length / 4.
double default_segment_length(const data::GaitFeatures& g);

/// Controls = [next-segment tangent in the current segment frame (2),
/// facing relative to the tangent (2), A cos θ, A sin θ].
LocomotionSequence make_locomotion_sequence(const data::MotionClip& clip, std::size_t left_foot,
                                            std::size_t right_foot, double segment_length = 0.0);

/// Per-segment pace targets (facing relative to tangent, frequency, speed),
/// averaged over the frames whose arc position falls in each segment.
/// Segments without frames copy their neighbor.
std::vector<std::array<double, kPaceOutputs>> pace_targets(const LocomotionSequence& seq);

/// Spline direction at arc length s, blended linearly in angle between the
/// tangents of neighboring segment midpoints.
data::Vec2 tangent_at(const data::TrajectorySpline& spline, double s);
/// Arc length of the spline point nearest to p, searching segments from
/// `hint` onward (within a short window).
double project_onto(const data::TrajectorySpline& spline, const data::Vec2& p, std::size_t& hint);

/// Yaw angle of a ground-plane direction (rotation about y taking +z to it).
double yaw_of(const data::Vec2& dir);
/// Coordinates of v in the frame of the unit vector `axis`:
/// (dot(axis, v), cross(axis, v)); `axis` itself maps to (1, 0).
data::Vec2 to_frame(const data::Vec2& v, const data::Vec2& axis);
data::Vec2 from_frame(const data::Vec2& v, const data::Vec2& axis);

struct GenerateOptions {
  std::size_t frames = 300;
  double frame_rate = 30.0;
  double average_speed = 1.0;
  /// Distance of any joint from the current ground point of the spline
  /// beyond which generation aborts, in units of skeleton reach.
  double divergence_factor = 10.0;
};

/// Closed-loop generation along a spline. `init` supplies the first
/// conditioning frames (its pose network inputs); generation starts from
/// its last frame.
data::MotionClip generate_locomotion(const PoseNetwork& pose, const PaceNetwork& pace, const kin::Skeleton& skel,
                                     const data::TrajectorySpline& spline, const LocomotionSequence& init,
                                     const GenerateOptions& opts);

// ---------------------------------------------------------------------------
// Checkpoints

/// "QMCKPT01", u32 version, u32 header length, JSON header (kind, config,
/// metadata, tensor names and shapes), then little-endian float64 tensors.
struct Checkpoint {
  std::string kind;         // "pose" or "pace"
  std::string config_json;  // network config
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, ad::Tensor>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const PoseNetwork& net, const std::string& meta_json = "{}");
Checkpoint make_checkpoint(const PaceNetwork& net, const std::string& meta_json = "{}");
/// Throws InputError when the checkpoint kind or tensors do not match.
PoseNetwork pose_network_from(const Checkpoint& ckpt);
PaceNetwork pace_network_from(const Checkpoint& ckpt);

}  // namespace qmotion::models
