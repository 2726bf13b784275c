#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "qmotion/kinematics.hpp"
#include "qmotion/random.hpp"
#include "qmotion/rotmath.hpp"

namespace qmotion::data {

using rot::Quat;
using rot::Vec3;

/// Coordinate frame of all clips: y is up, the ground plane is (x, z) and a
/// character with identity root rotation faces +z.
inline constexpr Vec3 kUp{0.0, 1.0, 0.0};
inline constexpr Vec3 kForward{0.0, 0.0, 1.0};

struct MotionClip {
  kin::Skeleton skeleton;
  double frame_rate = 0.0;
  std::vector<Vec3> root_positions;
  /// One rotation per joint and frame (frozen joints included).
  rot::QuaternionSequence rotations;
  std::string subject;
  std::string action;

  std::size_t frames() const { return root_positions.size(); }
  /// Throws ShapeError when fields disagree on frame or joint counts.
  void validate() const;
  kin::Pose pose(std::size_t t) const;
  std::vector<kin::JointPositions> joint_positions() const;
};

// ---------------------------------------------------------------------------
// File formats

/// Parses BVH text. `source` names the input in error messages.
MotionClip parse_bvh(const std::string& text, const std::string& source = "<bvh>");
MotionClip load_bvh(const std::filesystem::path& path);
std::string format_bvh(const MotionClip& clip);
void save_bvh(const MotionClip& clip, const std::filesystem::path& path);

/// Skeleton <-> JSON text (schema in docs/formats.md).
std::string skeleton_to_json(const kin::Skeleton& skel);
kin::Skeleton skeleton_from_json(const std::string& text);

/// Binary clip container (.qmc): magic "QMCLIP01", u32 version, u32 header
/// length, JSON header, then little-endian float32 root positions [T,3] and
/// rotations [T,J,4]. Rotations are re-normalized and continuity-fixed on load.
void save_clip(const MotionClip& clip, const std::filesystem::path& path);
MotionClip load_clip(const std::filesystem::path& path);

/// A dataset is a directory of .qmc files read in file-name order.
void save_dataset(const std::vector<MotionClip>& clips, const std::filesystem::path& dir);
/// Throws InputError "no clips found" for an empty or missing directory.
std::vector<MotionClip> load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Preprocessing and augmentation

/// `factor` clips; phase i keeps frames i, i + factor, ...
std::vector<MotionClip> downsample_all_phases(const MotionClip& clip, std::size_t factor);

/// Left/right joint name pairs; unlisted joints map to themselves.
using SwapMap = std::vector<std::pair<std::string, std::string>>;

/// Reflection across the x = 0 plane: paired joints exchange rotations,
/// quaternions map (w,x,y,z) -> (w,x,-y,-z), root x is negated and offsets
/// are reflected. Throws InputError when the map names unknown joints, names
/// a joint twice, or does not preserve the tree structure.
MotionClip mirror(const MotionClip& clip, const SwapMap& swap);

/// Parses "LeftArm:RightArm,LeftLeg:RightLeg".
SwapMap parse_swap_map(const std::string& text);

/// Rotates the whole clip by `angle` about the vertical axis through the origin.
MotionClip rotate_about_vertical(const MotionClip& clip, double angle);
/// rotate_about_vertical with an angle drawn uniformly from [0, 2π).
MotionClip random_rotate(const MotionClip& clip, Rng& rng);

/// Freezes every active joint whose rotation stays within `tol` radians
/// (geodesic angle) of its mean over all frames of all clips. The frozen
/// rotation is the first-frame value.
kin::Skeleton prune_constant_joints(const kin::Skeleton& skel, const std::vector<MotionClip>& clips,
                                    double tol);

/// Geodesic angle between two rotations, in [0, π].
double rotation_angle_between(const Quat& a, const Quat& b);

// ---------------------------------------------------------------------------
// Trajectory and gait features

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Ground-plane coordinates (x, z) of a world point.
inline Vec2 ground(const Vec3& p) { return {p.x, p.z}; }

struct TrajectorySpline {
  double segment_length = 0.0;
  /// S + 1 vertices on the ground plane.
  std::vector<Vec2> points;
  /// Signed turning angle per unit length, one per segment; the first
  /// segment copies the second.
  std::vector<double> curvature;
  /// Unit direction of each segment.
  std::vector<Vec2> tangents;

  std::size_t segments() const { return curvature.size(); }
  double length() const { return segment_length * static_cast<double>(segments()); }
  /// Point at arc length s (clamped to the spline).
  Vec2 point_at(double s) const;
  std::size_t segment_at(double s) const;
};

/// Resamples a ground-plane polyline into segments of exactly length L whose
/// vertices lie on the polyline. Throws InputError for fewer than 2 points or
/// a path shorter than L.
TrajectorySpline fit_spline(const std::vector<Vec2>& points, double segment_length);

struct GaitFeatures {
  double frame_rate = 0.0;
  std::vector<Vec2> facing;
  std::vector<double> frequency;
  std::vector<double> speed;
  std::vector<double> phase;
  std::vector<double> root_height;
  std::vector<double> offset;
  std::vector<std::size_t> left_contacts;
  std::vector<std::size_t> right_contacts;
  /// Fewer than two contacts were found; phase is constant and frequency 0.
  bool degenerate = false;

  std::size_t frames() const { return speed.size(); }
  /// A [cos θ, sin θ] with A the local speed.
  Vec2 gait_signal(std::size_t t) const;
};

struct GaitOptions {
  /// Contact when foot speed < contact_ratio * mean root ground speed per frame.
  double contact_ratio = 0.05;
  double contact_floor = 1e-4;
  /// Low-pass box filter width at 30 Hz; scaled with the frame rate and kept odd.
  std::size_t filter_width_30hz = 31;
};

GaitFeatures extract_gait_features(const MotionClip& clip, std::size_t left_foot, std::size_t right_foot,
                                   const GaitOptions& opts = {});

/// Centered moving average, truncated at the ends; `width` is forced odd.
std::vector<double> box_filter(const std::vector<double>& x, std::size_t width);

/// Facing direction of a root rotation projected to the ground plane.
Vec2 facing_of(const Quat& root_rotation);

// ---------------------------------------------------------------------------
// Synthetic gait

struct SynthParams {
  /// 7 (pelvis and legs), 8 (+ spine) or 12 (+ arms).
  std::size_t joints = 12;
  /// Gait cycles per second (one left and one right contact per cycle).
  double stride_frequency = 1.0;
  /// Forward root speed, units per second.
  double speed = 1.2;
  double duration = 10.0;
  double frame_rate = 30.0;
  /// Heading change rate in rad/s. Stance feet stay planted on curved
  /// paths; fast turns give root rotations that wrap around.
  double turn_rate = 0.0;
  /// Amplitude of the forward speed oscillation at twice the stride frequency,
  /// as a fraction of the step length.
  double surge = 0.05;
  std::uint64_t seed = 0;
};

struct SynthTruth {
  std::vector<double> left_contact_times;
  std::vector<double> right_contact_times;
  double stride_frequency = 0.0;
  double speed = 0.0;
};

struct SynthClip {
  MotionClip clip;
  SynthTruth truth;
  std::size_t left_foot = 0;
  std::size_t right_foot = 0;
};

/// Skeleton used by synth_gait (7, 8 or 12 joints). Throws ConfigError otherwise.
kin::Skeleton synth_skeleton(std::size_t joints);
/// Left/right pairs of the synthetic skeleton.
SwapMap synth_swap_map(std::size_t joints);

/// Walking clip whose stance foot is exactly stationary: legs are straight
/// in stance (inverted pendulum), the swing leg flexes the knee, arms swing
/// in counter-phase. Deterministic in all parameters including the seed.
SynthClip synth_gait(const SynthParams& params);

struct CorpusParams {
  std::size_t clips = 16;
  std::size_t joints = 12;
  double duration = 8.0;
  double frame_rate = 30.0;
  double min_speed = 0.6;
  double max_speed = 1.8;
  double max_turn_rate = 0.3;
  std::uint64_t seed = 0;
};

/// Clips with speeds, cadences and turn rates drawn from `seed`.
std::vector<SynthClip> synth_corpus(const CorpusParams& params);

// ---------------------------------------------------------------------------
// Episode sampling

struct Episode {
  std::size_t clip = 0;
  std::size_t start = 0;
};

/// Draws fixed-length windows uniformly over every valid start in every clip.
class EpisodeSampler {
 public:
  /// Throws InputError when no clip is long enough.
  EpisodeSampler(const std::vector<std::size_t>& clip_lengths, std::size_t length, std::uint64_t seed);
  Episode sample();
  std::size_t valid_starts() const { return total_; }
  std::size_t length() const { return length_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  std::vector<std::size_t> cumulative_;
  std::size_t length_;
  std::size_t total_ = 0;
  Rng rng_;
};

}  // namespace qmotion::data
