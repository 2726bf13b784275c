#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmotion/autodiff.hpp"
#include "qmotion/rotmath.hpp"

namespace qmotion::kin {

using rot::Quat;
using rot::Vec3;

struct Joint {
  std::string name;
  int parent = -1;
  Vec3 offset;
  /// Rotation used by FK when the joint is not active.
  std::optional<Quat> constant_rotation;
  bool dof_active = true;
  /// Channel order the joint was authored with (BVH import/export, Euler losses).
  rot::EulerOrder euler_order = rot::EulerOrder::kZYX;
  /// Channel-less BVH leaf ("End Site").
  bool end_site = false;
};

/// Kinematic tree with constant bone offsets. Joint 0 is the root; parents
/// precede children. The root offset is ignored by FK: the root sits at the
/// pose's root position.
class Skeleton {
 public:
  Skeleton() = default;
  /// Throws InputError when the tree is not topologically sorted or has
  /// anything other than exactly one root.
  explicit Skeleton(std::vector<Joint> joints);

  std::size_t size() const { return joints_.size(); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(std::size_t j) const { return joints_[j]; }
  int parent(std::size_t j) const { return joints_[j].parent; }
  /// Index of a joint by name; throws InputError when absent.
  std::size_t index_of(const std::string& name) const;

  std::size_t active_count() const { return active_.size(); }
  /// Joint indices of active joints, in joint order.
  const std::vector<std::size_t>& active_joints() const { return active_; }
  /// Position of joint j within active_joints(), or -1.
  int active_slot(std::size_t j) const { return slot_[j]; }

  /// Marks a joint inactive with a fixed rotation, or active again.
  void freeze(std::size_t j, const Quat& rotation);
  void unfreeze(std::size_t j);

  /// Longest root-to-joint path length; bounds every FK distance from the root.
  double reach() const;
  bool has_children(std::size_t j) const;

  friend bool operator==(const Skeleton& a, const Skeleton& b);

 private:
  void rebuild_index();

  std::vector<Joint> joints_;
  std::vector<std::size_t> active_;
  std::vector<int> slot_;
};

/// Root position plus one rotation per active joint (local frame, unit).
struct Pose {
  Vec3 root_position;
  std::vector<Quat> rotations;
};

using JointPositions = std::vector<Vec3>;

/// Extracts the active-joint rotations from a full per-joint rotation array.
Pose make_pose(const Skeleton& skel, const Vec3& root, std::span<const Quat> all_rotations);

/// Local rotation of every joint (active ones from the pose, frozen ones from
/// the skeleton).
std::vector<Quat> local_rotations(const Skeleton& skel, const Pose& pose);

struct FkResult {
  JointPositions positions;
  std::vector<Quat> world_rotations;
};

/// World positions and rotations. Throws ShapeError when the pose does not
/// match the skeleton and InvalidRotationError for non-unit rotations.
FkResult forward_kinematics_full(const Skeleton& skel, const Pose& pose);
JointPositions forward_kinematics(const Skeleton& skel, const Pose& pose);

/// Differentiable FK over a batch of F frames.
///   root: [F, 3]; rotations: [F, A, 4] (A = active joints) -> [F, J, 3].
/// Rotations are used as given (callers normalize).
ad::Var forward_kinematics(const Skeleton& skel, ad::Var root, ad::Var rotations);

/// Mean Euclidean distance over frames and joints. Throws ShapeError on
/// mismatched shapes or empty input.
double position_error(std::span<const JointPositions> pred, std::span<const JointPositions> ref);
/// position_error of frame-to-frame differences; needs >= 2 frames.
double velocity_error(std::span<const JointPositions> pred, std::span<const JointPositions> ref);

/// Per-frame velocity errors: mean over joints of |Δpred - Δref| for each of
/// the T-1 difference frames.
std::vector<double> velocity_errors(std::span<const JointPositions> pred,
                                    std::span<const JointPositions> ref);

/// Differentiable mean joint distance between [..., 3] tensors.
ad::Var mean_distance(ad::Var pred, ad::Var ref);

struct IkConfig {
  double step = 1e-2;
  double tol = 1e-8;
  std::size_t patience = 20;
  /// Step limit of each descent.
  std::size_t max_steps = 5000;
  /// The step size is halved on each plateau until it falls below
  /// step * min_step_ratio; the solver then stops.
  double min_step_ratio = 1e-3;
  /// Extra descents, each starting from the best pose so far with the step
  /// multiplied by restart_step_growth, tried while the error stays above
  /// restart_threshold * max(reach, 1).
  std::size_t restarts = 4;
  double restart_threshold = 1e-4;
  double restart_step_growth = 3.0;
};

struct IkResult {
  Pose pose;
  double error = 0.0;
  std::size_t iterations = 0;
};

/// Fits active-joint rotations so FK(pose) approaches `target`, with Adam
/// steps on the mean squared joint distance each followed by quaternion
/// normalization. `error` is the mean joint distance of the returned pose.
/// The root position is taken from `init`. Throws InputError for non-finite
/// targets and ShapeError for mismatched shapes.
IkResult ik_reproject(const Skeleton& skel, const JointPositions& target, const Pose& init,
                      const IkConfig& cfg = {});

/// Frame-by-frame IK with the root placed at each target's joint 0. Each frame
/// starts from the previous solution; restarts apply to the first frame only.
std::vector<Pose> ik_reproject_sequence(const Skeleton& skel, std::span<const JointPositions> targets,
                                        const Pose& init, const IkConfig& cfg = {});

}  // namespace qmotion::kin
