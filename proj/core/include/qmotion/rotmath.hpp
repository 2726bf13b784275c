#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qmotion::rot {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  friend Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }
  friend Vec3 operator*(const Vec3& v, double s) { return s * v; }
  friend Vec3 operator-(const Vec3& v) { return {-v.x, -v.y, -v.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

/// Quaternion w + xi + yj + zk, stored in (w, x, y, z) order.
///
/// The same type carries raw network outputs and unit rotations; the
/// functions that require a unit quaternion check the norm themselves.
/// `q` and `-q` encode the same rotation.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static constexpr Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

  friend Quat operator-(const Quat& q) { return {-q.w, -q.x, -q.y, -q.z}; }
  friend bool operator==(const Quat&, const Quat&) = default;
};

inline double dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}
inline double norm(const Quat& q) { return std::sqrt(dot(q, q)); }
inline Quat conjugate(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }

/// Hamilton product. With the composition convention used throughout,
/// `qmul(parent, local)` maps vectors expressed in the local frame into the
/// parent frame: rotate_vector(qmul(a, b), v) == rotate_vector(a, rotate_vector(b, v)).
Quat qmul(const Quat& a, const Quat& b);

/// Rotates v by q (the vector part of q v q*). Throws InvalidRotationError
/// when |‖q‖ - 1| > 1e-6.
Vec3 rotate_vector(const Quat& q, const Vec3& v);

/// q / ‖q‖. Throws DegenerateQuaternionError when ‖q‖ < 1e-12.
Quat normalize(const Quat& q);

/// Rotation of `angle` radians about `axis` (normalized internally).
Quat axis_angle(const Vec3& axis, double angle);

// ---------------------------------------------------------------------------
// Euler angles

/// Tait-Bryan orders. Angle a1 rotates about the first axis of the order,
/// and the rotation is the intrinsic composition
///   R = R_first(a1) * R_second(a2) * R_third(a3),
/// which is also how BVH channel lists are read.
enum class EulerOrder { kXYZ, kXZY, kYXZ, kYZX, kZXY, kZYX };

inline constexpr std::array<EulerOrder, 6> kAllEulerOrders = {
    EulerOrder::kXYZ, EulerOrder::kXZY, EulerOrder::kYXZ,
    EulerOrder::kYZX, EulerOrder::kZXY, EulerOrder::kZYX};

/// Axis indices (0 = x, 1 = y, 2 = z) in application order.
std::array<int, 3> axes_of(EulerOrder order);
std::string_view to_string(EulerOrder order);
/// Parses "xyz", "ZYX", ... Throws InputError for proper orders or junk.
EulerOrder parse_euler_order(std::string_view text);

struct EulerAngles {
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  EulerOrder order = EulerOrder::kXYZ;
};

/// Result of quat_to_euler. `singular` is set near gimbal lock
/// (|cos(a2)| < 1e-6); the angles are then one representative solution
/// with a3 = 0.
struct EulerConversion {
  EulerAngles angles;
  bool singular = false;
};

inline constexpr double kGimbalLockTolerance = 1e-6;

Quat euler_to_quat(const EulerAngles& e);
EulerConversion quat_to_euler(const Quat& q, EulerOrder order);

// ---------------------------------------------------------------------------
// Exponential map

/// Axis scaled by angle. The encoded angle is the vector length.
struct ExpMap {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double angle() const { return std::sqrt(x * x + y * y + z * z); }
};

/// Angles below this use series expansions instead of sin(θ/2)/θ.
inline constexpr double kExpMapSeriesThreshold = 1e-8;

Quat expmap_to_quat(const ExpMap& e);
/// Canonical result with angle in [0, π].
ExpMap quat_to_expmap(const Quat& q);

// ---------------------------------------------------------------------------
// Sequences and metrics

/// Frame-major table of per-joint quaternions.
class QuaternionSequence {
 public:
  QuaternionSequence() = default;
  QuaternionSequence(std::size_t frames, std::size_t joints, double frame_rate);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return joints_; }
  double frame_rate() const { return frame_rate_; }
  void set_frame_rate(double hz) { frame_rate_ = hz; }

  Quat& at(std::size_t frame, std::size_t joint) { return data_[frame * joints_ + joint]; }
  const Quat& at(std::size_t frame, std::size_t joint) const {
    return data_[frame * joints_ + joint];
  }

  std::span<Quat> frame(std::size_t t) { return {data_.data() + t * joints_, joints_}; }
  std::span<const Quat> frame(std::size_t t) const {
    return {data_.data() + t * joints_, joints_};
  }

  void push_frame(std::span<const Quat> frame);

  const std::vector<Quat>& data() const { return data_; }

 private:
  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  double frame_rate_ = 0.0;
  std::vector<Quat> data_;
};

/// Per joint, flips q_t whenever it points away from the (already fixed)
/// q_{t-1}, so consecutive quaternions have non-negative dot products.
/// Frame 0 is left untouched. Throws InputError on an empty sequence.
QuaternionSequence fix_continuity(const QuaternionSequence& seq);

/// min over k of |pred - target + 2πk|, in [0, π].
double angle_distance_l1(double pred, double target);

/// Shortest-arc spherical interpolation; falls back to normalized lerp when
/// the inputs are nearly parallel.
Quat slerp(const Quat& a, Quat b, double t);

}  // namespace qmotion::rot
