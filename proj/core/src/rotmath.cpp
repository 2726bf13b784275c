#include "qmotion/rotmath.hpp"

#include <algorithm>
#include <cctype>
#include <numbers>

#include "qmotion/error.hpp"

namespace qmotion::rot {

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr double kDegenerateNorm = 1e-12;

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 to_matrix(const Quat& q) {
  const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  return {{{ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy)},
           {2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx)},
           {2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz}}};
}

Quat axis_quat(int axis, double angle) {
  const double s = std::sin(0.5 * angle);
  Quat q{std::cos(0.5 * angle), 0.0, 0.0, 0.0};
  (axis == 0 ? q.x : axis == 1 ? q.y : q.z) = s;
  return q;
}

}  // namespace

Quat qmul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Vec3 rotate_vector(const Quat& q, const Vec3& v) {
  const double n = norm(q);
  if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
    throw InvalidRotationError("rotate_vector: quaternion norm " + std::to_string(n) +
                               " is not unit");
  }
  // v + 2w (u x v) + 2 u x (u x v), u = vector part
  const Vec3 u{q.x, q.y, q.z};
  const Vec3 t = 2.0 * cross(u, v);
  return v + q.w * t + cross(u, t);
}

Quat normalize(const Quat& q) {
  const double n = norm(q);
  if (!(n >= kDegenerateNorm)) {
    throw DegenerateQuaternionError("normalize: quaternion norm below 1e-12");
  }
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quat axis_angle(const Vec3& axis, double angle) {
  const double n = norm(axis);
  if (!(n >= kDegenerateNorm)) throw InputError("axis_angle: zero-length axis");
  const double s = std::sin(0.5 * angle) / n;
  return {std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s};
}

std::array<int, 3> axes_of(EulerOrder order) {
  switch (order) {
    case EulerOrder::kXYZ: return {0, 1, 2};
    case EulerOrder::kXZY: return {0, 2, 1};
    case EulerOrder::kYXZ: return {1, 0, 2};
    case EulerOrder::kYZX: return {1, 2, 0};
    case EulerOrder::kZXY: return {2, 0, 1};
    case EulerOrder::kZYX: return {2, 1, 0};
  }
  return {0, 1, 2};
}

std::string_view to_string(EulerOrder order) {
  switch (order) {
    case EulerOrder::kXYZ: return "xyz";
    case EulerOrder::kXZY: return "xzy";
    case EulerOrder::kYXZ: return "yxz";
    case EulerOrder::kYZX: return "yzx";
    case EulerOrder::kZXY: return "zxy";
    case EulerOrder::kZYX: return "zyx";
  }
  return "xyz";
}

EulerOrder parse_euler_order(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (EulerOrder order : kAllEulerOrders) {
    if (to_string(order) == lower) return order;
  }
  throw InputError("unsupported Euler order '" + std::string(text) +
                   "' (expected one of xyz, xzy, yxz, yzx, zxy, zyx)");
}

Quat euler_to_quat(const EulerAngles& e) {
  const auto ax = axes_of(e.order);
  return qmul(qmul(axis_quat(ax[0], e.a1), axis_quat(ax[1], e.a2)), axis_quat(ax[2], e.a3));
}

EulerConversion quat_to_euler(const Quat& q, EulerOrder order) {
  const Mat3 r = to_matrix(normalize(q));
  const auto [i, j, k] = axes_of(order);
  // +1 for cyclic orders (xyz, yzx, zxy), -1 otherwise.
  const double s = ((j - i + 3) % 3 == 1) ? 1.0 : -1.0;

  EulerConversion out;
  out.angles.order = order;
  const double cos_b = std::hypot(r[i][i], r[i][j]);
  out.angles.a2 = std::atan2(s * r[i][k], cos_b);
  if (cos_b < kGimbalLockTolerance) {
    out.singular = true;
    out.angles.a1 = std::atan2(s * r[k][j], r[j][j]);
    out.angles.a3 = 0.0;
  } else {
    out.angles.a1 = std::atan2(-s * r[j][k], r[k][k]);
    out.angles.a3 = std::atan2(-s * r[i][j], r[i][i]);
  }
  return out;
}

Quat expmap_to_quat(const ExpMap& e) {
  const double theta = e.angle();
  double scale;  // sin(θ/2) / θ
  double w;
  if (theta < kExpMapSeriesThreshold) {
    scale = 0.5 - theta * theta / 48.0;
    w = 1.0 - theta * theta / 8.0;
  } else {
    scale = std::sin(0.5 * theta) / theta;
    w = std::cos(0.5 * theta);
  }
  return {w, e.x * scale, e.y * scale, e.z * scale};
}

ExpMap quat_to_expmap(const Quat& q_in) {
  Quat q = normalize(q_in);
  if (q.w < 0.0) q = -q;
  const double vn = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  const double theta = 2.0 * std::atan2(vn, q.w);
  double scale;  // θ / sin(θ/2)
  if (theta < kExpMapSeriesThreshold) {
    scale = 2.0 + theta * theta / 12.0;
  } else {
    scale = theta / vn;
  }
  return {q.x * scale, q.y * scale, q.z * scale};
}

QuaternionSequence::QuaternionSequence(std::size_t frames, std::size_t joints, double frame_rate)
    : frames_(frames), joints_(joints), frame_rate_(frame_rate), data_(frames * joints) {}

void QuaternionSequence::push_frame(std::span<const Quat> frame) {
  if (frames_ == 0 && joints_ == 0) joints_ = frame.size();
  if (frame.size() != joints_) {
    throw ShapeError("push_frame: expected " + std::to_string(joints_) + " joints, got " +
                     std::to_string(frame.size()));
  }
  data_.insert(data_.end(), frame.begin(), frame.end());
  ++frames_;
}

QuaternionSequence fix_continuity(const QuaternionSequence& seq) {
  if (seq.frames() == 0) throw InputError("fix_continuity: empty sequence");
  QuaternionSequence out = seq;
  for (std::size_t t = 1; t < out.frames(); ++t) {
    for (std::size_t j = 0; j < out.joints(); ++j) {
      if (dot(out.at(t - 1, j), out.at(t, j)) < 0.0) out.at(t, j) = -out.at(t, j);
    }
  }
  return out;
}

double angle_distance_l1(double pred, double target) {
  return std::abs(std::remainder(pred - target, 2.0 * std::numbers::pi));
}

Quat slerp(const Quat& a, Quat b, double t) {
  double d = dot(a, b);
  if (d < 0.0) {
    b = -b;
    d = -d;
  }
  if (d > 0.9995) {
    return normalize({a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                      a.z + t * (b.z - a.z)});
  }
  const double theta = std::acos(std::min(d, 1.0));
  const double sa = std::sin((1.0 - t) * theta) / std::sin(theta);
  const double sb = std::sin(t * theta) / std::sin(theta);
  return {sa * a.w + sb * b.w, sa * a.x + sb * b.x, sa * a.y + sb * b.y, sa * a.z + sb * b.z};
}

}  // namespace qmotion::rot
