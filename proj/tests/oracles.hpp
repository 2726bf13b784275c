#pragma once

// Independent reference implementations used only by tests. Everything here
// goes through 3x3 / 4x4 matrices so it shares no code path with the
// quaternion library under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "qmotion/rotmath.hpp"

namespace oracle {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;
using V3 = std::array<double, 3>;

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat4 matmul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline V3 apply(const Mat3& m, const V3& v) {
  V3 o{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) o[i] += m[i][k] * v[k];
  return o;
}

/// Rotation matrix of a unit quaternion, from the textbook formula.
inline Mat3 quat_matrix(double w, double x, double y, double z) {
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

inline Mat3 quat_matrix(const qmotion::rot::Quat& q) { return quat_matrix(q.w, q.x, q.y, q.z); }

/// Elementary rotation about axis 0/1/2.
inline Mat3 axis_matrix(int axis, double a) {
  const double c = std::cos(a), s = std::sin(a);
  switch (axis) {
    case 0: return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
    case 1: return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
    default: return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
  }
}

/// Rodrigues' formula R = I + sin θ K + (1 - cos θ) K².
inline Mat3 rodrigues(double ex, double ey, double ez) {
  const double th = std::sqrt(ex * ex + ey * ey + ez * ez);
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  if (th == 0.0) return r;
  const double kx = ex / th, ky = ey / th, kz = ez / th;
  const Mat3 k{{{0, -kz, ky}, {kz, 0, -kx}, {-ky, kx, 0}}};
  const Mat3 k2 = matmul(k, k);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] += std::sin(th) * k[i][j] + (1 - std::cos(th)) * k2[i][j];
  return r;
}

/// Shepperd's method; the sign is fixed so that w >= 0.
inline qmotion::rot::Quat matrix_quat(const Mat3& m) {
  const double tr = m[0][0] + m[1][1] + m[2][2];
  qmotion::rot::Quat q;
  if (tr > 0) {
    const double s = std::sqrt(tr + 1.0) * 2;
    q = {0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s};
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    const double s = std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2;
    q = {(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s};
  } else if (m[1][1] > m[2][2]) {
    const double s = std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2;
    q = {(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s};
  } else {
    const double s = std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2;
    q = {(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s};
  }
  if (q.w < 0) q = -q;
  return q;
}

/// Distance between rotations ignoring the antipodal sign.
inline double quat_distance(const qmotion::rot::Quat& a, const qmotion::rot::Quat& b) {
  const double plus = std::abs(a.w - b.w) + std::abs(a.x - b.x) + std::abs(a.y - b.y) + std::abs(a.z - b.z);
  const double minus = std::abs(a.w + b.w) + std::abs(a.x + b.x) + std::abs(a.y + b.y) + std::abs(a.z + b.z);
  return std::min(plus, minus);
}

inline Mat4 homogeneous(const Mat3& r, const V3& t) {
  Mat4 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = r[i][j];
    m[i][3] = t[i];
  }
  m[3][3] = 1;
  return m;
}

/// FK by chaining 4x4 transforms: world_j = world_parent * T(offset_j) * R(q_j).
/// `rotations` holds one matrix per joint (already resolved for pruned joints).
inline std::vector<V3> matrix_fk(const std::vector<int>& parents, const std::vector<V3>& offsets,
                                 const std::vector<Mat3>& rotations, const V3& root) {
  const std::size_t n = parents.size();
  std::vector<Mat4> world(n);
  std::vector<V3> pos(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Mat3 id{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    if (parents[j] < 0) {
      world[j] = matmul(homogeneous(id, root), homogeneous(rotations[j], {0, 0, 0}));
    } else {
      world[j] = matmul(matmul(world[parents[j]], homogeneous(id, offsets[j])),
                        homogeneous(rotations[j], {0, 0, 0}));
    }
    pos[j] = {world[j][0][3], world[j][1][3], world[j][2][3]};
  }
  return pos;
}

/// Brute-force min over k of |d + 2πk|.
inline double wrapped_l1(double pred, double target) {
  double best = 1e300;
  for (int k = -4; k <= 4; ++k) {
    best = std::min(best, std::abs(pred - target + 2.0 * std::numbers::pi * k));
  }
  return best;
}

/// Euler angles of the common exponential-map benchmark scripts, read off the
/// rotation matrix entries (non-degenerate branch only).
inline V3 benchmark_euler(const Mat3& r) {
  const double e2 = -std::asin(r[0][2]);
  const double c = std::cos(e2);
  return {std::atan2(r[1][2] / c, r[2][2] / c), e2, std::atan2(r[0][1] / c, r[0][0] / c)};
}

}  // namespace oracle
