#include "qmotion/motiondata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "qmotion/error.hpp"

namespace qmotion::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Quat reflect(const Quat& q) { return {q.w, q.x, -q.y, -q.z}; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double cross2(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
double dot2(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
Vec2 sub2(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
double norm2(const Vec2& a) { return std::hypot(a.x, a.y); }

}  // namespace

// ---------------------------------------------------------------------------
// MotionClip

void MotionClip::validate() const {
  if (rotations.frames() != root_positions.size()) {
    throw ShapeError("clip has " + std::to_string(root_positions.size()) + " root positions but " +
                     std::to_string(rotations.frames()) + " rotation frames");
  }
  if (rotations.joints() != skeleton.size()) {
    throw ShapeError("clip rotations cover " + std::to_string(rotations.joints()) + " joints, skeleton has " +
                     std::to_string(skeleton.size()));
  }
  if (!(frame_rate > 0.0)) throw InputError("clip frame rate must be positive");
}

kin::Pose MotionClip::pose(std::size_t t) const {
  return kin::make_pose(skeleton, root_positions.at(t), rotations.frame(t));
}

std::vector<kin::JointPositions> MotionClip::joint_positions() const {
  validate();
  std::vector<kin::JointPositions> out;
  out.reserve(frames());
  for (std::size_t t = 0; t < frames(); ++t) out.push_back(kin::forward_kinematics(skeleton, pose(t)));
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

std::vector<MotionClip> downsample_all_phases(const MotionClip& clip, std::size_t factor) {
  clip.validate();
  if (factor == 0) throw InputError("downsample factor must be at least 1");
  if (factor > clip.frames()) {
    throw InputError("downsample factor " + std::to_string(factor) + " exceeds frame count " +
                     std::to_string(clip.frames()));
  }
  std::vector<MotionClip> out;
  for (std::size_t phase = 0; phase < factor; ++phase) {
    MotionClip c;
    c.skeleton = clip.skeleton;
    c.frame_rate = clip.frame_rate / static_cast<double>(factor);
    c.subject = clip.subject;
    c.action = clip.action;
    c.rotations = rot::QuaternionSequence(0, clip.skeleton.size(), c.frame_rate);
    for (std::size_t t = phase; t < clip.frames(); t += factor) {
      c.root_positions.push_back(clip.root_positions[t]);
      c.rotations.push_frame(clip.rotations.frame(t));
    }
    c.rotations = rot::fix_continuity(c.rotations);
    out.push_back(std::move(c));
  }
  return out;
}

SwapMap parse_swap_map(const std::string& text) {
  SwapMap out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = trim(text.substr(start, end - start));
    if (!item.empty()) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw InputError("swap map entry '" + item + "' is not 'Left:Right'");
      const std::string a = trim(item.substr(0, colon));
      const std::string b = trim(item.substr(colon + 1));
      if (a.empty() || b.empty()) throw InputError("swap map entry '" + item + "' has an empty name");
      out.emplace_back(a, b);
    }
    start = end + 1;
  }
  return out;
}

MotionClip mirror(const MotionClip& clip, const SwapMap& swap) {
  clip.validate();
  const kin::Skeleton& skel = clip.skeleton;
  const std::size_t n = skel.size();
  std::vector<std::size_t> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = j;
  std::set<std::size_t> seen;
  for (const auto& [a, b] : swap) {
    const std::size_t ia = skel.index_of(a);
    const std::size_t ib = skel.index_of(b);
    if (!seen.insert(ia).second || (ia != ib && !seen.insert(ib).second)) {
      throw InputError("swap map names a joint twice ('" + a + "', '" + b + "')");
    }
    sigma[ia] = ib;
    sigma[ib] = ia;
  }
  for (std::size_t j = 1; j < n; ++j) {
    const auto p = static_cast<std::size_t>(skel.parent(j));
    if (static_cast<std::size_t>(skel.parent(sigma[j])) != sigma[p]) {
      throw InputError("swap map is incomplete: '" + skel.joint(j).name + "' and '" + skel.joint(sigma[j]).name +
                       "' have parents that are not swapped with each other");
    }
  }

  std::vector<kin::Joint> joints;
  for (std::size_t j = 0; j < n; ++j) {
    kin::Joint jt = skel.joint(sigma[j]);
    jt.name = skel.joint(j).name;
    jt.parent = skel.parent(j);
    jt.offset.x = -jt.offset.x;
    if (jt.constant_rotation) jt.constant_rotation = reflect(*jt.constant_rotation);
    joints.push_back(std::move(jt));
  }

  MotionClip out;
  out.skeleton = kin::Skeleton(std::move(joints));
  out.frame_rate = clip.frame_rate;
  out.subject = clip.subject;
  out.action = clip.action;
  out.rotations = rot::QuaternionSequence(clip.frames(), n, clip.frame_rate);
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    const Vec3& p = clip.root_positions[t];
    out.root_positions.push_back({-p.x, p.y, p.z});
    for (std::size_t j = 0; j < n; ++j) out.rotations.at(t, j) = reflect(clip.rotations.at(t, sigma[j]));
  }
  return out;
}

MotionClip rotate_about_vertical(const MotionClip& clip, double angle) {
  clip.validate();
  const Quat r = rot::axis_angle(kUp, angle);
  MotionClip out = clip;
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    out.root_positions[t] = rot::rotate_vector(r, clip.root_positions[t]);
    if (clip.frames() > 0) out.rotations.at(t, 0) = rot::qmul(r, clip.rotations.at(t, 0));
  }
  const kin::Joint& root = clip.skeleton.joint(0);
  if (!root.dof_active) out.skeleton.freeze(0, rot::qmul(r, root.constant_rotation.value_or(Quat::identity())));
  return out;
}

MotionClip random_rotate(const MotionClip& clip, Rng& rng) {
  return rotate_about_vertical(clip, rng.uniform(0.0, kTwoPi));
}

double rotation_angle_between(const Quat& a, const Quat& b) {
  const Quat d = rot::qmul(rot::conjugate(a), b);
  const double v = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return 2.0 * std::atan2(v, std::abs(d.w));
}

kin::Skeleton prune_constant_joints(const kin::Skeleton& skel, const std::vector<MotionClip>& clips, double tol) {
  if (clips.empty()) throw InputError("prune_constant_joints: no clips");
  for (const MotionClip& c : clips) {
    c.validate();
    if (c.skeleton.size() != skel.size()) throw ShapeError("prune_constant_joints: clip skeleton size differs");
  }
  const MotionClip* first = nullptr;
  for (const MotionClip& c : clips) {
    if (c.frames() > 0) {
      first = &c;
      break;
    }
  }
  if (first == nullptr) throw InputError("prune_constant_joints: all clips are empty");

  kin::Skeleton out = skel;
  for (std::size_t j : skel.active_joints()) {
    const Quat ref = first->rotations.at(0, j);
    Quat sum{0, 0, 0, 0};
    for (const MotionClip& c : clips) {
      for (std::size_t t = 0; t < c.frames(); ++t) {
        Quat q = c.rotations.at(t, j);
        if (rot::dot(q, ref) < 0.0) q = -q;
        sum.w += q.w;
        sum.x += q.x;
        sum.y += q.y;
        sum.z += q.z;
      }
    }
    if (rot::norm(sum) < 1e-12) continue;
    const Quat mean = rot::normalize(sum);
    double worst = 0.0;
    for (const MotionClip& c : clips) {
      for (std::size_t t = 0; t < c.frames(); ++t) worst = std::max(worst, rotation_angle_between(mean, c.rotations.at(t, j)));
    }
    if (worst <= tol) out.freeze(j, ref);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spline

Vec2 TrajectorySpline::point_at(double s) const {
  if (segments() == 0) return points.empty() ? Vec2{} : points.front();
  s = std::clamp(s, 0.0, length());
  const std::size_t k = segment_at(s);
  const double u = s - segment_length * static_cast<double>(k);
  return {points[k].x + u * tangents[k].x, points[k].y + u * tangents[k].y};
}

std::size_t TrajectorySpline::segment_at(double s) const {
  if (segments() == 0) return 0;
  if (s <= 0.0) return 0;
  const auto k = static_cast<std::size_t>(s / segment_length);
  return std::min(k, segments() - 1);
}

TrajectorySpline fit_spline(const std::vector<Vec2>& points, double segment_length) {
  if (points.size() < 2) throw InputError("fit_spline: need at least 2 points");
  if (!(segment_length > 0.0)) throw InputError("fit_spline: segment length must be positive");
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += norm2(sub2(points[i], points[i - 1]));
  const double slack = 1e-9 * segment_length;
  if (total + slack < segment_length) {
    throw InputError("fit_spline: path length " + std::to_string(total) + " is shorter than segment length " +
                     std::to_string(segment_length));
  }

  TrajectorySpline sp;
  sp.segment_length = segment_length;
  sp.points.push_back(points.front());
  const double r2 = segment_length * segment_length;
  std::size_t seg = 0;
  double u_cur = 0.0;
  while (true) {
    const Vec2 c = sp.points.back();
    bool found = false;
    for (std::size_t k = seg; k + 1 < points.size(); ++k) {
      const Vec2 a = points[k];
      const Vec2 d = sub2(points[k + 1], a);
      const double dd = dot2(d, d);
      if (dd <= 0.0) continue;
      const double seg_len = std::sqrt(dd);
      const double u0 = (k == seg) ? u_cur : 0.0;
      const Vec2 f = sub2(a, c);
      const double b = dot2(f, d);
      const double cc = dot2(f, f) - r2;
      const double disc = b * b - dd * cc;
      if (disc < 0.0) continue;
      const double sq = std::sqrt(disc);
      const double lo = (-b - sq) / dd;
      const double hi = (-b + sq) / dd;
      const double eps = slack / seg_len;
      double u = -1.0;
      if (lo > u0 + eps && lo <= 1.0 + eps) {
        u = lo;
      } else if (hi > u0 + eps && hi <= 1.0 + eps) {
        u = hi;
      }
      if (u < 0.0) continue;
      u = std::min(u, 1.0);
      Vec2 p{a.x + u * d.x, a.y + u * d.y};
      // Put the vertex at exactly L from the previous one.
      const Vec2 dir = sub2(p, c);
      const double len = norm2(dir);
      p = {c.x + dir.x * segment_length / len, c.y + dir.y * segment_length / len};
      sp.points.push_back(p);
      seg = k;
      u_cur = u;
      found = true;
      break;
    }
    if (!found) break;
  }
  const std::size_t s = sp.points.size() - 1;
  if (s == 0) throw InputError("fit_spline: path never leaves a radius of one segment length");
  for (std::size_t k = 0; k < s; ++k) {
    const Vec2 d = sub2(sp.points[k + 1], sp.points[k]);
    const double len = norm2(d);
    sp.tangents.push_back({d.x / len, d.y / len});
  }
  sp.curvature.assign(s, 0.0);
  for (std::size_t k = 1; k < s; ++k) {
    const Vec2& a = sp.tangents[k - 1];
    const Vec2& b = sp.tangents[k];
    sp.curvature[k] = std::atan2(cross2(a, b), dot2(a, b)) / segment_length;
  }
  if (s > 1) sp.curvature[0] = sp.curvature[1];
  return sp;
}

// ---------------------------------------------------------------------------
// Gait

Vec2 GaitFeatures::gait_signal(std::size_t t) const {
  return {speed[t] * std::cos(phase[t]), speed[t] * std::sin(phase[t])};
}

std::vector<double> box_filter(const std::vector<double>& x, std::size_t width) {
  if (width == 0) width = 1;
  if (width % 2 == 0) ++width;
  const std::size_t half = width / 2;
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += x[k];
    out[i] = s / static_cast<double>(hi - lo);
  }
  return out;
}

Vec2 facing_of(const Quat& root_rotation) {
  const Vec3 f = rot::rotate_vector(root_rotation, kForward);
  const Vec2 g = ground(f);
  const double n = norm2(g);
  if (n < 1e-9) return {0.0, 1.0};
  return {g.x / n, g.y / n};
}

GaitFeatures extract_gait_features(const MotionClip& clip, std::size_t left_foot, std::size_t right_foot,
                                   const GaitOptions& opts) {
  clip.validate();
  if (left_foot >= clip.skeleton.size() || right_foot >= clip.skeleton.size()) {
    throw InputError("extract_gait_features: foot joint index out of range");
  }
  const std::size_t T = clip.frames();
  GaitFeatures g;
  g.frame_rate = clip.frame_rate;
  if (T == 0) {
    g.degenerate = true;
    return g;
  }
  const double fr = clip.frame_rate;
  const auto positions = clip.joint_positions();

  g.facing.resize(T);
  g.root_height.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    g.facing[t] = facing_of(clip.rotations.at(t, 0));
    g.root_height[t] = clip.root_positions[t].y;
  }

  // Root ground speed, per frame and per second.
  std::vector<double> step(T, 0.0);
  for (std::size_t t = 1; t < T; ++t) {
    step[t] = norm2(sub2(ground(clip.root_positions[t]), ground(clip.root_positions[t - 1])));
  }
  if (T > 1) step[0] = step[1];
  double mean_step = 0.0;
  for (std::size_t t = 1; t < T; ++t) mean_step += step[t];
  if (T > 1) mean_step /= static_cast<double>(T - 1);
  std::vector<double> inst(T);
  for (std::size_t t = 0; t < T; ++t) inst[t] = step[t] * fr;

  const auto width = static_cast<std::size_t>(std::lround(static_cast<double>(opts.filter_width_30hz) * fr / 30.0));
  g.speed = box_filter(inst, std::max<std::size_t>(width, 1));
  g.offset.assign(T, 0.0);
  for (std::size_t t = 1; t < T; ++t) g.offset[t] = g.offset[t - 1] + (inst[t] - g.speed[t]) / fr;

  // Contact onsets: the foot is still from frame t to t+1 but moved from t-1 to t.
  const double threshold = std::max(opts.contact_ratio * mean_step, opts.contact_floor);
  auto onsets = [&](std::size_t foot) {
    std::vector<std::size_t> out;
    if (T < 3) return out;
    std::vector<double> speed(T - 1);
    for (std::size_t t = 0; t + 1 < T; ++t) speed[t] = rot::norm(positions[t + 1][foot] - positions[t][foot]);
    for (std::size_t t = 1; t + 1 < T; ++t) {
      if (speed[t] < threshold && speed[t - 1] >= threshold) out.push_back(t);
    }
    return out;
  };
  g.left_contacts = onsets(left_foot);
  g.right_contacts = onsets(right_foot);

  struct Contact {
    std::size_t frame;
    bool left;
  };
  std::vector<Contact> contacts;
  for (std::size_t f : g.left_contacts) contacts.push_back({f, true});
  for (std::size_t f : g.right_contacts) contacts.push_back({f, false});
  std::sort(contacts.begin(), contacts.end(), [](const Contact& a, const Contact& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.left > b.left;
  });
  contacts.erase(std::unique(contacts.begin(), contacts.end(),
                             [](const Contact& a, const Contact& b) { return a.frame == b.frame; }),
                 contacts.end());

  g.phase.assign(T, 0.0);
  g.frequency.assign(T, 0.0);
  if (contacts.size() < 2) {
    g.degenerate = true;
    const double theta = contacts.empty() ? 0.0 : (contacts[0].left ? 0.0 : std::numbers::pi);
    std::fill(g.phase.begin(), g.phase.end(), theta);
    return g;
  }
  std::vector<double> theta(contacts.size());
  theta[0] = contacts[0].left ? 0.0 : std::numbers::pi;
  for (std::size_t i = 1; i < contacts.size(); ++i) {
    theta[i] = theta[i - 1] + (contacts[i].left == contacts[i - 1].left ? kTwoPi : std::numbers::pi);
  }
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t) {
    while (k + 2 < contacts.size() && t >= contacts[k + 1].frame) ++k;
    const double f0 = static_cast<double>(contacts[k].frame);
    const double f1 = static_cast<double>(contacts[k + 1].frame);
    const double slope = (theta[k + 1] - theta[k]) / (f1 - f0);
    g.phase[t] = theta[k] + slope * (static_cast<double>(t) - f0);
    g.frequency[t] = slope * fr / kTwoPi;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Episodes

EpisodeSampler::EpisodeSampler(const std::vector<std::size_t>& clip_lengths, std::size_t length, std::uint64_t seed)
    : length_(length), rng_(seed) {
  if (length == 0) throw InputError("episode length must be positive");
  for (std::size_t n : clip_lengths) {
    total_ += n >= length ? n - length + 1 : 0;
    cumulative_.push_back(total_);
  }
  if (total_ == 0) {
    throw InputError("no clip has the " + std::to_string(length) + " frames needed for an episode");
  }
}

Episode EpisodeSampler::sample() {
  const auto r = static_cast<std::size_t>(rng_.uniform_int(0, total_ - 1));
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
  const auto clip = static_cast<std::size_t>(it - cumulative_.begin());
  const std::size_t before = clip == 0 ? 0 : cumulative_[clip - 1];
  return {clip, r - before};
}

}  // namespace qmotion::data
