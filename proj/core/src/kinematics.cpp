#include "qmotion/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qmotion/error.hpp"

namespace qmotion::kin {

Skeleton::Skeleton(std::vector<Joint> joints) : joints_(std::move(joints)) {
  if (joints_.empty()) throw InputError("skeleton has no joints");
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    const int p = joints_[j].parent;
    if (j == 0) {
      if (p != -1) throw InputError("joint 0 must be the root (parent -1)");
      continue;
    }
    if (p < 0) throw InputError("joint '" + joints_[j].name + "' is a second root");
    if (static_cast<std::size_t>(p) >= j) {
      throw InputError("joint '" + joints_[j].name + "' precedes its parent");
    }
  }
  for (Joint& jt : joints_) {
    if (!jt.dof_active && !jt.constant_rotation) jt.constant_rotation = Quat::identity();
  }
  rebuild_index();
}

void Skeleton::rebuild_index() {
  active_.clear();
  slot_.assign(joints_.size(), -1);
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    if (joints_[j].dof_active) {
      slot_[j] = static_cast<int>(active_.size());
      active_.push_back(j);
    }
  }
}

std::size_t Skeleton::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    if (joints_[j].name == name) return j;
  }
  throw InputError("no joint named '" + name + "'");
}

void Skeleton::freeze(std::size_t j, const Quat& rotation) {
  joints_.at(j).dof_active = false;
  joints_[j].constant_rotation = rotation;
  rebuild_index();
}

void Skeleton::unfreeze(std::size_t j) {
  joints_.at(j).dof_active = true;
  joints_[j].constant_rotation.reset();
  rebuild_index();
}

double Skeleton::reach() const {
  std::vector<double> dist(joints_.size(), 0.0);
  double best = 0.0;
  for (std::size_t j = 1; j < joints_.size(); ++j) {
    dist[j] = dist[static_cast<std::size_t>(joints_[j].parent)] + rot::norm(joints_[j].offset);
    best = std::max(best, dist[j]);
  }
  return best;
}

bool Skeleton::has_children(std::size_t j) const {
  for (std::size_t k = j + 1; k < joints_.size(); ++k) {
    if (joints_[k].parent == static_cast<int>(j)) return true;
  }
  return false;
}

bool operator==(const Skeleton& a, const Skeleton& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const Joint& x = a.joint(j);
    const Joint& y = b.joint(j);
    if (x.name != y.name || x.parent != y.parent || !(x.offset == y.offset) ||
        x.dof_active != y.dof_active || x.euler_order != y.euler_order ||
        x.constant_rotation != y.constant_rotation || x.end_site != y.end_site) {
      return false;
    }
  }
  return true;
}

Pose make_pose(const Skeleton& skel, const Vec3& root, std::span<const Quat> all_rotations) {
  if (all_rotations.size() != skel.size()) {
    throw ShapeError("make_pose: expected " + std::to_string(skel.size()) + " rotations, got " +
                     std::to_string(all_rotations.size()));
  }
  Pose pose{root, {}};
  pose.rotations.reserve(skel.active_count());
  for (std::size_t j : skel.active_joints()) pose.rotations.push_back(all_rotations[j]);
  return pose;
}

std::vector<Quat> local_rotations(const Skeleton& skel, const Pose& pose) {
  if (pose.rotations.size() != skel.active_count()) {
    throw ShapeError("pose has " + std::to_string(pose.rotations.size()) +
                     " rotations, skeleton has " + std::to_string(skel.active_count()) +
                     " active joints");
  }
  std::vector<Quat> local(skel.size());
  for (std::size_t j = 0; j < skel.size(); ++j) {
    const int slot = skel.active_slot(j);
    local[j] = slot >= 0 ? pose.rotations[static_cast<std::size_t>(slot)]
                         : *skel.joint(j).constant_rotation;
  }
  return local;
}

FkResult forward_kinematics_full(const Skeleton& skel, const Pose& pose) {
  const std::vector<Quat> local = local_rotations(skel, pose);
  FkResult out;
  out.positions.resize(skel.size());
  out.world_rotations.resize(skel.size());
  for (std::size_t j = 0; j < skel.size(); ++j) {
    if (std::abs(rot::norm(local[j]) - 1.0) > 1e-6) {
      throw InvalidRotationError("forward_kinematics: rotation of joint '" + skel.joint(j).name +
                                 "' is not unit");
    }
    const int p = skel.parent(j);
    if (p < 0) {
      out.world_rotations[j] = local[j];
      out.positions[j] = pose.root_position;
    } else {
      const auto pi = static_cast<std::size_t>(p);
      out.world_rotations[j] = rot::qmul(out.world_rotations[pi], local[j]);
      out.positions[j] = out.positions[pi] + rot::rotate_vector(out.world_rotations[pi], skel.joint(j).offset);
    }
  }
  return out;
}

JointPositions forward_kinematics(const Skeleton& skel, const Pose& pose) {
  return forward_kinematics_full(skel, pose).positions;
}

ad::Var forward_kinematics(const Skeleton& skel, ad::Var root, ad::Var rotations) {
  const ad::Shape& rs = rotations.shape();
  const std::size_t active = skel.active_count();
  if (rs.size() != 3 || rs[1] != active || rs[2] != 4) {
    throw ShapeError("forward_kinematics: rotations " + ad::shape_string(rs) + ", expected [F," +
                     std::to_string(active) + ",4]");
  }
  const std::size_t frames = rs[0];
  if (root.shape() != ad::Shape{frames, 3}) {
    throw ShapeError("forward_kinematics: root " + ad::shape_string(root.shape()) + ", expected [" +
                     std::to_string(frames) + ",3]");
  }
  ad::Tape& tape = rotations.tape();
  ad::Var flat = ad::reshape(rotations, {frames, active * 4});
  std::vector<ad::Var> world(skel.size());
  std::vector<ad::Var> pos(skel.size());
  for (std::size_t j = 0; j < skel.size(); ++j) {
    const int slot = skel.active_slot(j);
    ad::Var local;
    if (slot >= 0) {
      const auto s = static_cast<std::size_t>(slot);
      local = ad::slice(flat, 4 * s, 4 * s + 4);
    } else {
      const Quat& c = *skel.joint(j).constant_rotation;
      ad::Tensor t({frames, 4});
      for (std::size_t f = 0; f < frames; ++f) {
        t.at(f, 0) = c.w;
        t.at(f, 1) = c.x;
        t.at(f, 2) = c.y;
        t.at(f, 3) = c.z;
      }
      local = tape.constant(std::move(t));
    }
    const int p = skel.parent(j);
    if (p < 0) {
      world[j] = local;
      pos[j] = root;
    } else {
      const auto pi = static_cast<std::size_t>(p);
      const Vec3& o = skel.joint(j).offset;
      ad::Tensor off({frames, 3});
      for (std::size_t f = 0; f < frames; ++f) {
        off.at(f, 0) = o.x;
        off.at(f, 1) = o.y;
        off.at(f, 2) = o.z;
      }
      pos[j] = ad::add(pos[pi], ad::qrot(world[pi], tape.constant(std::move(off))));
      if (skel.has_children(j)) world[j] = ad::qmul(world[pi], local);
    }
  }
  return ad::reshape(ad::concat(pos), {frames, skel.size(), 3});
}

namespace {

void check_same_shape(std::span<const JointPositions> pred, std::span<const JointPositions> ref) {
  if (pred.size() != ref.size()) {
    throw ShapeError("frame count mismatch: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(ref.size()));
  }
  if (pred.empty()) throw ShapeError("empty position sequence");
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != ref[t].size() || pred[t].empty()) {
      throw ShapeError("joint count mismatch at frame " + std::to_string(t));
    }
  }
}

}  // namespace

double position_error(std::span<const JointPositions> pred, std::span<const JointPositions> ref) {
  check_same_shape(pred, ref);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (std::size_t j = 0; j < pred[t].size(); ++j) {
      total += rot::norm(pred[t][j] - ref[t][j]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<double> velocity_errors(std::span<const JointPositions> pred,
                                    std::span<const JointPositions> ref) {
  check_same_shape(pred, ref);
  if (pred.size() < 2) throw ShapeError("velocity error needs at least 2 frames");
  std::vector<double> out;
  out.reserve(pred.size() - 1);
  for (std::size_t t = 1; t < pred.size(); ++t) {
    double total = 0.0;
    for (std::size_t j = 0; j < pred[t].size(); ++j) {
      const Vec3 dp = pred[t][j] - pred[t - 1][j];
      const Vec3 dr = ref[t][j] - ref[t - 1][j];
      total += rot::norm(dp - dr);
    }
    out.push_back(total / static_cast<double>(pred[t].size()));
  }
  return out;
}

double velocity_error(std::span<const JointPositions> pred, std::span<const JointPositions> ref) {
  const std::vector<double> per_frame = velocity_errors(pred, ref);
  double total = 0.0;
  for (double v : per_frame) total += v;
  return total / static_cast<double>(per_frame.size());
}

ad::Var mean_distance(ad::Var pred, ad::Var ref) {
  if (pred.value().cols() != 3) throw ShapeError("mean_distance: expected [..., 3] positions");
  return ad::mean(ad::sqrt(ad::sum_last(ad::square(ad::sub(pred, ref)))));
}

namespace {

double mean_joint_distance(const JointPositions& a, const JointPositions& b) {
  double total = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) total += rot::norm(a[j] - b[j]);
  return total / static_cast<double>(a.size());
}

struct IkRun {
  std::vector<double> best_x;
  double best_error = std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
};

/// One projected-Adam descent on the mean squared joint distance from `x`.
IkRun descend(const Skeleton& skel, const ad::Tensor& root, const ad::Tensor& target,
              std::vector<double> x, const IkConfig& cfg) {
  const std::size_t active = skel.active_count();
  const std::size_t joints = skel.size();
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);
  IkRun run;
  run.best_x = x;
  double lr = cfg.step;
  double plateau_ref = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;
  for (; run.steps < cfg.max_steps; ++run.steps) {
    ad::Tape tape;
    ad::Var rot = tape.variable(ad::Tensor({1, active, 4}, x));
    ad::Var pos = forward_kinematics(skel, tape.constant(root), rot);
    ad::Var sq = ad::sum_last(ad::square(ad::sub(pos, tape.constant(target))));
    ad::Var loss = ad::mean(sq);
    double err = 0.0;
    for (std::size_t j = 0; j < joints; ++j) err += std::sqrt(sq.value()[j]);
    err /= static_cast<double>(joints);
    if (err < run.best_error) {
      run.best_error = err;
      run.best_x = x;
    }
    const double value = loss.value().item();
    if (err <= cfg.tol) break;
    if (plateau_ref - value > cfg.tol * value) {
      plateau_ref = value;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      lr *= 0.5;
      since_improvement = 0;
      plateau_ref = value;
      if (lr < cfg.step * cfg.min_step_ratio) break;
    }
    tape.backward(loss);
    const ad::Tensor g = rot.grad();
    const double t1 = 1.0 - std::pow(beta1, static_cast<double>(run.steps + 1));
    const double t2 = 1.0 - std::pow(beta2, static_cast<double>(run.steps + 1));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / t1) / (std::sqrt(v[i] / t2) + eps);
    }
    for (std::size_t a = 0; a < active; ++a) {
      const Quat q = rot::normalize({x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]});
      x[4 * a] = q.w;
      x[4 * a + 1] = q.x;
      x[4 * a + 2] = q.y;
      x[4 * a + 3] = q.z;
    }
  }
  return run;
}

}  // namespace

IkResult ik_reproject(const Skeleton& skel, const JointPositions& target, const Pose& init,
                      const IkConfig& cfg) {
  if (target.size() != skel.size()) {
    throw ShapeError("ik_reproject: target has " + std::to_string(target.size()) +
                     " joints, skeleton has " + std::to_string(skel.size()));
  }
  for (const Vec3& v : target) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
      throw InputError("ik_reproject: non-finite target position");
    }
  }
  const std::size_t active = skel.active_count();
  if (init.rotations.size() != active) throw ShapeError("ik_reproject: init pose does not match skeleton");

  IkResult best{init, mean_joint_distance(forward_kinematics(skel, init), target), 0};
  if (best.error <= cfg.tol || active == 0) return best;

  const std::size_t joints = skel.size();
  ad::Tensor target_t({1, joints, 3});
  for (std::size_t j = 0; j < joints; ++j) {
    target_t[3 * j] = target[j].x;
    target_t[3 * j + 1] = target[j].y;
    target_t[3 * j + 2] = target[j].z;
  }
  const ad::Tensor root_t({1, 3}, {init.root_position.x, init.root_position.y, init.root_position.z});

  std::vector<double> x(4 * active);
  for (std::size_t a = 0; a < active; ++a) {
    const Quat q = rot::normalize(init.rotations[a]);
    x[4 * a] = q.w;
    x[4 * a + 1] = q.x;
    x[4 * a + 2] = q.y;
    x[4 * a + 3] = q.z;
  }
  const double accept = cfg.restart_threshold * std::max(skel.reach(), 1.0);
  IkConfig run_cfg = cfg;
  for (std::size_t attempt = 0; attempt <= cfg.restarts; ++attempt) {
    if (attempt > 0) {
      if (best.error <= accept) break;
      // Restart from the best rotations found so far with a larger step.
      for (std::size_t a = 0; a < active; ++a) {
        const Quat& q = best.pose.rotations[a];
        x[4 * a] = q.w;
        x[4 * a + 1] = q.x;
        x[4 * a + 2] = q.y;
        x[4 * a + 3] = q.z;
      }
      run_cfg.step *= cfg.restart_step_growth;
    }
    const IkRun run = descend(skel, root_t, target_t, x, run_cfg);
    best.iterations += run.steps;
    if (run.best_error < best.error) {
      best.error = run.best_error;
      for (std::size_t a = 0; a < active; ++a) {
        const double* q = run.best_x.data() + 4 * a;
        best.pose.rotations[a] = rot::normalize({q[0], q[1], q[2], q[3]});
      }
    }
  }
  return best;
}

std::vector<Pose> ik_reproject_sequence(const Skeleton& skel, std::span<const JointPositions> targets,
                                        const Pose& init, const IkConfig& cfg) {
  std::vector<Pose> out;
  out.reserve(targets.size());
  Pose current = init;
  IkConfig frame_cfg = cfg;
  for (const JointPositions& target : targets) {
    if (target.empty()) throw ShapeError("ik_reproject_sequence: empty target frame");
    current.root_position = target[0];
    current = ik_reproject(skel, target, current, frame_cfg).pose;
    frame_cfg.restarts = 0;
    out.push_back(current);
  }
  return out;
}

}  // namespace qmotion::kin
