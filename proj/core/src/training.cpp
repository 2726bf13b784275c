#include "qmotion/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "qmotion/error.hpp"

namespace qmotion::train {

using models::Backbone;
using models::Parameterization;
using models::PoseNetwork;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Losses

ad::Var loss_positional(const kin::Skeleton& skel, ad::Var root, ad::Var rotations, ad::Var ref) {
  return kin::mean_distance(kin::forward_kinematics(skel, root, rotations), ref);
}

ad::Var loss_euler_l1(ad::Var pred, const ad::Tensor& ref, const std::vector<rot::EulerOrder>& orders) {
  const ad::Tensor& pv = pred.value();
  if (pv.rank() != 3 || pv.dim(2) != 4) throw ShapeError("loss_euler_l1: pred must be [F, A, 4], got " + ad::shape_string(pv.shape()));
  const std::size_t F = pv.dim(0), A = pv.dim(1);
  if (ref.shape() != ad::Shape{F, A, 3}) throw ShapeError("loss_euler_l1: ref must be [F, A, 3], got " + ad::shape_string(ref.shape()));
  if (orders.size() != A) throw ShapeError("loss_euler_l1: one Euler order per joint required");
  const std::size_t N = F * A;
  ad::Tape& tape = pred.tape();
  const ad::Var q = ad::reshape(pred, {N, 4});
  const ad::Var r = tape.constant(ref.reshaped({N, 3}));
  std::vector<rot::EulerOrder> distinct;
  for (auto o : orders) {
    if (std::find(distinct.begin(), distinct.end(), o) == distinct.end()) distinct.push_back(o);
  }
  ad::Var total;
  for (auto o : distinct) {
    ad::Tensor mask({N, 3}, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      if (orders[i % A] == o) mask.at(i, 0) = mask.at(i, 1) = mask.at(i, 2) = 1.0;
    }
    ad::Var d = ad::abs(ad::wrap_angle(ad::sub(ad::quat_to_euler(q, o), r)));
    ad::Var s = ad::sum(ad::mul(d, tape.constant(std::move(mask))));
    total = total.valid() ? total + s : s;
  }
  return ad::scale(total, 1.0 / static_cast<double>(3 * N));
}

ad::Var loss_quat_dot(ad::Var pred, ad::Var ref) {
  if (pred.shape() != ref.shape() || pred.value().cols() != 4) {
    throw ShapeError("loss_quat_dot: shapes " + ad::shape_string(pred.shape()) + " vs " + ad::shape_string(ref.shape()));
  }
  return ad::add_scalar(ad::neg(ad::mean(ad::sum_last(ad::mul(pred, ref)))), 1.0);
}

ad::Var penalty_unit_norm(ad::Var raw, double lambda) {
  const std::size_t n = raw.value().size();
  if (n % 4 != 0) throw ShapeError("penalty_unit_norm: size is not a multiple of 4");
  ad::Var sq = ad::sum_last(ad::square(ad::reshape(raw, {n / 4, 4})));
  return ad::scale(ad::mean(ad::square(ad::add_scalar(sq, -1.0))), lambda);
}

ad::Var loss_mae(ad::Var pred, ad::Var ref) {
  if (pred.shape() != ref.shape()) {
    throw ShapeError("loss_mae: shapes " + ad::shape_string(pred.shape()) + " vs " + ad::shape_string(ref.shape()));
  }
  return ad::mean(ad::abs(ad::sub(pred, ref)));
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const ad::ParameterSet& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.value.shape(), 0.0);
    v_.emplace_back(e.value.shape(), 0.0);
  }
}

double gradient_norm(const ad::ParameterSet& params) {
  double s = 0.0;
  for (const auto& e : params.entries()) {
    for (double g : e.grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

StepReport Adam::step(ad::ParameterSet& params, double lr) {
  if (params.size() != m_.size()) throw ShapeError("Adam: parameter set does not match the optimizer state");
  StepReport rep;
  rep.grad_norm = gradient_norm(params);
  if (!std::isfinite(rep.grad_norm)) {
    std::string where;
    for (const auto& e : params.entries()) {
      if (!e.grad.all_finite()) {
        where = e.name;
        break;
      }
    }
    throw NumericalError("non-finite gradient" + (where.empty() ? std::string() : " in '" + where + "'"));
  }
  const double scale = cfg_.clip_norm > 0.0 && rep.grad_norm > cfg_.clip_norm ? cfg_.clip_norm / rep.grad_norm : 1.0;
  rep.clipped_norm = rep.grad_norm * scale;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& x = params.value(i);
    const ad::Tensor& g = params.grad(i);
    ad::Tensor& m = m_[i];
    ad::Tensor& v = v_[i];
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double gk = g[k] * scale;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
  return rep;
}

std::vector<std::pair<std::string, ad::Tensor>> Adam::state(const ad::ParameterSet& params) const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.emplace_back("adam.m/" + params.entries()[i].name, m_[i]);
    out.emplace_back("adam.v/" + params.entries()[i].name, v_[i]);
  }
  return out;
}

void Adam::restore(const ad::ParameterSet& params, const std::vector<std::pair<std::string, ad::Tensor>>& tensors,
                   std::size_t steps) {
  auto find = [&](const std::string& name) -> const ad::Tensor& {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw InputError("checkpoint lacks optimizer state '" + name + "'");
  };
  m_.clear();
  v_.clear();
  for (const auto& e : params.entries()) {
    m_.push_back(find("adam.m/" + e.name));
    v_.push_back(find("adam.v/" + e.name));
    if (m_.back().shape() != e.value.shape() || v_.back().shape() != e.value.shape()) {
      throw InputError("optimizer state for '" + e.name + "' has the wrong shape");
    }
  }
  t_ = steps;
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kEulerL1: return "euler_l1";
    case LossKind::kQuatDot: return "quat_dot";
    case LossKind::kPositional: return "positional";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  for (auto k : {LossKind::kEulerL1, LossKind::kQuatDot, LossKind::kPositional}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown loss '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw ConfigError("lr decay must lie in (0, 1)");
  if (!(sampling_decay > 0.0 && sampling_decay < 1.0)) throw ConfigError("sampling decay must lie in (0, 1)");
  if (!(penalty_weight >= 0.001 && penalty_weight <= 0.1)) throw ConfigError("penalty weight must lie in [0.001, 0.1]");
  if (conditioning == 0 || prediction == 0) throw ConfigError("conditioning and prediction lengths must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (adam.clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

double sampling_probability(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.scheduled_sampling ? std::pow(cfg.sampling_decay, static_cast<double>(epoch)) : 1.0;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

PoseSequence prepare(const data::MotionClip& clip, Parameterization p) {
  clip.validate();
  PoseSequence s;
  s.action = clip.action;
  data::MotionClip fixed = clip;
  fixed.rotations = rot::fix_continuity(clip.rotations);
  for (std::size_t t = 0; t < fixed.frames(); ++t) {
    kin::Pose pose = fixed.pose(t);
    pose.root_position = {};
    s.features.push_back(models::pose_features(p, fixed.skeleton, pose));
    s.positions.push_back(kin::forward_kinematics(fixed.skeleton, pose));
    s.rotations.push_back(std::move(pose.rotations));
  }
  return s;
}

void check_skeleton(const kin::Skeleton& a, const kin::Skeleton& b) {
  if (!(a == b)) throw InputError("all clips of a dataset must share one skeleton");
}

}  // namespace

PoseDataset make_pose_dataset(const std::vector<data::MotionClip>& clips, Parameterization p) {
  if (clips.empty()) throw InputError("no clips found");
  PoseDataset d;
  d.skeleton = clips[0].skeleton;
  d.parameterization = p;
  d.frame_rate = clips[0].frame_rate;
  for (const auto& c : clips) {
    check_skeleton(d.skeleton, c.skeleton);
    d.sequences.push_back(prepare(c, p));
  }
  return d;
}

PoseDataset make_pose_dataset(const std::vector<models::LocomotionSequence>& seqs, Parameterization p) {
  if (seqs.empty()) throw InputError("no clips found");
  PoseDataset d;
  d.skeleton = seqs[0].local.skeleton;
  d.parameterization = p;
  d.frame_rate = seqs[0].local.frame_rate;
  for (const auto& s : seqs) {
    check_skeleton(d.skeleton, s.local.skeleton);
    PoseSequence ps = prepare(s.local, p);
    ps.translations = s.translations;
    ps.controls = s.controls;
    d.sequences.push_back(std::move(ps));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Rollouts

namespace {

/// Batched views of dataset frames for a fixed list of episodes.
class Batch {
 public:
  Batch(const PoseDataset& data, const std::vector<data::Episode>& eps) : data_(&data), eps_(&eps) {}

  std::size_t size() const { return eps_->size(); }
  const PoseSequence& seq(std::size_t i) const { return data_->sequences[(*eps_)[i].clip]; }
  std::size_t frame(std::size_t i, std::size_t t) const { return (*eps_)[i].start + t; }

  ad::Tensor pose(std::size_t t) const {
    const std::size_t P = seq(0).features[0].size();
    ad::Tensor out({size(), P});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& f = seq(i).features[frame(i, t)];
      std::copy(f.begin(), f.end(), out.data() + i * P);
    }
    return out;
  }
  ad::Tensor translations(std::size_t t) const {
    ad::Tensor out({size(), models::kTranslationSize});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& f = seq(i).translations[frame(i, t)];
      std::copy(f.begin(), f.end(), out.data() + i * models::kTranslationSize);
    }
    return out;
  }
  ad::Tensor controls(std::size_t t) const {
    ad::Tensor out({size(), models::kControlSize});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& f = seq(i).controls[frame(i, t)];
      std::copy(f.begin(), f.end(), out.data() + i * models::kControlSize);
    }
    return out;
  }
  ad::Tensor rotations(std::size_t t) const {
    const std::size_t A = seq(0).rotations[0].size();
    ad::Tensor out({size(), A, 4});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& r = seq(i).rotations[frame(i, t)];
      for (std::size_t a = 0; a < A; ++a) {
        double* d = out.data() + (i * A + a) * 4;
        d[0] = r[a].w;
        d[1] = r[a].x;
        d[2] = r[a].y;
        d[3] = r[a].z;
      }
    }
    return out;
  }
  ad::Tensor euler(std::size_t t, const std::vector<rot::EulerOrder>& orders) const {
    const std::size_t A = orders.size();
    ad::Tensor out({size(), A, 3});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& r = seq(i).rotations[frame(i, t)];
      for (std::size_t a = 0; a < A; ++a) {
        const auto e = rot::quat_to_euler(r[a], orders[a]).angles;
        double* d = out.data() + (i * A + a) * 3;
        d[0] = e.a1;
        d[1] = e.a2;
        d[2] = e.a3;
      }
    }
    return out;
  }
  ad::Tensor positions(std::size_t t) const {
    const std::size_t J = seq(0).positions[0].size();
    ad::Tensor out({size(), J, 3});
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& p = seq(i).positions[frame(i, t)];
      for (std::size_t j = 0; j < J; ++j) {
        double* d = out.data() + (i * J + j) * 3;
        d[0] = p[j].x;
        d[1] = p[j].y;
        d[2] = p[j].z;
      }
    }
    return out;
  }

 private:
  const PoseDataset* data_;
  const std::vector<data::Episode>* eps_;
};

void check_compatible(const PoseNetwork& net, const PoseDataset& data, const std::vector<data::Episode>& eps,
                      std::size_t length) {
  const auto& cfg = net.config();
  if (eps.empty()) throw InputError("empty batch");
  if (data.parameterization != cfg.parameterization) throw InputError("dataset and model parameterizations differ");
  if (data.sequences.empty() || data.sequences[0].features.empty() ||
      data.sequences[0].features[0].size() != cfg.pose_size()) {
    throw InputError("dataset pose features do not match the model (skeleton mismatch?)");
  }
  for (const auto& e : eps) {
    if (e.clip >= data.size()) throw InputError("episode refers to a missing clip");
    const PoseSequence& s = data.sequences[e.clip];
    if (e.start + length > s.frames()) {
      throw InputError("episode of " + std::to_string(s.frames() - std::min(e.start, s.frames())) +
                       " frames is shorter than n + k = " + std::to_string(length));
    }
    if (cfg.include_translations && s.translations.size() != s.frames()) throw InputError("dataset lacks translations");
    if (cfg.include_controls && s.controls.size() != s.frames()) throw InputError("dataset lacks controls");
  }
}

std::vector<rot::EulerOrder> joint_orders(const kin::Skeleton& skel) {
  std::vector<rot::EulerOrder> o;
  for (std::size_t j : skel.active_joints()) o.push_back(skel.joint(j).euler_order);
  return o;
}

ad::Tensor row_mask(const std::vector<bool>& keep, std::size_t cols, bool value) {
  ad::Tensor m({keep.size(), cols}, 0.0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] == value) std::fill(m.data() + i * cols, m.data() + (i + 1) * cols, 1.0);
  }
  return m;
}

/// Ground truth where keep[i], otherwise the prediction.
ad::Var mix(ad::Tape& tape, const ad::Tensor& gt, ad::Var pred, const std::vector<bool>& keep) {
  const std::size_t cols = gt.cols();
  ad::Tensor g = gt;
  const ad::Tensor mg = row_mask(keep, cols, true);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] *= mg[k];
  return ad::add(tape.constant(std::move(g)), ad::mul(pred, tape.constant(row_mask(keep, cols, false))));
}

ad::Tensor mix_values(const ad::Tensor& gt, const ad::Tensor& pred, const std::vector<bool>& keep) {
  ad::Tensor out = pred;
  const std::size_t cols = gt.cols();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) std::copy(gt.data() + i * cols, gt.data() + (i + 1) * cols, out.data() + i * cols);
  }
  return out;
}

ad::Var frame_loss(const PoseNetwork& net, const PoseDataset& data, const Batch& batch, const models::StepOutput& y,
                   std::size_t t, const TrainConfig& cfg) {
  ad::Tape& tape = y.pose.tape();
  const auto& mc = net.config();
  const std::size_t B = batch.size();
  ad::Var loss;
  if (mc.parameterization == Parameterization::kPosition) {
    const std::size_t J = mc.position_joints;
    loss = kin::mean_distance(ad::reshape(y.pose, {B, J, 3}), tape.constant(batch.positions(t)));
  } else {
    const ad::Var rots = net.to_quaternions(y.pose);
    switch (cfg.loss) {
      case LossKind::kPositional:
        loss = loss_positional(data.skeleton, tape.constant(ad::Tensor({B, 3}, 0.0)), rots,
                               tape.constant(batch.positions(t)));
        break;
      case LossKind::kQuatDot:
        if (mc.parameterization != Parameterization::kQuaternion) {
          throw ConfigError("the quaternion-dot loss needs a quaternion model");
        }
        loss = loss_quat_dot(ad::reshape(rots, {B * mc.joints, 4}),
                             tape.constant(batch.rotations(t).reshaped({B * mc.joints, 4})));
        break;
      case LossKind::kEulerL1:
        loss = loss_euler_l1(rots, batch.euler(t, joint_orders(data.skeleton)), joint_orders(data.skeleton));
        break;
    }
    if (mc.parameterization == Parameterization::kQuaternion) loss = loss + penalty_unit_norm(y.raw, cfg.penalty_weight);
  }
  if (mc.include_translations) loss = loss + loss_mae(y.translations, tape.constant(batch.translations(t)));
  return loss;
}

models::StepInput step_input(ad::Tape& tape, const ad::Tensor& pose, const ad::Tensor* trans, const ad::Tensor* ctrl) {
  models::StepInput in;
  in.pose = tape.constant(pose);
  if (trans) in.translations = tape.constant(*trans);
  if (ctrl) in.controls = tape.constant(*ctrl);
  return in;
}

}  // namespace

RolloutResult scheduled_sampling_rollout(const PoseNetwork& net, const ad::Binding& b, const PoseDataset& data,
                                         const std::vector<data::Episode>& episodes, const TrainConfig& cfg, double p,
                                         Rng& rng) {
  const std::size_t n = cfg.conditioning, k = cfg.prediction;
  check_compatible(net, data, episodes, n + k);
  const auto& mc = net.config();
  const bool has_t = mc.include_translations, has_c = mc.include_controls;
  const Batch batch(data, episodes);
  const std::size_t B = batch.size();
  ad::Tape& tape = b.tape();

  // Observation masks for inputs n .. n + k - 2, drawn up front in a fixed order.
  std::vector<std::vector<bool>> keep(k > 1 ? k - 1 : 0, std::vector<bool>(B));
  for (auto& row : keep) {
    for (std::size_t i = 0; i < B; ++i) row[i] = rng.bernoulli(p);
  }

  RolloutResult res;
  std::vector<models::StepOutput> outs;
  if (mc.backbone == Backbone::kRecurrent) {
    auto state = net.initial_state(b, B);
    models::StepInput in;
    in.pose = tape.constant(batch.pose(0));
    if (has_t) in.translations = tape.constant(batch.translations(0));
    for (std::size_t t = 1; t < n + k; ++t) {
      if (has_c) in.controls = tape.constant(batch.controls(t));
      models::StepOutput y = net.step(b, state, in);
      if (t >= n) outs.push_back(y);
      if (t + 1 == n + k) break;
      if (t < n) {
        in.pose = tape.constant(batch.pose(t));
        if (has_t) in.translations = tape.constant(batch.translations(t));
      } else {
        in.pose = mix(tape, batch.pose(t), y.pose, keep[t - n]);
        if (has_t) in.translations = mix(tape, batch.translations(t), y.translations, keep[t - n]);
      }
    }
  } else {
    const std::size_t rf = mc.receptive_field();
    if (n < rf) {
      throw InputError("conditioning length " + std::to_string(n) + " is shorter than the receptive field " +
                       std::to_string(rf));
    }
    // Frames actually observed as inputs, 0 .. n + k - 2.
    std::vector<ad::Tensor> used_pose, used_trans, ctrl;
    for (std::size_t t = 0; t < n + k; ++t) {
      if (has_c) ctrl.push_back(batch.controls(t));
      if (t < n) {
        used_pose.push_back(batch.pose(t));
        if (has_t) used_trans.push_back(batch.translations(t));
      }
    }
    auto& params = const_cast<ad::ParameterSet&>(net.params());
    // Pass 1: predictions fed back as inputs, computed without gradients.
    for (std::size_t t = n; t + 1 < n + k; ++t) {
      ad::Tape scratch;
      ad::Binding sb(scratch, params, false);
      std::vector<models::StepInput> window;
      for (std::size_t j = t - rf; j < t; ++j) {
        window.push_back(step_input(scratch, used_pose[j], has_t ? &used_trans[j] : nullptr, has_c ? &ctrl[j + 1] : nullptr));
      }
      const models::StepOutput y = net.convolve(sb, window).back();
      used_pose.push_back(mix_values(batch.pose(t), y.pose.value(), keep[t - n]));
      if (has_t) used_trans.push_back(mix_values(batch.translations(t), y.translations.value(), keep[t - n]));
    }
    // Pass 2: all k outputs at once with gradients into the parameters only.
    std::vector<models::StepInput> frames;
    for (std::size_t j = n - rf; j + 1 < n + k; ++j) {
      frames.push_back(step_input(tape, used_pose[j], has_t ? &used_trans[j] : nullptr, has_c ? &ctrl[j + 1] : nullptr));
    }
    outs = net.convolve(b, frames);
  }

  ad::Var total;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    ad::Var l = frame_loss(net, data, batch, outs[i], n + i, cfg);
    total = total.valid() ? total + l : l;
    res.poses.push_back(outs[i].pose);
    res.translations.push_back(outs[i].translations);
  }
  res.loss = ad::scale(total, 1.0 / static_cast<double>(outs.size()));
  return res;
}

std::vector<std::vector<std::vector<double>>> predict_episodes(const PoseNetwork& net, const PoseDataset& data,
                                                               const std::vector<data::Episode>& episodes,
                                                               std::size_t n, std::size_t k) {
  if (n == 0 || k == 0) throw ConfigError("conditioning and prediction lengths must be positive");
  check_compatible(net, data, episodes, n + k);
  const auto& mc = net.config();
  const bool has_t = mc.include_translations, has_c = mc.include_controls;
  const Batch batch(data, episodes);
  const std::size_t B = batch.size();
  auto& params = const_cast<ad::ParameterSet&>(net.params());

  std::vector<ad::Tensor> preds;
  if (mc.backbone == Backbone::kRecurrent) {
    std::vector<ad::Tensor> state;
    {
      ad::Tape tape;
      ad::Binding b(tape, params, false);
      for (const ad::Var& v : net.initial_state(b, B)) state.push_back(v.value());
    }
    ad::Tensor pose = batch.pose(0), trans = has_t ? batch.translations(0) : ad::Tensor();
    for (std::size_t t = 1; t < n + k; ++t) {
      ad::Tape tape;
      ad::Binding b(tape, params, false);
      std::vector<ad::Var> sv;
      for (const auto& s : state) sv.push_back(tape.constant(s));
      const ad::Tensor ctrl = has_c ? batch.controls(t) : ad::Tensor();
      const models::StepOutput y = net.step(b, sv, step_input(tape, pose, has_t ? &trans : nullptr, has_c ? &ctrl : nullptr));
      for (std::size_t l = 0; l < sv.size(); ++l) state[l] = sv[l].value();
      if (t < n) {
        pose = batch.pose(t);
        if (has_t) trans = batch.translations(t);
      } else {
        pose = y.pose.value();
        if (has_t) trans = y.translations.value();
        preds.push_back(pose);
      }
    }
  } else {
    const std::size_t rf = mc.receptive_field();
    if (n < rf) {
      throw InputError("conditioning length " + std::to_string(n) + " is shorter than the receptive field " +
                       std::to_string(rf));
    }
    std::vector<ad::Tensor> used_pose, used_trans, ctrl;
    for (std::size_t t = 0; t < n + k; ++t) {
      if (has_c) ctrl.push_back(batch.controls(t));
      if (t < n) {
        used_pose.push_back(batch.pose(t));
        if (has_t) used_trans.push_back(batch.translations(t));
      }
    }
    for (std::size_t t = n; t < n + k; ++t) {
      ad::Tape tape;
      ad::Binding b(tape, params, false);
      std::vector<models::StepInput> window;
      for (std::size_t j = t - rf; j < t; ++j) {
        window.push_back(step_input(tape, used_pose[j], has_t ? &used_trans[j] : nullptr, has_c ? &ctrl[j + 1] : nullptr));
      }
      const models::StepOutput y = net.convolve(b, window).back();
      used_pose.push_back(y.pose.value());
      if (has_t) used_trans.push_back(y.translations.value());
      preds.push_back(y.pose.value());
    }
  }

  const std::size_t P = mc.pose_size();
  std::vector<std::vector<std::vector<double>>> out(B, std::vector<std::vector<double>>(k));
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t f = 0; f < k; ++f) out[i][f].assign(preds[f].data() + i * P, preds[f].data() + (i + 1) * P);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation and logs

namespace {

kin::JointPositions positions_of(const PoseDataset& data, const models::PoseNetworkConfig& mc,
                                 const std::vector<double>& features) {
  if (mc.parameterization == Parameterization::kPosition) {
    kin::JointPositions p(features.size() / 3);
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = {features[3 * j], features[3 * j + 1], features[3 * j + 2]};
    return p;
  }
  kin::Pose pose;
  pose.rotations = models::features_to_quats(mc.parameterization, features);
  return kin::forward_kinematics(data.skeleton, pose);
}

}  // namespace

ValidationLoss validation_loss(const PoseNetwork& net, const PoseDataset& data,
                               const std::vector<data::Episode>& episodes, std::size_t n, std::size_t k) {
  const auto preds = predict_episodes(net, data, episodes, n, k);
  ValidationLoss out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const PoseSequence& s = data.sequences[episodes[i].clip];
    const std::size_t start = episodes[i].start;
    std::vector<kin::JointPositions> pred{s.positions[start + n - 1]}, ref{s.positions[start + n - 1]};
    for (std::size_t f = 0; f < k; ++f) {
      pred.push_back(positions_of(data, net.config(), preds[i][f]));
      ref.push_back(s.positions[start + n + f]);
    }
    const std::span<const kin::JointPositions> pp(pred), rr(ref);
    out.position += kin::position_error(pp.subspan(1), rr.subspan(1));
    out.velocity += kin::velocity_error(pp, rr);
  }
  out.position /= static_cast<double>(episodes.size());
  out.velocity /= static_cast<double>(episodes.size());
  return out;
}

bool EpochLog::same_values(const EpochLog& o) const {
  return epoch == o.epoch && lr == o.lr && p == o.p && train_loss == o.train_loss &&
         val_position_loss == o.val_position_loss && val_velocity_loss == o.val_velocity_loss && max_clipped_norm == o.max_clipped_norm;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f << "epoch,lr,p,train_loss,val_position_loss,val_velocity_loss,max_clipped_norm,wall_time\n";
  char buf[512];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.lr, e.p,
                  e.train_loss, e.val_position_loss, e.val_velocity_loss, e.max_clipped_norm, e.wall_time);
    f << buf;
  }
}

std::vector<EpochLog> read_training_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<EpochLog> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    EpochLog e;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &e.epoch, &e.lr, &e.p, &e.train_loss,
                    &e.val_position_loss, &e.val_velocity_loss, &e.max_clipped_norm, &e.wall_time) != 8) {
      throw ParseError(path.string(), lineno, "malformed training log row");
    }
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PoseTrainer

namespace {

std::vector<std::size_t> lengths_of(const PoseDataset& d) {
  std::vector<std::size_t> out;
  for (const auto& s : d.sequences) out.push_back(s.frames());
  return out;
}

json config_json(const TrainConfig& c) {
  return json{{"lr0", c.lr0},
              {"lr_decay", c.lr_decay},
              {"sampling_decay", c.sampling_decay},
              {"penalty_weight", c.penalty_weight},
              {"conditioning", c.conditioning},
              {"prediction", c.prediction},
              {"loss", to_string(c.loss)},
              {"batch_size", c.batch_size},
              {"samples_per_epoch", c.samples_per_epoch},
              {"scheduled_sampling", c.scheduled_sampling},
              {"validation_episodes", c.validation_episodes},
              {"seed", c.seed},
              {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}, {"clip_norm", c.adam.clip_norm}}}};
}

constexpr std::uint64_t kValidationStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

PoseTrainer::PoseTrainer(PoseNetwork& net, const PoseDataset& train, const PoseDataset* validation, TrainConfig cfg)
    : net_(&net),
      train_(&train),
      val_(validation),
      cfg_((cfg.validate(), cfg)),
      adam_(net.params(), cfg.adam),
      sampler_(lengths_of(train), cfg.conditioning + cfg.prediction, cfg.seed) {
  if (train.size() == 0) throw InputError("no clips found");
  check_compatible(net, train, {data::Episode{0, 0}}, 0);
  if (val_ != nullptr && cfg_.validation_episodes > 0) {
    data::EpisodeSampler vs(lengths_of(*val_), cfg_.conditioning + cfg_.prediction, cfg_.seed ^ kValidationStream);
    for (std::size_t i = 0; i < cfg_.validation_episodes; ++i) val_episodes_.push_back(vs.sample());
  }
}

EpochLog PoseTrainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  EpochLog row;
  row.epoch = epoch_;
  row.lr = learning_rate(cfg_, epoch_);
  row.p = sampling_probability(cfg_, epoch_);
  const std::size_t samples = cfg_.samples_per_epoch > 0 ? cfg_.samples_per_epoch : train_->size();
  const std::size_t batches = (samples + cfg_.batch_size - 1) / cfg_.batch_size;
  ad::ParameterSet& params = net_->params();
  double loss_sum = 0.0;
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const std::size_t size = std::min(cfg_.batch_size, samples - bi * cfg_.batch_size);
    std::vector<data::Episode> eps;
    for (std::size_t i = 0; i < size; ++i) eps.push_back(sampler_.sample());
    ad::Tape tape;
    ad::Binding b(tape, params, true);
    params.zero_grad();
    const RolloutResult r = scheduled_sampling_rollout(*net_, b, *train_, eps, cfg_, row.p, sampler_.rng());
    const double loss = r.loss.value().item();
    if (!std::isfinite(loss)) {
      std::string where;
      for (const auto& e : eps) where += " " + std::to_string(e.clip) + ":" + std::to_string(e.start);
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " + std::to_string(bi) +
                           " (episodes clip:start" + where + ")");
    }
    tape.backward(r.loss);
    b.accumulate_grads();
    StepReport rep;
    try {
      rep = adam_.step(params, row.lr);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch_) + ", batch " +
                           std::to_string(bi));
    }
    row.max_clipped_norm = std::max(row.max_clipped_norm, rep.clipped_norm);
    loss_sum += loss;
  }
  row.train_loss = loss_sum / static_cast<double>(batches);
  if (!val_episodes_.empty()) {
    const ValidationLoss v = validation_loss(*net_, *val_, val_episodes_, cfg_.conditioning, cfg_.prediction);
    row.val_position_loss = v.position;
    row.val_velocity_loss = v.velocity;
  }
  const double prev = log_.empty() ? 0.0 : log_.back().wall_time;
  row.wall_time = prev + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++epoch_;
  log_.push_back(row);
  return row;
}

const std::vector<EpochLog>& PoseTrainer::run(const std::function<bool(const EpochLog&)>& stop) {
  while (epoch_ < cfg_.epochs) {
    const EpochLog row = run_epoch();
    if (stop && stop(row)) break;
  }
  return log_;
}

models::Checkpoint PoseTrainer::checkpoint() const {
  json log = json::array();
  for (const auto& e : log_) {
    log.push_back({e.epoch, e.lr, e.p, e.train_loss, e.val_position_loss, e.val_velocity_loss, e.wall_time,
                   e.max_clipped_norm});
  }
  json meta{{"epoch", epoch_},
            {"adam_steps", adam_.steps()},
            {"rng", sampler_.rng().save_state()},
            {"train_config", config_json(cfg_)},
            {"log", log}};
  models::Checkpoint ck = models::make_checkpoint(*net_, meta.dump());
  for (auto& t : adam_.state(net_->params())) ck.tensors.push_back(std::move(t));
  return ck;
}

void PoseTrainer::resume(const models::Checkpoint& ckpt) {
  const PoseNetwork loaded = models::pose_network_from(ckpt);
  if (!(loaded.config() == net_->config())) throw ConfigError("checkpoint network config differs from the current one");
  json meta;
  try {
    meta = json::parse(ckpt.meta_json);
    json saved = meta.at("train_config");
    json now = config_json(cfg_);
    if (saved != now) throw ConfigError("checkpoint training config differs from the current one");
    for (std::size_t i = 0; i < loaded.params().size(); ++i) net_->params().value(i) = loaded.params().value(i);
    adam_.restore(net_->params(), ckpt.tensors, meta.at("adam_steps").get<std::size_t>());
    epoch_ = meta.at("epoch").get<std::size_t>();
    sampler_.rng().restore_state(meta.at("rng").get<std::string>());
    log_.clear();
    for (const json& r : meta.at("log")) {
      EpochLog e;
      e.epoch = r.at(0).get<std::size_t>();
      e.lr = r.at(1).get<double>();
      e.p = r.at(2).get<double>();
      e.train_loss = r.at(3).get<double>();
      e.val_position_loss = r.at(4).get<double>();
      e.val_velocity_loss = r.at(5).get<double>();
      e.wall_time = r.at(6).get<double>();
      e.max_clipped_norm = r.at(7).get<double>();
      log_.push_back(e);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint lacks training state: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pace training

PaceSample make_pace_sample(const models::LocomotionSequence& seq) {
  return {models::pace_inputs(seq.spline, seq.average_speed), models::pace_targets(seq)};
}

ad::Var pace_loss(const models::PaceNetwork& net, const ad::Binding& b, const PaceSample& sample) {
  if (sample.inputs.empty() || sample.inputs.size() != sample.targets.size()) {
    throw InputError("pace sample needs matching, non-empty inputs and targets");
  }
  ad::Tape& tape = b.tape();
  std::vector<ad::Var> inputs;
  for (const auto& in : sample.inputs) inputs.push_back(tape.constant(ad::Tensor({1, models::kPaceInputs}, {in[0], in[1]})));
  std::vector<ad::Var> rows;
  for (const ad::Var& out : net.forward(b, inputs)) {
    rows.push_back(ad::concat({ad::normalize(ad::slice(out, 0, 2)), ad::slice(out, 2, models::kPaceOutputs)}));
  }
  ad::Tensor target({sample.targets.size(), models::kPaceOutputs});
  for (std::size_t s = 0; s < sample.targets.size(); ++s) {
    for (std::size_t c = 0; c < models::kPaceOutputs; ++c) target.at(s, c) = sample.targets[s][c];
  }
  return loss_mae(ad::concat_rows(rows), tape.constant(std::move(target)));
}

std::vector<double> train_pace(models::PaceNetwork& net, const std::vector<PaceSample>& samples,
                               const PaceTrainConfig& cfg) {
  if (samples.empty()) throw InputError("pace training needs at least one sample");
  if (!(cfg.lr0 > 0.0) || !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) throw ConfigError("invalid pace learning rate");
  Adam adam(net.params(), cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);
    const double lr = cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    double sum = 0.0;
    for (std::size_t idx : order) {
      ad::Tape tape;
      ad::Binding b(tape, net.params(), true);
      net.params().zero_grad();
      const ad::Var loss = pace_loss(net, b, samples[idx]);
      if (!std::isfinite(loss.value().item())) {
        throw NumericalError("non-finite pace loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(idx));
      }
      tape.backward(loss);
      b.accumulate_grads();
      adam.step(net.params(), lr);
      sum += loss.value().item();
    }
    losses.push_back(sum / static_cast<double>(samples.size()));
  }
  return losses;
}

}  // namespace qmotion::train
