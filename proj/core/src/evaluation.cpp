#include "qmotion/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "qmotion/error.hpp"
#include "qmotion/random.hpp"

namespace qmotion::eval {

using models::Parameterization;

// ---------------------------------------------------------------------------
// Baselines

std::vector<Frame> baseline_zero_velocity(const std::vector<Frame>& prefix, std::size_t k) {
  if (prefix.empty()) throw InputError("baseline needs a non-empty prefix");
  return std::vector<Frame>(k, prefix.back());
}

std::vector<Frame> baseline_running_average(const std::vector<Frame>& prefix, std::size_t window, std::size_t k) {
  if (window == 0) throw ConfigError("running average window must be positive");
  if (prefix.size() < window) {
    throw InputError("prefix of " + std::to_string(prefix.size()) + " frames is shorter than the window " +
                     std::to_string(window));
  }
  const Frame& last = prefix.back();
  Frame avg(last.size(), rot::Quat{0, 0, 0, 0});
  for (std::size_t t = prefix.size() - window; t < prefix.size(); ++t) {
    if (prefix[t].size() != last.size()) throw ShapeError("prefix frames differ in joint count");
    for (std::size_t j = 0; j < last.size(); ++j) {
      const rot::Quat& q = prefix[t][j];
      const double s = rot::dot(q, last[j]) < 0.0 ? -1.0 : 1.0;
      avg[j].w += s * q.w;
      avg[j].x += s * q.x;
      avg[j].y += s * q.y;
      avg[j].z += s * q.z;
    }
  }
  for (auto& q : avg) q = rot::normalize(q);
  return std::vector<Frame>(k, avg);
}

// ---------------------------------------------------------------------------
// Angle errors

std::string to_string(AngleMetric m) { return m == AngleMetric::kEuclidean ? "euclidean" : "mean_l1"; }

AngleMetric parse_angle_metric(const std::string& s) {
  if (s == "euclidean") return AngleMetric::kEuclidean;
  if (s == "mean_l1") return AngleMetric::kMeanL1;
  throw ConfigError("unknown angle metric '" + s + "'");
}

double frame_angle_error(const kin::Skeleton& skel, const Frame& pred, const Frame& ref,
                         const AngleErrorOptions& opts) {
  const auto& active = skel.active_joints();
  if (pred.size() != active.size() || ref.size() != active.size()) {
    throw ShapeError("frame has " + std::to_string(pred.size()) + "/" + std::to_string(ref.size()) +
                     " rotations, skeleton has " + std::to_string(active.size()) + " active joints");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < active.size(); ++a) {
    if (!opts.include_root && active[a] == 0) continue;
    const rot::EulerOrder order = opts.order.value_or(skel.joint(active[a]).euler_order);
    const auto p = rot::quat_to_euler(pred[a], order).angles;
    const auto r = rot::quat_to_euler(ref[a], order).angles;
    const double d[3] = {rot::angle_distance_l1(p.a1, r.a1), rot::angle_distance_l1(p.a2, r.a2),
                         rot::angle_distance_l1(p.a3, r.a3)};
    for (double v : d) acc += opts.metric == AngleMetric::kEuclidean ? v * v : v;
    count += 3;
  }
  if (count == 0) return 0.0;
  return opts.metric == AngleMetric::kEuclidean ? std::sqrt(acc) : acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Predictors

namespace {

std::vector<Frame> prefix_of(const data::MotionClip& clip, std::size_t start, std::size_t n) {
  std::vector<Frame> out;
  for (std::size_t t = start; t < start + n; ++t) out.push_back(clip.pose(t).rotations);
  return out;
}

Predictor baseline(std::function<std::vector<Frame>(const std::vector<Frame>&, std::size_t)> f) {
  return [f](const std::vector<data::MotionClip>& clips, const std::vector<data::Episode>& chunks, std::size_t n,
             std::size_t k) {
    std::vector<std::vector<Frame>> out;
    out.reserve(chunks.size());
    for (const auto& c : chunks) out.push_back(f(prefix_of(clips.at(c.clip), c.start, n), k));
    return out;
  };
}

}  // namespace

Predictor zero_velocity_predictor() { return baseline(baseline_zero_velocity); }

Predictor running_average_predictor(std::size_t window) {
  return baseline([window](const std::vector<Frame>& p, std::size_t k) { return baseline_running_average(p, window, k); });
}

Predictor model_predictor(const models::PoseNetwork& net, std::size_t batch) {
  const auto p = net.config().parameterization;
  if (p == Parameterization::kPosition) throw ConfigError("angle evaluation needs a rotation model");
  if (batch == 0) throw ConfigError("prediction batch must be positive");
  return [&net, p, batch](const std::vector<data::MotionClip>& clips, const std::vector<data::Episode>& chunks,
                          std::size_t n, std::size_t k) {
    const train::PoseDataset ds = train::make_pose_dataset(clips, p);
    std::vector<std::vector<Frame>> out;
    out.reserve(chunks.size());
    for (std::size_t b0 = 0; b0 < chunks.size(); b0 += batch) {
      const std::vector<data::Episode> part(chunks.begin() + static_cast<std::ptrdiff_t>(b0),
                                            chunks.begin() + static_cast<std::ptrdiff_t>(std::min(chunks.size(), b0 + batch)));
      for (const auto& episode : train::predict_episodes(net, ds, part, n, k)) {
        std::vector<Frame> frames;
        for (const auto& f : episode) frames.push_back(models::features_to_quats(p, f));
        out.push_back(std::move(frames));
      }
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Protocol

void EvalProtocol::validate() const {
  if (samples_per_sequence == 0) throw ConfigError("samples per sequence must be positive");
  if (conditioning == 0) throw ConfigError("conditioning length must be positive");
  if (!(frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  if (horizons_ms.empty()) throw ConfigError("at least one horizon is required");
  std::set<std::size_t> seen;
  for (double ms : horizons_ms) {
    const double f = std::round(ms * frame_rate / 1000.0);
    if (!(f >= 1.0)) throw ConfigError("horizon " + std::to_string(ms) + " ms is shorter than one frame");
    if (!seen.insert(static_cast<std::size_t>(f)).second) {
      throw ConfigError("horizon " + std::to_string(ms) + " ms maps to an already used frame");
    }
  }
  if (!(ci_low_quantile >= 0.0 && ci_low_quantile <= ci_high_quantile && ci_high_quantile <= 1.0)) {
    throw ConfigError("confidence quantiles must satisfy 0 <= low <= high <= 1");
  }
}

std::vector<std::size_t> EvalProtocol::horizon_frames() const {
  std::vector<std::size_t> out;
  for (double ms : horizons_ms) out.push_back(static_cast<std::size_t>(std::round(ms * frame_rate / 1000.0)));
  return out;
}

std::size_t EvalProtocol::max_horizon() const {
  const auto h = horizon_frames();
  return *std::max_element(h.begin(), h.end());
}

std::string EvalProtocol::descriptor() const {
  std::ostringstream s;
  s << "S=" << samples_per_sequence << " seed=" << seed << " n=" << conditioning << " fps=" << frame_rate
    << " metric=" << to_string(angles.metric) << " root=" << (angles.include_root ? "yes" : "no");
  if (angles.order) s << " order=" << rot::to_string(*angles.order);
  return s.str();
}

ChunkPlan plan_chunks(const std::vector<data::MotionClip>& clips, const EvalProtocol& protocol) {
  protocol.validate();
  const std::size_t span = protocol.conditioning + protocol.max_horizon();
  Rng rng(protocol.seed);
  ChunkPlan plan;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const std::size_t len = clips[c].frames();
    if (len < span) {
      plan.skipped.push_back(c);
      continue;
    }
    for (std::size_t s = 0; s < protocol.samples_per_sequence; ++s) {
      plan.chunks.push_back({c, static_cast<std::size_t>(rng.uniform_int(0, len - span))});
    }
  }
  return plan;
}

const EvalRow& EvalReport::row(const std::string& action, double horizon_ms) const {
  for (const auto& r : rows) {
    if (r.action == action && r.horizon_ms == horizon_ms) return r;
  }
  throw InputError("report has no row for " + action + " at " + std::to_string(horizon_ms) + " ms");
}

std::vector<std::string> EvalReport::actions() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.action) == out.end()) out.push_back(r.action);
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream s;
  s << "action,horizon_ms,mean_error,ci_low,ci_high,n_samples\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%g,%.17g,%.17g,%.17g,%zu\n", r.action.c_str(), r.horizon_ms, r.mean_error,
                  r.ci_low, r.ci_high, r.n_samples);
    s << buf;
  }
  return s.str();
}

std::string EvalReport::to_table() const {
  std::vector<double> horizons;
  for (const auto& r : rows) {
    if (std::find(horizons.begin(), horizons.end(), r.horizon_ms) == horizons.end()) horizons.push_back(r.horizon_ms);
  }
  std::size_t width = 8;
  for (const auto& a : actions()) width = std::max(width, a.size() + 2);
  std::ostringstream s;
  s << "protocol: " << protocol << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "action");
  s << buf;
  for (double h : horizons) {
    std::snprintf(buf, sizeof buf, "%10g ms", h);
    s << buf;
  }
  s << "   samples\n";
  for (const auto& a : actions()) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), a.c_str());
    s << buf;
    std::size_t n = 0;
    for (double h : horizons) {
      const EvalRow& r = row(a, h);
      std::snprintf(buf, sizeof buf, "%13.3f", r.mean_error);
      s << buf;
      n = r.n_samples;
    }
    s << "   " << n << "\n";
  }
  if (skipped_clips > 0) s << "skipped clips: " << skipped_clips << "\n";
  return s.str();
}

EvalReport run_protocol(const Predictor& predictor, const std::vector<data::MotionClip>& clips,
                        const EvalProtocol& protocol) {
  protocol.validate();
  if (clips.empty()) throw InputError("no clips found");
  for (const auto& c : clips) {
    if (std::abs(c.frame_rate - protocol.frame_rate) > 1e-6) {
      throw InputError("clip '" + c.subject + "/" + c.action + "' is at " + std::to_string(c.frame_rate) +
                       " Hz, the protocol expects " + std::to_string(protocol.frame_rate) + " Hz");
    }
    if (!(c.skeleton == clips[0].skeleton)) throw InputError("all test clips must share one skeleton");
  }
  const ChunkPlan plan = plan_chunks(clips, protocol);
  EvalReport report;
  report.protocol = protocol.descriptor();
  report.skipped_clips = plan.skipped.size();
  for (std::size_t c : plan.skipped) {
    report.warnings.push_back("skipped clip " + std::to_string(c) + " (" + clips[c].action + "): " +
                              std::to_string(clips[c].frames()) + " frames < n + max horizon");
  }
  const std::size_t n = protocol.conditioning, k = protocol.max_horizon();
  const auto horizons = protocol.horizon_frames();
  std::vector<std::vector<Frame>> preds;
  if (!plan.chunks.empty()) preds = predictor(clips, plan.chunks, n, k);
  if (preds.size() != plan.chunks.size()) throw ShapeError("predictor returned the wrong number of chunks");

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::vector<double>>> errors;
  for (const auto& c : clips) {
    if (std::find(order.begin(), order.end(), c.action) == order.end()) {
      order.push_back(c.action);
      errors[c.action].assign(horizons.size(), {});
    }
  }
  const kin::Skeleton& skel = clips[0].skeleton;
  for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
    const auto& chunk = plan.chunks[i];
    const data::MotionClip& clip = clips[chunk.clip];
    if (preds[i].size() < k) throw ShapeError("predictor returned too few frames");
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      const std::size_t f = horizons[h] - 1;
      const Frame ref = clip.pose(chunk.start + n + f).rotations;
      errors[clip.action][h].push_back(frame_angle_error(skel, preds[i][f], ref, protocol.angles));
    }
  }
  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      EvalRow row;
      row.action = order[a];
      row.horizon_ms = protocol.horizons_ms[h];
      row.samples = std::move(errors[order[a]][h]);
      row.n_samples = row.samples.size();
      if (row.n_samples == 0) {
        report.warnings.push_back("no samples for action " + order[a]);
      } else {
        double sum = 0.0;
        for (double e : row.samples) sum += e;
        row.mean_error = sum / static_cast<double>(row.n_samples);
        row.ci_low = row.ci_high = row.mean_error;
        if (protocol.bootstrap_resamples > 0 && row.n_samples >= 2) {
          const Interval ci = bootstrap_ci(row.samples, protocol.bootstrap_resamples, protocol.ci_low_quantile,
                                           protocol.ci_high_quantile, protocol.seed + 7919 * (a * horizons.size() + h));
          row.ci_low = ci.low;
          row.ci_high = ci.high;
        }
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Statistics

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Interval bootstrap_ci(const std::vector<double>& samples, std::size_t resamples, double q_low, double q_high,
                      std::uint64_t seed) {
  if (samples.size() < 2) throw InputError("bootstrap needs at least two samples");
  if (resamples == 0) throw ConfigError("bootstrap needs at least one resample");
  if (!(q_low >= 0.0 && q_low <= q_high && q_high <= 1.0)) throw ConfigError("bad bootstrap quantiles");
  Rng rng(seed);
  const std::size_t n = samples.size();
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += samples[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    m = s / static_cast<double>(n);
  }
  return {quantile(means, q_low), quantile(means, q_high)};
}

double tail_mass(const std::vector<double>& values, double threshold) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw ConfigError("histogram needs bins > 0 and hi > lo");
  Histogram h;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double f = (v - lo) / (hi - lo) * static_cast<double>(bins);
    const auto b = static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

std::string Histogram::to_csv() const {
  std::ostringstream s;
  s << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) s << edges[i] << "," << edges[i + 1] << "," << counts[i] << "\n";
  return s.str();
}

double bone_length_deviation(const kin::Skeleton& skel, const std::vector<kin::JointPositions>& frames) {
  double worst = 0.0;
  for (const auto& f : frames) {
    if (f.size() != skel.size()) throw ShapeError("frame joint count does not match the skeleton");
    for (std::size_t j = 1; j < skel.size(); ++j) {
      const auto& p = f[j];
      const auto& q = f[static_cast<std::size_t>(skel.parent(j))];
      const rot::Vec3 d{p.x - q.x, p.y - q.y, p.z - q.z};
      worst = std::max(worst, std::abs(rot::norm(d) - rot::norm(skel.joint(j).offset)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<ConditioningRow> ablate_conditioning(const std::vector<std::size_t>& ns,
                                                 const std::function<double(std::size_t)>& train_and_eval) {
  std::vector<ConditioningRow> out;
  for (std::size_t n : ns) out.push_back({n, train_and_eval(n)});
  return out;
}

std::size_t plateau_index(const std::vector<double>& errors, double rel) {
  if (errors.empty()) throw InputError("plateau of an empty curve");
  std::size_t idx = errors.size() - 1;
  for (std::size_t i = errors.size() - 1; i-- > 0;) {
    if (std::abs(errors[i + 1] - errors[i]) < rel * std::abs(errors[i])) {
      idx = i;
    } else {
      break;
    }
  }
  return idx;
}

namespace {

kin::JointPositions features_to_positions(const kin::Skeleton& skel, Parameterization p, const std::vector<double>& f) {
  if (p == Parameterization::kPosition) {
    kin::JointPositions out(f.size() / 3);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = {f[3 * j], f[3 * j + 1], f[3 * j + 2]};
    return out;
  }
  kin::Pose pose;
  pose.rotations = models::features_to_quats(p, f);
  return kin::forward_kinematics(skel, pose);
}

std::vector<data::Episode> draw_episodes(const train::PoseDataset& ds, std::size_t length, std::size_t count,
                                         std::uint64_t seed) {
  std::vector<std::size_t> lengths;
  for (const auto& s : ds.sequences) lengths.push_back(s.frames());
  data::EpisodeSampler sampler(lengths, length, seed);
  std::vector<data::Episode> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.sample());
  return out;
}

std::vector<double> collect_velocity_errors(const std::vector<std::vector<kin::JointPositions>>& pred,
                                            const std::vector<std::vector<kin::JointPositions>>& ref) {
  std::vector<double> out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto v = kin::velocity_errors(pred[i], ref[i]);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void fill_losses(RegressionVariant& v, const std::vector<std::vector<kin::JointPositions>>& pred,
                 const std::vector<std::vector<kin::JointPositions>>& ref) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::span<const kin::JointPositions> p(pred[i]), r(ref[i]);
    v.position_loss += kin::position_error(p.subspan(1), r.subspan(1));
    v.velocity_loss += kin::velocity_error(p, r);
  }
  v.position_loss /= static_cast<double>(pred.size());
  v.velocity_loss /= static_cast<double>(pred.size());
  v.velocity_errors = collect_velocity_errors(pred, ref);
}

}  // namespace

std::vector<std::vector<kin::JointPositions>> predicted_positions(const models::PoseNetwork& net,
                                                                  const train::PoseDataset& data,
                                                                  const std::vector<data::Episode>& episodes,
                                                                  std::size_t n, std::size_t k) {
  const auto preds = train::predict_episodes(net, data, episodes, n, k);
  std::vector<std::vector<kin::JointPositions>> out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    std::vector<kin::JointPositions> seq{data.sequences[episodes[i].clip].positions[episodes[i].start + n - 1]};
    for (const auto& f : preds[i]) seq.push_back(features_to_positions(data.skeleton, data.parameterization, f));
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<kin::JointPositions>> reference_positions(const train::PoseDataset& data,
                                                                  const std::vector<data::Episode>& episodes,
                                                                  std::size_t n, std::size_t k) {
  std::vector<std::vector<kin::JointPositions>> out;
  for (const auto& e : episodes) {
    const auto& pos = data.sequences.at(e.clip).positions;
    if (e.start + n + k > pos.size()) throw InputError("episode exceeds its clip");
    out.emplace_back(pos.begin() + static_cast<std::ptrdiff_t>(e.start + n - 1),
                     pos.begin() + static_cast<std::ptrdiff_t>(e.start + n + k));
  }
  return out;
}

std::vector<ParameterizationRun> compare_parameterizations(const std::vector<data::MotionClip>& train_clips,
                                                           const std::vector<data::MotionClip>& val_clips,
                                                           const ComparisonConfig& cfg) {
  if (cfg.variants.empty()) throw ConfigError("no parameterizations to compare");
  std::vector<ParameterizationRun> out;
  for (Parameterization p : cfg.variants) {
    if (p == Parameterization::kPosition) throw ConfigError("compare_parameterizations covers rotation outputs only");
    const train::PoseDataset tr = train::make_pose_dataset(train_clips, p);
    const train::PoseDataset va = train::make_pose_dataset(val_clips, p);
    models::PoseNetworkConfig mc = cfg.base;
    mc.parameterization = p;
    if (p != Parameterization::kQuaternion) mc.mode = models::OutputMode::kAbsolute;
    mc.include_controls = mc.include_translations = false;
    models::PoseNetwork net(mc, cfg.model_seed);
    train::TrainConfig tc = cfg.train;
    tc.loss = train::LossKind::kPositional;
    train::PoseTrainer trainer(net, tr, &va, tc);
    ParameterizationRun run;
    run.parameterization = p;
    run.log = trainer.run();
    const std::size_t n = tc.conditioning, k = tc.prediction;
    const auto episodes = draw_episodes(va, n + k, cfg.eval_episodes, tc.seed + 1);
    const auto pred = predicted_positions(net, va, episodes, n, k);
    const auto ref = reference_positions(va, episodes, n, k);
    RegressionVariant v;
    fill_losses(v, pred, ref);
    run.final_position = v.position_loss;
    run.final_velocity = v.velocity_loss;
    run.velocity_errors = std::move(v.velocity_errors);
    out.push_back(std::move(run));
  }
  return out;
}

const RegressionVariant& RegressionReport::variant(const std::string& name) const {
  for (const auto& v : variants) {
    if (v.name == name) return v;
  }
  throw InputError("no variant named " + name);
}

RegressionReport compare_position_regression(const models::PoseNetwork& rotation_model,
                                             const models::PoseNetwork& position_model,
                                             const std::vector<data::MotionClip>& clips, std::size_t n,
                                             std::size_t k, std::size_t episodes, std::uint64_t seed,
                                             const kin::IkConfig& ik) {
  if (position_model.config().parameterization != Parameterization::kPosition) {
    throw ConfigError("the position model must regress joint positions");
  }
  if (rotation_model.config().parameterization == Parameterization::kPosition) {
    throw ConfigError("the rotation model must output rotations");
  }
  const train::PoseDataset rot_ds = train::make_pose_dataset(clips, rotation_model.config().parameterization);
  const train::PoseDataset pos_ds = train::make_pose_dataset(clips, Parameterization::kPosition);
  const auto eps = draw_episodes(rot_ds, n + k, episodes, seed);
  const auto ref = reference_positions(rot_ds, eps, n, k);
  const kin::Skeleton& skel = rot_ds.skeleton;

  RegressionReport report;
  RegressionVariant q;
  q.name = "quaternion";
  const auto qp = predicted_positions(rotation_model, rot_ds, eps, n, k);
  fill_losses(q, qp, ref);
  RegressionVariant raw;
  raw.name = "position";
  const auto pp = predicted_positions(position_model, pos_ds, eps, n, k);
  fill_losses(raw, pp, ref);
  RegressionVariant proj;
  proj.name = "position+ik";
  std::vector<std::vector<kin::JointPositions>> ikp;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto& seq = rot_ds.sequences[eps[i].clip];
    kin::Pose init;
    init.rotations = seq.rotations[eps[i].start + n - 1];
    const std::span<const kin::JointPositions> targets(pp[i].data() + 1, k);
    std::vector<kin::JointPositions> frames{pp[i][0]};
    for (kin::Pose pose : kin::ik_reproject_sequence(skel, targets, init, ik)) {
      pose.root_position = {};
      frames.push_back(kin::forward_kinematics(skel, pose));
    }
    ikp.push_back(std::move(frames));
  }
  fill_losses(proj, ikp, ref);
  auto deviation = [&](const std::vector<std::vector<kin::JointPositions>>& set) {
    std::vector<kin::JointPositions> all;
    for (const auto& seq : set) all.insert(all.end(), seq.begin() + 1, seq.end());
    return bone_length_deviation(skel, all);
  };
  q.bone_length_deviation = deviation(qp);
  raw.bone_length_deviation = deviation(pp);
  proj.bone_length_deviation = deviation(ikp);
  report.variants = {std::move(q), std::move(raw), std::move(proj)};
  return report;
}

// ---------------------------------------------------------------------------
// Exponential-map text data

kin::Skeleton expmap_benchmark_skeleton() {
  static const int parents[32] = {-1, 0,  1,  2,  3,  4,  0,  6,  7,  8,  9,  0,  11, 12, 13, 14,
                                  12, 16, 17, 18, 19, 20, 19, 22, 12, 24, 25, 26, 27, 28, 27, 30};
  std::vector<kin::Joint> joints;
  for (int j = 0; j < 32; ++j) {
    kin::Joint jt;
    jt.name = "joint" + std::to_string(j);
    jt.parent = parents[j];
    jt.euler_order = rot::EulerOrder::kXYZ;
    joints.push_back(jt);
  }
  return kin::Skeleton(std::move(joints));
}

data::MotionClip parse_expmap_text(const std::string& text, const kin::Skeleton& skel, double frame_rate,
                                   const std::string& source) {
  if (!(frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  const std::size_t J = skel.size();
  data::MotionClip clip;
  clip.skeleton = skel;
  clip.frame_rate = frame_rate;
  clip.rotations = rot::QuaternionSequence(0, J, frame_rate);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<rot::Quat> frame(J);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> values;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(source, lineno, "not a number: '" + cell + "'");
      }
    }
    if (values.size() != 3 + 3 * J) {
      throw ParseError(source, lineno, "expected " + std::to_string(3 + 3 * J) + " values, got " +
                                           std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ParseError(source, lineno, "non-finite value");
    }
    clip.root_positions.push_back({values[0], values[1], values[2]});
    for (std::size_t j = 0; j < J; ++j) {
      const rot::Quat q = rot::expmap_to_quat({values[3 + 3 * j], values[4 + 3 * j], values[5 + 3 * j]});
      frame[j] = skel.joint(j).dof_active || !skel.joint(j).constant_rotation ? q : *skel.joint(j).constant_rotation;
    }
    clip.rotations.push_frame(frame);
  }
  if (clip.frames() == 0) throw ParseError(source, lineno, "no frames");
  return clip;
}

data::MotionClip load_expmap_text(const std::filesystem::path& path, const kin::Skeleton& skel, double frame_rate) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  data::MotionClip clip = parse_expmap_text(s.str(), skel, frame_rate, path.string());
  clip.action = path.stem().string();
  return clip;
}

}  // namespace qmotion::eval
