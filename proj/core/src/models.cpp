#include "qmotion/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qmotion/error.hpp"
#include "qmotion/random.hpp"

namespace qmotion::models {

using nlohmann::json;

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

double fan_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::string layer_name(const char* prefix, std::size_t l, const char* what) {
  return std::string(prefix) + std::to_string(l) + "." + what;
}

rot::EulerOrder euler_order_of(Parameterization p) {
  return p == Parameterization::kEulerXYZ ? rot::EulerOrder::kXYZ : rot::EulerOrder::kYZX;
}

std::size_t rows_of(ad::Var v) { return v.value().rank() == 0 ? 0 : v.value().dim(0); }

}  // namespace

// ---------------------------------------------------------------------------
// Enumerations

std::string to_string(Backbone b) { return b == Backbone::kRecurrent ? "recurrent" : "convolutional"; }
std::string to_string(OutputMode m) { return m == OutputMode::kAbsolute ? "absolute" : "velocity"; }

std::string to_string(Parameterization p) {
  switch (p) {
    case Parameterization::kQuaternion: return "quaternion";
    case Parameterization::kExpMap: return "expmap";
    case Parameterization::kEulerXYZ: return "euler_xyz";
    case Parameterization::kEulerYZX: return "euler_yzx";
    case Parameterization::kPosition: return "position";
  }
  return "?";
}

Backbone parse_backbone(const std::string& s) {
  if (s == "recurrent" || s == "gru") return Backbone::kRecurrent;
  if (s == "convolutional" || s == "conv") return Backbone::kConvolutional;
  throw ConfigError("unknown backbone '" + s + "'");
}

OutputMode parse_output_mode(const std::string& s) {
  if (s == "absolute") return OutputMode::kAbsolute;
  if (s == "velocity") return OutputMode::kVelocity;
  throw ConfigError("unknown output mode '" + s + "'");
}

Parameterization parse_parameterization(const std::string& s) {
  for (auto p : {Parameterization::kQuaternion, Parameterization::kExpMap, Parameterization::kEulerXYZ,
                 Parameterization::kEulerYZX, Parameterization::kPosition}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown parameterization '" + s + "'");
}

std::size_t joint_width(Parameterization p) { return p == Parameterization::kQuaternion ? 4 : 3; }

// ---------------------------------------------------------------------------
// Config

PoseNetworkConfig PoseNetworkConfig::desk(std::size_t joints) {
  PoseNetworkConfig c;
  c.joints = joints;
  c.hidden = 64;
  c.channels = 64;
  return c;
}

PoseNetworkConfig PoseNetworkConfig::full(std::size_t joints) {
  PoseNetworkConfig c;
  c.joints = joints;
  return c;
}

void PoseNetworkConfig::validate() const {
  if (parameterization == Parameterization::kPosition) {
    if (position_joints == 0) throw ConfigError("position model needs position_joints > 0");
  } else if (joints == 0) {
    throw ConfigError("pose network needs at least one joint");
  }
  if (mode == OutputMode::kVelocity && parameterization != Parameterization::kQuaternion) {
    throw ConfigError("velocity mode requires quaternion outputs");
  }
  if (backbone == Backbone::kRecurrent && (hidden == 0 || layers == 0)) {
    throw ConfigError("recurrent backbone needs hidden > 0 and layers > 0");
  }
  if (backbone == Backbone::kConvolutional) {
    if (channels == 0 || conv_layers < 2 || filter_width < 2) {
      throw ConfigError("convolutional backbone needs channels > 0, >= 2 layers and filter width >= 2");
    }
    if (conv_layers > 16) throw ConfigError("too many convolution layers");
  }
  if (include_controls && control_units == 0) throw ConfigError("control encoder needs units > 0");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope must lie in [0, 1)");
}

std::size_t PoseNetworkConfig::pose_size() const {
  return parameterization == Parameterization::kPosition ? 3 * position_joints
                                                         : joint_width(parameterization) * joints;
}

std::size_t PoseNetworkConfig::input_size() const {
  return pose_size() + (include_translations ? kTranslationSize : 0) + (include_controls ? control_units : 0);
}

std::size_t PoseNetworkConfig::output_size() const {
  return pose_size() + (include_translations ? kTranslationSize : 0);
}

std::size_t PoseNetworkConfig::dilation(std::size_t k) const { return std::size_t{1} << k; }

std::size_t PoseNetworkConfig::receptive_field() const {
  std::size_t rf = 1;
  for (std::size_t k = 0; k < conv_layers; ++k) rf += (filter_width - 1) * dilation(k);
  return rf;
}

std::string to_json(const PoseNetworkConfig& c) {
  json j{{"joints", c.joints},
         {"position_joints", c.position_joints},
         {"mode", to_string(c.mode)},
         {"backbone", to_string(c.backbone)},
         {"parameterization", to_string(c.parameterization)},
         {"hidden", c.hidden},
         {"layers", c.layers},
         {"channels", c.channels},
         {"conv_layers", c.conv_layers},
         {"filter_width", c.filter_width},
         {"include_controls", c.include_controls},
         {"include_translations", c.include_translations},
         {"control_units", c.control_units},
         {"leaky_slope", c.leaky_slope}};
  return j.dump();
}

PoseNetworkConfig pose_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    PoseNetworkConfig c;
    c.joints = j.at("joints").get<std::size_t>();
    c.position_joints = j.value("position_joints", std::size_t{0});
    c.mode = parse_output_mode(j.at("mode").get<std::string>());
    c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.parameterization = parse_parameterization(j.value("parameterization", std::string("quaternion")));
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.conv_layers = j.at("conv_layers").get<std::size_t>();
    c.filter_width = j.at("filter_width").get<std::size_t>();
    c.include_controls = j.at("include_controls").get<bool>();
    c.include_translations = j.at("include_translations").get<bool>();
    c.control_units = j.value("control_units", std::size_t{30});
    c.leaky_slope = j.value("leaky_slope", 0.05);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("pose network config: ") + e.what());
  }
}

std::size_t expected_parameter_count(const PoseNetworkConfig& c) {
  c.validate();
  std::size_t n = 0;
  if (c.include_controls) n += kControlSize * c.control_units + c.control_units + c.control_units * c.control_units + c.control_units;
  const std::size_t out = c.output_size();
  if (c.backbone == Backbone::kRecurrent) {
    const std::size_t H = c.hidden;
    std::size_t in = c.input_size();
    for (std::size_t l = 0; l < c.layers; ++l) {
      n += 3 * H * (in + H) + 6 * H + H;
      in = H;
    }
    n += H * out + out;
  } else {
    std::size_t in = c.input_size();
    for (std::size_t k = 0; k < c.conv_layers; ++k) {
      const std::size_t fan_out = k + 1 == c.conv_layers ? out : c.channels;
      n += c.filter_width * in * fan_out + fan_out;
      in = fan_out;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Pose network

PoseNetwork::PoseNetwork(PoseNetworkConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  if (cfg_.include_controls) {
    const std::size_t U = cfg_.control_units;
    params_.add("ctrl.w1", uniform_tensor({kControlSize, U}, fan_bound(kControlSize), rng));
    params_.add("ctrl.b1", uniform_tensor({U}, fan_bound(kControlSize), rng));
    params_.add("ctrl.w2", uniform_tensor({U, U}, fan_bound(U), rng));
    params_.add("ctrl.b2", uniform_tensor({U}, fan_bound(U), rng));
  }
  const std::size_t out = cfg_.output_size();
  if (cfg_.backbone == Backbone::kRecurrent) {
    const std::size_t H = cfg_.hidden;
    const double k = fan_bound(H);
    std::size_t in = cfg_.input_size();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      params_.add(layer_name("gru", l, "w_ih"), uniform_tensor({in, 3 * H}, k, rng));
      params_.add(layer_name("gru", l, "w_hh"), uniform_tensor({H, 3 * H}, k, rng));
      params_.add(layer_name("gru", l, "b_ih"), uniform_tensor({3 * H}, k, rng));
      params_.add(layer_name("gru", l, "b_hh"), uniform_tensor({3 * H}, k, rng));
      params_.add(layer_name("gru", l, "h0"), ad::Tensor({H}, 0.0));
      in = H;
    }
    params_.add("head.w", uniform_tensor({H, out}, fan_bound(H), rng));
    params_.add("head.b", ad::Tensor({out}, 0.0));
  } else {
    std::size_t in = cfg_.input_size();
    for (std::size_t l = 0; l < cfg_.conv_layers; ++l) {
      const std::size_t fan_out = l + 1 == cfg_.conv_layers ? out : cfg_.channels;
      const double k = fan_bound(in * cfg_.filter_width);
      for (std::size_t tap = 0; tap < cfg_.filter_width; ++tap) {
        params_.add(layer_name("conv", l, ("w" + std::to_string(tap)).c_str()), uniform_tensor({in, fan_out}, k, rng));
      }
      params_.add(layer_name("conv", l, "b"), ad::Tensor({fan_out}, 0.0));
      in = fan_out;
    }
  }
  // Output bias starts at the identity rotation; translation deltas start at zero.
  const bool recurrent = cfg_.backbone == Backbone::kRecurrent;
  const std::string last = recurrent ? std::string("head.") : layer_name("conv", cfg_.conv_layers - 1, "");
  if (cfg_.parameterization == Parameterization::kQuaternion) {
    ad::Tensor& b = params_.value(last + "b");
    for (std::size_t j = 0; j < cfg_.joints; ++j) b[4 * j] = 1.0;
  }
  if (cfg_.include_translations && cfg_.mode == OutputMode::kVelocity) {
    std::vector<std::string> weights;
    if (recurrent) {
      weights.push_back("head.w");
    } else {
      for (std::size_t tap = 0; tap < cfg_.filter_width; ++tap) weights.push_back(last + "w" + std::to_string(tap));
    }
    for (const std::string& w : weights) {
      ad::Tensor& t = params_.value(w);
      for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = cfg_.pose_size(); c < out; ++c) t.at(r, c) = 0.0;
      }
    }
  }
}

ad::Var PoseNetwork::encode_controls(const ad::Binding& b, ad::Var controls) const {
  if (!cfg_.include_controls) throw ConfigError("model has no control encoder");
  if (controls.value().rank() != 2 || controls.value().cols() != kControlSize) {
    throw ShapeError("controls must be [B, 6], got " + ad::shape_string(controls.shape()));
  }
  ad::Var h = ad::leaky_relu(ad::add_bias(ad::matmul(controls, b["ctrl.w1"]), b["ctrl.b1"]), cfg_.leaky_slope);
  return ad::leaky_relu(ad::add_bias(ad::matmul(h, b["ctrl.w2"]), b["ctrl.b2"]), cfg_.leaky_slope);
}

void PoseNetwork::check_input(const StepInput& in, std::size_t batch) const {
  auto expect = [&](ad::Var v, std::size_t cols, const char* what) {
    if (!v.valid()) throw ShapeError(std::string("missing ") + what + " input");
    const ad::Tensor& t = v.value();
    if (t.rank() != 2 || t.dim(0) != batch || t.dim(1) != cols) {
      throw ShapeError(std::string(what) + " must be [" + std::to_string(batch) + ", " + std::to_string(cols) +
                       "], got " + ad::shape_string(t.shape()));
    }
  };
  expect(in.pose, cfg_.pose_size(), "pose");
  if (cfg_.include_translations) expect(in.translations, kTranslationSize, "translations");
  if (cfg_.include_controls) expect(in.controls, kControlSize, "controls");
}

ad::Var PoseNetwork::features(const ad::Binding& b, const StepInput& in) const {
  std::vector<ad::Var> parts{in.pose};
  if (cfg_.include_translations) parts.push_back(in.translations);
  if (cfg_.include_controls) parts.push_back(encode_controls(b, in.controls));
  return parts.size() == 1 ? parts[0] : ad::concat(parts);
}

StepOutput PoseNetwork::finish(ad::Var raw, const StepInput& prev) const {
  StepOutput out;
  const std::size_t P = cfg_.pose_size();
  const std::size_t B = rows_of(raw);
  out.raw = cfg_.include_translations ? ad::slice(raw, 0, P) : raw;
  if (cfg_.parameterization == Parameterization::kQuaternion) {
    const std::size_t J = cfg_.joints;
    ad::Var q = ad::normalize(ad::reshape(out.raw, {B * J, 4}));
    if (cfg_.mode == OutputMode::kVelocity) {
      q = ad::normalize(ad::qmul(q, ad::reshape(prev.pose, {B * J, 4})));
    }
    out.pose = ad::reshape(q, {B, P});
  } else {
    out.pose = out.raw;
  }
  if (cfg_.include_translations) {
    ad::Var t = ad::slice(raw, P, P + kTranslationSize);
    out.translations = cfg_.mode == OutputMode::kVelocity ? ad::add(prev.translations, t) : t;
  }
  return out;
}

std::vector<ad::Var> PoseNetwork::initial_state(const ad::Binding& b, std::size_t batch) const {
  if (cfg_.backbone != Backbone::kRecurrent) throw ConfigError("initial_state needs a recurrent backbone");
  std::vector<ad::Var> state;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    ad::Var zeros = b.tape().constant(ad::Tensor({batch, cfg_.hidden}, 0.0));
    state.push_back(ad::add_bias(zeros, b[layer_name("gru", l, "h0")]));
  }
  return state;
}

StepOutput PoseNetwork::step(const ad::Binding& b, std::vector<ad::Var>& state, const StepInput& in) const {
  if (cfg_.backbone != Backbone::kRecurrent) throw ConfigError("step needs a recurrent backbone");
  if (state.size() != cfg_.layers) throw ShapeError("recurrent state has the wrong number of layers");
  const std::size_t B = rows_of(in.pose);
  check_input(in, B);
  const std::size_t H = cfg_.hidden;
  ad::Var x = features(b, in);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    ad::Var h = state[l];
    if (h.value().rank() != 2 || h.value().dim(0) != B || h.value().dim(1) != H) {
      throw ShapeError("recurrent state must be [B, H], got " + ad::shape_string(h.shape()));
    }
    ad::Var gi = ad::add_bias(ad::matmul(x, b[layer_name("gru", l, "w_ih")]), b[layer_name("gru", l, "b_ih")]);
    ad::Var gh = ad::add_bias(ad::matmul(h, b[layer_name("gru", l, "w_hh")]), b[layer_name("gru", l, "b_hh")]);
    ad::Var r = ad::sigmoid(ad::slice(gi, 0, H) + ad::slice(gh, 0, H));
    ad::Var z = ad::sigmoid(ad::slice(gi, H, 2 * H) + ad::slice(gh, H, 2 * H));
    ad::Var n = ad::tanh(ad::slice(gi, 2 * H, 3 * H) + r * ad::slice(gh, 2 * H, 3 * H));
    ad::Var next = n + z * (h - n);
    if (!next.value().all_finite()) throw NumericalError("non-finite recurrent state in layer " + std::to_string(l));
    state[l] = next;
    x = next;
  }
  ad::Var raw = ad::add_bias(ad::matmul(x, b["head.w"]), b["head.b"]);
  return finish(raw, in);
}

std::vector<StepOutput> PoseNetwork::convolve(const ad::Binding& b, const std::vector<StepInput>& frames) const {
  if (cfg_.backbone != Backbone::kConvolutional) throw ConfigError("convolve needs a convolutional backbone");
  const std::size_t rf = cfg_.receptive_field();
  if (frames.size() < rf) {
    throw ShapeError("convolution window of " + std::to_string(frames.size()) + " frames is shorter than the receptive field " +
                     std::to_string(rf));
  }
  const std::size_t B = rows_of(frames[0].pose);
  std::vector<ad::Var> feats;
  feats.reserve(frames.size());
  for (const StepInput& f : frames) {
    check_input(f, B);
    feats.push_back(features(b, f));
  }
  // Time-major rows: frame t occupies rows [t B, (t + 1) B).
  ad::Var h = ad::concat_rows(feats);
  std::size_t T = frames.size();
  std::vector<ad::Var> hist;
  std::vector<std::size_t> hist_len;
  for (std::size_t l = 0; l < cfg_.conv_layers; ++l) {
    const std::size_t d = cfg_.dilation(l);
    const std::size_t span = (cfg_.filter_width - 1) * d;
    const std::size_t T_out = T - span;
    ad::Var acc;
    for (std::size_t tap = 0; tap < cfg_.filter_width; ++tap) {
      ad::Var rows = ad::slice_rows(h, tap * d * B, (tap * d + T_out) * B);
      ad::Var term = ad::matmul(rows, b[layer_name("conv", l, ("w" + std::to_string(tap)).c_str())]);
      acc = acc.valid() ? acc + term : term;
    }
    acc = ad::add_bias(acc, b[layer_name("conv", l, "b")]);
    const bool last = l + 1 == cfg_.conv_layers;
    if (!last) {
      acc = ad::leaky_relu(acc, cfg_.leaky_slope);
      // Identity shortcut from two layers below, cropped to the newest frames.
      if (l >= 2) {
        const ad::Var src = hist[l - 2];
        const std::size_t len = hist_len[l - 2];
        acc = acc + ad::slice_rows(src, (len - T_out) * B, len * B);
      }
    }
    hist.push_back(acc);
    hist_len.push_back(T_out);
    h = acc;
    T = T_out;
  }
  std::vector<StepOutput> out;
  out.reserve(T);
  for (std::size_t i = 0; i < T; ++i) {
    out.push_back(finish(ad::slice_rows(h, i * B, (i + 1) * B), frames[rf - 1 + i]));
  }
  return out;
}

ad::Var PoseNetwork::to_quaternions(ad::Var pose) const {
  const std::size_t B = rows_of(pose);
  const std::size_t J = cfg_.joints;
  switch (cfg_.parameterization) {
    case Parameterization::kQuaternion: return ad::reshape(pose, {B, J, 4});
    case Parameterization::kExpMap: return ad::reshape(ad::expmap_to_quat(ad::reshape(pose, {B * J, 3})), {B, J, 4});
    case Parameterization::kEulerXYZ:
    case Parameterization::kEulerYZX:
      return ad::reshape(ad::euler_to_quat(ad::reshape(pose, {B * J, 3}), euler_order_of(cfg_.parameterization)),
                         {B, J, 4});
    case Parameterization::kPosition: break;
  }
  throw ConfigError("position models have no rotations");
}

// ---------------------------------------------------------------------------
// Features

std::vector<double> pose_features(Parameterization p, const kin::Skeleton& skel, const kin::Pose& pose) {
  std::vector<double> f;
  if (p == Parameterization::kPosition) {
    const kin::JointPositions pos = kin::forward_kinematics(skel, pose);
    f.reserve(3 * pos.size());
    for (const rot::Vec3& x : pos) {
      const rot::Vec3 r = x - pose.root_position;
      f.insert(f.end(), {r.x, r.y, r.z});
    }
    return f;
  }
  f.reserve(joint_width(p) * pose.rotations.size());
  for (const rot::Quat& q : pose.rotations) {
    if (p == Parameterization::kQuaternion) {
      f.insert(f.end(), {q.w, q.x, q.y, q.z});
    } else if (p == Parameterization::kExpMap) {
      const rot::ExpMap e = rot::quat_to_expmap(q);
      f.insert(f.end(), {e.x, e.y, e.z});
    } else {
      const rot::EulerAngles e = rot::quat_to_euler(q, euler_order_of(p)).angles;
      f.insert(f.end(), {e.a1, e.a2, e.a3});
    }
  }
  return f;
}

std::vector<rot::Quat> features_to_quats(Parameterization p, std::span<const double> f) {
  if (p == Parameterization::kPosition) throw ConfigError("position features have no rotations");
  const std::size_t w = joint_width(p);
  if (f.size() % w != 0) throw ShapeError("feature length is not a multiple of the joint width");
  std::vector<rot::Quat> out;
  out.reserve(f.size() / w);
  for (std::size_t i = 0; i < f.size(); i += w) {
    if (p == Parameterization::kQuaternion) {
      out.push_back(rot::normalize({f[i], f[i + 1], f[i + 2], f[i + 3]}));
    } else if (p == Parameterization::kExpMap) {
      out.push_back(rot::expmap_to_quat({f[i], f[i + 1], f[i + 2]}));
    } else {
      out.push_back(rot::euler_to_quat({f[i], f[i + 1], f[i + 2], euler_order_of(p)}));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'Q', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw InputError(source_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  double f64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json header;
  header["kind"] = ckpt.kind;
  try {
    header["config"] = json::parse(ckpt.config_json);
    header["meta"] = json::parse(ckpt.meta_json);
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint header: ") + e.what());
  }
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.tensors) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = tensors;
  const std::string h = header.dump();

  std::string out(kCkptMagic, sizeof kCkptMagic);
  put_u32(out, kCkptVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (const auto& entry : ckpt.tensors) {
    for (double v : entry.second.values()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw InputError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path.string());
  if (std::memcmp(r.take(8), kCkptMagic, 8) != 0) throw InputError(path.string() + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion) {
    throw UnsupportedFeatureError(path.string() + ": checkpoint version " + std::to_string(version));
  }
  const std::uint32_t hlen = r.u32();
  const char* hp = r.take(hlen);
  Checkpoint ckpt;
  try {
    const json header = json::parse(std::string(hp, hlen));
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config_json = header.at("config").dump();
    ckpt.meta_json = header.value("meta", json::object()).dump();
    for (const json& t : header.at("tensors")) {
      ad::Shape shape = t.at("shape").get<ad::Shape>();
      ad::Tensor tensor(shape);
      for (double& v : tensor.storage()) v = r.f64();
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (!r.done()) throw InputError(path.string() + ": trailing bytes after checkpoint data");
  return ckpt;
}

namespace {

Checkpoint checkpoint_of(const std::string& kind, const std::string& config, const ad::ParameterSet& params,
                         const std::string& meta) {
  Checkpoint c;
  c.kind = kind;
  c.config_json = config;
  c.meta_json = meta;
  for (const auto& e : params.entries()) c.tensors.emplace_back(e.name, e.value);
  return c;
}

void fill_params(ad::ParameterSet& params, const Checkpoint& ckpt) {
  for (auto& e : params.entries()) {
    const auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                 [&](const auto& t) { return t.first == e.name; });
    if (it == ckpt.tensors.end()) throw InputError("checkpoint lacks parameter '" + e.name + "'");
    if (it->second.shape() != e.value.shape()) {
      throw InputError("checkpoint parameter '" + e.name + "' has shape " + ad::shape_string(it->second.shape()) +
                       ", expected " + ad::shape_string(e.value.shape()));
    }
    e.value = it->second;
  }
}

}  // namespace

Checkpoint make_checkpoint(const PoseNetwork& net, const std::string& meta_json) {
  return checkpoint_of("pose", to_json(net.config()), net.params(), meta_json);
}

Checkpoint make_checkpoint(const PaceNetwork& net, const std::string& meta_json) {
  return checkpoint_of("pace", to_json(net.config()), net.params(), meta_json);
}

PoseNetwork pose_network_from(const Checkpoint& ckpt) {
  if (ckpt.kind != "pose") throw InputError("checkpoint holds a '" + ckpt.kind + "' network, expected 'pose'");
  PoseNetwork net(pose_config_from_json(ckpt.config_json), 0);
  fill_params(net.params(), ckpt);
  return net;
}

PaceNetwork pace_network_from(const Checkpoint& ckpt) {
  if (ckpt.kind != "pace") throw InputError("checkpoint holds a '" + ckpt.kind + "' network, expected 'pace'");
  PaceNetwork net(pace_config_from_json(ckpt.config_json), 0);
  fill_params(net.params(), ckpt);
  return net;
}

}  // namespace qmotion::models
