#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "qmotion/error.hpp"
#include "qmotion/motiondata.hpp"

namespace qmotion::data {

using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// BVH

struct Token {
  std::string text;
  std::size_t line;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  std::size_t line = 1;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back({cur, line});
      cur.clear();
    }
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      ++line;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '{' || c == '}') {
      flush();
      out.push_back({std::string(1, c), line});
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

enum class Channel { kXpos, kYpos, kZpos, kXrot, kYrot, kZrot };

struct BvhJoint {
  std::size_t index;
  std::size_t first_channel;
  std::vector<Channel> channels;
};

class BvhParser {
 public:
  BvhParser(const std::string& text, std::string source) : tokens_(tokenize(text)), source_(std::move(source)) {}

  MotionClip parse() {
    expect("HIERARCHY");
    expect("ROOT");
    parse_joint(-1, false);
    expect("MOTION");
    expect("Frames:");
    const double nframes = number();
    if (nframes < 0 || nframes != std::floor(nframes)) fail(prev_line(), "frame count must be a non-negative integer");
    expect("Frame");
    expect("Time:");
    const std::size_t dt_line = line();
    const double dt = number();
    if (!(dt > 0.0)) fail(dt_line, "frame time must be positive");

    MotionClip clip;
    clip.skeleton = kin::Skeleton(joints_);
    clip.frame_rate = 1.0 / dt;
    // Frame times are printed with few digits; 0.0083333 means 120 Hz.
    if (const double r = std::round(clip.frame_rate); std::abs(clip.frame_rate - r) <= 1e-4 * r) clip.frame_rate = r;
    const auto frames = static_cast<std::size_t>(nframes);
    const std::size_t nj = joints_.size();
    clip.rotations = rot::QuaternionSequence(0, nj, clip.frame_rate);
    std::vector<double> row(channel_count_);
    std::vector<Quat> frame(nj, Quat::identity());
    for (std::size_t t = 0; t < frames; ++t) {
      for (double& v : row) v = number();
      Vec3 root = joints_[0].offset;
      for (const BvhJoint& bj : bvh_) {
        std::array<double, 3> angles{};
        int nrot = 0;
        for (std::size_t c = 0; c < bj.channels.size(); ++c) {
          const double v = row[bj.first_channel + c];
          switch (bj.channels[c]) {
            case Channel::kXpos: root.x += v; break;
            case Channel::kYpos: root.y += v; break;
            case Channel::kZpos: root.z += v; break;
            default: angles[nrot++] = v * kDeg;
          }
        }
        frame[bj.index] = rot::euler_to_quat({angles[0], angles[1], angles[2], joints_[bj.index].euler_order});
      }
      clip.root_positions.push_back(root);
      clip.rotations.push_frame(frame);
    }
    if (pos_ < tokens_.size()) fail(tokens_[pos_].line, "unexpected trailing data '" + tokens_[pos_].text + "'");
    if (frames > 0) clip.rotations = rot::fix_continuity(clip.rotations);
    return clip;
  }

 private:
  [[noreturn]] void fail(std::size_t line, const std::string& what) const { throw ParseError(source_, line, what); }

  std::size_t line() const { return pos_ < tokens_.size() ? tokens_[pos_].line : last_line(); }
  std::size_t prev_line() const { return pos_ > 0 ? tokens_[pos_ - 1].line : 1; }
  std::size_t last_line() const { return tokens_.empty() ? 1 : tokens_.back().line; }

  const std::string& next() {
    if (pos_ >= tokens_.size()) fail(last_line(), "unexpected end of file");
    return tokens_[pos_++].text;
  }

  void expect(const std::string& word) {
    const std::size_t l = line();
    const std::string& got = next();
    if (got != word) fail(l, "expected '" + word + "', got '" + got + "'");
  }

  double number() {
    const std::size_t l = line();
    const std::string& s = next();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) fail(l, "expected a number, got '" + s + "'");
    return v;
  }

  void parse_joint(int parent, bool end_site) {
    kin::Joint joint;
    joint.parent = parent;
    const std::size_t name_line = line();
    if (end_site) {
      expect("Site");
      joint.name = joints_[static_cast<std::size_t>(parent)].name + "_End";
      joint.end_site = true;
      joint.dof_active = false;
      joint.constant_rotation = Quat::identity();
      joint.euler_order = joints_[static_cast<std::size_t>(parent)].euler_order;
    } else {
      joint.name = next();
      if (joint.name == "{") fail(name_line, "missing joint name");
    }
    expect("{");
    expect("OFFSET");
    joint.offset = {number(), number(), number()};
    const std::size_t index = joints_.size();

    BvhJoint bj{index, channel_count_, {}};
    if (!end_site) {
      const std::size_t ch_line = line();
      expect("CHANNELS");
      const double n = number();
      if (n != 3 && n != 6) {
        throw UnsupportedFeatureError(source_ + ":" + std::to_string(ch_line) + ": " + std::to_string(static_cast<int>(n)) +
                                      " channels on joint '" + joint.name + "' (only 3 or 6 are supported)");
      }
      std::string order;
      for (int c = 0; c < static_cast<int>(n); ++c) {
        const std::string& name = next();
        static const std::array<std::pair<const char*, Channel>, 6> kNames{{{"Xposition", Channel::kXpos},
                                                                             {"Yposition", Channel::kYpos},
                                                                             {"Zposition", Channel::kZpos},
                                                                             {"Xrotation", Channel::kXrot},
                                                                             {"Yrotation", Channel::kYrot},
                                                                             {"Zrotation", Channel::kZrot}}};
        auto it = std::find_if(kNames.begin(), kNames.end(), [&](const auto& p) { return name == p.first; });
        if (it == kNames.end()) fail(ch_line, "unknown channel '" + name + "'");
        if (std::find(bj.channels.begin(), bj.channels.end(), it->second) != bj.channels.end()) {
          fail(ch_line, "duplicate channel '" + name + "'");
        }
        bj.channels.push_back(it->second);
        if (it->second >= Channel::kXrot) order.push_back(static_cast<char>(std::tolower(name[0])));
      }
      if (order.size() != 3) {
        throw UnsupportedFeatureError(source_ + ":" + std::to_string(ch_line) + ": joint '" + joint.name +
                                      "' needs exactly three rotation channels");
      }
      if (parent >= 0 && n == 6) {
        throw UnsupportedFeatureError(source_ + ":" + std::to_string(ch_line) +
                                      ": position channels on non-root joint '" + joint.name + "'");
      }
      joint.euler_order = rot::parse_euler_order(order);
      channel_count_ += bj.channels.size();
      bvh_.push_back(std::move(bj));
    }
    joints_.push_back(joint);

    while (true) {
      const std::size_t l = line();
      const std::string& word = next();
      if (word == "}") break;
      if (end_site) fail(l, "End Site cannot have children");
      if (word == "JOINT") {
        parse_joint(static_cast<int>(index), false);
      } else if (word == "End") {
        parse_joint(static_cast<int>(index), true);
      } else {
        fail(l, "expected JOINT, End Site or '}', got '" + word + "'");
      }
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::string source_;
  std::vector<kin::Joint> joints_;
  std::vector<BvhJoint> bvh_;
  std::size_t channel_count_ = 0;
};

std::string fmt(double v) {
  if (std::abs(v) < 5e-13) v = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// JSON helpers

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
json quat_json(const Quat& q) { return json::array({q.w, q.x, q.y, q.z}); }

Vec3 json_vec(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InputError(what + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Quat json_quat(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 4) throw InputError(what + ": expected [w, x, y, z]");
  return rot::normalize({j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()});
}

json skeleton_json(const kin::Skeleton& skel) {
  json joints = json::array();
  for (const kin::Joint& jt : skel.joints()) {
    json o{{"name", jt.name},
           {"parent", jt.parent},
           {"offset", vec_json(jt.offset)},
           {"active", jt.dof_active},
           {"euler_order", std::string(rot::to_string(jt.euler_order))}};
    if (!jt.dof_active && jt.constant_rotation) o["constant_rotation"] = quat_json(*jt.constant_rotation);
    if (jt.end_site) o["end_site"] = true;
    joints.push_back(std::move(o));
  }
  return json{{"joints", std::move(joints)}};
}

kin::Skeleton json_skeleton(const json& doc) {
  if (!doc.is_object() || !doc.contains("joints") || !doc["joints"].is_array()) {
    throw InputError("skeleton: expected an object with a 'joints' array");
  }
  std::vector<kin::Joint> joints;
  try {
    for (const json& o : doc["joints"]) {
      kin::Joint jt;
      jt.name = o.at("name").get<std::string>();
      jt.parent = o.at("parent").get<int>();
      jt.offset = json_vec(o.at("offset"), "joint '" + jt.name + "' offset");
      jt.dof_active = o.value("active", true);
      if (o.contains("euler_order")) jt.euler_order = rot::parse_euler_order(o["euler_order"].get<std::string>());
      if (o.contains("constant_rotation")) {
        jt.constant_rotation = json_quat(o["constant_rotation"], "joint '" + jt.name + "' constant_rotation");
      }
      jt.end_site = o.value("end_site", false);
      joints.push_back(std::move(jt));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("skeleton: ") + e.what());
  }
  return kin::Skeleton(std::move(joints));
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(source, line, e.what());
  }
}

// ---------------------------------------------------------------------------
// Binary container

constexpr char kClipMagic[8] = {'Q', 'M', 'C', 'L', 'I', 'P', '0', '1'};
constexpr std::uint32_t kClipVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw InputError(source_ + ": truncated clip file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace

MotionClip parse_bvh(const std::string& text, const std::string& source) {
  BvhParser parser(text, source);
  return parser.parse();
}

MotionClip load_bvh(const std::filesystem::path& path) {
  MotionClip clip = parse_bvh(read_file(path), path.string());
  clip.action = path.stem().string();
  return clip;
}

std::string format_bvh(const MotionClip& clip) {
  clip.validate();
  const kin::Skeleton& skel = clip.skeleton;
  std::vector<std::vector<std::size_t>> children(skel.size());
  for (std::size_t j = 1; j < skel.size(); ++j) children[static_cast<std::size_t>(skel.parent(j))].push_back(j);

  std::ostringstream out;
  std::vector<std::size_t> channel_joints;
  out << "HIERARCHY\n";
  std::function<void(std::size_t, int)> write = [&](std::size_t j, int depth) {
    const kin::Joint& jt = skel.joint(j);
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    if (jt.end_site) {
      if (!children[j].empty()) throw InputError("End Site joint '" + jt.name + "' has children");
      out << pad << "End Site\n";
    } else {
      out << pad << (j == 0 ? "ROOT " : "JOINT ") << jt.name << "\n";
    }
    out << pad << "{\n";
    out << pad << "  OFFSET " << fmt(jt.offset.x) << " " << fmt(jt.offset.y) << " " << fmt(jt.offset.z) << "\n";
    if (!jt.end_site) {
      out << pad << "  CHANNELS " << (j == 0 ? "6 Xposition Yposition Zposition" : "3");
      for (int a : rot::axes_of(jt.euler_order)) out << " " << static_cast<char>('X' + a) << "rotation";
      out << "\n";
      channel_joints.push_back(j);
    }
    for (std::size_t c : children[j]) write(c, depth + 1);
    out << pad << "}\n";
  };
  write(0, 0);

  out << "MOTION\n";
  out << "Frames: " << clip.frames() << "\n";
  out << "Frame Time: " << fmt(1.0 / clip.frame_rate) << "\n";
  const Vec3 root_offset = skel.joint(0).offset;
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    const Vec3 p = clip.root_positions[t] - root_offset;
    out << fmt(p.x) << " " << fmt(p.y) << " " << fmt(p.z);
    for (std::size_t j : channel_joints) {
      const auto e = rot::quat_to_euler(clip.rotations.at(t, j), skel.joint(j).euler_order).angles;
      out << " " << fmt(e.a1 / kDeg) << " " << fmt(e.a2 / kDeg) << " " << fmt(e.a3 / kDeg);
    }
    out << "\n";
  }
  return out.str();
}

void save_bvh(const MotionClip& clip, const std::filesystem::path& path) { write_file(path, format_bvh(clip)); }

std::string skeleton_to_json(const kin::Skeleton& skel) { return skeleton_json(skel).dump(2); }

kin::Skeleton skeleton_from_json(const std::string& text) { return json_skeleton(parse_json(text, "<skeleton>")); }

void save_clip(const MotionClip& clip, const std::filesystem::path& path) {
  clip.validate();
  const json header{{"skeleton", skeleton_json(clip.skeleton)},
                    {"frame_rate", clip.frame_rate},
                    {"frames", clip.frames()},
                    {"joints", clip.skeleton.size()},
                    {"subject", clip.subject},
                    {"action", clip.action}};
  const std::string text = header.dump();
  std::string out(kClipMagic, sizeof kClipMagic);
  put_u32(out, kClipVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const Vec3& p : clip.root_positions) {
    put_f32(out, p.x);
    put_f32(out, p.y);
    put_f32(out, p.z);
  }
  for (const Quat& q : clip.rotations.data()) {
    put_f32(out, q.w);
    put_f32(out, q.x);
    put_f32(out, q.y);
    put_f32(out, q.z);
  }
  write_file(path, out);
}

MotionClip load_clip(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string source = path.string();
  Reader in(bytes, source);
  if (in.take(sizeof kClipMagic) != std::string(kClipMagic, sizeof kClipMagic)) {
    throw InputError(source + ": not a clip file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kClipVersion) {
    throw UnsupportedFeatureError(source + ": clip format version " + std::to_string(version));
  }
  const json header = parse_json(in.take(in.u32()), source);
  MotionClip clip;
  std::size_t frames = 0;
  std::size_t joints = 0;
  try {
    clip.skeleton = json_skeleton(header.at("skeleton"));
    clip.frame_rate = header.at("frame_rate").get<double>();
    frames = header.at("frames").get<std::size_t>();
    joints = header.at("joints").get<std::size_t>();
    clip.subject = header.value("subject", "");
    clip.action = header.value("action", "");
  } catch (const json::exception& e) {
    throw InputError(source + ": bad clip header: " + e.what());
  }
  if (joints != clip.skeleton.size()) throw ShapeError(source + ": joint count disagrees with skeleton");
  in.need(frames * (3 + joints * 4) * 4);
  clip.root_positions.resize(frames);
  for (Vec3& p : clip.root_positions) p = {in.f32(), in.f32(), in.f32()};
  clip.rotations = rot::QuaternionSequence(frames, joints, clip.frame_rate);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      const Quat raw{in.f32(), in.f32(), in.f32(), in.f32()};
      clip.rotations.at(t, j) = rot::normalize(raw);
    }
  }
  if (!in.done()) throw InputError(source + ": trailing bytes after clip data");
  if (frames > 0) clip.rotations = rot::fix_continuity(clip.rotations);
  clip.validate();
  return clip;
}

void save_dataset(const std::vector<MotionClip>& clips, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu.qmc", i);
    save_clip(clips[i], dir / name);
  }
}

std::vector<MotionClip> load_dataset(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  if (std::filesystem::is_directory(dir, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".qmc") files.push_back(entry.path());
    }
  }
  if (files.empty()) throw InputError("no clips found in '" + dir.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<MotionClip> clips;
  clips.reserve(files.size());
  for (const auto& f : files) clips.push_back(load_clip(f));
  return clips;
}

}  // namespace qmotion::data
