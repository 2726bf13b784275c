#include "common.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qmotion/error.hpp"
#include "qmotion/evaluation.hpp"

namespace qmotion::cli {

using nlohmann::json;

void add_common(CLI::App& sub, CommonOptions& common) {
  sub.add_option("-o,--out", common.out, "Output directory")->required();
  sub.add_option("--seed", common.seed, "Random seed")->capture_default_str();
}

void begin_run(const Context& ctx, const CLI::App& sub, const CommonOptions& common) {
  fs::create_directories(common.out);
  json manifest{{"command", sub.get_name()},
                {"argv", ctx.argv},
                {"config", sub.config_to_str(true, false)},
                {"version", QMOTION_VERSION},
                {"git", QMOTION_GIT_HASH},
                {"seed", common.seed}};
  write_text(common.out / "manifest.json", manifest.dump(2) + "\n");
}

void require_exists(const fs::path& path, const std::string& what) {
  std::error_code ec;
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(path, ec)) throw ConfigError(what + " '" + path.string() + "' does not exist");
}

namespace {

bool is_clip_file(const fs::path& p) {
  const auto ext = p.extension();
  return ext == ".qmc" || ext == ".bvh" || ext == ".txt";
}

data::MotionClip load_one(const fs::path& path, const LoadOptions& opts) {
  const auto ext = path.extension();
  if (ext == ".qmc") return data::load_clip(path);
  if (ext == ".bvh") return data::load_bvh(path);
  if (ext == ".txt") {
    if (opts.expmap_fps <= 0.0) throw ConfigError("exponential-map text input needs --fps");
    const kin::Skeleton skel = opts.expmap_skeleton.empty() ? eval::expmap_benchmark_skeleton()
                                                            : data::skeleton_from_json(read_text(opts.expmap_skeleton));
    return eval::load_expmap_text(path, skel, opts.expmap_fps);
  }
  throw InputError("unsupported clip file '" + path.string() + "'");
}

}  // namespace

std::vector<data::MotionClip> load_clips(const fs::path& path, const LoadOptions& opts) {
  require_exists(path, "input");
  if (!fs::is_directory(path)) return {load_one(path, opts)};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && is_clip_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no clips found in '" + path.string() + "'");
  std::vector<data::MotionClip> clips;
  clips.reserve(files.size());
  for (const auto& f : files) clips.push_back(load_one(f, opts));
  return clips;
}

void require_uniform(const std::vector<data::MotionClip>& clips) {
  if (clips.empty()) throw InputError("no clips found");
  for (std::size_t i = 1; i < clips.size(); ++i) {
    if (!(clips[i].skeleton == clips[0].skeleton)) {
      throw InputError("clip " + std::to_string(i) + " has a different skeleton than clip 0");
    }
    if (clips[i].frame_rate != clips[0].frame_rate) {
      throw InputError("clip " + std::to_string(i) + " has a different frame rate than clip 0");
    }
  }
}

void write_clips(const std::vector<data::MotionClip>& clips, const fs::path& dir, bool bvh) {
  data::save_dataset(clips, dir);
  if (!bvh) return;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu.bvh", i);
    data::save_bvh(clips[i], dir / name);
  }
}

std::vector<data::Vec2> read_waypoints(const fs::path& path) {
  require_exists(path, "spline");
  std::istringstream in(read_text(path));
  std::vector<data::Vec2> points;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    data::Vec2 p;
    std::string rest;
    if (!(row >> p.x >> p.y) || (row >> rest)) {
      if (points.empty() && lineno == 1) continue;
      throw ParseError(path.string(), lineno, "expected 'x,z'");
    }
    points.push_back(p);
  }
  return points;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw ConfigError("not a number: '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

}  // namespace qmotion::cli
