#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qmotion/kinematics.hpp"
#include "qmotion/motiondata.hpp"

namespace qmotion::cli {

namespace fs = std::filesystem;

/// Shared state of one invocation.
struct Context {
  std::vector<std::string> argv;
  /// Set by the selected subcommand's callback; run after parsing.
  std::function<void()> action;
};

/// Options every subcommand has.
struct CommonOptions {
  fs::path out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App& sub, CommonOptions& common);

/// Creates the output directory and writes out/manifest.json with the
/// command, argv, effective configuration, version and seed.
void begin_run(const Context& ctx, const CLI::App& sub, const CommonOptions& common);

/// Throws ConfigError when `path` does not exist.
void require_exists(const fs::path& path, const std::string& what);

struct LoadOptions {
  /// Frame rate of exponential-map text files.
  double expmap_fps = 0.0;
  /// Skeleton JSON for exponential-map text files; the 32-joint benchmark
  /// topology when empty.
  fs::path expmap_skeleton;
};

/// Loads a .qmc, .bvh or exponential-map .txt file, or every such file of a
/// directory in file-name order. Throws InputError "no clips found" when a
/// directory holds none.
std::vector<data::MotionClip> load_clips(const fs::path& path, const LoadOptions& opts = {});

/// Throws InputError when clips disagree on skeleton or frame rate.
void require_uniform(const std::vector<data::MotionClip>& clips);

/// Writes clips into `dir` as clip_NNNNN.qmc and, when `bvh` is set, clip_NNNNN.bvh.
void write_clips(const std::vector<data::MotionClip>& clips, const fs::path& dir, bool bvh);

/// Ground-plane waypoints "x,z" per line; blank lines, '#' comments and a
/// non-numeric header line are ignored.
std::vector<data::Vec2> read_waypoints(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Comma-separated numbers, e.g. "80,160,320,400".
std::vector<double> parse_number_list(const std::string& text);

}  // namespace qmotion::cli
