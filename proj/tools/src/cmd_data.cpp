#include <cstdio>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "qmotion/error.hpp"
#include "qmotion/random.hpp"

namespace qmotion::cli {

using nlohmann::json;

namespace {

json summarize(const std::vector<data::MotionClip>& clips) {
  json list = json::array();
  std::size_t frames = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu", i);
    list.push_back({{"file", name},
                    {"subject", clips[i].subject},
                    {"action", clips[i].action},
                    {"frames", clips[i].frames()},
                    {"frame_rate", clips[i].frame_rate}});
    frames += clips[i].frames();
  }
  json s{{"clips", clips.size()}, {"frames", frames}, {"clip_list", list}};
  if (!clips.empty()) {
    s["joints"] = clips[0].skeleton.size();
    s["active_joints"] = clips[0].skeleton.active_count();
  }
  return s;
}

struct ConvertOptions {
  CommonOptions common;
  fs::path in;
  std::string format = "container";
  bool bvh = false;
  double fps = 0.0;
  fs::path skeleton;
  std::size_t downsample = 1;
  std::string mirror;
  std::size_t augment_rotations = 0;
  double prune_tol = 0.0;
};

void run_convert(const Context& ctx, const CLI::App& sub, const ConvertOptions& o) {
  require_exists(o.in, "input");
  if (o.downsample == 0) throw ConfigError("--downsample must be at least 1");
  if (o.prune_tol < 0.0) throw ConfigError("--prune-tol must be non-negative");
  const data::SwapMap swap = o.mirror.empty() ? data::SwapMap{} : data::parse_swap_map(o.mirror);
  begin_run(ctx, sub, o.common);

  std::vector<data::MotionClip> clips = load_clips(o.in, {o.fps, o.skeleton});
  for (const auto& c : clips) c.validate();

  if (o.prune_tol > 0.0) {
    require_uniform(clips);
    const kin::Skeleton pruned = data::prune_constant_joints(clips[0].skeleton, clips, o.prune_tol);
    for (auto& c : clips) c.skeleton = pruned;
  }
  if (o.downsample > 1) {
    std::vector<data::MotionClip> out;
    for (const auto& c : clips) {
      for (auto& phase : data::downsample_all_phases(c, o.downsample)) out.push_back(std::move(phase));
    }
    clips = std::move(out);
  }
  if (!o.mirror.empty()) {
    const std::size_t n = clips.size();
    for (std::size_t i = 0; i < n; ++i) clips.push_back(data::mirror(clips[i], swap));
  }
  if (o.augment_rotations > 0) {
    Rng rng(o.common.seed);
    const std::size_t n = clips.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < o.augment_rotations; ++r) clips.push_back(data::random_rotate(clips[i], rng));
    }
  }

  const bool bvh = o.format == "bvh" || o.bvh;
  if (o.format == "bvh") {
    fs::create_directories(o.common.out / "clips");
    for (std::size_t i = 0; i < clips.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "clip_%05zu.bvh", i);
      data::save_bvh(clips[i], o.common.out / "clips" / name);
    }
  } else {
    write_clips(clips, o.common.out / "clips", bvh);
  }
  write_text(o.common.out / "summary.json", summarize(clips).dump(2) + "\n");
  std::printf("converted %zu clips into %s\n", clips.size(), (o.common.out / "clips").string().c_str());
}

struct SynthOptions {
  CommonOptions common;
  data::CorpusParams corpus;
  bool still = false;
  bool bvh = false;
};

void run_synth(const Context& ctx, const CLI::App& sub, SynthOptions o) {
  o.corpus.seed = o.common.seed;
  if (o.corpus.min_speed > o.corpus.max_speed) throw ConfigError("--min-speed exceeds --max-speed");
  begin_run(ctx, sub, o.common);
  std::vector<data::SynthClip> corpus;
  if (o.still) {
    for (std::size_t i = 0; i < o.corpus.clips; ++i) {
      data::SynthParams p;
      p.joints = o.corpus.joints;
      p.duration = o.corpus.duration;
      p.frame_rate = o.corpus.frame_rate;
      p.speed = 0.0;
      p.seed = o.corpus.seed + i;
      corpus.push_back(data::synth_gait(p));
      corpus.back().clip.action = "still";
    }
  } else {
    corpus = data::synth_corpus(o.corpus);
  }
  std::vector<data::MotionClip> clips;
  std::ostringstream truth;
  truth << "clip,speed,stride_frequency,left_foot,right_foot,left_contacts,right_contacts\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    clips.push_back(s.clip);
    truth << i << ',' << s.truth.speed << ',' << s.truth.stride_frequency << ','
          << s.clip.skeleton.joint(s.left_foot).name << ',' << s.clip.skeleton.joint(s.right_foot).name << ','
          << s.truth.left_contact_times.size() << ',' << s.truth.right_contact_times.size() << '\n';
  }
  write_clips(clips, o.common.out / "clips", o.bvh);
  write_text(o.common.out / "truth.csv", truth.str());
  write_text(o.common.out / "summary.json", summarize(clips).dump(2) + "\n");
  std::printf("wrote %zu synthetic clips into %s\n", clips.size(), (o.common.out / "clips").string().c_str());
}

}  // namespace

void add_convert(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<ConvertOptions>();
  CLI::App* sub = app.add_subcommand("convert", "Import, preprocess and augment clips into a dataset");
  add_common(*sub, o->common);
  sub->add_option("-i,--in", o->in, "Input .bvh, .qmc or .txt file, or a directory of them")->required();
  sub->add_option("--format", o->format, "Output format")->check(CLI::IsMember({"container", "bvh"}))->capture_default_str();
  sub->add_flag("--bvh", o->bvh, "Also write BVH files next to the container files");
  sub->add_option("--fps", o->fps, "Frame rate of exponential-map text input");
  sub->add_option("--skeleton", o->skeleton, "Skeleton JSON for exponential-map text input");
  sub->add_option("--downsample", o->downsample, "Keep every phase of a frame-rate division by F")->capture_default_str();
  sub->add_option("--mirror", o->mirror, "Append mirrored copies; swap map 'LeftArm:RightArm,...'");
  sub->add_option("--augment-rotations", o->augment_rotations, "Append N copies rotated about the vertical axis")
      ->capture_default_str();
  sub->add_option("--prune-tol", o->prune_tol, "Freeze joints whose rotation varies less than this (radians)")
      ->capture_default_str();
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_convert(ctx, *sub, *o); }; });
}

void add_synth(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<SynthOptions>();
  CLI::App* sub = app.add_subcommand("synth", "Write a synthetic walking corpus");
  add_common(*sub, o->common);
  sub->add_option("--clips", o->corpus.clips, "Number of clips")->capture_default_str();
  sub->add_option("--joints", o->corpus.joints, "Skeleton size (7, 8 or 12)")->capture_default_str();
  sub->add_option("--duration", o->corpus.duration, "Seconds per clip")->capture_default_str();
  sub->add_option("--fps", o->corpus.frame_rate, "Frame rate")->capture_default_str();
  sub->add_option("--min-speed", o->corpus.min_speed, "Lowest walking speed")->capture_default_str();
  sub->add_option("--max-speed", o->corpus.max_speed, "Highest walking speed")->capture_default_str();
  sub->add_option("--max-turn-rate", o->corpus.max_turn_rate, "Largest heading change rate (rad/s)")
      ->capture_default_str();
  sub->add_flag("--still", o->still, "Stationary clips (constant pose) instead of walking");
  sub->add_flag("--bvh", o->bvh, "Also write BVH files");
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_synth(ctx, *sub, *o); }; });
}

}  // namespace qmotion::cli
