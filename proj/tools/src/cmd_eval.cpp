#include <cstdio>
#include <memory>
#include <sstream>

#include "commands.hpp"
#include "qmotion/diagnostics.hpp"
#include "qmotion/error.hpp"
#include "qmotion/evaluation.hpp"
#include "qmotion/models.hpp"

namespace qmotion::cli {

namespace {

constexpr std::uint64_t kDefaultProtocolSeed = 1234567890;

struct ProtocolOptions {
  fs::path data;
  std::string protocol = "standard";
  std::size_t conditioning = 50;
  std::string horizons = "80,160,320,400";
  double fps = 25.0;
  std::string metric = "euclidean";
  bool include_root = false;
  std::string order;
  std::size_t bootstrap = 1000;
  double expmap_fps = 0.0;
  fs::path skeleton;
};

void add_protocol(CLI::App& sub, ProtocolOptions& p) {
  sub.add_option("--data", p.data, "Test clips (directory or clip file)")->required();
  sub.add_option("--protocol", p.protocol, "standard (S=4), proposed (S=128) or S=<int>")->capture_default_str();
  sub.add_option("--conditioning", p.conditioning, "Conditioning frames")->capture_default_str();
  sub.add_option("--horizons", p.horizons, "Comma-separated horizons in milliseconds")->capture_default_str();
  sub.add_option("--fps", p.fps, "Evaluation frame rate; clips must match")->capture_default_str();
  sub.add_option("--metric", p.metric, "euclidean | mean_l1")->capture_default_str();
  sub.add_flag("--include-root", p.include_root, "Include the root rotation in the angle error");
  sub.add_option("--euler-order", p.order, "One Euler order for every joint, e.g. xyz (default: each joint's own)");
  sub.add_option("--bootstrap", p.bootstrap, "Bootstrap resamples for the intervals (0: none)")->capture_default_str();
  sub.add_option("--expmap-fps", p.expmap_fps, "Frame rate of exponential-map text input");
  sub.add_option("--skeleton", p.skeleton, "Skeleton JSON for exponential-map text input");
}

std::size_t parse_samples(const std::string& protocol) {
  if (protocol == "standard") return 4;
  if (protocol == "proposed") return 128;
  if (protocol.rfind("S=", 0) == 0) {
    try {
      std::size_t used = 0;
      const long long s = std::stoll(protocol.substr(2), &used);
      if (used + 2 == protocol.size() && s > 0) return static_cast<std::size_t>(s);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown protocol '" + protocol + "' (expected standard, proposed or S=<int>)");
}

eval::EvalProtocol make_protocol(const ProtocolOptions& p, std::uint64_t seed) {
  eval::EvalProtocol e;
  e.samples_per_sequence = parse_samples(p.protocol);
  e.seed = seed;
  e.conditioning = p.conditioning;
  e.horizons_ms = parse_number_list(p.horizons);
  e.frame_rate = p.fps;
  e.angles.metric = eval::parse_angle_metric(p.metric);
  e.angles.include_root = p.include_root;
  if (!p.order.empty()) e.angles.order = rot::parse_euler_order(p.order);
  e.bootstrap_resamples = p.bootstrap;
  e.validate();
  return e;
}

void write_report(const eval::EvalReport& report, const fs::path& out) {
  std::string text = report.to_table();
  for (const auto& w : report.warnings) text += "warning: " + w + "\n";
  write_text(out / "report.csv", report.to_csv());
  write_text(out / "report.txt", text);
  std::fputs(text.c_str(), stdout);
}

struct EvaluateOptions {
  CommonOptions common;
  ProtocolOptions protocol;
  fs::path model;
  std::size_t batch = 256;
};

void run_evaluate(const Context& ctx, const CLI::App& sub, const EvaluateOptions& o) {
  require_exists(o.model, "model");
  require_exists(o.protocol.data, "dataset");
  const eval::EvalProtocol protocol = make_protocol(o.protocol, o.common.seed);
  begin_run(ctx, sub, o.common);
  const models::PoseNetwork net = models::pose_network_from(models::load_checkpoint(o.model));
  if (net.config().include_controls || net.config().include_translations) {
    throw ConfigError("'" + o.model.string() + "' is a locomotion model and cannot be evaluated on prediction");
  }
  if (net.config().parameterization == models::Parameterization::kPosition) {
    throw ConfigError("angle evaluation needs a rotation model");
  }
  const auto clips = load_clips(o.protocol.data, {o.protocol.expmap_fps, o.protocol.skeleton});
  require_uniform(clips);
  if (net.config().joints != clips[0].skeleton.active_count()) {
    throw InputError("skeleton mismatch: model expects " + std::to_string(net.config().joints) +
                     " active joints, data has " + std::to_string(clips[0].skeleton.active_count()));
  }
  write_report(eval::run_protocol(eval::model_predictor(net, o.batch), clips, protocol), o.common.out);
}

struct BaselineOptions {
  CommonOptions common;
  ProtocolOptions protocol;
  std::string kind = "zerovel";
};

void run_baseline(const Context& ctx, const CLI::App& sub, const BaselineOptions& o) {
  require_exists(o.protocol.data, "dataset");
  const eval::EvalProtocol protocol = make_protocol(o.protocol, o.common.seed);
  eval::Predictor predictor;
  if (o.kind == "zerovel") {
    predictor = eval::zero_velocity_predictor();
  } else if (o.kind == "runavg2") {
    predictor = eval::running_average_predictor(2);
  } else if (o.kind == "runavg4") {
    predictor = eval::running_average_predictor(4);
  } else {
    throw ConfigError("unknown baseline '" + o.kind + "'");
  }
  begin_run(ctx, sub, o.common);
  const auto clips = load_clips(o.protocol.data, {o.protocol.expmap_fps, o.protocol.skeleton});
  write_report(eval::run_protocol(predictor, clips, protocol), o.common.out);
}

struct GradcheckOptions {
  CommonOptions common;
  diag::SuiteOptions suite;
};

void run_gradcheck(const Context& ctx, const CLI::App& sub, GradcheckOptions o) {
  o.suite.seed = o.common.seed;
  begin_run(ctx, sub, o.common);
  const auto entries = diag::run_gradcheck_suite(o.suite);
  std::ostringstream csv;
  csv.precision(6);
  csv << "check,passed,coordinates,kinks,max_abs_error,max_rel_error,seconds,worst\n";
  std::string failed;
  double total = 0.0;
  for (const auto& e : entries) {
    csv << e.name << ',' << (e.result.passed ? 1 : 0) << ',' << e.result.checked << ',' << e.result.kinks << ',' << e.result.max_abs_error
        << ',' << e.result.max_rel_error << ',' << e.seconds << ",\"" << e.result.worst << "\"\n";
    std::printf("%-28s %s  max_rel %.2e  (%zu coords, %.2fs)\n", e.name.c_str(), e.result.passed ? "pass" : "FAIL",
                e.result.max_rel_error, e.result.checked, e.seconds);
    if (!e.result.passed) failed += (failed.empty() ? "" : ", ") + e.name;
    total += e.seconds;
  }
  write_text(o.common.out / "gradcheck.csv", csv.str());
  std::printf("%zu checks in %.1fs\n", entries.size(), total);
  if (!failed.empty()) throw NumericalError("gradient check failed: " + failed);
}

}  // namespace

void add_evaluate(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<EvaluateOptions>();
  o->common.seed = kDefaultProtocolSeed;
  CLI::App* sub = app.add_subcommand("evaluate", "Evaluate a pose model under a prediction protocol");
  add_common(*sub, o->common);
  add_protocol(*sub, o->protocol);
  sub->add_option("--model", o->model, "Pose checkpoint")->required();
  sub->add_option("--batch", o->batch, "Episodes per prediction batch")->capture_default_str();
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_evaluate(ctx, *sub, *o); }; });
}

void add_baseline(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<BaselineOptions>();
  o->common.seed = kDefaultProtocolSeed;
  CLI::App* sub = app.add_subcommand("baseline", "Evaluate a zero-velocity or running-average baseline");
  add_common(*sub, o->common);
  add_protocol(*sub, o->protocol);
  sub->add_option("--kind", o->kind, "zerovel | runavg2 | runavg4")
      ->check(CLI::IsMember({"zerovel", "runavg2", "runavg4"}))
      ->capture_default_str();
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_baseline(ctx, *sub, *o); }; });
}

void add_gradcheck(CLI::App& app, Context& ctx) {
  auto o = std::make_shared<GradcheckOptions>();
  CLI::App* sub = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  add_common(*sub, o->common);
  sub->add_option("--coordinates", o->suite.model_coordinates, "Coordinates sampled per network check")
      ->capture_default_str();
  sub->add_option("--joints", o->suite.joints, "Synthetic skeleton size (7, 8 or 12)")->capture_default_str();
  sub->add_option("--step", o->suite.check.step, "Central-difference step")->capture_default_str();
  sub->add_option("--rtol", o->suite.check.rtol, "Relative tolerance")->capture_default_str();
  sub->add_option("--atol", o->suite.check.atol, "Absolute tolerance")->capture_default_str();
  sub->callback([&ctx, sub, o] { ctx.action = [&ctx, sub, o] { run_gradcheck(ctx, *sub, *o); }; });
}

}  // namespace qmotion::cli
