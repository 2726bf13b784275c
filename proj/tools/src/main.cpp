#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "qmotion/error.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(qmotion::Error::Kind kind) {
  switch (kind) {
    case qmotion::Error::Kind::kConfig: return kExitConfig;
    case qmotion::Error::Kind::kData: return kExitData;
    case qmotion::Error::Kind::kNumerical: return kExitNumerical;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace qmotion::cli;
  Context ctx;
  ctx.argv.assign(argv, argv + argc);

  CLI::App app{"Quaternion-based human motion prediction and generation"};
  app.set_version_flag("--version", std::string(QMOTION_VERSION) + " (" + QMOTION_GIT_HASH + ")");
  app.set_config("--config", "", "INI file of key = value options, one [section] per subcommand");
  app.require_subcommand(1);
  add_convert(app, ctx);
  add_synth(app, ctx);
  add_train_pose(app, ctx);
  add_train_pace(app, ctx);
  add_predict(app, ctx);
  add_generate(app, ctx);
  add_evaluate(app, ctx);
  add_baseline(app, ctx);
  add_gradcheck(app, ctx);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (ctx.action) ctx.action();
  } catch (const qmotion::Error& e) {
    std::fprintf(stderr, "qmotion: error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "qmotion: error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "qmotion: error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
