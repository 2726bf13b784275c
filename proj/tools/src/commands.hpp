#pragma once

#include <CLI11.hpp>

#include "common.hpp"

namespace qmotion::cli {

void add_convert(CLI::App& app, Context& ctx);
void add_synth(CLI::App& app, Context& ctx);
void add_train_pose(CLI::App& app, Context& ctx);
void add_train_pace(CLI::App& app, Context& ctx);
void add_predict(CLI::App& app, Context& ctx);
void add_generate(CLI::App& app, Context& ctx);
void add_evaluate(CLI::App& app, Context& ctx);
void add_baseline(CLI::App& app, Context& ctx);
void add_gradcheck(CLI::App& app, Context& ctx);

}  // namespace qmotion::cli
