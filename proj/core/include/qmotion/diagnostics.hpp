#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qmotion/autodiff.hpp"

namespace qmotion::diag {

struct SuiteEntry {
  std::string name;
  ad::GradCheckResult result;
  double seconds = 0.0;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  ad::GradCheckOptions check;
  /// Coordinates sampled per network check. Network checks excuse
  /// coordinates whose step straddles a leaky ReLU kink (see GradCheckOptions).
  std::size_t model_coordinates = 300;
  /// Joints of the synthetic skeleton used by the FK and network checks.
  std::size_t joints = 12;
  bool include_primitives = true;
  bool include_losses = true;
  bool include_models = true;
};

/// Finite-difference checks of every autodiff primitive, the rotation
/// conversions, the training losses through forward kinematics and fresh
/// desk-preset networks (recurrent rollout with feedback, convolutional
/// window, pace network). Inputs are drawn away from kinks.
std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& opts = {});

}  // namespace qmotion::diag
