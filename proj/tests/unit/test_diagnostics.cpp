#include <doctest.h>

#include <set>

#include "qmotion/diagnostics.hpp"

using namespace qmotion;

TEST_CASE("gradcheck suite passes on every entry") {
  const auto entries = diag::run_gradcheck_suite({});
  std::set<std::string> names;
  for (const auto& e : entries) {
    INFO(e.name << " max_rel=" << e.result.max_rel_error << " " << e.result.worst);
    CHECK(e.result.passed);
    names.insert(e.name);
  }
  for (const char* n : {"matmul", "qmul", "qrot", "atan2", "wrap_angle", "normalize", "expmap_to_quat",
                        "euler_to_quat_zyx", "quat_to_euler_xyz", "positional_loss_fk", "euler_l1_loss",
                        "recurrent_rollout", "convolutional_window", "pace_online", "pace_bidirectional"})
    CHECK(names.count(n) == 1);
}

TEST_CASE("gradcheck suite reports failures under zero tolerance") {
  diag::SuiteOptions o;
  o.include_losses = o.include_models = false;
  o.check.rtol = 0.0;
  o.check.atol = 0.0;
  const auto entries = diag::run_gradcheck_suite(o);
  bool any_failed = false;
  for (const auto& e : entries) any_failed = any_failed || !e.result.passed;
  CHECK(any_failed);
}
