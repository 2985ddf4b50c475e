#include "doctest.h"

#include "mexma/trainer/grad_suite.hpp"

using namespace mexma::trainer;

TEST_CASE("grad suite: every primitive passes at 64-bit") {
  const auto rows = primitive_grad_checks(7);
  REQUIRE(rows.size() > 10);
  for (const auto& r : rows) {
    CAPTURE(r.name);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("grad suite: composed loss passes for the default and one-direction flows") {
  auto cfg = default_toy_config();
  for (bool symmetric : {true, false}) {
    cfg.flow.symmetric = symmetric;
    cfg.flow.alignment = symmetric ? mexma::objectives::AlignmentMode::CleanToClean
                                   : mexma::objectives::AlignmentMode::CleanToDirty;
    const auto rows = model_grad_check(cfg, 3);
    REQUIRE(!rows.empty());
    for (const auto& r : rows) {
      CAPTURE(r.name);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("grad suite: InfoNCE alignment passes") {
  auto cfg = default_toy_config();
  cfg.flow.family = mexma::objectives::AlignmentFamily::InfoNce;
  for (const auto& r : model_grad_check(cfg, 4)) {
    CAPTURE(r.name);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("grad suite: token gradients off matches the frozen-view oracle; on differs") {
  const auto r = stop_gradient_check(default_toy_config(), 5);
  CHECK(r.max_abs_diff_off <= 1e-9);
  CHECK(r.max_abs_diff_on > 1e-6);
}
