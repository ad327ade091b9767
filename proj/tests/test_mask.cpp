#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "bdc/attention_mask.hpp"

using namespace bdc;

namespace {

AttentionMaskSpec make_spec(AttentionMode mode, int n,
                            std::vector<FrameGroup> groups,
                            MaskGranularity g = MaskGranularity::per_frame) {
  AttentionMaskSpec spec;
  spec.mode = mode;
  spec.n_actions = n;
  spec.frame_groups = std::move(groups);
  spec.granularity = g;
  return spec;
}

}  // namespace

TEST_CASE("unidirectional block mask reproduces the reference 6x6 grid") {
  // Two 1-token frames, four actions, prior/post split after action 1.
  // Golden, row-major, token order [frame0, frame1, a0, a1, a2, a3].
  const bool golden[6][6] = {
      {1, 1, 1, 1, 0, 0},  // frame 0: frames + prior actions
      {1, 1, 1, 1, 0, 0},  // frame 1
      {0, 0, 1, 1, 1, 1},  // a0: actions only
      {0, 0, 1, 1, 1, 1},  // a1
      {0, 0, 1, 1, 1, 1},  // a2
      {0, 0, 1, 1, 1, 1},  // a3
  };
  const MaskMatrix m = build_attention_mask(make_spec(
      AttentionMode::unidirectional, 4, {{2, 1}, {4, 1}}, MaskGranularity::block));
  REQUIRE(m.rows == 6);
  REQUIRE(m.cols == 6);
  for (int q = 0; q < 6; ++q)
    for (int c = 0; c < 6; ++c) CHECK(m.at(q, c) == golden[q][c]);
}

TEST_CASE("full mode is the all-true matrix") {
  const MaskMatrix m = build_attention_mask(
      make_spec(AttentionMode::full, 3, {{1, 2}, {3, 2}}));
  for (int q = 0; q < m.rows; ++q)
    for (int c = 0; c < m.cols; ++c) CHECK(m.at(q, c));
}

TEST_CASE("decoupled mode is block-diagonal over the two modalities") {
  const MaskMatrix m = build_attention_mask(
      make_spec(AttentionMode::decoupled, 3, {{1, 2}, {3, 2}}));
  const int fr = 4;
  for (int q = 0; q < m.rows; ++q)
    for (int c = 0; c < m.cols; ++c)
      CHECK(m.at(q, c) == ((q < fr) == (c < fr)));
}

TEST_CASE("unidirectional per_frame: action visibility follows timestamps") {
  // Frames at s = {2, 4}, N = 4. frame@2 sees actions {0, 1}; frame@4 sees
  // actions {0, 1, 2, 3}. Frame-to-frame visibility is causal in
  // timestamps, and intra-action attention is causal, so no multi-layer
  // path can carry a later action into an earlier frame group.
  const MaskMatrix m = build_attention_mask(
      make_spec(AttentionMode::unidirectional, 4, {{2, 1}, {4, 1}}));
  // frame@2 row
  CHECK(m.at(0, 0));
  CHECK_FALSE(m.at(0, 1));  // later frame is not visible
  CHECK(m.at(0, 2));
  CHECK(m.at(0, 3));
  CHECK_FALSE(m.at(0, 4));
  CHECK_FALSE(m.at(0, 5));
  // frame@4 row sees everything before it
  for (int c = 0; c < 6; ++c) CHECK(m.at(1, c));
  // action rows are causal among actions and blind to frames
  for (int q = 2; q < 6; ++q)
    for (int c = 0; c < 6; ++c)
      CHECK(m.at(q, c) == (c >= 2 && c <= q));
}

TEST_CASE("equal timestamps see each other in per_frame mode") {
  const MaskMatrix m = build_attention_mask(
      make_spec(AttentionMode::unidirectional, 4, {{2, 1}, {2, 1}}));
  CHECK(m.at(0, 1));
  CHECK(m.at(1, 0));
}

TEST_CASE("diagonal is true in every mode") {
  for (AttentionMode mode : {AttentionMode::full, AttentionMode::decoupled,
                             AttentionMode::unidirectional})
    for (MaskGranularity g :
         {MaskGranularity::per_frame, MaskGranularity::block}) {
      const MaskMatrix m =
          build_attention_mask(make_spec(mode, 5, {{1, 2}, {4, 3}}, g));
      for (int q = 0; q < m.rows; ++q) CHECK(m.at(q, q));
    }
}

TEST_CASE("no frames configured degenerates to all-true action attention") {
  for (AttentionMode mode : {AttentionMode::full, AttentionMode::decoupled,
                             AttentionMode::unidirectional}) {
    const MaskMatrix m = build_attention_mask(make_spec(mode, 4, {}));
    REQUIRE(m.rows == 4);
    for (int q = 0; q < 4; ++q)
      for (int c = 0; c < 4; ++c) CHECK(m.at(q, c));
  }
}

TEST_CASE("spec validation errors") {
  CHECK_THROWS(build_attention_mask(
      make_spec(AttentionMode::unidirectional, 0, {})));
  CHECK_THROWS(build_attention_mask(
      make_spec(AttentionMode::unidirectional, 4, {{5, 1}})));
  CHECK_THROWS(build_attention_mask(
      make_spec(AttentionMode::unidirectional, 4, {{3, 1}, {2, 1}})));
  CHECK_THROWS(build_attention_mask(
      make_spec(AttentionMode::unidirectional, 4, {{2, 0}})));
}

TEST_CASE("mask rendering shows attend and blocked cells") {
  const std::string grid = render_mask(make_spec(
      AttentionMode::unidirectional, 4, {{2, 1}, {4, 1}}, MaskGranularity::block));
  CHECK(grid.find("■") != std::string::npos);
  CHECK(grid.find("·") != std::string::npos);
  CHECK(grid.find("F0@2") != std::string::npos);
  CHECK(grid.find("A3") != std::string::npos);
  // exactly 6 data rows plus headers
  int lines = 0;
  for (char ch : grid)
    if (ch == '\n') ++lines;
  CHECK(lines == 8);
}

TEST_CASE("mode and granularity parsing round-trips") {
  for (const char* s : {"full", "decoupled", "unidirectional"})
    CHECK(to_string(parse_attention_mode(s)) == s);
  for (const char* s : {"per_frame", "block"})
    CHECK(to_string(parse_granularity(s)) == s);
  CHECK_THROWS(parse_attention_mode("sideways"));
  CHECK_THROWS(parse_granularity("none"));
}
