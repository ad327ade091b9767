#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "bdc/episode.hpp"
#include "bdc/rng.hpp"
#include "bdc/sim.hpp"

using namespace bdc;

namespace {

bool states_equal(const WorldState& a, const WorldState& b) {
  if (std::memcmp(&a.lx, &b.lx, sizeof(double)) != 0) return false;
  bool eq = a.lx == b.lx && a.ly == b.ly && a.rx == b.rx && a.ry == b.ry &&
            a.lgrip == b.lgrip && a.rgrip == b.rgrip &&
            a.step_count == b.step_count && a.blocks.size() == b.blocks.size();
  if (!eq) return false;
  for (std::size_t i = 0; i < a.blocks.size(); ++i)
    if (a.blocks[i].x != b.blocks[i].x || a.blocks[i].y != b.blocks[i].y ||
        a.blocks[i].held_by != b.blocks[i].held_by)
      return false;
  return true;
}

ActionVec random_action(Rng& rng) {
  ActionVec a;
  for (int i = 0; i < 6; ++i) a.v[i] = rng.uniform(-1.0, 1.0);
  return a;
}

int run_expert_episode(const TaskSpec& spec, std::uint64_t seed,
                       bool* order_ok = nullptr) {
  WorldState s = reset(spec, seed);
  bool left_released_once = s.blocks[0].held_by != Holder::left;
  for (int t = 0; t < spec.episode_len; ++t) {
    const ActionVec a = scripted_expert(s, spec);
    if (order_ok && spec.id == TaskId::handover) {
      // The right gripper must never close while the left arm still holds
      // the block.
      if (a.rgrip() > 0.0 && s.blocks[0].held_by == Holder::left)
        *order_ok = false;
      if (s.blocks[0].held_by != Holder::left) left_released_once = true;
      (void)left_released_once;
    }
    s = step(s, a, spec);
  }
  return check_success(s, spec) ? 1 : 0;
}

}  // namespace

TEST_CASE("reset is deterministic per (task, seed)") {
  for (TaskId id : {TaskId::handover, TaskId::dual_pick, TaskId::side_pick}) {
    const TaskSpec spec = TaskSpec::make(id);
    for (std::uint64_t seed : {1ull, 7ull, 12345ull})
      CHECK(states_equal(reset(spec, seed), reset(spec, seed)));
  }
}

TEST_CASE("handover spawns are always in the left-only region") {
  const TaskSpec spec = TaskSpec::make(TaskId::handover);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const WorldState s = reset(spec, seed);
    CHECK(s.blocks[0].x < 0.45);
  }
}

TEST_CASE("side_pick spawns are split roughly evenly over 1000 seeds") {
  const TaskSpec spec = TaskSpec::make(TaskId::side_pick);
  int left = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed)
    if (reset(spec, seed).blocks[0].x < 0.5) ++left;
  CHECK(left >= 400);
  CHECK(left <= 600);
}

TEST_CASE("zero action leaves everything unchanged except the step counter") {
  const TaskSpec spec = TaskSpec::make(TaskId::dual_pick);
  const WorldState s0 = reset(spec, 3);
  const WorldState s1 = step(s0, ActionVec{}, spec);
  CHECK(s1.step_count == s0.step_count + 1);
  WorldState cmp = s1;
  cmp.step_count = s0.step_count;
  CHECK(states_equal(cmp, s0));
}

TEST_CASE("grasp radius boundary") {
  const TaskSpec spec = TaskSpec::make(TaskId::side_pick);
  WorldState s = reset(spec, 1);
  s.blocks[0].x = 0.30;
  s.blocks[0].y = 0.50;
  // Just outside: r + 0.01 away.
  s.lx = 0.30 - (spec.grasp_radius + 0.01);
  s.ly = 0.50;
  ActionVec close;
  close.v[2] = 1.0;
  WorldState after = step(s, close, spec);
  CHECK(after.blocks[0].held_by == Holder::none);
  // Just inside.
  s.lx = 0.30 - (spec.grasp_radius - 0.01);
  after = step(s, close, spec);
  CHECK(after.blocks[0].held_by == Holder::left);
}

TEST_CASE("held blocks ride rigidly with the arm") {
  const TaskSpec spec = TaskSpec::make(TaskId::side_pick);
  WorldState s = reset(spec, 2);
  s.blocks[0].x = 0.30;
  s.blocks[0].y = 0.50;
  s.lx = 0.28;
  s.ly = 0.50;
  ActionVec close;
  close.v[2] = 1.0;
  s = step(s, close, spec);
  REQUIRE(s.blocks[0].held_by == Holder::left);
  const double bx = s.blocks[0].x, by = s.blocks[0].y;
  ActionVec move;
  move.v[0] = spec.max_step;  // exactly the velocity cap
  move.v[2] = 1.0;
  const WorldState moved = step(s, move, spec);
  CHECK(moved.blocks[0].x == doctest::Approx(bx + spec.max_step).epsilon(1e-15));
  CHECK(moved.blocks[0].y == by);
  // Opening releases.
  ActionVec open;
  open.v[2] = -1.0;
  const WorldState released = step(moved, open, spec);
  CHECK(released.blocks[0].held_by == Holder::none);
}

TEST_CASE("velocities are clamped and arms respect task constraints") {
  const TaskSpec spec = TaskSpec::make(TaskId::handover);
  WorldState s = reset(spec, 4);
  ActionVec a;
  a.v[0] = 99.0;  // silly command
  a.v[3] = -99.0;
  const WorldState after = step(s, a, spec);
  CHECK(after.lx <= s.lx + spec.max_step + 1e-12);
  CHECK(after.rx >= s.rx - spec.max_step - 1e-12);
  // Left arm cannot cross its x limit even after many steps.
  WorldState cur = reset(spec, 4);
  ActionVec push;
  push.v[0] = spec.max_step;
  for (int i = 0; i < 40; ++i) cur = step(cur, push, spec);
  CHECK(cur.lx <= spec.left_xmax + 1e-12);
}

TEST_CASE("stepping a terminal state is an error") {
  const TaskSpec spec = TaskSpec::make(TaskId::dual_pick);
  WorldState s = reset(spec, 5);
  for (int t = 0; t < spec.episode_len; ++t) s = step(s, ActionVec{}, spec);
  CHECK_THROWS_WITH_AS(step(s, ActionVec{}, spec), "step: episode is terminal",
                       std::runtime_error);
}

TEST_CASE("success predicates") {
  SUBCASE("fresh resets are never successful") {
    for (TaskId id : {TaskId::handover, TaskId::dual_pick, TaskId::side_pick}) {
      const TaskSpec spec = TaskSpec::make(id);
      for (std::uint64_t seed = 0; seed < 50; ++seed)
        CHECK_FALSE(check_success(reset(spec, seed), spec));
    }
  }
  SUBCASE("handover requires the block released inside the goal") {
    const TaskSpec spec = TaskSpec::make(TaskId::handover);
    WorldState s = reset(spec, 6);
    s.blocks[0].x = spec.goals[0].cx();
    s.blocks[0].y = spec.goals[0].cy();
    s.blocks[0].held_by = Holder::right;
    CHECK_FALSE(check_success(s, spec));
    s.blocks[0].held_by = Holder::none;
    CHECK(check_success(s, spec));
  }
  SUBCASE("dual_pick requires both blocks in their goals") {
    const TaskSpec spec = TaskSpec::make(TaskId::dual_pick);
    WorldState s = reset(spec, 7);
    s.blocks[0].x = spec.goals[0].cx();
    s.blocks[0].y = spec.goals[0].cy();
    CHECK_FALSE(check_success(s, spec));
    s.blocks[1].x = spec.goals[1].cx();
    s.blocks[1].y = spec.goals[1].cy();
    CHECK(check_success(s, spec));
  }
}

TEST_CASE("render determinism and sensitivity") {
  const TaskSpec spec = TaskSpec::make(TaskId::handover);
  const WorldState s = reset(spec, 8);
  const Image a = render(s, spec);
  const Image b = render(s, spec);
  CHECK(a.px == b.px);

  WorldState moved = s;
  moved.blocks[0].x += 2.0 / kRenderSize;  // two pixel cells
  const Image c = render(moved, spec);
  CHECK(a.px != c.px);
}

TEST_CASE("render values quantize losslessly to 8-bit channels") {
  const TaskSpec spec = TaskSpec::make(TaskId::dual_pick);
  const Image img = render(reset(spec, 9), spec);
  const Image back = dequantize_image(quantize_image(img), img.h, img.w, img.c);
  for (std::size_t i = 0; i < img.px.size(); ++i)
    CHECK(back.px[i] == img.px[i]);
}

TEST_CASE("empty-workspace render matches the committed golden image") {
  const TaskSpec spec = TaskSpec::make(TaskId::handover);
  WorldState s = reset(spec, 0);
  s.blocks.clear();  // empty workspace: goals and home-pose arms only
  const std::vector<std::uint8_t> bytes = quantize_image(render(s, spec));

  const char* golden_path = "tests/data/golden_empty_render.bin";
  if (std::getenv("BDC_REGEN_GOLDEN")) {
    std::filesystem::create_directories("tests/data");
    std::ofstream os(golden_path, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    MESSAGE("golden regenerated");
    return;
  }
  std::ifstream is(golden_path, std::ios::binary);
  REQUIRE_MESSAGE(is.good(), "golden file missing; run with BDC_REGEN_GOLDEN=1");
  std::vector<std::uint8_t> want((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  REQUIRE(want.size() == bytes.size());
  CHECK(std::memcmp(want.data(), bytes.data(), bytes.size()) == 0);
}

TEST_CASE("full trajectory determinism under a fixed action sequence") {
  const TaskSpec spec = TaskSpec::make(TaskId::dual_pick);
  for (int run = 0; run < 2; ++run) {
    // identical seeds on both runs
    Rng rng(99);
    WorldState s = reset(spec, 42);
    double checksum = 0.0;
    for (int t = 0; t < spec.episode_len; ++t) {
      s = step(s, random_action(rng), spec);
      checksum += s.lx + s.rx + s.blocks[0].x + s.blocks[1].y;
    }
    static double first_checksum = 0.0;
    if (run == 0)
      first_checksum = checksum;
    else
      CHECK(std::memcmp(&checksum, &first_checksum, sizeof(double)) == 0);
  }
}

TEST_CASE("state invariants hold under ten thousand random steps") {
  Rng rng(123);
  for (TaskId id : {TaskId::handover, TaskId::dual_pick, TaskId::side_pick}) {
    const TaskSpec spec = TaskSpec::make(id);
    WorldState s = reset(spec, 77);
    int steps = 0;
    while (steps < 10000 / 3) {
      if (s.step_count >= spec.episode_len) s = reset(spec, 77 + steps);
      s = step(s, random_action(rng), spec);
      ++steps;
      for (const auto& b : s.blocks) {
        CHECK(b.x >= 0.0);
        CHECK(b.x <= 1.0);
        CHECK(b.y >= 0.0);
        CHECK(b.y <= 1.0);
      }
      CHECK(s.lx >= 0.0);
      CHECK(s.lx <= 1.0);
      int held_left = 0, held_right = 0;
      for (const auto& b : s.blocks) {
        if (b.held_by == Holder::left) ++held_left;
        if (b.held_by == Holder::right) ++held_right;
      }
      CHECK(held_left <= 1);
      CHECK(held_right <= 1);
    }
  }
}

TEST_CASE("scripted experts succeed on at least 95% of 200 seeded episodes") {
  for (TaskId id : {TaskId::handover, TaskId::dual_pick, TaskId::side_pick}) {
    const TaskSpec spec = TaskSpec::make(id);
    int wins = 0;
    bool order_ok = true;
    for (std::uint64_t seed = 0; seed < 200; ++seed)
      wins += run_expert_episode(spec, seed, &order_ok);
    INFO("task ", to_string(id), " wins ", wins, "/200");
    CHECK(wins >= 190);
    if (id == TaskId::handover) CHECK(order_ok);
  }
}

TEST_CASE("expert emits near-zero motion once the task is solved") {
  for (TaskId id : {TaskId::handover, TaskId::dual_pick, TaskId::side_pick}) {
    const TaskSpec spec = TaskSpec::make(id);
    WorldState s = reset(spec, 11);
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      s.blocks[i].x = spec.goals[i].cx();
      s.blocks[i].y = spec.goals[i].cy();
      s.blocks[i].held_by = Holder::none;
    }
    REQUIRE(check_success(s, spec));
    const ActionVec a = scripted_expert(s, spec);
    CHECK(std::fabs(a.ldx()) < 1e-3);
    CHECK(std::fabs(a.ldy()) < 1e-3);
    CHECK(std::fabs(a.rdx()) < 1e-3);
    CHECK(std::fabs(a.rdy()) < 1e-3);
  }
}

TEST_CASE("proprio layout and episode file round-trip") {
  const TaskSpec spec = TaskSpec::make(TaskId::handover);
  WorldState s = reset(spec, 13);
  const auto p = s.proprio();
  REQUIRE(p.size() == 6);
  CHECK(p[0] == s.lx);
  CHECK(p[2] == s.lgrip);
  CHECK(p[5] == s.rgrip);

  Episode ep;
  ep.task = "handover";
  ep.seed = 13;
  ep.h = kRenderSize;
  ep.w = kRenderSize;
  ep.c = 3;
  ep.proprio_dim = 6;
  ep.action_dim = 6;
  for (int t = 0; t < 5; ++t) {
    ep.images.push_back(quantize_image(render(s, spec)));
    ep.proprio.push_back(s.proprio());
    const ActionVec a = scripted_expert(s, spec);
    ep.actions.push_back(a.to_vector());
    s = step(s, a, spec);
  }
  const std::string path = "test_episode_roundtrip.bin";
  write_episode(path, ep);
  const Episode back = read_episode(path);
  std::filesystem::remove(path);
  CHECK(back.task == ep.task);
  CHECK(back.seed == ep.seed);
  REQUIRE(back.length() == ep.length());
  for (int t = 0; t < ep.length(); ++t) {
    CHECK(back.images[static_cast<std::size_t>(t)] ==
          ep.images[static_cast<std::size_t>(t)]);
    // exact f64 round-trip
    for (int j = 0; j < 6; ++j) {
      CHECK(back.proprio[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] ==
            ep.proprio[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]);
      CHECK(back.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] ==
            ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]);
    }
  }
}

TEST_CASE("future frame sampling pads at the episode end") {
  const TaskSpec spec = TaskSpec::make(TaskId::side_pick);
  WorldState s = reset(spec, 14);
  Episode ep;
  ep.task = "side_pick";
  ep.h = kRenderSize;
  ep.w = kRenderSize;
  ep.c = 3;
  ep.proprio_dim = 6;
  ep.action_dim = 6;
  for (int t = 0; t < 10; ++t) {
    ep.images.push_back(quantize_image(render(s, spec)));
    ep.proprio.push_back(s.proprio());
    ep.actions.push_back(ActionVec{}.to_vector());
    s = step(s, scripted_expert(s, spec), spec);
  }
  const FrameSamplePlan plan = make_frame_plan(8, 4);  // ts {2,4,6,8}
  const auto frames = sample_future_frames(ep, 5, plan);
  REQUIRE(frames.size() == 4);
  // t=5: steps 7 and 9 exist, 11 and 13 clamp to the final frame (index 9).
  const Image last = ep.image_at(9);
  CHECK(frames[2].px == last.px);
  CHECK(frames[3].px == last.px);
  CHECK_THROWS(sample_future_frames(ep, 10, plan));
}
