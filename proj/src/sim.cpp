#include "bdc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bdc/rng.hpp"

namespace bdc {

TaskId parse_task(const std::string& s) {
  if (s == "handover") return TaskId::handover;
  if (s == "dual_pick") return TaskId::dual_pick;
  if (s == "side_pick") return TaskId::side_pick;
  throw std::runtime_error("unknown task: " + s);
}

std::string to_string(TaskId t) {
  switch (t) {
    case TaskId::handover: return "handover";
    case TaskId::dual_pick: return "dual_pick";
    case TaskId::side_pick: return "side_pick";
  }
  return "?";
}

TaskSpec TaskSpec::make(TaskId id) {
  TaskSpec s;
  s.id = id;
  switch (id) {
    case TaskId::handover:
      // Sequential coordination: the block spawns where only the left arm
      // can reach, the goal where only the right arm can; the arms must
      // meet in the overlap band and exchange it.
      s.episode_len = 120;
      s.left_xmax = 0.55;
      s.right_xmin = 0.45;
      s.n_blocks = 1;
      s.spawn = {{0.08, 0.15, 0.38, 0.85}};
      s.goals = {{0.78, 0.40, 0.94, 0.60}};
      break;
    case TaskId::dual_pick:
      // Both arms pick their own block and place it in their own goal,
      // independently and simultaneously.
      s.episode_len = 80;
      s.n_blocks = 2;
      s.spawn = {{0.08, 0.15, 0.38, 0.70}, {0.62, 0.15, 0.92, 0.70}};
      s.goals = {{0.10, 0.78, 0.36, 0.95}, {0.64, 0.78, 0.90, 0.95}};
      break;
    case TaskId::side_pick:
      // The block spawns on either side; the nearer arm places it in the
      // shared central goal.
      s.episode_len = 80;
      s.n_blocks = 1;
      s.spawn = {{0.08, 0.20, 0.35, 0.80}};  // mirrored to the right half by seed
      s.goals = {{0.42, 0.40, 0.58, 0.60}};
      break;
  }
  return s;
}

ActionVec ActionVec::from(const std::vector<double>& a) {
  if (a.size() != 6) throw std::runtime_error("action: expected 6 entries");
  ActionVec out;
  for (int i = 0; i < 6; ++i) out.v[i] = a[static_cast<std::size_t>(i)];
  return out;
}

namespace {

constexpr std::uint64_t kStreamSpawn = 101;

double clamp(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

double dist(double ax, double ay, double bx, double by) {
  const double dx = ax - bx, dy = ay - by;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

WorldState reset(const TaskSpec& task, std::uint64_t seed) {
  WorldState s;
  s.task = task.id;
  s.lx = 0.15;
  s.ly = 0.50;
  s.rx = 0.85;
  s.ry = 0.50;
  s.lgrip = 0.0;
  s.rgrip = 0.0;
  Rng rng(seed, kStreamSpawn);
  for (int b = 0; b < task.n_blocks; ++b) {
    Rect region = task.spawn[static_cast<std::size_t>(b)];
    if (task.id == TaskId::side_pick && rng.uniform() < 0.5) {
      // Mirror the spawn region to the right half.
      const double x0 = 1.0 - region.x1, x1 = 1.0 - region.x0;
      region.x0 = x0;
      region.x1 = x1;
    }
    BlockState blk;
    blk.x = rng.uniform(region.x0, region.x1);
    blk.y = rng.uniform(region.y0, region.y1);
    s.blocks.push_back(blk);
  }
  return s;
}

WorldState step(const WorldState& state, const ActionVec& action,
                const TaskSpec& task) {
  if (state.step_count >= task.episode_len)
    throw std::runtime_error("step: episode is terminal");
  WorldState s = state;
  const double d = task.max_step;

  const double lx_new = clamp(s.lx + clamp(action.ldx(), -d, d), 0.0,
                              std::min(1.0, task.left_xmax));
  const double ly_new = clamp(s.ly + clamp(action.ldy(), -d, d), 0.0, 1.0);
  const double rx_new = clamp(s.rx + clamp(action.rdx(), -d, d),
                              std::max(0.0, task.right_xmin), 1.0);
  const double ry_new = clamp(s.ry + clamp(action.rdy(), -d, d), 0.0, 1.0);

  // Held blocks ride rigidly with the realized arm motion.
  for (auto& b : s.blocks) {
    if (b.held_by == Holder::left) {
      b.x = clamp(b.x + (lx_new - s.lx), 0.0, 1.0);
      b.y = clamp(b.y + (ly_new - s.ly), 0.0, 1.0);
    } else if (b.held_by == Holder::right) {
      b.x = clamp(b.x + (rx_new - s.rx), 0.0, 1.0);
      b.y = clamp(b.y + (ry_new - s.ry), 0.0, 1.0);
    }
  }
  s.lx = lx_new;
  s.ly = ly_new;
  s.rx = rx_new;
  s.ry = ry_new;

  // Grippers, left arm first. Closing grasps the nearest free block within
  // reach; opening releases.
  const double lg = clamp(action.lgrip(), -1.0, 1.0);
  const double rg = clamp(action.rgrip(), -1.0, 1.0);
  auto held_index = [&](Holder h) {
    for (std::size_t i = 0; i < s.blocks.size(); ++i)
      if (s.blocks[i].held_by == h) return static_cast<int>(i);
    return -1;
  };
  auto try_grasp = [&](Holder arm, double ax, double ay) {
    int best = -1;
    double best_d = task.grasp_radius;
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      if (s.blocks[i].held_by != Holder::none) continue;
      const double dd = dist(ax, ay, s.blocks[i].x, s.blocks[i].y);
      if (dd <= best_d) {
        best_d = dd;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) s.blocks[static_cast<std::size_t>(best)].held_by = arm;
  };

  if (lg > 0.0) {
    if (held_index(Holder::left) < 0) try_grasp(Holder::left, s.lx, s.ly);
  } else {
    const int i = held_index(Holder::left);
    if (i >= 0) s.blocks[static_cast<std::size_t>(i)].held_by = Holder::none;
  }
  if (rg > 0.0) {
    if (held_index(Holder::right) < 0) try_grasp(Holder::right, s.rx, s.ry);
  } else {
    const int i = held_index(Holder::right);
    if (i >= 0) s.blocks[static_cast<std::size_t>(i)].held_by = Holder::none;
  }
  s.lgrip = lg;
  s.rgrip = rg;
  s.step_count += 1;
  return s;
}

bool check_success(const WorldState& state, const TaskSpec& task) {
  switch (task.id) {
    case TaskId::handover: {
      const BlockState& b = state.blocks[0];
      return task.goals[0].contains(b.x, b.y) && b.held_by == Holder::none;
    }
    case TaskId::dual_pick:
      for (std::size_t i = 0; i < state.blocks.size(); ++i)
        if (!task.goals[i].contains(state.blocks[i].x, state.blocks[i].y))
          return false;
      return true;
    case TaskId::side_pick:
      return task.goals[0].contains(state.blocks[0].x, state.blocks[0].y);
  }
  return false;
}

namespace {

constexpr double kDim = 64.0 / 255.0;  // goal outline intensity

int to_px(double v) {
  const int p = static_cast<int>(std::floor(v * kRenderSize));
  return std::min(kRenderSize - 1, std::max(0, p));
}

void paint_max(Image& img, int y, int x, int ch, double v) {
  if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
  double& px = img.at(y, x, ch);
  px = std::max(px, v);
}

void draw_rect_outline(Image& img, const Rect& r) {
  const int x0 = to_px(r.x0), x1 = to_px(r.x1);
  const int y0 = to_px(r.y0), y1 = to_px(r.y1);
  for (int x = x0; x <= x1; ++x)
    for (int ch = 0; ch < 3; ++ch) {
      paint_max(img, y0, x, ch, kDim);
      paint_max(img, y1, x, ch, kDim);
    }
  for (int y = y0; y <= y1; ++y)
    for (int ch = 0; ch < 3; ++ch) {
      paint_max(img, y, x0, ch, kDim);
      paint_max(img, y, x1, ch, kDim);
    }
}

void draw_square(Image& img, double cx, double cy, int half, int ch, double v) {
  const int px = to_px(cx), py = to_px(cy);
  for (int y = py - half; y <= py + half; ++y)
    for (int x = px - half; x <= px + half; ++x) paint_max(img, y, x, ch, v);
}

void draw_disc(Image& img, double cx, double cy, double radius_px, int ch,
               double v) {
  const int px = to_px(cx), py = to_px(cy);
  const int r = static_cast<int>(std::ceil(radius_px));
  for (int y = py - r; y <= py + r; ++y)
    for (int x = px - r; x <= px + r; ++x) {
      const double dx = x - px, dy = y - py;
      if (dx * dx + dy * dy <= radius_px * radius_px)
        paint_max(img, y, x, ch, v);
    }
}

}  // namespace

Image render(const WorldState& state, const TaskSpec& task) {
  Image img;
  img.h = kRenderSize;
  img.w = kRenderSize;
  img.c = 3;
  img.px.assign(static_cast<std::size_t>(kRenderSize) * kRenderSize * 3, 0.0);
  for (const auto& g : task.goals) draw_rect_outline(img, g);
  for (const auto& b : state.blocks) draw_square(img, b.x, b.y, 1, 1, 1.0);
  draw_disc(img, state.lx, state.ly, 2.2, 0, 1.0);
  draw_disc(img, state.rx, state.ry, 2.2, 2, 1.0);
  return img;
}

namespace {

// Step toward a waypoint, saturating at the velocity limit. Within one step
// of the target it lands exactly on it, so approach never oscillates.
void move_towards(double fromx, double fromy, double tox, double toy,
                  double max_step, double* dx, double* dy) {
  *dx = clamp(tox - fromx, -max_step, max_step);
  *dy = clamp(toy - fromy, -max_step, max_step);
}

struct ArmCmd {
  double dx = 0, dy = 0, grip = 0;
};

// Approach the block and close once securely inside the grasp radius.
ArmCmd approach_and_grasp(double ax, double ay, const BlockState& b,
                          const TaskSpec& task) {
  ArmCmd c;
  const double dd = dist(ax, ay, b.x, b.y);
  if (dd <= task.grasp_radius * 0.5) {
    c.grip = 1.0;
  } else {
    move_towards(ax, ay, b.x, b.y, task.max_step, &c.dx, &c.dy);
    c.grip = -1.0;
  }
  return c;
}

// Carry toward a point; open once the held block is inside the goal.
ArmCmd carry_to(double ax, double ay, const BlockState& b, const Rect& goal,
                const TaskSpec& task) {
  ArmCmd c;
  c.grip = 1.0;
  if (goal.contains(b.x, b.y)) {
    c.grip = -1.0;  // release in place
    return c;
  }
  move_towards(ax, ay, goal.cx(), goal.cy(), task.max_step, &c.dx, &c.dy);
  return c;
}

ArmCmd hold_at(double ax, double ay, double tx, double ty,
               const TaskSpec& task, double grip) {
  ArmCmd c;
  move_towards(ax, ay, tx, ty, task.max_step, &c.dx, &c.dy);
  c.grip = grip;
  return c;
}

ActionVec pack(const ArmCmd& l, const ArmCmd& r) {
  ActionVec a;
  a.v[0] = l.dx;
  a.v[1] = l.dy;
  a.v[2] = l.grip;
  a.v[3] = r.dx;
  a.v[4] = r.dy;
  a.v[5] = r.grip;
  return a;
}

ActionVec expert_handover(const WorldState& s, const TaskSpec& task) {
  const BlockState& b = s.blocks[0];
  const Rect& goal = task.goals[0];
  const double exch_x = 0.50;

  if (check_success(s, task)) return ActionVec{};

  ArmCmd left, right;
  if (b.held_by == Holder::right) {
    right = carry_to(s.rx, s.ry, b, goal, task);
    left = hold_at(s.lx, s.ly, 0.15, 0.50, task, -1.0);
  } else if (b.held_by == Holder::left) {
    // Carry to the exchange point; release there. The right arm stages
    // nearby with an open gripper and never closes while the left holds.
    if (b.x >= exch_x - 0.01) {
      left.grip = -1.0;  // release at the exchange point
      right = hold_at(s.rx, s.ry, 0.56, b.y, task, -1.0);
    } else {
      // Steer the block itself toward the exchange point; it rides rigidly.
      move_towards(b.x, b.y, exch_x + 0.01, 0.5, task.max_step, &left.dx,
                   &left.dy);
      left.grip = 1.0;
      right = hold_at(s.rx, s.ry, 0.56, 0.50, task, -1.0);
    }
  } else {
    // Block is free.
    if (b.x >= task.right_xmin) {
      right = approach_and_grasp(s.rx, s.ry, b, task);
      left = hold_at(s.lx, s.ly, 0.15, 0.50, task, -1.0);
    } else {
      left = approach_and_grasp(s.lx, s.ly, b, task);
      right = hold_at(s.rx, s.ry, 0.56, 0.50, task, -1.0);
    }
  }
  return pack(left, right);
}

ActionVec expert_dual_pick(const WorldState& s, const TaskSpec& task) {
  if (check_success(s, task)) return ActionVec{};
  ArmCmd cmds[2];
  const double ax[2] = {s.lx, s.rx};
  const double ay[2] = {s.ly, s.ry};
  for (int arm = 0; arm < 2; ++arm) {
    const BlockState& b = s.blocks[static_cast<std::size_t>(arm)];
    const Rect& goal = task.goals[static_cast<std::size_t>(arm)];
    const Holder me = arm == 0 ? Holder::left : Holder::right;
    if (goal.contains(b.x, b.y) && b.held_by == Holder::none) {
      cmds[arm] = ArmCmd{};  // done
    } else if (b.held_by == me) {
      cmds[arm] = carry_to(ax[arm], ay[arm], b, goal, task);
    } else {
      cmds[arm] = approach_and_grasp(ax[arm], ay[arm], b, task);
    }
  }
  return pack(cmds[0], cmds[1]);
}

ActionVec expert_side_pick(const WorldState& s, const TaskSpec& task) {
  if (check_success(s, task)) return ActionVec{};
  const BlockState& b = s.blocks[0];
  const Rect& goal = task.goals[0];
  ArmCmd left, right;
  const bool use_left =
      b.held_by == Holder::left ||
      (b.held_by == Holder::none && b.x < 0.5);
  if (use_left) {
    left = b.held_by == Holder::left ? carry_to(s.lx, s.ly, b, goal, task)
                                     : approach_and_grasp(s.lx, s.ly, b, task);
    right = hold_at(s.rx, s.ry, 0.85, 0.50, task, -1.0);
  } else {
    right = b.held_by == Holder::right
                ? carry_to(s.rx, s.ry, b, goal, task)
                : approach_and_grasp(s.rx, s.ry, b, task);
    left = hold_at(s.lx, s.ly, 0.15, 0.50, task, -1.0);
  }
  return pack(left, right);
}

}  // namespace

ActionVec scripted_expert(const WorldState& state, const TaskSpec& task) {
  switch (task.id) {
    case TaskId::handover: return expert_handover(state, task);
    case TaskId::dual_pick: return expert_dual_pick(state, task);
    case TaskId::side_pick: return expert_side_pick(state, task);
  }
  throw std::runtime_error("scripted_expert: unknown task");
}

}  // namespace bdc
