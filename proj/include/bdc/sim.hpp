#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdc/latents.hpp"

namespace bdc {

enum class TaskId { handover, dual_pick, side_pick };

TaskId parse_task(const std::string& s);
std::string to_string(TaskId t);

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

// Fixed per-task geometry and limits. Workspace is [0, 1]^2; velocities are
// clamped to +-max_step per axis per step.
struct TaskSpec {
  TaskId id = TaskId::handover;
  int episode_len = 120;
  double grasp_radius = 0.06;
  double max_step = 0.05;
  double left_xmax = 1.0;   // left arm may not cross this x
  double right_xmin = 0.0;  // right arm may not go below this x
  int n_blocks = 1;
  std::vector<Rect> spawn;  // one region per block
  std::vector<Rect> goals;

  static TaskSpec make(TaskId id);
};

enum class Holder : int { none = -1, left = 0, right = 1 };

struct BlockState {
  double x = 0, y = 0;
  Holder held_by = Holder::none;
};

struct WorldState {
  TaskId task = TaskId::handover;
  double lx = 0, ly = 0, rx = 0, ry = 0;
  double lgrip = 0, rgrip = 0;  // <= 0 open, > 0 closed
  std::vector<BlockState> blocks;
  int step_count = 0;

  // p_t = (left_ee, left_grip, right_ee, right_grip), length 6.
  std::vector<double> proprio() const { return {lx, ly, lgrip, rx, ry, rgrip}; }
};

// Action layout: (left dx, left dy, left grip, right dx, right dy,
// right grip). Deltas are clamped to +-max_step before execution.
struct ActionVec {
  double v[6] = {0, 0, 0, 0, 0, 0};

  static constexpr int dim = 6;
  double ldx() const { return v[0]; }
  double ldy() const { return v[1]; }
  double lgrip() const { return v[2]; }
  double rdx() const { return v[3]; }
  double rdy() const { return v[4]; }
  double rgrip() const { return v[5]; }
  static ActionVec from(const std::vector<double>& a);
  std::vector<double> to_vector() const { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }
};

WorldState reset(const TaskSpec& task, std::uint64_t seed);
WorldState step(const WorldState& state, const ActionVec& action,
                const TaskSpec& task);
bool check_success(const WorldState& state, const TaskSpec& task);

// 32x32x3 rasterization in [0, 1]: goals as dim outlines on all channels,
// blocks as green squares, left arm red disc, right arm blue disc. All pixel
// values are exact multiples of 1/255 so 8-bit round-trips are lossless.
Image render(const WorldState& state, const TaskSpec& task);

constexpr int kRenderSize = 32;

// Waypoint proportional controller solving the task from any reachable
// state; stateless, the phase is inferred from the world state.
ActionVec scripted_expert(const WorldState& state, const TaskSpec& task);

}  // namespace bdc
