#include "bdc/rollout.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace bdc {

using nlohmann::json;

RolloutResult rollout_episode_fn(const ChunkPolicyFn& chunk_fn, int chunk,
                                 int action_dim, const TaskSpec& task,
                                 std::uint64_t seed, bool early_success) {
  using clock = std::chrono::steady_clock;
  RolloutResult result;
  WorldState state = reset(task, seed);
  result.trajectory.push_back(state);
  bool done_early = false;
  int replan = 0;
  while (state.step_count < task.episode_len && !done_early) {
    const auto t0 = clock::now();
    const std::vector<double> rows = chunk_fn(state, replan);
    result.infer_ms_total +=
        std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    result.infer_calls += 1;
    ++replan;
    if (rows.size() != static_cast<std::size_t>(chunk) * action_dim)
      throw std::runtime_error("rollout: chunk policy returned a bad shape");
    for (int i = 0;
         i < chunk && state.step_count < task.episode_len && !done_early;
         ++i) {
      std::vector<double> row(
          rows.begin() + static_cast<std::ptrdiff_t>(i) * action_dim,
          rows.begin() + static_cast<std::ptrdiff_t>(i + 1) * action_dim);
      state = step(state, ActionVec::from(row), task);
      result.trajectory.push_back(state);
      if (early_success && check_success(state, task)) done_early = true;
    }
  }
  result.success = done_early || check_success(state, task);
  return result;
}

ChunkPolicyFn make_expert_chunk_fn(const TaskSpec& task, int chunk) {
  return [task, chunk](const WorldState& state, int) {
    std::vector<double> rows;
    rows.reserve(static_cast<std::size_t>(chunk) * ActionVec::dim);
    WorldState sim = state;
    for (int i = 0; i < chunk; ++i) {
      const ActionVec a = scripted_expert(sim, task);
      const auto v = a.to_vector();
      rows.insert(rows.end(), v.begin(), v.end());
      if (sim.step_count < task.episode_len) sim = step(sim, a, task);
    }
    return rows;
  };
}

std::string report_to_json(const EvalReport& r, bool include_timing) {
  json j;
  j["task"] = r.task;
  j["mode"] = r.mode;
  j["episodes_per_seed"] = r.episodes_per_seed;
  j["seeds"] = r.seeds;
  j["per_seed_success_pct"] = r.per_seed_rates;
  j["mean_success_pct"] = r.mean;
  j["std_success_pct"] = r.stddev;
  if (include_timing) j["infer_ms_mean"] = r.infer_ms_mean;
  j["config"] = r.config_snapshot;
  return j.dump(2) + "\n";
}

void write_report(const std::string& path, const EvalReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_report: cannot open " + path);
  os << report_to_json(r);
}

void append_report_csv(const std::string& path, const EvalReport& r) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("append_report_csv: cannot open " + path);
  if (fresh) os << "task,mode,seed,episodes,success_rate\n";
  for (std::size_t i = 0; i < r.seeds.size(); ++i)
    os << r.task << "," << r.mode << "," << r.seeds[i] << ","
       << r.episodes_per_seed << "," << r.per_seed_rates[i] << "\n";
}

}  // namespace bdc
