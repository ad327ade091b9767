// Command-line front end: demo collection, training, evaluation, the
// ablation grids, mask inspection, and metrics export.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bdc/attention_mask.hpp"
#include "bdc/checkpoint.hpp"
#include "bdc/rollout.hpp"
#include "bdc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bdc;

namespace {

const char* kTrainKeys[] = {
    "task",        "chunk_size",     "frame_count",  "prediction_weight",
    "attention_mode", "granularity", "tokenizer",    "batch_size",
    "total_steps", "base_lr",        "warmup_steps", "weight_decay",
    "K",           "S_infer",        "shift_max",    "seed",
    "precision",   "width",          "encoder_layers", "decoder_layers",
    "heads",       "latent_dim",     "spatial_factor", "patch_size",
    "ff_mult",     "cnn_c1",         "cnn_c2",       "cnn_c3",
    "grad_clip",   "log_every",      "val_every"};

// Registers one string option per TrainConfig key; values are applied on top
// of the config file so flags override file values.
void add_train_config_flags(CLI::App* app,
                            std::vector<std::pair<std::string, std::string>>* overrides) {
  for (const char* key : kTrainKeys) {
    app->add_option_function<std::string>(
        "--" + std::string(key),
        [overrides, key](const std::string& v) {
          overrides->emplace_back(key, v);
        },
        "TrainConfig key " + std::string(key));
  }
}

std::string runs_root() {
  const char* env = std::getenv("BDC_RUNS_DIR");
  return env && *env ? env : "runs";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  if (out.empty()) throw CLI::ValidationError("seeds", "empty seed list");
  return out;
}

struct Cell {
  std::string variant;
  std::uint64_t seed;
  TrainConfig cfg;
};

std::vector<std::pair<std::string, TrainConfig>> suite_variants(
    const std::string& suite, const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> cells;
  auto push = [&](const std::string& name, TrainConfig cfg) {
    cells.emplace_back(name, std::move(cfg));
  };
  if (suite == "attention") {
    for (const char* mode : {"full", "decoupled", "unidirectional"}) {
      TrainConfig c = base;
      c.attention_mode = mode;
      push(mode, c);
    }
  } else if (suite == "pred_weight") {
    for (double w : {0.0, 0.05, 0.2, 0.5}) {
      TrainConfig c = base;
      c.prediction_weight = w;
      std::ostringstream name;
      name << "w" << w;
      push(name.str(), c);
    }
  } else if (suite == "horizon") {
    for (int f : {1, 4, 8, base.chunk_size}) {
      TrainConfig c = base;
      c.frame_count = std::min(f, base.chunk_size);
      push("F" + std::to_string(c.frame_count), c);
    }
  } else if (suite == "chunk") {
    for (int n : {5, 10, 20, 40}) {
      TrainConfig c = base;
      c.chunk_size = n;
      c.frame_count = std::min(base.frame_count, n);
      push("N" + std::to_string(n), c);
    }
  } else if (suite == "strategy") {
    {
      TrainConfig c = base;  // no prediction at all
      c.frame_count = 0;
      c.prediction_weight = 0.0;
      push("none", c);
    }
    {
      TrainConfig c = base;  // next-frame pixels
      c.frame_count = 1;
      c.tokenizer = "downsample_patch";
      push("next_pixels", c);
    }
    {
      TrainConfig c = base;  // next-frame latents
      c.frame_count = 1;
      c.tokenizer = "linear_autoencoder";
      push("next_latents", c);
    }
    {
      TrainConfig c = base;  // multi-frame latents
      c.tokenizer = "linear_autoencoder";
      push("multi_latents", c);
    }
  } else {
    throw CLI::ValidationError("suite", "unknown suite " + suite);
  }
  // Drop duplicate variant names (horizon can repeat when N == 8).
  std::vector<std::pair<std::string, TrainConfig>> unique;
  for (auto& c : cells) {
    bool seen = false;
    for (auto& u : unique) seen = seen || u.first == c.first;
    if (!seen) unique.push_back(std::move(c));
  }
  return unique;
}

int run_eval_to_files(const CheckpointData& ckpt, const std::string& task,
                      int episodes, const std::vector<std::uint64_t>& seeds,
                      int infer_steps, const std::string& report_path,
                      const std::string& csv_path) {
  const Policy<float> policy = Policy<float>::load(ckpt, infer_steps);
  const TaskSpec spec = TaskSpec::make(parse_task(task));
  const EvalReport report = evaluate(policy, spec, episodes, seeds);
  if (!report_path.empty()) write_report(report_path, report);
  if (!csv_path.empty()) append_report_csv(csv_path, report);
  std::printf("%s %s: mean %.1f%% std %.1f%% over %zu seed(s), %d episodes each\n",
              task.c_str(), report.mode.c_str(), report.mean, report.stddev,
              report.seeds.size(), episodes);
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& task,
               const std::string& data_dir, TrainConfig base,
               const std::vector<std::uint64_t>& seeds, int episodes) {
  base.task = task;
  if (!fs::exists(fs::path(data_dir) / "manifest.json"))
    throw std::runtime_error("ablate: dataset not collected at " + data_dir);

  const fs::path suite_dir = fs::path(runs_root()) / suite / task;
  fs::create_directories(suite_dir);

  std::vector<Cell> cells;
  for (auto& [variant, cfg] : suite_variants(suite, base))
    for (std::uint64_t seed : seeds) {
      Cell cell;
      cell.variant = variant;
      cell.seed = seed;
      cell.cfg = cfg;
      cell.cfg.seed = seed;
      cells.push_back(std::move(cell));
    }

  struct Row {
    std::string variant;
    std::uint64_t seed;
    double rate;
  };
  std::vector<Row> rows;

  for (const Cell& cell : cells) {
    const std::string cell_name =
        cell.variant + "_s" + std::to_string(cell.seed);
    const fs::path cell_dir = suite_dir / cell_name;
    const std::string resolved = cell.cfg.serialize();
    const std::string want_hash = std::to_string(fnv1a(resolved));

    bool done = false;
    if (fs::exists(cell_dir / "report.json") &&
        fs::exists(cell_dir / "config.resolved")) {
      std::ifstream is(cell_dir / "config.resolved");
      std::stringstream ss;
      ss << is.rdbuf();
      done = ss.str() == resolved;
    }
    double rate = 0.0;
    if (done) {
      std::ifstream is(cell_dir / "report.json");
      json j;
      is >> j;
      rate = j.at("per_seed_success_pct")[0].get<double>();
      std::printf("[skip] %s (checksum %s)\n", cell_name.c_str(),
                  want_hash.c_str());
    } else {
      std::printf("[run ] %s\n", cell_name.c_str());
      try {
        fs::create_directories(cell_dir);
        const TrainResult tr =
            run_training(cell.cfg, data_dir, cell_dir.string());
        const CheckpointData ckpt = load_checkpoint(tr.checkpoint_path);
        const Policy<float> policy =
            Policy<float>::load(ckpt, cell.cfg.infer_steps);
        const TaskSpec spec = TaskSpec::make(parse_task(task));
        const EvalReport report =
            evaluate(policy, spec, episodes, {cell.seed});
        write_report((cell_dir / "report.json").string(), report);
        rate = report.per_seed_rates[0];
      } catch (const std::exception& e) {
        std::fprintf(stderr, "ablate: cell %s failed: %s\n", cell_name.c_str(),
                     e.what());
        return 1;
      }
    }
    rows.push_back({cell.variant, cell.seed, rate});
  }

  // Suite CSV + summary, regenerated deterministically from cell results.
  {
    std::ofstream csv(suite_dir / "results.csv", std::ios::trunc);
    csv << "task,cell,seed,episodes,success_rate\n";
    for (const Row& r : rows)
      csv << task << "," << r.variant << "," << r.seed << "," << episodes
          << "," << r.rate << "\n";
  }
  {
    json summary;
    summary["suite"] = suite;
    summary["task"] = task;
    summary["episodes_per_seed"] = episodes;
    json by_variant = json::object();
    for (const Row& r : rows) {
      by_variant[r.variant]["rates"].push_back(r.rate);
      by_variant[r.variant]["seeds"].push_back(r.seed);
    }
    for (auto& [variant, v] : by_variant.items()) {
      double sum = 0.0;
      for (const auto& x : v["rates"]) sum += x.get<double>();
      const double mean = sum / v["rates"].size();
      double sq = 0.0;
      for (const auto& x : v["rates"])
        sq += (x.get<double>() - mean) * (x.get<double>() - mean);
      v["mean"] = mean;
      v["std"] = std::sqrt(sq / v["rates"].size());
    }
    summary["cells"] = by_variant;
    std::ofstream os(suite_dir / "summary.json", std::ios::trunc);
    os << summary.dump(2) << "\n";
  }
  std::printf("suite %s done: %zu cells -> %s\n", suite.c_str(), cells.size(),
              (suite_dir / "results.csv").c_str());
  return 0;
}

int cmd_export_metrics(const std::string& root, const std::string& out) {
  std::ofstream os(out, std::ios::trunc);
  os << "suite,task,cell,seed,episodes,success_rate\n";
  std::vector<fs::path> files;
  if (fs::exists(root))
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().filename() == "results.csv")
        files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string suite = f.parent_path().parent_path().filename().string();
    std::ifstream is(f);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line))
      if (!line.empty()) os << suite << "," << line << "\n";
  }
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bimanual diffusion-policy workbench"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "Collect scripted-expert demos");
  std::string c_task = "handover", c_out = "data/handover";
  int c_episodes = 60;
  std::uint64_t c_seed = 1;
  collect->add_option("--task", c_task, "handover | dual_pick | side_pick");
  collect->add_option("--episodes", c_episodes, "successful episodes to keep");
  collect->add_option("--seed", c_seed);
  collect->add_option("--out", c_out, "dataset directory");

  // train
  auto* train = app.add_subcommand("train", "Train a policy");
  std::string t_data = "data/handover", t_out = "runs/single", t_config;
  std::vector<std::pair<std::string, std::string>> t_overrides;
  train->add_option("--data", t_data, "dataset directory");
  train->add_option("--out", t_out, "output directory");
  train->add_option("--config", t_config, "flat key=value config file");
  add_train_config_flags(train, &t_overrides);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_ckpt, e_task = "handover", e_seeds = "1,2,3", e_report, e_csv;
  int e_episodes = 50, e_infer_steps = 10;
  eval_cmd->add_option("--checkpoint", e_ckpt)->required();
  eval_cmd->add_option("--task", e_task);
  eval_cmd->add_option("--episodes", e_episodes, "episodes per seed");
  eval_cmd->add_option("--seeds", e_seeds, "comma separated");
  eval_cmd->add_option("--S_infer", e_infer_steps, "DDIM steps at inference");
  eval_cmd->add_option("--report", e_report, "report JSON path");
  eval_cmd->add_option("--csv", e_csv, "per-seed CSV path (appended)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  std::string a_suite, a_task = "handover", a_data = "data/handover", a_config,
              a_seeds = "1,2,3";
  int a_episodes = 20;
  std::vector<std::pair<std::string, std::string>> a_overrides;
  ablate->add_option("--suite", a_suite,
                     "attention | pred_weight | horizon | chunk | strategy")
      ->required();
  ablate->add_option("--task", a_task);
  ablate->add_option("--data", a_data);
  ablate->add_option("--config", a_config);
  ablate->add_option("--seeds", a_seeds);
  ablate->add_option("--episodes", a_episodes, "episodes per cell eval");
  add_train_config_flags(ablate, &a_overrides);

  // inspect-mask
  auto* inspect = app.add_subcommand("inspect-mask", "Print an attention mask");
  std::string m_mode = "unidirectional", m_gran = "per_frame",
              m_frames = "2,4";
  int m_chunk = 4, m_tokens = 1;
  inspect->add_option("--mode", m_mode, "full | decoupled | unidirectional");
  inspect->add_option("--chunk", m_chunk, "action tokens N");
  inspect->add_option("--frames", m_frames, "frame timestamps, e.g. 2,4");
  inspect->add_option("--tokens-per-frame", m_tokens);
  inspect->add_option("--granularity", m_gran, "per_frame | block");

  // export-metrics
  auto* exp = app.add_subcommand("export-metrics",
                                 "Flatten all suite results into one CSV");
  std::string x_root = runs_root(), x_out = "metrics.csv";
  exp->add_option("--runs", x_root);
  exp->add_option("--out", x_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect->parsed()) {
      const DatasetManifest m = collect_demos(c_task, c_episodes, c_seed, c_out);
      std::printf("collected %zu episodes (%d attempts) -> %s\n",
                  m.episodes.size(), m.attempts, c_out.c_str());
      return 0;
    }
    if (train->parsed()) {
      TrainConfig cfg =
          t_config.empty() ? TrainConfig{} : TrainConfig::from_file(t_config);
      for (const auto& [k, v] : t_overrides) cfg.set(k, v);
      const TrainResult r = run_training(cfg, t_data, t_out);
      std::printf("trained -> %s (action loss %.6g)\n",
                  r.checkpoint_path.c_str(), r.final_action_loss);
      return 0;
    }
    if (eval_cmd->parsed()) {
      const CheckpointData ckpt = load_checkpoint(e_ckpt);
      return run_eval_to_files(ckpt, e_task, e_episodes,
                               parse_seed_list(e_seeds), e_infer_steps,
                               e_report, e_csv);
    }
    if (ablate->parsed()) {
      TrainConfig cfg =
          a_config.empty() ? TrainConfig{} : TrainConfig::from_file(a_config);
      for (const auto& [k, v] : a_overrides) cfg.set(k, v);
      return cmd_ablate(a_suite, a_task, a_data, cfg, parse_seed_list(a_seeds),
                        a_episodes);
    }
    if (inspect->parsed()) {
      AttentionMaskSpec spec;
      spec.mode = parse_attention_mode(m_mode);
      spec.granularity = parse_granularity(m_gran);
      spec.n_actions = m_chunk;
      std::istringstream is(m_frames);
      std::string tok;
      while (std::getline(is, tok, ','))
        if (!tok.empty()) spec.frame_groups.push_back({std::stoi(tok), m_tokens});
      std::cout << render_mask(spec);
      return 0;
    }
    if (exp->parsed()) return cmd_export_metrics(x_root, x_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    std::fprintf(stderr, "run with --help for usage\n");
    return 1;
  }
  return 0;
}
