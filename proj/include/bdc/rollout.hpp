#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "bdc/checkpoint.hpp"
#include "bdc/episode.hpp"
#include "bdc/model.hpp"
#include "bdc/schedule.hpp"
#include "bdc/sim.hpp"

namespace bdc {

// A loaded policy: model plus everything needed to run it.
template <class S>
struct Policy {
  PolicyModel<S> model;
  Normalizer action_norm;
  NoiseSchedule sched;
  InferenceTimesteps timesteps;

  static Policy load(const CheckpointData& data, int infer_steps) {
    Policy p{model_from_checkpoint<S>(data), data.action_norm,
             build_cosine_schedule(data.config.diffusion_steps),
             make_inference_timesteps(data.config.diffusion_steps,
                                      infer_steps)};
    return p;
  }
};

// Deterministic DDIM rollout of one action chunk from seeded Gaussian
// noise; the result is denormalized to raw action units. With
// co_denoise_latents the video tokens are denoised alongside (mandatory in
// full attention mode, wasted work in the others).
template <class S>
Tensor<S> infer_action_chunk(const PolicyModel<S>& model,
                             const ObservationEmbedding<S>& obs,
                             const Normalizer& action_norm,
                             const NoiseSchedule& sched,
                             const InferenceTimesteps& ts, std::uint64_t seed,
                             bool co_denoise_latents = false) {
  if (!action_norm.fitted)
    throw std::runtime_error("infer_action_chunk: normalizer not fitted");
  const ModelConfig& cfg = model.config();
  if (cfg.attention_mode == AttentionMode::full && !co_denoise_latents)
    throw std::runtime_error(
        "infer_action_chunk: full attention requires co-denoised latents");

  Rng a_rng(seed, /*stream=*/31);
  std::vector<S> a0(static_cast<std::size_t>(cfg.chunk) * cfg.action_dim);
  for (auto& v : a0) v = static_cast<S>(a_rng.normal());
  Tensor<S> a = Tensor<S>::from({cfg.chunk, cfg.action_dim}, std::move(a0));

  Tensor<S> v;
  if (co_denoise_latents) {
    Rng v_rng(seed, /*stream=*/32);
    std::vector<S> v0(static_cast<std::size_t>(cfg.frame_tokens()) *
                      cfg.latent_dim);
    for (auto& x : v0) x = static_cast<S>(v_rng.normal());
    v = Tensor<S>::from({cfg.frame_tokens(), cfg.latent_dim}, std::move(v0));
  }

  for (int i = 0; i < ts.pairs(); ++i) {
    const int k = ts.k(i), kp = ts.k_prev(i);
    Tape<S> tape(/*recording=*/false);
    std::optional<Tensor<S>> latents;
    if (co_denoise_latents) latents = v;
    const DecoderOutput<S> out =
        model.denoise_forward(tape, obs, k, a, latents);
    a = ddim_step(a, out.a0_hat, k, kp, sched, /*clip=*/true);
    if (co_denoise_latents)
      v = ddim_step(v, out.v0_hat, k, kp, sched, /*clip=*/true);
  }

  // Denormalize row by row.
  Tensor<S> result = Tensor<S>::zeros({cfg.chunk, cfg.action_dim});
  for (int i = 0; i < cfg.chunk; ++i) {
    std::vector<double> row(static_cast<std::size_t>(cfg.action_dim));
    for (int j = 0; j < cfg.action_dim; ++j)
      row[static_cast<std::size_t>(j)] = static_cast<double>(
          a.data()[static_cast<std::size_t>(i) * cfg.action_dim + j]);
    const auto raw = action_norm.denormalize(row);
    for (int j = 0; j < cfg.action_dim; ++j)
      result.mutable_data()[static_cast<std::size_t>(i) * cfg.action_dim + j] =
          static_cast<S>(raw[static_cast<std::size_t>(j)]);
  }
  return result;
}

struct RolloutResult {
  bool success = false;
  std::vector<WorldState> trajectory;
  double infer_ms_total = 0.0;
  int infer_calls = 0;
};

// A chunk policy maps (state, replan index) to an N x action_dim row-major
// action chunk in raw units. The model policy and the expert self-test
// wrapper both fit this shape.
using ChunkPolicyFn =
    std::function<std::vector<double>(const WorldState&, int replan_index)>;

// Open-loop execution: observe, infer a chunk, run all N actions, repeat
// until the episode ends. Success is evaluated at termination unless
// early_success is set.
RolloutResult rollout_episode_fn(const ChunkPolicyFn& chunk_fn, int chunk,
                                 int action_dim, const TaskSpec& task,
                                 std::uint64_t seed,
                                 bool early_success = false);

// N future expert actions simulated open-loop from the given state.
ChunkPolicyFn make_expert_chunk_fn(const TaskSpec& task, int chunk);

template <class S>
ChunkPolicyFn make_model_chunk_fn(const Policy<S>& policy,
                                  std::uint64_t seed,
                                  bool co_denoise_latents = false) {
  const bool full_mode =
      policy.model.config().attention_mode == AttentionMode::full;
  const bool co = full_mode || co_denoise_latents;
  return [&policy, seed, co](const WorldState& state, int replan) {
    const TaskSpec task = TaskSpec::make(state.task);
    const Image raw = render(state, task);
    const Image obs_img = dequantize_image(quantize_image(raw), raw.h, raw.w,
                                           raw.c);  // match the training path
    Tape<S> tape(/*recording=*/false);
    const ObservationEmbedding<S> emb = policy.model.encode_observation(
        tape,
        Tensor<double>::from({raw.h, raw.w, raw.c}, obs_img.px)
            .template cast<S>(),
        Tensor<double>::from({6}, state.proprio()).template cast<S>());
    const Tensor<S> out = infer_action_chunk(
        policy.model, emb, policy.action_norm, policy.sched, policy.timesteps,
        hash3(seed, 41, static_cast<std::uint64_t>(replan)), co);
    std::vector<double> rows(out.numel());
    for (std::size_t i = 0; i < out.numel(); ++i)
      rows[i] = static_cast<double>(out.data()[i]);
    return rows;
  };
}

template <class S>
RolloutResult rollout_episode(const Policy<S>& policy, const TaskSpec& task,
                              std::uint64_t seed, bool early_success = false,
                              bool co_denoise_latents = false) {
  return rollout_episode_fn(
      make_model_chunk_fn(policy, seed, co_denoise_latents),
      policy.model.config().chunk, policy.model.config().action_dim, task,
      seed, early_success);
}

struct EvalReport {
  std::string task;
  std::string mode;
  int episodes_per_seed = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_rates;  // percent
  double mean = 0.0;
  double stddev = 0.0;  // over seeds, population form
  double infer_ms_mean = 0.0;
  std::string config_snapshot;
};

std::string report_to_json(const EvalReport& r, bool include_timing = true);
void write_report(const std::string& path, const EvalReport& r);
// One CSV row per (task, mode, seed): header
// task,mode,seed,episodes,success_rate
void append_report_csv(const std::string& path, const EvalReport& r);

template <class S>
EvalReport evaluate(const Policy<S>& policy, const TaskSpec& task, int episodes,
                    const std::vector<std::uint64_t>& seeds,
                    bool early_success = false) {
  if (episodes < 1) throw std::runtime_error("evaluate: episodes must be >= 1");
  EvalReport report;
  report.task = to_string(task.id);
  report.mode = to_string(policy.model.config().attention_mode);
  report.episodes_per_seed = episodes;
  report.seeds = seeds;
  report.config_snapshot = policy.model.config().serialize();
  double ms_total = 0.0;
  long calls = 0;
  for (std::uint64_t seed : seeds) {
    std::vector<int> wins(static_cast<std::size_t>(episodes), 0);
    std::vector<double> ms(static_cast<std::size_t>(episodes), 0.0);
    std::vector<long> cl(static_cast<std::size_t>(episodes), 0);
#pragma omp parallel for schedule(dynamic)
    for (int e = 0; e < episodes; ++e) {
      const RolloutResult r = rollout_episode(
          policy, task, hash3(seed, 0xE0, static_cast<std::uint64_t>(e)),
          early_success);
      wins[static_cast<std::size_t>(e)] = r.success ? 1 : 0;
      ms[static_cast<std::size_t>(e)] = r.infer_ms_total;
      cl[static_cast<std::size_t>(e)] = r.infer_calls;
    }
    int total = 0;
    for (int e = 0; e < episodes; ++e) {
      total += wins[static_cast<std::size_t>(e)];
      ms_total += ms[static_cast<std::size_t>(e)];
      calls += cl[static_cast<std::size_t>(e)];
    }
    report.per_seed_rates.push_back(100.0 * total / episodes);
  }
  double sum = 0.0;
  for (double r : report.per_seed_rates) sum += r;
  report.mean = report.per_seed_rates.empty()
                    ? 0.0
                    : sum / static_cast<double>(report.per_seed_rates.size());
  double sq = 0.0;
  for (double r : report.per_seed_rates)
    sq += (r - report.mean) * (r - report.mean);
  report.stddev =
      report.per_seed_rates.empty()
          ? 0.0
          : std::sqrt(sq / static_cast<double>(report.per_seed_rates.size()));
  report.infer_ms_mean = calls ? ms_total / static_cast<double>(calls) : 0.0;
  return report;
}

struct TimingReport {
  std::vector<std::string> modes;
  std::vector<double> mean_ms;       // median-of-means per mode
  std::vector<int> decoder_tokens;   // tokens processed per denoise call
};

// Wall-clock comparison of inference across attention modes on one fixed
// observation. Single-threaded kernels; >= 5 warmup calls are discarded and
// the mean is reported median-of-means over 5 groups.
template <class S>
TimingReport measure_inference_time(const PolicyModel<S>& model,
                                    const Normalizer& action_norm,
                                    const std::vector<AttentionMode>& modes,
                                    int trials, std::uint64_t seed = 1) {
  using clock = std::chrono::steady_clock;
  if (trials < 10)
    throw std::runtime_error("measure_inference_time: need at least 10 trials");
  kernels::ModeGuard guard(kernels::Mode::serial);
  const NoiseSchedule sched =
      build_cosine_schedule(model.config().diffusion_steps);
  const InferenceTimesteps ts =
      make_inference_timesteps(model.config().diffusion_steps, 10);

  // One fixed observation for every mode.
  const ModelConfig& cfg = model.config();
  Rng rng(seed, 55);
  Tensor<S> image = Tensor<S>::zeros({cfg.image_h, cfg.image_w, cfg.image_c});
  for (std::size_t i = 0; i < image.numel(); ++i)
    image.mutable_data()[i] = static_cast<S>(rng.uniform());
  Tensor<S> proprio = Tensor<S>::zeros({cfg.proprio_dim});
  for (std::size_t i = 0; i < proprio.numel(); ++i)
    proprio.mutable_data()[i] = static_cast<S>(rng.uniform());

  TimingReport report;
  for (AttentionMode mode : modes) {
    const PolicyModel<S> m = model.with_mode(mode);
    const bool co = mode == AttentionMode::full;
    auto run_once = [&](std::uint64_t s) {
      Tape<S> tape(/*recording=*/false);
      const ObservationEmbedding<S> emb =
          m.encode_observation(tape, image, proprio);
      (void)infer_action_chunk(m, emb, action_norm, sched, ts, s, co);
    };
    for (int i = 0; i < 5; ++i) run_once(static_cast<std::uint64_t>(i));
    std::vector<double> times(static_cast<std::size_t>(trials));
    for (int i = 0; i < trials; ++i) {
      const auto t0 = clock::now();
      run_once(static_cast<std::uint64_t>(100 + i));
      times[static_cast<std::size_t>(i)] =
          std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
    // Median of 5 group means.
    const int groups = 5;
    std::vector<double> means;
    const int per = trials / groups;
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (int i = g * per; i < (g + 1) * per; ++i)
        acc += times[static_cast<std::size_t>(i)];
      means.push_back(acc / per);
    }
    std::sort(means.begin(), means.end());
    report.modes.push_back(to_string(mode));
    report.mean_ms.push_back(means[means.size() / 2]);
    report.decoder_tokens.push_back(m.decoder_token_count(co));
  }
  return report;
}

}  // namespace bdc
