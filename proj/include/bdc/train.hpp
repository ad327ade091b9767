#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bdc/checkpoint.hpp"
#include "bdc/episode.hpp"
#include "bdc/model.hpp"
#include "bdc/schedule.hpp"
#include "bdc/sim.hpp"

namespace bdc {

// All knobs of a training run. Config files are flat key=value lines with
// exactly these keys; CLI flags override file values.
struct TrainConfig {
  std::string task = "handover";
  int chunk_size = 20;              // key: chunk_size (N)
  int frame_count = 8;              // key: frame_count (F); 0 = action-only
  double prediction_weight = 0.2;   // key: prediction_weight (w)
  std::string attention_mode = "unidirectional";
  std::string granularity = "per_frame";
  std::string tokenizer = "linear_autoencoder";
  int batch_size = 32;
  int total_steps = 15000;
  double base_lr = 1e-4;
  int warmup_steps = 500;
  double weight_decay = 1e-2;
  int diffusion_steps = 100;        // key: K
  int infer_steps = 10;             // key: S_infer
  int shift_max = 3;
  std::uint64_t seed = 1;
  std::string precision = "f32";    // f32 | f64

  // Model dimensions.
  int width = 64;
  int encoder_layers = 2;
  int decoder_layers = 3;
  int heads = 4;
  int latent_dim = 16;
  int spatial_factor = 4;
  int patch_size = 4;
  int ff_mult = 4;
  int cnn_c1 = 16, cnn_c2 = 24, cnn_c3 = 32;

  // Harness.
  double grad_clip = 0.0;  // global-norm cap, 0 = off
  int log_every = 100;
  int val_every = 500;

  void set(const std::string& key, const std::string& value);
  std::string serialize() const;
  static TrainConfig from_file(const std::string& path);
  void validate() const;
};

double lr_at(int step, const TrainConfig& cfg);

Image random_shift_augment(const Image& img, int shift_max, Rng& rng);

// Rolls out the scripted expert until n successful episodes are stored.
// Returns the manifest; aborts if the expert fails too often.
DatasetManifest collect_demos(const std::string& task, int n_episodes,
                              std::uint64_t seed, const std::string& out_dir);

template <class S>
struct Batch {
  std::vector<Tensor<S>> images;
  std::vector<Tensor<S>> proprio;
  std::vector<Tensor<S>> actions;   // normalized, N x A
  std::vector<Tensor<S>> latents;   // normalized, M x D_v; empty if no frames
  std::vector<int> k;               // diffusion step per sample, in [1, K]
  std::vector<Tensor<S>> eps_a;
  std::vector<Tensor<S>> eps_v;

  int size() const { return static_cast<int>(images.size()); }
};

struct StepLosses {
  double action = 0.0;
  double video = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string best_checkpoint_path;
  double step100_action_loss = 0.0;
  double final_action_loss = 0.0;
  double best_val_loss = 0.0;
};

// Decoupled-weight-decay adaptive-moment optimizer (beta 0.9/0.999,
// eps 1e-8), one state slot per parameter coordinate.
template <class S>
class AdamW {
 public:
  AdamW(const std::vector<Tensor<S>>& params, double weight_decay)
      : params_(params), wd_(weight_decay) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  void step(const std::vector<std::vector<S>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      S* w = params_[p].mutable_data();
      const std::vector<S>& g = grads[p];
      std::vector<S>& m = m_[p];
      std::vector<S>& v = v_[p];
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = S(0.9) * m[i] + S(0.1) * g[i];
        v[i] = S(0.999) * v[i] + S(0.001) * g[i] * g[i];
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        const double upd =
            mhat / (std::sqrt(vhat) + 1e-8) + wd_ * static_cast<double>(w[i]);
        w[i] = static_cast<S>(static_cast<double>(w[i]) - lr * upd);
      }
    }
  }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  double wd_;
  long t_ = 0;
};

// Owns the dataset, normalizers, tokenizer, model, optimizer and the
// training loop. One instance per run.
template <class S>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::string data_dir, std::string out_dir);

  void prepare();
  Batch<S> make_batch(int step);
  StepLosses train_step(const Batch<S>& batch);
  TrainResult run();

  // Step index used by the learning-rate schedule; run() advances it.
  void set_step(int step) { step_counter_ = step; }
  int step() const { return step_counter_; }

  const PolicyModel<S>& model() const { return *model_; }
  const Normalizer& action_norm() const { return action_norm_; }
  const Normalizer& latent_norm() const { return latent_norm_; }
  const NoiseSchedule& schedule() const { return sched_; }
  CheckpointData make_checkpoint() const;

 private:
  double validation_loss();
  Batch<S> assemble(Rng& rng, const std::vector<int>& episode_pool);

  TrainConfig cfg_;
  std::string data_dir_, out_dir_;
  std::vector<Episode> episodes_;
  std::vector<int> train_idx_, val_idx_;
  FrameSamplePlan plan_;
  std::optional<LatentTokenizer> tokenizer_;
  Normalizer action_norm_, latent_norm_;
  // token cache: per episode, per step, tokens_per_frame rows of D_v values
  std::vector<std::vector<std::vector<std::vector<double>>>> token_cache_;
  NoiseSchedule sched_;
  std::optional<PolicyModel<S>> model_;
  std::optional<AdamW<S>> opt_;
  std::vector<Batch<S>> val_batches_;
  bool prepared_ = false;
  int step_counter_ = 0;
};

// Dispatches on cfg.precision and runs the whole training pipeline.
TrainResult run_training(const TrainConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir);

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace bdc
