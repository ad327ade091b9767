#include "bdc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace bdc {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kStreamSplit = 11;
constexpr std::uint64_t kStreamVal = 13;
constexpr std::uint64_t kStreamBatch = 20;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "task") task = value;
  else if (key == "chunk_size") chunk_size = std::stoi(value);
  else if (key == "frame_count") frame_count = std::stoi(value);
  else if (key == "prediction_weight") prediction_weight = std::stod(value);
  else if (key == "attention_mode") attention_mode = value;
  else if (key == "granularity") granularity = value;
  else if (key == "tokenizer") tokenizer = value;
  else if (key == "batch_size") batch_size = std::stoi(value);
  else if (key == "total_steps") total_steps = std::stoi(value);
  else if (key == "base_lr") base_lr = std::stod(value);
  else if (key == "warmup_steps") warmup_steps = std::stoi(value);
  else if (key == "weight_decay") weight_decay = std::stod(value);
  else if (key == "K") diffusion_steps = std::stoi(value);
  else if (key == "S_infer") infer_steps = std::stoi(value);
  else if (key == "shift_max") shift_max = std::stoi(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "precision") precision = value;
  else if (key == "width") width = std::stoi(value);
  else if (key == "encoder_layers") encoder_layers = std::stoi(value);
  else if (key == "decoder_layers") decoder_layers = std::stoi(value);
  else if (key == "heads") heads = std::stoi(value);
  else if (key == "latent_dim") latent_dim = std::stoi(value);
  else if (key == "spatial_factor") spatial_factor = std::stoi(value);
  else if (key == "patch_size") patch_size = std::stoi(value);
  else if (key == "ff_mult") ff_mult = std::stoi(value);
  else if (key == "cnn_c1") cnn_c1 = std::stoi(value);
  else if (key == "cnn_c2") cnn_c2 = std::stoi(value);
  else if (key == "cnn_c3") cnn_c3 = std::stoi(value);
  else if (key == "grad_clip") grad_clip = std::stod(value);
  else if (key == "log_every") log_every = std::stoi(value);
  else if (key == "val_every") val_every = std::stoi(value);
  else throw std::runtime_error("train config: unknown key: " + key);
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "task=" << task << "\n";
  os << "chunk_size=" << chunk_size << "\n";
  os << "frame_count=" << frame_count << "\n";
  os << "prediction_weight=" << fmt(prediction_weight) << "\n";
  os << "attention_mode=" << attention_mode << "\n";
  os << "granularity=" << granularity << "\n";
  os << "tokenizer=" << tokenizer << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "total_steps=" << total_steps << "\n";
  os << "base_lr=" << fmt(base_lr) << "\n";
  os << "warmup_steps=" << warmup_steps << "\n";
  os << "weight_decay=" << fmt(weight_decay) << "\n";
  os << "K=" << diffusion_steps << "\n";
  os << "S_infer=" << infer_steps << "\n";
  os << "shift_max=" << shift_max << "\n";
  os << "seed=" << seed << "\n";
  os << "precision=" << precision << "\n";
  os << "width=" << width << "\n";
  os << "encoder_layers=" << encoder_layers << "\n";
  os << "decoder_layers=" << decoder_layers << "\n";
  os << "heads=" << heads << "\n";
  os << "latent_dim=" << latent_dim << "\n";
  os << "spatial_factor=" << spatial_factor << "\n";
  os << "patch_size=" << patch_size << "\n";
  os << "ff_mult=" << ff_mult << "\n";
  os << "cnn_c1=" << cnn_c1 << "\n";
  os << "cnn_c2=" << cnn_c2 << "\n";
  os << "cnn_c3=" << cnn_c3 << "\n";
  os << "grad_clip=" << fmt(grad_clip) << "\n";
  os << "log_every=" << log_every << "\n";
  os << "val_every=" << val_every << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("train config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("train config: bad line " +
                               std::to_string(lineno) + ": " + line);
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      const auto e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (prediction_weight < 0)
    throw std::runtime_error("train config: prediction_weight must be >= 0");
  if (warmup_steps >= total_steps)
    throw std::runtime_error("train config: warmup_steps must be < total_steps");
  if (batch_size < 1) throw std::runtime_error("train config: batch_size >= 1");
  if (frame_count < 0 || frame_count > chunk_size)
    throw std::runtime_error("train config: need 0 <= frame_count <= chunk_size");
  if (precision != "f32" && precision != "f64")
    throw std::runtime_error("train config: precision must be f32 or f64");
  if (infer_steps < 1 || infer_steps > diffusion_steps)
    throw std::runtime_error("train config: need 1 <= S_infer <= K");
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps)
    return cfg.base_lr * static_cast<double>(step) / cfg.warmup_steps;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          (cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * progress));
}

Image random_shift_augment(const Image& img, int shift_max, Rng& rng) {
  if (shift_max == 0) return img;
  if (shift_max < 0 || shift_max >= std::min(img.h, img.w) / 2)
    throw std::runtime_error("random_shift_augment: shift_max too large");
  const int ox = static_cast<int>(rng.uniform_int(2 * shift_max + 1));
  const int oy = static_cast<int>(rng.uniform_int(2 * shift_max + 1));
  Image out;
  out.h = img.h;
  out.w = img.w;
  out.c = img.c;
  out.px.resize(img.px.size());
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      // Edge-replicated pad by shift_max, cropped at (oy, ox).
      const int sy = std::min(img.h - 1, std::max(0, y + oy - shift_max));
      const int sx = std::min(img.w - 1, std::max(0, x + ox - shift_max));
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = img.at(sy, sx, ch);
    }
  return out;
}

DatasetManifest collect_demos(const std::string& task, int n_episodes,
                              std::uint64_t seed, const std::string& out_dir) {
  if (n_episodes < 0)
    throw std::runtime_error("collect_demos: n_episodes must be >= 0");
  fs::create_directories(out_dir);
  const TaskSpec spec = TaskSpec::make(parse_task(task));

  DatasetManifest manifest;
  manifest.task = task;
  manifest.h = kRenderSize;
  manifest.w = kRenderSize;
  manifest.c = 3;
  manifest.proprio_dim = 6;
  manifest.action_dim = ActionVec::dim;
  manifest.episode_len = spec.episode_len;

  int attempt = 0;
  while (static_cast<int>(manifest.episodes.size()) < n_episodes) {
    if (n_episodes > 0 && attempt >= 5 * n_episodes) {
      throw std::runtime_error(
          "collect_demos: expert succeeded only " +
          std::to_string(manifest.successes) + "/" + std::to_string(attempt) +
          " times; aborting (rate below the 50% floor)");
    }
    const std::uint64_t ep_seed =
        seed + static_cast<std::uint64_t>(attempt);
    WorldState state = reset(spec, ep_seed);
    Episode ep;
    ep.task = task;
    ep.seed = ep_seed;
    ep.h = kRenderSize;
    ep.w = kRenderSize;
    ep.c = 3;
    ep.proprio_dim = 6;
    ep.action_dim = ActionVec::dim;
    for (int t = 0; t < spec.episode_len; ++t) {
      ep.images.push_back(quantize_image(render(state, spec)));
      ep.proprio.push_back(state.proprio());
      const ActionVec a = scripted_expert(state, spec);
      ep.actions.push_back(a.to_vector());
      state = step(state, a, spec);
    }
    const bool success = check_success(state, spec);
    ++attempt;
    manifest.attempts = attempt;
    if (success) {
      ++manifest.successes;
      char name[32];
      std::snprintf(name, sizeof(name), "ep_%05d.bin",
                    static_cast<int>(manifest.episodes.size()));
      write_episode((fs::path(out_dir) / name).string(), ep);
      manifest.episodes.push_back({name, ep_seed, true});
    }
  }
  write_manifest(out_dir, manifest);
  return manifest;
}

template <class S>
Trainer<S>::Trainer(const TrainConfig& cfg, std::string data_dir,
                    std::string out_dir)
    : cfg_(cfg), data_dir_(std::move(data_dir)), out_dir_(std::move(out_dir)) {
  cfg_.validate();
}

template <class S>
void Trainer<S>::prepare() {
  episodes_ = load_dataset(data_dir_);
  if (episodes_.empty()) throw std::runtime_error("trainer: empty dataset");
  const Episode& first = episodes_[0];
  if (first.action_dim != ActionVec::dim)
    throw std::runtime_error("trainer: dataset action dim mismatch");

  // Episode-level split, 9:1.
  std::vector<int> order(episodes_.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);
  Rng split_rng(cfg_.seed, kStreamSplit);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
  const int n_val =
      episodes_.size() >= 2 ? std::max<int>(1, static_cast<int>(episodes_.size()) / 10)
                            : 0;
  val_idx_.assign(order.begin(), order.begin() + n_val);
  train_idx_.assign(order.begin() + n_val, order.end());

  // Tokenizer and latent pipeline.
  const bool with_frames = cfg_.frame_count > 0;
  if (with_frames) {
    plan_ = make_frame_plan(cfg_.chunk_size, cfg_.frame_count);
    const TokenizerVariant variant = parse_tokenizer(cfg_.tokenizer);
    if (variant == TokenizerVariant::linear_autoencoder) {
      std::vector<Image> fit_frames;
      for (int idx : train_idx_) {
        const Episode& ep = episodes_[static_cast<std::size_t>(idx)];
        for (int t = 0; t < ep.length(); ++t)
          fit_frames.push_back(ep.image_at(t));
      }
      tokenizer_ = fit_linear_autoencoder(fit_frames, cfg_.latent_dim,
                                          cfg_.spatial_factor, cfg_.patch_size);
    } else {
      LatentTokenizer tok;
      tok.variant = TokenizerVariant::downsample_patch;
      tok.spatial_factor = cfg_.spatial_factor;
      tok.patch_size = cfg_.patch_size;
      tok.channels = first.c;
      tok.trained = true;
      tokenizer_ = tok;
    }

    // Tokenize every frame once.
    token_cache_.resize(episodes_.size());
    for (std::size_t e = 0; e < episodes_.size(); ++e) {
      const Episode& ep = episodes_[e];
      token_cache_[e].resize(static_cast<std::size_t>(ep.length()));
      for (int t = 0; t < ep.length(); ++t)
        token_cache_[e][static_cast<std::size_t>(t)] =
            tokenize_frames({ep.image_at(t)}, *tokenizer_);
    }

    std::vector<std::vector<double>> train_tokens;
    for (int idx : train_idx_)
      for (const auto& per_step : token_cache_[static_cast<std::size_t>(idx)])
        for (const auto& row : per_step) train_tokens.push_back(row);
    latent_norm_.fit(train_tokens);
  }

  std::vector<std::vector<double>> train_actions;
  for (int idx : train_idx_)
    for (const auto& a : episodes_[static_cast<std::size_t>(idx)].actions)
      train_actions.push_back(a);
  action_norm_.fit(train_actions);

  ModelConfig mc;
  mc.width = cfg_.width;
  mc.encoder_layers = cfg_.encoder_layers;
  mc.decoder_layers = cfg_.decoder_layers;
  mc.heads = cfg_.heads;
  mc.chunk = cfg_.chunk_size;
  mc.action_dim = first.action_dim;
  mc.image_h = first.h;
  mc.image_w = first.w;
  mc.image_c = first.c;
  mc.proprio_dim = first.proprio_dim;
  mc.diffusion_steps = cfg_.diffusion_steps;
  mc.ff_mult = cfg_.ff_mult;
  mc.cnn_c1 = cfg_.cnn_c1;
  mc.cnn_c2 = cfg_.cnn_c2;
  mc.cnn_c3 = cfg_.cnn_c3;
  mc.attention_mode = parse_attention_mode(cfg_.attention_mode);
  mc.granularity = parse_granularity(cfg_.granularity);
  if (with_frames) {
    mc.frame_count = plan_.frame_count;
    mc.tokens_per_frame = tokenizer_->patches_per_frame(first.h, first.w);
    mc.latent_dim = tokenizer_->token_dim();
    mc.frame_timestamps = plan_.timestamps;
  }
  model_.emplace(mc, cfg_.seed);
  sched_ = build_cosine_schedule(cfg_.diffusion_steps);
  opt_.emplace(model_->params().tensors(), cfg_.weight_decay);

  // Fixed validation batches, drawn once.
  if (!val_idx_.empty()) {
    Rng val_rng(cfg_.seed, kStreamVal);
    for (int b = 0; b < 2; ++b) val_batches_.push_back(assemble(val_rng, val_idx_));
  }
  prepared_ = true;
}

template <class S>
Batch<S> Trainer<S>::assemble(Rng& rng, const std::vector<int>& episode_pool) {
  const bool with_frames = cfg_.frame_count > 0;
  const int n = cfg_.chunk_size;
  const int m = model_ ? model_->config().frame_tokens() : 0;
  Batch<S> batch;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    const int idx = episode_pool[rng.uniform_int(episode_pool.size())];
    const Episode& ep = episodes_[static_cast<std::size_t>(idx)];
    const int t = static_cast<int>(rng.uniform_int(ep.length()));

    Image img = random_shift_augment(ep.image_at(t), cfg_.shift_max, rng);
    batch.images.push_back(
        Tensor<double>::from({img.h, img.w, img.c}, img.px).template cast<S>());
    batch.proprio.push_back(
        Tensor<double>::from({ep.proprio_dim},
                             ep.proprio[static_cast<std::size_t>(t)])
            .template cast<S>());

    std::vector<double> act_rows;
    for (int j = 0; j < n; ++j) {
      const int at = std::min(t + j, ep.length() - 1);
      const auto norm =
          action_norm_.normalize(ep.actions[static_cast<std::size_t>(at)]);
      act_rows.insert(act_rows.end(), norm.begin(), norm.end());
    }
    batch.actions.push_back(
        Tensor<double>::from({n, ep.action_dim}, act_rows).template cast<S>());

    if (with_frames) {
      std::vector<double> lat_rows;
      for (int ts : plan_.timestamps) {
        const int at = std::min(t + ts, ep.length() - 1);
        for (const auto& tok :
             token_cache_[static_cast<std::size_t>(idx)][static_cast<std::size_t>(at)]) {
          const auto norm = latent_norm_.normalize(tok);
          lat_rows.insert(lat_rows.end(), norm.begin(), norm.end());
        }
      }
      batch.latents.push_back(
          Tensor<double>::from({m, tokenizer_->token_dim()}, lat_rows)
              .template cast<S>());
    }

    batch.k.push_back(1 + static_cast<int>(
                              rng.uniform_int(cfg_.diffusion_steps)));
    std::vector<S> ea(static_cast<std::size_t>(n) * ep.action_dim);
    for (auto& v : ea) v = static_cast<S>(rng.normal());
    batch.eps_a.push_back(
        Tensor<S>::from({n, ep.action_dim}, std::move(ea)));
    if (with_frames) {
      std::vector<S> ev(static_cast<std::size_t>(m) * tokenizer_->token_dim());
      for (auto& v : ev) v = static_cast<S>(rng.normal());
      batch.eps_v.push_back(
          Tensor<S>::from({m, tokenizer_->token_dim()}, std::move(ev)));
    }
  }
  return batch;
}

template <class S>
Batch<S> Trainer<S>::make_batch(int step) {
  if (!prepared_) throw std::runtime_error("trainer: prepare() not called");
  Rng rng(cfg_.seed ^ mix_bits(static_cast<std::uint64_t>(step)), kStreamBatch);
  return assemble(rng, train_idx_);
}

template <class S>
StepLosses Trainer<S>::train_step(const Batch<S>& batch) {
  const bool with_frames = !batch.latents.empty();
  const double w = cfg_.prediction_weight;
  const auto params = model_->params().tensors();
  std::vector<std::vector<S>> accum;
  accum.reserve(params.size());
  for (const auto& p : params) accum.emplace_back(p.numel(), S(0));

  double sum_a = 0.0, sum_v = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    Tape<S> tape;
    const Tensor<S> a_k = forward_noise(batch.actions[static_cast<std::size_t>(i)],
                                        batch.eps_a[static_cast<std::size_t>(i)],
                                        batch.k[static_cast<std::size_t>(i)], sched_);
    std::optional<Tensor<S>> v_k;
    if (with_frames)
      v_k = forward_noise(batch.latents[static_cast<std::size_t>(i)],
                          batch.eps_v[static_cast<std::size_t>(i)],
                          batch.k[static_cast<std::size_t>(i)], sched_);
    const ObservationEmbedding<S> obs = model_->encode_observation(
        tape, batch.images[static_cast<std::size_t>(i)],
        batch.proprio[static_cast<std::size_t>(i)]);
    const DecoderOutput<S> out = model_->denoise_forward(
        tape, obs, batch.k[static_cast<std::size_t>(i)], a_k, v_k);

    Tensor<S> l_a =
        tape.l1_loss(out.a0_hat, batch.actions[static_cast<std::size_t>(i)]);
    Tensor<S> total = l_a;
    double lv_value = 0.0;
    if (with_frames) {
      Tensor<S> l_v =
          tape.mse_loss(out.v0_hat, batch.latents[static_cast<std::size_t>(i)]);
      lv_value = static_cast<double>(l_v.item());
      total = tape.add(l_a, tape.scale(l_v, static_cast<S>(w)));
    }
    const double la_value = static_cast<double>(l_a.item());
    if (!std::isfinite(la_value))
      throw std::runtime_error("train_step: non-finite action_loss");
    if (!std::isfinite(lv_value))
      throw std::runtime_error("train_step: non-finite video_loss");
    sum_a += la_value;
    sum_v += lv_value;

    GradMap<S> grads = tape.backpropagate(total);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto it = grads.find(params[p].id());
      if (it == grads.end()) continue;
      const S* g = it->second.data();
      std::vector<S>& acc = accum[p];
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
  }

  const S inv_b = S(1) / static_cast<S>(batch.size());
  for (auto& acc : accum)
    for (auto& v : acc) v *= inv_b;

  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& acc : accum)
      for (S v : acc) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) {
      const S scale = static_cast<S>(cfg_.grad_clip / norm);
      for (auto& acc : accum)
        for (auto& v : acc) v *= scale;
    }
  }

  opt_->step(accum, lr_at(step_counter_, cfg_));

  StepLosses losses;
  losses.action = sum_a / batch.size();
  losses.video = sum_v / batch.size();
  losses.total = losses.action + w * losses.video;
  return losses;
}

template <class S>
double Trainer<S>::validation_loss() {
  double total = 0.0;
  int count = 0;
  for (const auto& batch : val_batches_) {
    const bool with_frames = !batch.latents.empty();
    for (int i = 0; i < batch.size(); ++i) {
      Tape<S> tape(/*recording=*/false);
      const Tensor<S> a_k =
          forward_noise(batch.actions[static_cast<std::size_t>(i)],
                        batch.eps_a[static_cast<std::size_t>(i)],
                        batch.k[static_cast<std::size_t>(i)], sched_);
      std::optional<Tensor<S>> v_k;
      if (with_frames)
        v_k = forward_noise(batch.latents[static_cast<std::size_t>(i)],
                            batch.eps_v[static_cast<std::size_t>(i)],
                            batch.k[static_cast<std::size_t>(i)], sched_);
      const ObservationEmbedding<S> obs = model_->encode_observation(
          tape, batch.images[static_cast<std::size_t>(i)],
          batch.proprio[static_cast<std::size_t>(i)]);
      const DecoderOutput<S> out = model_->denoise_forward(
          tape, obs, batch.k[static_cast<std::size_t>(i)], a_k, v_k);
      double v = static_cast<double>(
          tape.l1_loss(out.a0_hat, batch.actions[static_cast<std::size_t>(i)])
              .item());
      if (with_frames)
        v += cfg_.prediction_weight *
             static_cast<double>(
                 tape.mse_loss(out.v0_hat,
                               batch.latents[static_cast<std::size_t>(i)])
                     .item());
      total += v;
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

template <class S>
CheckpointData Trainer<S>::make_checkpoint() const {
  CheckpointData data;
  data.config = model_->config();
  data.action_norm = action_norm_;
  data.latent_norm = latent_norm_;
  data.tokenizer = tokenizer_;
  data.params = to_blobs(model_->params());
  return data;
}

template <class S>
TrainResult Trainer<S>::run() {
  using clock = std::chrono::steady_clock;
  if (!prepared_) prepare();
  fs::create_directories(out_dir_);
  {
    std::ofstream cfg_out(fs::path(out_dir_) / "config.resolved",
                          std::ios::trunc);
    cfg_out << cfg_.serialize();
  }
  std::ofstream losses_csv(fs::path(out_dir_) / "metrics.csv", std::ios::trunc);
  std::ofstream log_csv(fs::path(out_dir_) / "train_log.csv", std::ios::trunc);
  losses_csv << "step,lr,action_loss,video_loss,total_loss\n";
  log_csv << "step,lr,action_loss,video_loss,total_loss,wall_ms\n";

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  double win_a = 0.0, win_v = 0.0;
  int win_n = 0;
  auto win_start = clock::now();

  for (step_counter_ = 1; step_counter_ <= cfg_.total_steps; ++step_counter_) {
    const Batch<S> batch = make_batch(step_counter_);
    const StepLosses losses = train_step(batch);
    win_a += losses.action;
    win_v += losses.video;
    ++win_n;

    if (step_counter_ % cfg_.log_every == 0 ||
        step_counter_ == cfg_.total_steps) {
      const double a = win_a / win_n, v = win_v / win_n;
      const double tot = a + cfg_.prediction_weight * v;
      const double lr = lr_at(step_counter_, cfg_);
      const double wall_ms =
          std::chrono::duration<double, std::milli>(clock::now() - win_start)
              .count() /
          win_n;
      losses_csv << step_counter_ << "," << fmt(lr) << "," << fmt(a) << ","
                 << fmt(v) << "," << fmt(tot) << "\n";
      log_csv << step_counter_ << "," << fmt(lr) << "," << fmt(a) << ","
              << fmt(v) << "," << fmt(tot) << "," << fmt(wall_ms) << "\n";
      if (step_counter_ == cfg_.log_every) result.step100_action_loss = a;
      result.final_action_loss = a;
      win_a = win_v = 0.0;
      win_n = 0;
      win_start = clock::now();
    }

    if (!val_batches_.empty() && (step_counter_ % cfg_.val_every == 0 ||
                                  step_counter_ == cfg_.total_steps)) {
      const double val = validation_loss();
      if (val < result.best_val_loss) {
        result.best_val_loss = val;
        result.best_checkpoint_path =
            (fs::path(out_dir_) / "checkpoint_best.bin").string();
        save_checkpoint(result.best_checkpoint_path, make_checkpoint());
      }
    }
  }

  result.checkpoint_path = (fs::path(out_dir_) / "checkpoint.bin").string();
  save_checkpoint(result.checkpoint_path, make_checkpoint());
  if (result.best_checkpoint_path.empty())
    result.best_checkpoint_path = result.checkpoint_path;
  return result;
}

template class Trainer<float>;
template class Trainer<double>;

TrainResult run_training(const TrainConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir) {
  if (cfg.precision == "f64") {
    Trainer<double> tr(cfg, data_dir, out_dir);
    return tr.run();
  }
  Trainer<float> tr(cfg, data_dir, out_dir);
  return tr.run();
}

}  // namespace bdc
