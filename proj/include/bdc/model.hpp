#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bdc/attention_mask.hpp"
#include "bdc/tensor.hpp"

namespace bdc {

struct ModelConfig {
  int width = 64;  // d, divisible by heads
  int encoder_layers = 2;
  int decoder_layers = 3;
  int heads = 4;
  int chunk = 20;      // N
  int action_dim = 6;  // A
  int frame_count = 0;
  int tokens_per_frame = 0;
  int latent_dim = 0;  // D_v
  std::vector<int> frame_timestamps;
  AttentionMode attention_mode = AttentionMode::unidirectional;
  MaskGranularity granularity = MaskGranularity::per_frame;
  int image_h = 32, image_w = 32, image_c = 3;
  int proprio_dim = 6;
  int diffusion_steps = 100;  // K, for the step encoding
  int ff_mult = 4;
  int cnn_c1 = 16, cnn_c2 = 24, cnn_c3 = 32;

  int frame_tokens() const { return frame_count * tokens_per_frame; }  // M
  int spatial_tokens() const { return (image_h / 8) * (image_w / 8); }
  int obs_tokens() const { return spatial_tokens() + 1; }

  void validate() const;
  std::string serialize() const;  // key=value lines
  static ModelConfig deserialize(const std::string& text);
};

template <class S>
struct ObservationEmbedding {
  Tensor<S> tokens;  // (spatial + 1) x d
};

template <class S>
struct DecoderOutput {
  Tensor<S> a0_hat;  // N x A
  Tensor<S> v0_hat;  // M x D_v; undefined when latents were not processed
};

// Named parameter registry; insertion order fixes the checkpoint layout and
// the optimizer state alignment.
template <class S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    if (index_.count(name))
      throw std::runtime_error("param store: duplicate name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }
  const std::vector<std::pair<std::string, Tensor<S>>>& items() const {
    return items_;
  }
  Tensor<S> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::runtime_error("param store: unknown name " + name);
    return items_[it->second].second;
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t total_coords() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }
  std::vector<Tensor<S>> tensors() const {
    std::vector<Tensor<S>> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace pe {

// Interleaved sin/cos encoding; position 0 gives the alternating 0/1
// pattern.
template <class S>
std::vector<S> sinusoid(double pos, int d) {
  std::vector<S> v(static_cast<std::size_t>(d));
  for (int j = 0; j < d / 2; ++j) {
    const double freq = std::pow(10000.0, -2.0 * j / d);
    v[static_cast<std::size_t>(2 * j)] = static_cast<S>(std::sin(pos * freq));
    v[static_cast<std::size_t>(2 * j + 1)] =
        static_cast<S>(std::cos(pos * freq));
  }
  return v;
}

// 2-D grid encoding: first half of the channels encode the row, second half
// the column.
template <class S>
Tensor<S> grid_2d(int gh, int gw, int d) {
  Tensor<S> out = Tensor<S>::zeros({gh * gw, d});
  S* o = out.mutable_data();
  const int half = d / 2;
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      const auto ey = sinusoid<S>(y, half);
      const auto ex = sinusoid<S>(x, d - half);
      S* row = o + (static_cast<std::size_t>(y) * gw + x) * d;
      for (int j = 0; j < half; ++j) row[j] = ey[static_cast<std::size_t>(j)];
      for (int j = 0; j < d - half; ++j)
        row[half + j] = ex[static_cast<std::size_t>(j)];
    }
  return out;
}

}  // namespace pe

template <class S>
struct LayerNormP {
  Tensor<S> g, b;
};

template <class S>
struct AttnParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class S>
struct FeedForwardP {
  Tensor<S> w1, b1, w2, b2;
};

template <class S>
struct EncoderLayerP {
  LayerNormP<S> ln1;
  AttnParams<S> attn;
  LayerNormP<S> ln2;
  FeedForwardP<S> ff;
};

template <class S>
struct DecoderLayerP {
  LayerNormP<S> ln_sa;
  AttnParams<S> sa;
  LayerNormP<S> ln_ca;
  AttnParams<S> ca;
  LayerNormP<S> ln_ff;
  FeedForwardP<S> ff;
};

// The full policy network: strided-CNN + transformer observation encoder,
// diffusion-step encoding, and the joint denoising decoder with configurable
// self-attention masks and the two prediction heads.
template <class S>
class PolicyModel {
 public:
  PolicyModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed, /*stream=*/7);
    build_params(rng);
    finalize();
  }

  // Same weights under a different attention mode (masks rebuilt). The
  // parameter tensors are shared, not copied.
  PolicyModel with_mode(AttentionMode mode) const {
    PolicyModel m(*this);
    m.cfg_.attention_mode = mode;
    m.finalize();
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  int decoder_token_count(bool with_latents) const {
    return (with_latents ? cfg_.frame_tokens() : 0) + cfg_.chunk;
  }
  const MaskMatrix& decoder_mask(bool with_latents) const {
    return with_latents ? mask_with_latents_ : mask_actions_only_;
  }

  // CNN + projections only: the (spatial + 1) x d token matrix before the
  // transformer encoder. Rows 0..S-1 come from the image alone, the last
  // row from the proprioceptive state alone.
  Tensor<S> tokenize_observation(Tape<S>& t, const Tensor<S>& image,
                                 const Tensor<S>& proprio) const {
    if (image.numel() != static_cast<std::size_t>(cfg_.image_h) *
                             cfg_.image_w * cfg_.image_c)
      throw std::runtime_error("encode_observation: image size mismatch");
    if (proprio.numel() != static_cast<std::size_t>(cfg_.proprio_dim))
      throw std::runtime_error("encode_observation: proprio size mismatch");
    if (!image.all_finite() || !proprio.all_finite())
      throw std::runtime_error("encode_observation: non-finite input");

    // Three stride-2 conv blocks, GELU between.
    Tensor<S> x = image;
    int h = cfg_.image_h, w = cfg_.image_w, c = cfg_.image_c;
    const Tensor<S>* ws[3] = {&conv_w_[0], &conv_w_[1], &conv_w_[2]};
    const Tensor<S>* bs[3] = {&conv_b_[0], &conv_b_[1], &conv_b_[2]};
    for (int i = 0; i < 3; ++i) {
      Tensor<S> cols = t.im2col(x, h, w, c, 3, 3, 2, 1);
      x = t.gelu(t.add_bias(t.matmul(cols, *ws[i]), *bs[i]));
      h /= 2;
      w /= 2;
      c = ws[i]->dim(1);
    }
    // x is now (h*w) x c3; project to d and add the 2-D encoding.
    Tensor<S> spatial =
        t.add(t.add_bias(t.matmul(x, proj_w_), proj_b_), pos2d_);
    Tensor<S> prop = t.add_bias(
        t.matmul(t.reshape(proprio, {1, cfg_.proprio_dim}), proprio_w_),
        proprio_b_);
    return t.concat_rows({spatial, prop});
  }

  ObservationEmbedding<S> encode_observation(Tape<S>& t,
                                             const Tensor<S>& image,
                                             const Tensor<S>& proprio) const {
    Tensor<S> tokens = tokenize_observation(t, image, proprio);
    const MaskMatrix enc_mask =
        MaskMatrix::all_true(cfg_.obs_tokens(), cfg_.obs_tokens());
    for (const auto& layer : enc_) {
      tokens = t.add(tokens, attention(t, ln(t, tokens, layer.ln1),
                                       ln(t, tokens, layer.ln1), enc_mask,
                                       layer.attn));
      tokens = t.add(tokens, feed_forward(t, ln(t, tokens, layer.ln2),
                                          layer.ff));
    }
    tokens = ln(t, tokens, enc_ln_f_);
    return {tokens};
  }

  // Sinusoidal encoding of k through a 2-layer perceptron; used as an extra
  // cross-attention key/value token.
  Tensor<S> embed_diffusion_step(Tape<S>& t, int k) const {
    if (k < 0 || k > cfg_.diffusion_steps)
      throw std::runtime_error("embed_diffusion_step: step out of range");
    Tensor<S> enc = Tensor<S>::from(
        {1, cfg_.width}, pe::sinusoid<S>(static_cast<double>(k), cfg_.width));
    Tensor<S> hidden = t.gelu(t.add_bias(t.matmul(enc, step_w1_), step_b1_));
    return t.add_bias(t.matmul(hidden, step_w2_), step_b2_);
  }

  DecoderOutput<S> denoise_forward(Tape<S>& t,
                                   const ObservationEmbedding<S>& obs, int k,
                                   const Tensor<S>& noisy_actions,
                                   const std::optional<Tensor<S>>& noisy_latents)
      const {
    const int n = cfg_.chunk, m = cfg_.frame_tokens();
    if (noisy_actions.rank() != 2 || noisy_actions.dim(0) != n ||
        noisy_actions.dim(1) != cfg_.action_dim)
      throw std::runtime_error("denoise_forward: action shape mismatch");
    const bool with_latents = noisy_latents.has_value();
    if (cfg_.attention_mode == AttentionMode::full && !with_latents && m > 0)
      throw std::runtime_error("full attention requires latent tokens");
    if (with_latents) {
      if (m == 0)
        throw std::runtime_error(
            "denoise_forward: model configured without frame tokens");
      if (noisy_latents->rank() != 2 || noisy_latents->dim(0) != m ||
          noisy_latents->dim(1) != cfg_.latent_dim)
        throw std::runtime_error("denoise_forward: latent shape mismatch");
    }

    Tensor<S> act_tok = t.add(
        t.add_bias(t.matmul(noisy_actions, act_in_w_), act_in_b_), act_pe_);
    Tensor<S> seq;
    if (with_latents) {
      Tensor<S> lat_tok = t.add(
          t.add_bias(t.matmul(*noisy_latents, lat_in_w_), lat_in_b_), lat_pe_);
      seq = t.concat_rows({lat_tok, act_tok});
    } else {
      seq = act_tok;
    }

    const MaskMatrix& mask = decoder_mask(with_latents);
    Tensor<S> step_tok = embed_diffusion_step(t, k);
    Tensor<S> kv = t.concat_rows({obs.tokens, step_tok});
    const MaskMatrix cross_mask =
        MaskMatrix::all_true(seq.rows_2d(), kv.rows_2d());

    for (const auto& layer : dec_) {
      seq = t.add(seq, attention(t, ln(t, seq, layer.ln_sa),
                                 ln(t, seq, layer.ln_sa), mask, layer.sa));
      seq = t.add(seq,
                  attention(t, ln(t, seq, layer.ln_ca), kv, cross_mask,
                            layer.ca));
      seq = t.add(seq, feed_forward(t, ln(t, seq, layer.ln_ff), layer.ff));
    }
    seq = ln(t, seq, dec_ln_f_);

    const int off = with_latents ? m : 0;
    Tensor<S> act_rows = t.slice_rows(seq, off, off + n);
    DecoderOutput<S> out;
    out.a0_hat = t.add_bias(t.matmul(act_rows, head_a_w_), head_a_b_);
    if (with_latents) {
      Tensor<S> frame_rows = t.slice_rows(seq, 0, m);
      Tensor<S> hidden =
          t.gelu(t.add_bias(t.matmul(frame_rows, head_v_w1_), head_v_b1_));
      out.v0_hat = t.add_bias(t.matmul(hidden, head_v_w2_), head_v_b2_);
    }
    return out;
  }

 private:
  Tensor<S> ln(Tape<S>& t, const Tensor<S>& x, const LayerNormP<S>& p) const {
    return t.layer_norm(x, p.g, p.b);
  }

  Tensor<S> attention(Tape<S>& t, const Tensor<S>& q_in,
                      const Tensor<S>& kv_in, const MaskMatrix& mask,
                      const AttnParams<S>& p) const {
    Tensor<S> q = t.add_bias(t.matmul(q_in, p.wq), p.bq);
    Tensor<S> k = t.add_bias(t.matmul(kv_in, p.wk), p.bk);
    Tensor<S> v = t.add_bias(t.matmul(kv_in, p.wv), p.bv);
    const int dh = cfg_.width / cfg_.heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.heads));
    for (int hh = 0; hh < cfg_.heads; ++hh) {
      Tensor<S> qh = t.slice_cols(q, hh * dh, (hh + 1) * dh);
      Tensor<S> kh = t.slice_cols(k, hh * dh, (hh + 1) * dh);
      Tensor<S> vh = t.slice_cols(v, hh * dh, (hh + 1) * dh);
      Tensor<S> scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt);
      Tensor<S> attnw = t.masked_softmax(scores, mask);
      heads.push_back(t.matmul(attnw, vh));
    }
    Tensor<S> cat = cfg_.heads == 1 ? heads[0] : t.concat_cols(heads);
    return t.add_bias(t.matmul(cat, p.wo), p.bo);
  }

  Tensor<S> feed_forward(Tape<S>& t, const Tensor<S>& x,
                         const FeedForwardP<S>& p) const {
    return t.add_bias(
        t.matmul(t.gelu(t.add_bias(t.matmul(x, p.w1), p.b1)), p.w2), p.b2);
  }

  Tensor<S> weight(Rng& rng, const std::string& name, int fan_in, int cols) {
    return params_.add(name,
                       Tensor<S>::randn({fan_in, cols}, rng,
                                        1.0 / std::sqrt(static_cast<double>(fan_in)),
                                        /*requires_grad=*/true));
  }
  Tensor<S> bias(const std::string& name, int n) {
    return params_.add(name, Tensor<S>::zeros({n}, /*requires_grad=*/true));
  }
  LayerNormP<S> lnp(const std::string& prefix) {
    LayerNormP<S> p;
    p.g = params_.add(prefix + ".g",
                      Tensor<S>::full({cfg_.width}, S(1), true));
    p.b = params_.add(prefix + ".b", Tensor<S>::zeros({cfg_.width}, true));
    return p;
  }
  AttnParams<S> attnp(Rng& rng, const std::string& prefix) {
    AttnParams<S> p;
    const int d = cfg_.width;
    p.wq = weight(rng, prefix + ".wq", d, d);
    p.bq = bias(prefix + ".bq", d);
    p.wk = weight(rng, prefix + ".wk", d, d);
    p.bk = bias(prefix + ".bk", d);
    p.wv = weight(rng, prefix + ".wv", d, d);
    p.bv = bias(prefix + ".bv", d);
    p.wo = weight(rng, prefix + ".wo", d, d);
    p.bo = bias(prefix + ".bo", d);
    return p;
  }
  FeedForwardP<S> ffp(Rng& rng, const std::string& prefix) {
    FeedForwardP<S> p;
    const int d = cfg_.width, f = cfg_.width * cfg_.ff_mult;
    p.w1 = weight(rng, prefix + ".w1", d, f);
    p.b1 = bias(prefix + ".b1", f);
    p.w2 = weight(rng, prefix + ".w2", f, d);
    p.b2 = bias(prefix + ".b2", d);
    return p;
  }

  void build_params(Rng& rng) {
    const int d = cfg_.width;
    conv_w_[0] = weight(rng, "cnn.0.w", 3 * 3 * cfg_.image_c, cfg_.cnn_c1);
    conv_b_[0] = bias("cnn.0.b", cfg_.cnn_c1);
    conv_w_[1] = weight(rng, "cnn.1.w", 3 * 3 * cfg_.cnn_c1, cfg_.cnn_c2);
    conv_b_[1] = bias("cnn.1.b", cfg_.cnn_c2);
    conv_w_[2] = weight(rng, "cnn.2.w", 3 * 3 * cfg_.cnn_c2, cfg_.cnn_c3);
    conv_b_[2] = bias("cnn.2.b", cfg_.cnn_c3);
    proj_w_ = weight(rng, "cnn.proj.w", cfg_.cnn_c3, d);
    proj_b_ = bias("cnn.proj.b", d);
    proprio_w_ = weight(rng, "proprio.w", cfg_.proprio_dim, d);
    proprio_b_ = bias("proprio.b", d);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
      const std::string p = "enc." + std::to_string(i);
      EncoderLayerP<S> layer;
      layer.ln1 = lnp(p + ".ln1");
      layer.attn = attnp(rng, p + ".attn");
      layer.ln2 = lnp(p + ".ln2");
      layer.ff = ffp(rng, p + ".ff");
      enc_.push_back(layer);
    }
    enc_ln_f_ = lnp("enc.ln_f");
    step_w1_ = weight(rng, "step.w1", d, d);
    step_b1_ = bias("step.b1", d);
    step_w2_ = weight(rng, "step.w2", d, d);
    step_b2_ = bias("step.b2", d);
    act_in_w_ = weight(rng, "dec.act_in.w", cfg_.action_dim, d);
    act_in_b_ = bias("dec.act_in.b", d);
    if (cfg_.frame_tokens() > 0) {
      lat_in_w_ = weight(rng, "dec.lat_in.w", cfg_.latent_dim, d);
      lat_in_b_ = bias("dec.lat_in.b", d);
    }
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const std::string p = "dec." + std::to_string(i);
      DecoderLayerP<S> layer;
      layer.ln_sa = lnp(p + ".ln_sa");
      layer.sa = attnp(rng, p + ".sa");
      layer.ln_ca = lnp(p + ".ln_ca");
      layer.ca = attnp(rng, p + ".ca");
      layer.ln_ff = lnp(p + ".ln_ff");
      layer.ff = ffp(rng, p + ".ff");
      dec_.push_back(layer);
    }
    dec_ln_f_ = lnp("dec.ln_f");
    head_a_w_ = weight(rng, "head.action.w", d, cfg_.action_dim);
    head_a_b_ = bias("head.action.b", cfg_.action_dim);
    if (cfg_.frame_tokens() > 0) {
      head_v_w1_ = weight(rng, "head.video.w1", d, d);
      head_v_b1_ = bias("head.video.b1", d);
      head_v_w2_ = weight(rng, "head.video.w2", d, cfg_.latent_dim);
      head_v_b2_ = bias("head.video.b2", cfg_.latent_dim);
    }
  }

  // Everything derived from the config but not learned: positional
  // encodings and the cached masks.
  void finalize() {
    const int d = cfg_.width;
    pos2d_ = pe::grid_2d<S>(cfg_.image_h / 8, cfg_.image_w / 8, d);

    act_pe_ = Tensor<S>::zeros({cfg_.chunk, d});
    for (int i = 0; i < cfg_.chunk; ++i) {
      const auto v = pe::sinusoid<S>(i, d);
      for (int j = 0; j < d; ++j)
        act_pe_.mutable_data()[static_cast<std::size_t>(i) * d + j] =
            v[static_cast<std::size_t>(j)];
    }

    const int m = cfg_.frame_tokens();
    if (m > 0) {
      lat_pe_ = Tensor<S>::zeros({m, d});
      int row = 0;
      for (int f = 0; f < cfg_.frame_count; ++f) {
        const auto tv =
            pe::sinusoid<S>(cfg_.frame_timestamps[static_cast<std::size_t>(f)], d);
        for (int p = 0; p < cfg_.tokens_per_frame; ++p, ++row) {
          const auto sv = pe::sinusoid<S>(1000 + p, d);
          for (int j = 0; j < d; ++j)
            lat_pe_.mutable_data()[static_cast<std::size_t>(row) * d + j] =
                tv[static_cast<std::size_t>(j)] + sv[static_cast<std::size_t>(j)];
        }
      }
    }

    AttentionMaskSpec spec;
    spec.mode = cfg_.attention_mode;
    spec.n_actions = cfg_.chunk;
    spec.granularity = cfg_.granularity;
    for (int f = 0; f < cfg_.frame_count; ++f)
      spec.frame_groups.push_back(
          {cfg_.frame_timestamps[static_cast<std::size_t>(f)],
           cfg_.tokens_per_frame});
    if (m > 0) {
      mask_with_latents_ = build_attention_mask(spec);
      // The action-only mask is the action block of the full mask so that
      // dropping the latent tokens is exactly a row/column deletion.
      mask_actions_only_ = MaskMatrix::all_true(cfg_.chunk, cfg_.chunk);
      for (int q = 0; q < cfg_.chunk; ++q)
        for (int c = 0; c < cfg_.chunk; ++c)
          mask_actions_only_.set(q, c, mask_with_latents_.at(m + q, m + c));
    } else {
      spec.frame_groups.clear();
      mask_actions_only_ = build_attention_mask(spec);
      mask_with_latents_ = mask_actions_only_;
    }
  }

  ModelConfig cfg_;
  ParamStore<S> params_;
  Tensor<S> conv_w_[3], conv_b_[3];
  Tensor<S> proj_w_, proj_b_, proprio_w_, proprio_b_;
  std::vector<EncoderLayerP<S>> enc_;
  LayerNormP<S> enc_ln_f_;
  Tensor<S> step_w1_, step_b1_, step_w2_, step_b2_;
  Tensor<S> act_in_w_, act_in_b_, lat_in_w_, lat_in_b_;
  std::vector<DecoderLayerP<S>> dec_;
  LayerNormP<S> dec_ln_f_;
  Tensor<S> head_a_w_, head_a_b_, head_v_w1_, head_v_b1_, head_v_w2_,
      head_v_b2_;
  Tensor<S> pos2d_, act_pe_, lat_pe_;
  MaskMatrix mask_with_latents_, mask_actions_only_;
};

}  // namespace bdc
