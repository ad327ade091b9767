#include "bdc/latents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bdc {

FrameSamplePlan make_frame_plan(int chunk, int frame_count) {
  if (chunk < 1) throw std::runtime_error("frame plan: chunk must be >= 1");
  if (frame_count < 0 || frame_count > chunk)
    throw std::runtime_error("frame plan: need 0 <= F <= N");
  FrameSamplePlan plan;
  plan.chunk = chunk;
  plan.frame_count = frame_count;
  for (int j = 0; j < frame_count; ++j) {
    const int ts = static_cast<int>(std::llround(
        static_cast<double>(j + 1) * chunk / frame_count));
    if (plan.timestamps.empty() || plan.timestamps.back() != ts)
      plan.timestamps.push_back(std::min(std::max(ts, 1), chunk));
  }
  plan.frame_count = static_cast<int>(plan.timestamps.size());
  return plan;
}

TokenizerVariant parse_tokenizer(const std::string& s) {
  if (s == "downsample_patch") return TokenizerVariant::downsample_patch;
  if (s == "linear_autoencoder") return TokenizerVariant::linear_autoencoder;
  throw std::runtime_error("unknown tokenizer variant: " + s);
}

std::string to_string(TokenizerVariant v) {
  return v == TokenizerVariant::downsample_patch ? "downsample_patch"
                                                 : "linear_autoencoder";
}

namespace {

Image avg_pool(const Image& img, int factor) {
  if (img.h % factor != 0 || img.w % factor != 0)
    throw std::runtime_error("tokenize: image size not divisible by spatial factor");
  Image out;
  out.h = img.h / factor;
  out.w = img.w / factor;
  out.c = img.c;
  out.px.assign(static_cast<std::size_t>(out.h) * out.w * out.c, 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < out.c; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.at(y * factor + dy, x * factor + dx, ch);
        out.at(y, x, ch) = acc * inv;
      }
  return out;
}

std::vector<std::vector<double>> patchify(const Image& pooled, int ps) {
  if (pooled.h % ps != 0 || pooled.w % ps != 0)
    throw std::runtime_error("tokenize: pooled size not divisible by patch size");
  const int py = pooled.h / ps, px = pooled.w / ps;
  std::vector<std::vector<double>> patches;
  patches.reserve(static_cast<std::size_t>(py) * px);
  for (int gy = 0; gy < py; ++gy)
    for (int gx = 0; gx < px; ++gx) {
      std::vector<double> patch;
      patch.reserve(static_cast<std::size_t>(ps) * ps * pooled.c);
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int ch = 0; ch < pooled.c; ++ch)
            patch.push_back(pooled.at(gy * ps + y, gx * ps + x, ch));
      patches.push_back(std::move(patch));
    }
  return patches;
}

Image unpatchify(const std::vector<std::vector<double>>& patches, int h, int w,
                 int c, int ps) {
  Image out;
  out.h = h;
  out.w = w;
  out.c = c;
  out.px.assign(static_cast<std::size_t>(h) * w * c, 0.0);
  const int px = w / ps;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const int gy = static_cast<int>(p) / px, gx = static_cast<int>(p) % px;
    std::size_t i = 0;
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x)
        for (int ch = 0; ch < c; ++ch)
          out.at(gy * ps + y, gx * ps + x, ch) = patches[p][i++];
  }
  return out;
}

std::vector<double> encode_patch(const std::vector<double>& patch,
                                 const LatentTokenizer& tok) {
  const int pd = tok.patch_dim();
  std::vector<double> z(static_cast<std::size_t>(tok.latent_dim), 0.0);
  for (int j = 0; j < tok.latent_dim; ++j) {
    double acc = 0.0;
    for (int i = 0; i < pd; ++i)
      acc += (patch[static_cast<std::size_t>(i)] - tok.mean[static_cast<std::size_t>(i)]) *
             tok.basis[static_cast<std::size_t>(i) * tok.latent_dim + j];
    z[static_cast<std::size_t>(j)] = acc;
  }
  return z;
}

std::vector<double> decode_patch(const std::vector<double>& z,
                                 const LatentTokenizer& tok) {
  const int pd = tok.patch_dim();
  std::vector<double> x(tok.mean);
  for (int i = 0; i < pd; ++i)
    for (int j = 0; j < tok.latent_dim; ++j)
      x[static_cast<std::size_t>(i)] +=
          tok.basis[static_cast<std::size_t>(i) * tok.latent_dim + j] *
          z[static_cast<std::size_t>(j)];
  return x;
}

}  // namespace

std::vector<std::vector<double>> frame_patches(const Image& frame,
                                               const LatentTokenizer& tok) {
  return patchify(avg_pool(frame, tok.spatial_factor), tok.patch_size);
}

std::vector<std::vector<double>> tokenize_frames(
    const std::vector<Image>& frames, const LatentTokenizer& tok) {
  std::vector<std::vector<double>> tokens;
  for (const auto& f : frames) {
    auto patches = frame_patches(f, tok);
    for (auto& p : patches) {
      if (tok.variant == TokenizerVariant::linear_autoencoder) {
        if (!tok.trained)
          throw std::runtime_error("tokenize: linear autoencoder not fitted");
        tokens.push_back(encode_patch(p, tok));
      } else {
        tokens.push_back(std::move(p));
      }
    }
  }
  return tokens;
}

Image detokenize_frame(const std::vector<std::vector<double>>& frame_tokens,
                       int h, int w, const LatentTokenizer& tok) {
  const int ph = h / tok.spatial_factor, pw = w / tok.spatial_factor;
  std::vector<std::vector<double>> patches;
  patches.reserve(frame_tokens.size());
  for (const auto& t : frame_tokens) {
    if (tok.variant == TokenizerVariant::linear_autoencoder)
      patches.push_back(decode_patch(t, tok));
    else
      patches.push_back(t);
  }
  Image pooled = unpatchify(patches, ph, pw, tok.channels, tok.patch_size);
  Image out;
  out.h = h;
  out.w = w;
  out.c = tok.channels;
  out.px.assign(static_cast<std::size_t>(h) * w * tok.channels, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < tok.channels; ++ch)
        out.at(y, x, ch) = pooled.at(y / tok.spatial_factor,
                                     x / tok.spatial_factor, ch);
  return out;
}

// Cyclic Jacobi sweeps; plenty for the <= 64x64 covariances used here.
void symmetric_eigen(const std::vector<double>& a_in, int n,
                     std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors) {
  std::vector<double> a(a_in);
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * n + c];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = at(a, i, p), aiq = at(a, i, q);
          at(a, i, p) = c * aip - s * aiq;
          at(a, i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(a, p, i), aqi = at(a, q, i);
          at(a, p, i) = c * api - s * aqi;
          at(a, q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = at(v, i, p), viq = at(v, i, q);
          at(v, i, p) = c * vip - s * viq;
          at(v, i, q) = s * vip + c * viq;
        }
      }
  }
  // Sort descending by eigenvalue.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return a[static_cast<std::size_t>(x) * n + x] >
           a[static_cast<std::size_t>(y) * n + y];
  });
  eigenvalues.assign(static_cast<std::size_t>(n), 0.0);
  eigenvectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    const int src = order[static_cast<std::size_t>(j)];
    eigenvalues[static_cast<std::size_t>(j)] =
        a[static_cast<std::size_t>(src) * n + src];
    for (int i = 0; i < n; ++i)
      eigenvectors[static_cast<std::size_t>(i) * n + j] =
          v[static_cast<std::size_t>(i) * n + src];
  }
}

LatentTokenizer fit_linear_autoencoder(const std::vector<Image>& frames,
                                       int latent_dim, int spatial_factor,
                                       int patch_size) {
  LatentTokenizer tok;
  tok.variant = TokenizerVariant::linear_autoencoder;
  tok.spatial_factor = spatial_factor;
  tok.patch_size = patch_size;
  tok.channels = frames.empty() ? 3 : frames[0].c;
  tok.latent_dim = latent_dim;

  std::vector<std::vector<double>> patches;
  for (const auto& f : frames) {
    tok.channels = f.c;
    auto ps = frame_patches(f, tok);
    for (auto& p : ps) patches.push_back(std::move(p));
  }
  const int pd = tok.patch_dim();
  if (latent_dim < 1 || latent_dim > pd)
    throw std::runtime_error("fit_linear_autoencoder: latent_dim outside [1, patch_dim]");
  if (patches.size() < 100)
    throw std::runtime_error("fit_linear_autoencoder: need at least 100 patches");

  tok.mean.assign(static_cast<std::size_t>(pd), 0.0);
  for (const auto& p : patches)
    for (int i = 0; i < pd; ++i)
      tok.mean[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)];
  for (int i = 0; i < pd; ++i)
    tok.mean[static_cast<std::size_t>(i)] /= static_cast<double>(patches.size());

  std::vector<double> cov(static_cast<std::size_t>(pd) * pd, 0.0);
  for (const auto& p : patches)
    for (int i = 0; i < pd; ++i) {
      const double di = p[static_cast<std::size_t>(i)] - tok.mean[static_cast<std::size_t>(i)];
      for (int j = i; j < pd; ++j)
        cov[static_cast<std::size_t>(i) * pd + j] +=
            di * (p[static_cast<std::size_t>(j)] - tok.mean[static_cast<std::size_t>(j)]);
    }
  for (int i = 0; i < pd; ++i)
    for (int j = i; j < pd; ++j) {
      cov[static_cast<std::size_t>(i) * pd + j] /= static_cast<double>(patches.size());
      cov[static_cast<std::size_t>(j) * pd + i] =
          cov[static_cast<std::size_t>(i) * pd + j];
    }

  std::vector<double> evals, evecs;
  symmetric_eigen(cov, pd, evals, evecs);
  tok.basis.assign(static_cast<std::size_t>(pd) * latent_dim, 0.0);
  for (int i = 0; i < pd; ++i)
    for (int j = 0; j < latent_dim; ++j)
      tok.basis[static_cast<std::size_t>(i) * latent_dim + j] =
          evecs[static_cast<std::size_t>(i) * pd + j];
  tok.trained = true;

  // Mean squared reconstruction error over the fitting patches.
  double err = 0.0;
  std::size_t count = 0;
  for (const auto& p : patches) {
    const auto rec = decode_patch(encode_patch(p, tok), tok);
    for (int i = 0; i < pd; ++i) {
      const double d = rec[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(i)];
      err += d * d;
      ++count;
    }
  }
  tok.recon_error = err / static_cast<double>(count);
  return tok;
}

double reconstruction_error(const std::vector<Image>& frames,
                            const LatentTokenizer& tok) {
  if (!tok.trained)
    throw std::runtime_error("reconstruction_error: tokenizer not fitted");
  double err = 0.0;
  std::size_t count = 0;
  for (const auto& f : frames) {
    for (const auto& p : frame_patches(f, tok)) {
      const auto rec = decode_patch(encode_patch(p, tok), tok);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = rec[i] - p[i];
        err += d * d;
        ++count;
      }
    }
  }
  return err / static_cast<double>(count);
}

void Normalizer::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::runtime_error("normalizer: no data to fit");
  const std::size_t d = rows[0].size();
  lo.assign(d, 0.0);
  hi.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    lo[j] = hi[j] = rows[0][j];
  }
  for (const auto& r : rows) {
    if (r.size() != d) throw std::runtime_error("normalizer: ragged rows");
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], r[j]);
      hi[j] = std::max(hi[j], r[j]);
    }
  }
  fitted = true;
}

std::vector<double> Normalizer::normalize(const std::vector<double>& row) const {
  if (!fitted) throw std::runtime_error("normalizer: not fitted");
  if (row.size() != lo.size())
    throw std::runtime_error("normalizer: dimension mismatch");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (hi[j] == lo[j]) {
      out[j] = 0.0;
      continue;
    }
    const double y = 2.0 * (row[j] - lo[j]) / (hi[j] - lo[j]) - 1.0;
    out[j] = std::min(1.0, std::max(-1.0, y));
  }
  return out;
}

std::vector<double> Normalizer::denormalize(const std::vector<double>& row) const {
  if (!fitted) throw std::runtime_error("normalizer: not fitted");
  if (row.size() != lo.size())
    throw std::runtime_error("normalizer: dimension mismatch");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (hi[j] == lo[j]) {
      out[j] = lo[j];
      continue;
    }
    out[j] = lo[j] + (row[j] + 1.0) * 0.5 * (hi[j] - lo[j]);
  }
  return out;
}

}  // namespace bdc
