#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bdc {

// Which future steps of the chunk get a predicted frame. Uniform sampling:
// timestamps[j] = round((j+1) * N / F), duplicates collapsed.
struct FrameSamplePlan {
  int chunk = 0;        // N
  int frame_count = 0;  // F
  std::vector<int> timestamps;  // strictly increasing, in [1, N]
};

FrameSamplePlan make_frame_plan(int chunk, int frame_count);

// Simple planar image: row-major H x W x C doubles in [0, 1].
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> px;

  double at(int y, int x, int ch) const {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  double& at(int y, int x, int ch) {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

enum class TokenizerVariant { downsample_patch, linear_autoencoder };

TokenizerVariant parse_tokenizer(const std::string& s);
std::string to_string(TokenizerVariant v);

// Frame -> latent-token map standing in for a pretrained video tokenizer.
// Both variants average-pool by spatial_factor and split the pooled map into
// non-overlapping patch_size x patch_size patches; downsample_patch emits the
// raw patch vector, linear_autoencoder projects it onto fitted principal
// directions.
struct LatentTokenizer {
  TokenizerVariant variant = TokenizerVariant::downsample_patch;
  int spatial_factor = 4;
  int patch_size = 4;
  int channels = 3;
  int latent_dim = 16;  // used by linear_autoencoder; downsample emits patch_dim
  bool trained = false;

  std::vector<double> mean;     // patch_dim
  std::vector<double> basis;    // patch_dim x latent_dim, column-orthonormal
  double recon_error = 0.0;     // mean squared reconstruction error at fit time

  int patch_dim() const { return patch_size * patch_size * channels; }
  int token_dim() const {
    return variant == TokenizerVariant::linear_autoencoder ? latent_dim
                                                           : patch_dim();
  }
  int patches_per_frame(int h, int w) const {
    const int cell = spatial_factor * patch_size;
    return (h / cell) * (w / cell);
  }
};

// Average-pool by factor, then patchify. Rows ordered by (patch_y, patch_x),
// each row flattened as (y, x, channel).
std::vector<std::vector<double>> frame_patches(const Image& frame,
                                               const LatentTokenizer& tok);

// F frames -> M x D_v tokens, M = F * patches_per_frame.
std::vector<std::vector<double>> tokenize_frames(
    const std::vector<Image>& frames, const LatentTokenizer& tok);

// Inverse of the patch split (exact); pooled pixels are repeated back up to
// full resolution. For linear_autoencoder the patch vector is first
// reconstructed through the basis.
Image detokenize_frame(const std::vector<std::vector<double>>& frame_tokens,
                       int h, int w, const LatentTokenizer& tok);

// PCA fit of the patch distribution: top latent_dim principal directions of
// the centered patch vectors via eigen-decomposition of the covariance.
LatentTokenizer fit_linear_autoencoder(const std::vector<Image>& frames,
                                       int latent_dim, int spatial_factor,
                                       int patch_size);

// Mean squared per-element reconstruction error of the fitted autoencoder
// over the given frames.
double reconstruction_error(const std::vector<Image>& frames,
                            const LatentTokenizer& tok);

// Per-dimension min/max scaling to [-1, 1]. Dimensions with max == min map
// to 0 and invert to the stored constant. fit() must see training data only.
struct Normalizer {
  std::vector<double> lo;
  std::vector<double> hi;
  bool fitted = false;

  void fit(const std::vector<std::vector<double>>& rows);
  int dims() const { return static_cast<int>(lo.size()); }

  std::vector<double> normalize(const std::vector<double>& row) const;
  std::vector<double> denormalize(const std::vector<double>& row) const;
};

// Jacobi eigen-decomposition of a symmetric matrix; eigenvalues descending.
// Exposed for tests.
void symmetric_eigen(const std::vector<double>& a, int n,
                     std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors);

}  // namespace bdc
