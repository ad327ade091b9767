#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <vector>

// Dense kernels behind the tensor engine. Every kernel has a serial
// reference implementation and an OpenMP variant that parallelizes only
// across independent output rows/elements; no reduction is ever split
// between threads, so both variants produce bitwise-identical results.
// The serial versions stay as the reference the tests compare against.

namespace bdc::kernels {

enum class Mode { serial, parallel };

// Thread-local so a worker inside an OpenMP region can force its own
// kernels serial without touching other threads.
Mode mode();
void set_mode(Mode m);

struct ModeGuard {
  explicit ModeGuard(Mode m) : prev_(mode()) { set_mode(m); }
  ~ModeGuard() { set_mode(prev_); }
  Mode prev_;
};

namespace detail {

template <class S>
inline void matmul_row(const S* a_row, const S* b, S* c_row, int k, int n) {
  for (int j = 0; j < n; ++j) c_row[j] = S(0);
  for (int p = 0; p < k; ++p) {
    const S a = a_row[p];
    const S* b_row = b + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
  }
}

// dA[i,:] += dC[i,:] * B^T  (B is k x n; dA row has k entries)
template <class S>
inline void matmul_nt_row(const S* dc_row, const S* b, S* da_row, int k,
                          int n) {
  for (int p = 0; p < k; ++p) {
    const S* b_row = b + static_cast<std::size_t>(p) * n;
    S acc = S(0);
    for (int j = 0; j < n; ++j) acc += dc_row[j] * b_row[j];
    da_row[p] += acc;
  }
}

// dB[p,:] += sum_i A[i,p] * dC[i,:]  (one output row p of dB)
template <class S>
inline void matmul_tn_row(const S* a, const S* dc, S* db_row, int m, int k,
                          int n, int p) {
  for (int i = 0; i < m; ++i) {
    const S w = a[static_cast<std::size_t>(i) * k + p];
    const S* dc_row = dc + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) db_row[j] += w * dc_row[j];
  }
}

}  // namespace detail

// C = A (m x k) * B (k x n)
template <class S>
void matmul_serial(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    detail::matmul_row(a + static_cast<std::size_t>(i) * k, b,
                       c + static_cast<std::size_t>(i) * n, k, n);
}

template <class S>
void matmul_parallel(const S* a, const S* b, S* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    detail::matmul_row(a + static_cast<std::size_t>(i) * k, b,
                       c + static_cast<std::size_t>(i) * n, k, n);
}

template <class S>
void matmul(const S* a, const S* b, S* c, int m, int k, int n) {
  if (mode() == Mode::parallel)
    matmul_parallel(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

// dA += dC * B^T, for C = A*B with A m x k, B k x n.
template <class S>
void matmul_nt_acc_serial(const S* dc, const S* b, S* da, int m, int k,
                          int n) {
  for (int i = 0; i < m; ++i)
    detail::matmul_nt_row(dc + static_cast<std::size_t>(i) * n, b,
                          da + static_cast<std::size_t>(i) * k, k, n);
}

template <class S>
void matmul_nt_acc_parallel(const S* dc, const S* b, S* da, int m, int k,
                            int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    detail::matmul_nt_row(dc + static_cast<std::size_t>(i) * n, b,
                          da + static_cast<std::size_t>(i) * k, k, n);
}

template <class S>
void matmul_nt_acc(const S* dc, const S* b, S* da, int m, int k, int n) {
  if (mode() == Mode::parallel)
    matmul_nt_acc_parallel(dc, b, da, m, k, n);
  else
    matmul_nt_acc_serial(dc, b, da, m, k, n);
}

// dB += A^T * dC, for C = A*B with A m x k, B k x n.
template <class S>
void matmul_tn_acc_serial(const S* a, const S* dc, S* db, int m, int k,
                          int n) {
  for (int p = 0; p < k; ++p)
    detail::matmul_tn_row(a, dc, db + static_cast<std::size_t>(p) * n, m, k, n,
                          p);
}

template <class S>
void matmul_tn_acc_parallel(const S* a, const S* dc, S* db, int m, int k,
                            int n) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < k; ++p)
    detail::matmul_tn_row(a, dc, db + static_cast<std::size_t>(p) * n, m, k, n,
                          p);
}

template <class S>
void matmul_tn_acc(const S* a, const S* dc, S* db, int m, int k, int n) {
  if (mode() == Mode::parallel)
    matmul_tn_acc_parallel(a, dc, db, m, k, n);
  else
    matmul_tn_acc_serial(a, dc, db, m, k, n);
}

// Masked softmax over rows. Masked-out keys are excluded from the reduction
// entirely (max, exp, sum), not pushed to -inf, so they contribute no
// floating-point terms at all. Rows iterate visible keys left to right.
template <class S>
inline void masked_softmax_row(const S* x, const std::uint8_t* mask, S* y,
                               int n) {
  bool any = false;
  S mx = S(0);
  for (int j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    if (!any || x[j] > mx) mx = x[j];
    any = true;
  }
  if (!any) throw std::runtime_error("masked_softmax: query with no visible keys");
  S sum = S(0);
  for (int j = 0; j < n; ++j) {
    if (mask[j]) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    } else {
      y[j] = S(0);
    }
  }
  for (int j = 0; j < n; ++j)
    if (mask[j]) y[j] /= sum;
}

template <class S>
void masked_softmax_serial(const S* x, const std::uint8_t* mask, S* y, int rows,
                           int n) {
  for (int i = 0; i < rows; ++i)
    masked_softmax_row(x + static_cast<std::size_t>(i) * n,
                       mask + static_cast<std::size_t>(i) * n,
                       y + static_cast<std::size_t>(i) * n, n);
}

template <class S>
void masked_softmax_parallel(const S* x, const std::uint8_t* mask, S* y,
                             int rows, int n) {
  // Validate up front; throwing from inside the parallel region would abort.
  for (int i = 0; i < rows; ++i) {
    bool any = false;
    for (int j = 0; j < n; ++j)
      any = any || mask[static_cast<std::size_t>(i) * n + j];
    if (!any)
      throw std::runtime_error("masked_softmax: query with no visible keys");
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    masked_softmax_row(x + static_cast<std::size_t>(i) * n,
                       mask + static_cast<std::size_t>(i) * n,
                       y + static_cast<std::size_t>(i) * n, n);
}

template <class S>
void masked_softmax(const S* x, const std::uint8_t* mask, S* y, int rows,
                    int n) {
  if (mode() == Mode::parallel)
    masked_softmax_parallel(x, mask, y, rows, n);
  else
    masked_softmax_serial(x, mask, y, rows, n);
}

// y_i = softmax_i * (g_i - sum_j softmax_j * g_j) over visible keys only.
template <class S>
inline void masked_softmax_backward_row(const S* y, const std::uint8_t* mask,
                                        const S* g, S* dx, int n) {
  S dot = S(0);
  for (int j = 0; j < n; ++j)
    if (mask[j]) dot += y[j] * g[j];
  for (int j = 0; j < n; ++j) dx[j] += mask[j] ? y[j] * (g[j] - dot) : S(0);
}

// Layer norm along the last axis (rows). eps inside the sqrt.
template <class S>
inline void layernorm_row(const S* x, S* y, S* mean_out, S* rstd_out, int n,
                          S eps) {
  S mean = S(0);
  for (int j = 0; j < n; ++j) mean += x[j];
  mean /= S(n);
  S var = S(0);
  for (int j = 0; j < n; ++j) {
    const S d = x[j] - mean;
    var += d * d;
  }
  var /= S(n);
  const S rstd = S(1) / std::sqrt(var + eps);
  for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * rstd;
  *mean_out = mean;
  *rstd_out = rstd;
}

template <class S>
void layernorm_serial(const S* x, S* y, S* mean, S* rstd, int rows, int n,
                      S eps) {
  for (int i = 0; i < rows; ++i)
    layernorm_row(x + static_cast<std::size_t>(i) * n,
                  y + static_cast<std::size_t>(i) * n, mean + i, rstd + i, n,
                  eps);
}

template <class S>
void layernorm_parallel(const S* x, S* y, S* mean, S* rstd, int rows, int n,
                        S eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    layernorm_row(x + static_cast<std::size_t>(i) * n,
                  y + static_cast<std::size_t>(i) * n, mean + i, rstd + i, n,
                  eps);
}

template <class S>
void layernorm(const S* x, S* y, S* mean, S* rstd, int rows, int n, S eps) {
  if (mode() == Mode::parallel)
    layernorm_parallel(x, y, mean, rstd, rows, n, eps);
  else
    layernorm_serial(x, y, mean, rstd, rows, n, eps);
}

// GELU, exact erf form.
template <class S>
inline S gelu_value(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475244)));
}

template <class S>
inline S gelu_grad(S x) {
  const S phi = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475244)));
  const S pdf =
      std::exp(S(-0.5) * x * x) * S(0.3989422804014326779);  // 1/sqrt(2*pi)
  return phi + x * pdf;
}

template <class S, class F>
void map_serial(const S* x, S* y, std::size_t n, F f) {
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class S, class F>
void map_parallel(const S* x, S* y, std::size_t n, F f) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    y[i] = f(x[i]);
}

template <class S, class F>
void map(const S* x, S* y, std::size_t n, F f) {
  if (mode() == Mode::parallel)
    map_parallel(x, y, n, f);
  else
    map_serial(x, y, n, f);
}

// im2col for NHWC input and kh x kw window, zero padding. Each output row
// holds one (oy, ox) patch flattened as (ky, kx, c).
template <class S>
void im2col_serial(const S* x, S* cols, int h, int w, int c, int kh, int kw,
                   int stride, int pad, int oh, int ow) {
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* row =
          cols + (static_cast<std::size_t>(oy) * ow + ox) * (kh * kw * c);
      int idx = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int y = oy * stride - pad + ky;
        for (int kx = 0; kx < kw; ++kx) {
          const int xx = ox * stride - pad + kx;
          const bool in = y >= 0 && y < h && xx >= 0 && xx < w;
          const S* px =
              in ? x + (static_cast<std::size_t>(y) * w + xx) * c : nullptr;
          for (int ch = 0; ch < c; ++ch) row[idx++] = in ? px[ch] : S(0);
        }
      }
    }
  }
}

template <class S>
void im2col_parallel(const S* x, S* cols, int h, int w, int c, int kh, int kw,
                     int stride, int pad, int oh, int ow) {
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* row =
          cols + (static_cast<std::size_t>(oy) * ow + ox) * (kh * kw * c);
      int idx = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int y = oy * stride - pad + ky;
        for (int kx = 0; kx < kw; ++kx) {
          const int xx = ox * stride - pad + kx;
          const bool in = y >= 0 && y < h && xx >= 0 && xx < w;
          const S* px =
              in ? x + (static_cast<std::size_t>(y) * w + xx) * c : nullptr;
          for (int ch = 0; ch < c; ++ch) row[idx++] = in ? px[ch] : S(0);
        }
      }
    }
  }
}

template <class S>
void im2col(const S* x, S* cols, int h, int w, int c, int kh, int kw,
            int stride, int pad, int oh, int ow) {
  if (mode() == Mode::parallel)
    im2col_parallel(x, cols, h, w, c, kh, kw, stride, pad, oh, ow);
  else
    im2col_serial(x, cols, h, w, c, kh, kw, stride, pad, oh, ow);
}

// Adjoint of im2col in gather form: each input element collects every column
// slot that read it. Deterministic regardless of threading because each
// (y, x, c) target is owned by exactly one iteration.
template <class S>
inline void col2im_acc_element(const S* dcols, S* dx, int w, int c, int kh,
                               int kw, int stride, int pad, int oh, int ow,
                               int y, int xx, int ch) {
  S acc = S(0);
  for (int ky = 0; ky < kh; ++ky) {
    const int oy_num = y + pad - ky;
    if (oy_num < 0 || oy_num % stride != 0) continue;
    const int oy = oy_num / stride;
    if (oy >= oh) continue;
    for (int kx = 0; kx < kw; ++kx) {
      const int ox_num = xx + pad - kx;
      if (ox_num < 0 || ox_num % stride != 0) continue;
      const int ox = ox_num / stride;
      if (ox >= ow) continue;
      const std::size_t row = static_cast<std::size_t>(oy) * ow + ox;
      const std::size_t col = (static_cast<std::size_t>(ky) * kw + kx) * c + ch;
      acc += dcols[row * (kh * kw * c) + col];
    }
  }
  dx[(static_cast<std::size_t>(y) * w + xx) * c + ch] += acc;
}

template <class S>
void col2im_acc_serial(const S* dcols, S* dx, int h, int w, int c, int kh,
                       int kw, int stride, int pad, int oh, int ow) {
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch)
        col2im_acc_element(dcols, dx, w, c, kh, kw, stride, pad, oh, ow, y, xx,
                           ch);
}

template <class S>
void col2im_acc_parallel(const S* dcols, S* dx, int h, int w, int c, int kh,
                         int kw, int stride, int pad, int oh, int ow) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch)
        col2im_acc_element(dcols, dx, w, c, kh, kw, stride, pad, oh, ow, y, xx,
                           ch);
}

template <class S>
void col2im_acc(const S* dcols, S* dx, int h, int w, int c, int kh, int kw,
                int stride, int pad, int oh, int ow) {
  if (mode() == Mode::parallel)
    col2im_acc_parallel(dcols, dx, h, w, c, kh, kw, stride, pad, oh, ow);
  else
    col2im_acc_serial(dcols, dx, h, w, c, kh, kw, stride, pad, oh, ow);
}

// Fixed left-to-right sum; the reduction the engine's mean/sum ops rely on.
template <class S>
S sum_serial(const S* x, std::size_t n) {
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

}  // namespace bdc::kernels
