#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bdc/kernels.hpp"
#include "bdc/rng.hpp"

namespace bdc {

// Boolean query x key matrix consumed by masked softmax. Row-major, one
// byte per cell.
struct MaskMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> cells;

  static MaskMatrix all_true(int r, int c) {
    MaskMatrix m;
    m.rows = r;
    m.cols = c;
    m.cells.assign(static_cast<std::size_t>(r) * c, 1);
    return m;
  }
  bool at(int r, int c) const {
    return cells[static_cast<std::size_t>(r) * cols + c] != 0;
  }
  void set(int r, int c, bool v) {
    cells[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0;
  }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("tensor: non-positive shape extent");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Immutable-shape dense tensor handle. Data is shared between views
// (reshape); values are mutated only through mutable_data(), which the
// optimizer and the finite-difference checker use.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0, requires_grad);
  }

  static Tensor full(std::vector<int> shape, S value,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), value, requires_grad);
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from(std::vector<int> shape, std::vector<S> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::runtime_error("tensor: shape does not match data length");
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = std::make_shared<std::vector<S>>(std::move(data));
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    std::vector<S> d(n);
    for (std::size_t i = 0; i < n; ++i)
      d[i] = static_cast<S>(stddev * rng.normal());
    return from(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return s_->data->size(); }
  bool requires_grad() const { return s_ && s_->requires_grad; }
  std::uint64_t id() const { return s_->id; }

  const S* data() const { return s_->data->data(); }
  S* mutable_data() { return s_->data->data(); }
  const std::vector<S>& values() const { return *s_->data; }

  // Matrix view helpers; rank-1 tensors count as a single row.
  int rows_2d() const { return rank() == 1 ? 1 : dim(0); }
  int cols_2d() const { return rank() == 1 ? dim(0) : dim(1); }

  S item() const {
    if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar");
    return (*s_->data)[0];
  }

  // New view over the same data with a different shape.
  Tensor reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel())
      throw std::runtime_error("tensor: reshape changes element count");
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = s_->data;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  Tensor deep_copy() const {
    Tensor t = from(s_->shape, *s_->data, s_->requires_grad);
    return t;
  }

  template <class T>
  Tensor<T> cast() const {
    std::vector<T> d(numel());
    for (std::size_t i = 0; i < numel(); ++i)
      d[i] = static_cast<T>((*s_->data)[i]);
    return Tensor<T>::from(s_->shape, std::move(d), s_->requires_grad);
  }

  bool all_finite() const {
    for (S v : *s_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Tensor(std::vector<int> shape, S fill, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    s_ = std::make_shared<Storage>();
    s_->shape = std::move(shape);
    s_->data = std::make_shared<std::vector<S>>(n, fill);
    s_->requires_grad = requires_grad;
  }

  struct Storage {
    std::uint64_t id = next_id();
    std::vector<int> shape;
    std::shared_ptr<std::vector<S>> data;
    bool requires_grad = false;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> c{1};
    return c.fetch_add(1);
  }

  std::shared_ptr<Storage> s_;
};

// Per-backward gradient buffers, keyed by tensor id. Gradients live here
// rather than inside tensors so independent tapes can run in parallel over
// shared parameters.
template <class S>
class GradStore {
 public:
  std::vector<S>& acc(const Tensor<S>& t) {
    auto it = g_.find(t.id());
    if (it == g_.end())
      it = g_.emplace(t.id(), std::vector<S>(t.numel(), S(0))).first;
    return it->second;
  }
  const std::vector<S>* find(std::uint64_t id) const {
    auto it = g_.find(id);
    return it == g_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<std::uint64_t, std::vector<S>> g_;
};

template <class S>
using GradMap = std::unordered_map<std::uint64_t, Tensor<S>>;

// Records primitive applications in insertion order; one backward sweep
// visits them exactly once in reverse. Single-threaded by contract: one
// tape per worker.
template <class S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    params_.clear();
    consumed_ = false;
  }

  // ---- primitives -------------------------------------------------------

  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const int m = a.rows_2d(), k = a.cols_2d();
    const int k2 = b.rows_2d(), n = b.cols_2d();
    if (k != k2) throw std::runtime_error("matmul: inner dimensions differ");
    Tensor<S> out = Tensor<S>::zeros({m, n}, grad_needed(a, b));
    kernels::matmul(a.data(), b.data(), out.mutable_data(), m, k, n);
    record("matmul", {a, b}, out, [a, b, out, m, k, n](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      if (a.requires_grad())
        kernels::matmul_nt_acc(g->data(), b.data(), gs.acc(a).data(), m, k, n);
      if (b.requires_grad())
        kernels::matmul_tn_acc(a.data(), g->data(), gs.acc(b).data(), m, k, n);
    });
    return out;
  }

  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return elementwise_binary("add", a, b, [](S x, S y) { return x + y; },
                              S(1), S(1));
  }
  Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return elementwise_binary("sub", a, b, [](S x, S y) { return x - y; },
                              S(1), S(-1));
  }

  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape("mul", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape(), grad_needed(a, b));
    const std::size_t n = out.numel();
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) o[i] = a.data()[i] * b.data()[i];
    record("mul", {a, b}, out, [a, b, out, n](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      if (a.requires_grad()) {
        std::vector<S>& da = gs.acc(a);
        for (std::size_t i = 0; i < n; ++i) da[i] += (*g)[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        std::vector<S>& db = gs.acc(b);
        for (std::size_t i = 0; i < n; ++i) db[i] += (*g)[i] * a.data()[i];
      }
    });
    return out;
  }

  // a is r x c, bias has c entries added to every row.
  Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& bias) {
    const int r = a.rows_2d(), c = a.cols_2d();
    if (static_cast<std::size_t>(c) != bias.numel())
      throw std::runtime_error("add_bias: bias length differs from columns");
    Tensor<S> out = Tensor<S>::zeros(a.shape(), grad_needed(a, bias));
    S* o = out.mutable_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        o[static_cast<std::size_t>(i) * c + j] =
            a.data()[static_cast<std::size_t>(i) * c + j] + bias.data()[j];
    record("add_bias", {a, bias}, out, [a, bias, out, r, c](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      if (a.requires_grad()) {
        std::vector<S>& da = gs.acc(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*g)[i];
      }
      if (bias.requires_grad()) {
        std::vector<S>& db = gs.acc(bias);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            db[j] += (*g)[static_cast<std::size_t>(i) * c + j];
      }
    });
    return out;
  }

  Tensor<S> scale(const Tensor<S>& a, S s) {
    Tensor<S> out = Tensor<S>::zeros(a.shape(), grad_needed(a));
    const std::size_t n = out.numel();
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) o[i] = a.data()[i] * s;
    record("scale", {a}, out, [a, out, s, n](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < n; ++i) da[i] += (*g)[i] * s;
    });
    return out;
  }

  Tensor<S> exp(const Tensor<S>& a) {
    return unary("exp", a, [](S x) { return std::exp(x); },
                 [](S, S y) { return y; });
  }
  Tensor<S> log(const Tensor<S>& a) {
    return unary("log", a, [](S x) { return std::log(x); },
                 [](S x, S) { return S(1) / x; });
  }
  Tensor<S> sqrt(const Tensor<S>& a) {
    return unary("sqrt", a, [](S x) { return std::sqrt(x); },
                 [](S, S y) { return S(0.5) / y; });
  }
  Tensor<S> gelu(const Tensor<S>& a) {
    return unary("gelu", a, [](S x) { return kernels::gelu_value(x); },
                 [](S x, S) { return kernels::gelu_grad(x); });
  }

  Tensor<S> masked_softmax(const Tensor<S>& logits, const MaskMatrix& mask) {
    const int r = logits.rows_2d(), c = logits.cols_2d();
    if (mask.rows != r || mask.cols != c)
      throw std::runtime_error("masked_softmax: mask and logits shapes differ");
    Tensor<S> out = Tensor<S>::zeros(logits.shape(), grad_needed(logits));
    kernels::masked_softmax(logits.data(), mask.cells.data(),
                            out.mutable_data(), r, c);
    record("masked_softmax", {logits}, out, [logits, out, mask, r, c](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !logits.requires_grad()) return;
      std::vector<S>& dx = gs.acc(logits);
      for (int i = 0; i < r; ++i)
        kernels::masked_softmax_backward_row(
            out.data() + static_cast<std::size_t>(i) * c,
            mask.cells.data() + static_cast<std::size_t>(i) * c,
            g->data() + static_cast<std::size_t>(i) * c,
            dx.data() + static_cast<std::size_t>(i) * c, c);
    });
    return out;
  }

  // Normalizes the last axis to zero mean / unit variance, then applies the
  // affine rescale y*gamma + beta.
  Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                       const Tensor<S>& beta, S eps = S(1e-5)) {
    const int r = x.rows_2d(), c = x.cols_2d();
    if (gamma.numel() != static_cast<std::size_t>(c) ||
        beta.numel() != static_cast<std::size_t>(c))
      throw std::runtime_error("layer_norm: affine parameter length mismatch");
    Tensor<S> normed = Tensor<S>::zeros(x.shape());
    auto mean = std::make_shared<std::vector<S>>(r);
    auto rstd = std::make_shared<std::vector<S>>(r);
    kernels::layernorm(x.data(), normed.mutable_data(), mean->data(),
                       rstd->data(), r, c, eps);
    Tensor<S> out =
        Tensor<S>::zeros(x.shape(), grad_needed(x, gamma) || beta.requires_grad());
    S* o = out.mutable_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
        o[idx] = normed.data()[idx] * gamma.data()[j] + beta.data()[j];
      }
    record("layer_norm", {x, gamma, beta}, out,
           [x, gamma, beta, out, normed, rstd, r, c](GradStore<S>& gs) {
             const std::vector<S>* g = gs.find(out.id());
             if (!g) return;
             if (gamma.requires_grad()) {
               std::vector<S>& dg = gs.acc(gamma);
               for (int i = 0; i < r; ++i)
                 for (int j = 0; j < c; ++j)
                   dg[j] += (*g)[static_cast<std::size_t>(i) * c + j] *
                            normed.data()[static_cast<std::size_t>(i) * c + j];
             }
             if (beta.requires_grad()) {
               std::vector<S>& db = gs.acc(beta);
               for (int i = 0; i < r; ++i)
                 for (int j = 0; j < c; ++j)
                   db[j] += (*g)[static_cast<std::size_t>(i) * c + j];
             }
             if (x.requires_grad()) {
               std::vector<S>& dx = gs.acc(x);
               for (int i = 0; i < r; ++i) {
                 const std::size_t base = static_cast<std::size_t>(i) * c;
                 // dl/dnormed
                 S sum_gn = S(0), sum_gnn = S(0);
                 for (int j = 0; j < c; ++j) {
                   const S gn = (*g)[base + j] * gamma.data()[j];
                   sum_gn += gn;
                   sum_gnn += gn * normed.data()[base + j];
                 }
                 const S inv_c = S(1) / S(c);
                 for (int j = 0; j < c; ++j) {
                   const S gn = (*g)[base + j] * gamma.data()[j];
                   dx[base + j] += (*rstd)[i] *
                                   (gn - inv_c * sum_gn -
                                    normed.data()[base + j] * inv_c * sum_gnn);
                 }
               }
             }
           });
    return out;
  }

  // x is an H x W x C image; output rows are flattened kh x kw x C patches,
  // one per (oy, ox). Convolution is this followed by matmul, so the matmul
  // gradient rule is reused.
  Tensor<S> im2col(const Tensor<S>& x, int h, int w, int c, int kh, int kw,
                   int stride, int pad) {
    if (stride < 1) throw std::runtime_error("im2col: stride must be >= 1");
    if (x.numel() != static_cast<std::size_t>(h) * w * c)
      throw std::runtime_error("im2col: image size mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw std::runtime_error("im2col: empty output");
    Tensor<S> out = Tensor<S>::zeros({oh * ow, kh * kw * c}, grad_needed(x));
    kernels::im2col(x.data(), out.mutable_data(), h, w, c, kh, kw, stride, pad,
                    oh, ow);
    record("im2col", {x}, out,
           [x, out, h, w, c, kh, kw, stride, pad, oh, ow](GradStore<S>& gs) {
             const std::vector<S>* g = gs.find(out.id());
             if (!g || !x.requires_grad()) return;
             kernels::col2im_acc(g->data(), gs.acc(x).data(), h, w, c, kh, kw,
                                 stride, pad, oh, ow);
           });
    return out;
  }

  Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros({1}, grad_needed(a));
    out.mutable_data()[0] = kernels::sum_serial(a.data(), a.numel());
    record("sum", {a}, out, [a, out](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*g)[0];
    });
    return out;
  }

  Tensor<S> mean(const Tensor<S>& a) {
    const S inv = S(1) / S(a.numel());
    Tensor<S> out = Tensor<S>::zeros({1}, grad_needed(a));
    out.mutable_data()[0] = kernels::sum_serial(a.data(), a.numel()) * inv;
    record("mean", {a}, out, [a, out, inv](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*g)[0] * inv;
    });
    return out;
  }

  Tensor<S> reshape(const Tensor<S>& a, std::vector<int> shape) {
    Tensor<S> out = a.reshaped(std::move(shape));
    // Same storage: gradients flow through by id aliasing.
    record("reshape", {a}, out, [a, out](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*g)[i];
    });
    return out;
  }

  Tensor<S> transpose(const Tensor<S>& a) {
    const int r = a.rows_2d(), c = a.cols_2d();
    Tensor<S> out = Tensor<S>::zeros({c, r}, grad_needed(a));
    S* o = out.mutable_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        o[static_cast<std::size_t>(j) * r + i] =
            a.data()[static_cast<std::size_t>(i) * c + j];
    record("transpose", {a}, out, [a, out, r, c](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          da[static_cast<std::size_t>(i) * c + j] +=
              (*g)[static_cast<std::size_t>(j) * r + i];
    });
    return out;
  }

  Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_rows: empty input");
    const int c = parts[0].cols_2d();
    int r = 0;
    bool rg = false;
    for (const auto& p : parts) {
      if (p.cols_2d() != c)
        throw std::runtime_error("concat_rows: column count mismatch");
      r += p.rows_2d();
      rg = rg || p.requires_grad();
    }
    Tensor<S> out = Tensor<S>::zeros({r, c}, rg && recording_);
    S* o = out.mutable_data();
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t i = 0; i < p.numel(); ++i) o[off + i] = p.data()[i];
      off += p.numel();
    }
    record("concatenate", parts, out, [parts, out](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      std::size_t off2 = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          std::vector<S>& dp = gs.acc(p);
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += (*g)[off2 + i];
        }
        off2 += p.numel();
      }
    });
    return out;
  }

  Tensor<S> slice_rows(const Tensor<S>& a, int r0, int r1) {
    const int r = a.rows_2d(), c = a.cols_2d();
    if (r0 < 0 || r1 > r || r0 >= r1)
      throw std::runtime_error("slice_rows: bad range");
    Tensor<S> out = Tensor<S>::zeros({r1 - r0, c}, grad_needed(a));
    S* o = out.mutable_data();
    const std::size_t base = static_cast<std::size_t>(r0) * c;
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = a.data()[base + i];
    record("slice_rows", {a}, out, [a, out, base](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < g->size(); ++i) da[base + i] += (*g)[i];
    });
    return out;
  }

  Tensor<S> slice_cols(const Tensor<S>& a, int c0, int c1) {
    const int r = a.rows_2d(), c = a.cols_2d();
    if (c0 < 0 || c1 > c || c0 >= c1)
      throw std::runtime_error("slice_cols: bad range");
    const int w = c1 - c0;
    Tensor<S> out = Tensor<S>::zeros({r, w}, grad_needed(a));
    S* o = out.mutable_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        o[static_cast<std::size_t>(i) * w + j] =
            a.data()[static_cast<std::size_t>(i) * c + c0 + j];
    record("slice_cols", {a}, out, [a, out, r, c, c0, w](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          da[static_cast<std::size_t>(i) * c + c0 + j] +=
              (*g)[static_cast<std::size_t>(i) * w + j];
    });
    return out;
  }

  Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_cols: empty input");
    const int r = parts[0].rows_2d();
    int c = 0;
    bool rg = false;
    for (const auto& p : parts) {
      if (p.rows_2d() != r)
        throw std::runtime_error("concat_cols: row count mismatch");
      c += p.cols_2d();
      rg = rg || p.requires_grad();
    }
    Tensor<S> out = Tensor<S>::zeros({r, c}, rg && recording_);
    S* o = out.mutable_data();
    int off = 0;
    for (const auto& p : parts) {
      const int pc = p.cols_2d();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < pc; ++j)
          o[static_cast<std::size_t>(i) * c + off + j] =
              p.data()[static_cast<std::size_t>(i) * pc + j];
      off += pc;
    }
    record("concatenate", parts, out, [parts, out, r, c](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      int off2 = 0;
      for (const auto& p : parts) {
        const int pc = p.cols_2d();
        if (p.requires_grad()) {
          std::vector<S>& dp = gs.acc(p);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
              dp[static_cast<std::size_t>(i) * pc + j] +=
                  (*g)[static_cast<std::size_t>(i) * c + off2 + j];
        }
        off2 += pc;
      }
    });
    return out;
  }

  // Row select from a table; gradient scatter-adds into the chosen rows.
  Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& rows) {
    const int v = table.rows_2d(), d = table.cols_2d();
    for (int rix : rows)
      if (rix < 0 || rix >= v)
        throw std::runtime_error("embedding: row index out of range");
    Tensor<S> out =
        Tensor<S>::zeros({static_cast<int>(rows.size()), d}, grad_needed(table));
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < d; ++j)
        o[i * d + j] = table.data()[static_cast<std::size_t>(rows[i]) * d + j];
    record("embedding", {table}, out, [table, out, rows, d](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !table.requires_grad()) return;
      std::vector<S>& dt = gs.acc(table);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < d; ++j)
          dt[static_cast<std::size_t>(rows[i]) * d + j] += (*g)[i * d + j];
    });
    return out;
  }

  // Mean absolute error over all elements.
  Tensor<S> l1_loss(const Tensor<S>& pred, const Tensor<S>& target) {
    check_same_shape("l1_loss", pred, target);
    const std::size_t n = pred.numel();
    const S inv = S(1) / S(n);
    Tensor<S> out = Tensor<S>::zeros({1}, grad_needed(pred, target));
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i)
      acc += std::abs(pred.data()[i] - target.data()[i]);
    out.mutable_data()[0] = acc * inv;
    record("l1_loss", {pred, target}, out, [pred, target, out, n, inv](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      const S go = (*g)[0] * inv;
      if (pred.requires_grad()) {
        std::vector<S>& dp = gs.acc(pred);
        for (std::size_t i = 0; i < n; ++i) {
          const S d = pred.data()[i] - target.data()[i];
          dp[i] += go * (d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0)));
        }
      }
      if (target.requires_grad()) {
        std::vector<S>& dt = gs.acc(target);
        for (std::size_t i = 0; i < n; ++i) {
          const S d = pred.data()[i] - target.data()[i];
          dt[i] -= go * (d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0)));
        }
      }
    });
    return out;
  }

  // Mean squared error over all elements.
  Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
    check_same_shape("mse_loss", pred, target);
    const std::size_t n = pred.numel();
    const S inv = S(1) / S(n);
    Tensor<S> out = Tensor<S>::zeros({1}, grad_needed(pred, target));
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) {
      const S d = pred.data()[i] - target.data()[i];
      acc += d * d;
    }
    out.mutable_data()[0] = acc * inv;
    record("mse_loss", {pred, target}, out, [pred, target, out, n, inv](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      const S go = (*g)[0] * inv;
      if (pred.requires_grad()) {
        std::vector<S>& dp = gs.acc(pred);
        for (std::size_t i = 0; i < n; ++i)
          dp[i] += go * S(2) * (pred.data()[i] - target.data()[i]);
      }
      if (target.requires_grad()) {
        std::vector<S>& dt = gs.acc(target);
        for (std::size_t i = 0; i < n; ++i)
          dt[i] -= go * S(2) * (pred.data()[i] - target.data()[i]);
      }
    });
    return out;
  }

  // ---- backward ---------------------------------------------------------

  // Seeds d(loss)=1 and sweeps the node list once in reverse insertion
  // order. Returns a gradient per requires_grad tensor seen on the tape;
  // tensors never reached by the sweep get zeros. The tape is cleared and
  // cannot be swept again without new recordings.
  GradMap<S> backpropagate(const Tensor<S>& loss) {
    if (consumed_)
      throw std::runtime_error("backpropagate: tape already consumed");
    if (!recording_)
      throw std::runtime_error("backpropagate: tape is not recording");
    if (loss.numel() != 1)
      throw std::runtime_error("backpropagate: loss must be a scalar");
    GradStore<S> gs;
    gs.acc(loss)[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(gs);
    GradMap<S> grads;
    for (auto& [tid, t] : params_) {
      const std::vector<S>* g = gs.find(tid);
      Tensor<S> gt = g ? Tensor<S>::from(t.shape(), *g)
                       : Tensor<S>::zeros(t.shape());
      grads.emplace(tid, std::move(gt));
    }
    nodes_.clear();
    params_.clear();
    consumed_ = true;
    return grads;
  }

  static bool is_registered(const std::string& name) {
    return registry().count(name) > 0;
  }

 private:
  bool grad_needed(const Tensor<S>& a) const {
    return recording_ && a.requires_grad();
  }
  bool grad_needed(const Tensor<S>& a, const Tensor<S>& b) const {
    return recording_ && (a.requires_grad() || b.requires_grad());
  }

  static void check_same_shape(const char* op, const Tensor<S>& a,
                               const Tensor<S>& b) {
    if (a.shape() != b.shape())
      throw std::runtime_error(std::string(op) + ": shape mismatch");
  }

  static const std::set<std::string>& registry() {
    static const std::set<std::string> reg = {
        "matmul",      "add",        "sub",         "mul",
        "add_bias",    "scale",      "exp",         "log",
        "sqrt",        "gelu",       "masked_softmax", "layer_norm",
        "im2col",      "sum",        "mean",        "reshape",
        "transpose",   "concatenate", "slice_rows", "slice_cols",
        "embedding",   "l1_loss",    "mse_loss"};
    return reg;
  }

  void note_param(const Tensor<S>& t) {
    if (recording_ && t.requires_grad()) params_.emplace(t.id(), t);
  }

  template <class Fn>
  void record(const char* name, std::initializer_list<Tensor<S>> inputs,
              const Tensor<S>& out, Fn&& backward) {
    if (!is_registered(name))
      throw std::runtime_error(std::string("tape: unregistered primitive ") +
                               name);
    if (!recording_ || !out.requires_grad()) return;
    for (const auto& t : inputs) note_param(t);
    nodes_.emplace_back(std::forward<Fn>(backward));
  }

  template <class Fn>
  void record(const char* name, const std::vector<Tensor<S>>& inputs,
              const Tensor<S>& out, Fn&& backward) {
    if (!is_registered(name))
      throw std::runtime_error(std::string("tape: unregistered primitive ") +
                               name);
    if (!recording_ || !out.requires_grad()) return;
    for (const auto& t : inputs) note_param(t);
    nodes_.emplace_back(std::forward<Fn>(backward));
  }

  template <class FwdOp>
  Tensor<S> elementwise_binary(const char* name, const Tensor<S>& a,
                               const Tensor<S>& b, FwdOp f, S wa, S wb) {
    check_same_shape(name, a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape(), grad_needed(a, b));
    const std::size_t n = out.numel();
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) o[i] = f(a.data()[i], b.data()[i]);
    record(name, {a, b}, out, [a, b, out, wa, wb, n](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g) return;
      if (a.requires_grad()) {
        std::vector<S>& da = gs.acc(a);
        for (std::size_t i = 0; i < n; ++i) da[i] += wa * (*g)[i];
      }
      if (b.requires_grad()) {
        std::vector<S>& db = gs.acc(b);
        for (std::size_t i = 0; i < n; ++i) db[i] += wb * (*g)[i];
      }
    });
    return out;
  }

  template <class FwdOp, class GradOp>
  Tensor<S> unary(const char* name, const Tensor<S>& a, FwdOp f, GradOp df) {
    Tensor<S> out = Tensor<S>::zeros(a.shape(), grad_needed(a));
    const std::size_t n = out.numel();
    kernels::map(a.data(), out.mutable_data(), n, f);
    record(name, {a}, out, [a, out, df, n](GradStore<S>& gs) {
      const std::vector<S>* g = gs.find(out.id());
      if (!g || !a.requires_grad()) return;
      std::vector<S>& da = gs.acc(a);
      for (std::size_t i = 0; i < n; ++i)
        da[i] += (*g)[i] * df(a.data()[i], out.data()[i]);
    });
    return out;
  }

  using Node = std::function<void(GradStore<S>&)>;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, Tensor<S>> params_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace bdc
