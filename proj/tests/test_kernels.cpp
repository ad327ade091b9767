#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "bdc/kernels.hpp"
#include "bdc/rng.hpp"

using namespace bdc;

namespace {

template <class S>
std::vector<S> random_vec(std::size_t n, Rng& rng, double lo = -1.0,
                          double hi = 1.0) {
  std::vector<S> v(n);
  for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
  return v;
}

template <class S>
bool bitwise_equal(const std::vector<S>& a, const std::vector<S>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(S)) == 0;
}

}  // namespace

TEST_CASE("matmul serial and parallel are bitwise identical") {
  Rng rng(11);
  for (auto [m, k, n] : {std::tuple{3, 4, 5}, {17, 33, 9}, {64, 64, 64}}) {
    auto a = random_vec<float>(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec<float>(static_cast<std::size_t>(k) * n, rng);
    std::vector<float> cs(static_cast<std::size_t>(m) * n), cp(cs.size());
    kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
    kernels::matmul_parallel(a.data(), b.data(), cp.data(), m, k, n);
    CHECK(bitwise_equal(cs, cp));
  }
}

TEST_CASE("matmul matches a plain triple loop") {
  Rng rng(12);
  const int m = 7, k = 5, n = 6;
  auto a = random_vec<double>(static_cast<std::size_t>(m) * k, rng);
  auto b = random_vec<double>(static_cast<std::size_t>(k) * n, rng);
  std::vector<double> c(static_cast<std::size_t>(m) * n);
  kernels::matmul_serial(a.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double ref = 0.0;
      for (int p = 0; p < k; ++p) ref += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("matmul gradient kernels match dense reference") {
  Rng rng(13);
  const int m = 4, k = 3, n = 5;
  auto a = random_vec<double>(static_cast<std::size_t>(m) * k, rng);
  auto b = random_vec<double>(static_cast<std::size_t>(k) * n, rng);
  auto dc = random_vec<double>(static_cast<std::size_t>(m) * n, rng);
  std::vector<double> da(a.size(), 0.0), db(b.size(), 0.0);
  kernels::matmul_nt_acc_serial(dc.data(), b.data(), da.data(), m, k, n);
  kernels::matmul_tn_acc_serial(a.data(), dc.data(), db.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double ref = 0.0;
      for (int j = 0; j < n; ++j) ref += dc[i * n + j] * b[p * n + j];
      CHECK(da[i * k + p] == doctest::Approx(ref).epsilon(1e-12));
    }
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) {
      double ref = 0.0;
      for (int i = 0; i < m; ++i) ref += a[i * k + p] * dc[i * n + j];
      CHECK(db[p * n + j] == doctest::Approx(ref).epsilon(1e-12));
    }
  // parallel accumulation is bitwise identical
  std::vector<double> da2(a.size(), 0.0), db2(b.size(), 0.0);
  kernels::matmul_nt_acc_parallel(dc.data(), b.data(), da2.data(), m, k, n);
  kernels::matmul_tn_acc_parallel(a.data(), dc.data(), db2.data(), m, k, n);
  CHECK(bitwise_equal(da, da2));
  CHECK(bitwise_equal(db, db2));
}

TEST_CASE("masked softmax serial and parallel are bitwise identical") {
  Rng rng(14);
  const int rows = 37, cols = 19;
  auto x = random_vec<float>(static_cast<std::size_t>(rows) * cols, rng, -4, 4);
  std::vector<std::uint8_t> mask(x.size());
  for (int r = 0; r < rows; ++r) {
    bool any = false;
    for (int c = 0; c < cols; ++c) {
      mask[static_cast<std::size_t>(r) * cols + c] = rng.uniform() < 0.5;
      any = any || mask[static_cast<std::size_t>(r) * cols + c];
    }
    if (!any) mask[static_cast<std::size_t>(r) * cols] = 1;
  }
  std::vector<float> ys(x.size()), yp(x.size());
  kernels::masked_softmax_serial(x.data(), mask.data(), ys.data(), rows, cols);
  kernels::masked_softmax_parallel(x.data(), mask.data(), yp.data(), rows, cols);
  CHECK(bitwise_equal(ys, yp));
}

TEST_CASE("layernorm serial and parallel are bitwise identical") {
  Rng rng(15);
  const int rows = 41, cols = 23;
  auto x = random_vec<double>(static_cast<std::size_t>(rows) * cols, rng);
  std::vector<double> ys(x.size()), yp(x.size());
  std::vector<double> ms(rows), rs(rows), mp(rows), rp(rows);
  kernels::layernorm_serial(x.data(), ys.data(), ms.data(), rs.data(), rows,
                            cols, 1e-5);
  kernels::layernorm_parallel(x.data(), yp.data(), mp.data(), rp.data(), rows,
                              cols, 1e-5);
  CHECK(bitwise_equal(ys, yp));
}

TEST_CASE("im2col and col2im serial and parallel are bitwise identical") {
  Rng rng(16);
  const int h = 16, w = 12, c = 3, kh = 3, kw = 3, stride = 2, pad = 1;
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  auto x = random_vec<float>(static_cast<std::size_t>(h) * w * c, rng);
  std::vector<float> cs(static_cast<std::size_t>(oh) * ow * kh * kw * c),
      cp(cs.size());
  kernels::im2col_serial(x.data(), cs.data(), h, w, c, kh, kw, stride, pad, oh,
                         ow);
  kernels::im2col_parallel(x.data(), cp.data(), h, w, c, kh, kw, stride, pad,
                           oh, ow);
  CHECK(bitwise_equal(cs, cp));

  auto dcols = random_vec<float>(cs.size(), rng);
  std::vector<float> dxs(x.size(), 0.0f), dxp(x.size(), 0.0f);
  kernels::col2im_acc_serial(dcols.data(), dxs.data(), h, w, c, kh, kw, stride,
                             pad, oh, ow);
  kernels::col2im_acc_parallel(dcols.data(), dxp.data(), h, w, c, kh, kw,
                               stride, pad, oh, ow);
  CHECK(bitwise_equal(dxs, dxp));
}

TEST_CASE("col2im is the exact adjoint of im2col") {
  // <im2col(x), y> == <x, col2im(y)> for random x, y.
  Rng rng(17);
  const int h = 10, w = 8, c = 2, kh = 3, kw = 3, stride = 2, pad = 1;
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  auto x = random_vec<double>(static_cast<std::size_t>(h) * w * c, rng);
  std::vector<double> cols(static_cast<std::size_t>(oh) * ow * kh * kw * c);
  kernels::im2col_serial(x.data(), cols.data(), h, w, c, kh, kw, stride, pad,
                         oh, ow);
  auto y = random_vec<double>(cols.size(), rng);
  std::vector<double> back(x.size(), 0.0);
  kernels::col2im_acc_serial(y.data(), back.data(), h, w, c, kh, kw, stride,
                             pad, oh, ow);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("mode switch is honored and restored by the guard") {
  kernels::set_mode(kernels::Mode::parallel);
  {
    kernels::ModeGuard guard(kernels::Mode::serial);
    CHECK(kernels::mode() == kernels::Mode::serial);
  }
  CHECK(kernels::mode() == kernels::Mode::parallel);
}
