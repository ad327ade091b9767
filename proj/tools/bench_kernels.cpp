// Times the serial reference kernels against the OpenMP variants and checks
// that both produce bitwise-identical results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "bdc/kernels.hpp"
#include "bdc/rng.hpp"

using clock_type = std::chrono::steady_clock;

namespace {

double ms_since(clock_type::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t0)
      .count();
}

template <class F>
double time_best_of(int reps, F f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = clock_type::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

std::vector<float> random_vec(std::size_t n, bdc::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  int scale = 1;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--quick") scale = 4;

  bdc::Rng rng(7);
  std::printf("%-28s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms",
              "speedup", "bitwise");

  {
    const int m = 512 / scale, k = 512 / scale, n = 512 / scale;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<float> c_s(static_cast<std::size_t>(m) * n);
    std::vector<float> c_p(c_s.size());
    const double ts = time_best_of(3, [&] {
      bdc::kernels::matmul_serial(a.data(), b.data(), c_s.data(), m, k, n);
    });
    const double tp = time_best_of(3, [&] {
      bdc::kernels::matmul_parallel(a.data(), b.data(), c_p.data(), m, k, n);
    });
    const bool same =
        std::memcmp(c_s.data(), c_p.data(), c_s.size() * sizeof(float)) == 0;
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n",
                ("matmul " + std::to_string(m) + "^3").c_str(), ts, tp, ts / tp,
                same ? "yes" : "NO");
  }

  {
    const int rows = 4096 / scale, cols = 256;
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    std::vector<std::uint8_t> mask(x.size());
    for (auto& v : mask) v = rng.uniform() < 0.6 ? 1 : 0;
    for (int r = 0; r < rows; ++r)
      mask[static_cast<std::size_t>(r) * cols] = 1;  // keep every row alive
    std::vector<float> y_s(x.size()), y_p(x.size());
    const double ts = time_best_of(3, [&] {
      bdc::kernels::masked_softmax_serial(x.data(), mask.data(), y_s.data(),
                                          rows, cols);
    });
    const double tp = time_best_of(3, [&] {
      bdc::kernels::masked_softmax_parallel(x.data(), mask.data(), y_p.data(),
                                            rows, cols);
    });
    const bool same =
        std::memcmp(y_s.data(), y_p.data(), y_s.size() * sizeof(float)) == 0;
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n", "masked_softmax 4096x256",
                ts, tp, ts / tp, same ? "yes" : "NO");
  }

  {
    const int rows = 4096 / scale, cols = 256;
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    std::vector<float> y_s(x.size()), y_p(x.size());
    std::vector<float> mean(static_cast<std::size_t>(rows)),
        rstd(static_cast<std::size_t>(rows));
    const double ts = time_best_of(3, [&] {
      bdc::kernels::layernorm_serial(x.data(), y_s.data(), mean.data(),
                                     rstd.data(), rows, cols, 1e-5f);
    });
    const double tp = time_best_of(3, [&] {
      bdc::kernels::layernorm_parallel(x.data(), y_p.data(), mean.data(),
                                       rstd.data(), rows, cols, 1e-5f);
    });
    const bool same =
        std::memcmp(y_s.data(), y_p.data(), y_s.size() * sizeof(float)) == 0;
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n", "layernorm 4096x256", ts,
                tp, ts / tp, same ? "yes" : "NO");
  }

  {
    const int h = 256 / scale, w = 256 / scale, c = 8;
    auto x = random_vec(static_cast<std::size_t>(h) * w * c, rng);
    const int oh = (h + 2 - 3) / 2 + 1, ow = (w + 2 - 3) / 2 + 1;
    std::vector<float> cols_s(static_cast<std::size_t>(oh) * ow * 9 * c);
    std::vector<float> cols_p(cols_s.size());
    const double ts = time_best_of(3, [&] {
      bdc::kernels::im2col_serial(x.data(), cols_s.data(), h, w, c, 3, 3, 2, 1,
                                  oh, ow);
    });
    const double tp = time_best_of(3, [&] {
      bdc::kernels::im2col_parallel(x.data(), cols_p.data(), h, w, c, 3, 3, 2,
                                    1, oh, ow);
    });
    const bool same = std::memcmp(cols_s.data(), cols_p.data(),
                                  cols_s.size() * sizeof(float)) == 0;
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n", "im2col 256x256x8", ts, tp,
                ts / tp, same ? "yes" : "NO");
  }

  return 0;
}
