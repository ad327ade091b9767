#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bdc/gradcheck.hpp"
#include "bdc/tensor.hpp"

using namespace bdc;

namespace {

Tensor<double> randn_t(std::vector<int> shape, Rng& rng, bool rg = true,
                       double scale = 1.0) {
  return Tensor<double>::randn(std::move(shape), rng, scale, rg);
}

// Reference row softmax over the visible keys only, same left-to-right
// order as the engine but written independently.
std::vector<double> ref_masked_softmax_row(const std::vector<double>& x,
                                           const std::vector<bool>& mask) {
  double mx = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (mask[j] && (!any || x[j] > mx)) {
      mx = x[j];
      any = true;
    }
  REQUIRE(any);
  std::vector<double> y(x.size(), 0.0);
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (mask[j]) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
  for (std::size_t j = 0; j < x.size(); ++j)
    if (mask[j]) y[j] /= sum;
  return y;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK_THROWS(Tensor<double>::from({2, 2}, {1, 2, 3}));
  CHECK_THROWS(t.reshaped({4, 2}));
  // Reshape is a view over the same data.
  auto v = t.reshaped({3, 2});
  v.mutable_data()[0] = 42.0;
  CHECK(t.data()[0] == 42.0);
  CHECK(v.shape() == std::vector<int>{3, 2});
}

TEST_CASE("masked softmax: uniform two-key row") {
  Tape<double> tape;
  auto logits = Tensor<double>::from({1, 2}, {0.0, 0.0});
  MaskMatrix mask = MaskMatrix::all_true(1, 2);
  auto out = tape.masked_softmax(logits, mask);
  CHECK(out.data()[0] == 0.5);
  CHECK(out.data()[1] == 0.5);
}

TEST_CASE("masked softmax: two-term row with one excluded key") {
  // Hand-evaluated two-term softmax: logits (1, 5, 9), middle key masked.
  Tape<double> tape;
  auto logits = Tensor<double>::from({1, 3}, {1.0, 5.0, 9.0});
  MaskMatrix mask = MaskMatrix::all_true(1, 3);
  mask.set(0, 1, false);
  auto out = tape.masked_softmax(logits, mask);
  const double e8 = std::exp(8.0);
  CHECK(out.data()[0] == doctest::Approx(1.0 / (1.0 + e8)).epsilon(1e-15));
  CHECK(out.data()[1] == 0.0);
  CHECK(out.data()[2] == doctest::Approx(e8 / (1.0 + e8)).epsilon(1e-15));
  // Frozen values from the independent scalar evaluation.
  CHECK(out.data()[0] == doctest::Approx(3.3535013046647827e-04).epsilon(1e-12));
  CHECK(out.data()[2] == doctest::Approx(9.9966464986953352e-01).epsilon(1e-12));
  CHECK(out.data()[0] + out.data()[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("masked softmax with all-true mask equals mask-free softmax bitwise") {
  Rng rng(3);
  Tape<double> tape;
  const int cols = 7;
  auto logits = randn_t({1, cols}, rng, false, 2.0);
  auto out = tape.masked_softmax(logits, MaskMatrix::all_true(1, cols));
  std::vector<double> x(logits.data(), logits.data() + cols);
  auto ref = ref_masked_softmax_row(x, std::vector<bool>(cols, true));
  for (int j = 0; j < cols; ++j)
    CHECK(std::memcmp(&out.data()[j], &ref[static_cast<std::size_t>(j)],
                      sizeof(double)) == 0);
}

TEST_CASE("masked softmax exclusion equivalence, random masks") {
  // Property: each row equals the softmax computed over only the visible
  // keys, bitwise.
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int cols = 2 + static_cast<int>(rng.uniform_int(9));
    std::vector<double> x(static_cast<std::size_t>(cols));
    std::vector<bool> m(static_cast<std::size_t>(cols));
    bool any = false;
    for (int j = 0; j < cols; ++j) {
      x[static_cast<std::size_t>(j)] = rng.uniform(-5, 5);
      m[static_cast<std::size_t>(j)] = rng.uniform() < 0.5;
      any = any || m[static_cast<std::size_t>(j)];
    }
    if (!any) m[0] = true;
    MaskMatrix mask;
    mask.rows = 1;
    mask.cols = cols;
    mask.cells.resize(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j)
      mask.cells[static_cast<std::size_t>(j)] = m[static_cast<std::size_t>(j)];
    Tape<double> tape;
    auto out = tape.masked_softmax(Tensor<double>::from({1, cols}, x), mask);
    auto ref = ref_masked_softmax_row(x, m);
    for (int j = 0; j < cols; ++j)
      CHECK(std::memcmp(&out.data()[j], &ref[static_cast<std::size_t>(j)],
                        sizeof(double)) == 0);
  }
}

TEST_CASE("masked softmax error paths") {
  Tape<double> tape;
  auto logits = Tensor<double>::from({1, 2}, {1.0, 2.0});
  MaskMatrix none = MaskMatrix::all_true(1, 2);
  none.set(0, 0, false);
  none.set(0, 1, false);
  CHECK_THROWS_WITH_AS(tape.masked_softmax(logits, none),
                       "masked_softmax: query with no visible keys",
                       std::runtime_error);
  MaskMatrix wrong = MaskMatrix::all_true(2, 2);
  CHECK_THROWS(tape.masked_softmax(logits, wrong));
}

TEST_CASE("backpropagate: d(x*x)/dx = 2x at x = 3") {
  Tape<double> tape;
  auto x = Tensor<double>::from({1}, {3.0}, true);
  auto y = tape.mul(x, x);
  auto grads = tape.backpropagate(y);
  CHECK(grads.at(x.id()).data()[0] == doctest::Approx(6.0));
}

TEST_CASE("backpropagate: grad of sum(W v) is v broadcast over rows") {
  Tape<double> tape;
  auto w = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  auto v = Tensor<double>::from({2, 1}, {0.5, -1.5});
  auto loss = tape.sum(tape.matmul(w, v));
  auto grads = tape.backpropagate(loss);
  const auto& g = grads.at(w.id());
  for (int r = 0; r < 3; ++r) {
    CHECK(g.data()[2 * r + 0] == doctest::Approx(0.5));
    CHECK(g.data()[2 * r + 1] == doctest::Approx(-1.5));
  }
}

TEST_CASE("backpropagate: unreachable parameters get zero gradients") {
  Tape<double> tape;
  auto x = Tensor<double>::from({1}, {2.0}, true);
  auto unused = Tensor<double>::from({2}, {1.0, 1.0}, true);
  auto y = tape.mul(x, x);
  (void)tape.scale(unused, 3.0);  // on the tape, but not feeding the loss
  auto grads = tape.backpropagate(y);
  REQUIRE(grads.count(unused.id()) == 1);
  CHECK(grads.at(unused.id()).data()[0] == 0.0);
  CHECK(grads.at(unused.id()).data()[1] == 0.0);
}

TEST_CASE("backpropagate error paths") {
  Tape<double> tape;
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = tape.scale(x, 2.0);
  CHECK_THROWS_WITH_AS(tape.backpropagate(y),
                       "backpropagate: loss must be a scalar",
                       std::runtime_error);
  auto loss = tape.sum(y);
  (void)tape.backpropagate(loss);
  CHECK_THROWS_WITH_AS(tape.backpropagate(loss),
                       "backpropagate: tape already consumed",
                       std::runtime_error);
}

TEST_CASE("two-layer perceptron gradients match finite differences") {
  // 17 parameters: W1 (2x3) + b1 (3) + W2 (3x2) + b2 (2).
  Rng rng(5);
  std::vector<Tensor<double>> params = {
      randn_t({2, 3}, rng), randn_t({3}, rng), randn_t({3, 2}, rng),
      randn_t({2}, rng)};
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  REQUIRE(total == 17);
  auto x = Tensor<double>::from({1, 2}, {0.3, -0.7});
  GraphBuilder<double> f = [x](Tape<double>& t,
                               const std::vector<Tensor<double>>& p) {
    auto h = t.gelu(t.add_bias(t.matmul(x, p[0]), p[1]));
    auto out = t.add_bias(t.matmul(h, p[2]), p[3]);
    return t.mean(t.mul(out, out));
  };
  CHECK(check_gradients(f, params) < 1e-4);
}

TEST_CASE("check_gradients: quadratic bowl is exact to rounding") {
  auto theta = Tensor<double>::from({2}, {1.0, 2.0}, true);
  GraphBuilder<double> f = [](Tape<double>& t,
                              const std::vector<Tensor<double>>& p) {
    return t.sum(t.mul(p[0], p[0]));
  };
  CHECK(check_gradients(f, {theta}) < 1e-9);
}

TEST_CASE("check_gradients: masked softmax attention block, 3 queries x 4 keys") {
  Rng rng(6);
  MaskMatrix mask = MaskMatrix::all_true(3, 4);
  mask.set(0, 2, false);
  mask.set(1, 0, false);
  mask.set(2, 3, false);
  std::vector<Tensor<double>> params = {randn_t({3, 4}, rng, true, 0.8),
                                        randn_t({4, 2}, rng, true, 0.8)};
  GraphBuilder<double> f = [mask](Tape<double>& t,
                                  const std::vector<Tensor<double>>& p) {
    auto attnw = t.masked_softmax(p[0], mask);
    auto out = t.matmul(attnw, p[1]);
    return t.mean(t.mul(out, out));
  };
  CHECK(check_gradients(f, params) < 1e-4);
}

TEST_CASE("check_gradients rejects non-deterministic functions") {
  int calls = 0;
  GraphBuilder<double> f = [&calls](Tape<double>& t,
                                    const std::vector<Tensor<double>>& p) {
    ++calls;
    return t.sum(t.scale(p[0], 1.0 + 1e-9 * calls));
  };
  auto theta = Tensor<double>::from({1}, {1.0}, true);
  CHECK_THROWS_WITH_AS(check_gradients(f, {theta}),
                       "check_gradients: function is non-deterministic",
                       std::runtime_error);
}

TEST_CASE("every primitive passes a single-op gradient check below 1e-6") {
  Rng rng(7);
  auto scalarize = [](Tape<double>& t, const Tensor<double>& x) {
    return t.mean(t.mul(x, x));
  };

  SUBCASE("matmul") {
    std::vector<Tensor<double>> p = {randn_t({3, 4}, rng), randn_t({4, 2}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      return scalarize(t, t.matmul(q[0], q[1]));
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("add sub mul add_bias scale") {
    std::vector<Tensor<double>> p = {randn_t({3, 4}, rng), randn_t({3, 4}, rng),
                                     randn_t({4}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      auto a = t.add(q[0], q[1]);
      auto b = t.sub(a, q[1]);
      auto c = t.mul(b, q[0]);
      auto d = t.add_bias(c, q[2]);
      return scalarize(t, t.scale(d, 0.7));
    };
    CHECK(check_gradients(f, p, 1e-4) < 1e-6);
  }
  SUBCASE("exp log sqrt gelu") {
    // log/sqrt inputs kept away from zero.
    std::vector<double> vals = {0.4, 1.2, 2.5, 0.8, 3.0, 1.7};
    std::vector<Tensor<double>> p = {Tensor<double>::from({2, 3}, vals, true)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      auto a = t.log(q[0]);
      auto b = t.sqrt(q[0]);
      auto c = t.exp(t.scale(q[0], -0.5));
      auto d = t.gelu(q[0]);
      return t.mean(t.add(t.add(a, b), t.add(c, d)));
    };
    CHECK(check_gradients(f, p, 1e-4) < 1e-6);
  }
  SUBCASE("masked_softmax") {
    MaskMatrix mask = MaskMatrix::all_true(2, 5);
    mask.set(0, 1, false);
    mask.set(1, 3, false);
    mask.set(1, 4, false);
    std::vector<Tensor<double>> p = {randn_t({2, 5}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      auto y = t.masked_softmax(q[0], mask);
      return scalarize(t, y);
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("layer_norm") {
    std::vector<Tensor<double>> p = {randn_t({3, 6}, rng), randn_t({6}, rng),
                                     randn_t({6}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      return scalarize(t, t.layer_norm(q[0], q[1], q[2]));
    };
    CHECK(check_gradients(f, p, 1e-4) < 1e-6);
  }
  SUBCASE("im2col") {
    std::vector<Tensor<double>> p = {randn_t({4, 4, 2}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      return scalarize(t, t.im2col(q[0], 4, 4, 2, 3, 3, 2, 1));
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("reductions reshape transpose") {
    std::vector<Tensor<double>> p = {randn_t({3, 4}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      auto a = t.transpose(t.reshape(q[0], {4, 3}));
      auto b = t.sum(a);
      auto c = t.mean(q[0]);
      return t.add(b, c);
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("concat and slices") {
    std::vector<Tensor<double>> p = {randn_t({2, 3}, rng), randn_t({2, 3}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      auto rows = t.concat_rows({q[0], q[1]});
      auto cols = t.concat_cols({q[0], q[1]});
      auto a = t.slice_rows(rows, 1, 3);
      auto b = t.slice_cols(cols, 2, 5);
      return t.add(scalarize(t, a), scalarize(t, b));
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("embedding") {
    std::vector<Tensor<double>> p = {randn_t({5, 3}, rng)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      return scalarize(t, t.embedding(q[0], {4, 0, 2, 0}));
    };
    CHECK(check_gradients(f, p) < 1e-6);
  }
  SUBCASE("l1 and mse losses") {
    // l1 inputs kept away from the kink at zero residual.
    auto target = Tensor<double>::from({2, 2}, {0.0, 0.0, 0.0, 0.0});
    std::vector<Tensor<double>> p = {
        Tensor<double>::from({2, 2}, {0.5, -0.8, 1.2, -0.4}, true)};
    GraphBuilder<double> f = [&](Tape<double>& t,
                                 const std::vector<Tensor<double>>& q) {
      return t.add(t.l1_loss(q[0], target), t.mse_loss(q[0], target));
    };
    CHECK(check_gradients(f, p, 1e-4) < 1e-6);
  }
}

TEST_CASE("layer normalization statistics before the affine rescale") {
  Rng rng(8);
  const int rows = 6, cols = 32;
  auto x = randn_t({rows, cols}, rng, false, 3.0);
  Tape<double> tape;
  auto y = tape.layer_norm(x, Tensor<double>::full({cols}, 1.0),
                           Tensor<double>::zeros({cols}));
  for (int r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += y.data()[r * cols + c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = y.data()[r * cols + c] - mean;
      var += d * d;
    }
    var /= cols;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("identical inputs produce bitwise-identical outputs") {
  Rng rng(9);
  auto a = randn_t({13, 7}, rng, false);
  auto b = randn_t({7, 11}, rng, false);
  Tape<double> t1, t2;
  auto c1 = t1.matmul(a, b);
  auto c2 = t2.matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.numel() * sizeof(double)) == 0);
  auto g1 = t1.gelu(c1);
  auto g2 = t2.gelu(c2);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.numel() * sizeof(double)) == 0);
}

TEST_CASE("float and double instantiations both work") {
  Tape<float> tf;
  auto a = Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto b = tf.matmul(a, a);
  CHECK(b.data()[0] == doctest::Approx(7.f));
  CHECK(b.data()[3] == doctest::Approx(22.f));
}

TEST_CASE("primitive registry rejects unknown names") {
  CHECK(Tape<double>::is_registered("matmul"));
  CHECK(Tape<double>::is_registered("masked_softmax"));
  CHECK_FALSE(Tape<double>::is_registered("not_a_primitive"));
}
