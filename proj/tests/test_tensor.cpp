#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rng.hpp"
#include "tensor.hpp"

using namespace weakmap;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  Rng rng(seed);
  Tensor t(shape, requires_grad);
  for (int i = 0; i < t.size(); ++i) t.v(i) = rng.uniform(lo, hi);
  return t;
}

// Direct sliding-window reference, written independently of conv2d_fwd.
std::vector<double> oracle_conv2d(const std::vector<double>& x, int H, int W, int Cin,
                                  const std::vector<double>& k, int Kh, int Kw, int Cout,
                                  const std::vector<double>* bias, int stride, int padding,
                                  int& Ho, int& Wo) {
  Ho = (H + 2 * padding - Kh) / stride + 1;
  Wo = (W + 2 * padding - Kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(Ho * Wo * Cout), 0.0);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int co = 0; co < Cout; ++co) {
        double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
        for (int ky = 0; ky < Kh; ++ky)
          for (int kx = 0; kx < Kw; ++kx)
            for (int ci = 0; ci < Cin; ++ci) {
              int iy = oy * stride - padding + ky;
              int ix = ox * stride - padding + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += x[static_cast<size_t>((iy * W + ix) * Cin + ci)] *
                     k[static_cast<size_t>(((ky * Kw + kx) * Cin + ci) * Cout + co)];
            }
        y[static_cast<size_t>((oy * Wo + ox) * Cout + co)] = acc;
      }
  return y;
}

// Window-mean reference for average pooling.
std::vector<double> oracle_avg_pool(const std::vector<double>& x, int H, int W, int C,
                                    int window, int stride, int& Ho, int& Wo) {
  Ho = (H - window) / stride + 1;
  Wo = (W - window) / stride + 1;
  std::vector<double> y(static_cast<size_t>(Ho * Wo * C), 0.0);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int wy = 0; wy < window; ++wy)
          for (int wx = 0; wx < window; ++wx)
            acc += x[static_cast<size_t>(((oy * stride + wy) * W + ox * stride + wx) * C + c)];
        y[static_cast<size_t>((oy * Wo + ox) * C + c)] = acc / (window * window);
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d: 1x1 kernel with single weight is a scalar multiply") {
  Tape tape;
  Tensor x = Tensor::full({3, 3, 1}, 3.0);
  Tensor k = Tensor::from({1, 1, 1, 1}, {2.0});
  Tensor y = conv2d(tape, x, k, nullptr, 1, 0);
  REQUIRE(y.shape() == Shape{3, 3, 1});
  for (int i = 0; i < y.size(); ++i) CHECK(y.v(i) == 6.0);
}

TEST_CASE("conv2d: zero kernels with bias give the bias per channel") {
  Tape tape;
  Tensor x = random_tensor({4, 5, 3}, 11);
  Tensor k(Shape{3, 3, 3, 2});
  Tensor b = Tensor::from({2}, {0.25, -1.5});
  Tensor y = conv2d(tape, x, k, &b, 1, 1);
  REQUIRE(y.shape() == Shape{4, 5, 2});
  for (int i = 0; i < 4 * 5; ++i) {
    CHECK(y.v(i * 2 + 0) == 0.25);
    CHECK(y.v(i * 2 + 1) == -1.5);
  }
}

TEST_CASE("conv2d: 3x3 mean kernel over a constant region keeps the constant") {
  Tape tape;
  Tensor x = Tensor::full({6, 6, 1}, 5.0);
  Tensor k = Tensor::full({3, 3, 1, 1}, 1.0 / 9.0);
  Tensor y = conv2d(tape, x, k, nullptr, 1, 0);
  REQUIRE(y.shape() == Shape{4, 4, 1});
  for (int i = 0; i < y.size(); ++i) CHECK(y.v(i) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("conv2d matches the sliding-window oracle on random inputs") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Tensor x = random_tensor({7, 6, 3}, seed);
    Tensor k = random_tensor({3, 3, 3, 4}, seed + 100);
    Tensor b = random_tensor({4}, seed + 200);
    for (int stride : {1, 2}) {
      for (int padding : {0, 1}) {
        Tape tape;
        Tensor y = conv2d(tape, x, k, &b, stride, padding);
        int Ho, Wo;
        auto ref = oracle_conv2d(x.values(), 7, 6, 3, k.values(), 3, 3, 4, &b.values(),
                                 stride, padding, Ho, Wo);
        REQUIRE(y.shape() == Shape{Ho, Wo, 4});
        for (int i = 0; i < y.size(); ++i)
          CHECK(y.v(i) == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch with a dimension report") {
  Tape tape;
  Tensor x = random_tensor({4, 4, 3}, 5);
  Tensor k = random_tensor({3, 3, 2, 4}, 6);
  CHECK_THROWS_WITH_AS(conv2d(tape, x, k, nullptr, 1, 1),
                       doctest::Contains("channels"), WmError);
}

TEST_CASE("avg_pool2d examples") {
  Tape tape;
  Tensor x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
  Tensor y = avg_pool2d(tape, x, 2, 2);
  REQUIRE(y.shape() == Shape{1, 1, 1});
  CHECK(y.v(0) == 2.5);

  Tensor c = Tensor::full({5, 5, 2}, 3.25);
  Tensor yc = avg_pool2d(tape, c, 2, 1);
  for (int i = 0; i < yc.size(); ++i) CHECK(yc.v(i) == doctest::Approx(3.25).epsilon(1e-15));

  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = i + 1;
  Tensor r = Tensor::from({4, 4, 1}, ramp);
  int Ho, Wo;
  auto ref = oracle_avg_pool(r.values(), 4, 4, 1, 2, 2, Ho, Wo);
  Tensor yr = avg_pool2d(tape, r, 2, 2);
  CHECK(yr.v(0) == 3.5);
  CHECK(yr.v(1) == 5.5);
  CHECK(yr.v(2) == 11.5);
  CHECK(yr.v(3) == 13.5);
  for (int i = 0; i < 4; ++i) CHECK(yr.v(i) == ref[static_cast<size_t>(i)]);

  Tensor small = Tensor::full({2, 2, 1}, 1.0);
  CHECK_THROWS_AS(avg_pool2d(tape, small, 3, 1), WmError);
}

TEST_CASE("global_avg_pool examples and linearity") {
  Tape tape;
  Tensor x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
  CHECK(global_avg_pool(tape, x).v(0) == 2.5);

  Tensor z(Shape{3, 4, 2});
  Tensor yz = global_avg_pool(tape, z);
  CHECK(yz.v(0) == 0.0);
  CHECK(yz.v(1) == 0.0);

  Tensor pm(Shape{2, 3, 2});
  for (int i = 0; i < 6; ++i) {
    pm.v(i * 2 + 0) = 7.0;
    pm.v(i * 2 + 1) = -7.0;
  }
  Tensor ypm = global_avg_pool(tape, pm);
  CHECK(ypm.v(0) == 7.0);
  CHECK(ypm.v(1) == -7.0);

  // pool(aX + bY) == a pool(X) + b pool(Y)
  Tensor X = random_tensor({5, 4, 3}, 21), Y = random_tensor({5, 4, 3}, 22);
  const double a = 1.7, b = -0.3;
  Tensor mix(Shape{5, 4, 3});
  for (int i = 0; i < X.size(); ++i) mix.v(i) = a * X.v(i) + b * Y.v(i);
  Tensor pmix = global_avg_pool(tape, mix);
  Tensor pX = global_avg_pool(tape, X), pY = global_avg_pool(tape, Y);
  for (int c = 0; c < 3; ++c)
    CHECK(std::abs(pmix.v(c) - (a * pX.v(c) + b * pY.v(c))) < 1e-12);
}

TEST_CASE("dense examples") {
  Tape tape;
  Tensor x = Tensor::from({3}, {1.5, -2.0, 0.5});
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y = dense(tape, x, eye, nullptr);
  for (int i = 0; i < 3; ++i) CHECK(y.v(i) == x.v(i));

  Tensor zero(Shape{2, 3});
  Tensor yz = dense(tape, x, zero, nullptr);
  CHECK(yz.v(0) == 0.0);
  CHECK(yz.v(1) == 0.0);

  Tensor ones = Tensor::from({1, 2}, {1, 1});
  Tensor x2 = Tensor::from({2}, {1, 1});
  CHECK(dense(tape, x2, ones, nullptr).v(0) == 2.0);

  Tensor bad = Tensor::from({2, 4}, std::vector<double>(8, 1.0));
  CHECK_THROWS_AS(dense(tape, x2, bad, nullptr), WmError);
}

TEST_CASE("activation examples") {
  Tape tape;
  Tensor x = Tensor::from({3}, {0.0, -3.0, 3.0});
  Tensor s = sigmoid(tape, x);
  CHECK(s.v(0) == 0.5);
  CHECK(s.v(2) == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))).epsilon(1e-15));
  Tensor r = relu(tape, x);
  CHECK(r.v(1) == 0.0);
  CHECK(r.v(2) == 3.0);

  Tensor two = Tensor::from({1}, {2.0});
  CHECK(sigmoid(tape, two).v(0) == doctest::Approx(0.8807970779778823).epsilon(1e-15));

  // strictly inside (0,1) for finite inputs
  Tensor wide = Tensor::from({4}, {-745.0, -50.0, 50.0, 745.0});
  Tensor sw = sigmoid(tape, wide);
  for (int i = 0; i < 4; ++i) {
    CHECK(sw.v(i) > 0.0);
    CHECK(sw.v(i) < 1.0);
  }
}

TEST_CASE("elementwise ops and channel broadcast") {
  Tape tape;
  Tensor a = random_tensor({3, 2, 4}, 31);
  Tensor b = random_tensor({3, 2, 4}, 32);
  Tensor m = elementwise_mul(tape, a, b);
  for (int i = 0; i < a.size(); ++i) CHECK(m.v(i) == a.v(i) * b.v(i));

  Tensor gate = Tensor::from({4}, {0.5, 1.0, 2.0, -1.0});
  Tensor bc = elementwise_mul(tape, a, gate);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 4; ++c) CHECK(bc.v(i * 4 + c) == a.v(i * 4 + c) * gate.v(c));

  Tensor s = scalar_mul(tape, a, -2.5);
  for (int i = 0; i < a.size(); ++i) CHECK(s.v(i) == a.v(i) * -2.5);

  Tensor sum2 = add(tape, a, b);
  for (int i = 0; i < a.size(); ++i) CHECK(sum2.v(i) == a.v(i) + b.v(i));

  Tensor wrong = random_tensor({2, 2, 4}, 33);
  CHECK_THROWS_AS(add(tape, a, wrong), WmError);
  CHECK_THROWS_AS(elementwise_mul(tape, a, wrong), WmError);
}

TEST_CASE("concat_channels followed by slicing recovers both operands") {
  Tape tape;
  Tensor a = random_tensor({4, 3, 2}, 41);
  Tensor b = random_tensor({4, 3, 5}, 42);
  Tensor cat = concat_channels(tape, a, b);
  REQUIRE(cat.shape() == Shape{4, 3, 7});
  Tensor sa = slice_channels(tape, cat, 0, 2);
  Tensor sb = slice_channels(tape, cat, 2, 7);
  for (int i = 0; i < a.size(); ++i) CHECK(sa.v(i) == a.v(i));
  for (int i = 0; i < b.size(); ++i) CHECK(sb.v(i) == b.v(i));
}

TEST_CASE("batchnorm examples") {
  Tape tape;
  // zero-mean unit-variance channel, gamma=1 beta=0: output ~ input
  Tensor x(Shape{1, 4, 1});
  x.v(0) = -1.0, x.v(1) = 1.0, x.v(2) = -1.0, x.v(3) = 1.0;
  Tensor gamma = Tensor::full({1}, 1.0), beta(Shape{1});
  RunningStats stats;
  stats.init(1);
  Tensor y = batchnorm(tape, x, gamma, beta, true, &stats);
  for (int i = 0; i < 4; ++i) CHECK(y.v(i) == doctest::Approx(x.v(i)).epsilon(1e-4));

  // constant channel: variance 0, epsilon-dominated, output ~ beta
  Tensor c = Tensor::full({2, 2, 1}, 9.0);
  Tensor beta2 = Tensor::full({1}, 0.75);
  Tensor yc = batchnorm(tape, c, gamma, beta2, true, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(yc.v(i) == doctest::Approx(0.75).epsilon(1e-12));

  // gamma = 0: output == beta everywhere
  Tensor g0(Shape{1});
  Tensor r = random_tensor({3, 3, 1}, 51);
  Tensor yr = batchnorm(tape, r, g0, beta2, true, nullptr);
  for (int i = 0; i < yr.size(); ++i) CHECK(yr.v(i) == 0.75);

  // train mode needs at least 2 spatial positions
  Tensor one = Tensor::full({1, 1, 1}, 2.0);
  CHECK_THROWS_AS(batchnorm(tape, one, gamma, beta, true, nullptr), WmError);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  RunningStats stats;
  stats.init(1);
  stats.mean[0] = 2.0;
  stats.var[0] = 4.0;
  Tape tape;
  Tensor x = Tensor::from({1, 2, 1}, {2.0, 6.0});
  Tensor gamma = Tensor::full({1}, 1.0), beta(Shape{1});
  Tensor y = batchnorm(tape, x, gamma, beta, false, &stats);
  CHECK(y.v(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y.v(1) == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("backward: sigmoid at 0 has slope 1/4") {
  Tensor x = Tensor::from({1}, {0.0}, true);
  Tape tape;
  Tensor y = sigmoid(tape, x);
  tape.backward(y);
  CHECK(x.g(0) == 0.25);
}

TEST_CASE("backward: d sum(a*b) / da == b") {
  Tensor a = random_tensor({2, 3, 2}, 61, -1, 1, true);
  Tensor b = random_tensor({2, 3, 2}, 62);
  Tape tape;
  Tensor loss = sum(tape, elementwise_mul(tape, a, b));
  tape.backward(loss);
  for (int i = 0; i < a.size(); ++i) CHECK(a.g(i) == b.v(i));
}

TEST_CASE("backward: rejects non-scalar loss") {
  Tensor a = random_tensor({2, 2}, 63, -1, 1, true);
  Tape tape;
  Tensor y = relu(tape, a);
  CHECK_THROWS_AS(tape.backward(y), WmError);
}

TEST_CASE("backward: repeated calls accumulate") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tape tape;
  Tensor y = scalar_mul(tape, x, 2.0);
  tape.backward(y);
  CHECK(x.g(0) == 2.0);
  tape.backward(y);
  CHECK(x.g(0) == 4.0);
}

TEST_CASE("backward: nodes off the loss path keep zero grads") {
  Tensor x = random_tensor({4}, 64, -1, 1, true);
  Tensor y = random_tensor({4}, 65, -1, 1, true);
  Tape tape;
  Tensor used = elementwise_mul(tape, x, y);
  Tensor unused = relu(tape, x);
  Tensor loss = sum(tape, used);
  tape.backward(loss);
  CHECK(unused.requires_grad());
  for (int i = 0; i < unused.size(); ++i) CHECK(unused.g(i) == 0.0);
  for (int i = 0; i < x.size(); ++i) CHECK(x.g(i) == y.v(i));
}

TEST_CASE("tape replay reproduces all node values bit-identically") {
  Tensor x = random_tensor({4, 4, 2}, 71, -1, 1, true);
  Tensor k = random_tensor({3, 3, 2, 3}, 72, -1, 1, true);
  Tape tape;
  Tensor h = conv2d(tape, x, k, nullptr, 1, 1);
  h = relu(tape, h);
  Tensor g = global_avg_pool(tape, h);
  Tensor loss = sum(tape, sigmoid(tape, g));
  std::vector<std::vector<double>> before;
  for (size_t i = 0; i < tape.node_count(); ++i)
    before.push_back(tape.node(static_cast<int>(i)).values());
  tape.replay();
  for (size_t i = 0; i < tape.node_count(); ++i) {
    const auto& after = tape.node(static_cast<int>(i)).values();
    REQUIRE(after.size() == before[i].size());
    for (size_t j = 0; j < after.size(); ++j) CHECK(after[j] == before[i][j]);
  }
  CHECK(loss.size() == 1);
}

TEST_CASE("forward pass is deterministic") {
  auto run = [](uint64_t seed) {
    Tensor x = random_tensor({6, 6, 2}, seed);
    Tensor k = random_tensor({3, 3, 2, 4}, seed + 1);
    Tape tape;
    Tensor y = global_avg_pool(tape, relu(tape, conv2d(tape, x, k, nullptr, 1, 1)));
    return y.values();
  };
  auto a = run(99), b = run(99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("grad_check: sum of squares") {
  for (uint64_t seed : {7u, 8u, 9u}) {
    Tensor x = random_tensor({3, 4}, seed, -2.0, 2.0);
    double err = grad_check(
        [](Tape& t, const Tensor& in) { return sum(t, elementwise_mul(t, in, in)); }, x, 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check: conv -> relu -> sum matches finite differences") {
  Tensor k = random_tensor({3, 3, 2, 3}, 81);
  Tensor x = random_tensor({5, 5, 2}, 82, 0.1, 1.0);
  double margin = 0.0;
  double err = grad_check(
      [&k](Tape& t, const Tensor& in) { return sum(t, relu(t, conv2d(t, in, k, nullptr, 1, 1))); },
      x, 1e-5, &margin);
  if (margin > 1e-3) CHECK(err < 1e-4);

  // and through the kernel side
  double err_k = grad_check(
      [&x](Tape& t, const Tensor& kk) { return sum(t, relu(t, conv2d(t, x, kk, nullptr, 1, 1))); },
      k, 1e-5, &margin);
  if (margin > 1e-3) CHECK(err_k < 1e-4);
}

TEST_CASE("grad_check: every primitive operator at random points") {
  for (uint64_t seed : {101u, 202u, 303u}) {
    Tensor w = random_tensor({4, 6}, seed + 1);
    Tensor b1 = random_tensor({4}, seed + 2);
    Tensor x1 = random_tensor({6}, seed + 3);
    CHECK(grad_check([&](Tape& t, const Tensor& in) { return sum(t, dense(t, in, w, &b1)); },
                     x1, 1e-5) < 1e-4);
    CHECK(grad_check([&](Tape& t, const Tensor& ww) { return sum(t, dense(t, x1, ww, &b1)); },
                     w, 1e-5) < 1e-4);

    Tensor x3 = random_tensor({4, 4, 3}, seed + 4);
    CHECK(grad_check([](Tape& t, const Tensor& in) { return sum(t, avg_pool2d(t, in, 2, 2)); },
                     x3, 1e-5) < 1e-4);
    CHECK(grad_check([](Tape& t, const Tensor& in) { return sum(t, global_avg_pool(t, in)); },
                     x3, 1e-5) < 1e-4);
    CHECK(grad_check([](Tape& t, const Tensor& in) { return sum(t, sigmoid(t, in)); },
                     x3, 1e-5) < 1e-4);

    Tensor gamma = random_tensor({3}, seed + 5, 0.5, 1.5);
    Tensor beta = random_tensor({3}, seed + 6);
    // weighted sum: a plain sum of a normalized channel is constant by
    // construction and would make the check degenerate
    Tensor wsum = random_tensor({4, 4, 3}, seed + 55);
    CHECK(grad_check(
              [&](Tape& t, const Tensor& in) {
                return sum(t, elementwise_mul(t, batchnorm(t, in, gamma, beta, true, nullptr), wsum));
              },
              x3, 1e-5) < 1e-4);
    CHECK(grad_check(
              [&](Tape& t, const Tensor& g) {
                return sum(t, elementwise_mul(t, batchnorm(t, x3, g, beta, true, nullptr), wsum));
              },
              gamma, 1e-5) < 1e-4);

    Tensor other = random_tensor({4, 4, 3}, seed + 7);
    CHECK(grad_check(
              [&](Tape& t, const Tensor& in) {
                return sum(t, elementwise_mul(t, concat_channels(t, in, other),
                                              Tensor::from({6}, {1, -2, 0.5, 1.5, -1, 2})));
              },
              x3, 1e-5) < 1e-4);
  }
}
