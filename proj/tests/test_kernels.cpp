#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eena/kernels.hpp"
#include "oracles.hpp"

using namespace eena;

namespace {

template <class Real>
Tensor<Real> random_tensor(int n, int h, int w, int c, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<Real> t(n, h, w, c);
  fill_uniform(t, rng, lo, hi);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d scalar case is plain multiplication") {
  Tensor<double> x(1, 1, 1, 1);
  x.data[0] = 3.0;
  ConvParams<double> p(1, 1, 1, 1);
  p.w[0] = 2.0;
  Tensor<double> y = conv2d_forward(x, p);
  CHECK(y.data[0] == doctest::Approx(6.0));
}

TEST_CASE("conv2d with the center-tap identity kernel reproduces the input") {
  Rng rng(7);
  Tensor<double> x = random_tensor<double>(2, 5, 4, 3, rng);
  ConvParams<double> p(3, 3, 3, 3);
  for (int a = 0; a < 3; ++a) p.at(1, 1, a, a) = 1.0;
  Tensor<double> y = conv2d_forward(x, p);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d matches the naive nested-loop oracle") {
  Rng rng(11);
  Tensor<float> x = random_tensor<float>(1, 4, 4, 2, rng);
  ConvParams<float> p(3, 3, 2, 3);
  fill_normal(p.w, rng, 0.0, 0.5);
  Tensor<float> y = conv2d_forward(x, p);
  Tensor<float> ref = oracles::conv2d_naive(x, 3, 3, 2, 3, p.w);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::abs(y.data[i] - ref.data[i]) <= 1e-6f);
    // identical summation order means bit-for-bit agreement
    CHECK(y.data[i] == ref.data[i]);
  }
}

TEST_CASE("conv2d rejects channel mismatches with both shapes named") {
  Tensor<double> x(1, 4, 4, 2);
  ConvParams<double> p(3, 3, 3, 4);
  CHECK_THROWS_WITH_AS(conv2d_forward(x, p),
                       doctest::Contains("(1,4,4,2)"), shape_error);
}

TEST_CASE("conv2d backward: zero upstream gradient gives zero gradients") {
  Rng rng(3);
  Tensor<double> x = random_tensor<double>(1, 3, 3, 2, rng);
  ConvParams<double> p(3, 3, 2, 2);
  fill_normal(p.w, rng, 0.0, 0.5);
  Tensor<double> go(1, 3, 3, 2);
  ConvGrads<double> g = conv2d_backward(x, p, go);
  for (double v : g.grad_x.data) CHECK(v == 0.0);
  for (double v : g.grad_w) CHECK(v == 0.0);
}

TEST_CASE("conv2d backward: 1x1 scalar chain rule") {
  Rng rng(5);
  Tensor<double> x = random_tensor<double>(2, 3, 3, 1, rng);
  ConvParams<double> p(1, 1, 1, 1);
  p.w[0] = 0.7;
  Tensor<double> go = random_tensor<double>(2, 3, 3, 1, rng);
  ConvGrads<double> g = conv2d_backward(x, p, go);
  CHECK(g.grad_w[0] == doctest::Approx(dot(x, go)));
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> x = random_tensor<double>(1, 4, 3, 2, rng);
    ConvParams<double> p(3, 3, 2, 2);
    fill_normal(p.w, rng, 0.0, 0.5);
    Tensor<double> go = random_tensor<double>(1, 4, 3, 2, rng);
    ConvGrads<double> g = conv2d_backward(x, p, go);

    auto eval = [&] { return dot(conv2d_forward(x, p), go); };
    const auto fd_w = oracles::finite_difference(p.w, eval);
    CHECK(oracles::max_relative_error(g.grad_w, fd_w) <= 1e-5);
    const auto fd_x = oracles::finite_difference(x.data, eval);
    CHECK(oracles::max_relative_error(g.grad_x.data, fd_x) <= 1e-5);
  }
}

TEST_CASE("batchnorm identity calibration is exact in inference mode") {
  Rng rng(17);
  Tensor<double> x = random_tensor<double>(2, 3, 3, 4, rng);
  BnParams<double> p(4);
  p.calibrate_identity();
  auto [y, stats] = batchnorm_forward(x, p, RunMode::Infer);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("batchnorm of a constant-zero channel in train mode stays zero") {
  Tensor<double> x(4, 2, 2, 1);
  BnParams<double> p(1);
  auto [y, stats] = batchnorm_forward(x, p, RunMode::Train);
  for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("batchnorm train mode re-centers to beta and rescales to |gamma|") {
  Rng rng(19);
  Tensor<double> x = random_tensor<double>(8, 5, 5, 3, rng, -2.0, 3.0);
  BnParams<double> p(3);
  p.gamma = {1.5, 0.7, 2.0};
  p.beta = {0.3, -0.4, 1.0};
  auto [y, stats] = batchnorm_forward(x, p, RunMode::Train);
  const std::size_t m = y.size() / 3;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < y.size(); i += 3) mean += y.data[i + ch];
    mean /= m;
    for (std::size_t i = 0; i < y.size(); i += 3) {
      const double d = y.data[i + ch] - mean;
      var += d * d;
    }
    var /= m;
    CHECK(mean == doctest::Approx(p.beta[ch]).epsilon(1e-4));
    CHECK(std::sqrt(var) == doctest::Approx(std::abs(p.gamma[ch])).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm updates running statistics with momentum 0.9") {
  Tensor<double> x(2, 1, 1, 1);
  x.data = {1.0, 3.0};  // mean 2, var 1
  BnParams<double> p(1);
  p.running_mean[0] = 10.0;
  p.running_var[0] = 4.0;
  batchnorm_forward(x, p, RunMode::Train);
  CHECK(p.running_mean[0] == doctest::Approx(0.9 * 10.0 + 0.1 * 2.0));
  CHECK(p.running_var[0] == doctest::Approx(0.9 * 4.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm backward: zero upstream gradient and affine chain rule") {
  Rng rng(23);
  Tensor<double> x = random_tensor<double>(3, 2, 2, 2, rng);
  BnParams<double> p(2);
  auto [y, stats] = batchnorm_forward(x, p, RunMode::Train);

  Tensor<double> zeros(3, 2, 2, 2);
  BnGrads<double> gz = batchnorm_backward(x, p, stats, zeros);
  for (double v : gz.grad_x.data) CHECK(v == 0.0);
  for (double v : gz.grad_gamma) CHECK(v == 0.0);

  Tensor<double> go = random_tensor<double>(3, 2, 2, 2, rng);
  BnGrads<double> g = batchnorm_backward(x, p, stats, go);
  // gamma = 1, beta = 0: dL/dgamma = sum(go * xhat) and y == xhat
  for (int ch = 0; ch < 2; ++ch) {
    double expected = 0.0;
    for (std::size_t i = 0; i < x.size(); i += 2)
      expected += go.data[i + ch] * y.data[i + ch];
    CHECK(g.grad_gamma[ch] == doctest::Approx(expected));
  }
}

TEST_CASE("batchnorm backward matches finite differences") {
  Rng rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> x = random_tensor<double>(4, 2, 2, 2, rng);
    Tensor<double> go = random_tensor<double>(4, 2, 2, 2, rng);
    BnParams<double> p(2);
    fill_normal(p.gamma, rng, 1.0, 0.2);
    fill_normal(p.beta, rng, 0.0, 0.2);
    auto [y0, stats] = batchnorm_forward(x, p, RunMode::Train);
    BnGrads<double> g = batchnorm_backward(x, p, stats, go);

    auto eval = [&] {
      BnParams<double> q = p;  // keep running stats fixed during probing
      auto [y, s] = batchnorm_forward(x, q, RunMode::Train);
      return dot(y, go);
    };
    const auto fd_x = oracles::finite_difference(x.data, eval);
    CHECK(oracles::max_relative_error(g.grad_x.data, fd_x) <= 1e-5);
    const auto fd_gamma = oracles::finite_difference(p.gamma, eval);
    CHECK(oracles::max_relative_error(g.grad_gamma, fd_gamma) <= 1e-5);
    const auto fd_beta = oracles::finite_difference(p.beta, eval);
    CHECK(oracles::max_relative_error(g.grad_beta, fd_beta) <= 1e-5);
  }
}

TEST_CASE("relu basics, idempotence, and the identity-kernel property") {
  Tensor<double> x(1, 1, 1, 3);
  x.data = {-1.0, 0.0, 2.0};
  Tensor<double> y = relu(x);
  CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0});

  Rng rng(31);
  Tensor<double> r = random_tensor<double>(2, 3, 3, 2, rng);
  Tensor<double> once = relu(r);
  Tensor<double> twice = relu(once);
  CHECK(once.data == twice.data);

  // relu(I * relu(x)) == relu(x) with the center-tap identity kernel
  ConvParams<double> ident(3, 3, 2, 2);
  for (int a = 0; a < 2; ++a) ident.at(1, 1, a, a) = 1.0;
  Tensor<double> composed = relu(conv2d_forward(once, ident));
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(composed.data[i] == doctest::Approx(once.data[i]));
}

TEST_CASE("relu backward masks non-positive inputs, ties pass zero") {
  Tensor<double> x(1, 1, 1, 3);
  x.data = {-1.0, 0.0, 2.0};
  Tensor<double> go(1, 1, 1, 3);
  go.data = {5.0, 5.0, 5.0};
  Tensor<double> g = relu_backward(x, go);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 5.0});
}

TEST_CASE("maxpool2 single window and constant-input tie rule") {
  Tensor<double> x(1, 2, 2, 1);
  x.data = {1.0, 2.0, 3.0, 4.0};
  PoolResult<double> r = maxpool2_forward(x);
  CHECK(r.y.data[0] == 4.0);

  Tensor<double> c(1, 4, 4, 1);
  std::fill(c.data.begin(), c.data.end(), 2.5);
  PoolResult<double> rc = maxpool2_forward(c);
  for (double v : rc.y.data) CHECK(v == 2.5);
  Tensor<double> go(1, 2, 2, 1);
  std::fill(go.data.begin(), go.data.end(), 1.0);
  Tensor<double> gx = maxpool2_backward(c.shape, rc.argmax, go);
  // gradient lands on the first element of each 2x2 window
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx)
      CHECK(gx.at(0, y, xx, 0) == ((y % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0));
}

TEST_CASE("maxpool2 equals a window-scan oracle on random 8x8") {
  Rng rng(37);
  Tensor<double> x = random_tensor<double>(2, 8, 8, 3, rng);
  PoolResult<double> r = maxpool2_forward(x);
  for (int in = 0; in < 2; ++in)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox)
        for (int ch = 0; ch < 3; ++ch) {
          double best = -1e300;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              best = std::max(best, x.at(in, 2 * oy + dy, 2 * ox + dx, ch));
          CHECK(r.y.at(in, oy, ox, ch) == best);
        }
}

TEST_CASE("maxpool2 pads odd extents on the high edge") {
  Tensor<double> x(1, 3, 3, 1);
  for (int i = 0; i < 9; ++i) x.data[i] = -double(i) - 1.0;  // all negative
  PoolResult<double> r = maxpool2_forward(x);
  CHECK(r.y.h() == 2);
  CHECK(r.y.w() == 2);
  CHECK(r.y.at(0, 1, 1, 0) == x.at(0, 2, 2, 0));  // lone corner survives
}

TEST_CASE("global average pooling") {
  Tensor<double> c(1, 3, 3, 2);
  std::fill(c.data.begin(), c.data.end(), 1.25);
  Tensor<double> yc = global_avg_pool(c);
  CHECK(yc.data[0] == doctest::Approx(1.25));

  Tensor<double> x(1, 2, 2, 1);
  x.data = {0.0, 2.0, 4.0, 6.0};
  CHECK(global_avg_pool(x).data[0] == doctest::Approx(3.0));

  Rng rng(41);
  Tensor<double> r = random_tensor<double>(1, 4, 4, 2, rng);
  Tensor<double> yr = global_avg_pool(r);
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) mean += r.at(0, y, xx, ch);
    CHECK(yr.at(0, 0, 0, ch) == doctest::Approx(mean / 16.0));
  }
}

TEST_CASE("maxpool2 backward matches finite differences") {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> x = random_tensor<double>(1, 4, 4, 2, rng);
    Tensor<double> go = random_tensor<double>(1, 2, 2, 2, rng);
    PoolResult<double> r = maxpool2_forward(x);
    Tensor<double> gx = maxpool2_backward(x.shape, r.argmax, go);
    auto eval = [&] { return dot(maxpool2_forward(x).y, go); };
    const auto fd = oracles::finite_difference(x.data, eval);
    CHECK(oracles::max_relative_error(gx.data, fd) <= 1e-5);
  }
}

TEST_CASE("softmax cross-entropy values and gradient") {
  Tensor<double> uniform(1, 1, 1, 5);
  std::vector<int> label0 = {0};
  LossResult<double> lu = softmax_cross_entropy(uniform, label0);
  CHECK(lu.loss == doctest::Approx(std::log(5.0)));

  Tensor<double> confident(1, 1, 1, 3);
  confident.data = {50.0, 0.0, 0.0};
  LossResult<double> lc = softmax_cross_entropy(confident, label0);
  CHECK(lc.loss < 1e-9);

  Rng rng(47);
  Tensor<double> z = random_tensor<double>(4, 1, 1, 3, rng, -2.0, 2.0);
  std::vector<int> labels = {0, 2, 1, 2};
  LossResult<double> lr = softmax_cross_entropy(z, labels);
  auto eval = [&] { return softmax_cross_entropy(z, labels).loss; };
  const auto fd = oracles::finite_difference(z.data, eval);
  CHECK(oracles::max_relative_error(lr.grad_logits.data, fd) <= 1e-5);

  // probabilities sum to 1 per row
  Tensor<double> p = softmax(z);
  for (int in = 0; in < 4; ++in) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += p.at(in, 0, 0, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  std::vector<int> bad = {0, 5, 1, 2};
  CHECK_THROWS_AS(softmax_cross_entropy(z, bad), data_error);
}

TEST_CASE("sgd step") {
  std::vector<double> p = {1.0};
  sgd_step(p, std::vector<double>{0.5}, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.95));

  std::vector<double> q = {0.8};
  sgd_step(q, std::vector<double>{0.0}, 0.1, 0.0);
  CHECK(q[0] == 0.8);

  std::vector<double> r = {2.0};
  sgd_step(r, std::vector<double>{0.3}, 0.05, 1e-4);
  CHECK(r[0] == doctest::Approx(2.0 * (1.0 - 0.05 * 1e-4) - 0.05 * 0.3));
}

TEST_CASE("sgdr schedule: restarts, midpoints, and monotone decay") {
  SgdrSchedule s{0.05, 1, 2};
  CHECK(sgdr_lr(s, 0.0) == doctest::Approx(0.05));
  // cycle starts form the cumulative geometric series
  for (const int start : {0, 1, 3, 7, 15, 31, 63})
    CHECK(sgdr_lr(s, start) == doctest::Approx(0.05).epsilon(1e-12));
  // midpoint of the cycle starting at 3 (length 4)
  CHECK(sgdr_lr(s, 5.0) == doctest::Approx(0.025));
  // strictly decreasing within a cycle
  double prev = sgdr_lr(s, 7.0);
  for (double t = 7.5; t < 15.0; t += 0.5) {
    const double lr = sgdr_lr(s, t);
    CHECK(lr < prev);
    prev = lr;
  }
}
