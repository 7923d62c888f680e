#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "vitsr/ops.hpp"
#include "vitsr/tensor.hpp"

using vitsr::Shape;
using vitsr::Tensor;

namespace {

template <typename T>
Tensor<T> arange(Shape shape) {
  std::vector<T> v(vitsr::shape_numel(shape));
  std::iota(v.begin(), v.end(), T(0));
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("tensor construction validates shape against data") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), vitsr::DimensionError);
  CHECK_THROWS_AS(Tensor<float>({2, 0}, 1.0f), vitsr::DimensionError);
  CHECK_THROWS_AS(Tensor<float>({-1, 3}, 1.0f), vitsr::DimensionError);
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(1) == 3);
}

TEST_CASE("item() requires a single element") {
  Tensor<float> s = Tensor<float>::scalar(4.0f);
  CHECK(s.item() == 4.0f);
  Tensor<float> t({2}, 1.0f);
  CHECK_THROWS_AS(t.item(), vitsr::ContractError);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor<float> x({3}, 2.0f);
  x.set_requires_grad(true);
  auto y = vitsr::mul(x, x);
  CHECK_THROWS_AS(vitsr::backward(y), vitsr::ContractError);
}

TEST_CASE("grad of sum(x*x) is 2x") {
  Tensor<float> x({4}, std::vector<float>{1.0f, -2.0f, 0.5f, 3.0f});
  x.set_requires_grad(true);
  auto loss = vitsr::sum(vitsr::mul(x, x));
  vitsr::backward(loss);
  auto g = x.grad();
  for (int i = 0; i < 4; ++i) CHECK(g[i] == Catch::Approx(2.0f * x.data()[i]));
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor<float> x({2}, std::vector<float>{1.0f, 2.0f});
  x.set_requires_grad(true);
  auto loss = vitsr::sum(x);
  vitsr::backward(loss);
  auto loss2 = vitsr::sum(x);
  vitsr::backward(loss2);
  CHECK(x.grad()[0] == Catch::Approx(2.0f));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("shared subexpression receives both contributions") {
  Tensor<float> x = Tensor<float>::scalar(3.0f);
  x.set_requires_grad(true);
  auto y = vitsr::add(x, x);  // dy/dx = 2
  vitsr::backward(y);
  CHECK(x.grad()[0] == Catch::Approx(2.0f));
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor<float> x({2}, 1.0f);
  x.set_requires_grad(true);
  {
    vitsr::NoGradGuard guard;
    auto y = vitsr::mul(x, x);
    CHECK_FALSE(y.needs_grad());
  }
  auto y = vitsr::mul(x, x);
  CHECK(y.needs_grad());
}

TEST_CASE("detach cuts the graph") {
  Tensor<float> x({2}, 2.0f);
  x.set_requires_grad(true);
  auto y = vitsr::mul(x, x).detach();
  CHECK_FALSE(y.needs_grad());
  CHECK(y.data()[0] == 4.0f);
}

TEST_CASE("add broadcasts a trailing-shape operand") {
  auto a = arange<float>({2, 3});               // [[0,1,2],[3,4,5]]
  Tensor<float> b({3}, std::vector<float>{10.0f, 20.0f, 30.0f});
  auto y = vitsr::add(a, b);
  const std::vector<float> want{10, 21, 32, 13, 24, 35};
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == want[static_cast<std::size_t>(i)]);

  b.set_requires_grad(true);
  a.set_requires_grad(true);
  auto loss = vitsr::sum(vitsr::add(a, b));
  vitsr::backward(loss);
  CHECK(b.grad()[0] == Catch::Approx(2.0f));  // summed over the leading dim
  CHECK(a.grad()[3] == Catch::Approx(1.0f));

  CHECK_THROWS_AS(vitsr::add(a, Tensor<float>({2}, 0.0f)), vitsr::DimensionError);
}

TEST_CASE("elementwise ops check shapes") {
  Tensor<float> a({2, 3}, 1.0f), b({3, 2}, 1.0f);
  CHECK_THROWS_AS(vitsr::sub(a, b), vitsr::DimensionError);
  CHECK_THROWS_AS(vitsr::mul(a, b), vitsr::DimensionError);
  CHECK_THROWS_AS(vitsr::div(a, b), vitsr::DimensionError);
}

TEST_CASE("linear matches a hand computation") {
  Tensor<float> x({2}, std::vector<float>{1.0f, 2.0f});
  Tensor<float> w({3, 2}, std::vector<float>{1, 0, 0, 1, 1, 1});
  Tensor<float> b({3}, std::vector<float>{0.5f, -0.5f, 0.0f});
  auto y = vitsr::linear(x, w, b);
  REQUIRE(y.shape() == Shape{3});
  CHECK(y.data()[0] == Catch::Approx(1.5f));
  CHECK(y.data()[1] == Catch::Approx(1.5f));
  CHECK(y.data()[2] == Catch::Approx(3.0f));
  CHECK_THROWS_AS(vitsr::linear(x, Tensor<float>({3, 5}, 0.0f), b), vitsr::DimensionError);
}

TEST_CASE("bmm matches a hand computation") {
  Tensor<float> a({1, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor<float> b({1, 3, 2}, std::vector<float>{7, 8, 9, 10, 11, 12});
  auto y = vitsr::bmm(a, b);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  CHECK(y.data()[0] == Catch::Approx(58.0f));   // 1*7+2*9+3*11
  CHECK(y.data()[1] == Catch::Approx(64.0f));
  CHECK(y.data()[2] == Catch::Approx(139.0f));
  CHECK(y.data()[3] == Catch::Approx(154.0f));
}

TEST_CASE("softmax rows sum to one and ordering is preserved") {
  Tensor<float> x({2, 4}, std::vector<float>{0.1f, 2.0f, -1.0f, 0.5f, 100.0f, 100.0f, 100.0f, 100.0f});
  auto y = vitsr::softmax_lastdim(x);
  for (int r = 0; r < 2; ++r) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += y.data()[r * 4 + i];
    CHECK(s == Catch::Approx(1.0).epsilon(1e-6));
  }
  CHECK(y.data()[1] > y.data()[3]);              // larger logit, larger weight
  CHECK(y.data()[4] == Catch::Approx(0.25f));    // large equal logits stay stable
}

TEST_CASE("layer_norm standardizes each row") {
  auto x = arange<float>({2, 5});
  Tensor<float> gamma({5}, 1.0f), beta({5}, 0.0f);
  auto y = vitsr::layer_norm(x, gamma, beta, 1e-6f);
  for (int r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (int i = 0; i < 5; ++i) m += y.data()[r * 5 + i];
    m /= 5;
    for (int i = 0; i < 5; ++i) {
      double d = y.data()[r * 5 + i] - m;
      v += d * d;
    }
    v /= 5;
    CHECK(std::abs(m) < 1e-5);
    CHECK(v == Catch::Approx(1.0).epsilon(1e-3));
  }
  CHECK_THROWS_AS(vitsr::layer_norm(x, Tensor<float>({4}, 1.0f), beta, 1e-6f),
                  vitsr::DimensionError);
  CHECK_THROWS_AS(vitsr::layer_norm(x, gamma, beta, 0.0f), vitsr::ContractError);
}

TEST_CASE("gelu matches the exact Gaussian CDF form") {
  Tensor<double> x({3}, std::vector<double>{0.0, 1.0, -1.0});
  auto y = vitsr::gelu(x);
  CHECK(y.data()[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(y.data()[1] == Catch::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y.data()[2] == Catch::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("leaky_relu applies the negative slope") {
  Tensor<float> x({4}, std::vector<float>{-2.0f, -0.5f, 0.0f, 3.0f});
  auto y = vitsr::leaky_relu(x, 0.2f);
  CHECK(y.data()[0] == Catch::Approx(-0.4f));
  CHECK(y.data()[1] == Catch::Approx(-0.1f));
  CHECK(y.data()[2] == 0.0f);
  CHECK(y.data()[3] == 3.0f);
  CHECK_THROWS_AS(vitsr::leaky_relu(x, 1.5f), vitsr::ContractError);
}

TEST_CASE("conv2d with a box kernel sums the neighborhood") {
  auto x = arange<float>({1, 1, 3, 3});
  Tensor<float> w({1, 1, 3, 3}, 1.0f);
  Tensor<float> b({1}, 0.0f);
  auto y = vitsr::conv2d(x, w, b, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == Catch::Approx(36.0f));  // center: all nine values
  CHECK(y.data()[0] == Catch::Approx(8.0f));   // corner: 0+1+3+4
  CHECK(y.data()[2] == Catch::Approx(12.0f));  // corner: 1+2+4+5

  // bias offsets every output
  Tensor<float> b2({1}, 10.0f);
  auto y2 = vitsr::conv2d(x, w, b2, 1);
  CHECK(y2.data()[4] == Catch::Approx(46.0f));

  // unbatched 3-d input gives the same plane
  auto y3 = vitsr::conv2d(arange<float>({1, 3, 3}), w, b, 1);
  REQUIRE(y3.shape() == Shape{1, 3, 3});
  CHECK(y3.data()[4] == Catch::Approx(36.0f));

  CHECK_THROWS_AS(vitsr::conv2d(x, Tensor<float>({1, 2, 3, 3}, 0.0f), b, 1),
                  vitsr::DimensionError);
  CHECK_THROWS_AS(vitsr::conv2d(x, Tensor<float>({1, 1, 2, 2}, 0.0f), b, 1),
                  vitsr::DimensionError);
}

TEST_CASE("pixel_shuffle follows the channel-to-space mapping") {
  // input [r*r, H, W] with r=2, H=W=2; output [1, 4, 4]
  auto x = arange<float>({4, 2, 2});
  auto y = vitsr::pixel_shuffle(x, 2);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  // out[0, r*h+i, r*w+j] = in[i*r + j, h, w]
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          float got = y.data()[(2 * h + i) * 4 + (2 * w + j)];
          float want = x.data()[(i * 2 + j) * 4 + h * 2 + w];
          CHECK(got == want);
        }
  CHECK_THROWS_AS(vitsr::pixel_shuffle(arange<float>({3, 2, 2}), 2), vitsr::DimensionError);
}

TEST_CASE("pixel_unshuffle inverts pixel_shuffle") {
  auto x = arange<float>({2, 8, 4, 6});
  auto rt = vitsr::pixel_unshuffle(vitsr::pixel_shuffle(x, 2), 2);
  REQUIRE(rt.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(rt.data()[i] == x.data()[i]);
}

TEST_CASE("image_to_patches lays patches out channel-major") {
  // one image, 1 channel, 4x4, patch 2 -> 4 patches of 4 values
  auto x = arange<float>({1, 1, 4, 4});
  auto y = vitsr::image_to_patches(x, 2);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  // first patch: rows 0-1, cols 0-1
  const std::vector<float> p0{0, 1, 4, 5};
  // last patch: rows 2-3, cols 2-3
  const std::vector<float> p3{10, 11, 14, 15};
  for (int i = 0; i < 4; ++i) {
    CHECK(y.data()[i] == p0[static_cast<std::size_t>(i)]);
    CHECK(y.data()[12 + i] == p3[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("permute and reshape round-trip") {
  auto x = arange<float>({2, 3, 4});
  auto y = vitsr::permute(vitsr::permute(x, {2, 0, 1}), {1, 2, 0});
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(vitsr::reshape(x, {5, 5}), vitsr::DimensionError);
}

TEST_CASE("concat joins along the requested axis") {
  auto a = arange<float>({2, 2});
  auto b = arange<float>({2, 3});
  auto y = vitsr::concat<float>({a, b}, 1);
  REQUIRE(y.shape() == Shape{2, 5});
  const std::vector<float> want{0, 1, 0, 1, 2, 2, 3, 3, 4, 5};
  for (int i = 0; i < 10; ++i) CHECK(y.data()[i] == want[static_cast<std::size_t>(i)]);
  CHECK_THROWS_AS(vitsr::concat<float>({a, arange<float>({3, 2})}, 1), vitsr::DimensionError);
}

TEST_CASE("slice_lastdim extracts a contiguous range") {
  auto x = arange<float>({2, 6});
  auto y = vitsr::slice_lastdim(x, 1, 3);
  REQUIRE(y.shape() == Shape{2, 3});
  CHECK(y.data()[0] == 1.0f);
  CHECK(y.data()[3] == 7.0f);
  CHECK_THROWS_AS(vitsr::slice_lastdim(x, 4, 3), vitsr::DimensionError);
}

TEST_CASE("attention weights are a distribution over keys") {
  const int N = 3, D = 4, heads = 2;
  std::mt19937_64 rng(7);
  auto rnd = [&](Shape s) {
    std::vector<float> v(vitsr::shape_numel(s));
    for (auto& x : v) x = static_cast<float>((rng() >> 11) * 0x1.0p-53 - 0.5);
    return Tensor<float>(std::move(s), std::move(v));
  };
  auto x = rnd({1, N, D});
  auto qkv_w = rnd({3 * D, D});
  auto qkv_b = rnd({3 * D});
  auto proj_w = rnd({D, D});
  auto proj_b = rnd({D});
  vitsr::AttentionProbe<float> probe;
  auto y = vitsr::multi_head_attention(x, qkv_w, qkv_b, proj_w, proj_b, heads, &probe);
  REQUIRE(y.shape() == Shape{1, N, D});
  REQUIRE(probe.weights.shape() == Shape{1, heads, N, N});
  for (int hq = 0; hq < heads * N; ++hq) {
    double s = 0;
    for (int kk = 0; kk < N; ++kk) s += probe.weights.data()[hq * N + kk];
    CHECK(s == Catch::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("attention over a single token is the value projection") {
  // With one key the softmax weight is exactly 1, so the token's output is
  // proj(v) regardless of q and k.
  const int D = 4;
  std::mt19937_64 rng(11);
  auto rnd = [&](Shape s) {
    std::vector<float> v(vitsr::shape_numel(s));
    for (auto& x : v) x = static_cast<float>((rng() >> 11) * 0x1.0p-53 - 0.5);
    return Tensor<float>(std::move(s), std::move(v));
  };
  auto x = rnd({1, 1, D});
  auto qkv_w = rnd({3 * D, D});
  auto qkv_b = rnd({3 * D});
  auto proj_w = rnd({D, D});
  auto proj_b = rnd({D});
  auto y = vitsr::multi_head_attention(x, qkv_w, qkv_b, proj_w, proj_b, 2);

  auto qkv = vitsr::linear(x, qkv_w, qkv_b);
  auto v = vitsr::slice_lastdim(qkv, 2 * D, D);
  auto want = vitsr::linear(v, proj_w, proj_b);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == Catch::Approx(want.data()[i]).margin(1e-6));

  CHECK_THROWS_AS(vitsr::multi_head_attention(x, qkv_w, qkv_b, proj_w, proj_b, 3),
                  vitsr::ConfigError);
}

TEST_CASE("gaussian_blur2d preserves constants under edge replication") {
  Tensor<float> x({2, 5, 5}, 0.75f);
  std::vector<float> taps{0.25f, 0.5f, 0.25f};
  auto y = vitsr::gaussian_blur2d(x, taps);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == Catch::Approx(0.75f).epsilon(1e-6));
  CHECK_THROWS_AS(vitsr::gaussian_blur2d(x, std::vector<float>{0.5f, 0.5f}),
                  vitsr::ContractError);
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor<float> x({3}, std::vector<float>{1.0f, 2.0f, 3.0f});
  CHECK(x.all_finite());
  x.data()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(x.all_finite());
  x.data()[1] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(x.all_finite());
}

TEST_CASE("linear with identity weights passes the input through") {
  Tensor<float> x({2}, std::vector<float>{1.0f, 2.0f});
  Tensor<float> eye({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor<float> zero({2}, 0.0f);
  auto y = vitsr::linear(x, eye, zero);
  CHECK(y.data()[0] == 1.0f);
  CHECK(y.data()[1] == 2.0f);

  Tensor<float> w({1, 2}, std::vector<float>{2.0f, 3.0f});
  Tensor<float> b({1}, 1.0f);
  auto z = vitsr::linear(Tensor<float>({2}, 1.0f), w, b);
  CHECK(z.item() == Catch::Approx(6.0f));  // 2 + 3 + 1
}

TEST_CASE("a 1x1 convolution with weight two doubles every value") {
  auto x = arange<float>({1, 1, 2, 3});
  Tensor<float> w({1, 1, 1, 1}, 2.0f);
  Tensor<float> b({1}, 0.0f);
  auto y = vitsr::conv2d(x, w, b, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == Catch::Approx(2.0f * x.data()[i]));
}

TEST_CASE("a ones kernel over a constant image gives nine times the value inside") {
  Tensor<float> x({1, 1, 5, 5}, 0.5f);
  Tensor<float> w({1, 1, 3, 3}, 1.0f);
  Tensor<float> b({1}, 0.0f);
  auto y = vitsr::conv2d(x, w, b, 1);
  CHECK(y.data()[2 * 5 + 2] == Catch::Approx(4.5f));  // interior: 9 * 0.5
  CHECK(y.data()[0] == Catch::Approx(2.0f));          // zero-padded corner: 4 * 0.5
}

TEST_CASE("layer_norm maps known rows to known outputs") {
  Tensor<float> gamma3({3}, 1.0f), beta3({3}, 0.0f);
  auto c = vitsr::layer_norm(Tensor<float>({1, 3}, 1.0f), gamma3, beta3, 1e-6f);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c.data()[i]) < 1e-3f);

  Tensor<float> gamma2({2}, 1.0f), beta2({2}, 0.0f);
  auto d = vitsr::layer_norm(Tensor<float>({1, 2}, std::vector<float>{0.0f, 2.0f}),
                             gamma2, beta2, 1e-6f);
  CHECK(d.data()[0] == Catch::Approx(-1.0f).epsilon(1e-3));
  CHECK(d.data()[1] == Catch::Approx(1.0f).epsilon(1e-3));
}

TEST_CASE("pixel_shuffle turns channel groups into spatial blocks") {
  // four 1x1 channels [a, b, c, d] become one 2x2 plane [[a, b], [c, d]]
  Tensor<float> x({4, 1, 1}, std::vector<float>{10, 20, 30, 40});
  auto y = vitsr::pixel_shuffle(x, 2);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  CHECK(y.data()[0] == 10.0f);
  CHECK(y.data()[1] == 20.0f);
  CHECK(y.data()[2] == 30.0f);
  CHECK(y.data()[3] == 40.0f);

  auto big = vitsr::pixel_shuffle(Tensor<float>({48, 16, 16}, 0.0f), 2);
  CHECK(big.shape() == Shape{12, 32, 32});
}

TEST_CASE("the gradient of sum(w * x) with respect to w is x") {
  Tensor<float> w({4}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.0f});
  w.set_requires_grad(true);
  Tensor<float> x({4}, std::vector<float>{3.0f, 1.0f, -2.0f, 7.0f});
  vitsr::backward(vitsr::sum(vitsr::mul(w, x)));
  for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == x.data()[i]);
}

TEST_CASE("the squared-error gradient vanishes at the minimum") {
  std::vector<float> v{0.3f, -0.7f, 1.1f};
  Tensor<float> w({3}, v);
  w.set_requires_grad(true);
  Tensor<float> t({3}, v);
  auto diff = vitsr::sub(w, t);
  vitsr::backward(vitsr::mean(vitsr::mul(diff, diff)));
  for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == 0.0f);
}
