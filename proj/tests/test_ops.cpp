#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "micronet/ops.hpp"
#include "micronet/rng.hpp"

using namespace micronet;

namespace {

// Direct six-loop dilated SAME convolution, the independent oracle for the
// im2col + gemm path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, int rate) {
  const int64_t pad = (k.h() - 1) * rate / 2;
  Tensor<double> out(x.n(), k.n(), x.h(), x.w());
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t co = 0; co < k.n(); ++co)
      for (int64_t oh = 0; oh < x.h(); ++oh)
        for (int64_t ow = 0; ow < x.w(); ++ow) {
          double acc = 0;
          for (int64_t ci = 0; ci < x.c(); ++ci)
            for (int64_t ki = 0; ki < k.h(); ++ki)
              for (int64_t kj = 0; kj < k.w(); ++kj) {
                const int64_t ih = oh + ki * rate - pad;
                const int64_t iw = ow + kj * rate - pad;
                if (ih < 0 || ih >= x.h() || iw < 0 || iw >= x.w()) continue;
                acc += x.at(n, ci, ih, iw) * k.at(co, ci, ki, kj);
              }
          out.at(n, co, oh, ow) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the naive oracle at rates 1..3") {
  Rng rng(31);
  for (int rate : {1, 2, 3}) {
    Tensor<double> x(2, 3, 9, 7), k(4, 3, 3, 3);
    gradcheck::fill_uniform(x, rng);
    gradcheck::fill_uniform(k, rng);
    auto fast = conv2d(x, k, rate);
    auto slow = naive_conv(x, k, rate);
    REQUIRE(fast.same_shape(slow));
    for (int64_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
  }
  // 1x1 fast path.
  Tensor<double> x(1, 5, 6, 6), k(2, 5, 1, 1);
  gradcheck::fill_uniform(x, rng);
  gradcheck::fill_uniform(k, rng);
  auto fast = conv2d(x, k, 1);
  auto slow = naive_conv(x, k, 1);
  for (int64_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor<double> x(1, 3, 4, 4), k(2, 4, 3, 3);
  CHECK_THROWS_AS(conv2d(x, k, 1), ShapeError);
  Tensor<double> k2(2, 3, 3, 3);
  CHECK_THROWS_AS(conv2d(x, k2, 0), ParamError);
}

TEST_CASE("conv_transpose2d doubles dims and is the stride-2 adjoint") {
  Rng rng(32);
  Tensor<double> x(1, 3, 4, 4), k(3, 2, 2, 2);
  gradcheck::fill_uniform(x, rng);
  gradcheck::fill_uniform(k, rng);
  auto y = conv_transpose2d(x, k);
  REQUIRE(y.h() == 8);
  REQUIRE(y.w() == 8);
  // Adjoint identity: <deconv(x), g> == <x, ddeconv/dx^T g> by construction of
  // the backward pass; spot-check a single tap scatter instead.
  Tensor<double> unit = Tensor<double>::zeros_like(x);
  unit.at(0, 1, 2, 3) = 1.0;
  auto spread = conv_transpose2d(unit, k);
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t di = 0; di < 2; ++di)
      for (int64_t dj = 0; dj < 2; ++dj)
        CHECK(spread.at(0, co, 4 + di, 6 + dj) == doctest::Approx(k.at(1, co, di, dj)));
  // Everything outside the 2x2 footprint stays zero.
  double mass = 0;
  for (int64_t i = 0; i < spread.size(); ++i) mass += std::abs(spread[i]);
  double footprint = 0;
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t di = 0; di < 2; ++di)
      for (int64_t dj = 0; dj < 2; ++dj) footprint += std::abs(spread.at(0, co, 4 + di, 6 + dj));
  CHECK(mass == doctest::Approx(footprint));
}

TEST_CASE("maxpool2d argmax and tie-breaking") {
  Tensor<float> x(1, 1, 2, 4);
  // Window 1: all equal (tie -> first in row-major order). Window 2: distinct.
  x.at(0, 0, 0, 0) = 1; x.at(0, 0, 0, 1) = 1; x.at(0, 0, 1, 0) = 1; x.at(0, 0, 1, 1) = 1;
  x.at(0, 0, 0, 2) = 0; x.at(0, 0, 0, 3) = 5; x.at(0, 0, 1, 2) = 2; x.at(0, 0, 1, 3) = 3;
  auto res = maxpool2d(x);
  CHECK(res.output.at(0, 0, 0, 0) == 1);
  CHECK(res.output.at(0, 0, 0, 1) == 5);
  CHECK(res.argmax[0] == 0);      // first element of the tied window
  CHECK(res.argmax[1] == 3);      // flat h*W+w of the 5
  CHECK_THROWS_AS(maxpool2d(Tensor<float>(1, 1, 3, 4)), ShapeError);

  Tensor<float> go(1, 1, 1, 2);
  go[0] = 10; go[1] = 20;
  auto gin = maxpool2d_backward(go, res.argmax, 2, 4);
  CHECK(gin.at(0, 0, 0, 0) == 10);
  CHECK(gin.at(0, 0, 0, 3) == 20);
  CHECK(gin.at(0, 0, 1, 1) == 0);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tensor<double> x(1, 1, 1, 3);
  x[0] = -1; x[1] = 0; x[2] = 2;
  auto y = relu(x);
  CHECK(y[0] == 0);
  CHECK(y[1] == 0);
  CHECK(y[2] == 2);
  Tensor<double> go = Tensor<double>::full(1, 1, 1, 3, 1.0);
  auto gin = relu_backward(x, go);
  CHECK(gin[0] == 0);
  CHECK(gin[1] == 0);
  CHECK(gin[2] == 1);
}

TEST_CASE("softmax_channels normalizes and survives large logits") {
  Tensor<double> x(1, 2, 1, 2);
  x.at(0, 0, 0, 0) = 1000.0;
  x.at(0, 1, 0, 0) = 1000.0;
  x.at(0, 0, 0, 1) = -3.0;
  x.at(0, 1, 0, 1) = 3.0;
  auto p = softmax_channels(x);
  CHECK(p.all_finite());
  CHECK(p.at(0, 0, 0, 0) == doctest::Approx(0.5));
  CHECK(p.at(0, 0, 0, 1) + p.at(0, 1, 0, 1) == doctest::Approx(1.0));
}

TEST_CASE("concat/split invert each other") {
  Rng rng(33);
  Tensor<double> a(2, 2, 3, 3), b(2, 4, 3, 3);
  gradcheck::fill_uniform(a, rng);
  gradcheck::fill_uniform(b, rng);
  auto cat = concat_channels(a, b);
  auto [a2, b2] = split_channels(cat, a.c());
  REQUIRE(a2.same_shape(a));
  REQUIRE(b2.same_shape(b));
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a2[i] == a[i]);
  for (int64_t i = 0; i < b.size(); ++i) CHECK(b2[i] == b[i]);
  CHECK_THROWS_AS(add_elementwise(a, b), ShapeError);
}

TEST_CASE("all primitives pass finite-difference checks") {
  for (auto& r : gradcheck::check_primitives(101)) {
    INFO(r.name);
    CHECK(r.worst < gradcheck::kTolerance);
  }
}
