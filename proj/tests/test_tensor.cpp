#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "accunet/gradcheck.hpp"
#include "accunet/ops.hpp"
#include "accunet/tape.hpp"
#include "accunet/tensor.hpp"
#include "test_util.hpp"

using namespace accunet;
using namespace testutil;

TEST_CASE("tensor invariants") {
  Tensor t(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(int64_t(t.data->size()) == t.shape.numel());
  CHECK_THROWS_AS(Tensor(Shape{1, 0, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);

  Tensor a(Shape{1, 1, 1, 1});
  Tensor b(Shape{1, 1, 1, 1});
  CHECK(a.id != b.id);
}

TEST_CASE("conv2d pointwise all-ones sums channels") {
  Rng rng(1);
  Tensor x = Tensor::full(Shape{1, 2, 2, 2}, 1.0f);
  for (int c_out : {1, 3, 5}) {
    ConvParamsT<float> p;
    p.weight = Tensor::full(Shape{c_out, 2, 1, 1}, 1.0f);
    p.bias = Tensor::zeros(Shape{1, c_out, 1, 1});
    Tensor y = conv2d(x, p);
    CHECK(y.shape == Shape{1, c_out, 2, 2});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.ptr()[i] == doctest::Approx(2.0f));
  }
}

TEST_CASE("conv2d depthwise identity kernel") {
  Rng rng(2);
  Tensor x = rand_tensor<float>(Shape{2, 4, 6, 6}, rng);
  ConvParamsT<float> p;
  p.weight = Tensor::zeros(Shape{4, 1, 3, 3});
  for (int c = 0; c < 4; ++c) p.weight.at(c, 0, 1, 1) = 1.0f;
  p.padding = 1;
  p.groups = 4;
  Tensor y = conv2d(x, p);
  CHECK(y.id != x.id);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d shape law and errors") {
  Rng rng(3);
  Tensor x = rand_tensor<float>(Shape{2, 6, 9, 11}, rng);
  ConvParamsT<float> p = make_conv<float>(6, 8, 3, 2, 1, 2, rng);
  Tensor y = conv2d(x, p);
  CHECK(y.shape == Shape{2, 8, (9 + 2 - 3) / 2 + 1, (11 + 2 - 3) / 2 + 1});

  ConvParamsT<float> bad = make_conv<float>(4, 8, 3, 1, 1, 1, rng);
  CHECK_THROWS_AS(conv2d(x, bad), ShapeError);

  Tensor nan_in = Tensor::full(Shape{1, 6, 4, 4}, std::numeric_limits<float>::quiet_NaN());
  ConvParamsT<float> ok = make_conv<float>(6, 2, 1, 1, 0, 1, rng);
  CHECK_THROWS_AS(conv2d(nan_in, ok), NumericError);
}

TEST_CASE("conv2d gradient vs central finite differences") {
  Rng rng(4);
  auto x = rand_tensor<double>(Shape{1, 4, 8, 8}, rng);
  auto p = make_conv<double>(4, 3, 3, 1, 1, 1, rng);
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    ConvParamsT<double> q = p;
    q.weight = in[1];
    q.bias = in[2];
    return sum(conv2d(in[0], q, &tape), &tape);
  };
  double err = grad_check(f, {x, p.weight, *p.bias});
  CHECK(err < 1e-3);
}

TEST_CASE("conv2d grouped gradient") {
  Rng rng(5);
  auto x = rand_tensor<double>(Shape{2, 6, 5, 5}, rng);
  auto p = make_conv<double>(6, 4, 3, 2, 1, 2, rng);
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    ConvParamsT<double> q = p;
    q.weight = in[1];
    return sum(conv2d(in[0], q, &tape), &tape);
  };
  CHECK(grad_check(f, {x, p.weight}) < 1e-3);
}

TEST_CASE("conv2d_transpose replicates into 2x2 blocks") {
  Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  ConvParamsT<float> p;
  p.weight = Tensor::full(Shape{1, 1, 2, 2}, 1.0f);
  p.stride = 2;
  Tensor y = conv2d_transpose(x, p);
  CHECK(y.shape == Shape{1, 1, 4, 4});
  const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.ptr()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("conv2d_transpose doubles spatial dims") {
  Rng rng(6);
  Tensor x = rand_tensor<float>(Shape{1, 3, 14, 14}, rng);
  ConvParamsT<float> p = make_conv<float>(1, 5, 2, 2, 0, 1, rng);
  p.weight = rand_tensor<float>(Shape{5, 3, 2, 2}, rng);
  Tensor y = conv2d_transpose(x, p);
  CHECK(y.shape == Shape{1, 5, 28, 28});
}

TEST_CASE("conv2d_transpose gradient") {
  Rng rng(7);
  auto x = rand_tensor<double>(Shape{1, 3, 4, 4}, rng);
  ConvParamsT<double> p;
  p.weight = rand_tensor<double>(Shape{2, 3, 2, 2}, rng);
  p.bias = rand_tensor<double>(Shape{1, 2, 1, 1}, rng);
  p.stride = 2;
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    ConvParamsT<double> q = p;
    q.weight = in[1];
    q.bias = in[2];
    return sum(conv2d_transpose(in[0], q, &tape), &tape);
  };
  CHECK(grad_check(f, {x, p.weight, *p.bias}) < 1e-3);
}

TEST_CASE("pool2d examples") {
  Tensor x(Shape{1, 1, 2, 2}, {1, 3, 5, 7});
  CHECK(pool2d(x, PoolKind::Avg, 2).scalar() == doctest::Approx(4.0f));
  CHECK(pool2d(x, PoolKind::Max, 2).scalar() == doctest::Approx(7.0f));

  Tensor odd(Shape{1, 1, 3, 4});
  CHECK_THROWS_AS(pool2d(odd, PoolKind::Avg, 2), DivisibilityError);
}

TEST_CASE("pool then nearest upsample is identity on constants") {
  for (int s : {2, 4}) {
    Tensor x = Tensor::full(Shape{2, 3, 8, 8}, 2.5f);
    Tensor y = upsample(pool2d(x, PoolKind::Avg, s), UpsampleMode::Nearest, 8, 8);
    CHECK(max_abs_diff(x, y) == 0.0);
  }
}

TEST_CASE("pool2d gradients") {
  Rng rng(8);
  for (PoolKind kind : {PoolKind::Avg, PoolKind::Max}) {
    auto x = rand_tensor<double>(Shape{2, 3, 6, 6}, rng);
    auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
      auto y = pool2d(in[0], kind, 2, &tape);
      return sum(mul(y, y, &tape), &tape);
    };
    CHECK(grad_check(f, {x}) < 1e-3);
  }
}

TEST_CASE("upsample nearest x2 pattern") {
  Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = upsample(x, UpsampleMode::Nearest, 4, 4);
  const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.ptr()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("upsample bilinear identity and constants") {
  Rng rng(9);
  Tensor x = rand_tensor<float>(Shape{1, 2, 5, 7}, rng);
  Tensor same = upsample(x, UpsampleMode::Bilinear, 5, 7);
  CHECK(max_abs_diff(x, same) < 1e-6);

  Tensor c = Tensor::full(Shape{1, 1, 3, 3}, 0.75f);
  for (auto [th, tw] : {std::pair{1, 1}, {4, 9}, {8, 2}}) {
    Tensor y = upsample(c, UpsampleMode::Bilinear, th, tw);
    CHECK(y.shape == Shape{1, 1, th, tw});
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.ptr()[i] == doctest::Approx(0.75f).epsilon(1e-6));
  }

  CHECK_THROWS_AS(upsample(x, UpsampleMode::Nearest, 0, 3), ShapeError);
}

TEST_CASE("upsample gradients") {
  Rng rng(10);
  for (UpsampleMode mode : {UpsampleMode::Nearest, UpsampleMode::Bilinear}) {
    auto x = rand_tensor<double>(Shape{1, 2, 3, 4}, rng);
    auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
      auto y = upsample(in[0], mode, 7, 6, &tape);
      return sum(mul(y, y, &tape), &tape);
    };
    CHECK(grad_check(f, {x}) < 1e-3);
  }
}

TEST_CASE("batchnorm2d training normalizes per channel") {
  Rng rng(11);
  Tensor x = rand_tensor<float>(Shape{4, 3, 5, 5}, rng, -3.0f, 5.0f);
  auto s = make_bn<float>(3, rng, false);
  Tensor y = batchnorm2d(x, s, true);
  const int64_t n = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int in = 0; in < 4; ++in)
      for (int i = 0; i < 25; ++i) mean += y.at(in, c, i / 5, i % 5);
    mean /= n;
    for (int in = 0; in < 4; ++in)
      for (int i = 0; i < 25; ++i) {
        double d = y.at(in, c, i / 5, i % 5) - mean;
        var += d * d;
      }
    var /= n;
    CHECK(std::fabs(mean) < 1e-4);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
  // Running stats moved away from their (0,1) init.
  CHECK(s.running_mean.ptr()[0] != 0.0f);
}

TEST_CASE("batchnorm2d inference with unit stats is near identity") {
  Rng rng(12);
  Tensor x = rand_tensor<float>(Shape{2, 3, 4, 4}, rng);
  auto s = make_bn<float>(3, rng, false);
  Tensor y = batchnorm2d(x, s, false);
  CHECK(max_rel_diff(x, y) < 1e-4);  // off only by eps in the denominator
}

TEST_CASE("batchnorm2d inference is affine per channel") {
  Rng rng(13);
  auto s = make_bn<float>(2, rng);
  s.running_mean = Tensor(Shape{1, 2, 1, 1}, {0.3f, -0.7f});
  s.running_var = Tensor(Shape{1, 2, 1, 1}, {1.5f, 0.8f});
  Tensor a = rand_tensor<float>(Shape{1, 2, 3, 3}, rng);
  Tensor b = rand_tensor<float>(Shape{1, 2, 3, 3}, rng);
  Tensor zero = Tensor::zeros(Shape{1, 2, 3, 3});
  Tensor fa = batchnorm2d(a, s, false);
  Tensor fb = batchnorm2d(b, s, false);
  Tensor f0 = batchnorm2d(zero, s, false);
  Tensor ab = add(a, b);
  Tensor fab = batchnorm2d(ab, s, false);
  // affine: f(a+b) - f(0) == (f(a)-f(0)) + (f(b)-f(0))
  for (int64_t i = 0; i < fa.numel(); ++i) {
    float lhs = fab.ptr()[i] - f0.ptr()[i];
    float rhs = (fa.ptr()[i] - f0.ptr()[i]) + (fb.ptr()[i] - f0.ptr()[i]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm2d degenerate batch") {
  Rng rng(14);
  Tensor x = rand_tensor<float>(Shape{1, 3, 1, 1}, rng);
  auto s = make_bn<float>(3, rng);
  CHECK_THROWS_AS(batchnorm2d(x, s, true), ValueError);
}

TEST_CASE("batchnorm2d gradient (training mode)") {
  Rng rng(15);
  auto x = rand_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto s = make_bn<double>(3, rng);
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    BatchNormStateT<double> state = s;
    state.gamma = in[1];
    state.beta = in[2];
    state.running_mean = s.running_mean.clone();
    state.running_var = s.running_var.clone();
    auto y = batchnorm2d(in[0], state, true, &tape);
    return sum(mul(y, y, &tape), &tape);
  };
  CHECK(grad_check(f, {x, s.gamma, s.beta}) < 1e-3);
}

TEST_CASE("activation examples") {
  Tensor x(Shape{1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  Tensor leaky = activation(x, Activation::LeakyRelu, 0.01f);
  CHECK(leaky.ptr()[0] == doctest::Approx(-0.01f));
  CHECK(leaky.ptr()[1] == 0.0f);
  CHECK(leaky.ptr()[2] == doctest::Approx(2.0f));

  Tensor z = Tensor::zeros(Shape{1, 1, 1, 1});
  CHECK(activation(z, Activation::Sigmoid).scalar() == doctest::Approx(0.5f));

  Rng rng(16);
  Tensor pos = rand_tensor<float>(Shape{1, 2, 3, 3}, rng, 0.0f, 4.0f);
  CHECK(bit_equal(activation(pos, Activation::Relu),
                  activation(pos, Activation::LeakyRelu)));

  // stay inside the f32-representable open interval; beyond ~|17| the
  // closed-form saturates to exactly 0 or 1 in single precision
  Tensor any = rand_tensor<float>(Shape{1, 2, 8, 8}, rng, -15.0f, 15.0f);
  Tensor sig = activation(any, Activation::Sigmoid);
  for (int64_t i = 0; i < sig.numel(); ++i) {
    CHECK(sig.ptr()[i] > 0.0f);
    CHECK(sig.ptr()[i] < 1.0f);
  }
}

TEST_CASE("activation gradients") {
  Rng rng(17);
  for (Activation kind :
       {Activation::LeakyRelu, Activation::Relu, Activation::Sigmoid}) {
    auto x = rand_tensor<double>(Shape{1, 2, 4, 4}, rng, -2.0, 2.0);
    // keep away from the relu kink where FD is one-sided
    for (int64_t i = 0; i < x.numel(); ++i)
      if (std::fabs(x.ptr()[i]) < 1e-2) x.ptr()[i] = 0.5;
    auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
      auto y = activation(in[0], kind, 0.01, &tape);
      return sum(mul(y, y, &tape), &tape);
    };
    CHECK(grad_check(f, {x}) < 1e-3);
  }
}

TEST_CASE("concat_channels examples and contract") {
  Rng rng(18);
  Tensor a = rand_tensor<float>(Shape{1, 2, 4, 4}, rng);
  Tensor b = rand_tensor<float>(Shape{1, 3, 4, 4}, rng);
  Tensor y = concat_channels<float>({a, b});
  CHECK(y.shape == Shape{1, 5, 4, 4});

  // five c_inv=96 tensors -> 480 channels, i.e. c_inv*(2k-1) for k=3
  std::vector<Tensor> five;
  for (int i = 0; i < 5; ++i) five.push_back(rand_tensor<float>(Shape{1, 96, 2, 2}, rng));
  CHECK(concat_channels(five).shape.c == 480);
  CHECK(96 * (2 * 3 - 1) == 480);

  Tensor bad = rand_tensor<float>(Shape{1, 2, 3, 4}, rng);
  CHECK_THROWS_AS(concat_channels<float>({a, bad}), ShapeError);
}

TEST_CASE("concat strategies bit-identical, slice recovers inputs") {
  Rng rng(19);
  std::vector<Tensor> xs;
  for (int c : {3, 1, 4, 2})
    xs.push_back(rand_tensor<float>(Shape{2, c, 5, 6}, rng));
  Tensor naive = concat_channels(xs, ConcatStrategy::Naive);
  Tensor pre = concat_channels(xs, ConcatStrategy::Prealloc);
  CHECK(bit_equal(naive, pre));

  int off = 0;
  for (const auto& x : xs) {
    Tensor back = slice_channels(pre, off, off + x.shape.c);
    CHECK(bit_equal(back, x));
    off += x.shape.c;
  }
}

TEST_CASE("concat and slice gradients") {
  Rng rng(20);
  auto a = rand_tensor<double>(Shape{1, 2, 3, 3}, rng);
  auto b = rand_tensor<double>(Shape{1, 3, 3, 3}, rng);
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    auto y = concat_channels<double>({in[0], in[1]}, ConcatStrategy::Prealloc, &tape);
    auto s = slice_channels(y, 1, 4, &tape);
    return sum(mul(s, s, &tape), &tape);
  };
  CHECK(grad_check(f, {a, b}) < 1e-3);
}

TEST_CASE("global_avg_pool and linear") {
  Rng rng(21);
  Tensor c3 = Tensor::full(Shape{2, 4, 3, 3}, 3.0f);
  Tensor g = global_avg_pool(c3);
  CHECK(g.shape == Shape{2, 4, 1, 1});
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.ptr()[i] == doctest::Approx(3.0f));

  LinearParamsT<float> id;
  id.weight = Tensor::zeros(Shape{4, 4, 1, 1});
  for (int i = 0; i < 4; ++i) id.weight.at(i, i, 0, 0) = 1.0f;
  id.bias = Tensor::zeros(Shape{1, 4, 1, 1});
  Tensor x = rand_tensor<float>(Shape{2, 4, 1, 1}, rng);
  CHECK(max_abs_diff(linear(x, id), x) == 0.0);
}

TEST_CASE("linear gradient") {
  Rng rng(22);
  auto x = rand_tensor<double>(Shape{3, 5, 1, 1}, rng);
  auto p = make_linear<double>(5, 4, rng);
  auto f = [&](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    LinearParamsT<double> q;
    q.weight = in[1];
    q.bias = in[2];
    auto y = linear(in[0], q, &tape);
    return sum(mul(y, y, &tape), &tape);
  };
  CHECK(grad_check(f, {x, p.weight, p.bias}) < 1e-3);
}

TEST_CASE("backward trivial rules") {
  Rng rng(23);
  Tensor x = rand_tensor<float>(Shape{2, 3, 4, 4}, rng);
  {
    Tape tape;
    Tensor loss = sum(x, &tape);
    tape.backward(loss);
    const Tensor* g = tape.grad(x);
    REQUIRE(g != nullptr);
    for (int64_t i = 0; i < g->numel(); ++i) CHECK(g->ptr()[i] == 1.0f);
  }
  {
    Tensor a = rand_tensor<float>(Shape{1, 2, 3, 3}, rng);
    Tensor b = rand_tensor<float>(Shape{1, 2, 3, 3}, rng);
    Tape tape;
    Tensor loss = sum(mul(a, b, &tape), &tape);
    tape.backward(loss);
    CHECK(max_abs_diff(*tape.grad(a), b) == 0.0);
    CHECK(max_abs_diff(*tape.grad(b), a) == 0.0);
  }
}

TEST_CASE("backward contract errors") {
  Rng rng(24);
  Tensor x = rand_tensor<float>(Shape{1, 2, 2, 2}, rng);
  Tape tape;
  Tensor y = mul(x, x, &tape);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);  // not scalar
  Tensor stray = sum(x);                          // produced off-tape
  CHECK_THROWS_AS(tape.backward(stray), ValueError);
}

TEST_CASE("grad_check quadratic exactness") {
  Rng rng(25);
  auto x = rand_tensor<double>(Shape{1, 3, 4, 4}, rng);
  auto f = [](TapeT<double>& tape, const std::vector<TensorT<double>>& in) {
    return scale(sum(mul(in[0], in[0], &tape), &tape), 0.5, &tape);
  };
  CHECK(grad_check(f, {x}) < 1e-6);
}

TEST_CASE("conv2d linearity without bias") {
  Rng rng(26);
  // per-element relative tolerance of 1e-5 needs double precision; random
  // cancellation makes near-zero outputs relatively noisy in f32
  auto x = rand_tensor<double>(Shape{1, 3, 6, 6}, rng);
  auto y = rand_tensor<double>(Shape{1, 3, 6, 6}, rng);
  auto p = make_conv<double>(3, 4, 3, 1, 1, 1, rng, false);
  const double alpha = 0.7, beta = -1.3;
  auto mix = add(scale(x, alpha), scale(y, beta));
  auto lhs = conv2d(mix, p);
  auto rhs = add(scale(conv2d(x, p), alpha), scale(conv2d(y, p), beta));
  CHECK(max_rel_diff(lhs, rhs) < 1e-5);

  // f32 path: same identity at the scale of the output
  Tensor xf = rand_tensor<float>(Shape{1, 3, 6, 6}, rng);
  Tensor yf = rand_tensor<float>(Shape{1, 3, 6, 6}, rng);
  ConvParamsT<float> pf = make_conv<float>(3, 4, 3, 1, 1, 1, rng, false);
  Tensor lf = conv2d(add(scale(xf, 0.7f), scale(yf, -1.3f)), pf);
  Tensor rf = add(scale(conv2d(xf, pf), 0.7f), scale(conv2d(yf, pf), -1.3f));
  double scale_max = 0;
  for (int64_t i = 0; i < rf.numel(); ++i)
    scale_max = std::max(scale_max, std::fabs(double(rf.ptr()[i])));
  CHECK(max_abs_diff(lf, rf) / scale_max < 1e-5);
}

TEST_CASE("conv2d adjointness in double precision") {
  Rng rng(27);
  auto x = rand_tensor<double>(Shape{1, 3, 6, 6}, rng);
  auto p = make_conv<double>(3, 4, 3, 1, 1, 1, rng, false);
  auto g = rand_tensor<double>(Shape{1, 4, 6, 6}, rng);

  TapeT<double> tape;
  auto y = conv2d(x, p, &tape);
  auto loss = sum(mul(y, g, &tape), &tape);
  tape.backward(loss);
  const auto* gx = tape.grad(x);  // = conv2d_backward_input(g)
  REQUIRE(gx != nullptr);

  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < y.numel(); ++i) lhs += y.ptr()[i] * g.ptr()[i];
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x.ptr()[i] * gx->ptr()[i];
  CHECK(std::fabs(lhs - rhs) / std::max({std::fabs(lhs), std::fabs(rhs), 1e-8}) < 1e-4);
}

TEST_CASE("shape algebra over randomized valid inputs") {
  Rng rng(28);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + rng.uniform_int(2);
    const int c = 1 + rng.uniform_int(6);
    const int h = 3 + rng.uniform_int(10);
    const int w = 3 + rng.uniform_int(10);
    Tensor x = rand_tensor<float>(Shape{n, c, h, w}, rng);
    const int k = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    const int stride = 1 + rng.uniform_int(2);
    const int pad = rng.uniform_int(2);
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const int c_out = 1 + rng.uniform_int(6);
    ConvParamsT<float> p = make_conv<float>(c, c_out, k, stride, pad, 1, rng);
    Tensor y = conv2d(x, p);
    CHECK(y.shape.n == n);
    CHECK(y.shape.c == c_out);
    CHECK(y.shape.h == (h + 2 * pad - k) / stride + 1);
    CHECK(y.shape.w == (w + 2 * pad - k) / stride + 1);
  }
}

TEST_CASE("kernel determinism is bit-exact") {
  Rng rng(29);
  Tensor x = rand_tensor<float>(Shape{2, 5, 12, 12}, rng);
  ConvParamsT<float> p = make_conv<float>(5, 7, 3, 1, 1, 1, rng);
  Tensor y1 = conv2d(x, p);
  Tensor y2 = conv2d(x, p);
  CHECK(bit_equal(y1, y2));

  auto s = make_bn<float>(5, rng);
  Tensor b1 = batchnorm2d(x, s, false);
  Tensor b2 = batchnorm2d(x, s, false);
  CHECK(bit_equal(b1, b2));
}

TEST_CASE("tape gradients mirror parameter shapes") {
  Rng rng(30);
  auto x = rand_tensor<float>(Shape{1, 3, 8, 8}, rng);
  auto p = make_conv<float>(3, 6, 3, 1, 1, 1, rng);
  Tape tape;
  Tensor y = conv2d(x, p, &tape);
  Tensor loss = sum(y, &tape);
  tape.backward(loss);
  REQUIRE(tape.grad(p.weight) != nullptr);
  REQUIRE(tape.grad(*p.bias) != nullptr);
  CHECK(tape.grad(p.weight)->shape == p.weight.shape);
  CHECK(tape.grad(*p.bias)->shape == p.bias->shape);
}
