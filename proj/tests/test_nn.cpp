#include <cmath>
#include <vector>

#include "autospeed/nn.hpp"
#include "autospeed/rng.hpp"
#include "doctest.h"

using namespace autospeed;
using namespace autospeed::nn;

namespace {

template <class T>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <class T>
LayerParams<T> make_params(LayerKind kind, BasicTensor<T> w, BasicTensor<T> b, ConvGeometry g = {}) {
  LayerParams<T> p;
  p.kind = kind;
  p.weights = std::move(w);
  p.bias = std::move(b);
  p.geom = g;
  return p;
}

// Direct nested-loop cross-correlation with TensorFlow-style "same" padding.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s,
                               bool same, std::size_t& oh_out, std::size_t& ow_out) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  std::size_t OH, OW;
  long pt = 0, pl = 0;
  if (same) {
    OH = (H + s - 1) / s;
    OW = (W + s - 1) / s;
    pt = std::max<long>(0, static_cast<long>((OH - 1) * s + kh) - static_cast<long>(H)) / 2;
    pl = std::max<long>(0, static_cast<long>((OW - 1) * s + kw) - static_cast<long>(W)) / 2;
  } else {
    OH = (H - kh) / s + 1;
    OW = (W - kw) / s + 1;
  }
  oh_out = OH;
  ow_out = OW;
  std::vector<double> out(N * K * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = b[k];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long ih = static_cast<long>(i * s + u) - pt;
                const long iw = static_cast<long>(j * s + v) - pl;
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                acc += static_cast<double>(x[((n * C + c) * H + ih) * W + iw]) *
                       w[((k * C + c) * kh + u) * kw + v];
              }
          out[((n * K + k) * OH + i) * OW + j] = acc;
        }
  return out;
}

template <class T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d: trivial examples") {
  Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto p = make_params(LayerKind::conv, Tensor(Shape{1, 1, 1, 1}, {2}), Tensor(Shape{1}),
                       ConvGeometry{1, 1, 1, 1, Padding::same});
  auto y = conv2d_forward(x, p);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.vec() == std::vector<float>{2, 4, 6, 8});

  auto q = make_params(LayerKind::conv, Tensor(Shape{1, 1, 2, 2}, 1.0f), Tensor(Shape{1}),
                       ConvGeometry{2, 2, 1, 1, Padding::valid});
  auto z = conv2d_forward(x, q);
  CHECK(z.shape() == Shape{1, 1, 1, 1});
  CHECK(z[0] == 10.0f);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  Rng rng(11);
  for (std::size_t stride : {1u, 2u}) {
    for (bool same : {true, false}) {
      auto x = random_tensor<float>({1, 2, 5, 5}, rng);
      auto w = random_tensor<float>({3, 2, 3, 3}, rng);
      auto b = random_tensor<float>({3}, rng);
      auto p = make_params(LayerKind::conv, w, b,
                           ConvGeometry{3, 3, stride, stride, same ? Padding::same : Padding::valid});
      auto y = conv2d_forward(x, p);
      std::size_t oh = 0, ow = 0;
      auto ref = naive_conv(x, w, b, stride, same, oh, ow);
      REQUIRE(y.shape() == Shape{1, 3, oh, ow});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor x(Shape{1, 2, 4, 4});
  auto p = make_params(LayerKind::conv, Tensor(Shape{1, 3, 3, 3}), Tensor(Shape{1}));
  try {
    conv2d_forward(x, p);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2x4x4]") != std::string::npos);
    CHECK(msg.find("[1x3x3x3]") != std::string::npos);
  }
}

TEST_CASE("tconv2d: trivial examples") {
  auto p = make_params(LayerKind::tconv, Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), Tensor(Shape{1}),
                       ConvGeometry{2, 2, 1, 1, Padding::valid});
  auto y = tconv2d_forward(Tensor(Shape{1, 1, 1, 1}, {5}), p);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.vec() == std::vector<float>{5, 10, 15, 20});

  Rng rng(3);
  auto q = make_params(LayerKind::tconv, random_tensor<float>({4, 2, 3, 3}, rng), Tensor(Shape{2}),
                       ConvGeometry{3, 3, 2, 2, Padding::same});
  auto z = tconv2d_forward(Tensor(Shape{2, 4, 3, 5}), q);
  CHECK(z.shape() == Shape{2, 2, 6, 10});
  for (float v : z.vec()) CHECK(v == 0.0f);
}

TEST_CASE("conv/tconv adjoint identity on random cases") {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t C = 1 + rng.uniform_int(0, 2), K = 1 + rng.uniform_int(0, 2);
    const std::size_t H = 3 + rng.uniform_int(0, 5), W = 3 + rng.uniform_int(0, 5);
    const std::size_t s = 1 + rng.uniform_int(0, 1);
    const bool same = rng.uniform() < 0.5;
    ConvGeometry g{3, 3, s, s, same ? Padding::same : Padding::valid};
    auto w = random_tensor<double>({K, C, 3, 3}, rng);
    auto conv = make_params(LayerKind::conv, w, BasicTensor<double>(Shape{K}), g);
    auto tconv = make_params(LayerKind::tconv, w, BasicTensor<double>(Shape{C}), g);
    auto x = random_tensor<double>({2, C, H, W}, rng);
    auto cx = conv2d_forward(x, conv);
    auto u = random_tensor<double>(cx.shape(), rng);
    auto tu = tconv2d_forward(u, tconv, HW{H, W});
    REQUIRE(tu.shape() == x.shape());
    const double lhs = dot(cx, u), rhs = dot(x, tu);
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(std::abs(lhs), 1e-12));
  }
}

TEST_CASE("conv input gradient equals tconv of the upstream gradient") {
  Rng rng(5);
  ConvGeometry g{3, 3, 2, 2, Padding::same};
  auto w = random_tensor<float>({3, 2, 3, 3}, rng);
  auto conv = make_params(LayerKind::conv, w, Tensor(Shape{3}), g);
  auto tconv = make_params(LayerKind::tconv, w, Tensor(Shape{2}), g);
  auto x = random_tensor<float>({1, 2, 7, 6}, rng);
  auto y = conv2d_forward(x, conv);
  auto gy = random_tensor<float>(y.shape(), rng);
  auto grads = conv2d_backward(x, conv, gy);
  auto t = tconv2d_forward(gy, tconv, HW{7, 6});
  REQUIRE(t.shape() == grads.input.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == doctest::Approx(grads.input[i]).epsilon(1e-5));
}

TEST_CASE("tconv rejects an inconsistent output extent") {
  auto p = make_params(LayerKind::tconv, Tensor(Shape{1, 1, 3, 3}), Tensor(Shape{1}),
                       ConvGeometry{3, 3, 2, 2, Padding::same});
  CHECK_THROWS_AS(tconv2d_forward(Tensor(Shape{1, 1, 3, 3}), p, HW{9, 6}), DimensionError);
}

TEST_CASE("dense forward") {
  auto id = make_params(LayerKind::dense, Tensor(Shape{2, 2}, {1, 0, 0, 1}), Tensor(Shape{2}));
  CHECK(dense_forward(Tensor(Shape{1, 2}, {1, 2}), id).vec() == std::vector<float>{1, 2});
  auto p = make_params(LayerKind::dense, Tensor(Shape{2, 1}, {2, 3}), Tensor(Shape{1}, {1}));
  CHECK(dense_forward(Tensor(Shape{1, 2}, {1, 1}), p).vec() == std::vector<float>{6});

  Rng rng(8);
  auto x = random_tensor<float>({3, 5}, rng);
  auto w = random_tensor<float>({5, 4}, rng);
  auto b = random_tensor<float>({4}, rng);
  auto y = dense_forward(x, make_params(LayerKind::dense, w, b));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t e = 0; e < 4; ++e) {
      double acc = b[e];
      for (std::size_t d = 0; d < 5; ++d) acc += static_cast<double>(x.at(n, d)) * w.at(d, e);
      CHECK(y.at(n, e) == doctest::Approx(acc).epsilon(1e-5));
    }
  CHECK_THROWS_AS(dense_forward(Tensor(Shape{1, 3}), make_params(LayerKind::dense, w, b)), DimensionError);
}

TEST_CASE("activations") {
  Tensor x(Shape{3}, {-1, 2, -10});
  CHECK(activation(x, Activation::relu()).vec() == std::vector<float>{0, 2, 0});
  auto l = activation(x, Activation::leaky(0.1));
  CHECK(l[0] == doctest::Approx(-0.1));
  CHECK(l[2] == doctest::Approx(-1.0));
  CHECK(activation(x, Activation::linear()) == x);
}

TEST_CASE("mse_loss") {
  Tensor a(Shape{2}, {0, 0}), b(Shape{2}, {1, 3});
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, b) == 5.0);
  CHECK_THROWS_AS(mse_loss(a, Tensor(Shape{3})), DimensionError);

  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    auto p = random_tensor<float>({4, 7}, rng), q = random_tensor<float>({4, 7}, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) s += (double(p[i]) - q[i]) * (double(p[i]) - q[i]);
    const double m = mse_loss(p, q);
    CHECK(m == doctest::Approx(s / 28.0).epsilon(1e-12));
    CHECK(m >= 0.0);
  }
}

TEST_CASE("backward: quadratic minimum and closed-form dense gradient") {
  Rng rng(4);
  auto c = random_tensor<float>({2, 3}, rng);
  Graph<float> g;
  auto x = g.param("x", c);
  auto loss = g.mse(x, g.input(c));
  auto grads = g.backward(loss);
  for (float v : grads.at("x").vec()) CHECK(v == 0.0f);

  // d mean((xW - y)^2) / dW = 2 x^T (xW - y) / n, n = number of outputs.
  auto xin = random_tensor<double>({4, 3}, rng);
  auto w = random_tensor<double>({3, 2}, rng);
  auto y = random_tensor<double>({4, 2}, rng);
  Graph<double> gd;
  auto out = gd.dense(gd.input(xin), gd.param("w", w), gd.input(BasicTensor<double>(Shape{2})));
  auto gw = gd.backward(gd.mse(out, gd.input(y))).at("w");
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t e = 0; e < 2; ++e) {
      double acc = 0.0;
      for (std::size_t n = 0; n < 4; ++n) {
        double pred = 0.0;
        for (std::size_t k = 0; k < 3; ++k) pred += xin.at(n, k) * w.at(k, e);
        acc += xin.at(n, d) * (pred - y.at(n, e));
      }
      CHECK(gw.at(d, e) == doctest::Approx(2.0 * acc / 8.0).epsilon(1e-12));
    }
}

TEST_CASE("backward without a forward pass is a usage error") {
  Graph<float> g;
  CHECK_THROWS_AS(g.backward(Graph<float>::Var{0}), UsageError);
  auto v = g.input(Tensor(Shape{2}));
  CHECK_THROWS_AS(g.backward(v), UsageError);
}

TEST_CASE("finite-difference check for every layer kind") {
  Rng rng(77);
  auto act = Activation::leaky(0.1);
  SUBCASE("conv") {
    ParamStore<double> p{{"w", random_tensor<double>({3, 2, 3, 3}, rng)},
                         {"b", random_tensor<double>({3}, rng)},
                         {"x", random_tensor<double>({2, 2, 6, 5}, rng)}};
    auto target = random_tensor<double>({2, 3, 3, 3}, rng);
    auto r = grad_check(p, [&](Graph<double>& g, const ParamStore<double>& ps) {
      auto y = g.conv2d(g.param("x", ps.at("x")), g.param("w", ps.at("w")), g.param("b", ps.at("b")),
                        ConvGeometry{3, 3, 2, 2, Padding::same});
      return g.mse(g.act(y, act), g.input(target));
    });
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 0);
  }
  SUBCASE("tconv") {
    ParamStore<double> p{{"w", random_tensor<double>({3, 2, 3, 3}, rng)},
                         {"b", random_tensor<double>({2}, rng)},
                         {"x", random_tensor<double>({2, 3, 3, 3}, rng)}};
    auto target = random_tensor<double>({2, 2, 6, 5}, rng);
    auto r = grad_check(p, [&](Graph<double>& g, const ParamStore<double>& ps) {
      auto y = g.tconv2d(g.param("x", ps.at("x")), g.param("w", ps.at("w")), g.param("b", ps.at("b")),
                         ConvGeometry{3, 3, 2, 2, Padding::same}, HW{6, 5});
      return g.mse(g.act(y, act), g.input(target));
    });
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("dense + reshape + affine") {
    ParamStore<double> p{{"w", random_tensor<double>({12, 4}, rng)},
                         {"b", random_tensor<double>({4}, rng)},
                         {"x", random_tensor<double>({2, 3, 2, 2}, rng)}};
    auto target = random_tensor<double>({2, 4}, rng);
    auto r = grad_check(p, [&](Graph<double>& g, const ParamStore<double>& ps) {
      auto x = g.affine(g.reshape(g.param("x", ps.at("x")), {2, 12}), 0.5, 0.1);
      auto y = g.dense(x, g.param("w", ps.at("w")), g.param("b", ps.at("b")));
      return g.add(g.mse(g.act(y, Activation::relu()), g.input(target)), g.mse(y, g.input(target)));
    });
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check examples") {
  // Identity weights with a linear activation.
  ParamStore<double> p{{"w", BasicTensor<double>(Shape{2, 2}, {1, 0, 0, 1})},
                       {"b", BasicTensor<double>(Shape{2})}};
  BasicTensor<double> x(Shape{1, 2}, {0.3, -0.7}), y(Shape{1, 2}, {1.0, 2.0});
  auto build = [&](Graph<double>& g, const ParamStore<double>& ps) {
    auto o = g.dense(g.input(x), g.param("w", ps.at("w")), g.param("b", ps.at("b")));
    return g.mse(g.act(o, Activation::linear()), g.input(y));
  };
  CHECK(grad_check(p, build).max_rel_error < 1e-6);

  // A gradient scaled by 2 has relative error |2g - g| / |2g| = 0.5.
  GradCheckOptions bad;
  bad.analytic_scale = 2.0;
  CHECK(grad_check(p, build, bad).max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("grad_check: three-layer conv encoder on an 8x8 input") {
  Rng rng(21);
  ParamStore<double> p;
  const std::size_t ch[] = {1, 4, 8, 8};
  for (int l = 0; l < 3; ++l) {
    auto lp = init_layer<double>(LayerKind::conv, ch[l], ch[l + 1], ConvGeometry{3, 3, 2, 2}, 100 + l);
    p["enc." + std::to_string(l) + ".w"] = lp.weights;
    p["enc." + std::to_string(l) + ".b"] = random_tensor<double>({ch[l + 1]}, rng, 0.1);
  }
  auto x = random_tensor<double>({2, 1, 8, 8}, rng);
  auto target = random_tensor<double>({2, 8, 1, 1}, rng);
  auto r = grad_check(p, [&](Graph<double>& g, const ParamStore<double>& ps) {
    auto h = g.input(x);
    for (int l = 0; l < 3; ++l) {
      const auto s = std::to_string(l);
      h = g.conv2d(h, g.param("enc." + s + ".w", ps.at("enc." + s + ".w")),
                   g.param("enc." + s + ".b", ps.at("enc." + s + ".b")), ConvGeometry{3, 3, 2, 2});
      h = g.act(h, l < 2 ? Activation::leaky() : Activation::linear());
    }
    return g.mse(h, g.input(target));
  });
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.coords_skipped == 0);
}

TEST_CASE("sgd_step") {
  ParamStore<float> p{{"w", Tensor(Shape{1}, {1.0f})}};
  auto st = OptimizerState::sgd(0.1);
  sgd_step(p, {{"w", Tensor(Shape{1}, {0.5f})}}, st);
  CHECK(p["w"][0] == doctest::Approx(0.95));
  sgd_step(p, {{"w", Tensor(Shape{1})}}, st);
  CHECK(p["w"][0] == doctest::Approx(0.95));

  Rng rng(9);
  auto w0 = random_tensor<float>({3, 4}, rng), g = random_tensor<float>({3, 4}, rng);
  ParamStore<float> q{{"w", w0}};
  auto st2 = OptimizerState::sgd(0.01);
  sgd_step(q, {{"w", g}}, st2);
  for (std::size_t i = 0; i < w0.numel(); ++i) CHECK(q["w"][i] == static_cast<float>(w0[i] - 0.01 * g[i]));
  CHECK(q["w"].shape() == Shape{3, 4});
  CHECK_THROWS_AS(sgd_step(q, {{"w", Tensor(Shape{4, 3})}}, st2), DimensionError);
}

TEST_CASE("adam_step") {
  SUBCASE("first step moves every element by about lr") {
    ParamStore<float> p{{"w", Tensor(Shape{4}, {0, 1, 2, 3})}};
    auto st = OptimizerState::adam(0.01);
    init_optimizer(st, p);
    adam_step(p, {{"w", Tensor(Shape{4}, 37.0f)}}, st);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p["w"][i] == doctest::Approx(double(i) - 0.01).epsilon(1e-5));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore<float> p{{"w", Tensor(Shape{2}, {0.25f, -4.0f})}};
    auto st = OptimizerState::adam(0.1);
    init_optimizer(st, p);
    adam_step(p, {{"w", Tensor(Shape{2})}}, st);
    CHECK(p["w"].vec() == std::vector<float>{0.25f, -4.0f});
  }
  SUBCASE("three-step trace against a scalar implementation") {
    double w = 0.0, m = 0.0, v = 0.0;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ParamStore<float> p{{"w", Tensor(Shape{1})}};
    auto st = OptimizerState::adam(lr);
    init_optimizer(st, p);
    for (int t = 1; t <= 3; ++t) {
      m = b1 * m + (1 - b1) * 1.0;
      v = b2 * v + (1 - b2) * 1.0;
      w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
      adam_step(p, {{"w", Tensor(Shape{1}, 1.0f)}}, st);
      CHECK(p["w"][0] == doctest::Approx(w).epsilon(1e-6));
    }
    CHECK(st.t == 3);
  }
  SUBCASE("uninitialized state is rejected") {
    ParamStore<float> p{{"w", Tensor(Shape{1})}};
    auto st = OptimizerState::adam(0.1);
    CHECK_THROWS_AS(adam_step(p, {{"w", Tensor(Shape{1})}}, st), UsageError);
  }
}

TEST_CASE("init_layer is seeded and bounded") {
  auto a = init_layer<float>(LayerKind::conv, 2, 4, ConvGeometry{}, 42);
  auto b = init_layer<float>(LayerKind::conv, 2, 4, ConvGeometry{}, 42);
  CHECK(a.weights == b.weights);
  const double limit = std::sqrt(6.0 / (18 + 36));
  for (float w : a.weights.vec()) CHECK(std::abs(w) <= limit);
  for (float v : a.bias.vec()) CHECK(v == 0.0f);
  a.validate();
  CHECK(a.out_channels() == 4);
}
