// Numeric core: tensors, deterministic RNG, FFT, the autodiff tape, layer
// ops, and Adam. Gradient checks run against central finite differences and
// adjointness identities; the FFT runs against a direct O(n^2) DFT.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <limits>
#include <utility>
#include <vector>

#include "dfmr/adam.hpp"
#include "dfmr/autodiff.hpp"
#include "dfmr/fft.hpp"
#include "dfmr/nn.hpp"
#include "dfmr/parallel.hpp"
#include "dfmr/rng.hpp"
#include "dfmr/tensor.hpp"
#include "test_helpers.hpp"

using namespace dfmr;
using namespace testutil;

TEST_CASE("tensor basics", "[numeric]") {
  Tensor t = Tensor::zeros_complex({3, 4});
  REQUIRE(t.numel() == 12);
  REQUIRE(t.scalars() == 24);
  t.set_c(t.offset({2, 1}), {1.5, -2.0});
  REQUIRE(t.c(9).real() == 1.5);
  REQUIRE(t.c(9).imag() == -2.0);
  Tensor r = Tensor::zeros_real({2, 2});
  REQUIRE(r.scalars() == 4);
  REQUIRE_FALSE(r.same_layout(t));
}

TEST_CASE("rng determinism and distribution", "[numeric]") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  Rng c(42);
  double lo = 1.0, hi = 0.0, mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = c.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    mean += u;
  }
  mean /= n;
  REQUIRE(lo >= 0.0);
  REQUIRE(hi < 1.0);
  REQUIRE(std::abs(mean - 0.5) < 0.01);

  Rng d(7);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < 100000; ++i) {
    double g = d.normal();
    s1 += g;
    s2 += g * g;
  }
  double m = s1 / 100000, var = s2 / 100000 - m * m;
  REQUIRE(std::abs(m) < 0.02);
  REQUIRE(std::abs(var - 1.0) < 0.02);

  // Named substreams are independent of creation order and of parent draws.
  Rng root(99);
  Rng s_noise = root.substream("noise");
  (void)root.uniform();
  Rng s_noise2 = Rng(99).substream("noise");
  REQUIRE(s_noise.uniform() == s_noise2.uniform());
  REQUIRE(Rng(99).substream("noise").raw() != Rng(99).substream("coils").raw());
}

TEST_CASE("fft matches direct dft and round-trips", "[numeric]") {
  Rng rng(3);
  for (int64_t n : {2, 8, 64}) {
    FftPlan plan(n);
    std::vector<std::complex<double>> ref(static_cast<size_t>(n));
    std::vector<double> buf(static_cast<size_t>(2 * n));
    for (int64_t i = 0; i < n; ++i) {
      ref[static_cast<size_t>(i)] = {rng.normal(), rng.normal()};
      buf[static_cast<size_t>(2 * i)] = ref[static_cast<size_t>(i)].real();
      buf[static_cast<size_t>(2 * i + 1)] = ref[static_cast<size_t>(i)].imag();
    }
    std::vector<double> orig = buf;
    plan.forward(buf.data());
    auto want = dft_oracle(ref);
    double scale = 0.0;
    for (auto& v : want) scale = std::max(scale, std::abs(v));
    for (int64_t i = 0; i < n; ++i) {
      REQUIRE(std::abs(buf[static_cast<size_t>(2 * i)] -
                       want[static_cast<size_t>(i)].real()) < 1e-12 * scale);
      REQUIRE(std::abs(buf[static_cast<size_t>(2 * i + 1)] -
                       want[static_cast<size_t>(i)].imag()) < 1e-12 * scale);
    }
    plan.inverse(buf.data());
    for (size_t i = 0; i < buf.size(); ++i)
      REQUIRE(std::abs(buf[i] - orig[i]) < 1e-13 * (1.0 + std::abs(orig[i])));
  }
}

TEST_CASE("fft2 matches separable dft", "[numeric]") {
  Rng rng(5);
  const int64_t h = 4, w = 8;
  Tensor img = random_tensor(rng, DType::Complex128, {h, w});
  std::vector<double> buf = img.data;
  FftPlan rp(w), cp(h);
  fft2_inplace(buf.data(), rp, cp, false);
  // direct 2D DFT
  for (int64_t ky = 0; ky < h; ++ky)
    for (int64_t kx = 0; kx < w; ++kx) {
      std::complex<double> acc = 0.0;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          double a = -2.0 * M_PI *
                     (static_cast<double>(kx * x) / w + static_cast<double>(ky * y) / h);
          acc += img.c(y * w + x) * std::complex<double>(std::cos(a), std::sin(a));
        }
      size_t at = static_cast<size_t>(2 * (ky * w + kx));
      REQUIRE(std::abs(buf[at] - acc.real()) < 1e-11);
      REQUIRE(std::abs(buf[at + 1] - acc.imag()) < 1e-11);
    }
}

TEST_CASE("conv2d matches quadruple-loop oracle", "[numeric]") {
  Rng rng(11);
  SECTION("1x1 identity kernel") {
    Graph g;
    Tensor x = random_tensor(rng, DType::Real64, {1, 4, 4});
    Tensor k = Tensor::zeros_real({1, 1, 1, 1});
    k.data[0] = 1.0;
    Tensor b = Tensor::zeros_real({1});
    Var out = conv2d(g.constant(x), g.constant(k), g.constant(b));
    REQUIRE(tensor_rel_err(g.value(out), x) == 0.0);
  }
  SECTION("zero input yields bias planes") {
    Graph g;
    Tensor x = Tensor::zeros_real({2, 3, 3});
    Tensor k = random_tensor(rng, DType::Real64, {3, 2, 3, 3});
    Tensor b = Tensor::zeros_real({3});
    b.data = {0.5, -1.0, 2.0};
    Var out = conv2d(g.constant(x), g.constant(k), g.constant(b));
    const Tensor& o = g.value(out);
    for (int64_t co = 0; co < 3; ++co)
      for (int64_t i = 0; i < 9; ++i)
        REQUIRE(o.data[static_cast<size_t>(co * 9 + i)] == b.data[static_cast<size_t>(co)]);
  }
  SECTION("random case vs oracle") {
    Graph g;
    Tensor x = random_tensor(rng, DType::Real64, {2, 5, 6});
    Tensor k = random_tensor(rng, DType::Real64, {3, 2, 3, 3});
    Tensor b = random_tensor(rng, DType::Real64, {3});
    Var out = conv2d(g.constant(x), g.constant(k), g.constant(b));
    Tensor want = conv2d_oracle(x, k, b);
    REQUIRE(tensor_rel_err(g.value(out), want) < 1e-13);
  }
  SECTION("5x5 kernel vs oracle") {
    Graph g;
    Tensor x = random_tensor(rng, DType::Real64, {1, 7, 7});
    Tensor k = random_tensor(rng, DType::Real64, {2, 1, 5, 5});
    Tensor b = random_tensor(rng, DType::Real64, {2});
    Var out = conv2d(g.constant(x), g.constant(k), g.constant(b));
    Tensor want = conv2d_oracle(x, k, b);
    REQUIRE(tensor_rel_err(g.value(out), want) < 1e-13);
  }
}

TEST_CASE("layer forward values", "[numeric]") {
  Graph g;
  SECTION("dense") {
    Tensor w = Tensor::zeros_real({1, 2});
    w.data = {1.0, 1.0};
    Tensor x = Tensor::zeros_real({2});
    x.data = {2.0, 3.0};
    Tensor b = Tensor::zeros_real({1});
    Var y = dense(g.constant(x), g.constant(w), g.constant(b));
    REQUIRE(g.value(y).data[0] == 5.0);
  }
  SECTION("channel modulate") {
    Tensor x = Tensor::zeros_real({2, 1, 2});
    x.data = {1.0, 2.0, 3.0, 4.0};
    Tensor v = Tensor::zeros_real({2});
    v.data = {2.0, -1.0};
    Var y = channel_modulate(g.constant(x), g.constant(v));
    const Tensor& o = g.value(y);
    REQUIRE(o.data[0] == 2.0);
    REQUIRE(o.data[1] == 4.0);
    REQUIRE(o.data[2] == -3.0);
    REQUIRE(o.data[3] == -4.0);
  }
  SECTION("activations") {
    Tensor x = Tensor::zeros_real({3});
    x.data = {0.0, -1.0, 2.0};
    Var t = activate(g.constant(x), Act::Tanh);
    REQUIRE(g.value(t).data[0] == 0.0);
    Var l = activate(g.constant(x), Act::LeakyRelu);
    REQUIRE(g.value(l).data[1] == -0.01);
    REQUIRE(g.value(l).data[2] == 2.0);
  }
  SECTION("pack_complex") {
    Tensor x = Tensor::zeros_real({2, 1, 2});
    x.data = {1.0, 2.0, 3.0, 4.0};
    Var y = pack_complex(g.constant(x));
    REQUIRE(g.value(y).c(0) == std::complex<double>(1.0, 3.0));
    REQUIRE(g.value(y).c(1) == std::complex<double>(2.0, 4.0));
  }
}

TEST_CASE("backward basics", "[numeric]") {
  SECTION("grad of ||p||^2 is 2p") {
    Graph g;
    Rng rng(13);
    Parameter p("p", random_tensor(rng, DType::Real64, {5}));
    Var loss = sum_squares(g.leaf(p));
    g.backward(loss);
    for (int64_t i = 0; i < 5; ++i)
      REQUIRE(rel_err(p.grad.data[static_cast<size_t>(i)],
                      2.0 * p.value.data[static_cast<size_t>(i)]) < 1e-14);
  }
  SECTION("grad accumulates over reuse") {
    Graph g;
    Parameter p("p", Tensor::zeros_real({1}));
    p.value.data[0] = 3.0;
    Var x = g.leaf(p);
    Var y = add(x, x);  // y = 2x, d/dx (2x)^2 = 8x = 24
    Var loss = sum_squares(y);
    g.backward(loss);
    REQUIRE(rel_err(p.grad.data[0], 24.0) < 1e-14);
  }
  SECTION("complex linear op pullback is hermitian adjoint") {
    // y = c * x with complex constant c: packed gradient of Re<y, g0> wrt x
    // must equal conj(c) * g0 in packed form. Exercised through dot_const.
    Graph g;
    Parameter p("x", Tensor::zeros_complex({1}));
    p.value.set_c(0, {2.0, -1.0});
    Var x = g.leaf(p);
    // multiply by i: (re, im) -> (-im, re); build via pack-style make
    const std::complex<double> c(0.0, 1.0);
    Var y = [&] {
      Tensor out = Tensor::zeros_complex({1});
      out.set_c(0, c * g.value(x).c(0));
      int ix = x.id;
      return g.make(std::move(out), true, [ix, c](Graph& gr, int self) {
        const Tensor& gs = gr.node(self).grad;
        Tensor& gx = gr.grad_buffer(ix);
        gx.add_c(0, std::conj(c) * gs.c(0));
      });
    }();
    Tensor g0 = Tensor::zeros_complex({1});
    g0.set_c(0, {0.7, 0.3});
    Var loss = dot_const(y, g0);
    g.backward(loss);
    std::complex<double> want = std::conj(c) * g0.c(0);
    REQUIRE(rel_err(p.grad.c(0).real(), want.real()) < 1e-14);
    REQUIRE(rel_err(p.grad.c(0).imag(), want.imag()) < 1e-14);
  }
}

namespace {

// Gradient check scaffold: loss(params) via graph rebuild per evaluation.
double eval_net_loss(Parameter& x, Parameter& k, Parameter& b, Parameter& v,
                     const Tensor& target) {
  Graph g;
  Var h = conv2d(g.leaf(x), g.leaf(k), g.leaf(b));
  h = channel_modulate(h, g.leaf(v));
  h = activate(h, Act::Tanh);
  Var loss = sum_squares(sub(h, g.constant(target)));
  return g.scalar(loss);
}

}  // namespace

TEST_CASE("composite gradient matches finite differences", "[numeric]") {
  Rng rng(17);
  Parameter x("x", random_tensor(rng, DType::Real64, {2, 4, 4}));
  Parameter k("k", random_tensor(rng, DType::Real64, {2, 2, 3, 3}));
  Parameter b("b", random_tensor(rng, DType::Real64, {2}));
  Parameter v("v", random_tensor(rng, DType::Real64, {2}));
  Tensor target = random_tensor(rng, DType::Real64, {2, 4, 4});

  Graph g;
  Var h = conv2d(g.leaf(x), g.leaf(k), g.leaf(b));
  h = channel_modulate(h, g.leaf(v));
  h = activate(h, Act::Tanh);
  Var loss = sum_squares(sub(h, g.constant(target)));
  g.backward(loss);

  auto eval = [&] { return eval_net_loss(x, k, b, v, target); };
  auto check_param = [&](Parameter& p) {
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      double fd = central_diff(&p.value.data[i], eval, 1e-6);
      double an = p.grad.data[i];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      REQUIRE(std::abs(fd - an) / denom < 1e-5);
    }
  };
  check_param(k);
  check_param(b);
  check_param(v);
  check_param(x);
}

TEST_CASE("tanh derivative against finite differences", "[numeric]") {
  Parameter p("p", Tensor::zeros_real({1}));
  p.value.data[0] = 0.3;
  Graph g;
  Var y = activate(g.leaf(p), Act::Tanh);
  Var loss = sum_squares(y);  // d/dx tanh(x)^2 = 2 tanh(x)(1-tanh(x)^2)
  g.backward(loss);
  auto eval = [&] {
    Graph g2;
    return g2.scalar(sum_squares(activate(g2.leaf(p), Act::Tanh)));
  };
  double fd = central_diff(&p.value.data[0], eval, 1e-6);
  REQUIRE(rel_err(p.grad.data[0], fd) < 1e-6);
}

TEST_CASE("linear ops satisfy the adjoint identity", "[numeric]") {
  // <L x, y> == <x, L^T y> with L^T realized by backward().
  Rng rng(23);
  auto check = [&](const char* what, Tensor x0, Tensor yshape_like,
                   std::function<Var(Graph&, Var)> op) {
    Parameter p("x", x0);
    Graph g;
    Var out = op(g, g.leaf(p));
    Tensor y(g.value(out).dtype, g.value(out).shape);
    rng.fill_normal(y);
    double lhs = dot(g.value(out), y);
    Var loss = dot_const(out, y);
    g.backward(loss);
    double rhs = dot(p.value, p.grad);
    INFO(what);
    REQUIRE(rel_err(lhs, rhs) < 1e-12);
    (void)yshape_like;
  };

  check("conv2d/x", random_tensor(rng, DType::Real64, {2, 6, 5}),
        Tensor(), [&](Graph& g, Var x) {
          Tensor k = random_tensor(rng, DType::Real64, {3, 2, 3, 3});
          Tensor b = Tensor::zeros_real({3});
          return conv2d(x, g.constant(k), g.constant(b));
        });
  check("conv2d/k", random_tensor(rng, DType::Real64, {3, 2, 3, 3}),
        Tensor(), [&](Graph& g, Var k) {
          Tensor x = random_tensor(rng, DType::Real64, {2, 6, 5});
          Tensor b = Tensor::zeros_real({3});
          return conv2d(g.constant(x), k, g.constant(b));
        });
  check("dense/x", random_tensor(rng, DType::Real64, {7}), Tensor(),
        [&](Graph& g, Var x) {
          Tensor w = random_tensor(rng, DType::Real64, {4, 7});
          Tensor b = Tensor::zeros_real({4});
          return dense(x, g.constant(w), g.constant(b));
        });
  check("dense/w", random_tensor(rng, DType::Real64, {4, 7}), Tensor(),
        [&](Graph& g, Var w) {
          Tensor x = random_tensor(rng, DType::Real64, {7});
          Tensor b = Tensor::zeros_real({4});
          return dense(g.constant(x), w, g.constant(b));
        });
  check("modulate/x", random_tensor(rng, DType::Real64, {3, 4, 4}), Tensor(),
        [&](Graph& g, Var x) {
          Tensor v = random_tensor(rng, DType::Real64, {3});
          return channel_modulate(x, g.constant(v));
        });
  check("modulate/v", random_tensor(rng, DType::Real64, {3}), Tensor(),
        [&](Graph& g, Var v) {
          Tensor x = random_tensor(rng, DType::Real64, {3, 4, 4});
          return channel_modulate(g.constant(x), v);
        });
  check("slice1d", random_tensor(rng, DType::Real64, {10}), Tensor(),
        [&](Graph& g, Var x) {
          (void)g;
          return slice1d(x, 2, 5);
        });
  check("pack_complex", random_tensor(rng, DType::Real64, {2, 3, 4}), Tensor(),
        [&](Graph& g, Var x) {
          (void)g;
          return pack_complex(x);
        });
  check("scale", random_tensor(rng, DType::Real64, {6}), Tensor(),
        [&](Graph& g, Var x) {
          (void)g;
          return scale(x, -2.5);
        });
}

TEST_CASE("first_diff_penalty values and gradient", "[numeric]") {
  SECTION("constant track has zero penalty") {
    Graph g;
    Tensor x = Tensor::zeros_real({4});
    x.fill(0.7);
    Var p = first_diff_penalty(g.constant(x), 3.0);
    REQUIRE(g.scalar(p) == 0.0);
  }
  SECTION("two segments differing by 0.1 at lambda=1") {
    Graph g;
    Tensor x = Tensor::zeros_real({2});
    x.data = {0.0, 0.1};
    Var p = first_diff_penalty(g.constant(x), 1.0);
    REQUIRE(rel_err(g.scalar(p), 0.01) < 1e-12);
  }
  SECTION("gradient vs finite differences, multi-column") {
    Rng rng(29);
    Parameter p("d", random_tensor(rng, DType::Real64, {5, 2}));
    Graph g;
    Var loss = first_diff_penalty(g.leaf(p), 0.37);
    g.backward(loss);
    auto eval = [&] {
      Graph g2;
      return g2.scalar(first_diff_penalty(g2.leaf(p), 0.37));
    };
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      double fd = central_diff(&p.value.data[i], eval, 1e-6);
      REQUIRE(std::abs(fd - p.grad.data[i]) < 1e-6);
    }
  }
}

TEST_CASE("adam update rule", "[numeric]") {
  SECTION("zero gradient leaves parameter unchanged") {
    Parameter p("p", Tensor::zeros_real({3}));
    p.value.data = {1.0, -2.0, 0.5};
    Tensor before = p.value;
    AdamState st;
    adam_step(p, st, AdamConfig{});
    REQUIRE(bitwise_equal(p.value, before));
  }
  SECTION("first step approximates -lr * sign(grad)") {
    Parameter p("p", Tensor::zeros_real({2}));
    p.grad.data = {0.5, -3.0};
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step(p, st, cfg);
    REQUIRE(std::abs(p.value.data[0] + 0.1) < 1e-6);
    REQUIRE(std::abs(p.value.data[1] - 0.1) < 1e-6);
  }
  SECTION("non-finite gradient raises") {
    Parameter p("p", Tensor::zeros_real({1}));
    p.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState st;
    REQUIRE_THROWS_AS(adam_step(p, st, AdamConfig{}), NumericError);
  }
  SECTION("converges on a quadratic") {
    Parameter p("p", Tensor::zeros_real({1}));
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.05;
    for (int it = 0; it < 2000; ++it) {
      p.zero_grad();
      p.grad.data[0] = 2.0 * (p.value.data[0] - 3.0);
      adam_step(p, st, cfg);
    }
    REQUIRE(std::abs(p.value.data[0] - 3.0) < 1e-3);
  }
}

TEST_CASE("op pipeline is deterministic", "[numeric]") {
  auto run = [] {
    Rng rng(31);
    Graph g;
    Tensor x = random_tensor(rng, DType::Real64, {2, 8, 8});
    Tensor k = random_tensor(rng, DType::Real64, {2, 2, 3, 3});
    Tensor b = random_tensor(rng, DType::Real64, {2});
    Parameter p("k", k);
    Var h = conv2d(g.constant(x), g.leaf(p), g.constant(b));
    h = activate(h, Act::LeakyRelu);
    Var loss = sum_squares(h);
    g.backward(loss);
    return std::pair<double, Tensor>(g.scalar(loss), p.grad);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  REQUIRE(l1 == l2);
  REQUIRE(bitwise_equal(g1, g2));
}

TEST_CASE("parallel_for covers ranges deterministically", "[numeric]") {
  std::vector<int> hits(1000, 0);
  parallel_for(1000, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) hits[static_cast<size_t>(i)] += 1;
  });
  for (int h : hits) REQUIRE(h == 1);
}
