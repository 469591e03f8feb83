#include <doctest.h>

#include <cmath>

#include "gradprobe/autodiff.hpp"
#include "gradprobe/kernels.hpp"
#include "op_catalog.hpp"

using namespace gradprobe;
using testutil::random_tensor;

namespace {

// Triple loop, no blocking, no OpenMP.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j)
      for (std::size_t k = 0; k < a.dim(1); ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
  return c;
}

// Sliding-window cross-correlation with explicit zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad_top,
                  std::size_t pad_left, std::size_t oh, std::size_t ow) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  Tensor out({O, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < KH; ++u)
            for (std::size_t v = 0; v < KW; ++v) {
              const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad_top);
              const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad_left);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
              s += x[(c * H + r) * W + q] * k[((o * C + c) * KH + u) * KW + v];
            }
        out[(o * oh + i) * ow + j] = s;
      }
  return out;
}

Tensor eval(const Tensor& a, const Tensor& b, Var (*op)(Tape&, Var, Var)) {
  Tape t;
  return t.value(op(t, t.leaf(a), t.leaf(b)));
}

}  // namespace

TEST_CASE("matmul: identity and hand values") {
  const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(eval(Tensor::matrix(2, 2, {1, 0, 0, 1}), m, ad::matmul) == m);
  const Tensor r = eval(m, Tensor::matrix(2, 1, {5, 6}), ad::matmul);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r[0] == 17);
  CHECK(r[1] == 39);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape t;
  try {
    ad::matmul(t, t.leaf(Tensor({2, 3})), t.leaf(Tensor({2, 3})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul kernels agree with a triple-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    const Tensor want = naive_matmul(a, b);
    Tensor c({m, n});
    kernels::serial::matmul(a.data(), b.data(), c.data(), m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));

    // a·bᵀ with b stored transposed, aᵀ·b with a stored transposed
    Tensor bt({n, k}), at({k, m});
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < n; ++j) bt.at(j, i) = b.at(i, j);
      for (std::size_t j = 0; j < m; ++j) at.at(i, j) = a.at(j, i);
    }
    Tensor c_nt({m, n}), c_tn({m, n});
    kernels::serial::matmul_nt(a.data(), bt.data(), c_nt.data(), m, k, n);
    kernels::serial::matmul_tn(at.data(), b.data(), c_tn.data(), m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(c_nt[i] == doctest::Approx(want[i]).epsilon(1e-12));
      CHECK(c_tn[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d: zero input, 1x1 scaling, sliding-window oracle") {
  Tape t;
  const Var z = ad::conv2d(t, t.leaf(Tensor({1, 3, 3})), t.leaf(Tensor({1, 1, 3, 3}, 0.7)), 1,
                           kernels::Padding::valid);
  CHECK(t.value(z) == Tensor({1, 1, 1}));

  const Tensor grid({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Var s = ad::conv2d(t, t.leaf(grid), t.leaf(Tensor({1, 1, 1, 1}, 2.0)), 1,
                           kernels::Padding::valid);
  CHECK(t.value(s) == Tensor({1, 3, 3}, {2, 0, 0, 0, 2, 0, 0, 0, 2}));

  Rng rng(5);
  const Tensor x = random_tensor({1, 4, 4}, rng), k = random_tensor({1, 1, 2, 2}, rng);
  const Var r = ad::conv2d(t, t.leaf(x), t.leaf(k), 1, kernels::Padding::valid);
  const Tensor want = naive_conv(x, k, 1, 0, 0, 3, 3);
  REQUIRE(t.value(r).shape() == want.shape());
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(t.value(r)[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d geometry matches the oracle for strides and padding") {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 1 + rng.below(3), h = 3 + rng.below(6), w = 3 + rng.below(6);
    const std::size_t kh = 1 + rng.below(3), stride = 1 + rng.below(3);
    const auto padding = rng.below(2) ? kernels::Padding::same : kernels::Padding::valid;
    const Tensor x = random_tensor({c, h, w}, rng), k = random_tensor({2, c, kh, kh}, rng);
    const auto g = kernels::make_conv_geometry(1, c, h, w, 2, kh, kh, stride, padding);
    // h' = floor((h_pad − kh)/stride) + 1
    const std::size_t h_pad = padding == kernels::Padding::same ? h + kh - 1 : h;
    CHECK(g.out_h == (h_pad - kh) / stride + 1);
    Tape t;
    const Var y = ad::conv2d(t, t.leaf(x), t.leaf(k), stride, padding);
    const Tensor want = naive_conv(x, k, stride, g.pad_top, g.pad_left, g.out_h, g.out_w);
    REQUIRE(t.value(y).shape() == want.shape());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(t.value(y)[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d: kernel larger than the padded input is rejected") {
  Tape t;
  CHECK_THROWS_AS(ad::conv2d(t, t.leaf(Tensor({1, 2, 2})), t.leaf(Tensor({1, 1, 3, 3})), 1,
                             kernels::Padding::valid),
                  ShapeError);
}

TEST_CASE("serial and parallel kernels are bit-identical") {
  Rng rng(21);
  // large enough to cross the OpenMP work threshold
  const std::size_t m = 96, k = 80, n = 72;
  const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
  Tensor s({m, n}), p({m, n});
  kernels::serial::matmul(a.data(), b.data(), s.data(), m, k, n);
  kernels::parallel::matmul(a.data(), b.data(), p.data(), m, k, n);
  CHECK(s == p);
  const Tensor bt = random_tensor({n, k}, rng), at = random_tensor({k, m}, rng);
  kernels::serial::matmul_nt(a.data(), bt.data(), s.data(), m, k, n);
  kernels::parallel::matmul_nt(a.data(), bt.data(), p.data(), m, k, n);
  CHECK(s == p);
  kernels::serial::matmul_tn(at.data(), b.data(), s.data(), m, k, n);
  kernels::parallel::matmul_tn(at.data(), b.data(), p.data(), m, k, n);
  CHECK(s == p);

  const auto g = kernels::make_conv_geometry(6, 3, 20, 20, 8, 3, 3, 1, kernels::Padding::same);
  const Tensor x = random_tensor({g.input_size()}, rng), kk = random_tensor({g.kernel_size()}, rng);
  const Tensor go = random_tensor({g.output_size()}, rng);
  Tensor ys({g.output_size()}), yp({g.output_size()});
  kernels::serial::conv2d_forward(g, x.data(), kk.data(), ys.data());
  kernels::parallel::conv2d_forward(g, x.data(), kk.data(), yp.data());
  CHECK(ys == yp);
  Tensor gis({g.input_size()}), gip({g.input_size()}), gks({g.kernel_size()}), gkp({g.kernel_size()});
  kernels::serial::conv2d_backward_input(g, go.data(), kk.data(), gis.data());
  kernels::parallel::conv2d_backward_input(g, go.data(), kk.data(), gip.data());
  kernels::serial::conv2d_backward_kernels(g, go.data(), x.data(), gks.data());
  kernels::parallel::conv2d_backward_kernels(g, go.data(), x.data(), gkp.data());
  CHECK(gis == gip);
  CHECK(gks == gkp);
}

TEST_CASE("elementwise examples") {
  Tape t;
  CHECK(t.value(ad::relu(t, t.leaf(Tensor::vector({-1, 2})))) == Tensor::vector({0, 2}));
  CHECK(t.value(ad::sigmoid(t, t.leaf(Tensor::vector({0}))))[0] == 0.5);
  const Tensor sm = t.value(ad::softmax(t, t.leaf(Tensor::vector({0, 0, 0}))));
  for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(t.value(ad::add_bias(t, t.leaf(Tensor({2, 3})), t.leaf(Tensor::vector({1, 2, 3})))) ==
        Tensor({2, 3}, {1, 2, 3, 1, 2, 3}));
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.value(ad::flatten(t, t.leaf(m))) == Tensor({6}, {1, 2, 3, 4, 5, 6}));
  CHECK(t.value(ad::reduce_mean(t, t.leaf(Tensor::vector({1, 2, 3, 6}))))[0] == 3.0);
}

TEST_CASE("add_bias rejects incompatible shapes") {
  Tape t;
  CHECK_THROWS_AS(ad::add_bias(t, t.leaf(Tensor({2, 3})), t.leaf(Tensor({2}))), ShapeError);
}

TEST_CASE("softmax rows sum to one and sigmoid stays inside (0,1)") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 7}, rng, -30, 30);
    const Tensor p = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    for (double v : x.data()) {
      CHECK(stable_sigmoid(v) > 0.0);
      CHECK(stable_sigmoid(v) < 1.0);
    }
  }
  CHECK(stable_sigmoid(-800) >= 0.0);
  CHECK(std::isfinite(stable_sigmoid(800)));
}

TEST_CASE("backward: mean of k weights gives 1/k") {
  Tape t;
  const Var w = t.parameter("w", Tensor({7}, 0.3));
  const auto g = t.backward(ad::reduce_mean(t, w));
  for (double v : g.parameters().at("w").data()) CHECK(v == doctest::Approx(1.0 / 7).epsilon(1e-15));
}

TEST_CASE("backward: BCE at zero logits with all-ones label") {
  Tape t;
  const Var z = t.leaf(Tensor({2}, 0.0));
  const auto g = t.backward(ad::bce_with_logits(t, z, Tensor({2}, 1.0)));
  for (double v : g.of(z).data()) CHECK(v == doctest::Approx(-0.25).epsilon(1e-15));
  // and the same value from central differences
  const double fd = finite_difference_check(
      [](Tape& tt, Var x) { return ad::bce_with_logits(tt, x, Tensor({2}, 1.0)); }, Tensor({2}), 1e-5);
  CHECK(fd <= 1e-8);
}

TEST_CASE("backward: unreachable parameter gets a zero gradient of its shape") {
  Tape t;
  const Var used = t.parameter("used", Tensor({3}, 1.0));
  t.parameter("unused", Tensor({2, 2}, 5.0));
  const auto g = t.backward(ad::sum_squares(t, used));
  CHECK(g.parameters().at("unused") == Tensor({2, 2}));
}

TEST_CASE("backward: non-scalar loss is rejected") {
  Tape t;
  const Var x = t.leaf(Tensor({3}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("backward is deterministic") {
  Rng rng(3);
  Tape t;
  const Var x = t.parameter("x", random_tensor({3, 4}, rng));
  const Var w = t.parameter("w", random_tensor({4, 2}, rng));
  const Var loss = ad::bce_with_logits(t, ad::matmul(t, ad::relu(t, x), w), Tensor({3, 2}, 1.0));
  const auto a = t.backward(loss), b = t.backward(loss);
  CHECK(a.parameters() == b.parameters());
}

TEST_CASE("finite_difference_check examples") {
  Rng rng(4);
  const Tensor x = random_tensor({6}, rng);
  CHECK(finite_difference_check([](Tape& t, Var v) { return ad::sum_squares(t, v); }, x, 1e-5) <= 1e-7);
  CHECK(finite_difference_check([](Tape& t, Var) { return t.leaf(Tensor::scalar(3.0)); }, x, 1e-5) ==
        0.0);
  const Tensor w = random_tensor({3, 3}, rng);
  CHECK(finite_difference_check(
            [w](Tape& t, Var v) { return ad::reduce_mean(t, ad::matmul(t, v, t.leaf(w))); },
            random_tensor({3, 3}, rng), 1e-5) <= 1e-5);
}

TEST_CASE("every op passes finite differences on random instances") {
  Rng rng(20190711);
  for (const auto& [name, make] : testutil::op_catalog()) {
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const auto c = make(rng);
      worst = std::max(worst, finite_difference_check(c.f, c.x, 1e-5));
    }
    INFO(name);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(8);
  for (const auto& [name, make] : testutil::op_catalog()) {
    const auto c = make(rng);
    Tape t;
    INFO(name);
    CHECK(t.value(c.f(t, t.leaf(c.x))).all_finite());
  }
}
