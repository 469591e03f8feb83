#pragma once

// Every differentiable op wrapped as a scalar function of one random input,
// for finite-difference checking. Non-scalar ops are reduced through a fixed
// random weighting, so no output coordinate is invisible to the check (a plain
// sum would hide softmax entirely: its rows always sum to 1).

#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace testutil {

struct OpCase {
  std::string name;
  Tensor x;
  gradprobe::TapeFunction f;
};

using OpFactory = std::function<OpCase(Rng&)>;

inline gradprobe::Var weighted_sum(gradprobe::Tape& t, gradprobe::Var v, const Tensor& w) {
  return gradprobe::ad::reduce_sum(t, gradprobe::ad::mul(t, v, t.leaf(w)));
}

// Wraps a unary op as x ↦ Σ w ⊙ op(x), with w drawn to match op's output shape.
inline OpCase unary(std::string name, Tensor x, Rng& rng,
                    std::function<gradprobe::Var(gradprobe::Tape&, gradprobe::Var)> op) {
  gradprobe::Tape probe;
  const Shape out = probe.value(op(probe, probe.leaf(x))).shape();
  Tensor w = random_tensor(out, rng);
  return {std::move(name), std::move(x),
          [op, w](gradprobe::Tape& t, gradprobe::Var v) { return weighted_sum(t, op(t, v), w); }};
}

inline Tensor away_from_zero(Tensor x, double margin) {
  for (double& v : x.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin - 0.1 : margin + 0.1;
  return x;
}

inline std::vector<std::pair<std::string, OpFactory>> op_catalog() {
  namespace ad = gradprobe::ad;
  using gradprobe::Tape;
  using gradprobe::Var;
  using gradprobe::kernels::Padding;
  std::vector<std::pair<std::string, OpFactory>> ops;

  ops.emplace_back("matmul/lhs", [](Rng& rng) {
    const Tensor b = random_tensor({3, 2}, rng);
    return unary("matmul/lhs", random_tensor({4, 3}, rng), rng,
                 [b](Tape& t, Var a) { return ad::matmul(t, a, t.leaf(b)); });
  });
  ops.emplace_back("matmul/rhs", [](Rng& rng) {
    const Tensor a = random_tensor({4, 3}, rng);
    return unary("matmul/rhs", random_tensor({3, 2}, rng), rng,
                 [a](Tape& t, Var b) { return ad::matmul(t, t.leaf(a), b); });
  });
  ops.emplace_back("transpose", [](Rng& rng) {
    return unary("transpose", random_tensor({2, 5}, rng), rng,
                 [](Tape& t, Var a) { return ad::transpose(t, a); });
  });
  struct ConvVariant {
    const char* name;
    Shape in;
    std::size_t stride;
    Padding padding;
  };
  for (const ConvVariant& cv : {ConvVariant{"conv2d/valid", {2, 5, 5}, 1, Padding::valid},
                                ConvVariant{"conv2d/same", {2, 4, 5}, 1, Padding::same},
                                ConvVariant{"conv2d/stride2", {2, 6, 5}, 2, Padding::valid},
                                ConvVariant{"conv2d/batch", {2, 2, 4, 4}, 1, Padding::same}}) {
    const std::size_t channels = cv.in.size() == 4 ? cv.in[1] : cv.in[0];
    ops.emplace_back(std::string(cv.name) + "/input", [cv, channels](Rng& rng) {
      const Tensor k = random_tensor({3, channels, 3, 3}, rng);
      return unary(std::string(cv.name) + "/input", random_tensor(cv.in, rng), rng,
                   [k, cv](Tape& t, Var x) { return ad::conv2d(t, x, t.leaf(k), cv.stride, cv.padding); });
    });
    ops.emplace_back(std::string(cv.name) + "/kernels", [cv, channels](Rng& rng) {
      const Tensor x = random_tensor(cv.in, rng);
      return unary(std::string(cv.name) + "/kernels", random_tensor({3, channels, 3, 3}, rng), rng,
                   [x, cv](Tape& t, Var k) { return ad::conv2d(t, t.leaf(x), k, cv.stride, cv.padding); });
    });
  }
  ops.emplace_back("relu", [](Rng& rng) {
    // kink excluded: every coordinate is at least 1e-3 away from 0
    return unary("relu", away_from_zero(random_tensor({3, 4}, rng), 1e-3), rng,
                 [](Tape& t, Var x) { return ad::relu(t, x); });
  });
  ops.emplace_back("sigmoid", [](Rng& rng) {
    return unary("sigmoid", random_tensor({3, 4}, rng), rng,
                 [](Tape& t, Var x) { return ad::sigmoid(t, x); });
  });
  ops.emplace_back("softmax", [](Rng& rng) {
    return unary("softmax", random_tensor({3, 4}, rng), rng,
                 [](Tape& t, Var x) { return ad::softmax(t, x); });
  });
  for (const Shape& s : {Shape{5}, Shape{3, 5}, Shape{5, 2, 3}, Shape{2, 5, 2, 2}}) {
    const std::string tag = "add_bias/rank" + std::to_string(s.size());
    const std::size_t axis_len = 5;
    ops.emplace_back(tag + "/x", [s, tag](Rng& rng) {
      const Tensor b = random_tensor({axis_len}, rng);
      return unary(tag + "/x", random_tensor(s, rng), rng,
                   [b](Tape& t, Var x) { return ad::add_bias(t, x, t.leaf(b)); });
    });
    ops.emplace_back(tag + "/b", [s, tag](Rng& rng) {
      const Tensor x = random_tensor(s, rng);
      return unary(tag + "/b", random_tensor({axis_len}, rng), rng,
                   [x](Tape& t, Var b) { return ad::add_bias(t, t.leaf(x), b); });
    });
  }
  ops.emplace_back("flatten", [](Rng& rng) {
    return unary("flatten", random_tensor({2, 3, 2}, rng), rng,
                 [](Tape& t, Var x) { return ad::flatten(t, x, 1); });
  });
  ops.emplace_back("reshape", [](Rng& rng) {
    return unary("reshape", random_tensor({2, 6}, rng), rng,
                 [](Tape& t, Var x) { return ad::reshape(t, x, {3, 4}); });
  });
  ops.emplace_back("add", [](Rng& rng) {
    const Tensor b = random_tensor({3, 3}, rng);
    return unary("add", random_tensor({3, 3}, rng), rng,
                 [b](Tape& t, Var a) { return ad::add(t, a, t.leaf(b)); });
  });
  ops.emplace_back("mul", [](Rng& rng) {
    const Tensor b = random_tensor({3, 3}, rng);
    return unary("mul", random_tensor({3, 3}, rng), rng,
                 [b](Tape& t, Var a) { return ad::mul(t, a, t.leaf(b)); });
  });
  ops.emplace_back("mul/self", [](Rng& rng) {
    return unary("mul/self", random_tensor({3, 3}, rng), rng,
                 [](Tape& t, Var a) { return ad::mul(t, a, a); });
  });
  ops.emplace_back("scale", [](Rng& rng) {
    const double k = rng.uniform(-3.0, 3.0);
    return unary("scale", random_tensor({4}, rng), rng,
                 [k](Tape& t, Var x) { return ad::scale(t, x, k); });
  });
  ops.emplace_back("reduce_sum", [](Rng& rng) {
    return OpCase{"reduce_sum", random_tensor({3, 4}, rng),
                  [](Tape& t, Var x) { return ad::reduce_sum(t, ad::mul(t, x, x)); }};
  });
  ops.emplace_back("reduce_mean", [](Rng& rng) {
    return OpCase{"reduce_mean", random_tensor({3, 4}, rng),
                  [](Tape& t, Var x) { return ad::reduce_mean(t, ad::sigmoid(t, x)); }};
  });
  ops.emplace_back("sum_squares", [](Rng& rng) {
    return OpCase{"sum_squares", random_tensor({5}, rng),
                  [](Tape& t, Var x) { return ad::sum_squares(t, x); }};
  });
  ops.emplace_back("bce_with_logits", [](Rng& rng) {
    Tensor y({2, 4});
    for (double& v : y.data()) v = rng.below(2) ? 1.0 : 0.0;
    return OpCase{"bce_with_logits", random_tensor({2, 4}, rng),
                  [y](Tape& t, Var z) { return ad::bce_with_logits(t, z, y); }};
  });
  ops.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    std::vector<std::size_t> labels(3);
    for (auto& l : labels) l = rng.below(4);
    return OpCase{"softmax_cross_entropy", random_tensor({3, 4}, rng),
                  [labels](Tape& t, Var z) { return ad::softmax_cross_entropy(t, z, labels); }};
  });
  ops.emplace_back("chain/dense-relu-bce", [](Rng& rng) {
    const Tensor w1 = random_tensor({4, 3}, rng), w2 = random_tensor({3, 2}, rng);
    return OpCase{"chain/dense-relu-bce", away_from_zero(random_tensor({2, 4}, rng), 1e-3),
                  [w1, w2](Tape& t, Var x) {
                    const Var h = ad::sigmoid(t, ad::matmul(t, x, t.leaf(w1)));
                    return ad::bce_with_logits(t, ad::matmul(t, h, t.leaf(w2)), Tensor({2, 2}, 1.0));
                  }};
  });
  return ops;
}

}  // namespace testutil
