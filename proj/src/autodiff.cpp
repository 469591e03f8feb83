#include "gradprobe/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace gradprobe {

Tensor& Tape::Sink::at(std::size_t id) {
  auto& slot = grads_[id];
  if (!slot) slot.emplace(tape_.nodes_[id].value.shape(), 0.0);
  return *slot;
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, nullptr, {}, false});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(std::string name, Tensor value) {
  nodes_.push_back(Node{"parameter", std::move(value), {}, nullptr, std::move(name), true});
  return Var{nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn backward) {
  for (std::size_t in : inputs)
    if (in >= nodes_.size()) throw Error(op + ": input node " + std::to_string(in) + " not on tape");
  nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward),
                        {}, false});
  return Var{nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  const Tensor& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1)
    throw ShapeError("backward needs a scalar loss, got shape " + shape_string(lv.shape()));

  Sink sink(*this);
  sink.at(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!sink.touched(id)) continue;
    const Node& node = nodes_[id];
    if (node.backward) node.backward(*this, *sink.grads_[id], sink);
  }

  Gradients out;
  out.grads_.reserve(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (sink.grads_[id])
      out.grads_.push_back(std::move(*sink.grads_[id]));
    else
      out.grads_.emplace_back(nodes_[id].value.shape(), 0.0);
    if (nodes_[id].is_parameter) out.by_name_[nodes_[id].name] = out.grads_.back();
  }
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) return Tensor(x.shape(), 1.0);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.size() / cols : 0;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* out = y.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += out[c] = std::exp(in[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[c] /= total;
  }
  return y;
}

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void require_rank(const Tensor& v, std::size_t rank, const char* op) {
  if (v.rank() != rank)
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_string(v.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

std::size_t bias_axis(const Tensor& x) {
  if (x.rank() == 3) return 0;
  if (x.rank() == 4) return 1;
  return x.rank() == 0 ? 0 : x.rank() - 1;
}

}  // namespace

namespace ad {

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul shape mismatch: " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::parallel::matmul(av.data(), bv.data(), out.data(), m, k, n);
  return t.record("matmul", std::move(out), {a.id, b.id},
                  [a, b, m, k, n](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    Tensor ga({m, k});
                    kernels::parallel::matmul_nt(g.data(), bv.data(), ga.data(), m, n, k);
                    accumulate(sink.at(a.id), ga);
                    Tensor gb({k, n});
                    kernels::parallel::matmul_tn(av.data(), g.data(), gb.data(), k, m, n);
                    accumulate(sink.at(b.id), gb);
                  });
}

Var transpose(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  require_rank(av, 2, "transpose");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return t.record("transpose", std::move(out), {a.id},
                  [a, r, c](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    Tensor& ga = sink.at(a.id);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
                  });
}

Var conv2d(Tape& t, Var input, Var kern, std::size_t stride, kernels::Padding padding) {
  const Tensor& in = t.value(input);
  const Tensor& kv = t.value(kern);
  if (in.rank() != 3 && in.rank() != 4)
    throw ShapeError("conv2d input must be c×h×w or n×c×h×w, got " + shape_string(in.shape()));
  require_rank(kv, 4, "conv2d kernels");
  const bool batched = in.rank() == 4;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? in.dim(0) : 1;
  if (kv.dim(1) != in.dim(off))
    throw ShapeError("conv2d channel mismatch: input " + shape_string(in.shape()) + ", kernels " +
                     shape_string(kv.shape()));
  const auto g = kernels::make_conv_geometry(batch, in.dim(off), in.dim(off + 1), in.dim(off + 2),
                                             kv.dim(0), kv.dim(2), kv.dim(3), stride, padding);
  Shape out_shape = {g.out_channels, g.out_h, g.out_w};
  if (batched) out_shape.insert(out_shape.begin(), batch);
  Tensor out(out_shape);
  kernels::parallel::conv2d_forward(g, in.data(), kv.data(), out.data());
  return t.record("conv2d", std::move(out), {input.id, kern.id},
                  [input, kern, g](const Tape& tp, const Tensor& grad, Tape::Sink& sink) {
                    kernels::parallel::conv2d_backward_input(g, grad.data(), tp.value(kern).data(),
                                                             sink.at(input.id).data());
                    kernels::parallel::conv2d_backward_kernels(
                        g, grad.data(), tp.value(input).data(), sink.at(kern.id).data());
                  });
}

Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record("relu", std::move(out), {x.id},
                  [x](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    // Subgradient 0 at exactly 0.
                    const auto xv = tp.value(x).data();
                    auto gx = sink.at(x.id).data();
                    for (std::size_t i = 0; i < gx.size(); ++i)
                      if (xv[i] > 0.0) gx[i] += g[i];
                  });
}

Var sigmoid(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data()) v = stable_sigmoid(v);
  const std::size_t self = t.size();
  return t.record("sigmoid", std::move(out), {x.id},
                  [x, self](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const auto y = tp.value(Var{self}).data();
                    auto gx = sink.at(x.id).data();
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
                  });
}

Var softmax(Tape& t, Var x) {
  Tensor out = softmax_rows(t.value(x));
  const std::size_t self = t.size();
  return t.record("softmax", std::move(out), {x.id},
                  [x, self](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const Tensor& y = tp.value(Var{self});
                    Tensor& gx = sink.at(x.id);
                    if (y.rank() == 0) return;
                    const std::size_t cols = y.shape().back();
                    for (std::size_t r = 0; cols && r < y.size() / cols; ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                      for (std::size_t c = 0; c < cols; ++c)
                        gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                    }
                  });
}

Var add_bias(Tape& t, Var x, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  const std::size_t axis = bias_axis(xv);
  if (xv.rank() == 0 || bv.rank() != 1 || bv.size() != xv.dim(axis))
    throw ShapeError("add_bias cannot broadcast " + shape_string(bv.shape()) + " over " +
                     shape_string(xv.shape()));
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < xv.rank(); ++a) inner *= xv.dim(a);
  const std::size_t channels = bv.size();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[(i / inner) % channels];
  return t.record("add_bias", std::move(out), {x.id, b.id},
                  [x, b, inner, channels](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    accumulate(sink.at(x.id), g);
                    Tensor& gb = sink.at(b.id);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[(i / inner) % channels] += g[i];
                  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x.id},
                  [x](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    auto gx = sink.at(x.id).data();
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                  });
}

Var flatten(Tape& t, Var x, std::size_t start_axis) {
  const Shape& s = t.value(x).shape();
  if (start_axis > s.size())
    throw ShapeError("flatten start axis " + std::to_string(start_axis) + " beyond " +
                     shape_string(s));
  Shape flat(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(start_axis));
  std::size_t rest = 1;
  for (std::size_t a = start_axis; a < s.size(); ++a) rest *= s[a];
  flat.push_back(rest);
  return reshape(t, x, std::move(flat));
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor out = t.value(a);
  accumulate(out, t.value(b));
  return t.record("add", std::move(out), {a.id, b.id},
                  [a, b](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    accumulate(sink.at(a.id), g);
                    accumulate(sink.at(b.id), g);
                  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Tensor out = t.value(a);
  const auto bv = t.value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record("mul", std::move(out), {a.id, b.id},
                  [a, b](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const auto av = tp.value(a).data();
                    const auto bv = tp.value(b).data();
                    auto ga = sink.at(a.id).data();
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                    auto gb = sink.at(b.id).data();
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                  });
}

Var scale(Tape& t, Var x, double factor) {
  Tensor out = t.value(x);
  for (double& v : out.data()) v *= factor;
  return t.record("scale", std::move(out), {x.id},
                  [x, factor](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    auto gx = sink.at(x.id).data();
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
                  });
}

Var reduce_sum(Tape& t, Var x) {
  double total = 0.0;
  for (double v : t.value(x).data()) total += v;
  return t.record("reduce_sum", Tensor::scalar(total), {x.id},
                  [x](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    for (double& v : sink.at(x.id).data()) v += g[0];
                  });
}

Var reduce_mean(Tape& t, Var x) {
  const std::size_t n = t.value(x).size();
  if (n == 0) throw ShapeError("reduce_mean of an empty tensor");
  double total = 0.0;
  for (double v : t.value(x).data()) total += v;
  return t.record("reduce_mean", Tensor::scalar(total / static_cast<double>(n)), {x.id},
                  [x, n](const Tape&, const Tensor& g, Tape::Sink& sink) {
                    const double share = g[0] / static_cast<double>(n);
                    for (double& v : sink.at(x.id).data()) v += share;
                  });
}

Var sum_squares(Tape& t, Var x) {
  double total = 0.0;
  for (double v : t.value(x).data()) total += v * v;
  return t.record("sum_squares", Tensor::scalar(total), {x.id},
                  [x](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const auto xv = tp.value(x).data();
                    auto gx = sink.at(x.id).data();
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xv[i] * g[0];
                  });
}

Var bce_with_logits(Tape& t, Var logits, const Tensor& targets) {
  const Tensor& z = t.value(logits);
  if (z.size() != targets.size() || z.size() == 0)
    throw ShapeError("bce_with_logits length mismatch: logits " + shape_string(z.shape()) +
                     ", targets " + shape_string(targets.shape()));
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  return t.record("bce_with_logits", Tensor::scalar(total / n), {logits.id},
                  [logits, targets, n](const Tape& tp, const Tensor& g, Tape::Sink& sink) {
                    const Tensor& z = tp.value(logits);
                    auto gz = sink.at(logits.id).data();
                    for (std::size_t i = 0; i < gz.size(); ++i)
                      gz[i] += g[0] * (stable_sigmoid(z[i]) - targets[i]) / n;
                  });
}

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = t.value(logits);
  require_rank(z, 2, "softmax_cross_entropy");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  if (labels.size() != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (std::size_t label : labels)
    if (label >= cols)
      throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(cols) +
                  " classes");
  Tensor probs = softmax_rows(z);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
    total += mx + std::log(sum) - row[labels[r]];
  }
  return t.record("softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(rows)),
                  {logits.id},
                  [logits, labels, probs = std::move(probs), rows, cols](
                      const Tape&, const Tensor& g, Tape::Sink& sink) {
                    Tensor& gz = sink.at(logits.id);
                    const double share = g[0] / static_cast<double>(rows);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        gz[r * cols + c] +=
                            share * (probs[r * cols + c] - (c == labels[r] ? 1.0 : 0.0));
                  });
}

}  // namespace ad

double finite_difference_check(const TapeFunction& f, const Tensor& x, double eps) {
  Tape tape;
  const Var input = tape.leaf(x);
  const Var out = f(tape, input);
  const Tensor analytic = tape.backward(out).of(input);

  auto evaluate = [&f](const Tensor& at) {
    Tape t;
    return t.value(f(t, t.leaf(at)))[0];
  };

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace gradprobe
