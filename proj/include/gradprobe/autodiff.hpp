#pragma once

// Reverse-mode automatic differentiation over a per-forward-pass tape.
//
// Ops append nodes in execution order, so node order is a topological order of
// the graph and backward is a single reverse sweep. A tape is owned by one
// thread; distinct samples use distinct tapes.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradprobe/kernels.hpp"
#include "gradprobe/tensor.hpp"

namespace gradprobe {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape;

/// Per-node gradient storage produced by one backward sweep.
class Gradients {
 public:
  /// d(loss)/d(v), zeros when v does not influence the loss.
  const Tensor& of(Var v) const { return grads_.at(v.id); }
  /// Gradients of every named parameter leaf, keyed by name.
  const std::map<std::string, Tensor>& parameters() const { return by_name_; }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::map<std::string, Tensor> by_name_;
};

class Tape {
 public:
  // Accumulator passed to backward closures; allocates zeros on first touch.
  class Sink {
   public:
    explicit Sink(const Tape& tape) : tape_(tape), grads_(tape.nodes_.size()) {}
    Tensor& at(std::size_t id);
    bool touched(std::size_t id) const { return grads_[id].has_value(); }

   private:
    friend class Tape;
    const Tape& tape_;
    std::vector<std::optional<Tensor>> grads_;
  };

  using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, Sink&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no name; gradients are still available through Gradients::of.
  Var leaf(Tensor value);
  /// Named leaf reported by Gradients::parameters.
  Var parameter(std::string name, Tensor value);

  /// Records a computed node. `inputs` must already be on this tape.
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar (single-element) node. Throws ShapeError
  /// when `loss` has more than one element.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string name;
    bool is_parameter = false;
  };
  std::vector<Node> nodes_;
};

// Differentiable ops. Each returns a node recorded on the same tape.
namespace ad {

Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
/// Cross-correlation. Input is c×h×w or n×c×h×w; kernels are o×c×kh×kw.
Var conv2d(Tape& t, Var input, Var kernels, std::size_t stride, kernels::Padding padding);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
/// Softmax over the last axis.
Var softmax(Tape& t, Var x);
/// Adds b along the channel axis (axis 0 for rank 3, axis 1 for rank 4) or the
/// trailing axis otherwise.
Var add_bias(Tape& t, Var x, Var b);
/// Collapses axes [start_axis, rank) into one.
Var flatten(Tape& t, Var x, std::size_t start_axis = 0);
Var reshape(Tape& t, Var x, Shape shape);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double factor);
Var reduce_sum(Tape& t, Var x);
Var reduce_mean(Tape& t, Var x);
Var sum_squares(Tape& t, Var x);
/// Mean over all elements of max(z,0) − z·y + log(1 + e^{−|z|}); the sigmoid
/// binary cross-entropy between logits z and targets y.
Var bce_with_logits(Tape& t, Var logits, const Tensor& targets);
/// Mean over rows of −log softmax(logits)[label]. Logits are n×C.
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<std::size_t>& labels);

}  // namespace ad

double stable_sigmoid(double x);
/// Row-wise softmax over the last axis of a tensor.
Tensor softmax_rows(const Tensor& x);

/// Scalar function of one tensor, expressed on a tape.
using TapeFunction = std::function<Var(Tape&, Var)>;

/// Worst relative error between the tape gradient of f at x and central
/// differences with step eps. Relative error uses max(|analytic|, |numeric|, 1e-8)
/// as its denominator.
double finite_difference_check(const TapeFunction& f, const Tensor& x, double eps);

}  // namespace gradprobe
