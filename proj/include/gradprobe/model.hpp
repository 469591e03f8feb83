#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradprobe/autodiff.hpp"
#include "gradprobe/kernels.hpp"
#include "gradprobe/tensor.hpp"

namespace gradprobe {

enum class LayerKind { dense, conv2d, relu, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // dense: output width; conv2d: output channels.
  std::size_t units = 0;
  // Optional declared input width (dense) or input channels (conv2d); 0 infers it.
  std::size_t inputs = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  kernels::Padding padding = kernels::Padding::valid;

  static LayerSpec dense(std::size_t units, std::size_t inputs = 0) {
    return {LayerKind::dense, units, inputs};
  }
  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1,
                        kernels::Padding padding = kernels::Padding::valid) {
    return {LayerKind::conv2d, channels, 0, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
};

struct ModelSpec {
  Shape input_shape;  // per sample, e.g. c×h×w or a flat width
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  /// conv2d(→8, 3×3) → relu → flatten → dense(→64) → relu → dense(→C).
  static ModelSpec reference(Shape input_shape, std::size_t classes);
};

/// One named weight or bias array. The unit over which gradient norms are taken.
struct ParameterSet {
  std::string name;
  Tensor values;
  std::size_t layer_index = 0;
};

class Model {
 public:
  /// Kaiming-uniform weights (bound √(6/fan_in)) and zero biases, drawn in
  /// parameter-set order. Throws ShapeError on incompatible layers.
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  /// Layer order, weight before bias. This order defines feature coordinates.
  const std::vector<ParameterSet>& parameter_sets() const { return params_; }
  std::vector<ParameterSet>& parameter_sets() { return params_; }
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  /// Records the forward pass on `tape`. Accepts one sample (input_shape) or a
  /// batch (n × input_shape); returns logits of shape [C] or [n×C].
  Var forward(Tape& tape, Var input) const;
  Tensor forward(const Tensor& input) const;

  /// Replaces parameter values; names and shapes must match this model.
  void load_parameters(const std::vector<ParameterSet>& sets);

 private:
  ModelSpec spec_;
  std::vector<ParameterSet> params_;
  // For each layer, index of its weight in params_ (or -1).
  std::vector<int> weight_index_;
};

}  // namespace gradprobe
