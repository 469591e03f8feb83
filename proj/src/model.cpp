#include "gradprobe/model.hpp"

#include <algorithm>
#include <cmath>

#include "gradprobe/rng.hpp"

namespace gradprobe {

ModelSpec ModelSpec::reference(Shape input_shape, std::size_t classes) {
  ModelSpec spec;
  spec.input_shape = std::move(input_shape);
  spec.classes = classes;
  spec.layers = {LayerSpec::conv(8, 3), LayerSpec::relu(), LayerSpec::flatten(),
                 LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(classes)};
  return spec;
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_shape.empty() || shape_size(spec.input_shape) == 0)
    throw ShapeError("model input shape must be non-empty");
  if (spec.classes == 0) throw ShapeError("model needs at least one class");

  Model model;
  model.spec_ = spec;
  Rng rng(seed);
  Shape current = spec.input_shape;
  std::size_t conv_count = 0, dense_count = 0;

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& layer = spec.layers[li];
    const std::string where = "layer " + std::to_string(li);
    model.weight_index_.push_back(-1);
    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (current.size() != 3)
          throw ShapeError(where + ": conv2d needs a c×h×w input, got " + shape_string(current));
        if (layer.inputs != 0 && layer.inputs != current[0])
          throw ShapeError(where + ": conv2d declares " + std::to_string(layer.inputs) +
                           " input channels but receives " + shape_string(current));
        if (layer.units == 0) throw ShapeError(where + ": conv2d needs output channels");
        const auto g = kernels::make_conv_geometry(1, current[0], current[1], current[2],
                                                   layer.units, layer.kernel, layer.kernel,
                                                   layer.stride, layer.padding);
        const std::string prefix = "conv" + std::to_string(++conv_count);
        Tensor w({layer.units, current[0], layer.kernel, layer.kernel});
        const double bound = std::sqrt(6.0 / static_cast<double>(current[0] * layer.kernel * layer.kernel));
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        model.weight_index_.back() = static_cast<int>(model.params_.size());
        model.params_.push_back({prefix + ".weight", std::move(w), li});
        model.params_.push_back({prefix + ".bias", Tensor({layer.units}), li});
        current = {layer.units, g.out_h, g.out_w};
        break;
      }
      case LayerKind::dense: {
        if (current.size() != 1)
          throw ShapeError(where + ": dense needs a flat input, got " + shape_string(current));
        if (layer.inputs != 0 && layer.inputs != current[0])
          throw ShapeError(where + ": dense declares " + std::to_string(layer.inputs) +
                           " inputs but receives " + shape_string(current));
        if (layer.units == 0) throw ShapeError(where + ": dense needs output units");
        const std::string prefix = "fc" + std::to_string(++dense_count);
        Tensor w({layer.units, current[0]});
        const double bound = std::sqrt(6.0 / static_cast<double>(current[0]));
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        model.weight_index_.back() = static_cast<int>(model.params_.size());
        model.params_.push_back({prefix + ".weight", std::move(w), li});
        model.params_.push_back({prefix + ".bias", Tensor({layer.units}), li});
        current = {layer.units};
        break;
      }
      case LayerKind::flatten:
        current = {shape_size(current)};
        break;
      case LayerKind::relu:
        break;
    }
  }
  if (current.size() != 1 || current[0] != spec.classes)
    throw ShapeError("model output " + shape_string(current) + " does not match " +
                     std::to_string(spec.classes) + " classes");
  return model;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& p : params_) names.push_back(p.name);
  return names;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

Var Model::forward(Tape& tape, Var input) const {
  const Shape& in = tape.value(input).shape();
  const std::size_t rank = spec_.input_shape.size();
  bool single = false;
  Var x = input;
  if (in == spec_.input_shape) {
    single = true;
    Shape batched = in;
    batched.insert(batched.begin(), 1);
    x = ad::reshape(tape, input, std::move(batched));
  } else if (in.size() != rank + 1 || !std::equal(in.begin() + 1, in.end(), spec_.input_shape.begin())) {
    throw ShapeError("model input " + shape_string(in) + " does not match expected " +
                     shape_string(spec_.input_shape));
  }

  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& layer = spec_.layers[li];
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const auto& w = params_[weight_index_[li]];
        const auto& b = params_[weight_index_[li] + 1];
        x = ad::conv2d(tape, x, tape.parameter(w.name, w.values), layer.stride, layer.padding);
        x = ad::add_bias(tape, x, tape.parameter(b.name, b.values));
        break;
      }
      case LayerKind::dense: {
        const auto& w = params_[weight_index_[li]];
        const auto& b = params_[weight_index_[li] + 1];
        const Var wt = ad::transpose(tape, tape.parameter(w.name, w.values));
        x = ad::add_bias(tape, ad::matmul(tape, x, wt), tape.parameter(b.name, b.values));
        break;
      }
      case LayerKind::relu:
        x = ad::relu(tape, x);
        break;
      case LayerKind::flatten:
        x = ad::flatten(tape, x, 1);
        break;
    }
  }
  return single ? ad::reshape(tape, x, {spec_.classes}) : x;
}

Tensor Model::forward(const Tensor& input) const {
  Tape tape;
  return tape.value(forward(tape, tape.leaf(input)));
}

void Model::load_parameters(const std::vector<ParameterSet>& sets) {
  if (sets.size() != params_.size())
    throw ShapeError("checkpoint has " + std::to_string(sets.size()) +
                     " parameter sets, model expects " + std::to_string(params_.size()));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].name != params_[i].name || sets[i].values.shape() != params_[i].values.shape())
      throw ShapeError("checkpoint parameter '" + sets[i].name + "' " +
                       shape_string(sets[i].values.shape()) + " does not match model parameter '" +
                       params_[i].name + "' " + shape_string(params_[i].values.shape()));
  }
  for (std::size_t i = 0; i < sets.size(); ++i) params_[i].values = sets[i].values;
}

}  // namespace gradprobe
