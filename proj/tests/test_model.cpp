#include <doctest.h>

#include <cmath>

#include "gradprobe/checkpoint.hpp"
#include "gradprobe/model.hpp"
#include "test_util.hpp"

using namespace gradprobe;
using testutil::random_tensor;

namespace {

ModelSpec dense_spec(std::size_t in, std::vector<LayerSpec> layers, std::size_t classes) {
  ModelSpec s;
  s.input_shape = {in};
  s.classes = classes;
  s.layers = std::move(layers);
  return s;
}

void zero_all(Model& m) {
  for (auto& p : m.parameter_sets())
    for (double& v : p.values.data()) v = 0.0;
}

}  // namespace

TEST_CASE("dense(4->3) has fc1.weight 3x4 and fc1.bias 3") {
  const Model m = Model::build(dense_spec(4, {LayerSpec::dense(3)}, 3), 1);
  REQUIRE(m.parameter_sets().size() == 2);
  CHECK(m.parameter_sets()[0].name == "fc1.weight");
  CHECK(m.parameter_sets()[0].values.shape() == Shape{3, 4});
  CHECK(m.parameter_sets()[1].name == "fc1.bias");
  CHECK(m.parameter_sets()[1].values.shape() == Shape{3});
}

TEST_CASE("incompatible declared widths are rejected") {
  CHECK_THROWS_AS(Model::build(dense_spec(4, {LayerSpec::dense(3, 4), LayerSpec::dense(2, 5)}, 2), 1),
                  ShapeError);
  // final width must equal the class count
  CHECK_THROWS_AS(Model::build(dense_spec(4, {LayerSpec::dense(3)}, 2), 1), ShapeError);
}

TEST_CASE("parameter set counts and order") {
  const Model two = Model::build(dense_spec(5, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(3)}, 3), 2);
  CHECK(two.parameter_sets().size() == 4);

  ModelSpec cs;
  cs.input_shape = {1, 8, 8};
  cs.classes = 3;
  cs.layers = {LayerSpec::conv(4, 3), LayerSpec::relu(), LayerSpec::conv(2, 3), LayerSpec::relu(),
               LayerSpec::flatten(), LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3)};
  const Model conv = Model::build(cs, 3);
  CHECK(conv.parameter_names() ==
        std::vector<std::string>{"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                                 "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"});
  CHECK(conv.parameter_names() == conv.parameter_names());

  const Model ref = Model::build(ModelSpec::reference({1, 6, 6}, 4), 4);
  CHECK(ref.parameter_sets().size() == 6);
  CHECK(ref.parameter_count() == 8 * 9 + 8 + 64 * 8 * 16 + 64 + 4 * 64 + 4);
}

TEST_CASE("build is deterministic and initialization follows Kaiming-uniform") {
  const auto spec = ModelSpec::reference({3, 10, 10}, 5);
  const Model a = Model::build(spec, 42), b = Model::build(spec, 42), c = Model::build(spec, 43);
  for (std::size_t i = 0; i < a.parameter_sets().size(); ++i)
    CHECK(a.parameter_sets()[i].values == b.parameter_sets()[i].values);
  CHECK_FALSE(a.parameter_sets()[0].values == c.parameter_sets()[0].values);

  for (const auto& p : a.parameter_sets()) {
    if (p.values.rank() == 1) {
      CHECK(p.values == Tensor(p.values.shape()));
      continue;
    }
    const std::size_t fan_in = p.values.size() / p.values.dim(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double mx = 0;
    for (double v : p.values.data()) mx = std::max(mx, std::abs(v));
    CHECK(mx <= bound);
    CHECK(mx > 0.5 * bound);
  }
}

TEST_CASE("forward: zero parameters give zero logits, identity layer gives the input") {
  Model m = Model::build(ModelSpec::reference({1, 5, 5}, 3), 1);
  zero_all(m);
  Rng rng(1);
  CHECK(m.forward(random_tensor({1, 5, 5}, rng, 0, 1)) == Tensor({3}));

  Model id = Model::build(dense_spec(3, {LayerSpec::dense(3)}, 3), 1);
  id.parameter_sets()[0].values = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  id.parameter_sets()[1].values = Tensor({3});
  const Tensor x = Tensor::vector({0.3, -1.5, 2.0});
  CHECK(id.forward(x) == x);
}

TEST_CASE("forward matches a straight-line re-evaluation") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = Model::build(dense_spec(5, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(3)}, 3),
                                 static_cast<std::uint64_t>(trial));
    const Tensor x = random_tensor({5}, rng);
    const auto& p = m.parameter_sets();
    std::vector<double> h(4);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = p[1].values[i];
      for (std::size_t j = 0; j < 5; ++j) s += p[0].values.at(i, j) * x[j];
      h[i] = s > 0 ? s : 0;
    }
    const Tensor y = m.forward(x);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = p[3].values[i];
      for (std::size_t j = 0; j < 4; ++j) s += p[2].values.at(i, j) * h[j];
      CHECK(std::abs(y[i] - s) <= 1e-12);
    }
  }
}

TEST_CASE("batched forward equals per-sample forward") {
  Rng rng(10);
  const Model m = Model::build(ModelSpec::reference({2, 6, 6}, 3), 5);
  std::vector<Tensor> xs;
  Tensor batch({4, 2, 6, 6});
  for (std::size_t i = 0; i < 4; ++i) {
    xs.push_back(random_tensor({2, 6, 6}, rng, 0, 1));
    std::copy(xs.back().data().begin(), xs.back().data().end(), batch.data().begin() + i * 72);
  }
  const Tensor y = m.forward(batch);
  REQUIRE(y.shape() == Shape{4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor yi = m.forward(xs[i]);
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(i, c) == doctest::Approx(yi[c]).epsilon(1e-13));
  }
}

TEST_CASE("forward rejects a wrong input shape and does not mutate parameters") {
  const Model m = Model::build(ModelSpec::reference({1, 6, 6}, 3), 5);
  const auto before = m.parameter_sets();
  CHECK_THROWS_AS(m.forward(Tensor({1, 7, 6})), ShapeError);
  m.forward(Tensor({1, 6, 6}, 0.5));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].values == m.parameter_sets()[i].values);
}

TEST_CASE("load_parameters checks names and shapes") {
  Model m = Model::build(ModelSpec::reference({1, 6, 6}, 3), 1);
  auto sets = Model::build(ModelSpec::reference({1, 6, 6}, 3), 2).parameter_sets();
  m.load_parameters(sets);
  CHECK(m.parameter_sets()[0].values == sets[0].values);
  sets[2].name = "fc9.weight";
  CHECK_THROWS_AS(m.load_parameters(sets), ShapeError);
  CHECK_THROWS_AS(m.load_parameters(Model::build(ModelSpec::reference({1, 6, 6}, 4), 1).parameter_sets()),
                  ShapeError);
}

TEST_CASE("checkpoint round trip is exact and the layout is GPRB1") {
  const Model m = Model::build(ModelSpec::reference({1, 5, 5}, 3), 7);
  const std::string bytes = encode_checkpoint(m.parameter_sets());
  CHECK(bytes.substr(0, 5) == "GPRB1");
  CHECK(bytes.substr(5, 4) == std::string("\x06\x00\x00\x00", 4));  // u32 LE set count
  CHECK(bytes.substr(9, 4) == std::string("\x0c\x00\x00\x00", 4));  // name length 12
  CHECK(bytes.substr(13, 12) == "conv1.weight");
  CHECK(bytes.substr(25, 4) == std::string("\x04\x00\x00\x00", 4));  // rank 4
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 6);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == m.parameter_sets()[i].name);
    CHECK(back[i].values == m.parameter_sets()[i].values);
  }
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint decoding errors") {
  const std::string bytes = encode_checkpoint(Model::build(ModelSpec::reference({1, 5, 5}, 3), 7).parameter_sets());
  CHECK_THROWS_AS(decode_checkpoint("GPRB2" + bytes.substr(5)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(""), FormatError);
}

TEST_CASE("save/load checkpoint through the filesystem") {
  const auto dir = testutil::scratch_dir("ckpt");
  const Model m = Model::build(ModelSpec::reference({1, 5, 5}, 3), 7);
  save_checkpoint(dir / "sub" / "m.gprb", m.parameter_sets());
  CHECK_FALSE(std::filesystem::exists(dir / "sub" / "m.gprb.tmp"));
  const auto back = load_checkpoint(dir / "sub" / "m.gprb");
  CHECK(back.size() == 6);
  CHECK_THROWS(load_checkpoint(dir / "missing.gprb"));
}
