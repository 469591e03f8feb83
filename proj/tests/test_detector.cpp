#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "gradprobe/detector.hpp"
#include "gradprobe/metrics.hpp"
#include "test_util.hpp"

using namespace gradprobe;

namespace {

// Familiar rows are N(0,1)^d; unfamiliar rows add `offset` to coordinate 0.
DetectionData gaussian_data(std::size_t per_class, std::size_t dim, double offset, std::uint64_t seed) {
  Rng rng(seed);
  DetectionData d;
  for (int cls : {0, 1})
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> row(dim);
      for (double& v : row) v = rng.normal();
      if (cls == 1) row[0] += offset;
      d.rows.push_back(row);
      d.labels.push_back(cls);
    }
  return d;
}

DetectorConfig quick_config(std::uint64_t seed, std::size_t epochs = 20) {
  DetectorConfig c;
  c.optimizer = {0.5, epochs, 32, seed};
  c.hidden = 16;
  return c;
}

std::vector<std::size_t> all_rows(const DetectionData& d) {
  std::vector<std::size_t> r(d.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("split sizes are 40/40/20 per class") {
  std::vector<int> labels(200);
  for (std::size_t i = 100; i < 200; ++i) labels[i] = 1;
  const auto s = split_40_40_20(labels, 1);
  for (int cls : {0, 1}) {
    auto count = [&](const std::vector<std::size_t>& part) {
      return std::count_if(part.begin(), part.end(), [&](std::size_t i) { return labels[i] == cls; });
    };
    CHECK(count(s.train) == 40);
    CHECK(count(s.validation) == 40);
    CHECK(count(s.test) == 20);
  }
  std::vector<int> small(20);
  for (std::size_t i = 10; i < 20; ++i) small[i] = 1;
  const auto t = split_40_40_20(small, 1);
  CHECK(t.train.size() == 8);
  CHECK(t.validation.size() == 8);
  CHECK(t.test.size() == 4);
}

TEST_CASE("split is disjoint, covering, within one of 40/40/20 and deterministic") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n0 = 5 + rng.below(60), n1 = 5 + rng.below(60);
    std::vector<int> labels(n0, 0);
    labels.insert(labels.end(), n1, 1);
    rng.shuffle(labels);
    const auto s = split_40_40_20(labels, static_cast<std::uint64_t>(trial));
    std::multiset<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == labels.size());
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == labels.size());
    for (int cls : {0, 1}) {
      const double n = cls ? static_cast<double>(n1) : static_cast<double>(n0);
      auto count = [&](const std::vector<std::size_t>& part) {
        return static_cast<double>(
            std::count_if(part.begin(), part.end(), [&](std::size_t i) { return labels[i] == cls; }));
      };
      CHECK(std::abs(count(s.train) - 0.4 * n) <= 1.0);
      CHECK(std::abs(count(s.validation) - 0.4 * n) <= 1.0);
      CHECK(std::abs(count(s.test) - 0.2 * n) <= 1.0);
    }
    CHECK(split_json(split_40_40_20(labels, static_cast<std::uint64_t>(trial))) == split_json(s));
  }
}

TEST_CASE("split needs five samples per class") {
  std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1};
  CHECK_THROWS(split_40_40_20(labels, 1));
}

TEST_CASE("standardizer uses only the given rows and floors the std") {
  DetectionData d;
  d.rows = {{1, 5}, {3, 5}, {100, -7}};
  d.labels = {0, 0, 1};
  const auto s = Standardizer::fit(d, {0, 1});
  CHECK(s.mean == std::vector<double>{2, 5});
  CHECK(s.stddev[0] == 1.0);
  CHECK(s.stddev[1] == 1e-8);
  CHECK(s.apply(std::vector<double>{4, 5}) == std::vector<double>{2, 0});
  CHECK_THROWS_AS(s.apply(std::vector<double>{1}), ShapeError);
}

TEST_CASE("separable features give validation AUROC 1") {
  const auto d = gaussian_data(50, 4, 10.0, 1);
  const auto det = train_detector(d, split_40_40_20(d.labels, 2), quick_config(3));
  CHECK(det.validation_auroc == 1.0);
  CHECK(det.best_epoch >= 1);
}

TEST_CASE("training is deterministic") {
  const auto d = gaussian_data(40, 3, 1.0, 4);
  const auto split = split_40_40_20(d.labels, 5);
  const auto a = train_detector(d, split, quick_config(6)), b = train_detector(d, split, quick_config(6));
  CHECK(a.scores(d, split.test) == b.scores(d, split.test));
}

TEST_CASE("test rows are never read") {
  auto d = gaussian_data(40, 3, 1.5, 7);
  const auto split = split_40_40_20(d.labels, 8);
  const auto clean = train_detector(d, split, quick_config(9));
  for (std::size_t r : split.test)
    for (double& v : d.rows[r]) v = NAN;
  const auto poisoned = train_detector(d, split, quick_config(9));
  CHECK(poisoned.validation_auroc == clean.validation_auroc);
  CHECK(poisoned.best_epoch == clean.best_epoch);
  CHECK(poisoned.standardizer.mean == clean.standardizer.mean);
  for (std::size_t i = 0; i < clean.net.parameter_sets().size(); ++i)
    CHECK(poisoned.net.parameter_sets()[i].values == clean.net.parameter_sets()[i].values);
}

TEST_CASE("permuting validation and test rows changes no reported score") {
  const auto d = gaussian_data(40, 3, 1.0, 10);
  const auto split = split_40_40_20(d.labels, 11);
  const auto base = train_detector(d, split, quick_config(12));

  // Swap rows among validation positions and among test positions.
  DetectionData p = d;
  Rng rng(13);
  std::vector<std::size_t> map = all_rows(d);
  for (const auto* part : {&split.validation, &split.test}) {
    std::vector<std::size_t> shuffled = *part;
    rng.shuffle(shuffled);
    for (std::size_t i = 0; i < part->size(); ++i) {
      p.rows[(*part)[i]] = d.rows[shuffled[i]];
      p.labels[(*part)[i]] = d.labels[shuffled[i]];
      map[shuffled[i]] = (*part)[i];
    }
  }
  const auto moved = train_detector(p, split, quick_config(12));
  CHECK(moved.validation_auroc == base.validation_auroc);
  for (std::size_t r = 0; r < d.size(); ++r) CHECK(moved.score(p.rows[map[r]]) == base.score(d.rows[r]));
}

TEST_CASE("shuffled labels give a chance-level validation AUROC") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto d = gaussian_data(500, 6, 3.0, seed);
    Rng rng(seed + 100);
    rng.shuffle(d.labels);
    const auto det = train_detector(d, split_40_40_20(d.labels, seed), DetectorConfig{{0.5, 100, 32, seed}, 64});
    INFO("seed ", seed);
    CHECK(det.validation_auroc >= 0.4);
    CHECK(det.validation_auroc <= 0.6);
  }
}

TEST_CASE("detector_score: zero weights, monotonicity, re-evaluation oracle") {
  const auto d = gaussian_data(20, 3, 2.0, 14);
  auto det = train_detector(d, split_40_40_20(d.labels, 15), quick_config(16, 5));
  GradientFeature f;
  f.values = {0.3, -1.2, 2.2};

  // re-evaluate dense → relu → dense by hand
  const auto z = det.standardizer.apply(f.values);
  const auto& p = det.net.parameter_sets();
  double logit = p[3].values[0];
  for (std::size_t h = 0; h < p[0].values.dim(0); ++h) {
    double a = p[1].values[h];
    for (std::size_t j = 0; j < 3; ++j) a += p[0].values.at(h, j) * z[j];
    logit += p[2].values.at(0, h) * std::max(a, 0.0);
  }
  CHECK(std::abs(detector_score(det, f) - 1 / (1 + std::exp(-logit))) <= 1e-12);
  CHECK(std::abs(det.logit(f.values) - logit) <= 1e-12);

  det.net.parameter_sets()[3].values[0] = 0.5;
  const double lo = det.score(f.values);
  det.net.parameter_sets()[3].values[0] = 1.5;  // larger logit
  CHECK(det.score(f.values) > lo);

  for (auto& ps : det.net.parameter_sets())
    for (double& v : ps.values.data()) v = 0;
  CHECK(detector_score(det, f) == 0.5);
  f.values.push_back(1.0);
  CHECK_THROWS_AS(detector_score(det, f), ShapeError);
}

TEST_CASE("msp score") {
  CHECK(msp_from_logits(Tensor::vector({20, 0, 0})) < 1e-8);
  CHECK(msp_from_logits(Tensor({5})) == doctest::Approx(0.8).epsilon(1e-15));
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor z = testutil::random_tensor({4}, rng, -5, 5);
    double denom = 0, top = -INFINITY;
    for (double v : z.data()) {
      denom += std::exp(v);
      top = std::max(top, v);
    }
    CHECK(std::abs(msp_from_logits(z) - (1 - std::exp(top) / denom)) <= 1e-12);
  }
  const Model m = Model::build(ModelSpec::reference({1, 5, 5}, 3), 1);
  const Tensor x({1, 5, 5}, 0.3);
  CHECK(msp_score(m, x) == msp_from_logits(m.forward(x)));
  CHECK_THROWS_AS(msp_score(m, Tensor({1, 4, 5})), ShapeError);
}

TEST_CASE("loss score is the stored loss") {
  GradientFeature a, b;
  a.loss = 0.7;
  b.loss = 0.2;
  CHECK(loss_score(a) == 0.7);
  CHECK(loss_score(a) > loss_score(b));
  Rng rng(18);
  std::vector<GradientFeature> fam(30), unf(25);
  DetectionScoreSet raw, via;
  for (auto& f : fam) raw.familiar.push_back(f.loss = rng.uniform());
  for (auto& f : unf) raw.unfamiliar.push_back(f.loss = rng.uniform(0.2, 1.2));
  for (const auto& f : fam) via.familiar.push_back(loss_score(f));
  for (const auto& f : unf) via.unfamiliar.push_back(loss_score(f));
  CHECK(auroc(via) == auroc(raw));
}

TEST_CASE("save and load detector with its standardization sidecar") {
  const auto dir = testutil::scratch_dir("detector");
  const auto d = gaussian_data(30, 5, 2.0, 19);
  const auto split = split_40_40_20(d.labels, 20);
  const auto det = train_detector(d, split, quick_config(21, 5));
  save_detector(det, dir / "pair.gprb");
  CHECK(std::filesystem::exists(dir / "pair.standardization.csv"));
  const auto back = load_detector(dir / "pair.gprb");
  CHECK(back.standardizer.mean == det.standardizer.mean);
  CHECK(back.standardizer.stddev == det.standardizer.stddev);
  CHECK(back.scores(d, all_rows(d)) == det.scores(d, all_rows(d)));
}

TEST_CASE("feature dimension mismatch between sides") {
  GradientFeature a, b;
  a.values = {1, 2};
  b.values = {1, 2, 3};
  CHECK_THROWS_AS(DetectionData::from_features({a}, {b}), ShapeError);
}
