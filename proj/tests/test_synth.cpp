#include "doctest.h"
#include "helpers.hpp"

#include "stad/mathcore.hpp"
#include "stad/synth.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <numbers>

using namespace stad;
using namespace stad::synth;

namespace {

DriftScenario sphere(int d, int k, int t, int n) {
  DriftScenario s;
  s.dim = d;
  s.num_classes = k;
  s.steps = t;
  s.n_per_step = n;
  return s;
}

}  // namespace

TEST_CASE("Wood sampler: unit norm and concentration") {
  std::mt19937_64 rng(1);
  Vector mu = Vector::Zero(8);
  mu[2] = 1.0;
  const Matrix x = sample_vmf(mu, 100.0, 20000, rng);
  CHECK((x.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  const Vector mean = x.colwise().mean().transpose();
  // Resultant length gives back the concentration through the closed form.
  const double kappa = math::estimate_kappa(mean.norm(), 8);
  CHECK(std::abs(kappa - 100.0) / 100.0 < 0.10);
  CHECK(math::angle_deg(mean, mu) < 1.0);
  // Expected cosine to the mean direction is A_D(kappa).
  CHECK(std::abs(mean.dot(mu) - math::bessel_ratio(8, 100.0)) < 0.005);

  CHECK(testutil::code_of([&] { sample_vmf(mu, -1.0, 3, rng); }) == ErrorCode::kDomain);
  const Matrix uniform = sample_vmf(mu, 0.0, 20000, rng);
  CHECK(uniform.colwise().mean().norm() < 0.05);
}

TEST_CASE("stationary scenario: empirical class means within 2 degrees") {
  DriftScenario s = sphere(16, 5, 1, 5000 * 5);
  s.drift_deg_per_step = 0.0;
  s.kappa_true = 50.0;
  const SyntheticStream out = synth_drift(s);
  const EmbeddingBatch& b = out.batches[0];
  for (int k = 0; k < 5; ++k) {
    Vector sum = Vector::Zero(16);
    int count = 0;
    for (Eigen::Index n = 0; n < b.size(); ++n) {
      if ((*b.labels)[static_cast<std::size_t>(n)] == static_cast<std::uint32_t>(k)) {
        sum += b.features.row(n).transpose();
        ++count;
      }
    }
    CHECK(count > 4000);
    CHECK(math::angle_deg(sum, out.trajectory[0].row(k).transpose()) < 2.0);
  }
  CHECK((out.trajectory[0] - out.source_prototypes).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("sphere drift is exactly the configured angle per step") {
  DriftScenario s = sphere(16, 5, 20, 10);
  s.drift_deg_per_step = 2.0;
  const SyntheticStream out = synth_drift(s);
  REQUIRE(out.trajectory.size() == 20);
  Matrix prev = out.source_prototypes;
  for (const Matrix& cur : out.trajectory) {
    for (int k = 0; k < 5; ++k) {
      CHECK(std::abs(cur.row(k).norm() - 1.0) < 1e-12);
      CHECK(std::abs(math::angle_deg(prev.row(k).transpose(), cur.row(k).transpose()) - 2.0) < 1e-6);
    }
    prev = cur;
  }
  for (const EmbeddingBatch& b : out.batches) {
    CHECK((b.features.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("initial directions respect the separation rule") {
  for (auto [k, d] : {std::pair{5, 16}, std::pair{10, 3}, std::pair{20, 8}}) {
    DriftScenario s = sphere(d, k, 1, 2);
    const SyntheticStream out = synth_drift(s);
    const double need = required_separation_deg(k, d);
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j)
        CHECK(math::angle_deg(out.source_prototypes.row(i).transpose(), out.source_prototypes.row(j).transpose()) >= need);
  }
  CHECK(required_separation_deg(5, 16) == 60.0);
  // K caps of angular radius theta/2 exactly cover the sphere.
  const double theta = required_separation_deg(100, 3);
  const double r = theta / 2.0 * std::numbers::pi / 180.0;
  const double cap = 0.5 * boost::math::ibeta(1.0, 0.5, std::sin(r) * std::sin(r));
  CHECK(std::abs(100.0 * cap - 1.0) < 1e-6);
  CHECK(testutil::code_of([] { synth_drift(sphere(3, 100, 1, 5)); }) == ErrorCode::kInfeasibleSeparation);
}

TEST_CASE("same seed gives a bit-identical stream") {
  DriftScenario s = sphere(8, 3, 4, 30);
  s.seed = 42;
  const SyntheticStream a = synth_drift(s);
  const SyntheticStream b = synth_drift(s);
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    CHECK(a.batches[i].features == b.batches[i].features);
    CHECK(a.batches[i].labels == b.batches[i].labels);
  }
  s.seed = 43;
  CHECK(synth_drift(s).batches[0].features != a.batches[0].features);
}

TEST_CASE("features are stored at float32 precision") {
  const SyntheticStream a = synth_drift(sphere(8, 3, 2, 30));
  const Matrix& f = a.batches[1].features;
  CHECK(f == f.cast<float>().cast<double>());
}

TEST_CASE("euclidean geometry translates means by a fixed vector") {
  DriftScenario s = sphere(6, 3, 10, 20);
  s.geometry = Geometry::kEuclidean;
  s.drift_vector_scale = 0.05;
  s.sigma_true = 0.1;
  const SyntheticStream out = synth_drift(s);
  for (int k = 0; k < 3; ++k) {
    const Vector step = (out.trajectory[0].row(k) - out.source_prototypes.row(k)).transpose();
    CHECK(std::abs(step.norm() - 0.05) < 1e-12);
    for (std::size_t t = 1; t < out.trajectory.size(); ++t) {
      CHECK(((out.trajectory[t].row(k) - out.trajectory[t - 1].row(k)).transpose() - step).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("label distributions") {
  CHECK(LabelDistribution::parse("uniform").kind == LabelDistribution::Kind::kUniform);
  CHECK(LabelDistribution::parse("ordered").kind == LabelDistribution::Kind::kClassOrdered);
  const LabelDistribution dir = LabelDistribution::parse("dirichlet:0.5");
  CHECK(dir.kind == LabelDistribution::Kind::kDirichlet);
  CHECK(dir.alpha == 0.5);
  CHECK(LabelDistribution::parse(dir.to_string()).alpha == 0.5);
  CHECK(testutil::code_of([] { LabelDistribution::parse("zipf"); }) == ErrorCode::kInvalidConfig);
  CHECK(testutil::code_of([] { LabelDistribution::parse("dirichlet:-1"); }) == ErrorCode::kInvalidConfig);

  DriftScenario s = sphere(4, 3, 3, 60);
  s.labels = LabelDistribution::parse("ordered");
  for (const EmbeddingBatch& b : synth_drift(s).batches) {
    int switches = 0;
    for (std::size_t n = 1; n < b.labels->size(); ++n) switches += (*b.labels)[n] != (*b.labels)[n - 1];
    CHECK(switches <= 2);
  }
  s.labels = LabelDistribution::parse("dirichlet:0.1");
  for (const EmbeddingBatch& b : synth_drift(s).batches)
    for (auto l : *b.labels) CHECK(l < 3);
}

TEST_CASE("scenario validation") {
  DriftScenario s = sphere(4, 3, 3, 10);
  s.drift_deg_per_step = 15.0;
  CHECK(testutil::code_of([&] { s.validate(); }) == ErrorCode::kInvalidConfig);
  s.max_drift_deg = 20.0;
  CHECK_NOTHROW(s.validate());
  s = sphere(4, 3, 0, 10);
  CHECK(testutil::code_of([&] { s.validate(); }) == ErrorCode::kInvalidConfig);
  s = sphere(4, 3, 3, 10);
  s.kappa_true = 0.0;
  CHECK(testutil::code_of([&] { s.validate(); }) == ErrorCode::kInvalidConfig);
}
