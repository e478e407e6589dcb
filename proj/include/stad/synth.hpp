#pragma once

#include "stad/error.hpp"
#include "stad/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stad::synth {

enum class Geometry { kSphere, kEuclidean };

struct LabelDistribution {
  enum class Kind { kUniform, kClassOrdered, kDirichlet };
  Kind kind = Kind::kUniform;
  double alpha = 1.0;

  /// "uniform", "ordered" or "dirichlet:<alpha>".
  static LabelDistribution parse(const std::string& text);
  std::string to_string() const;
};

struct DriftScenario {
  Geometry geometry = Geometry::kSphere;
  int dim = 16;
  int num_classes = 5;
  int steps = 50;
  int n_per_step = 200;
  double kappa_true = 50.0;
  double sigma_true = 0.1;
  double drift_deg_per_step = 2.0;
  double drift_vector_scale = 0.02;
  double max_drift_deg = 10.0;
  LabelDistribution labels;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticStream {
  std::vector<EmbeddingBatch> batches;  // t = 1..T
  std::vector<Matrix> trajectory;       // true class centers per step, K x D
  Matrix source_prototypes;             // centers at t = 0
};

SyntheticStream synth_drift(const DriftScenario& scenario);

/// Wood's rejection sampler for vMF(mu, kappa); returns n x D unit rows.
Matrix sample_vmf(const Vector& mu, double kappa, int n, std::mt19937_64& rng);

Vector random_unit_vector(int dim, std::mt19937_64& rng);

/// Minimum pairwise angle demanded between initial class directions: the
/// smaller of 60 degrees and the cap-covering bound for K points on S^{D-1}.
double required_separation_deg(int num_classes, int dim);

}  // namespace stad::synth
