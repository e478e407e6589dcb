#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace stad {

// Row-major so that one embedding is one contiguous row, matching the
// on-disk payload layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<std::uint32_t>;

/// One time step of a stream: N embeddings of dimension D, with optional
/// ground-truth labels used only for scoring.
struct EmbeddingBatch {
  std::int64_t t = 0;
  Matrix features;
  std::optional<Labels> labels;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

}  // namespace stad
