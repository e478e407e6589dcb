#include "stad/stream.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace stad::stream {
namespace {

std::vector<int> draw_class_order(int num_classes, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Stable sort of row indices by the rank each label holds in `order`.
std::vector<Eigen::Index> contiguous_permutation(const Labels& labels, const std::vector<int>& order) {
  std::vector<int> rank(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  std::vector<Eigen::Index> perm(labels.size());
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::stable_sort(perm.begin(), perm.end(), [&](Eigen::Index a, Eigen::Index b) {
    return rank[labels[static_cast<std::size_t>(a)]] < rank[labels[static_cast<std::size_t>(b)]];
  });
  return perm;
}

void check_labels(const EmbeddingBatch& b, int num_classes) {
  if (!b.labels) throw Error(ErrorCode::kMissingLabels, "label shift needs labels at t=" + std::to_string(b.t));
  if (b.labels->size() != static_cast<std::size_t>(b.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "label count mismatch at t=" + std::to_string(b.t));
  }
  for (std::uint32_t y : *b.labels) {
    if (y >= static_cast<std::uint32_t>(num_classes)) {
      throw Error(ErrorCode::kDomain, "label " + std::to_string(y) + " out of range at t=" + std::to_string(b.t));
    }
  }
}

}  // namespace

std::vector<EmbeddingBatch> make_label_shift(const std::vector<EmbeddingBatch>& stream, std::uint64_t seed,
                                             int num_classes, ShiftGranularity granularity) {
  if (num_classes < 1) throw Error(ErrorCode::kInvalidConfig, "K must be positive");
  for (const EmbeddingBatch& b : stream) check_labels(b, num_classes);
  std::mt19937_64 rng(seed);

  if (granularity == ShiftGranularity::kPerStep) {
    std::vector<EmbeddingBatch> out;
    out.reserve(stream.size());
    for (const EmbeddingBatch& b : stream) {
      const auto perm = contiguous_permutation(*b.labels, draw_class_order(num_classes, rng));
      EmbeddingBatch r;
      r.t = b.t;
      r.features = b.features(perm, Eigen::all);
      Labels y(perm.size());
      for (std::size_t i = 0; i < perm.size(); ++i) y[i] = (*b.labels)[static_cast<std::size_t>(perm[i])];
      r.labels = std::move(y);
      out.push_back(std::move(r));
    }
    return out;
  }

  if (stream.empty()) return {};
  const Eigen::Index d = stream.front().dim();
  Eigen::Index total = 0;
  for (const EmbeddingBatch& b : stream) {
    if (b.dim() != d) throw Error(ErrorCode::kDimensionMismatch, "t=" + std::to_string(b.t) + " changes D");
    total += b.size();
  }
  Matrix all(total, d);
  Labels all_labels;
  all_labels.reserve(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (const EmbeddingBatch& b : stream) {
    all.middleRows(row, b.size()) = b.features;
    row += b.size();
    all_labels.insert(all_labels.end(), b.labels->begin(), b.labels->end());
  }
  const auto perm = contiguous_permutation(all_labels, draw_class_order(num_classes, rng));
  std::vector<EmbeddingBatch> out;
  row = 0;
  for (const EmbeddingBatch& b : stream) {
    EmbeddingBatch r;
    r.t = b.t;
    r.features.resize(b.size(), d);
    Labels y(static_cast<std::size_t>(b.size()));
    for (Eigen::Index i = 0; i < b.size(); ++i, ++row) {
      const Eigen::Index src = perm[static_cast<std::size_t>(row)];
      r.features.row(i) = all.row(src);
      y[static_cast<std::size_t>(i)] = all_labels[static_cast<std::size_t>(src)];
    }
    r.labels = std::move(y);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace stad::stream
