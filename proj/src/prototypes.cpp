#include "mice/prototypes.hpp"

#include <cmath>
#include <string>

namespace mice {

GatingPrototypes mmd_centers(std::size_t num_clusters, std::size_t dim) {
  if (num_clusters < 2 || dim < 1) {
    throw Error(ErrorCode::kInvalidInput, "MMD centers need K >= 2 and d >= 1");
  }
  if (num_clusters > dim + 1) {
    throw Error(ErrorCode::kTooManyClusters,
                "K = " + std::to_string(num_clusters) + " exceeds d + 1 = " + std::to_string(dim + 1));
  }
  GatingPrototypes result;
  Matrix& w = result.omega;
  w = Matrix(num_clusters, dim);
  w(0, 0) = 1.0;
  const double target = -1.0 / static_cast<double>(num_clusters - 1);
  for (std::size_t i = 1; i < num_clusters; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      // Row i only has coordinates < j filled at this point.
      double partial = 0.0;
      for (std::size_t c = 0; c < j; ++c) partial += w(i, c) * w(j, c);
      w(i, j) = (target - partial) / w(j, j);
    }
    // With K = d + 1 the last row has no diagonal slot; its norm is already 1.
    if (i < dim) {
      double sq = 0.0;
      for (std::size_t c = 0; c < i; ++c) sq += w(i, c) * w(i, c);
      double radicand = 1.0 - sq;
      if (radicand < 0.0) {
        radicand = 0.0;
        ++result.clamped_radicands;
      }
      w(i, i) = std::sqrt(radicand);
    }
  }
  return result;
}

GatingPrototypes uniform_centers(std::size_t num_clusters, std::size_t dim, Rng& rng) {
  GatingPrototypes result;
  Matrix raw(num_clusters, dim);
  for (double& v : raw.values()) v = rng.uniform(-1.0, 1.0);
  result.omega = normalize_rows(raw);
  return result;
}

void PrototypeAccumulator::accumulate(const Matrix& teacher_block, Label label) {
  if (label >= counts_.size()) {
    throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) + " out of range");
  }
  accumulate_row(teacher_block.row(label), label);
}

void PrototypeAccumulator::accumulate_row(std::span<const double> embedding, Label label) {
  if (label >= counts_.size()) {
    throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) + " out of range");
  }
  if (embedding.size() != mu_hat_.cols()) throw Error(ErrorCode::kDimensionMismatch, "embedding width");
  auto row = mu_hat_.row(label);
  for (std::size_t c = 0; c < row.size(); ++c) row[c] += embedding[c];
  ++counts_[label];
}

void PrototypeAccumulator::reset() {
  mu_hat_.fill(0.0);
  std::fill(counts_.begin(), counts_.end(), 0);
}

PrototypeAccumulator PrototypeAccumulator::from_parts(Matrix mu_hat, std::vector<std::size_t> counts) {
  if (mu_hat.rows() != counts.size()) throw Error(ErrorCode::kDimensionMismatch, "accumulator parts");
  PrototypeAccumulator acc;
  acc.mu_hat_ = std::move(mu_hat);
  acc.counts_ = std::move(counts);
  return acc;
}

ExpertPrototypes analytical_update(const PrototypeAccumulator& acc, const ExpertPrototypes& previous) {
  const Matrix& sums = acc.mu_hat();
  if (sums.rows() != previous.mu.rows() || sums.cols() != previous.mu.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "accumulator and prototypes disagree in shape");
  }
  ExpertPrototypes next{Matrix(sums.rows(), sums.cols())};
  for (std::size_t k = 0; k < sums.rows(); ++k) {
    const auto src = l2_norm(sums.row(k)) > kNormEpsilon ? sums.row(k) : previous.mu.row(k);
    const Vector unit = l2_normalize(src);
    std::copy(unit.begin(), unit.end(), next.mu.row(k).begin());
  }
  return next;
}

}  // namespace mice
