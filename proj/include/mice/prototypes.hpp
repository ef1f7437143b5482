#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mice/numcore.hpp"

namespace mice {

/// Fixed gating prototypes: K unit rows with pairwise dot -1/(K-1).
struct GatingPrototypes {
  Matrix omega;
  /// Number of diagonal radicands that came out negative from rounding and
  /// were clamped to zero during construction.
  std::size_t clamped_radicands = 0;
};

/// Centers of a Max-Mahalanobis distribution in R^d. Row 0 is e_1; row i
/// fills coordinates 0..i-1 from the pairwise-dot constraint and closes with
/// sqrt(1 - |row|^2) on the diagonal. Requires 2 <= K <= d + 1.
GatingPrototypes mmd_centers(std::size_t num_clusters, std::size_t dim);

/// Gating prototypes drawn uniformly from [-1, 1]^d and projected onto the
/// sphere.
GatingPrototypes uniform_centers(std::size_t num_clusters, std::size_t dim, Rng& rng);

/// Trainable expert prototypes. Stored raw, normalized wherever they are
/// used.
struct ExpertPrototypes {
  Matrix mu;

  Matrix normalized() const { return normalize_rows(mu); }
};

/// Per-cluster sums of teacher embeddings under hard assignment.
class PrototypeAccumulator {
 public:
  PrototypeAccumulator() = default;
  PrototypeAccumulator(std::size_t num_clusters, std::size_t dim)
      : mu_hat_(num_clusters, dim), counts_(num_clusters, 0) {}

  /// mu_hat[label] += teacher_block[label].
  void accumulate(const Matrix& teacher_block, Label label);
  /// mu_hat[label] += embedding.
  void accumulate_row(std::span<const double> embedding, Label label);
  void reset();

  const Matrix& mu_hat() const { return mu_hat_; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t num_clusters() const { return counts_.size(); }

  /// Restores raw contents (checkpoint loading).
  static PrototypeAccumulator from_parts(Matrix mu_hat, std::vector<std::size_t> counts);

 private:
  Matrix mu_hat_;
  std::vector<std::size_t> counts_;
};

/// mu_k <- mu_hat_k / |mu_hat_k| where |mu_hat_k| > kNormEpsilon, otherwise
/// the normalized previous mu_k.
ExpertPrototypes analytical_update(const PrototypeAccumulator& acc, const ExpertPrototypes& previous);

}  // namespace mice
