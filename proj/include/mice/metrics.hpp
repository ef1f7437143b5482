#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mice/numcore.hpp"

namespace mice {

/// counts[t][p] = number of points with true class t and predicted cluster p.
/// Class and cluster ids are compacted to 0..n-1 in order of first
/// appearance of their sorted values.
struct ContingencyTable {
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::size_t> row_sums;
  std::vector<std::size_t> col_sums;
  std::size_t total = 0;

  std::size_t num_true() const { return row_sums.size(); }
  std::size_t num_pred() const { return col_sums.size(); }
};

ContingencyTable contingency(std::span<const Label> truth, std::span<const Label> pred);

/// I(T; P) / ((H(T) + H(P)) / 2); 1 when both entropies vanish.
double nmi(std::span<const Label> truth, std::span<const Label> pred);

/// Best one-to-one matching accuracy.
double acc(std::span<const Label> truth, std::span<const Label> pred);

/// Adjusted Rand index from pair counts.
double ari(std::span<const Label> truth, std::span<const Label> pred);

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row.
std::vector<std::size_t> hungarian(const Matrix& cost);

struct ClusterScores {
  double nmi = 0.0;
  double acc = 0.0;
  double ari = 0.0;
};

ClusterScores score_all(std::span<const Label> truth, std::span<const Label> pred);

}  // namespace mice
