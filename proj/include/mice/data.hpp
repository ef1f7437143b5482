#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mice/numcore.hpp"

namespace mice {

/// Mixture of K noisy directions on the unit sphere of R^d.
struct SyntheticSpec {
  std::size_t num_clusters = 4;
  std::size_t input_dim = 16;
  std::size_t points_per_cluster = 500;
  double concentration = 50.0;  // +inf gives noise-free points
  std::uint64_t seed = 0;

  void validate() const;  // InvalidSpec
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Points plus optional ground truth (0-based in memory, 1-based on disk).
/// The surrogate label of a point is its row index and is never stored.
struct Dataset {
  Matrix points;
  std::optional<std::vector<Label>> truth;

  std::size_t size() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Cluster directions come from mmd_centers when K <= d + 1 and from
/// normalized Gaussian draws otherwise. Point = normalize(direction +
/// N(0, I) / sqrt(concentration)). Rows are cluster-major.
Dataset generate(const SyntheticSpec& spec);

/// Keys num_clusters, input_dim, points_per_cluster, concentration, seed.
SyntheticSpec parse_synthetic_spec(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::string& path);

/// CSV with header dim_0,...,dim_{d-1}[,truth].
std::string format_dataset_csv(const Dataset& ds);
Dataset parse_dataset_csv(const std::string& text);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace mice
