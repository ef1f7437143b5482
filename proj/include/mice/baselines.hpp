#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/model.hpp"
#include "mice/trainer.hpp"

namespace mice {

struct KMeansResult {
  std::vector<Label> labels;
  Matrix centroids;  // K x d, unit rows
  double objective = 0.0;  // sum of x_n . c_{label n}
  std::size_t iterations = 0;
  std::vector<double> objective_history;  // after every assignment step
};

/// Alternates argmax assignment (ties to the lowest index) and
/// c_k = normalize(sum of members); an empty cluster keeps its centroid.
/// Stops at a label fixpoint, when the objective gains less than tol, or
/// after max_iters assignment steps.
KMeansResult spherical_kmeans(const Matrix& points, const Matrix& init_centroids, std::size_t max_iters,
                              double tol = 0.0);

/// Best of `restarts` runs, each initialized from K distinct random rows.
KMeansResult spherical_kmeans_restarts(const Matrix& points, std::size_t num_clusters, Rng& rng,
                                       std::size_t restarts = 10, std::size_t max_iters = 100);

/// -log[exp(v.f/tau) / (exp(v.f/tau) + sum_i exp(q_i.f/tau))].
double infonce_loss(std::span<const double> f, std::span<const double> v, const Matrix& queue, double tau);

/// Contrastive training with uniform gating, one head and no class term,
/// followed by spherical k-means on the teacher embeddings.
struct TwoStageResult {
  std::vector<Label> labels;
  KMeansResult kmeans;
  FitResult training;
};

TwoStageResult two_stage_pipeline(const TrainConfig& config, const Dataset& data);

/// Config with the flags that reduce the model to instance discrimination.
TrainConfig contrastive_config(TrainConfig config);

struct KMeansEquivalenceReport {
  bool equivalent = false;
  bool labels_match = false;
  double max_prototype_diff = 0.0;
  std::vector<Label> model_labels;
  std::vector<Label> kmeans_labels;
  Matrix model_mu;
  Matrix kmeans_centroids;
};

/// Compares the model path (q proportional to exp(v.(f + mu_k)/tau) with
/// uniform gating and one head, hard assignment, analytical update) against
/// one spherical k-means step on the teacher embeddings v from centroids
/// kmeans_init. With mu_unit == kmeans_init both paths must agree.
KMeansEquivalenceReport compare_em_with_kmeans(const Matrix& student, const Matrix& teacher, const Matrix& mu_unit,
                                      const Matrix& kmeans_init, double tau);

/// Runs compare_em_with_kmeans on the augmentation-free embeddings of the
/// dataset under the state's mu. Requires flags a3 and a4.
KMeansEquivalenceReport kmeans_equivalence_check(const TrainState& state, const TrainConfig& config, const Dataset& data);

}  // namespace mice
