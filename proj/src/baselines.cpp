#include "mice/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace mice {

namespace {

void assign(const Matrix& points, const Matrix& centroids, std::vector<Label>& labels) {
  parallel_for(points.rows(), [&](std::size_t n) {
    const auto x = points.row(n);
    Label best = 0;
    double best_dot = dot(x, centroids.row(0));
    for (std::size_t k = 1; k < centroids.rows(); ++k) {
      const double s = dot(x, centroids.row(k));
      if (s > best_dot) {
        best_dot = s;
        best = k;
      }
    }
    labels[n] = best;
  });
}

Matrix update_centroids(const Matrix& points, const std::vector<Label>& labels, const Matrix& previous) {
  Matrix sums(previous.rows(), previous.cols());
  for (std::size_t n = 0; n < points.rows(); ++n) {
    auto row = sums.row(labels[n]);
    const auto x = points.row(n);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += x[c];
  }
  Matrix next(previous.rows(), previous.cols());
  for (std::size_t k = 0; k < previous.rows(); ++k) {
    const auto src = l2_norm(sums.row(k)) > kNormEpsilon ? sums.row(k) : previous.row(k);
    const Vector unit = l2_normalize(src);
    std::copy(unit.begin(), unit.end(), next.row(k).begin());
  }
  return next;
}

double objective_of(const Matrix& points, const std::vector<Label>& labels, const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t n = 0; n < points.rows(); ++n) total += dot(points.row(n), centroids.row(labels[n]));
  return total;
}

Matrix head_rows(const std::vector<Matrix>& blocks, std::size_t head) {
  Matrix out(blocks.size(), blocks.empty() ? 0 : blocks.front().cols());
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    std::copy(blocks[n].row(head).begin(), blocks[n].row(head).end(), out.row(n).begin());
  }
  return out;
}

}  // namespace

KMeansResult spherical_kmeans(const Matrix& points, const Matrix& init_centroids, std::size_t max_iters,
                              double tol) {
  const std::size_t n = points.rows();
  const std::size_t k = init_centroids.rows();
  if (n == 0 || k == 0) throw Error(ErrorCode::kInvalidInput, "spherical k-means needs points and centroids");
  if (k > n) throw Error(ErrorCode::kInvalidInput, "more centroids than points");
  if (init_centroids.cols() != points.cols()) throw Error(ErrorCode::kDimensionMismatch, "centroid width");
  if (max_iters == 0) throw Error(ErrorCode::kInvalidInput, "max_iters must be positive");

  KMeansResult result;
  result.centroids = init_centroids;
  result.labels.assign(n, 0);
  std::vector<Label> labels(n, 0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    assign(points, result.centroids, labels);
    const bool fixpoint = it > 0 && labels == result.labels;
    result.labels = labels;
    result.centroids = update_centroids(points, labels, result.centroids);
    result.objective = objective_of(points, labels, result.centroids);
    result.objective_history.push_back(result.objective);
    result.iterations = it + 1;
    if (fixpoint) break;
    if (tol > 0.0 && it > 0) {
      const double gain = result.objective - result.objective_history[it - 1];
      if (gain < tol) break;
    }
  }
  return result;
}

KMeansResult spherical_kmeans_restarts(const Matrix& points, std::size_t num_clusters, Rng& rng,
                                       std::size_t restarts, std::size_t max_iters) {
  if (num_clusters == 0 || num_clusters > points.rows()) {
    throw Error(ErrorCode::kInvalidInput, "need 1 <= K <= N for k-means");
  }
  if (restarts == 0) throw Error(ErrorCode::kInvalidInput, "restarts must be positive");
  KMeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    const std::vector<std::size_t> order = random_permutation(points.rows(), rng);
    Matrix init(num_clusters, points.cols());
    for (std::size_t k = 0; k < num_clusters; ++k) {
      std::copy(points.row(order[k]).begin(), points.row(order[k]).end(), init.row(k).begin());
    }
    KMeansResult run = spherical_kmeans(points, init, max_iters);
    if (!have || run.objective > best.objective) {
      best = std::move(run);
      have = true;
    }
  }
  return best;
}

double infonce_loss(std::span<const double> f, std::span<const double> v, const Matrix& queue, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "tau must be positive");
  if (queue.rows() == 0) throw Error(ErrorCode::kEmptyQueue, "InfoNCE needs negatives");
  if (f.size() != v.size() || queue.cols() != f.size()) throw Error(ErrorCode::kDimensionMismatch, "InfoNCE widths");
  Vector logits(queue.rows() + 1);
  logits[0] = dot(v, f) / tau;
  for (std::size_t i = 0; i < queue.rows(); ++i) logits[i + 1] = dot(queue.row(i), f) / tau;
  return log_sum_exp(logits) - logits[0];
}

TrainConfig contrastive_config(TrainConfig config) {
  config.flags.a3_uniform_gating = true;
  config.flags.a4_single_head = true;
  config.flags.a5_no_class_term = true;
  config.eval_every = 0;
  return config;
}

TwoStageResult two_stage_pipeline(const TrainConfig& config, const Dataset& data) {
  const TrainConfig cfg = contrastive_config(config);
  TwoStageResult result;
  result.training = fit(cfg, data);
  std::vector<Matrix> blocks(data.size());
  parallel_for(data.size(), [&](std::size_t n) {
    blocks[n] = forward_teacher(data.points.row(n), result.training.state.teacher);
  });
  Rng rng = result.training.state.rng;
  result.kmeans = spherical_kmeans_restarts(head_rows(blocks, 0), cfg.num_clusters, rng);
  result.labels = result.kmeans.labels;
  return result;
}

KMeansEquivalenceReport compare_em_with_kmeans(const Matrix& student, const Matrix& teacher, const Matrix& mu_unit,
                                      const Matrix& kmeans_init, double tau) {
  const std::size_t n = teacher.rows();
  const std::size_t k = mu_unit.rows();
  const std::size_t d = mu_unit.cols();
  if (student.rows() != n || student.cols() != d || teacher.cols() != d || kmeans_init.rows() != k ||
      kmeans_init.cols() != d) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding and prototype shapes disagree");
  }
  if (n < k) throw Error(ErrorCode::kInvalidInput, "fewer points than clusters");

  const ModelFlags flags{true, true, false};
  const Vector gating(k, 1.0 / static_cast<double>(k));
  const Vector unit_normalizer(k, 0.0);
  PosteriorMatrix q(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix f(k, d);
    Matrix v(k, d);
    for (std::size_t h = 0; h < k; ++h) {
      std::copy(student.row(i).begin(), student.row(i).end(), f.row(h).begin());
      std::copy(teacher.row(i).begin(), teacher.row(i).end(), v.row(h).begin());
    }
    const Vector row = posterior(gating, log_phi(v, f, mu_unit, tau, flags), unit_normalizer);
    std::copy(row.begin(), row.end(), q.row(i).begin());
  }

  KMeansEquivalenceReport report;
  report.model_labels = hard_assign(q);
  PrototypeAccumulator acc(k, d);
  for (std::size_t i = 0; i < n; ++i) acc.accumulate_row(teacher.row(i), report.model_labels[i]);
  report.model_mu = analytical_update(acc, ExpertPrototypes{mu_unit}).mu;

  const KMeansResult km = spherical_kmeans(teacher, kmeans_init, 1);
  report.kmeans_labels = km.labels;
  report.kmeans_centroids = km.centroids;

  report.labels_match = report.model_labels == report.kmeans_labels;
  for (std::size_t i = 0; i < report.model_mu.values().size(); ++i) {
    report.max_prototype_diff =
        std::max(report.max_prototype_diff, std::abs(report.model_mu.values()[i] - km.centroids.values()[i]));
  }
  report.equivalent = report.labels_match && report.max_prototype_diff <= 1e-12;
  return report;
}

KMeansEquivalenceReport kmeans_equivalence_check(const TrainState& state, const TrainConfig& config, const Dataset& data) {
  if (!config.flags.a3_uniform_gating || !config.flags.a4_single_head) {
    throw Error(ErrorCode::kFlagMismatch, "the k-means equivalence needs uniform gating and a single head");
  }
  std::vector<Matrix> f(data.size());
  std::vector<Matrix> v(data.size());
  parallel_for(data.size(), [&](std::size_t n) {
    f[n] = forward_student(data.points.row(n), state.student).embeddings;
    v[n] = forward_teacher(data.points.row(n), state.teacher);
  });
  const Matrix mu_unit = state.mu.normalized();
  return compare_em_with_kmeans(head_rows(f, 0), head_rows(v, 0), mu_unit, mu_unit, config.temps.tau);
}

}  // namespace mice
