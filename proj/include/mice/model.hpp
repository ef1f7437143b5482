#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mice/numcore.hpp"
#include "mice/prototypes.hpp"

namespace mice {

/// Ablation switches. All off is the full model; all on reduces it to
/// instance discrimination with an InfoNCE objective.
struct ModelFlags {
  bool a3_uniform_gating = false;  // p(z|x) = 1/K
  bool a4_single_head = false;     // expert k uses head 0 for every k
  bool a5_no_class_term = false;   // drop v^T mu_k from the expert logit

  friend bool operator==(const ModelFlags&, const ModelFlags&) = default;
};

struct Temperatures {
  double tau = 1.0;    // experts
  double kappa = 1.0;  // gating

  friend bool operator==(const Temperatures&, const Temperatures&) = default;
};

/// How the expert normalizer is approximated from the queue.
enum class ZhatMode {
  kWithPositive,  // positive pair plus every queued embedding
  kQueueOnly,     // queued embeddings only; equals Z when the queue is the dataset
};

/// FIFO of teacher blocks (K x d each). Pushing into a full queue evicts the
/// oldest block.
class EmbeddingQueue {
 public:
  EmbeddingQueue() = default;
  EmbeddingQueue(std::size_t capacity, std::size_t heads, std::size_t dim);

  void push(const Matrix& block);
  void clear();

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  std::size_t heads() const { return heads_; }
  std::size_t dim() const { return dim_; }

  /// Row k of the i-th oldest block.
  std::span<const double> row(std::size_t i, std::size_t k) const {
    const std::size_t slot = (head_ + i) % capacity_;
    return {data_.data() + (slot * heads_ + k) * dim_, dim_};
  }
  Matrix block(std::size_t i) const;

  /// Blocks oldest first.
  std::vector<Matrix> blocks() const;
  static EmbeddingQueue from_blocks(std::size_t capacity, std::size_t heads, std::size_t dim,
                                    const std::vector<Matrix>& blocks);

  /// Equal capacity, shape and contents in FIFO order. The ring position is
  /// not compared.
  friend bool operator==(const EmbeddingQueue& a, const EmbeddingQueue& b);

 private:
  std::size_t capacity_ = 0;
  std::size_t heads_ = 0;
  std::size_t dim_ = 0;
  std::size_t head_ = 0;  // slot of the oldest block
  std::size_t size_ = 0;
  std::vector<double> data_;
};

/// B x K row-stochastic matrix.
using PosteriorMatrix = Matrix;

/// softmax over omega_k^T g / kappa; uniform under a3.
Vector gating_dist(std::span<const double> gating_embedding, const Matrix& omega, double kappa,
                   const ModelFlags& flags = {});

/// log Phi_k = v_k^T (f_k + mu_k) / tau with mu rows already unit-norm.
Vector log_phi(const Matrix& teacher, const Matrix& student, const Matrix& mu_unit, double tau,
               const ModelFlags& flags = {});

/// log Zhat_k over the positive pair (kWithPositive) and the queue.
Vector log_zhat(const Matrix& student, const Matrix& teacher, const EmbeddingQueue& queue, const Matrix& mu_unit,
                double tau, const ModelFlags& flags = {}, ZhatMode mode = ZhatMode::kWithPositive);

/// q_k proportional to gating_k * exp(log_phi_k - log_zhat_k).
Vector posterior(std::span<const double> gating, std::span<const double> log_phi, std::span<const double> log_zhat);

/// Row argmax, ties to the lowest index.
std::vector<Label> hard_assign(const PosteriorMatrix& q);

/// Per-datapoint embeddings: K x d student and teacher blocks, d gating
/// vector.
struct Embeddings {
  std::vector<Matrix> student;
  std::vector<Matrix> teacher;
  std::vector<Vector> gating;

  std::size_t size() const { return student.size(); }
};

struct ElboOptions {
  ZhatMode zhat = ZhatMode::kWithPositive;
  /// Treat q as a constant. The gradient at q = current posterior is the
  /// same either way; the difference matters with an externally fixed q.
  bool detach_posterior = false;
  bool want_gradients = true;
  bool omega_gradient = false;
};

/// Batch-mean approximated ELBO and its gradients (ascent direction).
struct ElboBatch {
  double elbo = 0.0;
  double expected_log_expert = 0.0;  // mean E_q[log Phi - log Zhat]
  double kl = 0.0;                   // mean KL(q || gating)
  double posterior_entropy = 0.0;    // mean H(q)
  PosteriorMatrix posterior;

  std::vector<Matrix> d_student;  // dELBO / d student embedding
  std::vector<Vector> d_gating;   // dELBO / d gating embedding
  Matrix d_mu;                    // dELBO / d raw mu
  Matrix d_omega;                 // dELBO / d omega (omega_gradient only)
};

/// With fixed_posterior given, q is taken from it (rows per batch item) and
/// held constant.
ElboBatch elbo_batch(const Embeddings& batch, const EmbeddingQueue& queue, const ExpertPrototypes& mu,
                     const Matrix& omega, const Temperatures& temps, const ModelFlags& flags,
                     const ElboOptions& options = {}, const PosteriorMatrix* fixed_posterior = nullptr);

/// Exact Bayes posterior with Z summed over every teacher embedding in the
/// dataset.
PosteriorMatrix exact_posterior(const Embeddings& data, const ExpertPrototypes& mu, const Matrix& omega,
                                const Temperatures& temps, const ModelFlags& flags);

/// sum_n sum_k q_nk [log p(k|x_n) + log p(y_n|x_n,k) - log q_nk] with exact Z.
double exact_elbo(const Embeddings& data, const PosteriorMatrix& q, const ExpertPrototypes& mu, const Matrix& omega,
                  const Temperatures& temps, const ModelFlags& flags);

/// sum_n log p(y_n | x_n) with exact Z.
double exact_log_evidence(const Embeddings& data, const ExpertPrototypes& mu, const Matrix& omega,
                          const Temperatures& temps, const ModelFlags& flags);

/// Queue holding the teacher block of every datapoint, in dataset order.
EmbeddingQueue full_dataset_queue(const Embeddings& data);

}  // namespace mice
