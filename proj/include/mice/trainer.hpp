#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/encoder.hpp"
#include "mice/metrics.hpp"
#include "mice/model.hpp"
#include "mice/prototypes.hpp"

namespace mice {

/// SGD momentum buffers, one per trainable tensor.
struct OptimizerState {
  GradientBundle network;
  Matrix mu;
  Matrix omega;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct TrainState {
  EncoderParams student;
  TeacherParams teacher;
  ExpertPrototypes mu;
  Matrix omega;
  EmbeddingQueue queue;
  OptimizerState momentum;
  PrototypeAccumulator accumulator;
  std::size_t epoch = 0;  // completed epochs
  double lr = 0.0;
  Rng rng;

  friend bool operator==(const TrainState& a, const TrainState& b);
};

struct StepMetrics {
  double loss = 0.0;
  double elbo = 0.0;
  double posterior_entropy = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_elbo = 0.0;
  double mean_loss = 0.0;
  double mean_entropy = 0.0;
  std::vector<std::size_t> occupancy;  // hard assignments seen during the epoch
  std::optional<ClusterScores> scores;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline bool operator==(const ClusterScores& a, const ClusterScores& b) {
  return a.nmi == b.nmi && a.acc == b.acc && a.ari == b.ari;
}

EncoderShape encoder_shape(const TrainConfig& config, std::size_t input_dim);

/// Seeded student, teacher copy, gating prototypes, random unit mu, and a
/// queue warmed by one teacher pass over min(queue_size, N) augmented points.
TrainState init_state(const TrainConfig& config, const Dataset& data);

/// Inputs for one batch after augmentation.
struct BatchInputs {
  std::vector<Vector> student;
  std::vector<Vector> teacher;
  std::vector<Vector> gating;
};

/// Embeddings and tapes for a batch.
struct BatchForward {
  Embeddings embeddings;
  std::vector<Tape> student_tapes;
  std::vector<Tape> gating_tapes;
};

BatchForward forward_batch(const TrainState& state, const BatchInputs& inputs);

/// Loss = -ELBO and its gradients with respect to the student network, raw
/// mu and (when trainable) omega. The teacher and queue are constants.
struct LossGradient {
  double loss = 0.0;
  ElboBatch elbo;
  GradientBundle network;
  Matrix mu;
  Matrix omega;
  std::vector<Matrix> teacher;  // teacher blocks of the batch
};

LossGradient loss_and_gradient(const TrainState& state, const TrainConfig& config, const BatchInputs& inputs,
                               const PosteriorMatrix* fixed_posterior = nullptr);

/// One step of the training loop on the given dataset rows: augment, E-step,
/// SGD on -ELBO, EMA teacher, enqueue, accumulate hard assignments.
StepMetrics train_step(TrainState& state, const TrainConfig& config, const Dataset& data,
                       std::span<const std::size_t> rows);

/// Learning rate in effect during epoch `epoch` (0-based).
double scheduled_lr(const TrainConfig& config, std::size_t epoch);

/// Analytical mu update (when enabled), accumulator reset, epoch counter and
/// learning rate advance.
void end_of_epoch(TrainState& state, const TrainConfig& config);

struct EvalResult {
  std::vector<Label> labels;
  PosteriorMatrix posterior;
};

/// Augmentation-free forward passes, posterior against the current queue,
/// hard assignment.
EvalResult evaluate(const TrainState& state, const TrainConfig& config, const Dataset& data);

/// Runs `count` epochs from the current state, appending to log when given.
void run_epochs(TrainState& state, const TrainConfig& config, const Dataset& data, std::size_t count,
                std::vector<EpochMetrics>* log = nullptr);

struct FitResult {
  TrainState state;
  std::vector<EpochMetrics> log;
};

/// init_state followed by config.epochs epochs.
FitResult fit(const TrainConfig& config, const Dataset& data);

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const TrainConfig& config, const TrainState& state);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const TrainConfig& config, const TrainState& state, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mice
