#include "mice/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mice {

bool operator==(const TrainState& a, const TrainState& b) {
  return a.student == b.student && a.teacher == b.teacher && a.mu.mu == b.mu.mu && a.omega == b.omega &&
         a.queue == b.queue && a.momentum == b.momentum && a.accumulator.mu_hat() == b.accumulator.mu_hat() &&
         a.accumulator.counts() == b.accumulator.counts() && a.epoch == b.epoch && a.lr == b.lr && a.rng == b.rng;
}

EncoderShape encoder_shape(const TrainConfig& config, std::size_t input_dim) {
  EncoderShape shape;
  shape.input_dim = input_dim;
  shape.hidden = config.hidden_dims;
  shape.embed_dim = config.embed_dim;
  shape.num_heads = config.num_clusters;
  return shape;
}

namespace {

Matrix initial_omega(const TrainConfig& config, Rng& rng) {
  const std::size_t k = config.num_clusters;
  const std::size_t d = config.embed_dim;
  if (config.omega_init == OmegaInit::kUniform) return uniform_centers(k, d, rng).omega;
  if (k == 1) {
    Matrix omega(1, d);
    omega(0, 0) = 1.0;
    return omega;
  }
  return mmd_centers(k, d).omega;
}

std::size_t head_for(Label k, const ModelFlags& flags) { return flags.a4_single_head ? 0 : k; }

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> buf, double lr,
                double momentum, double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    buf[i] = momentum * buf[i] + g;
    param[i] -= lr * buf[i];
  }
}

Matrix row_matrix(std::span<const double> v, double scale) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = scale * v[i];
  return m;
}

// Fixed chunking keeps the reduction order independent of the worker count.
constexpr std::size_t kReduceChunks = 16;

}  // namespace

TrainState init_state(const TrainConfig& config, const Dataset& data) {
  config.validate();
  if (data.size() == 0) throw Error(ErrorCode::kEmptyInput, "dataset is empty");
  TrainState state;
  state.rng = Rng(config.seed);
  const EncoderShape shape = encoder_shape(config, data.dim());
  state.student = init_encoder(shape, state.rng);
  state.teacher = TeacherParams::copy_of(state.student);
  state.omega = initial_omega(config, state.rng);

  Matrix mu(config.num_clusters, config.embed_dim);
  for (double& v : mu.values()) v = state.rng.uniform(-1.0, 1.0);
  state.mu.mu = normalize_rows(mu);

  state.momentum.network = GradientBundle::zeros(shape);
  state.momentum.mu = Matrix(config.num_clusters, config.embed_dim);
  state.momentum.omega = Matrix(config.num_clusters, config.embed_dim);
  state.accumulator = PrototypeAccumulator(config.num_clusters, config.embed_dim);
  state.lr = scheduled_lr(config, 0);

  state.queue = EmbeddingQueue(config.queue_size, config.num_clusters, config.embed_dim);
  const std::vector<std::size_t> order = random_permutation(data.size(), state.rng);
  const std::size_t warm = std::min(config.queue_size, data.size());
  std::vector<Vector> inputs(warm);
  for (std::size_t i = 0; i < warm; ++i) inputs[i] = augment(data.points.row(order[i]), state.rng, config.augment);
  std::vector<Matrix> blocks(warm);
  parallel_for(warm, [&](std::size_t i) { blocks[i] = forward_teacher(inputs[i], state.teacher); });
  for (const Matrix& block : blocks) state.queue.push(block);
  return state;
}

BatchForward forward_batch(const TrainState& state, const BatchInputs& inputs) {
  const std::size_t b = inputs.student.size();
  if (inputs.teacher.size() != b || inputs.gating.size() != b) {
    throw Error(ErrorCode::kLengthMismatch, "batch views disagree in count");
  }
  BatchForward out;
  out.embeddings.student.resize(b);
  out.embeddings.teacher.resize(b);
  out.embeddings.gating.resize(b);
  out.student_tapes.resize(b);
  out.gating_tapes.resize(b);
  parallel_for(b, [&](std::size_t n) {
    StudentForward s = forward_student(inputs.student[n], state.student);
    out.embeddings.student[n] = std::move(s.embeddings);
    out.student_tapes[n] = std::move(s.tape);
    out.embeddings.teacher[n] = forward_teacher(inputs.teacher[n], state.teacher);
    GatingForward g = forward_gating(inputs.gating[n], state.student);
    out.embeddings.gating[n] = std::move(g.embedding);
    out.gating_tapes[n] = std::move(g.tape);
  });
  return out;
}

LossGradient loss_and_gradient(const TrainState& state, const TrainConfig& config, const BatchInputs& inputs,
                               const PosteriorMatrix* fixed_posterior) {
  const BatchForward fwd = forward_batch(state, inputs);
  ElboOptions options;
  options.zhat = config.zhat_mode();
  options.detach_posterior = config.detach_posterior;
  options.omega_gradient = config.omega_trainable && !config.flags.a3_uniform_gating;

  LossGradient out;
  out.elbo = elbo_batch(fwd.embeddings, state.queue, state.mu, state.omega, config.temps, config.flags, options,
                        fixed_posterior);
  out.loss = -out.elbo.elbo;

  const std::size_t b = fwd.embeddings.size();
  const EncoderShape shape = state.student.shape();
  const std::size_t chunks = std::min(b, kReduceChunks);
  std::vector<GradientBundle> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    GradientBundle grads = GradientBundle::zeros(shape);
    for (std::size_t n = c * b / chunks; n < (c + 1) * b / chunks; ++n) {
      Matrix upstream = out.elbo.d_student[n];
      for (double& v : upstream.values()) v = -v;
      backward_into(fwd.student_tapes[n], upstream, state.student, grads);
      if (!config.flags.a3_uniform_gating) {
        backward_into(fwd.gating_tapes[n], row_matrix(out.elbo.d_gating[n], -1.0), state.student, grads);
      }
    }
    partial[c] = std::move(grads);
  });
  out.network = GradientBundle::zeros(shape);
  auto dst = out.network.tensors();
  for (const GradientBundle& p : partial) {
    const auto src = p.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t) {
      for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += src[t][i];
    }
  }

  out.teacher = fwd.embeddings.teacher;
  out.mu = out.elbo.d_mu;
  for (double& v : out.mu.values()) v = -v;
  out.omega = Matrix(state.omega.rows(), state.omega.cols());
  if (options.omega_gradient) {
    for (std::size_t i = 0; i < out.omega.values().size(); ++i) out.omega.values()[i] = -out.elbo.d_omega.values()[i];
  }
  return out;
}

StepMetrics train_step(TrainState& state, const TrainConfig& config, const Dataset& data,
                       std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  BatchInputs inputs;
  for (std::size_t r : rows) {
    if (r >= data.size()) throw Error(ErrorCode::kInvalidInput, "batch row out of range");
    const auto x = data.points.row(r);
    inputs.student.push_back(augment(x, state.rng, config.augment));
    inputs.teacher.push_back(augment(x, state.rng, config.augment));
    inputs.gating.push_back(augment(x, state.rng, config.augment));
  }

  LossGradient lg = loss_and_gradient(state, config, inputs);
  if (!std::isfinite(lg.loss)) {
    throw Error(ErrorCode::kNonFiniteLoss, "loss " + format_double(lg.loss) + " at epoch " +
                                               std::to_string(state.epoch + 1) + " (expected log-expert " +
                                               format_double(lg.elbo.expected_log_expert) + ", KL " +
                                               format_double(lg.elbo.kl) + ")");
  }

  auto params = state.student.tensors();
  const auto grads = std::as_const(lg.network).tensors();
  auto bufs = state.momentum.network.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    sgd_update(params[t], grads[t], bufs[t], state.lr, config.sgd_momentum, config.weight_decay);
  }
  if (config.mu_gradient && !config.flags.a5_no_class_term) {
    sgd_update(state.mu.mu.values(), lg.mu.values(), state.momentum.mu.values(), state.lr, config.sgd_momentum,
               config.weight_decay);
  }
  if (config.omega_trainable && !config.flags.a3_uniform_gating) {
    sgd_update(state.omega.values(), lg.omega.values(), state.momentum.omega.values(), state.lr,
               config.sgd_momentum, config.weight_decay);
    state.omega = normalize_rows(state.omega);
  }

  ema_update(state.teacher, state.student, config.ema_momentum);

  // Queue and prototype sums take the teacher outputs computed before the
  // EMA update.
  const std::vector<Label> labels = hard_assign(lg.elbo.posterior);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    state.queue.push(lg.teacher[n]);
    state.accumulator.accumulate_row(lg.teacher[n].row(head_for(labels[n], config.flags)), labels[n]);
  }
  return StepMetrics{lg.loss, lg.elbo.elbo, lg.elbo.posterior_entropy};
}

double scheduled_lr(const TrainConfig& config, std::size_t epoch) {
  double lr = config.lr_initial;
  for (double m : config.lr_milestones) {
    const auto boundary = static_cast<std::size_t>(std::llround(m * static_cast<double>(config.epochs)));
    if (epoch >= boundary) lr *= config.lr_decay;
  }
  return lr;
}

void end_of_epoch(TrainState& state, const TrainConfig& config) {
  if (config.analytic_mu_update && !config.flags.a5_no_class_term) {
    state.mu = analytical_update(state.accumulator, state.mu);
  }
  state.accumulator.reset();
  ++state.epoch;
  state.lr = scheduled_lr(config, state.epoch);
}

EvalResult evaluate(const TrainState& state, const TrainConfig& config, const Dataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw Error(ErrorCode::kEmptyInput, "dataset is empty");
  Embeddings emb;
  emb.student.resize(n);
  emb.teacher.resize(n);
  emb.gating.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const auto x = data.points.row(i);
    emb.student[i] = forward_student(x, state.student).embeddings;
    emb.teacher[i] = forward_teacher(x, state.teacher);
    emb.gating[i] = forward_gating(x, state.student).embedding;
  });
  ElboOptions options;
  options.zhat = config.zhat_mode();
  options.want_gradients = false;
  const ElboBatch result = elbo_batch(emb, state.queue, state.mu, state.omega, config.temps, config.flags, options);
  return EvalResult{hard_assign(result.posterior), result.posterior};
}

void run_epochs(TrainState& state, const TrainConfig& config, const Dataset& data, std::size_t count,
                std::vector<EpochMetrics>* log) {
  const std::size_t n = data.size();
  for (std::size_t e = 0; e < count; ++e) {
    EpochMetrics metrics;
    metrics.lr = state.lr;
    const std::vector<std::size_t> order = random_permutation(n, state.rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const StepMetrics step = train_step(state, config, data, rows);
      const double weight = static_cast<double>(rows.size()) / static_cast<double>(n);
      metrics.mean_loss += weight * step.loss;
      metrics.mean_elbo += weight * step.elbo;
      metrics.mean_entropy += weight * step.posterior_entropy;
    }
    metrics.occupancy = state.accumulator.counts();
    end_of_epoch(state, config);
    metrics.epoch = state.epoch;
    const bool due = config.eval_every > 0 && (state.epoch % config.eval_every == 0 || state.epoch == config.epochs);
    if (data.truth && due) {
      const EvalResult eval = evaluate(state, config, data);
      metrics.scores = score_all(*data.truth, eval.labels);
    }
    if (log != nullptr) log->push_back(std::move(metrics));
  }
}

FitResult fit(const TrainConfig& config, const Dataset& data) {
  FitResult result{init_state(config, data), {}};
  run_epochs(result.state, config, data, config.epochs, &result.log);
  return result;
}

}  // namespace mice
