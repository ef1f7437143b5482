#include "mice/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mice {

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, std::size_t heads, std::size_t dim)
    : capacity_(capacity), heads_(heads), dim_(dim), data_(capacity * heads * dim, 0.0) {
  if (capacity == 0 || heads == 0 || dim == 0) throw Error(ErrorCode::kInvalidInput, "queue dimensions must be positive");
}

void EmbeddingQueue::push(const Matrix& block) {
  if (block.rows() != heads_ || block.cols() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "queue block must be " + std::to_string(heads_) + "x" +
                                                   std::to_string(dim_));
  }
  std::size_t slot;
  if (size_ < capacity_) {
    slot = (head_ + size_) % capacity_;
    ++size_;
  } else {
    slot = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(block.values().begin(), block.values().end(), data_.begin() + slot * heads_ * dim_);
}

void EmbeddingQueue::clear() {
  head_ = 0;
  size_ = 0;
  std::fill(data_.begin(), data_.end(), 0.0);
}

Matrix EmbeddingQueue::block(std::size_t i) const {
  if (i >= size_) throw Error(ErrorCode::kInvalidInput, "queue index out of range");
  Matrix out(heads_, dim_);
  for (std::size_t k = 0; k < heads_; ++k) std::copy_n(row(i, k).begin(), dim_, out.row(k).begin());
  return out;
}

std::vector<Matrix> EmbeddingQueue::blocks() const {
  std::vector<Matrix> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) out.push_back(block(i));
  return out;
}

EmbeddingQueue EmbeddingQueue::from_blocks(std::size_t capacity, std::size_t heads, std::size_t dim,
                                           const std::vector<Matrix>& blocks) {
  if (blocks.size() > capacity) throw Error(ErrorCode::kInvalidInput, "more blocks than queue capacity");
  EmbeddingQueue queue(capacity, heads, dim);
  for (const Matrix& b : blocks) queue.push(b);
  return queue;
}

bool operator==(const EmbeddingQueue& a, const EmbeddingQueue& b) {
  if (a.capacity_ != b.capacity_ || a.heads_ != b.heads_ || a.dim_ != b.dim_ || a.size_ != b.size_) return false;
  for (std::size_t i = 0; i < a.size_; ++i) {
    for (std::size_t k = 0; k < a.heads_; ++k) {
      const auto ra = a.row(i, k);
      const auto rb = b.row(i, k);
      if (!std::equal(ra.begin(), ra.end(), rb.begin())) return false;
    }
  }
  return true;
}

namespace {

std::size_t head_of(std::size_t k, const ModelFlags& flags) { return flags.a4_single_head ? 0 : k; }

void check_block(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                                                   std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                                   "x" + std::to_string(cols));
  }
}

// Expert logits and their normalizers for one datapoint. When ds is given,
// row k receives d(log Phi_k - log Zhat_k) / d s_k with s_k = f_k + mu_k.
struct ExpertTerms {
  Vector log_phi;
  Vector log_zhat;
};

ExpertTerms expert_terms(const Matrix& student, const Matrix& teacher, const EmbeddingQueue& queue,
                         const Matrix& mu_unit, double tau, const ModelFlags& flags, ZhatMode mode,
                         Matrix* ds) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "tau " + std::to_string(tau));
  const std::size_t heads = mu_unit.rows();
  const std::size_t d = mu_unit.cols();
  check_block(student, heads, d, "student block");
  check_block(teacher, heads, d, "teacher block");
  if (queue.size() == 0) throw Error(ErrorCode::kEmptyQueue, "normalizer estimate needs a non-empty queue");
  if (queue.heads() != heads || queue.dim() != d) throw Error(ErrorCode::kDimensionMismatch, "queue block shape");

  const std::size_t fill = queue.size();
  const bool with_positive = mode == ZhatMode::kWithPositive;
  ExpertTerms out{Vector(heads), Vector(heads)};
  Vector s(d);
  Vector logits(fill + (with_positive ? 1 : 0));
  for (std::size_t k = 0; k < heads; ++k) {
    const std::size_t h = head_of(k, flags);
    const auto f = student.row(h);
    const auto v = teacher.row(h);
    for (std::size_t c = 0; c < d; ++c) s[c] = flags.a5_no_class_term ? f[c] : f[c] + mu_unit(k, c);
    const double pos = dot(v, s) / tau;
    std::size_t at = 0;
    if (with_positive) logits[at++] = pos;
    for (std::size_t i = 0; i < fill; ++i) logits[at++] = dot(queue.row(i, h), s) / tau;
    const double lz = log_sum_exp(logits);
    out.log_phi[k] = pos;
    out.log_zhat[k] = lz;
    if (ds != nullptr) {
      auto g = ds->row(k);
      const double pos_weight = with_positive ? 1.0 - std::exp(pos - lz) : 1.0;
      for (std::size_t c = 0; c < d; ++c) g[c] = pos_weight * v[c];
      for (std::size_t i = 0; i < fill; ++i) {
        const double r = std::exp(logits[i + (with_positive ? 1 : 0)] - lz);
        if (r == 0.0) continue;
        const auto q = queue.row(i, h);
        for (std::size_t c = 0; c < d; ++c) g[c] -= r * q[c];
      }
      for (std::size_t c = 0; c < d; ++c) g[c] /= tau;
    }
  }
  return out;
}

Vector log_gating(std::span<const double> g, const Matrix& omega, double kappa, const ModelFlags& flags) {
  const std::size_t heads = omega.rows();
  if (flags.a3_uniform_gating) return Vector(heads, -std::log(static_cast<double>(heads)));
  if (g.size() != omega.cols()) throw Error(ErrorCode::kDimensionMismatch, "gating embedding width");
  Vector dots(heads);
  for (std::size_t k = 0; k < heads; ++k) dots[k] = dot(omega.row(k), g);
  return log_softmax_t(dots, kappa);
}

// log q from unnormalized log terms; throws when nothing survives.
Vector normalize_log(const Vector& u) {
  for (double x : u) {
    if (std::isnan(x)) throw Error(ErrorCode::kDegenerateDistribution, "posterior term is NaN");
  }
  const double lse = log_sum_exp(u);
  if (!std::isfinite(lse)) throw Error(ErrorCode::kDegenerateDistribution, "posterior terms all vanish");
  Vector out(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) out[k] = u[k] - lse;
  return out;
}

struct ItemResult {
  Vector q;
  double elbo = 0.0;
  double expected_log_expert = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  Matrix d_student;
  Vector d_gating;
  Matrix d_mu_unit;
  Matrix d_omega;
};

ItemResult elbo_item(const Matrix& student, const Matrix& teacher, std::span<const double> g,
                     const EmbeddingQueue& queue, const Matrix& mu_unit, const Matrix& omega,
                     const Temperatures& temps, const ModelFlags& flags, const ElboOptions& options,
                     std::span<const double> fixed_q) {
  const std::size_t heads = mu_unit.rows();
  const std::size_t d = mu_unit.cols();
  Matrix ds;
  if (options.want_gradients) ds = Matrix(heads, d);
  const ExpertTerms experts = expert_terms(student, teacher, queue, mu_unit, temps.tau, flags, options.zhat,
                                           options.want_gradients ? &ds : nullptr);
  const Vector lg = log_gating(g, omega, temps.kappa, flags);

  Vector u(heads);
  for (std::size_t k = 0; k < heads; ++k) u[k] = lg[k] + experts.log_phi[k] - experts.log_zhat[k];

  ItemResult out;
  Vector lq;
  if (fixed_q.empty()) {
    lq = normalize_log(u);
    out.q.resize(heads);
    for (std::size_t k = 0; k < heads; ++k) out.q[k] = std::exp(lq[k]);
  } else {
    if (fixed_q.size() != heads) throw Error(ErrorCode::kDimensionMismatch, "fixed posterior width");
    out.q.assign(fixed_q.begin(), fixed_q.end());
    lq.resize(heads);
    for (std::size_t k = 0; k < heads; ++k) lq[k] = std::log(out.q[k]);
  }

  for (std::size_t k = 0; k < heads; ++k) {
    if (out.q[k] == 0.0) continue;
    const double e = experts.log_phi[k] - experts.log_zhat[k];
    out.expected_log_expert += out.q[k] * e;
    out.kl += out.q[k] * (lq[k] - lg[k]);
    out.entropy -= out.q[k] * lq[k];
  }
  out.elbo = out.expected_log_expert - out.kl;

  if (!options.want_gradients) return out;

  // dELBO/du_k = q_k both for a detached q and for q = softmax(u), where
  // the ELBO collapses to log-sum-exp(u).
  const Vector& w = out.q;
  out.d_student = Matrix(heads, d);
  out.d_mu_unit = Matrix(heads, d);
  for (std::size_t k = 0; k < heads; ++k) {
    if (w[k] == 0.0) continue;
    const std::size_t h = head_of(k, flags);
    auto df = out.d_student.row(h);
    const auto dsk = ds.row(k);
    for (std::size_t c = 0; c < d; ++c) df[c] += w[k] * dsk[c];
    if (!flags.a5_no_class_term) {
      auto dm = out.d_mu_unit.row(k);
      for (std::size_t c = 0; c < d; ++c) dm[c] += w[k] * dsk[c];
    }
  }
  out.d_gating.assign(d, 0.0);
  if (!flags.a3_uniform_gating) {
    double wsum = 0.0;
    for (double x : w) wsum += x;
    if (options.omega_gradient) out.d_omega = Matrix(heads, d);
    for (std::size_t j = 0; j < heads; ++j) {
      const double da = (w[j] - std::exp(lg[j]) * wsum) / temps.kappa;
      const auto om = omega.row(j);
      for (std::size_t c = 0; c < d; ++c) out.d_gating[c] += da * om[c];
      if (options.omega_gradient) {
        auto dw = out.d_omega.row(j);
        for (std::size_t c = 0; c < d; ++c) dw[c] += da * g[c];
      }
    }
  }
  return out;
}

}  // namespace

Vector gating_dist(std::span<const double> gating_embedding, const Matrix& omega, double kappa,
                   const ModelFlags& flags) {
  Vector out = log_gating(gating_embedding, omega, kappa, flags);
  for (double& x : out) x = std::exp(x);
  return out;
}

Vector log_phi(const Matrix& teacher, const Matrix& student, const Matrix& mu_unit, double tau,
               const ModelFlags& flags) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "tau " + std::to_string(tau));
  const std::size_t heads = mu_unit.rows();
  const std::size_t d = mu_unit.cols();
  check_block(student, heads, d, "student block");
  check_block(teacher, heads, d, "teacher block");
  Vector out(heads);
  Vector s(d);
  for (std::size_t k = 0; k < heads; ++k) {
    const std::size_t h = head_of(k, flags);
    for (std::size_t c = 0; c < d; ++c) {
      s[c] = flags.a5_no_class_term ? student(h, c) : student(h, c) + mu_unit(k, c);
    }
    out[k] = dot(teacher.row(h), s) / tau;
  }
  return out;
}

Vector log_zhat(const Matrix& student, const Matrix& teacher, const EmbeddingQueue& queue, const Matrix& mu_unit,
                double tau, const ModelFlags& flags, ZhatMode mode) {
  return expert_terms(student, teacher, queue, mu_unit, tau, flags, mode, nullptr).log_zhat;
}

Vector posterior(std::span<const double> gating, std::span<const double> log_phi_values,
                 std::span<const double> log_zhat_values) {
  const std::size_t heads = gating.size();
  if (log_phi_values.size() != heads || log_zhat_values.size() != heads) {
    throw Error(ErrorCode::kLengthMismatch, "posterior inputs disagree in length");
  }
  Vector u(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    u[k] = std::log(gating[k]) + log_phi_values[k] - log_zhat_values[k];
  }
  Vector out = normalize_log(u);
  for (double& x : out) x = std::exp(x);
  return out;
}

std::vector<Label> hard_assign(const PosteriorMatrix& q) {
  std::vector<Label> labels(q.rows(), 0);
  for (std::size_t n = 0; n < q.rows(); ++n) {
    const auto row = q.row(n);
    Label best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[best]) best = k;
    }
    labels[n] = best;
  }
  return labels;
}

ElboBatch elbo_batch(const Embeddings& batch, const EmbeddingQueue& queue, const ExpertPrototypes& mu,
                     const Matrix& omega, const Temperatures& temps, const ModelFlags& flags,
                     const ElboOptions& options, const PosteriorMatrix* fixed_posterior) {
  const std::size_t b = batch.size();
  if (b == 0) throw Error(ErrorCode::kEmptyInput, "ELBO of an empty batch");
  if (batch.teacher.size() != b || batch.gating.size() != b) {
    throw Error(ErrorCode::kLengthMismatch, "batch embeddings disagree in count");
  }
  if (fixed_posterior != nullptr && fixed_posterior->rows() != b) {
    throw Error(ErrorCode::kLengthMismatch, "fixed posterior rows");
  }
  if (omega.rows() != mu.mu.rows() || omega.cols() != mu.mu.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "gating and expert prototypes disagree in shape");
  }
  const Matrix mu_unit = mu.normalized();
  const std::size_t heads = mu_unit.rows();
  const std::size_t d = mu_unit.cols();

  std::vector<ItemResult> items(b);
  parallel_for(b, [&](std::size_t n) {
    const std::span<const double> fixed =
        fixed_posterior != nullptr ? fixed_posterior->row(n) : std::span<const double>{};
    items[n] = elbo_item(batch.student[n], batch.teacher[n], batch.gating[n], queue, mu_unit, omega, temps, flags,
                         options, fixed);
  });

  ElboBatch out;
  out.posterior = PosteriorMatrix(b, heads);
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t n = 0; n < b; ++n) {
    std::copy(items[n].q.begin(), items[n].q.end(), out.posterior.row(n).begin());
    out.elbo += items[n].elbo;
    out.expected_log_expert += items[n].expected_log_expert;
    out.kl += items[n].kl;
    out.posterior_entropy += items[n].entropy;
  }
  out.elbo *= scale;
  out.expected_log_expert *= scale;
  out.kl *= scale;
  out.posterior_entropy *= scale;
  if (!options.want_gradients) return out;

  Matrix d_mu_unit(heads, d);
  if (options.omega_gradient) out.d_omega = Matrix(heads, d);
  out.d_student.reserve(b);
  out.d_gating.reserve(b);
  for (std::size_t n = 0; n < b; ++n) {
    ItemResult& item = items[n];
    for (double& x : item.d_student.values()) x *= scale;
    for (double& x : item.d_gating) x *= scale;
    out.d_student.push_back(std::move(item.d_student));
    out.d_gating.push_back(std::move(item.d_gating));
    auto dm = d_mu_unit.values();
    const auto src = item.d_mu_unit.values();
    for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += scale * src[i];
    if (options.omega_gradient && !item.d_omega.empty()) {
      auto dw = out.d_omega.values();
      const auto ws = item.d_omega.values();
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += scale * ws[i];
    }
  }

  // Chain through mu_unit = mu / |mu|.
  out.d_mu = Matrix(heads, d);
  for (std::size_t k = 0; k < heads; ++k) {
    const double norm = l2_norm(mu.mu.row(k));
    const auto unit = mu_unit.row(k);
    const auto g = d_mu_unit.row(k);
    const double proj = dot(unit, g);
    for (std::size_t c = 0; c < d; ++c) out.d_mu(k, c) = (g[c] - unit[c] * proj) / norm;
  }
  return out;
}

EmbeddingQueue full_dataset_queue(const Embeddings& data) {
  if (data.size() == 0) throw Error(ErrorCode::kEmptyInput, "empty dataset");
  const Matrix& first = data.teacher.front();
  EmbeddingQueue queue(data.size(), first.rows(), first.cols());
  for (const Matrix& block : data.teacher) queue.push(block);
  return queue;
}

namespace {

// Per-datapoint log p(k|x_n) and log p(y_n|x_n,k) with exact Z.
struct ExactTerms {
  Vector log_gating;
  Vector log_expert;
};

std::vector<ExactTerms> exact_terms(const Embeddings& data, const ExpertPrototypes& mu, const Matrix& omega,
                                    const Temperatures& temps, const ModelFlags& flags) {
  const EmbeddingQueue queue = full_dataset_queue(data);
  const Matrix mu_unit = mu.normalized();
  std::vector<ExactTerms> out(data.size());
  parallel_for(data.size(), [&](std::size_t n) {
    const ExpertTerms e = expert_terms(data.student[n], data.teacher[n], queue, mu_unit, temps.tau, flags,
                                       ZhatMode::kQueueOnly, nullptr);
    out[n].log_gating = log_gating(data.gating[n], omega, temps.kappa, flags);
    out[n].log_expert.resize(e.log_phi.size());
    for (std::size_t k = 0; k < e.log_phi.size(); ++k) out[n].log_expert[k] = e.log_phi[k] - e.log_zhat[k];
  });
  return out;
}

}  // namespace

PosteriorMatrix exact_posterior(const Embeddings& data, const ExpertPrototypes& mu, const Matrix& omega,
                                const Temperatures& temps, const ModelFlags& flags) {
  const auto terms = exact_terms(data, mu, omega, temps, flags);
  PosteriorMatrix q(data.size(), mu.mu.rows());
  for (std::size_t n = 0; n < terms.size(); ++n) {
    Vector u(terms[n].log_gating.size());
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = terms[n].log_gating[k] + terms[n].log_expert[k];
    const Vector lq = normalize_log(u);
    for (std::size_t k = 0; k < u.size(); ++k) q(n, k) = std::exp(lq[k]);
  }
  return q;
}

double exact_elbo(const Embeddings& data, const PosteriorMatrix& q, const ExpertPrototypes& mu, const Matrix& omega,
                  const Temperatures& temps, const ModelFlags& flags) {
  if (q.rows() != data.size() || q.cols() != mu.mu.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "posterior shape does not match the dataset");
  }
  const auto terms = exact_terms(data, mu, omega, temps, flags);
  double total = 0.0;
  for (std::size_t n = 0; n < terms.size(); ++n) {
    for (std::size_t k = 0; k < q.cols(); ++k) {
      const double qk = q(n, k);
      if (qk == 0.0) continue;
      total += qk * (terms[n].log_gating[k] + terms[n].log_expert[k] - std::log(qk));
    }
  }
  return total;
}

double exact_log_evidence(const Embeddings& data, const ExpertPrototypes& mu, const Matrix& omega,
                          const Temperatures& temps, const ModelFlags& flags) {
  const auto terms = exact_terms(data, mu, omega, temps, flags);
  double total = 0.0;
  for (const ExactTerms& t : terms) {
    Vector u(t.log_gating.size());
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = t.log_gating[k] + t.log_expert[k];
    total += log_sum_exp(u);
  }
  return total;
}

}  // namespace mice
