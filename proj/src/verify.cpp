#include "mice/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mice/baselines.hpp"
#include "mice/prototypes.hpp"
#include "mice/trainer.hpp"

namespace mice {

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

Vector random_unit(std::size_t dim, Rng& rng) {
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

EmbeddingQueue random_queue(std::size_t size, std::size_t heads, std::size_t dim, Rng& rng) {
  EmbeddingQueue queue(size, heads, dim);
  for (std::size_t i = 0; i < size; ++i) queue.push(random_unit_rows(heads, dim, rng));
  return queue;
}

CheckResult make(const std::string& suite, const std::string& name, bool passed, const std::string& detail) {
  return CheckResult{suite, name, passed, detail};
}

std::vector<CheckResult> mmd_suite() {
  std::vector<CheckResult> out;
  for (std::size_t d : {2u, 8u, 16u, 128u}) {
    double norm_err = 0.0;
    double dot_err = 0.0;
    const std::size_t k_max = std::min<std::size_t>(64, d + 1);
    for (std::size_t k = 2; k <= k_max; ++k) {
      const Matrix w = mmd_centers(k, d).omega;
      const double target = -1.0 / static_cast<double>(k - 1);
      for (std::size_t i = 0; i < k; ++i) {
        norm_err = std::max(norm_err, std::abs(l2_norm(w.row(i)) - 1.0));
        for (std::size_t j = i + 1; j < k; ++j) dot_err = std::max(dot_err, std::abs(dot(w.row(i), w.row(j)) - target));
      }
    }
    out.push_back(make("mmd", "d=" + std::to_string(d) + " K=2.." + std::to_string(k_max),
                       norm_err <= 1e-12 && dot_err <= 1e-9,
                       "max norm error " + fmt(norm_err) + ", max dot error " + fmt(dot_err)));
  }
  return out;
}

std::vector<CheckResult> gradients_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  TrainConfig base;
  base.embed_dim = 4;
  base.hidden_dims = {16};
  base.num_clusters = 3;
  base.queue_size = 8;
  struct Variant {
    const char* name;
    TrainConfig config;
  };
  std::vector<Variant> variants;
  variants.push_back({"full model", base});
  TrainConfig reduced = contrastive_config(base);
  variants.push_back({"uniform gating, one head, no class term", reduced});
  TrainConfig trainable = base;
  trainable.omega_trainable = true;
  variants.push_back({"trainable gating prototypes", trainable});
  TrainConfig queue_only = base;
  queue_only.zhat_include_positive = false;
  variants.push_back({"queue-only normalizer", queue_only});
  for (const Variant& v : variants) {
    const GradientCheckReport r = gradient_check(v.config, 8, 4, seed);
    out.push_back(make("gradients", v.name, r.max_rel_error < 1e-4,
                       "max rel error " + fmt(r.max_rel_error) + " over " + std::to_string(r.parameters_checked) +
                           " parameters (worst " + r.worst + ")"));
  }
  return out;
}

std::vector<CheckResult> theorems_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed + 11);
  const ModelFlags reduced{true, true, true};
  const Temperatures temps{0.5, 1.0};

  double infonce_err = 0.0;
  double uniform_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t d = 2 + rng.below(15);
    const std::size_t nu = 1 + rng.below(32);
    const std::size_t b = 1 + rng.below(6);
    const Embeddings batch = random_embeddings(b, k, d, rng);
    const EmbeddingQueue queue = random_queue(nu, k, d, rng);
    const ExpertPrototypes mu{random_unit_rows(k, d, rng)};
    const Matrix omega = random_unit_rows(k, d, rng);
    ElboOptions opts;
    opts.want_gradients = false;
    const ElboBatch e = elbo_batch(batch, queue, mu, omega, temps, reduced, opts);
    Matrix negatives(nu, d);
    for (std::size_t i = 0; i < nu; ++i) std::copy_n(queue.row(i, 0).begin(), d, negatives.row(i).begin());
    double mean = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      mean += infonce_loss(batch.student[n].row(0), batch.teacher[n].row(0), negatives, temps.tau);
    }
    mean /= static_cast<double>(b);
    infonce_err = std::max(infonce_err, std::abs(-e.elbo - mean));
    for (double q : e.posterior.values()) uniform_err = std::max(uniform_err, std::abs(q - 1.0 / static_cast<double>(k)));
  }
  out.push_back(make("theorems", "reduced model loss equals InfoNCE", infonce_err <= 1e-10,
                     "max |(-ELBO) - InfoNCE| " + fmt(infonce_err)));
  out.push_back(make("theorems", "reduced model posterior is uniform", uniform_err <= 1e-12,
                     "max |q - 1/K| " + fmt(uniform_err)));

  std::size_t agree = 0;
  const std::size_t trials = 50;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t d = 2 + rng.below(10);
    const std::size_t n = k + rng.below(120);
    const Matrix f = random_unit_rows(n, d, rng);
    const Matrix v = random_unit_rows(n, d, rng);
    const Matrix mu = random_unit_rows(k, d, rng);
    if (compare_em_with_kmeans(f, v, mu, mu, 1.0).equivalent) ++agree;
  }
  out.push_back(make("theorems", "hard EM step equals one spherical k-means step", agree == trials,
                     std::to_string(agree) + "/" + std::to_string(trials) + " random states agree"));

  std::size_t optimal = 0;
  const std::size_t perturbations = 100;
  {
    const std::size_t n = 30, k = 3, d = 5;
    const Embeddings data = random_embeddings(n, k, d, rng);
    const ExpertPrototypes mu{random_unit_rows(k, d, rng)};
    const Matrix omega = mmd_centers(k, d).omega;
    const ModelFlags flags;
    const Temperatures unit;
    const PosteriorMatrix q = exact_posterior(data, mu, omega, unit, flags);
    const double best = exact_elbo(data, q, mu, omega, unit, flags);
    for (std::size_t p = 0; p < perturbations; ++p) {
      PosteriorMatrix other = q;
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (double& x : other.row(i)) sum += (x *= std::exp(rng.uniform(-1.0, 1.0)));
        for (double& x : other.row(i)) x /= sum;
      }
      if (exact_elbo(data, other, mu, omega, unit, flags) <= best) ++optimal;
    }
  }
  out.push_back(make("theorems", "exact posterior maximizes the exact ELBO", optimal == perturbations,
                     std::to_string(optimal) + "/" + std::to_string(perturbations) + " perturbations do not improve"));
  return out;
}

std::vector<CheckResult> bound_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed + 29);
  double worst_slack[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 1 + rng.below(4);
    const std::size_t d = 2 + rng.below(8);
    const std::size_t n = 2 + rng.below(60);
    const std::size_t nu = 1 + rng.below(n);
    const double tau = rng.uniform(0.2, 2.0);
    const Embeddings data = random_embeddings(n, k, d, rng);
    const Matrix mu = random_unit_rows(k, d, rng);
    const std::vector<std::size_t> order = random_permutation(n, rng);
    EmbeddingQueue queue(nu, k, d);
    for (std::size_t i = 0; i < nu; ++i) queue.push(data.teacher[order[i]]);
    const EmbeddingQueue everything = full_dataset_queue(data);
    const std::size_t x = rng.below(n);
    const Vector log_z = log_zhat(data.student[x], data.teacher[x], everything, mu, tau, {}, ZhatMode::kQueueOnly);
    for (int mode = 0; mode < 2; ++mode) {
      const ZhatMode m = mode == 0 ? ZhatMode::kQueueOnly : ZhatMode::kWithPositive;
      const double effective = static_cast<double>(nu + (mode == 0 ? 0 : 1));
      const Vector approx = log_zhat(data.student[x], data.teacher[x], queue, mu, tau, {}, m);
      const double bound = std::log(static_cast<double>(n)) - std::log(effective) + 4.0 / tau;
      for (std::size_t j = 0; j < k; ++j) worst_slack[mode] = std::min(worst_slack[mode], bound - (log_z[j] - approx[j]));
    }
  }
  out.push_back(make("bound", "log(Z/Zhat) bound, queue-only normalizer", worst_slack[0] >= 0.0,
                     "smallest slack " + fmt(worst_slack[0])));
  out.push_back(make("bound", "log(Z/Zhat) bound, normalizer with positive pair", worst_slack[1] >= 0.0,
                     "smallest slack " + fmt(worst_slack[1])));

  // With the whole dataset in the queue the approximate posterior is exact.
  double post_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 2 + rng.below(3);
    const std::size_t d = 3 + rng.below(6);
    const std::size_t n = 10 + rng.below(60);
    const Embeddings data = random_embeddings(n, k, d, rng);
    const ExpertPrototypes mu{random_unit_rows(k, d, rng)};
    const Matrix omega = mmd_centers(k, d).omega;
    const Temperatures temps{rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)};
    const PosteriorMatrix exact = exact_posterior(data, mu, omega, temps, {});
    ElboOptions opts;
    opts.zhat = ZhatMode::kQueueOnly;
    opts.want_gradients = false;
    const ElboBatch e = elbo_batch(data, full_dataset_queue(data), mu, omega, temps, {}, opts);
    // Independent sum of exp over the dataset for every (n, k).
    const Matrix mu_unit = mu.normalized();
    for (std::size_t i = 0; i < n; ++i) {
      Vector terms(k);
      for (std::size_t j = 0; j < k; ++j) {
        Vector s(d);
        for (std::size_t c = 0; c < d; ++c) s[c] = data.student[i](j, c) + mu_unit(j, c);
        double z = 0.0;
        for (std::size_t m = 0; m < n; ++m) z += std::exp(dot(data.teacher[m].row(j), s) / temps.tau);
        const double phi = std::exp(dot(data.teacher[i].row(j), s) / temps.tau);
        terms[j] = gating_dist(data.gating[i], omega, temps.kappa)[j] * phi / z;
      }
      double total = 0.0;
      for (double v : terms) total += v;
      for (std::size_t j = 0; j < k; ++j) {
        post_err = std::max(post_err, std::abs(terms[j] / total - e.posterior(i, j)));
        post_err = std::max(post_err, std::abs(terms[j] / total - exact(i, j)));
      }
    }
  }
  out.push_back(make("bound", "full-dataset queue gives the exact posterior", post_err <= 1e-10,
                     "max deviation from direct Bayes " + fmt(post_err)));
  return out;
}

}  // namespace

Matrix random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  Matrix m(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const Vector v = random_unit(dim, rng);
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
  return m;
}

Embeddings random_embeddings(std::size_t n, std::size_t heads, std::size_t dim, Rng& rng) {
  Embeddings e;
  for (std::size_t i = 0; i < n; ++i) {
    e.student.push_back(random_unit_rows(heads, dim, rng));
    e.teacher.push_back(random_unit_rows(heads, dim, rng));
    e.gating.push_back(random_unit(dim, rng));
  }
  return e;
}

GradientCheckReport gradient_check(const TrainConfig& config, std::size_t input_dim, std::size_t batch,
                                   std::uint64_t seed, double step, double floor) {
  Rng rng(seed + 7);
  Dataset data;
  data.points = Matrix(config.queue_size, input_dim);
  for (double& v : data.points.values()) v = rng.normal();
  TrainConfig cfg = config;
  cfg.seed = seed;
  TrainState state = init_state(cfg, data);
  // Spread mu away from unit norm so the normalization Jacobian matters.
  for (double& v : state.mu.mu.values()) v *= rng.uniform(0.5, 2.0);

  BatchInputs inputs;
  for (std::size_t n = 0; n < batch; ++n) {
    for (auto* view : {&inputs.student, &inputs.teacher, &inputs.gating}) {
      Vector x(input_dim);
      for (double& v : x) v = rng.normal();
      view->push_back(std::move(x));
    }
  }
  const LossGradient analytic = loss_and_gradient(state, cfg, inputs);

  GradientCheckReport report;
  const auto probe = [&](double& param, double grad, const std::string& label) {
    const double saved = param;
    param = saved + step;
    const double up = loss_and_gradient(state, cfg, inputs).loss;
    param = saved - step;
    const double down = loss_and_gradient(state, cfg, inputs).loss;
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(numeric - grad) / std::max({std::abs(numeric), std::abs(grad), floor});
    ++report.parameters_checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = label;
    }
  };

  auto params = state.student.tensors();
  const auto grads = analytic.network.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      probe(params[t][i], grads[t][i], "network tensor " + std::to_string(t) + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t i = 0; i < state.mu.mu.values().size(); ++i) {
    probe(state.mu.mu.values()[i], analytic.mu.values()[i], "mu[" + std::to_string(i) + "]");
  }
  if (cfg.omega_trainable && !cfg.flags.a3_uniform_gating) {
    for (std::size_t i = 0; i < state.omega.values().size(); ++i) {
      probe(state.omega.values()[i], analytic.omega.values()[i], "omega[" + std::to_string(i) + "]");
    }
  }
  return report;
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names = {"mmd", "gradients", "theorems", "bound"};
  return names;
}

std::vector<CheckResult> run_verify_suite(const std::string& name, std::uint64_t seed) {
  if (name == "all") {
    std::vector<CheckResult> out;
    for (const std::string& n : verify_suite_names()) {
      auto part = run_verify_suite(n, seed);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  if (name == "mmd") return mmd_suite();
  if (name == "gradients") return gradients_suite(seed);
  if (name == "theorems") return theorems_suite(seed);
  if (name == "bound") return bound_suite(seed);
  throw Error(ErrorCode::kInvalidInput, "unknown verify suite '" + name + "'");
}

}  // namespace mice
