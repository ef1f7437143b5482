// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "mice/baselines.hpp"
#include "mice/metrics.hpp"
#include "mice/prototypes.hpp"
#include "mice/report.hpp"
#include "mice/trainer.hpp"
#include "mice/verify.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

EmbeddingQueue random_queue(std::size_t size, std::size_t heads, std::size_t dim, Rng& rng) {
  EmbeddingQueue queue(size, heads, dim);
  for (std::size_t i = 0; i < size; ++i) queue.push(random_unit_rows(heads, dim, rng));
  return queue;
}

ModelFlags random_flags(Rng& rng) {
  return ModelFlags{rng.below(2) == 1, rng.below(2) == 1, rng.below(2) == 1};
}

Matrix raw_mu(std::size_t k, std::size_t d, Rng& rng) {
  Matrix mu = random_unit_rows(k, d, rng);
  for (double& v : mu.values()) v *= rng.uniform(0.5, 2.0);
  return mu;
}

Outcome mmd_dispersion() {
  const auto start = Clock::now();
  double norm_err = 0.0, dot_err = 0.0;
  std::size_t cases = 0;
  for (std::size_t d : {2u, 8u, 16u, 128u}) {
    for (std::size_t k = 2; k <= std::min<std::size_t>(64, d + 1); ++k) {
      const Matrix w = mmd_centers(k, d).omega;
      const double target = -1.0 / static_cast<double>(k - 1);
      for (std::size_t i = 0; i < k; ++i) {
        norm_err = std::max(norm_err, std::abs(std::sqrt(oracle::dot(w.row(i).data(), w.row(i).data(), d)) - 1.0));
        for (std::size_t j = i + 1; j < k; ++j) {
          dot_err = std::max(dot_err, std::abs(oracle::dot(w.row(i).data(), w.row(j).data(), d) - target));
        }
      }
      ++cases;
    }
  }
  const double secs = seconds_since(start);
  return {norm_err <= 1e-12 && dot_err <= 1e-9 && secs < 1.0,
          std::to_string(cases) + " (K,d) pairs, max norm error " + sci(norm_err) + ", max dot error " +
              sci(dot_err) + ", " + fixed(secs, 3) + " s"};
}

Outcome posterior_normalization() {
  const auto start = Clock::now();
  Rng rng(2);
  double worst = 0.0;
  std::size_t rows = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t k = 1 + rng.below(8);
    const std::size_t d = 2 + rng.below(15);
    const std::size_t b = 1 + rng.below(4);
    const std::size_t nu = 1 + rng.below(16);
    const Embeddings batch = random_embeddings(b, k, d, rng);
    const EmbeddingQueue queue = random_queue(nu, k, d, rng);
    const ExpertPrototypes mu{raw_mu(k, d, rng)};
    const Matrix omega = random_unit_rows(k, d, rng);
    const Temperatures temps{rng.uniform(0.05, 2.0), rng.uniform(0.05, 2.0)};
    ElboOptions opts;
    opts.want_gradients = false;
    opts.zhat = rng.below(2) == 0 ? ZhatMode::kWithPositive : ZhatMode::kQueueOnly;
    const ElboBatch e = elbo_batch(batch, queue, mu, omega, temps, random_flags(rng), opts);
    for (std::size_t n = 0; n < b; ++n) {
      double sum = 0.0;
      for (double q : e.posterior.row(n)) sum += q;
      worst = std::max(worst, std::abs(sum - 1.0));
      ++rows;
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-12 && secs < 10.0,
          std::to_string(rows) + " rows from 10000 states, max |sum - 1| " + sci(worst) + ", " + fixed(secs, 2) + " s"};
}

// Central differences of the batch loss against the analytic gradient over
// every student parameter and raw mu (and omega where trainable).
Outcome gradient_fidelity() {
  const auto start = Clock::now();
  const std::size_t input_dim = 8, batch = 4;
  const double h = 1e-5, floor = 1e-8;
  TrainConfig base;
  base.embed_dim = 4;
  base.hidden_dims = {16};
  base.num_clusters = 3;
  base.batch_size = batch;
  base.queue_size = 8;
  TrainConfig trainable = base;
  trainable.omega_trainable = true;

  double worst = 0.0;
  std::size_t checked = 0;
  Rng rng(3);
  for (const TrainConfig& config : {base, trainable}) {
    Dataset data;
    data.points = Matrix(config.queue_size, input_dim);
    for (double& v : data.points.values()) v = rng.normal();
    TrainState state = init_state(config, data);
    for (double& v : state.mu.mu.values()) v *= rng.uniform(0.5, 2.0);
    BatchInputs inputs;
    for (std::size_t n = 0; n < batch; ++n) {
      for (auto* view : {&inputs.student, &inputs.teacher, &inputs.gating}) {
        Vector x(input_dim);
        for (double& v : x) v = rng.normal();
        view->push_back(std::move(x));
      }
    }
    const LossGradient analytic = loss_and_gradient(state, config, inputs);
    const auto probe = [&](double& param, double grad) {
      const double saved = param;
      param = saved + h;
      const double up = loss_and_gradient(state, config, inputs).loss;
      param = saved - h;
      const double down = loss_and_gradient(state, config, inputs).loss;
      param = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(numeric - grad) / std::max({std::abs(numeric), std::abs(grad), floor}));
      ++checked;
    };
    auto params = state.student.tensors();
    const auto grads = analytic.network.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) probe(params[t][i], grads[t][i]);
    }
    for (std::size_t i = 0; i < state.mu.mu.values().size(); ++i) probe(state.mu.mu.values()[i], analytic.mu.values()[i]);
    if (config.omega_trainable) {
      for (std::size_t i = 0; i < state.omega.values().size(); ++i) {
        probe(state.omega.values()[i], analytic.omega.values()[i]);
      }
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 30.0,
          std::to_string(checked) + " parameters, max relative error " + sci(worst) + ", " + fixed(secs, 2) + " s"};
}

Outcome infonce_reduction() {
  Rng rng(4);
  const ModelFlags reduced{true, true, true};
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + rng.below(6);
    const std::size_t d = 2 + rng.below(15);
    const std::size_t nu = 1 + rng.below(64);
    const std::size_t b = 1 + rng.below(8);
    const Temperatures temps{rng.uniform(0.05, 1.0), 1.0};
    const Embeddings batch = random_embeddings(b, k, d, rng);
    const EmbeddingQueue queue = random_queue(nu, k, d, rng);
    const ExpertPrototypes mu{raw_mu(k, d, rng)};
    const Matrix omega = random_unit_rows(k, d, rng);
    ElboOptions opts;
    opts.want_gradients = false;
    const double loss = -elbo_batch(batch, queue, mu, omega, temps, reduced, opts).elbo;
    Matrix negatives(nu, d);
    for (std::size_t i = 0; i < nu; ++i) std::copy_n(queue.row(i, 0).begin(), d, negatives.row(i).begin());
    double mean = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      mean += infonce_loss(batch.student[n].row(0), batch.teacher[n].row(0), negatives, temps.tau);
    }
    mean /= static_cast<double>(b);
    worst = std::max(worst, std::abs(loss - mean));
  }
  return {worst <= 1e-10, "100 instances, max |(-ELBO) - InfoNCE| " + sci(worst)};
}

Outcome uniform_posterior() {
  Rng rng(5);
  const ModelFlags reduced{true, true, true};
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + rng.below(8);
    const std::size_t d = 2 + rng.below(15);
    const Embeddings batch = random_embeddings(1 + rng.below(8), k, d, rng);
    const EmbeddingQueue queue = random_queue(1 + rng.below(32), k, d, rng);
    const ExpertPrototypes mu{raw_mu(k, d, rng)};
    const Matrix omega = random_unit_rows(k, d, rng);
    ElboOptions opts;
    opts.want_gradients = false;
    const ElboBatch e =
        elbo_batch(batch, queue, mu, omega, Temperatures{rng.uniform(0.05, 1.0), 1.0}, reduced, opts);
    for (double q : e.posterior.values()) worst = std::max(worst, std::abs(q - 1.0 / static_cast<double>(k)));
  }
  return {worst <= 1e-12, "100 instances, max |q - 1/K| " + sci(worst)};
}

Outcome kmeans_equivalence() {
  Rng rng(6);
  std::size_t agree = 0;
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    SyntheticSpec spec;
    spec.num_clusters = 2 + rng.below(4);
    spec.input_dim = 4 + rng.below(9);
    spec.points_per_cluster = 128 / spec.num_clusters - rng.below(10);
    spec.concentration = rng.uniform(1.0, 50.0);
    spec.seed = t;
    const Dataset data = generate(spec);
    TrainConfig config;
    config.flags.a3_uniform_gating = true;
    config.flags.a4_single_head = true;
    config.num_clusters = 2 + rng.below(4);
    config.embed_dim = std::max<std::size_t>(2, config.num_clusters - 1) + rng.below(10);
    config.hidden_dims = {8};
    config.queue_size = 32;
    config.batch_size = 32;
    config.epochs = t % 2;
    config.seed = t;
    const TrainState state = fit(config, data).state;
    const KMeansEquivalenceReport r = kmeans_equivalence_check(state, config, data);
    agree += r.equivalent;
    worst = std::max(worst, r.max_prototype_diff);
  }
  return {agree == 100, std::to_string(agree) + "/100 states agree, max prototype difference " + sci(worst)};
}

// log(Z / Zhat) against log N - log nu + 4 / tau, with Z summed over the
// whole dataset by the oracle and Zhat from the queue.
Outcome approximation_bound() {
  Rng rng(7);
  double min_slack = std::numeric_limits<double>::infinity();
  std::size_t checks = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.below(5);
    const std::size_t d = 2 + rng.below(10);
    const std::size_t n = 20 + rng.below(100);
    const std::size_t nu = 1 + rng.below(n);
    const double tau = rng.uniform(0.1, 2.0);
    const ModelFlags flags = random_flags(rng);
    const Embeddings data = random_embeddings(n, k, d, rng);
    const Matrix mu_raw = raw_mu(k, d, rng);
    const Matrix mu_unit = normalize_rows(mu_raw);
    EmbeddingQueue queue(nu, k, d);
    for (std::size_t i : random_permutation(n, rng)) {
      if (queue.size() == nu) break;
      queue.push(data.teacher[i]);
    }
    const std::size_t item = rng.below(n);
    const ZhatMode mode = t % 2 == 0 ? ZhatMode::kWithPositive : ZhatMode::kQueueOnly;
    const Vector lz = log_zhat(data.student[item], data.teacher[item], queue, mu_unit, tau, flags, mode);
    const double bound = std::log(static_cast<double>(n)) - std::log(static_cast<double>(nu)) + 4.0 / tau;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t h = flags.a4_single_head ? 0 : j;
      const Vector s = oracle::score(data.student[item], mu_raw, j, flags);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) z += std::exp(oracle::dot(data.teacher[i].row(h).data(), s.data(), d) / tau);
      min_slack = std::min(min_slack, bound - (std::log(z) - lz[j]));
      ++checks;
    }
  }
  return {min_slack >= 0.0, "1000 states, " + std::to_string(checks) + " experts, minimum slack " + fixed(min_slack)};
}

// Frozen teacher, queue = whole dataset (exact Z), posterior held fixed
// between E-steps, plain full-batch SGD.
Outcome exact_regime_monotonicity() {
  SyntheticSpec spec;
  spec.num_clusters = 4;
  spec.input_dim = 8;
  spec.points_per_cluster = 50;
  spec.concentration = 20.0;
  spec.seed = 8;
  const Dataset data = generate(spec);
  TrainConfig config;
  config.num_clusters = 4;
  config.embed_dim = 8;
  config.hidden_dims = {16};
  config.queue_size = data.size();
  config.batch_size = data.size();
  config.zhat_include_positive = false;
  config.detach_posterior = true;
  config.seed = 8;
  const double lr = 1e-3;
  TrainState state = init_state(config, data);

  BatchInputs inputs;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto x = data.points.row(n);
    inputs.student.emplace_back(x.begin(), x.end());
    inputs.teacher.emplace_back(x.begin(), x.end());
    inputs.gating.emplace_back(x.begin(), x.end());
  }
  state.queue = full_dataset_queue(forward_batch(state, inputs).embeddings);

  const auto objective = [&](const Embeddings& e, const PosteriorMatrix& q) {
    return oracle::exact_elbo(e, q, state.mu.mu, state.omega, config.temps, config.flags);
  };
  double worst_step = 0.0, worst_refresh = 0.0;
  PosteriorMatrix q_old;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    const Embeddings e = forward_batch(state, inputs).embeddings;
    const PosteriorMatrix q = exact_posterior(e, state.mu, state.omega, config.temps, config.flags);
    const double before = objective(e, q);
    if (step == 0) first = before;
    if (step > 0) worst_refresh = std::max(worst_refresh, objective(e, q_old) - before);
    const LossGradient g = loss_and_gradient(state, config, inputs, &q);
    auto params = state.student.tensors();
    const auto grads = g.network.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) params[t][i] -= lr * grads[t][i];
    }
    for (std::size_t i = 0; i < state.mu.mu.values().size(); ++i) state.mu.mu.values()[i] -= lr * g.mu.values()[i];
    const double after = objective(forward_batch(state, inputs).embeddings, q);
    worst_step = std::max(worst_step, before - after);
    last = after;
    q_old = q;
  }
  return {worst_step <= 1e-6 && worst_refresh <= 0.0,
          "200 steps on N=200, ELBO " + fixed(first) + " -> " + fixed(last) + ", worst step decrease " +
              sci(worst_step) + ", worst E-step decrease " + sci(worst_refresh)};
}

Outcome exact_posterior_oracle() {
  Rng rng(9);
  double worst = 0.0;
  std::size_t rows = 0;
  for (int t = 0; t < 8; ++t) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t d = 2 + rng.below(10);
    const std::size_t n = t == 0 ? 500 : 50 + rng.below(200);
    const ModelFlags flags = random_flags(rng);
    const Temperatures temps{rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5)};
    const Embeddings data = random_embeddings(n, k, d, rng);
    const ExpertPrototypes mu{raw_mu(k, d, rng)};
    const Matrix omega = random_unit_rows(k, d, rng);
    const PosteriorMatrix q = exact_posterior(data, mu, omega, temps, flags);
    const Matrix expected = oracle::bayes_posterior(data, mu.mu, omega, temps, flags);
    for (std::size_t i = 0; i < q.values().size(); ++i) worst = std::max(worst, std::abs(q.values()[i] - expected.values()[i]));
    rows += n;
  }
  return {worst <= 1e-10, std::to_string(rows) + " datapoints over 8 states (N up to 500), max error " + sci(worst)};
}

TrainConfig end_to_end_config(std::uint64_t seed) {
  TrainConfig c;
  c.num_clusters = 4;
  c.embed_dim = 16;
  c.hidden_dims = {64};
  c.queue_size = 1024;
  c.batch_size = 128;
  c.epochs = 30;
  c.lr_initial = 0.5;
  c.ema_momentum = 0.99;
  c.augment = AugmentConfig{0.1, 0.1};
  c.eval_every = 0;
  c.seed = seed;
  return c;
}

Outcome end_to_end() {
  double mice_sum = 0.0, baseline_sum = 0.0, slowest = 0.0;
  std::string per_seed;
  for (std::uint64_t s = 0; s < 5; ++s) {
    SyntheticSpec spec;
    spec.seed = 100 + s;
    const Dataset data = generate(spec);
    const TrainConfig config = end_to_end_config(s);
    const auto start = Clock::now();
    const FitResult fitted = fit(config, data);
    const double mice_acc = acc(*data.truth, evaluate(fitted.state, config, data).labels);
    const double mice_secs = seconds_since(start);
    const auto base_start = Clock::now();
    const double base_acc = acc(*data.truth, two_stage_pipeline(config, data).labels);
    slowest = std::max({slowest, mice_secs, seconds_since(base_start)});
    mice_sum += mice_acc;
    baseline_sum += base_acc;
    per_seed += " " + fixed(mice_acc, 3) + "/" + fixed(base_acc, 3);
  }
  const double mice_mean = mice_sum / 5.0, baseline_mean = baseline_sum / 5.0;
  return {mice_mean >= 0.95 && mice_mean >= baseline_mean && slowest < 300.0,
          "mean ACC " + fixed(mice_mean) + " vs two-stage " + fixed(baseline_mean) + " (per seed" + per_seed +
              "), slowest run " + fixed(slowest, 1) + " s"};
}

Outcome metric_oracles() {
  Rng rng(10);
  std::size_t acc_match = 0;
  double nmi_err = 0.0, ari_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t kt = 1 + rng.below(6), kp = 1 + rng.below(6);
    std::vector<Label> a(n), b(n);
    for (Label& l : a) l = static_cast<Label>(rng.below(kt));
    for (Label& l : b) l = static_cast<Label>(rng.below(kp));
    acc_match += acc(a, b) == oracle::permutation_accuracy(a, b);
    nmi_err = std::max(nmi_err, std::abs(nmi(a, b) - oracle::entropy_nmi(a, b)));
    const double reference = oracle::pair_ari(a, b);
    if (std::isfinite(reference)) ari_err = std::max(ari_err, std::abs(ari(a, b) - reference));
  }
  std::vector<Label> a(10000), b(10000);
  for (Label& l : a) l = static_cast<Label>(rng.below(10));
  for (Label& l : b) l = static_cast<Label>(rng.below(10));
  const double random_ari = ari(a, b);
  return {acc_match == 100 && nmi_err <= 1e-12 && ari_err <= 1e-12 && std::abs(random_ari) < 0.02,
          "ACC brute force " + std::to_string(acc_match) + "/100, NMI error " + sci(nmi_err) + ", ARI error " +
              sci(ari_err) + ", random-label ARI " + sci(random_ari)};
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string run_report_text(const TrainConfig& config, const Dataset& data) {
  const FitResult fitted = fit(config, data);
  RunReport report;
  report.command = "train";
  report.config = config;
  report.seed = config.seed;
  report.num_points = data.size();
  report.input_dim = data.dim();
  report.has_truth = true;
  report.epochs = fitted.log;
  report.labels = evaluate(fitted.state, config, data).labels;
  report.final_scores = score_all(*data.truth, report.labels);
  return report_json_without_timing(report);
}

Outcome determinism_and_persistence() {
  SyntheticSpec spec;
  spec.points_per_cluster = 100;
  spec.seed = 11;
  const Dataset data = generate(spec);
  TrainConfig config = end_to_end_config(11);
  config.epochs = 4;
  config.queue_size = 256;
  config.eval_every = 1;

  const bool reports_equal = run_report_text(config, data) == run_report_text(config, data);

  const FitResult whole = fit(config, data);
  TrainState partial = init_state(config, data);
  std::vector<EpochMetrics> log;
  run_epochs(partial, config, data, 2, &log);
  const auto path = (std::filesystem::temp_directory_path() / "mice_acceptance.ckpt").string();
  save_checkpoint(config, partial, path);
  const std::string bytes = read_bytes(path);
  const Checkpoint restored = load_checkpoint(path);
  std::filesystem::remove(path);
  const bool roundtrip = restored.state == partial && restored.config == config &&
                         serialize_checkpoint(restored.config, restored.state) == bytes;
  TrainState resumed = restored.state;
  run_epochs(resumed, restored.config, data, 2, &log);
  const bool resume_equal = resumed == whole.state && log == whole.log;
  return {reports_equal && roundtrip && resume_equal,
          std::string("reports ") + (reports_equal ? "identical" : "differ") + ", checkpoint round trip " +
              (roundtrip ? "bitwise" : "differs") + ", resumed run " + (resume_equal ? "matches" : "differs")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"1", "MMD dispersion", mmd_dispersion},
      {"2", "posterior normalization", posterior_normalization},
      {"3", "gradient fidelity", gradient_fidelity},
      {"4", "contrastive reduction equals InfoNCE", infonce_reduction},
      {"5", "uniform posterior under the reduction", uniform_posterior},
      {"6", "hard EM step equals spherical k-means step", kmeans_equivalence},
      {"7a", "normalizer approximation bound", approximation_bound},
      {"7b", "exact-normalizer ELBO monotonicity", exact_regime_monotonicity},
      {"8", "exact posterior oracle", exact_posterior_oracle},
      {"9", "end-to-end clustering", end_to_end},
      {"10", "metric oracles", metric_oracles},
      {"11", "determinism and persistence", determinism_and_persistence},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.passed;
    std::printf("%s [%s] %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
