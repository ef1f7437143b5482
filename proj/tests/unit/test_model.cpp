#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mice/model.hpp"
#include "mice/verify.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

Matrix rows_of(std::initializer_list<Vector> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const Vector& v : rows) std::copy(v.begin(), v.end(), m.row(r++).begin());
  return m;
}

EmbeddingQueue queue_from(const std::vector<Matrix>& blocks) {
  return EmbeddingQueue::from_blocks(blocks.size(), blocks.front().rows(), blocks.front().cols(), blocks);
}

}  // namespace

TEST_CASE("gating distribution") {
  const Matrix omega = rows_of({{1.0, 0.0}, {0.0, 1.0}});
  const Vector g{1.0, 0.0};
  const Vector p = gating_dist(g, omega, 1.0);
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-15));

  const Vector diag = l2_normalize(Vector{1.0, 1.0});
  const Vector even = gating_dist(diag, omega, 1.0);
  CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-15));

  ModelFlags a3;
  a3.a3_uniform_gating = true;
  const Vector u = gating_dist(g, rows_of({{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}}), 1.0, a3);
  for (double x : u) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(gating_dist(g, omega, 0.0), Error);
}

TEST_CASE("log phi") {
  const Matrix e1 = rows_of({{1.0, 0.0, 0.0}});
  CHECK(log_phi(e1, e1, e1, 1.0)[0] == 2.0);
  CHECK(log_phi(e1, e1, e1, 0.5)[0] == 4.0);
  const Matrix e2 = rows_of({{0.0, 1.0, 0.0}});
  CHECK(log_phi(e2, e1, e1, 1.0)[0] == 0.0);

  ModelFlags a5;
  a5.a5_no_class_term = true;
  CHECK(log_phi(e1, e1, e1, 1.0, a5)[0] == 1.0);

  // Single head: every expert scores with head 0.
  ModelFlags a4;
  a4.a4_single_head = true;
  const Matrix v = rows_of({{1.0, 0.0}, {0.0, 1.0}});
  const Matrix f = rows_of({{1.0, 0.0}, {0.0, 1.0}});
  const Matrix mu = rows_of({{0.0, 1.0}, {0.6, 0.8}});
  const Vector lp = log_phi(v, f, mu, 1.0, a4);
  CHECK(lp[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(lp[1] == doctest::Approx(1.6).epsilon(1e-15));

  CHECK_THROWS_AS(log_phi(rows_of({{1.0, 0.0}}), e1, e1, 1.0), Error);
}

TEST_CASE("log zhat") {
  const Matrix f = rows_of({{0.6, 0.8}});
  const Matrix v = rows_of({{1.0, 0.0}});
  const Matrix mu = rows_of({{0.0, 1.0}});
  const EmbeddingQueue one = queue_from({v});
  const double pos = 1.0 * (0.6 + 0.0) + 0.0 * (0.8 + 1.0);
  CHECK(log_zhat(f, v, one, mu, 1.0)[0] == doctest::Approx(std::log(2.0) + pos).epsilon(1e-15));
  CHECK(log_zhat(f, v, one, mu, 1.0, {}, ZhatMode::kQueueOnly)[0] == doctest::Approx(pos).epsilon(1e-15));

  EmbeddingQueue empty(4, 1, 2);
  try {
    log_zhat(f, v, empty, mu, 1.0);
    FAIL("expected EmptyQueue");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyQueue);
  }
}

TEST_CASE("queue holding the dataset gives the exact normalizer") {
  Rng rng(2);
  const Embeddings data = random_embeddings(40, 3, 5, rng);
  const Matrix mu = random_unit_rows(3, 5, rng);
  const EmbeddingQueue all = full_dataset_queue(data);
  for (std::size_t n = 0; n < data.size(); n += 7) {
    const Vector lz = log_zhat(data.student[n], data.teacher[n], all, mu, 0.7, {}, ZhatMode::kQueueOnly);
    for (std::size_t k = 0; k < 3; ++k) {
      const Vector s = oracle::score(data.student[n], mu, k, {});
      double z = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) z += std::exp(oracle::dot(data.teacher[i].row(k).data(), s.data(), 5) / 0.7);
      CHECK(std::abs(lz[k] - std::log(z)) <= 1e-12);
    }
  }
}

TEST_CASE("posterior") {
  const Vector uniform(4, 0.25);
  const Vector same(4, 1.3);
  const Vector lz(4, 2.0);
  for (double q : posterior(uniform, same, lz)) CHECK(std::abs(q - 0.25) <= 1e-12);

  const Vector q = posterior(Vector{0.2, 0.8}, Vector{-2000.0, -2001.0}, Vector{0.0, 0.0});
  CHECK(std::abs(q[0] + q[1] - 1.0) <= 1e-12);
  CHECK(q[0] == doctest::Approx(0.2 / (0.2 + 0.8 * std::exp(-1.0))).epsilon(1e-12));

  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    posterior(Vector{0.5, 0.5}, Vector{nan, 0.0}, Vector{0.0, 0.0});
    FAIL("expected DegenerateDistribution");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateDistribution);
  }
  CHECK_THROWS_AS(posterior(Vector{0.0, 0.0}, Vector{0.0, 0.0}, Vector{0.0, 0.0}), Error);
  CHECK_THROWS_AS(posterior(Vector{0.5, 0.5}, Vector{0.0}, Vector{0.0, 0.0}), Error);
}

TEST_CASE("posterior with the full dataset queue equals Bayes") {
  Rng rng(5);
  for (int t = 0; t < 5; ++t) {
    const std::size_t k = 2 + t % 3;
    const Embeddings data = random_embeddings(60, k, 6, rng);
    const Matrix mu = random_unit_rows(k, 6, rng);
    const Matrix omega = random_unit_rows(k, 6, rng);
    const Temperatures temps{0.8, 1.3};
    const Matrix bayes = oracle::bayes_posterior(data, mu, omega, temps, {});
    ElboOptions opts;
    opts.zhat = ZhatMode::kQueueOnly;
    opts.want_gradients = false;
    const ElboBatch e = elbo_batch(data, full_dataset_queue(data), ExpertPrototypes{mu}, omega, temps, {}, opts);
    const Matrix exact = exact_posterior(data, ExpertPrototypes{mu}, omega, temps, {});
    for (std::size_t i = 0; i < bayes.values().size(); ++i) {
      CHECK(std::abs(bayes.values()[i] - e.posterior.values()[i]) <= 1e-10);
      CHECK(std::abs(bayes.values()[i] - exact.values()[i]) <= 1e-10);
    }
  }
}

TEST_CASE("hard assignment") {
  const Matrix q = rows_of({{0.1, 0.7, 0.2}, {0.5, 0.5, 0.0}, {0.2, 0.3, 0.5}});
  const auto labels = hard_assign(q);
  CHECK(labels[0] == 1);
  CHECK(labels[1] == 0);
  CHECK(labels[2] == 2);
}

TEST_CASE("queue FIFO") {
  const Matrix a = rows_of({{1.0, 0.0}});
  const Matrix b = rows_of({{0.0, 1.0}});
  const Matrix c = rows_of({{0.6, 0.8}});
  EmbeddingQueue q(2, 1, 2);
  q.push(a);
  CHECK(q.block(0) == a);
  q.push(b);
  q.push(c);
  CHECK(q.size() == 2);
  CHECK(q.block(0) == b);
  CHECK(q.block(1) == c);
  CHECK(q.blocks() == std::vector<Matrix>{b, c});
  CHECK(q == EmbeddingQueue::from_blocks(2, 1, 2, {b, c}));
  CHECK_THROWS_AS(q.push(Matrix(2, 2)), Error);
  q.clear();
  CHECK(q.size() == 0);
}

TEST_CASE("single expert ELBO has no KL term") {
  Rng rng(3);
  const Embeddings batch = random_embeddings(3, 1, 4, rng);
  const EmbeddingQueue queue = queue_from({random_unit_rows(1, 4, rng), random_unit_rows(1, 4, rng)});
  const Matrix mu = random_unit_rows(1, 4, rng);
  const Matrix omega = random_unit_rows(1, 4, rng);
  const ElboBatch e = elbo_batch(batch, queue, ExpertPrototypes{mu}, omega, {}, {});
  double expected = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    expected += log_phi(batch.teacher[n], batch.student[n], mu, 1.0)[0] -
                log_zhat(batch.student[n], batch.teacher[n], queue, mu, 1.0)[0];
  }
  CHECK(std::abs(e.kl) <= 1e-15);
  CHECK(e.elbo == doctest::Approx(expected / 3.0).epsilon(1e-14));
}

TEST_CASE("ELBO equals log-sum-exp at the current posterior") {
  Rng rng(4);
  const Embeddings batch = random_embeddings(5, 3, 4, rng);
  const EmbeddingQueue queue = queue_from({random_unit_rows(3, 4, rng), random_unit_rows(3, 4, rng)});
  const Matrix mu = random_unit_rows(3, 4, rng);
  const Matrix omega = random_unit_rows(3, 4, rng);
  const ElboBatch e = elbo_batch(batch, queue, ExpertPrototypes{mu}, omega, {}, {});
  double expected = 0.0;
  for (std::size_t n = 0; n < 5; ++n) {
    const Vector g = gating_dist(batch.gating[n], omega, 1.0);
    const Vector lp = log_phi(batch.teacher[n], batch.student[n], mu, 1.0);
    const Vector lz = log_zhat(batch.student[n], batch.teacher[n], queue, mu, 1.0);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) total += g[k] * std::exp(lp[k] - lz[k]);
    expected += std::log(total);
  }
  CHECK(e.elbo == doctest::Approx(expected / 5.0).epsilon(1e-13));
  CHECK(e.elbo == doctest::Approx(e.expected_log_expert - e.kl).epsilon(1e-13));
}

namespace {

// Central differences of the batch ELBO with respect to the embeddings and
// the raw prototypes, optionally with a fixed posterior.
double embedding_gradient_error(const ModelFlags& flags, ZhatMode mode, bool fixed, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = 3, d = 4, b = 3;
  Embeddings batch = random_embeddings(b, k, d, rng);
  const EmbeddingQueue queue = queue_from({random_unit_rows(k, d, rng), random_unit_rows(k, d, rng),
                                           random_unit_rows(k, d, rng)});
  Matrix mu = random_unit_rows(k, d, rng);
  for (double& x : mu.values()) x *= 1.7;
  Matrix omega = random_unit_rows(k, d, rng);
  const Temperatures temps{0.7, 0.9};
  ElboOptions opts;
  opts.zhat = mode;
  opts.omega_gradient = true;
  opts.detach_posterior = fixed;
  PosteriorMatrix q(b, k);
  for (std::size_t n = 0; n < b; ++n) {
    double s = 0.0;
    for (double& x : q.row(n)) s += (x = rng.uniform(0.1, 1.0));
    for (double& x : q.row(n)) x /= s;
  }
  const PosteriorMatrix* qp = fixed ? &q : nullptr;
  const ElboBatch analytic = elbo_batch(batch, queue, ExpertPrototypes{mu}, omega, temps, flags, opts, qp);

  ElboOptions value_only = opts;
  value_only.want_gradients = false;
  const auto value = [&]() {
    return elbo_batch(batch, queue, ExpertPrototypes{mu}, omega, temps, flags, value_only, qp).elbo;
  };
  double worst = 0.0;
  const auto probe = [&](double& x, double g) {
    const double h = 1e-6;
    const double saved = x;
    x = saved + h;
    const double up = value();
    x = saved - h;
    const double down = value();
    x = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - g) / std::max({std::abs(numeric), std::abs(g), 1e-7}));
  };
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < k * d; ++i) probe(batch.student[n].values()[i], analytic.d_student[n].values()[i]);
    for (std::size_t i = 0; i < d; ++i) probe(batch.gating[n][i], analytic.d_gating[n][i]);
  }
  for (std::size_t i = 0; i < k * d; ++i) probe(mu.values()[i], analytic.d_mu.values()[i]);
  if (!flags.a3_uniform_gating) {
    for (std::size_t i = 0; i < k * d; ++i) probe(omega.values()[i], analytic.d_omega.values()[i]);
  }
  return worst;
}

}  // namespace

TEST_CASE("ELBO gradients match central differences") {
  const std::vector<ModelFlags> all_flags = {
      {}, {true, false, false}, {false, true, false}, {false, false, true}, {true, true, true}};
  for (const ModelFlags& flags : all_flags) {
    for (ZhatMode mode : {ZhatMode::kWithPositive, ZhatMode::kQueueOnly}) {
      for (bool fixed : {false, true}) {
        CAPTURE(flags.a3_uniform_gating);
        CAPTURE(flags.a4_single_head);
        CAPTURE(flags.a5_no_class_term);
        CAPTURE(fixed);
        CHECK(embedding_gradient_error(flags, mode, fixed, 17) < 1e-6);
      }
    }
  }
}

TEST_CASE("exact ELBO") {
  Rng rng(21);
  const std::size_t n = 50, k = 3, d = 4;
  const Embeddings data = random_embeddings(n, k, d, rng);
  const Matrix mu = random_unit_rows(k, d, rng);
  const Matrix omega = random_unit_rows(k, d, rng);
  const Temperatures temps{0.9, 1.1};
  const ExpertPrototypes protos{mu};
  const PosteriorMatrix q = exact_posterior(data, protos, omega, temps, {});
  const double at_posterior = exact_elbo(data, q, protos, omega, temps, {});
  CHECK(at_posterior == doctest::Approx(exact_log_evidence(data, protos, omega, temps, {})).epsilon(1e-12));

  PosteriorMatrix other(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double& x : other.row(i)) s += (x = rng.uniform(0.01, 1.0));
    for (double& x : other.row(i)) x /= s;
  }
  const double value = exact_elbo(data, other, protos, omega, temps, {});
  CHECK(value <= at_posterior);
  CHECK(std::abs(value - oracle::exact_elbo(data, other, mu, omega, temps, {})) <= 1e-10);

  CHECK_THROWS_AS(exact_elbo(data, Matrix(n - 1, k), protos, omega, temps, {}), Error);
}
