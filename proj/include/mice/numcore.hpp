#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mice/error.hpp"

namespace mice {

using Vector = std::vector<double>;

/// Cluster index. 0-based inside the library; file formats and reports are
/// 1-based.
using Label = std::size_t;

inline constexpr double kNormEpsilon = 1e-12;

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double value);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// Unit-norm copy of v. Inputs already unit-norm to within a few ulps are
/// returned unchanged, which makes the operation idempotent bitwise.
Vector l2_normalize(std::span<const double> v);

/// log(sum(exp(values))) with max-shift.
double log_sum_exp(std::span<const double> values);

/// softmax(logits / temperature).
Vector softmax_t(std::span<const double> logits, double temperature);

/// log softmax(logits / temperature).
Vector log_softmax_t(std::span<const double> logits, double temperature);

/// Matrix with every row l2-normalized.
Matrix normalize_rows(const Matrix& m);

bool all_finite(std::span<const double> values);

/// xoshiro256** seeded through splitmix64. The integer and uniform streams
/// are defined purely in 64-bit integer arithmetic and match across
/// platforms.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& state);
  const State& state() const noexcept { return s_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller; one uniform pair per draw.
  double normal();
  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  State s_{};
};

/// Fisher-Yates shuffle of 0..n-1 driven by rng.
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

/// Worker count: MICE_THREADS if set and positive, otherwise hardware
/// concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) across worker_count() threads. Each index is
/// visited exactly once; ordering between indices is unspecified.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mice
