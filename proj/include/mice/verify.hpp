#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/model.hpp"

namespace mice {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

/// mmd, gradients, theorems, bound.
const std::vector<std::string>& verify_suite_names();

/// Runs one named suite, or every suite for "all". Unknown names raise
/// InvalidInput.
std::vector<CheckResult> run_verify_suite(const std::string& name, std::uint64_t seed = 0);

/// Random unit-row embeddings for n datapoints with the given head count.
Embeddings random_embeddings(std::size_t n, std::size_t heads, std::size_t dim, Rng& rng);

/// K x d matrix of random unit rows.
Matrix random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng);

/// Largest |a - b| / max(|a|, |b|, floor) between analytic gradients and
/// central differences of the batch loss, over every student parameter, mu
/// and (when trainable) omega.
struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t parameters_checked = 0;
  std::string worst;
};

GradientCheckReport gradient_check(const TrainConfig& config, std::size_t input_dim, std::size_t batch,
                                   std::uint64_t seed, double step = 1e-5, double floor = 1e-8);

}  // namespace mice
