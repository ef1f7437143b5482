#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mice/encoder.hpp"
#include "mice/model.hpp"

namespace mice {

enum class OmegaInit { kMmd, kUniform };

/// Training hyperparameters. Defaults for temperatures, EMA momentum, batch
/// size and the SGD schedule are the values used for the CIFAR-scale runs.
struct TrainConfig {
  Temperatures temps;
  std::size_t queue_size = 16384;
  double ema_momentum = 0.999;
  std::size_t batch_size = 256;
  std::size_t epochs = 1000;
  double lr_initial = 1.0;
  std::vector<double> lr_milestones{0.48, 0.64, 0.80};  // fractions of epochs
  double lr_decay = 0.1;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  ModelFlags flags;
  bool detach_posterior = false;
  AugmentConfig augment{0.1, 0.1};

  std::size_t num_clusters = 4;
  std::size_t embed_dim = 128;
  std::vector<std::size_t> hidden_dims{64};

  bool zhat_include_positive = true;
  bool analytic_mu_update = true;  // end-of-epoch closed-form mu
  bool mu_gradient = true;         // SGD on mu
  OmegaInit omega_init = OmegaInit::kMmd;
  bool omega_trainable = false;
  std::size_t eval_every = 1;  // epochs between metric evaluations, 0 = never

  ZhatMode zhat_mode() const { return zhat_include_positive ? ZhatMode::kWithPositive : ZhatMode::kQueueOnly; }

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// `key = value` lines, `#` starts a comment. Unknown keys, malformed values
/// and invalid settings raise ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

/// Every key, one per line, in a form parse_config reads back exactly.
std::string serialize_config(const TrainConfig& config);

/// Key/value pairs of a config-style file, in file order. Shared by the
/// config and synthetic-spec readers.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};
std::vector<KeyValue> parse_key_values(const std::string& text, ErrorCode code);

std::string read_text_file(const std::string& path);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);
bool parse_double(const std::string& text, double& out);
bool parse_unsigned(const std::string& text, std::uint64_t& out);

}  // namespace mice
