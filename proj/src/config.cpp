#include "mice/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mice {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void config_error(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::kConfigError, "key '" + key + "': " + why);
}

double read_double(const KeyValue& kv) {
  double v = 0.0;
  if (!parse_double(kv.value, v)) config_error(kv.key, "expected a number, got '" + kv.value + "'");
  return v;
}

std::size_t read_size(const KeyValue& kv) {
  std::uint64_t v = 0;
  if (!parse_unsigned(kv.value, v)) config_error(kv.key, "expected a non-negative integer, got '" + kv.value + "'");
  return static_cast<std::size_t>(v);
}

bool read_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  config_error(kv.key, "expected true or false, got '" + kv.value + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

using Setter = std::function<void(TrainConfig&, const KeyValue&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"tau", [](TrainConfig& c, const KeyValue& kv) { c.temps.tau = read_double(kv); }},
      {"kappa", [](TrainConfig& c, const KeyValue& kv) { c.temps.kappa = read_double(kv); }},
      {"queue_size", [](TrainConfig& c, const KeyValue& kv) { c.queue_size = read_size(kv); }},
      {"ema_momentum", [](TrainConfig& c, const KeyValue& kv) { c.ema_momentum = read_double(kv); }},
      {"batch_size", [](TrainConfig& c, const KeyValue& kv) { c.batch_size = read_size(kv); }},
      {"epochs", [](TrainConfig& c, const KeyValue& kv) { c.epochs = read_size(kv); }},
      {"lr_initial", [](TrainConfig& c, const KeyValue& kv) { c.lr_initial = read_double(kv); }},
      {"lr_milestones",
       [](TrainConfig& c, const KeyValue& kv) {
         c.lr_milestones.clear();
         for (const std::string& item : split_list(kv.value)) {
           double v = 0.0;
           if (!parse_double(item, v)) config_error(kv.key, "bad list entry '" + item + "'");
           c.lr_milestones.push_back(v);
         }
       }},
      {"lr_decay", [](TrainConfig& c, const KeyValue& kv) { c.lr_decay = read_double(kv); }},
      {"sgd_momentum", [](TrainConfig& c, const KeyValue& kv) { c.sgd_momentum = read_double(kv); }},
      {"weight_decay", [](TrainConfig& c, const KeyValue& kv) { c.weight_decay = read_double(kv); }},
      {"seed", [](TrainConfig& c, const KeyValue& kv) { c.seed = read_size(kv); }},
      {"a3_uniform_gating", [](TrainConfig& c, const KeyValue& kv) { c.flags.a3_uniform_gating = read_bool(kv); }},
      {"a4_single_head", [](TrainConfig& c, const KeyValue& kv) { c.flags.a4_single_head = read_bool(kv); }},
      {"a5_no_class_term", [](TrainConfig& c, const KeyValue& kv) { c.flags.a5_no_class_term = read_bool(kv); }},
      {"detach_posterior", [](TrainConfig& c, const KeyValue& kv) { c.detach_posterior = read_bool(kv); }},
      {"aug_noise", [](TrainConfig& c, const KeyValue& kv) { c.augment.noise = read_double(kv); }},
      {"aug_dropout", [](TrainConfig& c, const KeyValue& kv) { c.augment.dropout = read_double(kv); }},
      {"num_clusters", [](TrainConfig& c, const KeyValue& kv) { c.num_clusters = read_size(kv); }},
      {"embed_dim", [](TrainConfig& c, const KeyValue& kv) { c.embed_dim = read_size(kv); }},
      {"hidden_dims",
       [](TrainConfig& c, const KeyValue& kv) {
         c.hidden_dims.clear();
         for (const std::string& item : split_list(kv.value)) {
           std::uint64_t v = 0;
           if (!parse_unsigned(item, v)) config_error(kv.key, "bad list entry '" + item + "'");
           c.hidden_dims.push_back(static_cast<std::size_t>(v));
         }
       }},
      {"zhat_include_positive",
       [](TrainConfig& c, const KeyValue& kv) { c.zhat_include_positive = read_bool(kv); }},
      {"analytic_mu_update", [](TrainConfig& c, const KeyValue& kv) { c.analytic_mu_update = read_bool(kv); }},
      {"mu_gradient", [](TrainConfig& c, const KeyValue& kv) { c.mu_gradient = read_bool(kv); }},
      {"omega_init",
       [](TrainConfig& c, const KeyValue& kv) {
         if (kv.value == "mmd") {
           c.omega_init = OmegaInit::kMmd;
         } else if (kv.value == "uniform") {
           c.omega_init = OmegaInit::kUniform;
         } else {
           config_error(kv.key, "expected mmd or uniform, got '" + kv.value + "'");
         }
       }},
      {"omega_trainable", [](TrainConfig& c, const KeyValue& kv) { c.omega_trainable = read_bool(kv); }},
      {"eval_every", [](TrainConfig& c, const KeyValue& kv) { c.eval_every = read_size(kv); }},
  };
  return table;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

bool parse_double(const std::string& text, double& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto result = std::from_chars(first, s.data() + s.size(), out);
  return result.ec == std::errc() && result.ptr == s.data() + s.size();
}

bool parse_unsigned(const std::string& text, std::uint64_t& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  const auto result = std::from_chars(s.data(), s.data() + s.size(), out);
  return result.ec == std::errc() && result.ptr == s.data() + s.size();
}

std::vector<KeyValue> parse_key_values(const std::string& text, ErrorCode code) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(code, "line " + std::to_string(number) + ": expected 'key = value'");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), number};
    if (kv.key.empty()) throw Error(code, "line " + std::to_string(number) + ": missing key");
    out.push_back(std::move(kv));
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void TrainConfig::validate() const {
  if (!(temps.tau > 0.0) || !std::isfinite(temps.tau)) config_error("tau", "must be positive");
  if (!(temps.kappa > 0.0) || !std::isfinite(temps.kappa)) config_error("kappa", "must be positive");
  if (queue_size == 0) config_error("queue_size", "must be positive");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) config_error("ema_momentum", "must lie in [0, 1)");
  if (batch_size == 0) config_error("batch_size", "must be positive");
  if (!(lr_initial >= 0.0) || !std::isfinite(lr_initial)) config_error("lr_initial", "must be non-negative");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    const double m = lr_milestones[i];
    if (!(m > 0.0 && m < 1.0)) config_error("lr_milestones", "entries must lie in (0, 1)");
    if (i > 0 && !(m > lr_milestones[i - 1])) config_error("lr_milestones", "entries must increase strictly");
  }
  if (!(lr_decay > 0.0) || !std::isfinite(lr_decay)) config_error("lr_decay", "must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) config_error("sgd_momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) config_error("weight_decay", "must be non-negative");
  if (!(augment.noise >= 0.0) || !std::isfinite(augment.noise)) config_error("aug_noise", "must be non-negative");
  if (!(augment.dropout >= 0.0 && augment.dropout < 1.0)) config_error("aug_dropout", "must lie in [0, 1)");
  if (num_clusters < 1) config_error("num_clusters", "must be positive");
  if (embed_dim < 1) config_error("embed_dim", "must be positive");
  for (std::size_t w : hidden_dims) {
    if (w == 0) config_error("hidden_dims", "widths must be positive");
  }
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig config;
  const auto& table = setters();
  for (const KeyValue& kv : parse_key_values(text, ErrorCode::kConfigError)) {
    const auto it = table.find(kv.key);
    if (it == table.end()) config_error(kv.key, "unknown key on line " + std::to_string(kv.line));
    it->second(config, kv);
  }
  config.validate();
  return config;
}

TrainConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

std::string serialize_config(const TrainConfig& c) {
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::ostringstream out;
  out << "tau = " << format_double(c.temps.tau) << "\n"
      << "kappa = " << format_double(c.temps.kappa) << "\n"
      << "queue_size = " << c.queue_size << "\n"
      << "ema_momentum = " << format_double(c.ema_momentum) << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "epochs = " << c.epochs << "\n"
      << "lr_initial = " << format_double(c.lr_initial) << "\n"
      << "lr_milestones = " << join_doubles(c.lr_milestones) << "\n"
      << "lr_decay = " << format_double(c.lr_decay) << "\n"
      << "sgd_momentum = " << format_double(c.sgd_momentum) << "\n"
      << "weight_decay = " << format_double(c.weight_decay) << "\n"
      << "seed = " << c.seed << "\n"
      << "a3_uniform_gating = " << b(c.flags.a3_uniform_gating) << "\n"
      << "a4_single_head = " << b(c.flags.a4_single_head) << "\n"
      << "a5_no_class_term = " << b(c.flags.a5_no_class_term) << "\n"
      << "detach_posterior = " << b(c.detach_posterior) << "\n"
      << "aug_noise = " << format_double(c.augment.noise) << "\n"
      << "aug_dropout = " << format_double(c.augment.dropout) << "\n"
      << "num_clusters = " << c.num_clusters << "\n"
      << "embed_dim = " << c.embed_dim << "\n"
      << "hidden_dims = " << join_sizes(c.hidden_dims) << "\n"
      << "zhat_include_positive = " << b(c.zhat_include_positive) << "\n"
      << "analytic_mu_update = " << b(c.analytic_mu_update) << "\n"
      << "mu_gradient = " << b(c.mu_gradient) << "\n"
      << "omega_init = " << (c.omega_init == OmegaInit::kMmd ? "mmd" : "uniform") << "\n"
      << "omega_trainable = " << b(c.omega_trainable) << "\n"
      << "eval_every = " << c.eval_every << "\n";
  return out.str();
}

}  // namespace mice
