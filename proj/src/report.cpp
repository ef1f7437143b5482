#include "mice/report.hpp"

#include <fstream>

#include "json.hpp"

namespace mice {

namespace {

using nlohmann::ordered_json;

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  j["tau"] = c.temps.tau;
  j["kappa"] = c.temps.kappa;
  j["queue_size"] = c.queue_size;
  j["ema_momentum"] = c.ema_momentum;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_initial"] = c.lr_initial;
  j["lr_milestones"] = c.lr_milestones;
  j["lr_decay"] = c.lr_decay;
  j["sgd_momentum"] = c.sgd_momentum;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["a3_uniform_gating"] = c.flags.a3_uniform_gating;
  j["a4_single_head"] = c.flags.a4_single_head;
  j["a5_no_class_term"] = c.flags.a5_no_class_term;
  j["detach_posterior"] = c.detach_posterior;
  j["aug_noise"] = c.augment.noise;
  j["aug_dropout"] = c.augment.dropout;
  j["num_clusters"] = c.num_clusters;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dims"] = c.hidden_dims;
  j["zhat_include_positive"] = c.zhat_include_positive;
  j["analytic_mu_update"] = c.analytic_mu_update;
  j["mu_gradient"] = c.mu_gradient;
  j["omega_init"] = c.omega_init == OmegaInit::kMmd ? "mmd" : "uniform";
  j["omega_trainable"] = c.omega_trainable;
  j["eval_every"] = c.eval_every;
  return j;
}

ordered_json scores_json(const std::optional<ClusterScores>& s) {
  if (!s) return nullptr;
  return ordered_json{{"nmi", s->nmi}, {"acc", s->acc}, {"ari", s->ari}};
}

ordered_json epoch_json(const EpochMetrics& e) {
  ordered_json j;
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  j["mean_elbo"] = e.mean_elbo;
  j["mean_loss"] = e.mean_loss;
  j["mean_posterior_entropy"] = e.mean_entropy;
  j["occupancy"] = e.occupancy;
  j["scores"] = scores_json(e.scores);
  return j;
}

ordered_json build(const RunReport& r, bool with_timing) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = r.command;
  j["artifact_versions"] = {{"library", kLibraryVersion}, {"checkpoint_format", kCheckpointVersion}};
  j["seed"] = r.seed;
  j["config"] = r.config ? config_json(*r.config) : ordered_json(nullptr);
  j["dataset"] = {{"num_points", r.num_points}, {"input_dim", r.input_dim}, {"has_truth", r.has_truth}};
  ordered_json epochs = ordered_json::array();
  for (const EpochMetrics& e : r.epochs) epochs.push_back(epoch_json(e));
  j["epochs"] = std::move(epochs);
  std::vector<std::size_t> labels(r.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = r.labels[i] + 1;
  j["labels"] = labels;
  j["final_scores"] = scores_json(r.final_scores);
  j["nmi_normalization"] = "arithmetic";
  if (with_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

}  // namespace

std::string report_json(const RunReport& report) { return build(report, true).dump(2) + "\n"; }

std::string report_json_without_timing(const RunReport& report) { return build(report, false).dump(2) + "\n"; }

void write_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << report_json(report);
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

std::string epoch_log_ndjson(const std::vector<EpochMetrics>& epochs) {
  std::string out;
  for (const EpochMetrics& e : epochs) out += epoch_json(e).dump() + "\n";
  return out;
}

}  // namespace mice
