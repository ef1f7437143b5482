#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mice/baselines.hpp"
#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/report.hpp"
#include "mice/trainer.hpp"
#include "mice/verify.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

mice::RunReport base_report(const std::string& command, const mice::Dataset& data) {
  mice::RunReport report;
  report.command = command;
  report.num_points = data.size();
  report.input_dim = data.dim();
  report.has_truth = data.truth.has_value();
  return report;
}

void finish_labels(mice::RunReport& report, const mice::Dataset& data, std::vector<mice::Label> labels) {
  if (data.truth) report.final_scores = mice::score_all(*data.truth, labels);
  report.labels = std::move(labels);
}

void print_scores(const mice::RunReport& report) {
  if (!report.final_scores) return;
  std::printf("NMI %.4f  ACC %.4f  ARI %.4f\n", report.final_scores->nmi, report.final_scores->acc,
              report.final_scores->ari);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  const mice::Dataset ds = mice::generate(mice::load_synthetic_spec(spec_path));
  mice::save_dataset(ds, out);
  std::printf("wrote %zu points of dimension %zu to %s\n", ds.size(), ds.dim(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& out,
              const std::string& report_path, const std::string& log_path) {
  const auto start = Clock::now();
  const mice::TrainConfig config = mice::load_config(config_path);
  const mice::Dataset data = mice::load_dataset(data_path);
  mice::FitResult fitted = mice::fit(config, data);
  mice::save_checkpoint(config, fitted.state, out);
  mice::RunReport report = base_report("train", data);
  report.config = config;
  report.seed = config.seed;
  report.epochs = fitted.log;
  finish_labels(report, data, mice::evaluate(fitted.state, config, data).labels);
  report.wall_clock_seconds = seconds_since(start);
  mice::write_report(report, report_path);
  if (!log_path.empty()) {
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw mice::Error(mice::ErrorCode::kIoError, "cannot write " + log_path);
    log << mice::epoch_log_ndjson(fitted.log);
  }
  print_scores(report);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& report_path) {
  const auto start = Clock::now();
  const mice::Checkpoint ck = mice::load_checkpoint(ckpt_path);
  const mice::Dataset data = mice::load_dataset(data_path);
  mice::RunReport report = base_report("eval", data);
  report.config = ck.config;
  report.seed = ck.config.seed;
  finish_labels(report, data, mice::evaluate(ck.state, ck.config, data).labels);
  report.wall_clock_seconds = seconds_since(start);
  mice::write_report(report, report_path);
  print_scores(report);
  return 0;
}

int cmd_baseline(const std::string& which, const std::string& config_path, const std::string& data_path,
                 const std::string& report_path) {
  const auto start = Clock::now();
  const mice::TrainConfig config = mice::load_config(config_path);
  const mice::Dataset data = mice::load_dataset(data_path);
  mice::RunReport report = base_report("baseline-" + which, data);
  report.seed = config.seed;
  if (which == "skmeans") {
    mice::Rng rng(config.seed);
    const mice::KMeansResult km =
        mice::spherical_kmeans_restarts(mice::normalize_rows(data.points), config.num_clusters, rng);
    report.config = config;
    finish_labels(report, data, km.labels);
  } else {
    mice::TwoStageResult result = mice::two_stage_pipeline(config, data);
    report.config = mice::contrastive_config(config);
    report.epochs = result.training.log;
    finish_labels(report, data, result.labels);
  }
  report.wall_clock_seconds = seconds_since(start);
  mice::write_report(report, report_path);
  print_scores(report);
  return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  const auto results = mice::run_verify_suite(suite, seed);
  bool ok = true;
  for (const mice::CheckResult& r : results) {
    std::printf("%s %s: %s (%s)\n", r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustering with gated contrastive experts: training, evaluation, baselines and property checks"};
  app.require_subcommand(1);

  std::string spec_path, out, config_path, data_path, report_path, ckpt_path, log_path;
  std::string which = "skmeans";
  std::string suite = "all";
  std::uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Synthetic spec file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output CSV")->required();

  CLI::App* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--report", report_path, "RunReport JSON path")->required();
  train->add_option("--log", log_path, "Per-epoch metric log (newline-delimited JSON)");

  CLI::App* eval = app.add_subcommand("eval", "Cluster a dataset with a trained checkpoint");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report_path, "RunReport JSON path")->required();

  CLI::App* base = app.add_subcommand("baseline", "Run a reference clustering method");
  base->add_option("--which", which, "skmeans or two-stage")
      ->required()
      ->check(CLI::IsMember({"skmeans", "two-stage"}));
  base->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  base->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  base->add_option("--report", report_path, "RunReport JSON path")->required();

  CLI::App* verify = app.add_subcommand("verify", "Run the built-in property suites");
  verify->add_option("--suite", suite, "mmd, gradients, theorems, bound or all")
      ->check(CLI::IsMember({"mmd", "gradients", "theorems", "bound", "all"}));
  verify->add_option("--seed", seed, "Seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out);
    if (train->parsed()) return cmd_train(config_path, data_path, out, report_path, log_path);
    if (eval->parsed()) return cmd_eval(ckpt_path, data_path, report_path);
    if (base->parsed()) return cmd_baseline(which, config_path, data_path, report_path);
    if (verify->parsed()) return cmd_verify(suite, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
