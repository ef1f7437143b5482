#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mice/baselines.hpp"
#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/report.hpp"

using namespace mice;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kInvalidInput;
}

}  // namespace

TEST_CASE("config parsing") {
  CHECK(parse_config("") == TrainConfig{});
  const TrainConfig d;
  CHECK(d.temps.tau == 1.0);
  CHECK(d.temps.kappa == 1.0);
  CHECK(d.ema_momentum == 0.999);
  CHECK(d.batch_size == 256);
  CHECK(d.sgd_momentum == 0.9);
  CHECK(d.weight_decay == 1e-4);

  CHECK(parse_config("ema_momentum = 0.999\n").ema_momentum == 0.999);
  CHECK(code_of([] { parse_config("tau = -1"); }) == ErrorCode::kConfigError);
  CHECK(code_of([] { parse_config("temperature = 1"); }) == ErrorCode::kConfigError);
  CHECK(code_of([] { parse_config("batch_size = many"); }) == ErrorCode::kConfigError);
  try {
    parse_config("kappa = 0");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("kappa") != std::string::npos);
  }

  const TrainConfig c = parse_config(
      "# comment\n"
      "tau = 0.5   # trailing\n"
      "hidden_dims = 32, 16\n"
      "lr_milestones = 0.5,0.75\n"
      "a4_single_head = true\n"
      "omega_init = uniform\n"
      "zhat_include_positive = 0\n");
  CHECK(c.temps.tau == 0.5);
  CHECK(c.hidden_dims == std::vector<std::size_t>{32, 16});
  CHECK(c.lr_milestones == std::vector<double>{0.5, 0.75});
  CHECK(c.flags.a4_single_head);
  CHECK(c.omega_init == OmegaInit::kUniform);
  CHECK(c.zhat_mode() == ZhatMode::kQueueOnly);
  CHECK(parse_config(serialize_config(c)) == c);

  TrainConfig odd;
  odd.lr_initial = 0.1 + 0.2;
  odd.temps.tau = 1.0 / 3.0;
  CHECK(parse_config(serialize_config(odd)) == odd);
}

TEST_CASE("synthetic generation") {
  SyntheticSpec spec;
  const Dataset a = generate(spec);
  CHECK(a == generate(spec));
  CHECK(a.size() == 2000);
  CHECK(a.dim() == 16);
  for (std::size_t n = 0; n < a.size(); ++n) CHECK(std::abs(l2_norm(a.points.row(n)) - 1.0) < 1e-14);

  double within = 0.0, between = 0.0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); i += 7) {
    for (std::size_t j = i + 1; j < a.size(); j += 5) {
      const double c = dot(a.points.row(i), a.points.row(j));
      if ((*a.truth)[i] == (*a.truth)[j]) {
        within += c;
        ++nw;
      } else {
        between += c;
        ++nb;
      }
    }
  }
  CHECK(within / nw > between / nb);

  SyntheticSpec exact = spec;
  exact.concentration = std::numeric_limits<double>::infinity();
  exact.points_per_cluster = 20;
  const Dataset clean = generate(exact);
  Rng rng(1);
  const KMeansResult km = spherical_kmeans_restarts(clean.points, 4, rng);
  CHECK(acc(*clean.truth, km.labels) == 1.0);

  SyntheticSpec many = spec;
  many.num_clusters = 30;
  many.points_per_cluster = 2;
  CHECK(generate(many).size() == 60);

  SyntheticSpec bad = spec;
  bad.concentration = 0.0;
  CHECK(code_of([&] { generate(bad); }) == ErrorCode::kInvalidSpec);
  bad = spec;
  bad.num_clusters = 0;
  CHECK(code_of([&] { generate(bad); }) == ErrorCode::kInvalidSpec);

  const SyntheticSpec parsed = parse_synthetic_spec("num_clusters = 3\ninput_dim = 5\nseed = 9\n");
  CHECK(parsed.num_clusters == 3);
  CHECK(parsed.input_dim == 5);
  CHECK(parsed.seed == 9);
  CHECK(parsed.points_per_cluster == 500);
}

TEST_CASE("dataset CSV") {
  SyntheticSpec spec;
  spec.num_clusters = 3;
  spec.input_dim = 4;
  spec.points_per_cluster = 5;
  const Dataset ds = generate(spec);
  const std::string text = format_dataset_csv(ds);
  CHECK(text.rfind("dim_0,dim_1,dim_2,dim_3,truth\n", 0) == 0);
  CHECK(parse_dataset_csv(text) == ds);

  const auto path = (std::filesystem::temp_directory_path() / "mice_unit_data.csv").string();
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);
  std::filesystem::remove(path);

  const Dataset unlabeled = parse_dataset_csv("dim_0,dim_1\n1,0\n0,1\n");
  CHECK_FALSE(unlabeled.truth.has_value());
  CHECK(unlabeled.size() == 2);

  try {
    parse_dataset_csv("dim_0,dim_1\n1,0\n0,abc\n");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseError);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(code_of([] { parse_dataset_csv("dim_0,dim_1\n1,0,4\n"); }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([] { parse_dataset_csv("x,y\n1,0\n"); }) == ErrorCode::kParseError);
  CHECK(code_of([] { parse_dataset_csv("dim_0,truth\n1,0\n"); }) == ErrorCode::kParseError);
  CHECK(code_of([] { load_dataset("/nonexistent/mice.csv"); }) == ErrorCode::kIoError);
}

TEST_CASE("run report JSON") {
  RunReport r;
  r.command = "train";
  r.config = TrainConfig{};
  r.seed = 3;
  r.num_points = 4;
  r.input_dim = 2;
  r.has_truth = true;
  EpochMetrics e;
  e.epoch = 1;
  e.lr = 1.0;
  e.occupancy = {2, 2};
  e.scores = ClusterScores{1.0, 1.0, 1.0};
  r.epochs = {e};
  r.labels = {0, 0, 1, 1};
  r.final_scores = ClusterScores{1.0, 1.0, 1.0};
  r.wall_clock_seconds = 0.5;
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["schema_version"] == 1);
  CHECK(j["labels"] == nlohmann::json::array({1, 1, 2, 2}));
  CHECK(j["nmi_normalization"] == "arithmetic");
  CHECK(j["config"]["tau"] == 1.0);
  CHECK(j["wall_clock_seconds"] == 0.5);
  CHECK(j["epochs"][0]["occupancy"] == nlohmann::json::array({2, 2}));
  const auto untimed = nlohmann::json::parse(report_json_without_timing(r));
  CHECK_FALSE(untimed.contains("wall_clock_seconds"));
  const std::string before = report_json_without_timing(r);
  r.wall_clock_seconds = 9.0;
  CHECK(report_json_without_timing(r) == before);

  RunReport bare;
  bare.command = "baseline-skmeans";
  bare.num_points = 1;
  bare.input_dim = 1;
  const auto b = nlohmann::json::parse(report_json(bare));
  CHECK(b["config"].is_null());
  CHECK(b["final_scores"].is_null());
  const std::string lines = epoch_log_ndjson(r.epochs);
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 1);
}
