#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mice/baselines.hpp"
#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/metrics.hpp"
#include "mice/prototypes.hpp"
#include "mice/report.hpp"
#include "mice/trainer.hpp"
#include "mice/verify.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

mice::Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  mice::Matrix m(a.shape(0), a.shape(1));
  std::copy_n(a.data(), m.values().size(), m.values().begin());
  return m;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d array");
  return {a.data(), a.data() + a.shape(0)};
}

Array from_matrix(const mice::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

std::vector<mice::Label> to_labels(const LabelArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d label array");
  std::vector<mice::Label> out(a.shape(0));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    if (a.data()[i] < 0) throw py::value_error("labels must be non-negative");
    out[i] = static_cast<mice::Label>(a.data()[i]);
  }
  return out;
}

LabelArray from_labels(const std::vector<mice::Label>& labels) {
  LabelArray out(static_cast<py::ssize_t>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) out.mutable_data()[i] = static_cast<std::int64_t>(labels[i]);
  return out;
}

mice::Dataset to_dataset(const Array& points, const std::optional<LabelArray>& truth) {
  mice::Dataset ds;
  ds.points = to_matrix(points);
  if (truth) {
    ds.truth = to_labels(*truth);
    if (ds.truth->size() != ds.size()) throw py::value_error("truth length differs from the number of points");
  }
  return ds;
}

py::dict scores_dict(const mice::ClusterScores& s) {
  py::dict d;
  d["nmi"] = s.nmi;
  d["acc"] = s.acc;
  d["ari"] = s.ari;
  return d;
}

py::list epochs_list(const std::vector<mice::EpochMetrics>& log) {
  py::list out;
  for (const mice::EpochMetrics& e : log) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["lr"] = e.lr;
    d["mean_elbo"] = e.mean_elbo;
    d["mean_loss"] = e.mean_loss;
    d["mean_posterior_entropy"] = e.mean_entropy;
    d["occupancy"] = e.occupancy;
    d["scores"] = e.scores ? py::object(scores_dict(*e.scores)) : py::none();
    out.append(d);
  }
  return out;
}

struct Model {
  mice::TrainConfig config;
  mice::TrainState state;
  std::vector<mice::EpochMetrics> log;
};

}  // namespace

PYBIND11_MODULE(_mice, m) {
  m.doc() = "Unsupervised clustering with gated contrastive experts";
  m.attr("__version__") = mice::kLibraryVersion;

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::object(py::exception<mice::Error>(m, "MiceError", PyExc_RuntimeError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const mice::Error& e) {
      const py::object& type = error_type.get_stored();
      py::object instance = type(e.what());
      instance.attr("code") = std::string(mice::to_string(e.code()));
      py::set_error(type, instance);
    }
  });

  py::class_<mice::TrainConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &mice::parse_config, py::arg("text"))
      .def_static("load", &mice::load_config, py::arg("path"))
      .def("validate", &mice::TrainConfig::validate)
      .def("__str__", &mice::serialize_config)
      .def("__eq__", [](const mice::TrainConfig& a, const mice::TrainConfig& b) { return a == b; })
      .def_property(
          "tau", [](const mice::TrainConfig& c) { return c.temps.tau; },
          [](mice::TrainConfig& c, double v) { c.temps.tau = v; })
      .def_property(
          "kappa", [](const mice::TrainConfig& c) { return c.temps.kappa; },
          [](mice::TrainConfig& c, double v) { c.temps.kappa = v; })
      .def_readwrite("num_clusters", &mice::TrainConfig::num_clusters)
      .def_readwrite("embed_dim", &mice::TrainConfig::embed_dim)
      .def_readwrite("hidden_dims", &mice::TrainConfig::hidden_dims)
      .def_readwrite("queue_size", &mice::TrainConfig::queue_size)
      .def_readwrite("batch_size", &mice::TrainConfig::batch_size)
      .def_readwrite("epochs", &mice::TrainConfig::epochs)
      .def_readwrite("lr_initial", &mice::TrainConfig::lr_initial)
      .def_readwrite("ema_momentum", &mice::TrainConfig::ema_momentum)
      .def_readwrite("seed", &mice::TrainConfig::seed)
      .def_readwrite("eval_every", &mice::TrainConfig::eval_every);

  m.def(
      "generate",
      [](std::size_t num_clusters, std::size_t input_dim, std::size_t points_per_cluster, double concentration,
         std::uint64_t seed) {
        mice::SyntheticSpec spec{num_clusters, input_dim, points_per_cluster, concentration, seed};
        const mice::Dataset ds = mice::generate(spec);
        return py::make_tuple(from_matrix(ds.points), from_labels(*ds.truth));
      },
      py::arg("num_clusters") = 4, py::arg("input_dim") = 16, py::arg("points_per_cluster") = 500,
      py::arg("concentration") = 50.0, py::arg("seed") = 0,
      "Synthetic unit-norm points and 0-based cluster labels");

  m.def(
      "mmd_centers", [](std::size_t k, std::size_t d) { return from_matrix(mice::mmd_centers(k, d).omega); },
      py::arg("num_clusters"), py::arg("dim"));

  py::class_<Model>(m, "Model")
      .def_static(
          "fit",
          [](const mice::TrainConfig& config, const Array& points, std::optional<LabelArray> truth) {
            const mice::Dataset ds = to_dataset(points, truth);
            mice::FitResult r;
            {
              py::gil_scoped_release release;
              r = mice::fit(config, ds);
            }
            return Model{config, std::move(r.state), std::move(r.log)};
          },
          py::arg("config"), py::arg("points"), py::arg("truth") = py::none())
      .def_static(
          "load",
          [](const std::string& path) {
            mice::Checkpoint ck = mice::load_checkpoint(path);
            return Model{ck.config, std::move(ck.state), {}};
          },
          py::arg("path"))
      .def("save", [](const Model& self, const std::string& path) { mice::save_checkpoint(self.config, self.state, path); },
           py::arg("path"))
      .def(
          "predict",
          [](const Model& self, const Array& points) {
            return from_labels(mice::evaluate(self.state, self.config, to_dataset(points, std::nullopt)).labels);
          },
          py::arg("points"))
      .def(
          "posterior",
          [](const Model& self, const Array& points) {
            return from_matrix(mice::evaluate(self.state, self.config, to_dataset(points, std::nullopt)).posterior);
          },
          py::arg("points"))
      .def_property_readonly("config", [](const Model& self) { return self.config; })
      .def_property_readonly("epochs", [](const Model& self) { return epochs_list(self.log); })
      .def_property_readonly("completed_epochs", [](const Model& self) { return self.state.epoch; })
      .def_property_readonly("mu", [](const Model& self) { return from_matrix(self.state.mu.normalized()); })
      .def_property_readonly("omega", [](const Model& self) { return from_matrix(self.state.omega); })
      .def("__eq__", [](const Model& a, const Model& b) { return a.config == b.config && a.state == b.state; });

  m.def(
      "two_stage",
      [](const mice::TrainConfig& config, const Array& points) {
        const mice::Dataset ds = to_dataset(points, std::nullopt);
        py::gil_scoped_release release;
        return mice::two_stage_pipeline(config, ds).labels;
      },
      py::arg("config"), py::arg("points"), "Contrastive training followed by spherical k-means");

  m.def(
      "spherical_kmeans",
      [](const Array& points, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t max_iters) {
        mice::Rng rng(seed);
        const mice::KMeansResult r =
            mice::spherical_kmeans_restarts(mice::normalize_rows(to_matrix(points)), k, rng, restarts, max_iters);
        return py::make_tuple(from_labels(r.labels), from_matrix(r.centroids), r.objective);
      },
      py::arg("points"), py::arg("num_clusters"), py::arg("seed") = 0, py::arg("restarts") = 10,
      py::arg("max_iters") = 100);

  m.def(
      "infonce_loss",
      [](const Array& f, const Array& v, const Array& queue, double tau) {
        return mice::infonce_loss(to_vector(f), to_vector(v), to_matrix(queue), tau);
      },
      py::arg("f"), py::arg("v"), py::arg("queue"), py::arg("tau"));

  m.def(
      "nmi", [](const LabelArray& t, const LabelArray& p) { return mice::nmi(to_labels(t), to_labels(p)); },
      py::arg("truth"), py::arg("pred"));
  m.def(
      "acc", [](const LabelArray& t, const LabelArray& p) { return mice::acc(to_labels(t), to_labels(p)); },
      py::arg("truth"), py::arg("pred"));
  m.def(
      "ari", [](const LabelArray& t, const LabelArray& p) { return mice::ari(to_labels(t), to_labels(p)); },
      py::arg("truth"), py::arg("pred"));
  m.def(
      "scores",
      [](const LabelArray& t, const LabelArray& p) { return scores_dict(mice::score_all(to_labels(t), to_labels(p))); },
      py::arg("truth"), py::arg("pred"));

  m.def(
      "verify",
      [](const std::string& suite, std::uint64_t seed) {
        py::list out;
        for (const mice::CheckResult& r : mice::run_verify_suite(suite, seed)) {
          py::dict d;
          d["suite"] = r.suite;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("suite") = "all", py::arg("seed") = 0);
}
