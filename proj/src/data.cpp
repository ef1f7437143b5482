#include "mice/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mice/config.hpp"
#include "mice/prototypes.hpp"

namespace mice {

void SyntheticSpec::validate() const {
  if (num_clusters < 1) throw Error(ErrorCode::kInvalidSpec, "num_clusters must be positive");
  if (input_dim < 1) throw Error(ErrorCode::kInvalidSpec, "input_dim must be positive");
  if (points_per_cluster < 1) throw Error(ErrorCode::kInvalidSpec, "points_per_cluster must be positive");
  if (!(concentration > 0.0)) throw Error(ErrorCode::kInvalidSpec, "concentration must be positive");
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t k = spec.num_clusters;
  const std::size_t d = spec.input_dim;
  Matrix directions;
  if (k == 1) {
    directions = Matrix(1, d);
    directions(0, 0) = 1.0;
  } else if (k <= d + 1) {
    directions = mmd_centers(k, d).omega;
  } else {
    Matrix raw(k, d);
    for (double& v : raw.values()) v = rng.normal();
    directions = normalize_rows(raw);
  }

  const double scale = std::isinf(spec.concentration) ? 0.0 : 1.0 / std::sqrt(spec.concentration);
  Dataset ds;
  ds.points = Matrix(k * spec.points_per_cluster, d);
  ds.truth.emplace(ds.points.rows());
  Vector p(d);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < spec.points_per_cluster; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) p[j] = directions(c, j) + scale * rng.normal();
      const Vector unit = l2_normalize(p);
      std::copy(unit.begin(), unit.end(), ds.points.row(row).begin());
      (*ds.truth)[row] = c;
    }
  }
  return ds;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  for (const KeyValue& kv : parse_key_values(text, ErrorCode::kInvalidSpec)) {
    std::uint64_t n = 0;
    double x = 0.0;
    const auto need_size = [&](std::size_t& field) {
      if (!parse_unsigned(kv.value, n)) throw Error(ErrorCode::kInvalidSpec, "key '" + kv.key + "': bad integer");
      field = static_cast<std::size_t>(n);
    };
    if (kv.key == "num_clusters") {
      need_size(spec.num_clusters);
    } else if (kv.key == "input_dim") {
      need_size(spec.input_dim);
    } else if (kv.key == "points_per_cluster") {
      need_size(spec.points_per_cluster);
    } else if (kv.key == "concentration") {
      if (!parse_double(kv.value, x)) throw Error(ErrorCode::kInvalidSpec, "key 'concentration': bad number");
      spec.concentration = x;
    } else if (kv.key == "seed") {
      if (!parse_unsigned(kv.value, n)) throw Error(ErrorCode::kInvalidSpec, "key 'seed': bad integer");
      spec.seed = n;
    } else {
      throw Error(ErrorCode::kInvalidSpec, "unknown key '" + kv.key + "'");
    }
  }
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::string& path) { return parse_synthetic_spec(read_text_file(path)); }

std::string format_dataset_csv(const Dataset& ds) {
  std::string out;
  for (std::size_t j = 0; j < ds.dim(); ++j) out += (j ? ",dim_" : "dim_") + std::to_string(j);
  if (ds.truth) out += ",truth";
  out += '\n';
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      if (j) out += ',';
      out += format_double(ds.points(n, j));
    }
    if (ds.truth) out += ',' + std::to_string((*ds.truth)[n] + 1);
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "line 1: missing header");
  ++number;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_csv(line);
  const bool has_truth = !header.empty() && header.back() == "truth";
  const std::size_t d = header.size() - (has_truth ? 1 : 0);
  if (d == 0) throw Error(ErrorCode::kParseError, "line 1: header has no dim_ columns");
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "dim_" + std::to_string(j)) {
      throw Error(ErrorCode::kParseError, "line 1: expected column dim_" + std::to_string(j) + ", got '" +
                                              header[j] + "'");
    }
  }

  std::vector<double> values;
  std::vector<Label> truth;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "line " + std::to_string(number) + ": " +
                                                     std::to_string(fields.size()) + " fields, header has " +
                                                     std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v) || !std::isfinite(v)) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": bad value '" + fields[j] + "'");
      }
      values.push_back(v);
    }
    if (has_truth) {
      std::uint64_t t = 0;
      if (!parse_unsigned(fields[d], t) || t == 0) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": bad truth label '" + fields[d] +
                                                "'");
      }
      truth.push_back(static_cast<Label>(t - 1));
    }
    ++rows;
  }

  Dataset ds;
  ds.points = Matrix(rows, d);
  std::copy(values.begin(), values.end(), ds.points.values().begin());
  if (has_truth) ds.truth = std::move(truth);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << format_dataset_csv(ds);
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

Dataset load_dataset(const std::string& path) { return parse_dataset_csv(read_text_file(path)); }

}  // namespace mice
