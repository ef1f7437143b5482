#include "mice/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace mice {

namespace {

void check_lengths(std::span<const Label> truth, std::span<const Label> pred, std::size_t minimum) {
  if (truth.size() != pred.size()) {
    throw Error(ErrorCode::kLengthMismatch, "label vectors have lengths " + std::to_string(truth.size()) + " and " +
                                                std::to_string(pred.size()));
  }
  if (truth.size() < minimum) {
    throw Error(ErrorCode::kInvalidInput, "need at least " + std::to_string(minimum) + " labels");
  }
}

std::vector<std::size_t> compact(std::span<const Label> labels, std::size_t& count) {
  std::map<Label, std::size_t> ids;
  for (Label l : labels) ids.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, id] : ids) id = next++;
  count = next;
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids.at(labels[i]);
  return out;
}

double entropy(const std::vector<std::size_t>& sums, double n) {
  double h = 0.0;
  for (std::size_t c : sums) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double pairs(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

ContingencyTable contingency(std::span<const Label> truth, std::span<const Label> pred) {
  check_lengths(truth, pred, 0);
  std::size_t nt = 0;
  std::size_t np = 0;
  const auto t = compact(truth, nt);
  const auto p = compact(pred, np);
  ContingencyTable table;
  table.counts.assign(nt, std::vector<std::size_t>(np, 0));
  table.row_sums.assign(nt, 0);
  table.col_sums.assign(np, 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    ++table.counts[t[i]][p[i]];
    ++table.row_sums[t[i]];
    ++table.col_sums[p[i]];
  }
  table.total = t.size();
  return table;
}

double nmi(std::span<const Label> truth, std::span<const Label> pred) {
  check_lengths(truth, pred, 1);
  const ContingencyTable table = contingency(truth, pred);
  const double n = static_cast<double>(table.total);
  const double ht = entropy(table.row_sums, n);
  const double hp = entropy(table.col_sums, n);
  if (ht == 0.0 && hp == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < table.num_true(); ++i) {
    for (std::size_t j = 0; j < table.num_pred(); ++j) {
      const double c = static_cast<double>(table.counts[i][j]);
      if (c == 0.0) continue;
      mi += c / n * std::log(c * n / (static_cast<double>(table.row_sums[i]) * table.col_sums[j]));
    }
  }
  return std::clamp(mi / ((ht + hp) / 2.0), 0.0, 1.0);
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw Error(ErrorCode::kDimensionMismatch, "assignment cost matrix must be square");
  if (n == 0) return {};
  // Shortest augmenting paths with row/column potentials; index 0 is a
  // sentinel, real rows and columns are 1..n.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

double acc(std::span<const Label> truth, std::span<const Label> pred) {
  check_lengths(truth, pred, 1);
  const ContingencyTable table = contingency(truth, pred);
  const std::size_t n = std::max(table.num_true(), table.num_pred());
  Matrix cost(n, n, 0.0);
  for (std::size_t i = 0; i < table.num_true(); ++i) {
    for (std::size_t j = 0; j < table.num_pred(); ++j) cost(i, j) = -static_cast<double>(table.counts[i][j]);
  }
  const auto assignment = hungarian(cost);
  std::size_t matched = 0;
  for (std::size_t i = 0; i < table.num_true(); ++i) {
    if (assignment[i] < table.num_pred()) matched += table.counts[i][assignment[i]];
  }
  return static_cast<double>(matched) / static_cast<double>(table.total);
}

double ari(std::span<const Label> truth, std::span<const Label> pred) {
  check_lengths(truth, pred, 2);
  const ContingencyTable table = contingency(truth, pred);
  double index = 0.0;
  std::size_t nonzero = 0;
  for (const auto& row : table.counts) {
    for (std::size_t c : row) {
      if (c == 0) continue;
      index += pairs(static_cast<double>(c));
      ++nonzero;
    }
  }
  double a = 0.0;
  double b = 0.0;
  for (std::size_t c : table.row_sums) a += pairs(static_cast<double>(c));
  for (std::size_t c : table.col_sums) b += pairs(static_cast<double>(c));
  const double expected = a * b / pairs(static_cast<double>(table.total));
  const double max_index = (a + b) / 2.0;
  if (max_index == expected) {
    const bool identical = nonzero == table.num_true() && nonzero == table.num_pred();
    return identical ? 1.0 : 0.0;
  }
  return (index - expected) / (max_index - expected);
}

ClusterScores score_all(std::span<const Label> truth, std::span<const Label> pred) {
  return ClusterScores{nmi(truth, pred), acc(truth, pred), ari(truth, pred)};
}

}  // namespace mice
