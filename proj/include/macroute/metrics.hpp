#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "macroute/topology.hpp"

// Parent-selection rules (ETX, R-metric, Q-metric, back-pressure) and the
// deterministic 0/1 selection matrix M they induce.

namespace macroute {

enum class MetricTag { Etx, RMetric, QMetric, Backpressure };

inline const char* to_string(MetricTag t) {
  switch (t) {
    case MetricTag::Etx: return "etx";
    case MetricTag::RMetric: return "r";
    case MetricTag::QMetric: return "q";
    case MetricTag::Backpressure: return "backpressure";
  }
  return "?";
}

inline MetricTag metric_tag_from_string(const std::string& s) {
  if (s == "etx") return MetricTag::Etx;
  if (s == "r") return MetricTag::RMetric;
  if (s == "q") return MetricTag::QMetric;
  if (s == "backpressure") return MetricTag::Backpressure;
  throw std::invalid_argument("unknown metric tag: " + s);
}

struct MetricKind {
  MetricTag tag = MetricTag::RMetric;
  double r_min = 0.5;      // reliability floor for the Q-metric
  double bp_weight = 1.0;  // V weight of the back-pressure rule

  void validate() const {
    if (!(r_min > 0.0 && r_min <= 1.0) && tag == MetricTag::QMetric)
      throw std::domain_error("r_min must be in (0,1]");
    if (bp_weight < 0) throw std::domain_error("bp_weight must be >= 0");
  }
};

/// Row-stochastic selection matrix: M[i][j] = 1 iff node i forwards to j.
struct SelectionMatrix {
  int n = 0;
  std::vector<double> entries;  // row-major n x n

  SelectionMatrix() = default;
  explicit SelectionMatrix(int size) : n(size), entries(size * size, 0.0) {}

  double& at(int i, int j) { return entries[i * n + j]; }
  double at(int i, int j) const { return entries[i * n + j]; }

  bool operator==(const SelectionMatrix& o) const {
    return n == o.n && entries == o.entries;
  }
};

/// ETX of a link: expected transmissions 1 / delivery probability.
inline double etx_link(double delivery_probability) {
  if (!(delivery_probability > 0.0 && delivery_probability <= 1.0))
    throw std::domain_error("delivery probability must be in (0,1]");
  return 1.0 / delivery_probability;
}

/// Product of link reliabilities along the unique parent path to root.
/// `parent_of` holds the chosen parent per node (-1 at the root);
/// link_reliability is a dense row-major n x n matrix.
inline double end_to_end_reliability(int node, const std::vector<int>& parent_of,
                                     const std::vector<double>& link_reliability) {
  const int n = static_cast<int>(parent_of.size());
  double r = 1.0;
  int hops = 0;
  for (int u = node; parent_of[u] >= 0; u = parent_of[u]) {
    r *= link_reliability[u * n + parent_of[u]];
    if (++hops > n) throw std::runtime_error("parent chain does not reach root");
  }
  return r;
}

/// argmax over candidates of R_{i,j} * R(j); ties to the natural-id
/// smallest candidate (candidate lists are pre-sorted that way).
inline int select_parent_r_metric(const std::vector<int>& candidates,
                                  const std::vector<double>& link_r_to,
                                  const std::vector<double>& downstream_r) {
  if (candidates.empty()) throw std::invalid_argument("empty candidate set");
  int best = candidates.front();
  double best_val = -1.0;
  for (int j : candidates) {
    const double v = link_r_to[j] * downstream_r[j];
    if (v > best_val) {
      best_val = v;
      best = j;
    }
  }
  return best;
}

/// argmin over candidates of P_t*Q_j + P_r*(Q_j - lambda_j) subject to
/// R_{i,j} * R(j) >= r_min. Empty optional when no candidate is feasible.
inline std::optional<int> select_parent_q_metric(
    const std::vector<int>& candidates, const std::vector<double>& q,
    const std::vector<double>& lambda, double p_tx_w, double p_rx_w,
    const std::vector<double>& link_r_to, const std::vector<double>& downstream_r,
    double r_min) {
  if (candidates.empty()) throw std::invalid_argument("empty candidate set");
  std::optional<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int j : candidates) {
    if (link_r_to[j] * downstream_r[j] < r_min) continue;
    const double cost = p_tx_w * q[j] + p_rx_w * (q[j] - lambda[j]);
    if (cost < best_cost) {
      best_cost = cost;
      best = j;
    }
  }
  return best;
}

/// argmax over candidates of (queue_i - queue_j) - V * ETX_{i,j}.
inline int select_parent_backpressure(int node, const std::vector<int>& candidates,
                                      const std::vector<double>& queue_len,
                                      const std::vector<double>& etx_to,
                                      double v_weight) {
  if (candidates.empty()) throw std::invalid_argument("empty candidate set");
  int best = candidates.front();
  double best_w = -std::numeric_limits<double>::infinity();
  for (int j : candidates) {
    const double w = (queue_len[node] - queue_len[j]) - v_weight * etx_to[j];
    if (w > best_w) {
      best_w = w;
      best = j;
    }
  }
  return best;
}

/// 0/1 selection matrix from per-node parent choices (-1 at the root).
inline SelectionMatrix build_selection_matrix(const Dodag& dodag,
                                              const std::vector<int>& parent_of) {
  const int n = static_cast<int>(parent_of.size());
  SelectionMatrix m(n);
  for (int i = 0; i < n; ++i) {
    if (dodag.rank[i] == 0) continue;  // root
    if (parent_of[i] < 0)
      throw std::invalid_argument("missing parent choice for a non-root node");
    m.at(i, parent_of[i]) = 1.0;
  }
  return m;
}

}  // namespace macroute
