#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "macroute/flow_solver.hpp"

// Exhaustive search over the joint (MAC parameters, routing metric) grid:
// pick the configuration that minimizes the worst node power draw subject
// to per-node end-to-end reliability and delay floors.

namespace macroute {

struct SearchSpace {
  int min_be_lo = 3;
  int min_be_hi = 8;
  int max_be_hi = 8;  // max_be ranges [min_be, max_be_hi]
  int max_backoffs_lo = 0;
  int max_backoffs_hi = 4;
  int max_retries = 3;
  std::vector<MetricTag> metrics{MetricTag::RMetric, MetricTag::QMetric};

  void validate() const {
    if (min_be_lo < 0 || min_be_hi < min_be_lo || max_be_hi < min_be_hi)
      throw std::domain_error("inconsistent backoff exponent range");
    if (max_backoffs_lo < 0 || max_backoffs_hi < max_backoffs_lo)
      throw std::domain_error("inconsistent backoff count range");
    if (max_retries < 0) throw std::domain_error("max_retries must be >= 0");
    if (metrics.empty()) throw std::domain_error("empty metric list");
  }

  std::vector<MacParams> mac_grid() const {
    std::vector<MacParams> grid;
    for (int m0 = min_be_lo; m0 <= min_be_hi; ++m0)
      for (int mb = m0; mb <= max_be_hi; ++mb)
        for (int m = max_backoffs_lo; m <= max_backoffs_hi; ++m)
          grid.push_back({m0, mb, m, max_retries});
    return grid;
  }
};

struct SelectedConfig {
  MacParams mac;
  MetricTag metric = MetricTag::RMetric;
  double objective_w = std::numeric_limits<double>::infinity();

  std::string label() const {
    std::ostringstream s;
    s << to_string(metric) << '/' << mac.min_be << '/' << mac.max_be << '/'
      << mac.max_backoffs;
    return s.str();
  }
};

struct SelectorResult {
  bool feasible = false;
  SelectedConfig config;
  NetworkSolution solution;
  int evaluated = 0;
};

namespace detail {

/// Memo for grid sweeps: R-metric solutions depend only on the MAC
/// parameters; Q-metric solutions also depend on the reliability floor
/// used as the admission threshold.
class ConfigCache {
 public:
  const NetworkSolution& solve(const Topology& topo, const Dodag& dodag,
                               MetricTag metric, double r_min,
                               const MacParams& mac, const Timing& timing,
                               const PowerProfile& profile) {
    const Key key{metric, metric == MetricTag::QMetric ? r_min : 0.0,
                  mac.min_be, mac.max_be, mac.max_backoffs, mac.max_retries};
    auto it = memo_.find(key);
    if (it == memo_.end()) {
      MetricKind kind{metric};
      kind.r_min = r_min;
      it = memo_
               .emplace(key, solve_network(topo, dodag, kind, mac, timing,
                                           profile))
               .first;
    }
    return it->second;
  }

  std::size_t size() const { return memo_.size(); }

 private:
  using Key = std::tuple<MetricTag, double, int, int, int, int>;
  std::map<Key, NetworkSolution> memo_;
};

inline bool meets_constraints(const Topology& topo, const NetworkSolution& s,
                              double r_min, double d_max_s, double* max_power) {
  if (!s.converged) return false;
  const int root = topo.root_index();
  double mp = 0.0;
  for (int i = 0; i < topo.size(); ++i) {
    if (!std::isfinite(s.node_power_w[i])) return false;
    if (i == root) continue;  // the sink is mains powered
    mp = std::max(mp, s.node_power_w[i]);
    if (s.e2e_reliability[i] < r_min) return false;
    if (s.e2e_delay_s[i] > d_max_s) return false;
  }
  *max_power = mp;
  return true;
}

}  // namespace detail

inline SelectorResult select_configuration(
    const Topology& topo, const Dodag& dodag, double r_min, double d_max_s,
    const Timing& timing, const PowerProfile& profile,
    const SearchSpace& space = {}, detail::ConfigCache* cache = nullptr) {
  space.validate();
  detail::ConfigCache local;
  detail::ConfigCache& memo = cache ? *cache : local;
  SelectorResult best;
  for (const MacParams& mac : space.mac_grid()) {
    for (MetricTag metric : space.metrics) {
      best.evaluated++;
      const NetworkSolution& s =
          memo.solve(topo, dodag, metric, r_min, mac, timing, profile);
      double max_power = 0.0;
      if (!detail::meets_constraints(topo, s, r_min, d_max_s, &max_power))
        continue;
      // ties go to the earlier grid entry (smallest exponents first)
      if (max_power < best.config.objective_w * (1.0 - 1e-9)) {
        best.feasible = true;
        best.config = {mac, metric, max_power};
        best.solution = s;
      }
    }
  }
  return best;
}

struct FeasibilityMap {
  std::vector<double> r_min_grid;
  std::vector<double> d_max_grid_s;
  // row-major [r_min][d_max]; empty optional when no configuration fits
  std::vector<std::optional<SelectedConfig>> cells;

  const std::optional<SelectedConfig>& at(int ri, int di) const {
    return cells[ri * d_max_grid_s.size() + di];
  }
};

inline FeasibilityMap map_feasibility(const Topology& topo, const Dodag& dodag,
                                      const std::vector<double>& r_min_grid,
                                      const std::vector<double>& d_max_grid_s,
                                      const Timing& timing,
                                      const PowerProfile& profile,
                                      const SearchSpace& space = {}) {
  FeasibilityMap map;
  map.r_min_grid = r_min_grid;
  map.d_max_grid_s = d_max_grid_s;
  detail::ConfigCache cache;
  for (double r_min : r_min_grid) {
    for (double d_max : d_max_grid_s) {
      auto res = select_configuration(topo, dodag, r_min, d_max, timing,
                                      profile, space, &cache);
      map.cells.push_back(res.feasible ? std::optional(res.config)
                                       : std::nullopt);
    }
  }
  return map;
}

/// Rows are reliability floors, columns delay ceilings; each cell names the
/// winning configuration as metric/min_be/max_be/max_backoffs.
inline void write_feasibility_csv(std::ostream& out, const FeasibilityMap& map) {
  out << "r_min";
  for (double d : map.d_max_grid_s) out << ",d_max=" << d;
  out << '\n';
  for (std::size_t ri = 0; ri < map.r_min_grid.size(); ++ri) {
    out << map.r_min_grid[ri];
    for (std::size_t di = 0; di < map.d_max_grid_s.size(); ++di) {
      const auto& cell = map.at(int(ri), int(di));
      out << ',' << (cell ? cell->label() : std::string("INFEASIBLE"));
    }
    out << '\n';
  }
}

}  // namespace macroute
