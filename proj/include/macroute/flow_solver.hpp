#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "macroute/mac_model.hpp"
#include "macroute/metrics.hpp"
#include "macroute/topology.hpp"

// Analytical fixed point of the MAC/routing loop: link reliabilities R,
// parent selection M, flow balance Q = lambda (I - T)^-1 with T = M o R,
// and the occupancy mapping from traffic back to busy-channel alpha.

namespace macroute {

struct NetworkSolution {
  std::vector<double> q;                 // forwarded traffic per node, pkt/s
  std::vector<double> alpha;             // busy-channel probability per node
  std::vector<int> parent_of;            // chosen parent index, -1 at root
  SelectionMatrix selection;
  std::vector<double> link_reliability;  // dense n x n, rows = transmitter
  std::vector<double> e2e_reliability;
  std::vector<double> e2e_delay_s;
  std::vector<double> node_power_w;      // +inf where the MAC saturates
  std::vector<bool> q_metric_fallback;   // nodes that fell back to R-metric
  bool converged = false;
  int iterations = 0;
};

namespace detail {

/// Dense linear solve by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<double> a,
                                        std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-14)
      throw std::runtime_error("singular flow-balance system");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return x;
}

}  // namespace detail

/// Flow balance: Q_i = lambda_i + sum_j T_{j,i} Q_j with T = M o R
/// (children feed parents), solved as (I - T^t) Q = lambda.
inline std::vector<double> traffic_fixed_point(
    const std::vector<double>& lambda, const SelectionMatrix& m,
    const std::vector<double>& link_reliability) {
  const int n = m.n;
  std::vector<double> a(n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    a[i * n + i] = 1.0;
    for (int j = 0; j < n; ++j)
      a[j * n + i] -= m.at(i, j) * link_reliability[i * n + j];
  }
  return detail::solve_linear(std::move(a), lambda);
}

/// Interference sets: k interferes with i iff they are adjacent in the
/// link list or share a candidate receiver. The sink never sources data
/// frames, so it contends with nobody.
inline std::vector<std::vector<int>> interference_sets(const Topology& topo) {
  const int n = topo.size();
  const int root = topo.root_index();
  const auto adj = topo.adjacency();
  const auto edges = topo.candidate_edges();
  std::vector<std::set<int>> receivers(n);
  for (int i = 0; i < n; ++i)
    for (const auto& [j, p] : edges[i]) {
      (void)p;
      receivers[i].insert(j);
    }
  std::vector<std::vector<int>> sets(n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      if (k == i || k == root) continue;
      bool shares = false;
      for (int r : receivers[i])
        if (receivers[k].count(r)) {
          shares = true;
          break;
        }
      if (shares || adj[i].count(k)) sets[i].push_back(k);
    }
  return sets;
}

/// Occupancy mapping: alpha_i = min(1, sum over interferers of
/// Q_k * packet airtime).
inline std::vector<double> alpha_from_traffic(
    const std::vector<double>& q, const std::vector<std::vector<int>>& interferers,
    const Timing& timing) {
  const int n = static_cast<int>(q.size());
  std::vector<double> alpha(n, 0.0);
  const double airtime_s = timing.tx_slots * timing.slot_s;
  for (int i = 0; i < n; ++i) {
    double occ = 0.0;
    for (int k : interferers[i]) occ += std::max(0.0, q[k]) * airtime_s;
    alpha[i] = std::min(1.0, occ);
  }
  return alpha;
}

inline std::vector<double> alpha_from_traffic(const std::vector<double>& q,
                                              const Topology& topo,
                                              const Timing& timing) {
  return alpha_from_traffic(q, interference_sets(topo), timing);
}

namespace detail {

struct ParentChoice {
  std::vector<int> parent_of;
  std::vector<bool> q_fallback;
};

/// Per-node parent choices under the given metric, processed root-down so
/// downstream values are available. `q_prev` is the previous iterate's
/// traffic (DIO-advertised view for the Q-metric); `rho` feeds the
/// analytical queue proxy of the back-pressure rule. Q-metric choices are
/// made sequentially against a working copy of the advertised loads, with
/// the deciding node's own contribution moved as it decides; simultaneous
/// decisions on identical stale loads otherwise flip-flop in lockstep.
inline ParentChoice choose_parents(const Topology& topo, const Dodag& dodag,
                                   const MetricKind& metric,
                                   const std::vector<double>& link_r,
                                   const std::vector<double>& gamma_link,
                                   const std::vector<double>& q_prev,
                                   const std::vector<double>& rho,
                                   const PowerProfile& profile,
                                   const std::vector<int>& prev_parent) {
  const int n = topo.size();
  const int root = topo.root_index();
  std::vector<double> lambda(n);
  for (int i = 0; i < n; ++i) lambda[i] = topo.nodes[i].lambda_pps;

  // rank order, root first
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return dodag.rank[a] < dodag.rank[b]; });

  ParentChoice out;
  out.parent_of.assign(n, -1);
  out.q_fallback.assign(n, false);
  std::vector<double> downstream_r(n, 1.0);   // best e2e reliability per node
  std::vector<double> downstream_etx(n, 0.0); // best additive path ETX
  std::vector<double> q_work = q_prev;        // advertised loads, updated as
                                              // nodes decide

  // analytical queue proxy for back-pressure: mean M/M/1 queue length
  std::vector<double> queue_len(n, 0.0);
  for (int i = 0; i < n; ++i)
    queue_len[i] = rho[i] < 1.0 ? rho[i] * rho[i] / (1.0 - rho[i]) : 8.0;

  for (int i : order) {
    if (i == root) continue;
    const auto& cand = dodag.parent_sets[i];
    std::vector<double> link_r_row(n, 0.0), etx_row(n, 0.0);
    for (int j : cand) {
      link_r_row[j] = link_r[i * n + j];
      etx_row[j] = 1.0 / std::max(1e-9, 1.0 - gamma_link[i * n + j]);
    }
    int choice = -1;
    switch (metric.tag) {
      case MetricTag::RMetric:
        choice = select_parent_r_metric(cand, link_r_row, downstream_r);
        break;
      case MetricTag::QMetric: {
        // withdraw this node's own contribution before comparing loads
        const int prev = i < static_cast<int>(prev_parent.size())
                             ? prev_parent[i] : -1;
        if (prev >= 0)
          q_work[prev] = std::max(lambda[prev],
                                  q_work[prev] - link_r[i * n + prev] * q_prev[i]);
        auto c = select_parent_q_metric(cand, q_work, lambda, profile.tx_w,
                                        profile.rx_w, link_r_row, downstream_r,
                                        metric.r_min);
        if (c) {
          choice = *c;
          // sticky near-ties: keep the previous parent unless the new
          // choice is strictly cheaper
          if (prev >= 0 && prev != choice &&
              link_r_row[prev] * downstream_r[prev] >= metric.r_min) {
            auto cost = [&](int j) {
              return profile.tx_w * q_work[j] +
                     profile.rx_w * (q_work[j] - lambda[j]);
            };
            if (cost(prev) <= cost(choice) * (1.0 + 1e-9) + 1e-12) choice = prev;
          }
        } else {
          choice = select_parent_r_metric(cand, link_r_row, downstream_r);
          out.q_fallback[i] = true;
        }
        q_work[choice] += link_r[i * n + choice] * q_prev[i];
        break;
      }
      case MetricTag::Etx: {
        choice = cand.front();
        double best = std::numeric_limits<double>::infinity();
        for (int j : cand) {
          const double v = etx_row[j] + downstream_etx[j];
          if (v < best) {
            best = v;
            choice = j;
          }
        }
        break;
      }
      case MetricTag::Backpressure:
        choice = select_parent_backpressure(i, cand, queue_len, etx_row,
                                            metric.bp_weight);
        break;
    }
    out.parent_of[i] = choice;
    downstream_r[i] = link_r_row[choice] * downstream_r[choice];
    downstream_etx[i] = etx_row[choice] + downstream_etx[choice];
  }
  return out;
}

}  // namespace detail

/// Damped fixed-point iteration over (R, M, Q, alpha) until alpha settles
/// and the selection matrix stops changing.
inline NetworkSolution solve_network(const Topology& topo, const Dodag& dodag,
                                     const MetricKind& metric,
                                     const MacParams& mac, const Timing& timing,
                                     const PowerProfile& profile,
                                     double damping = 0.5, double tol = 1e-6,
                                     int max_iterations = 500) {
  mac.validate();
  timing.validate();
  profile.validate();
  metric.validate();

  const int n = topo.size();
  const int root = topo.root_index();
  const auto edges = topo.candidate_edges();
  const auto interferers = interference_sets(topo);
  std::vector<double> lambda(n);
  for (int i = 0; i < n; ++i) lambda[i] = topo.nodes[i].lambda_pps;

  // dense p_bad over candidate edges
  std::vector<double> p_bad(n * n, 1.0);
  for (int i = 0; i < n; ++i)
    for (const auto& [j, p] : edges[i]) p_bad[i * n + j] = p;

  NetworkSolution sol;
  sol.alpha.assign(n, 0.0);
  sol.q = lambda;
  std::vector<double> rho(n, 0.0);
  SelectionMatrix m_prev;

  std::vector<double> link_r(n * n, 0.0), gamma_link(n * n, 1.0);
  for (int iter = 1; iter <= max_iterations; ++iter) {
    for (int i = 0; i < n; ++i) {
      const double pc = collision_probability(sol.alpha[i], timing);
      for (const auto& [j, pb] : edges[i]) {
        gamma_link[i * n + j] = attempt_loss(pc, pb);
        link_r[i * n + j] = link_reliability(sol.alpha[i], pb, mac, timing);
      }
    }
    auto choice = detail::choose_parents(topo, dodag, metric, link_r, gamma_link,
                                         sol.q, rho, profile, sol.parent_of);
    SelectionMatrix m = build_selection_matrix(dodag, choice.parent_of);
    std::vector<double> q = traffic_fixed_point(lambda, m, link_r);
    auto alpha_new = alpha_from_traffic(q, interferers, timing);

    double max_delta = 0.0;
    for (int i = 0; i < n; ++i) {
      const double damped =
          (1.0 - damping) * sol.alpha[i] + damping * alpha_new[i];
      max_delta = std::max(max_delta, std::abs(damped - sol.alpha[i]));
      sol.alpha[i] = damped;
    }
    sol.q = q;
    sol.parent_of = choice.parent_of;
    sol.q_metric_fallback = choice.q_fallback;
    sol.iterations = iter;
    for (int i = 0; i < n; ++i) {
      const int p = choice.parent_of[i];
      const double g = p >= 0 ? gamma_link[i * n + p] : 0.0;
      const double svc = expected_service_delay(sol.alpha[i], g, mac, timing);
      rho[i] = std::min(0.999, q[i] * svc);
    }

    const bool m_stable = (m_prev.n == n) && (m == m_prev);
    m_prev = std::move(m);
    if (max_delta < tol && m_stable) {
      sol.converged = true;
      break;
    }
  }
  sol.selection = m_prev;
  sol.link_reliability = link_r;

  // end-to-end extraction along the chosen paths
  sol.e2e_reliability.assign(n, 1.0);
  sol.e2e_delay_s.assign(n, 0.0);
  sol.node_power_w.assign(n, 0.0);
  std::vector<double> hop_delay(n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (i == root) continue;
    const int p = sol.parent_of[i];
    const double g = gamma_link[i * n + p];
    const double svc = expected_service_delay(sol.alpha[i], g, mac, timing);
    const double util = sol.q[i] * svc;
    // M/M/1-style queueing wait on top of the service time
    hop_delay[i] = util < 1.0
                       ? svc + util * svc / (1.0 - util)
                       : std::numeric_limits<double>::infinity();
  }
  for (int i = 0; i < n; ++i) {
    sol.e2e_reliability[i] =
        end_to_end_reliability(i, sol.parent_of, link_r);
    double d = 0.0;
    for (int u = i; sol.parent_of[u] >= 0; u = sol.parent_of[u])
      d += hop_delay[u];
    sol.e2e_delay_s[i] = d;
  }
  for (int i = 0; i < n; ++i) {
    const int p = sol.parent_of[i];
    const double g = p >= 0 ? gamma_link[i * n + p] : 0.0;
    const double tx_rate = p >= 0 ? sol.q[i] : 0.0;
    double rx_rate = 0.0;
    for (int c = 0; c < n; ++c)
      if (sol.parent_of[c] == i)
        rx_rate += sol.q[c] * link_r[c * n + i];
    try {
      sol.node_power_w[i] =
          node_power(tx_rate, rx_rate, sol.alpha[i], g, mac, timing, profile);
    } catch (const saturation_error&) {
      sol.node_power_w[i] = std::numeric_limits<double>::infinity();
    }
  }
  return sol;
}

struct ConfigurationResult {
  bool feasible = false;
  double objective_w = std::numeric_limits<double>::infinity();  // max node power
  NetworkSolution solution;
};

/// Feasibility and lifetime objective of one (metric, MAC) configuration
/// under per-node reliability and delay constraints.
inline ConfigurationResult evaluate_configuration(
    const Topology& topo, const Dodag& dodag, const MetricKind& metric,
    const MacParams& mac, const Timing& timing, const PowerProfile& profile,
    double r_min, double d_max_s) {
  ConfigurationResult res;
  res.solution = solve_network(topo, dodag, metric, mac, timing, profile);
  const auto& s = res.solution;
  if (!s.converged) return res;
  const int root = topo.root_index();
  double max_power = 0.0;
  for (int i = 0; i < topo.size(); ++i) {
    if (!std::isfinite(s.node_power_w[i])) return res;
    if (i == root) continue;  // the sink is mains powered
    max_power = std::max(max_power, s.node_power_w[i]);
    if (s.e2e_reliability[i] < r_min) return res;
    if (s.e2e_delay_s[i] > d_max_s) return res;
  }
  res.feasible = true;
  res.objective_w = max_power;
  return res;
}

/// CSV emission: one row per node.
inline void write_solution_csv(std::ostream& out, const Topology& topo,
                               const NetworkSolution& s) {
  out << "node,q_pps,alpha,e2e_reliability,e2e_delay_s,power_w,parent\n";
  for (int i = 0; i < topo.size(); ++i) {
    const int p = s.parent_of.empty() ? -1 : s.parent_of[i];
    out << topo.nodes[i].id << ',' << s.q[i] << ',' << s.alpha[i] << ','
        << s.e2e_reliability[i] << ',' << s.e2e_delay_s[i] << ','
        << s.node_power_w[i] << ',' << (p >= 0 ? topo.nodes[p].id : "-")
        << '\n';
  }
}

}  // namespace macroute
