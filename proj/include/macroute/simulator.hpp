#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "macroute/flow_solver.hpp"
#include "macroute/mac_model.hpp"
#include "macroute/metrics.hpp"
#include "macroute/topology.hpp"

// Discrete-event simulation of unslotted CSMA/CA nodes over a shared
// binary-audibility channel, with online alpha/ETX estimation and
// periodic metric-driven parent re-selection.
//
// One run is single-threaded over a global event queue and fully
// deterministic for a fixed (topology, config, seed, run_index): per-node
// mt19937_64 streams are derived from those values alone.

namespace macroute {

enum class ArrivalProcess { PeriodicJitter, Poisson };

struct SimConfig {
  double duration_s = 60.0;
  std::uint64_t seed = 1;
  std::uint64_t run_index = 0;
  MacParams mac;
  Timing timing;
  PowerProfile profile;
  MetricKind metric;
  ArrivalProcess arrivals = ArrivalProcess::PeriodicJitter;
  double reselect_period_s = 10.0;
  double alpha_smoothing = 0.9;  // r of the sliding-window update
  int alpha_window = 8;          // CCA outcomes per window sample
  int etx_window = 10;           // ACKs per windowed ETX estimate
  int queue_capacity = 8;
  // scripted interferer: when set, CCA outcomes are Bernoulli draws with
  // this busy probability instead of channel inspection
  std::optional<double> forced_alpha;
  bool record_estimates = false;

  void validate() const {
    if (duration_s <= 0) throw std::domain_error("duration must be positive");
    if (reselect_period_s <= 0)
      throw std::domain_error("reselect_period must be positive");
    if (queue_capacity < 1) throw std::domain_error("queue capacity must be >= 1");
    if (!(alpha_smoothing > 0 && alpha_smoothing < 1))
      throw std::domain_error("alpha smoothing must be in (0,1)");
    if (alpha_window < 1 || etx_window < 1)
      throw std::domain_error("estimator windows must be >= 1");
    mac.validate();
    timing.validate();
    profile.validate();
  }
};

enum class DropCause { AccessFailure, RetryLimit, QueueOverflow };

struct PacketRecord {
  int source = -1;
  double birth_s = 0;
  bool delivered = false;
  double delivery_s = 0;
  std::optional<DropCause> drop;
  int drop_node = -1;
  double drop_s = 0;
  int hops = 0;
};

struct SwitchEvent {
  double t_s;
  int node;
  int old_parent;
  int new_parent;
};

struct EstimateSample {
  double t_s;
  int node;
  double alpha_est;
  double rel_from_alpha;  // model reliability at the current alpha estimate
  double rel_from_etx;    // retry-limited delivery from the windowed ETX
};

struct NodeCounters {
  std::uint64_t generated = 0;
  std::uint64_t forwarded_in = 0;
  std::uint64_t tx_attempts = 0;
  std::uint64_t cca_busy = 0;
  std::uint64_t cca_idle = 0;
  std::uint64_t collisions = 0;
  std::uint64_t drop_access = 0;
  std::uint64_t drop_retry = 0;
  std::uint64_t drop_queue = 0;
  int switches = 0;
  double time_backoff_s = 0;
  double time_cca_s = 0;
  double time_tx_s = 0;
  double time_ackwait_s = 0;
  double time_rx_s = 0;
};

struct SimTrace {
  std::vector<PacketRecord> packets;
  std::vector<SwitchEvent> switches;
  std::vector<EstimateSample> estimates;
  std::vector<NodeCounters> counters;
};

struct SimReport {
  std::vector<std::uint64_t> generated;   // per source node
  std::vector<std::uint64_t> delivered;   // per source node, at root
  std::vector<double> reliability;        // delivered / generated
  std::vector<double> mean_delay_s;       // delivered packets only
  std::vector<double> power_w;
  std::vector<double> offered_pps;        // packets entering the MAC per second
  std::vector<double> alpha_measured;     // busy CCA fraction over the run
  std::vector<int> final_parent;
  std::vector<int> switches;

  double avg_reliability = 0;  // among traffic sources
  double min_reliability = 1;
  double avg_delay_s = 0;
  double max_delay_s = 0;
  double max_power_w = 0;
  int total_switches = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

class Simulator {
 public:
  Simulator(const Topology& topo, const Dodag& dodag, const SimConfig& cfg)
      : topo_(topo), dodag_(dodag), cfg_(cfg), n_(topo.size()) {
    cfg_.validate();
    cfg_.metric.validate();
    root_ = topo_.root_index();

    const auto edges = topo_.candidate_edges();
    p_bad_.assign(n_ * n_, 1.0);
    for (int i = 0; i < n_; ++i)
      for (const auto& [j, p] : edges[i]) p_bad_[i * n_ + j] = p;

    const auto inter = interference_sets(topo_);
    audible_.assign(n_ * n_, false);
    for (int i = 0; i < n_; ++i)
      for (int k : inter[i]) audible_[i * n_ + k] = true;

    nodes_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      auto& nd = nodes_[i];
      nd.rng.seed(detail::splitmix64(cfg_.seed * 0x100000001b3ULL +
                                     cfg_.run_index * 8191 + i));
      nd.lambda = topo_.nodes[i].lambda_pps;
      nd.etx_est.assign(n_, 1.0);
      if (i != root_) {
        const auto& cand = dodag_.parent_sets[i];
        nd.parent = cand[std::uniform_int_distribution<size_t>(
            0, cand.size() - 1)(nd.rng)];
      }
    }
    trace_.counters.assign(n_, {});
  }

  void run() {
    for (int i = 0; i < n_; ++i)
      if (i != root_ && nodes_[i].lambda > 0)
        schedule(first_arrival(i), EventType::Arrival, i, 0);
    if (cfg_.metric.tag != MetricTag::Backpressure)
      schedule(cfg_.reselect_period_s, EventType::Reselect, -1, 0);

    while (!events_.empty()) {
      Event ev = events_.top();
      events_.pop();
      if (ev.t > cfg_.duration_s) break;
      now_ = ev.t;
      dispatch(ev);
    }
    finalize();
  }

  const SimTrace& trace() const { return trace_; }
  const SimReport& report() const { return report_; }

 private:
  enum class EventType { Arrival, BackoffEnd, CcaEnd, TxEnd, AckDone, Reselect };

  struct Event {
    double t;
    std::uint64_t seq;
    EventType type;
    int node;
    std::uint64_t aux;
    bool operator>(const Event& o) const {
      return t != o.t ? t > o.t : seq > o.seq;
    }
  };

  struct ActiveTx {
    std::uint64_t id;
    int sender;
    int receiver;
    double start_t;
    double end_t;
    bool collided = false;
    bool control = false;
    std::uint64_t packet;
  };

  struct NodeState {
    std::mt19937_64 rng;
    double lambda = 0;
    int parent = -1;
    std::deque<std::uint64_t> queue;  // packet ids; control frames flagged
    bool serving = false;
    std::uint64_t current = 0;  // packet id in service
    bool current_is_control = false;
    int backoffs = 0;   // busy CCAs so far for this attempt
    int be = 3;
    int retries = 0;
    // estimators
    double alpha_est = 0;
    int win_total = 0, win_busy = 0;
    std::vector<double> etx_est;             // per candidate link
    std::deque<std::pair<int, int>> etx_hist;  // (attempts, acked) per packet
    std::uint64_t offered = 0;               // packets that entered service
    std::uint64_t offered_since_reselect = 0;
  };

  // ---- scheduling helpers ----

  void schedule(double t, EventType type, int node, std::uint64_t aux) {
    events_.push({t, seq_++, type, node, aux});
  }

  double first_arrival(int i) {
    auto& nd = nodes_[i];
    if (cfg_.arrivals == ArrivalProcess::Poisson)
      return std::exponential_distribution<double>(nd.lambda)(nd.rng);
    return std::uniform_real_distribution<double>(0.0, 1.0 / nd.lambda)(nd.rng);
  }

  double next_interarrival(int i) {
    auto& nd = nodes_[i];
    if (cfg_.arrivals == ArrivalProcess::Poisson)
      return std::exponential_distribution<double>(nd.lambda)(nd.rng);
    const double jitter =
        std::uniform_real_distribution<double>(-0.1, 0.1)(nd.rng);
    return (1.0 + jitter) / nd.lambda;
  }

  void dispatch(const Event& ev) {
    switch (ev.type) {
      case EventType::Arrival: on_arrival(ev.node); break;
      case EventType::BackoffEnd: on_backoff_end(ev.node, ev.aux); break;
      case EventType::CcaEnd: on_cca_end(ev.node, ev.aux); break;
      case EventType::TxEnd: on_tx_end(ev.aux); break;
      case EventType::AckDone: on_ack_done(ev.node, ev.aux); break;
      case EventType::Reselect: on_reselect(); break;
    }
  }

  // ---- traffic ----

  void on_arrival(int node) {
    const std::uint64_t pkt = new_packet(node);
    trace_.counters[node].generated++;
    enqueue(node, pkt, false);
    schedule(now_ + next_interarrival(node), EventType::Arrival, node, 0);
  }

  std::uint64_t new_packet(int source) {
    PacketRecord r;
    r.source = source;
    r.birth_s = now_;
    trace_.packets.push_back(r);
    return trace_.packets.size() - 1;
  }

  void enqueue(int node, std::uint64_t pkt, bool control) {
    auto& nd = nodes_[node];
    if (static_cast<int>(nd.queue.size()) + (nd.serving ? 1 : 0) >=
        cfg_.queue_capacity) {
      trace_.counters[node].drop_queue++;
      if (!control) {
        trace_.packets[pkt].drop = DropCause::QueueOverflow;
        trace_.packets[pkt].drop_node = node;
        trace_.packets[pkt].drop_s = now_;
      }
      return;
    }
    nd.queue.push_back(control ? (pkt | kControlBit) : pkt);
    if (!nd.serving) start_service(node);
  }

  void start_service(int node) {
    auto& nd = nodes_[node];
    if (nd.queue.empty()) {
      nd.serving = false;
      return;
    }
    const std::uint64_t entry = nd.queue.front();
    nd.queue.pop_front();
    nd.serving = true;
    nd.current_is_control = entry & kControlBit;
    nd.current = entry & ~kControlBit;
    nd.retries = 0;
    nd.offered++;
    nd.offered_since_reselect++;
    if (cfg_.metric.tag == MetricTag::Backpressure && !nd.current_is_control)
      backpressure_choose(node);
    begin_attempt(node);
  }

  void begin_attempt(int node) {
    auto& nd = nodes_[node];
    nd.backoffs = 0;
    nd.be = cfg_.mac.min_be;
    begin_backoff(node);
  }

  void begin_backoff(int node) {
    auto& nd = nodes_[node];
    const int window = (1 << nd.be) - 1;
    const int slots =
        std::uniform_int_distribution<int>(0, window)(nd.rng);
    const double dt = slots * cfg_.timing.slot_s;
    trace_.counters[node].time_backoff_s += dt;
    schedule(now_ + dt, EventType::BackoffEnd, node, nd.current);
  }

  void on_backoff_end(int node, std::uint64_t pkt) {
    if (!still_serving(node, pkt)) return;
    trace_.counters[node].time_cca_s += cfg_.timing.cca_slots * cfg_.timing.slot_s;
    schedule(now_ + cfg_.timing.cca_slots * cfg_.timing.slot_s, EventType::CcaEnd,
             node, pkt);
  }

  /// Clear-channel assessment senses the state at the start of the CCA
  /// slot; a transmission that begins inside the slot goes unnoticed.
  /// That one-slot vulnerability window is what lets overlaps happen at
  /// all under carrier sensing.
  bool channel_busy_for(int node) {
    if (cfg_.forced_alpha)
      return std::bernoulli_distribution(*cfg_.forced_alpha)(nodes_[node].rng);
    const double sensed_at = now_ - cfg_.timing.cca_slots * cfg_.timing.slot_s;
    for (const auto& tx : active_)
      if (tx.start_t <= sensed_at &&
          (tx.sender == node || audible_[node * n_ + tx.sender]))
        return true;
    return false;
  }

  void on_cca_end(int node, std::uint64_t pkt) {
    if (!still_serving(node, pkt)) return;
    auto& nd = nodes_[node];
    const bool busy = channel_busy_for(node);
    note_cca(node, busy);
    if (busy) {
      trace_.counters[node].cca_busy++;
      if (++nd.backoffs > cfg_.mac.max_backoffs) {
        finish_current(node, DropCause::AccessFailure);
      } else {
        nd.be = std::min(nd.be + 1, cfg_.mac.max_be);
        begin_backoff(node);
      }
    } else {
      trace_.counters[node].cca_idle++;
      start_transmission(node);
    }
  }

  void start_transmission(int node) {
    auto& nd = nodes_[node];
    ActiveTx tx;
    tx.id = next_tx_id_++;
    tx.sender = node;
    tx.receiver = nd.parent;
    tx.start_t = now_;
    tx.end_t = now_ + cfg_.timing.tx_slots * cfg_.timing.slot_s;
    tx.control = nd.current_is_control;
    tx.packet = nd.current;
    // overlap marking at both receivers
    for (auto& other : active_) {
      if (other.end_t <= now_) continue;
      if (other.receiver >= 0 &&
          (node == other.receiver || audible_[other.receiver * n_ + node]))
        other.collided = true;
      if (tx.receiver >= 0 &&
          (other.sender == tx.receiver || audible_[tx.receiver * n_ + other.sender]))
        tx.collided = true;
    }
    active_.push_back(tx);
    trace_.counters[node].tx_attempts++;
    trace_.counters[node].time_tx_s += cfg_.timing.tx_slots * cfg_.timing.slot_s;
    schedule(tx.end_t, EventType::TxEnd, node, tx.id);
  }

  void on_tx_end(std::uint64_t tx_id) {
    const auto it = std::find_if(active_.begin(), active_.end(),
                                 [&](const ActiveTx& t) { return t.id == tx_id; });
    if (it == active_.end()) return;
    const ActiveTx tx = *it;
    active_.erase(it);

    const int node = tx.sender;
    bool success = false;
    if (tx.control) {
      success = true;  // broadcast, fire and forget
    } else {
      if (tx.collided) {
        trace_.counters[node].collisions++;
      } else {
        const double pb = p_bad_[node * n_ + tx.receiver];
        success = !std::bernoulli_distribution(pb)(nodes_[node].rng);
      }
      if (success) deliver(tx);
    }
    // sender learns the outcome after the ACK interval
    trace_.counters[node].time_ackwait_s +=
        cfg_.timing.ack_slots * cfg_.timing.slot_s;
    schedule(now_ + cfg_.timing.ack_slots * cfg_.timing.slot_s, EventType::AckDone,
             node, success ? 1 : 0);
  }

  void deliver(const ActiveTx& tx) {
    auto& pkt = trace_.packets[tx.packet];
    pkt.hops++;
    trace_.counters[tx.receiver].time_rx_s +=
        (cfg_.timing.tx_slots + cfg_.timing.ack_slots) * cfg_.timing.slot_s;
    if (tx.receiver == root_) {
      pkt.delivered = true;
      pkt.delivery_s = now_;
    } else {
      trace_.counters[tx.receiver].forwarded_in++;
      enqueue(tx.receiver, tx.packet, false);
    }
  }

  void on_ack_done(int node, std::uint64_t success) {
    auto& nd = nodes_[node];
    if (!nd.serving) return;
    if (nd.current_is_control) {
      nd.serving = false;
      start_service(node);
      return;
    }
    if (success) {
      note_ack(node, nd.retries + 1, true);
      nd.serving = false;
      start_service(node);
    } else if (++nd.retries > cfg_.mac.max_retries) {
      finish_current(node, DropCause::RetryLimit);
    } else {
      begin_attempt(node);
    }
  }

  void finish_current(int node, DropCause cause) {
    auto& nd = nodes_[node];
    auto& pkt = trace_.packets[nd.current];
    if (!nd.current_is_control) {
      pkt.drop = cause;
      pkt.drop_node = node;
      pkt.drop_s = now_;
      if (cause == DropCause::AccessFailure)
        trace_.counters[node].drop_access++;
      else
        trace_.counters[node].drop_retry++;
      if (cause == DropCause::RetryLimit) note_ack(node, nd.retries, false);
    }
    nd.serving = false;
    start_service(node);
  }

  bool still_serving(int node, std::uint64_t pkt) const {
    const auto& nd = nodes_[node];
    return nd.serving && nd.current == (pkt & ~kControlBit);
  }

  // ---- online estimators ----

  void note_cca(int node, bool busy) {
    auto& nd = nodes_[node];
    nd.win_total++;
    if (busy) nd.win_busy++;
    if (nd.win_total >= cfg_.alpha_window) {
      const double sample = double(nd.win_busy) / double(nd.win_total);
      nd.alpha_est =
          update_alpha_estimate(nd.alpha_est, sample, cfg_.alpha_smoothing);
      nd.win_total = nd.win_busy = 0;
    }
  }

  /// Per-packet ACK bookkeeping: windowed ETX = attempts / ACKs over the
  /// last etx_window acknowledged packets.
  void note_ack(int node, int attempts, bool acked) {
    auto& nd = nodes_[node];
    nd.etx_hist.push_back({attempts, acked ? 1 : 0});
    int acks = 0;
    for (const auto& [a, k] : nd.etx_hist) acks += k;
    while (acks > cfg_.etx_window) {
      acks -= nd.etx_hist.front().second;
      nd.etx_hist.pop_front();
    }
    if (nd.parent >= 0) {
      int attempts = 0;
      acks = 0;
      for (const auto& [a, k] : nd.etx_hist) {
        attempts += a;
        acks += k;
      }
      if (acks > 0) nd.etx_est[nd.parent] = double(attempts) / double(acks);
    }
    if (cfg_.record_estimates) record_estimate(node);
  }

  void record_estimate(int node) {
    auto& nd = nodes_[node];
    if (nd.parent < 0) return;
    EstimateSample s;
    s.t_s = now_;
    s.node = node;
    s.alpha_est = nd.alpha_est;
    s.rel_from_alpha = link_reliability(nd.alpha_est, p_bad_[node * n_ + nd.parent],
                                        cfg_.mac, cfg_.timing);
    const double attempt_success =
        std::min(1.0, 1.0 / std::max(1.0, nd.etx_est[nd.parent]));
    s.rel_from_etx =
        1.0 - std::pow(1.0 - attempt_success, cfg_.mac.max_retries + 1);
    trace_.estimates.push_back(s);
  }

  // ---- routing ----

  void set_parent(int node, int parent) {
    auto& nd = nodes_[node];
    if (parent == nd.parent) return;
    trace_.switches.push_back({now_, node, nd.parent, parent});
    trace_.counters[node].switches++;
    nd.parent = parent;
    if (cfg_.metric.tag == MetricTag::Backpressure) inject_control(node);
  }

  /// Each parent switch under back-pressure advertises new queue state via
  /// one broadcast control frame that contends for the channel.
  void inject_control(int node) {
    const std::uint64_t pkt = new_packet(node);
    control_ids_.insert(pkt);
    enqueue(node, pkt, true);
  }

  void backpressure_choose(int node) {
    auto& nd = nodes_[node];
    const auto& cand = dodag_.parent_sets[node];
    std::vector<double> queues(n_, 0.0);
    for (int j = 0; j < n_; ++j)
      queues[j] = double(nodes_[j].queue.size()) + (nodes_[j].serving ? 1 : 0);
    std::vector<double> etx_row(n_, 0.0);
    for (int j : cand) etx_row[j] = nd.etx_est[j];
    set_parent(node, select_parent_backpressure(node, cand, queues, etx_row,
                                                cfg_.metric.bp_weight));
  }

  void on_reselect() {
    // rank order root-down so downstream values reflect this round
    std::vector<int> order(n_);
    for (int i = 0; i < n_; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return dodag_.rank[a] < dodag_.rank[b]; });

    std::vector<double> downstream_r(n_, 1.0);
    std::vector<double> downstream_etx(n_, 0.0);
    std::vector<double> lambda(n_), q_rate(n_);
    for (int i = 0; i < n_; ++i) {
      lambda[i] = nodes_[i].lambda;
      q_rate[i] = double(nodes_[i].offered_since_reselect) / cfg_.reselect_period_s;
      nodes_[i].offered_since_reselect = 0;
    }

    for (int i : order) {
      if (i == root_) continue;
      auto& nd = nodes_[i];
      const auto& cand = dodag_.parent_sets[i];
      std::vector<double> link_r_row(n_, 0.0), etx_row(n_, 0.0);
      for (int j : cand) {
        link_r_row[j] =
            link_reliability(nd.alpha_est, p_bad_[i * n_ + j], cfg_.mac,
                             cfg_.timing);
        etx_row[j] = nd.etx_est[j];
      }
      int choice = nd.parent;
      switch (cfg_.metric.tag) {
        case MetricTag::RMetric:
          choice = select_parent_r_metric(cand, link_r_row, downstream_r);
          break;
        case MetricTag::QMetric: {
          // sequential best response: withdraw this node's share from its
          // current parent's advertised load before comparing, then book
          // it onto the choice so siblings see the updated loads
          const double mine = q_rate[i];
          if (nd.parent >= 0)
            q_rate[nd.parent] =
                std::max(lambda[nd.parent], q_rate[nd.parent] - mine);
          auto c = select_parent_q_metric(cand, q_rate, lambda,
                                          cfg_.profile.tx_w, cfg_.profile.rx_w,
                                          link_r_row, downstream_r,
                                          cfg_.metric.r_min);
          choice = c ? *c : select_parent_r_metric(cand, link_r_row, downstream_r);
          q_rate[choice] += mine;
          break;
        }
        case MetricTag::Etx: {
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
        case MetricTag::Backpressure: break;  // per packet, not periodic
      }
      set_parent(i, choice);
      downstream_r[i] = link_r_row[choice] * downstream_r[choice];
      downstream_etx[i] = etx_row[choice] + downstream_etx[choice];
    }
    schedule(now_ + cfg_.reselect_period_s, EventType::Reselect, -1, 0);
  }

  // ---- reporting ----

  void finalize() {
    report_.generated.assign(n_, 0);
    report_.delivered.assign(n_, 0);
    report_.reliability.assign(n_, 0);
    report_.mean_delay_s.assign(n_, 0);
    report_.power_w.assign(n_, 0);
    report_.offered_pps.assign(n_, 0);
    report_.alpha_measured.assign(n_, 0);
    report_.final_parent.assign(n_, -1);
    report_.switches.assign(n_, 0);

    std::vector<double> delay_sum(n_, 0.0);
    std::vector<std::uint64_t> gen(n_, 0), del(n_, 0);
    for (std::size_t id = 0; id < trace_.packets.size(); ++id) {
      const auto& p = trace_.packets[id];
      if (control_ids_.count(id)) continue;
      gen[p.source]++;
      if (p.delivered) {
        del[p.source]++;
        delay_sum[p.source] += p.delivery_s - p.birth_s;
      }
    }
    double rel_sum = 0, delay_avg_sum = 0;
    int rel_cnt = 0, delay_cnt = 0;
    for (int i = 0; i < n_; ++i) {
      const auto& c = trace_.counters[i];
      report_.generated[i] = gen[i];
      report_.delivered[i] = del[i];
      report_.reliability[i] = gen[i] ? double(del[i]) / double(gen[i]) : 1.0;
      report_.mean_delay_s[i] = del[i] ? delay_sum[i] / double(del[i]) : 0.0;
      report_.offered_pps[i] = double(nodes_[i].offered) / cfg_.duration_s;
      const std::uint64_t ccas = c.cca_busy + c.cca_idle;
      report_.alpha_measured[i] = ccas ? double(c.cca_busy) / double(ccas) : 0.0;
      report_.final_parent[i] = nodes_[i].parent;
      report_.switches[i] = c.switches;
      report_.total_switches += c.switches;

      const double busy = c.time_backoff_s + c.time_cca_s + c.time_tx_s +
                          c.time_ackwait_s + c.time_rx_s;
      const double idle = std::max(0.0, cfg_.duration_s - busy);
      report_.power_w[i] =
          (c.time_backoff_s * cfg_.profile.backoff_w +
           c.time_cca_s * cfg_.profile.cca_w + c.time_tx_s * cfg_.profile.tx_w +
           (c.time_ackwait_s + c.time_rx_s) * cfg_.profile.rx_w +
           idle * cfg_.profile.idle_w) /
          cfg_.duration_s;
      if (i != root_)  // battery nodes only; the sink is mains powered
        report_.max_power_w = std::max(report_.max_power_w, report_.power_w[i]);

      if (i != root_ && nodes_[i].lambda > 0 && gen[i] > 0) {
        rel_sum += report_.reliability[i];
        report_.min_reliability =
            std::min(report_.min_reliability, report_.reliability[i]);
        rel_cnt++;
        if (del[i]) {
          delay_avg_sum += report_.mean_delay_s[i];
          report_.max_delay_s =
              std::max(report_.max_delay_s, report_.mean_delay_s[i]);
          delay_cnt++;
        }
      }
    }
    report_.avg_reliability = rel_cnt ? rel_sum / rel_cnt : 1.0;
    report_.avg_delay_s = delay_cnt ? delay_avg_sum / delay_cnt : 0.0;
  }

  static constexpr std::uint64_t kControlBit = 1ULL << 63;

  Topology topo_;
  Dodag dodag_;
  SimConfig cfg_;
  int n_;
  int root_ = 0;
  std::vector<double> p_bad_;
  std::vector<char> audible_;
  std::vector<NodeState> nodes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::vector<ActiveTx> active_;
  std::set<std::size_t> control_ids_;
  std::uint64_t seq_ = 0;
  std::uint64_t next_tx_id_ = 1;
  double now_ = 0;
  SimTrace trace_;
  SimReport report_;
};

inline std::pair<SimTrace, SimReport> run_simulation(const Topology& topo,
                                                     const Dodag& dodag,
                                                     const SimConfig& cfg) {
  Simulator sim(topo, dodag, cfg);
  sim.run();
  return {sim.trace(), sim.report()};
}

/// Report CSV: flow-solver column contract plus a switches column.
inline void write_report_csv(std::ostream& out, const Topology& topo,
                             const SimReport& r) {
  out << "node,q_pps,alpha,e2e_reliability,e2e_delay_s,power_w,parent,switches\n";
  for (int i = 0; i < topo.size(); ++i) {
    const int p = r.final_parent[i];
    out << topo.nodes[i].id << ',' << r.offered_pps[i] << ','
        << r.alpha_measured[i] << ',' << r.reliability[i] << ','
        << r.mean_delay_s[i] << ',' << r.power_w[i] << ','
        << (p >= 0 ? topo.nodes[p].id : "-") << ',' << r.switches[i] << '\n';
  }
}

/// JSON-lines trace dump: one record per packet, then per switch event.
inline void write_trace_jsonl(std::ostream& out, const Topology& topo,
                              const SimTrace& t) {
  auto id_of = [&](int i) { return i >= 0 ? topo.nodes[i].id : std::string("-"); };
  for (const auto& p : t.packets) {
    nlohmann::json j{{"type", "packet"},
                     {"source", id_of(p.source)},
                     {"birth_s", p.birth_s},
                     {"delivered", p.delivered},
                     {"hops", p.hops}};
    if (p.delivered) j["delivery_s"] = p.delivery_s;
    if (p.drop) {
      const char* cause = *p.drop == DropCause::AccessFailure ? "access-failure"
                          : *p.drop == DropCause::RetryLimit ? "retry-limit"
                                                             : "queue-overflow";
      j["drop_cause"] = cause;
      j["drop_node"] = id_of(p.drop_node);
      j["drop_s"] = p.drop_s;
    }
    out << j << '\n';
  }
  for (const auto& s : t.switches) {
    out << nlohmann::json{{"type", "parent-switch"},
                          {"t_s", s.t_s},
                          {"node", id_of(s.node)},
                          {"old_parent", id_of(s.old_parent)},
                          {"new_parent", id_of(s.new_parent)}}
        << '\n';
  }
}

}  // namespace macroute
