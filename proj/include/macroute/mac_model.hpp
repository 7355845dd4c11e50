#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

// Closed-form per-link performance of the unslotted CSMA/CA MAC:
// per-attempt loss, drop probabilities, link reliability, expected
// service delay, and node power from a state-occupancy model.

namespace macroute {

/// CSMA/CA knobs: initial/maximum backoff exponent, backoff and retry limits.
struct MacParams {
  int min_be = 3;        // initial backoff exponent m0
  int max_be = 5;        // maximum backoff exponent mb
  int max_backoffs = 4;  // maximum number of backoffs m (m+1 CCA attempts)
  int max_retries = 3;   // maximum number of retransmissions n

  void validate() const {
    if (min_be < 0 || max_be > 8 || min_be > max_be)
      throw std::domain_error("MacParams: require 0 <= min_be <= max_be <= 8");
    if (max_backoffs < 0 || max_backoffs > 7)
      throw std::domain_error("MacParams: require 0 <= max_backoffs <= 7");
    if (max_retries < 0 || max_retries > 7)
      throw std::domain_error("MacParams: require 0 <= max_retries <= 7");
  }
};

/// MAC timing constants. All durations except the slot itself are in
/// unit backoff periods (slots). tx_slots is the packet airtime T_s;
/// the default 14 corresponds to a 133-byte frame at 250 kb/s over
/// 320 us unit backoff periods.
struct Timing {
  double slot_s = 320e-6;
  double cca_slots = 1.0;
  double tx_slots = 14.0;
  double ack_slots = 2.0;  // ACK wait + ACK airtime

  void validate() const {
    if (slot_s <= 0 || cca_slots <= 0 || ack_slots <= 0)
      throw std::domain_error("Timing: durations must be positive");
    if (tx_slots < 1.0)
      throw std::domain_error("Timing: tx_slots must be >= 1");
  }
};

/// Radio power per MAC state, in watts. Defaults are CC2420-class
/// catalog values.
struct PowerProfile {
  double tx_w = 57e-3;
  double rx_w = 63e-3;       // receive / ACK-wait listening
  double cca_w = 63e-3;      // carrier sense
  double backoff_w = 1.5e-3; // radio off during backoff
  double idle_w = 1.5e-3;    // idle queue

  void validate() const {
    if (tx_w < 0 || rx_w < 0 || cca_w < 0 || backoff_w < 0 || idle_w < 0)
      throw std::domain_error("PowerProfile: powers must be non-negative");
  }
};

/// Converged per-link state.
struct LinkState {
  double alpha = 0.0;       // busy-channel probability at the transmitter
  double p_bad = 0.0;       // bad-channel probability of the link
  double p_coll = 0.0;      // collision probability
  double gamma = 0.0;       // per-attempt loss given idle CCA
  double reliability = 1.0; // 1 - p_cf - p_cr
  double delay_s = 0.0;     // expected service delay, seconds
};

/// Thrown by node_power when the offered load exceeds the node's capacity.
class saturation_error : public std::runtime_error {
 public:
  explicit saturation_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::domain_error(std::string(name) + " must be in [0,1]");
}

/// Mean backoff duration in slots at backoff stage j: window [0, 2^BE - 1]
/// with BE = min(min_be + j, max_be).
inline double mean_backoff_slots(const MacParams& p, int stage) {
  const int be = std::min(p.min_be + stage, p.max_be);
  return (std::pow(2.0, be) - 1.0) / 2.0;
}

/// Probability that one transmission attempt fails to obtain clear
/// channel within m+1 backoffs: alpha^(m+1).
inline double access_fail_per_attempt(double alpha, const MacParams& p) {
  return std::pow(alpha, p.max_backoffs + 1);
}

/// Probability of advancing from one retransmission stage to the next:
/// x = gamma * (1 - alpha^(m+1)).
inline double stage_advance(double alpha, double gamma, const MacParams& p) {
  return gamma * (1.0 - access_fail_per_attempt(alpha, p));
}

/// Sum_{k=0}^{n} x^k with 0^0 := 1.
inline double stage_sum(double x, int n) {
  double sum = 0.0, pw = 1.0;
  for (int k = 0; k <= n; ++k) {
    sum += pw;
    pw *= x;
  }
  return sum;
}

/// Expected backoff slots spent per transmission attempt, truncated
/// at the backoff limit: stage j is reached with probability alpha^j.
inline double expected_backoff_slots(double alpha, const MacParams& p) {
  double slots = 0.0, pw = 1.0;
  for (int j = 0; j <= p.max_backoffs; ++j) {
    slots += pw * mean_backoff_slots(p, j);
    pw *= alpha;
  }
  return slots;
}

/// Expected number of CCAs per transmission attempt: Sum_{j=0}^{m} alpha^j.
inline double expected_cca_count(double alpha, const MacParams& p) {
  return stage_sum(alpha, p.max_backoffs);
}

}  // namespace detail

/// p_coll = alpha / T_s, clamped to 1: the probability that at least one
/// other contender passes its CCA in the same time unit.
inline double collision_probability(double alpha, const Timing& timing) {
  detail::check_probability(alpha, "alpha");
  timing.validate();
  return std::min(1.0, alpha / timing.tx_slots);
}

/// Per-attempt loss given idle CCA: gamma = p_coll + (1 - p_coll) * p_bad.
inline double attempt_loss(double p_coll, double p_bad) {
  detail::check_probability(p_coll, "p_coll");
  detail::check_probability(p_bad, "p_bad");
  return p_coll + (1.0 - p_coll) * p_bad;
}

/// Probability that a packet is discarded due to channel access failure:
/// alpha^(m+1) * Sum_{k=0}^{n} (gamma * (1 - alpha^(m+1)))^k.
inline double access_failure_probability(double alpha, double gamma,
                                         const MacParams& params) {
  detail::check_probability(alpha, "alpha");
  detail::check_probability(gamma, "gamma");
  params.validate();
  const double x = detail::stage_advance(alpha, gamma, params);
  return detail::access_fail_per_attempt(alpha, params) *
         detail::stage_sum(x, params.max_retries);
}

/// Probability that a packet is discarded at the retransmissions limit:
/// (gamma * (1 - alpha^(m+1)))^(n+1).
inline double retry_exhaustion_probability(double alpha, double gamma,
                                           const MacParams& params) {
  detail::check_probability(alpha, "alpha");
  detail::check_probability(gamma, "gamma");
  params.validate();
  const double x = detail::stage_advance(alpha, gamma, params);
  return std::pow(x, params.max_retries + 1);
}

/// Link reliability R = 1 - p_cf - p_cr.
inline double link_reliability(double alpha, double p_bad,
                               const MacParams& params, const Timing& timing) {
  const double gamma = attempt_loss(collision_probability(alpha, timing), p_bad);
  const double r = 1.0 - access_failure_probability(alpha, gamma, params) -
                   retry_exhaustion_probability(alpha, gamma, params);
  return std::clamp(r, 0.0, 1.0);
}

/// Expected head-of-queue to ACK service time in seconds, conditioned on
/// success. Per transmission attempt: truncated-geometric backoff and CCA
/// expansion plus one CCA + packet + ACK; retransmission stage k carries
/// weight (gamma * (1 - alpha^(m+1)))^k, normalized over the n+1 stages.
inline double expected_service_delay(double alpha, double gamma,
                                     const MacParams& params,
                                     const Timing& timing) {
  detail::check_probability(alpha, "alpha");
  detail::check_probability(gamma, "gamma");
  params.validate();
  timing.validate();

  const double attempt_slots =
      detail::expected_backoff_slots(alpha, params) +
      detail::expected_cca_count(alpha, params) * timing.cca_slots +
      timing.tx_slots + timing.ack_slots;

  const double x = detail::stage_advance(alpha, gamma, params);
  double wsum = 0.0, asum = 0.0, pw = 1.0;
  for (int k = 0; k <= params.max_retries; ++k) {
    wsum += pw;
    asum += pw * (k + 1);
    pw *= x;
  }
  const double mean_attempts = asum / wsum;
  return mean_attempts * attempt_slots * timing.slot_s;
}

/// Average node power from a linear state-occupancy model. Per packet
/// offered to the MAC, every reached retransmission stage pays its
/// backoff and CCA time; packet and ACK time is paid only when channel
/// access succeeds within the stage. Receptions cost tx + ack airtime of
/// listening. The residual time fraction idles at idle_w.
inline double node_power(double tx_rate_pps, double rx_rate_pps, double alpha,
                         double gamma, const MacParams& params,
                         const Timing& timing, const PowerProfile& profile) {
  if (tx_rate_pps < 0 || rx_rate_pps < 0)
    throw std::domain_error("node_power: rates must be non-negative");
  detail::check_probability(alpha, "alpha");
  detail::check_probability(gamma, "gamma");
  params.validate();
  timing.validate();
  profile.validate();

  const double x = detail::stage_advance(alpha, gamma, params);
  const double stages = detail::stage_sum(x, params.max_retries);
  const double access_ok = 1.0 - detail::access_fail_per_attempt(alpha, params);

  // Seconds per offered packet in each state.
  const double backoff_s =
      stages * detail::expected_backoff_slots(alpha, params) * timing.slot_s;
  const double cca_s = stages * detail::expected_cca_count(alpha, params) *
                       timing.cca_slots * timing.slot_s;
  const double tx_s = stages * access_ok * timing.tx_slots * timing.slot_s;
  const double ack_s = stages * access_ok * timing.ack_slots * timing.slot_s;
  const double rx_s = (timing.tx_slots + timing.ack_slots) * timing.slot_s;

  const double f_backoff = tx_rate_pps * backoff_s;
  const double f_cca = tx_rate_pps * cca_s;
  const double f_tx = tx_rate_pps * tx_s;
  const double f_ackwait = tx_rate_pps * ack_s;
  const double f_rx = rx_rate_pps * rx_s;
  const double busy = f_backoff + f_cca + f_tx + f_ackwait + f_rx;
  if (busy > 1.0)
    throw saturation_error("node_power: offered load infeasible, busy fraction " +
                           std::to_string(busy));

  return f_backoff * profile.backoff_w + f_cca * profile.cca_w +
         f_tx * profile.tx_w + (f_ackwait + f_rx) * profile.rx_w +
         (1.0 - busy) * profile.idle_w;
}

/// Sliding-window busy-channel estimate: alpha(t) = r*alpha(t-1) + (1-r)*sample.
inline double update_alpha_estimate(double prev, double sample, double r) {
  detail::check_probability(prev, "prev");
  detail::check_probability(sample, "sample");
  if (!(r > 0.0 && r < 1.0))
    throw std::domain_error("smoothing factor r must be in (0,1)");
  return r * prev + (1.0 - r) * sample;
}

/// Convenience: full per-link state for one (alpha, p_bad) pair.
inline LinkState evaluate_link(double alpha, double p_bad,
                               const MacParams& params, const Timing& timing) {
  LinkState s;
  s.alpha = alpha;
  s.p_bad = p_bad;
  s.p_coll = collision_probability(alpha, timing);
  s.gamma = attempt_loss(s.p_coll, p_bad);
  s.reliability = link_reliability(alpha, p_bad, params, timing);
  s.delay_s = expected_service_delay(alpha, s.gamma, params, timing);
  return s;
}

}  // namespace macroute
