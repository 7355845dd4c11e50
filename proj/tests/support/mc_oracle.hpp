#pragma once

#include <cstdint>
#include <random>

#include "macroute/mac_model.hpp"

// Stochastic oracle for the CSMA/CA backoff/retry chain, independent of
// the closed-form expressions it checks: per-CCA Bernoulli(alpha) busy
// outcomes, per-attempt Bernoulli(gamma) loss, hard limits m and n.

namespace macroute_test {

struct ChainTally {
  std::uint64_t trials = 0;
  std::uint64_t delivered = 0;
  std::uint64_t access_failures = 0;
  std::uint64_t retry_exhausted = 0;

  double p_cf() const { return double(access_failures) / double(trials); }
  double p_cr() const { return double(retry_exhausted) / double(trials); }
  double reliability() const { return double(delivered) / double(trials); }
};

inline ChainTally simulate_chain(double alpha, double gamma,
                                 const macroute::MacParams& p,
                                 std::uint64_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution busy(alpha);
  std::bernoulli_distribution lost(gamma);
  ChainTally t;
  t.trials = trials;
  for (std::uint64_t i = 0; i < trials; ++i) {
    bool done = false;
    for (int stage = 0; stage <= p.max_retries && !done; ++stage) {
      // channel access: up to m+1 CCAs
      bool access = false;
      for (int b = 0; b <= p.max_backoffs; ++b) {
        if (!busy(rng)) {
          access = true;
          break;
        }
      }
      if (!access) {
        ++t.access_failures;
        done = true;
      } else if (!lost(rng)) {
        ++t.delivered;
        done = true;
      } else if (stage == p.max_retries) {
        ++t.retry_exhausted;
        done = true;
      }
    }
  }
  return t;
}

/// 3-sigma binomial half width at probability p over n trials.
inline double binomial_3sigma(double p, std::uint64_t n) {
  return 3.0 * std::sqrt(std::max(p * (1.0 - p), 1e-12) / double(n));
}

}  // namespace macroute_test
