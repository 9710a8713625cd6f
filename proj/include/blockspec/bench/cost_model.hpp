// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "blockspec/core/error.hpp"

namespace blockspec {

/// Per-cycle cost model of speculative decoding. Times are in seconds (any
/// consistent unit works).
struct CostModel {
  double t_draft = 0;     // drafting time per cycle (fusion included)
  double t_verify = 0;    // verification time per cycle
  double tau = 1;         // mean tokens emitted per cycle
  double gamma = 1;       // drafted tokens per cycle
  double t_step = 0;      // one autoregressive target step
  double t_parallel = 0;  // one drafter block forward
  double l_target = 0;    // baseline seconds per token

  void validate() const {
    BLOCKSPEC_CHECK(std::isfinite(tau) && tau > 0, NumericError, "cost model: tau must be > 0");
    BLOCKSPEC_CHECK(tau <= gamma + 1 + 1e-12, ContractError,
                    "cost model: tau " + std::to_string(tau) + " exceeds gamma + 1");
    BLOCKSPEC_CHECK(t_draft >= 0 && t_verify > 0, ContractError, "cost model: cycle times must be positive");
  }
};

/// (T_draft + T_verify) / tau.
inline double latency_per_token(const CostModel& cm) {
  cm.validate();
  return (cm.t_draft + cm.t_verify) / cm.tau;
}

/// L_target / latency_per_token.
inline double speedup(const CostModel& cm) {
  BLOCKSPEC_CHECK(cm.l_target > 0, ContractError, "cost model: l_target must be > 0");
  return cm.l_target / latency_per_token(cm);
}

/// Sequential drafting: gamma drafter steps.
inline double ar_draft_cost(double gamma, double t_step) {
  BLOCKSPEC_CHECK(gamma >= 1, ContractError, "ar_draft_cost: gamma must be >= 1");
  return gamma * t_step;
}

/// Block drafting: one parallel forward regardless of gamma.
inline double diff_draft_cost(double t_parallel) { return t_parallel; }

}  // namespace blockspec
