/**
 * Copyright 2026 The FedChain-Sim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedchain {

enum class Errc {
  invalid_topology,
  node_not_found,
  invalid_observation,
  time_travel,
  insufficient_history,
  too_many_pools,
  model_too_small,
  mask_shape_error,
  ring_broken,
  non_finite_loss,
  training_diverged,
  undefined_divergence,
  aggregation_shape_error,
  partition_underflow,
  unsupported_security_parameter,
  empty_challenge,
  insufficient_samples,
  invalid_task,
  round_failed,
  invalid_config,
  io_error,
  value_out_of_range,
  self_send,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_topology: return "invalid-topology";
    case Errc::node_not_found: return "node-not-found";
    case Errc::invalid_observation: return "invalid-observation";
    case Errc::time_travel: return "time-travel";
    case Errc::insufficient_history: return "insufficient-history";
    case Errc::too_many_pools: return "too-many-pools";
    case Errc::model_too_small: return "model-too-small";
    case Errc::mask_shape_error: return "mask-shape-error";
    case Errc::ring_broken: return "ring-broken";
    case Errc::non_finite_loss: return "non-finite-loss";
    case Errc::training_diverged: return "training-diverged";
    case Errc::undefined_divergence: return "undefined-divergence";
    case Errc::aggregation_shape_error: return "aggregation-shape-error";
    case Errc::partition_underflow: return "partition-underflow";
    case Errc::unsupported_security_parameter: return "unsupported-security-parameter";
    case Errc::empty_challenge: return "empty-challenge";
    case Errc::insufficient_samples: return "insufficient-samples";
    case Errc::invalid_task: return "invalid-task";
    case Errc::round_failed: return "round-failed";
    case Errc::invalid_config: return "invalid-config";
    case Errc::io_error: return "io-error";
    case Errc::value_out_of_range: return "value-out-of-range";
    case Errc::self_send: return "self-send";
  }
  return "unknown";
}

// All library failures surface as this exception; code() identifies the
// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fedchain
