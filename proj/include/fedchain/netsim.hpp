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

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedchain/error.hpp"
#include "fedchain/random.hpp"

// Deterministic discrete-event network: N nodes, directed link latencies in
// milliseconds, a single event queue ordered by (deliver_time, seq).
namespace fedchain::netsim {

using Millis = double;

struct NodeId {
  std::uint32_t value = 0;

  constexpr NodeId() = default;
  constexpr explicit NodeId(std::size_t v) : value(static_cast<std::uint32_t>(v)) {}
  constexpr std::size_t index() const { return value; }
  friend constexpr auto operator<=>(NodeId, NodeId) = default;
  friend std::ostream& operator<<(std::ostream& os, NodeId id) { return os << id.value; }
};

class LatencyMatrix {
 public:
  LatencyMatrix() = default;
  explicit LatencyMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  std::size_t size() const { return n_; }

  Millis at(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  Millis at(NodeId i, NodeId j) const { return at(i.index(), j.index()); }

  void set(std::size_t i, std::size_t j, Millis v) { data_[i * n_ + j] = v; }

  bool contains(NodeId id) const { return id.index() < n_; }

  // Zero diagonal and strictly positive off-diagonal entries.
  bool well_formed() const {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        const Millis v = at(i, j);
        if (i == j ? v != 0.0 : !(v > 0.0)) return false;
      }
    }
    return true;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Millis> data_;
};

struct UniformTopology {
  Millis lo = 10.0;
  Millis hi = 100.0;
};

// Node i belongs to cluster i % clusters.
struct ClusteredTopology {
  std::size_t clusters = 5;
  Millis intra_lo = 5.0;
  Millis intra_hi = 15.0;
  Millis inter_lo = 80.0;
  Millis inter_hi = 120.0;
};

using TopologyModel = std::variant<UniformTopology, ClusteredTopology>;

inline std::size_t cluster_of(std::size_t node, const ClusteredTopology& model) {
  return node % model.clusters;
}

inline LatencyMatrix build_topology(std::size_t n_nodes, std::uint64_t seed,
                                    const TopologyModel& model) {
  if (n_nodes < 2) throw Error(Errc::invalid_topology, "need at least two nodes");
  Rng rng(derive_seed(seed, "topology"));
  LatencyMatrix m(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    for (std::size_t j = 0; j < n_nodes; ++j) {
      if (i == j) continue;
      const Millis v = std::visit(
          [&](const auto& t) -> Millis {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, UniformTopology>) {
              return rng.uniform(t.lo, t.hi);
            } else {
              const bool same = cluster_of(i, t) == cluster_of(j, t);
              return same ? rng.uniform(t.intra_lo, t.intra_hi)
                          : rng.uniform(t.inter_lo, t.inter_hi);
            }
          },
          model);
      m.set(i, j, v);
    }
  }
  return m;
}

// Per ordered pair, the append-only series of observed latencies.
class LatencyHistory {
 public:
  LatencyHistory() = default;
  explicit LatencyHistory(std::size_t n) : n_(n), series_(n * n) {}

  std::size_t size() const { return n_; }

  LatencyHistory& record(NodeId i, NodeId j, Millis observed) {
    if (i.index() >= n_ || j.index() >= n_) {
      throw Error(Errc::node_not_found, "latency observation for unknown node");
    }
    if (i == j) throw Error(Errc::invalid_observation, "self-loop latency");
    if (!(observed > 0.0)) throw Error(Errc::invalid_observation, "latency must be positive");
    series_[i.index() * n_ + j.index()].push_back(observed);
    return *this;
  }

  const std::vector<Millis>& series(NodeId i, NodeId j) const {
    return series_[i.index() * n_ + j.index()];
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::vector<Millis>> series_;
};

inline LatencyHistory record_latency(LatencyHistory history, NodeId i, NodeId j, Millis observed) {
  history.record(i, j, observed);
  return history;
}

// Payloads may expose `std::string_view event_kind(const P&)` via ADL to name
// themselves in traces.
template <typename P>
std::string_view kind_of(const P& payload) {
  if constexpr (requires { event_kind(payload); }) {
    return event_kind(payload);
  } else {
    return "msg";
  }
}

template <typename Payload>
struct Event {
  Millis send_time = 0.0;
  Millis deliver_time = 0.0;
  NodeId src;
  NodeId dst;
  Payload payload;
  std::uint64_t size_units = 1;
  std::uint64_t seq = 0;
};

// What send/schedule_at hand back: the event minus its payload.
struct Receipt {
  Millis send_time = 0.0;
  Millis deliver_time = 0.0;
  NodeId src;
  NodeId dst;
  std::uint64_t size_units = 1;
  std::uint64_t seq = 0;
};

struct TraceRecord {
  Millis time = 0.0;
  NodeId src;
  NodeId dst;
  std::string kind;
  std::uint64_t size_units = 1;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Line format: time,src,dst,kind,size_units
inline void write_trace(std::ostream& os, const std::vector<TraceRecord>& trace) {
  os.precision(17);
  for (const auto& r : trace) {
    os << r.time << ',' << r.src << ',' << r.dst << ',' << r.kind << ',' << r.size_units << '\n';
  }
}

template <typename Payload>
class Simulator {
 public:
  using EventType = Event<Payload>;
  using Handler = std::function<void(const EventType&)>;

  explicit Simulator(LatencyMatrix latency) : latency_(std::move(latency)) {}

  Millis now() const { return now_; }
  const LatencyMatrix& latency() const { return latency_; }
  std::size_t node_count() const { return latency_.size(); }

  void enable_trace(bool on = true) { tracing_ = on; }
  const std::vector<TraceRecord>& trace() const { return trace_; }

  std::uint64_t sent() const { return next_seq_; }  // messages and timers
  std::uint64_t messages() const { return messages_; }
  std::uint64_t delivered() const { return delivered_; }
  std::size_t pending() const { return heap_.size(); }

  // deliver_time = now + latency[src][dst] * size_units.
  Receipt send(NodeId src, NodeId dst, Payload payload, std::uint64_t size_units = 1) {
    check_node(src);
    check_node(dst);
    if (src == dst) throw Error(Errc::self_send, "send to self; use schedule_at");
    const Millis at = now_ + latency_.at(src, dst) * static_cast<Millis>(size_units);
    ++messages_;
    return push(EventType{now_, at, src, dst, std::move(payload), size_units, 0});
  }

  // Local timer on one node (compute completion and the like).
  Receipt schedule_at(NodeId node, Millis at, Payload payload) {
    check_node(node);
    if (at < now_) throw Error(Errc::time_travel, "event scheduled before the current clock");
    return push(EventType{now_, at, node, node, std::move(payload), 0, 0});
  }

  // Halts run_until_idle after the current handler returns; pending events
  // are dropped.
  void stop() { stopped_ = true; }

  Millis run_until_idle(const Handler& handler) {
    stopped_ = false;
    while (!heap_.empty() && !stopped_) {
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      EventType ev = std::move(heap_.back());
      heap_.pop_back();
      now_ = ev.deliver_time;
      ++delivered_;
      if (tracing_) {
        trace_.push_back({ev.deliver_time, ev.src, ev.dst, std::string(kind_of(ev.payload)),
                          ev.size_units});
      }
      handler(ev);
    }
    if (stopped_) heap_.clear();
    return now_;
  }

 private:
  struct Later {
    bool operator()(const EventType& a, const EventType& b) const {
      if (a.deliver_time != b.deliver_time) return a.deliver_time > b.deliver_time;
      return a.seq > b.seq;
    }
  };

  void check_node(NodeId id) const {
    if (!latency_.contains(id)) throw Error(Errc::node_not_found, "unknown node id");
  }

  Receipt push(EventType ev) {
    ev.seq = next_seq_++;
    Receipt r{ev.send_time, ev.deliver_time, ev.src, ev.dst, ev.size_units, ev.seq};
    heap_.push_back(std::move(ev));
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    return r;
  }

  LatencyMatrix latency_;
  std::vector<EventType> heap_;
  Millis now_ = 0.0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t messages_ = 0;
  bool stopped_ = false;
  bool tracing_ = false;
  std::vector<TraceRecord> trace_;
};

}  // namespace fedchain::netsim
