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
#include <concepts>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "fedchain/error.hpp"
#include "fedchain/netsim.hpp"
#include "fedchain/random.hpp"

// Mining-pool aggregation: latency estimation from history, head
// announcement, and latency-guided greedy pool membership.
namespace fedchain::pools {

using netsim::LatencyHistory;
using netsim::LatencyMatrix;
using netsim::Millis;
using netsim::NodeId;

// l'_{i,j}: mean observed latency per ordered pair, zero diagonal.
using EstimatedLatency = LatencyMatrix;

inline EstimatedLatency estimate_latency(const LatencyHistory& history) {
  const std::size_t n = history.size();
  EstimatedLatency est(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& s = history.series(NodeId(i), NodeId(j));
      if (s.empty()) throw Error(Errc::insufficient_history, "pair without observations");
      Millis sum = 0.0;
      for (Millis v : s) sum += v;
      est.set(i, j, sum / static_cast<Millis>(s.size()));
    }
  }
  return est;
}

// One observation per ordered pair: the true latency with multiplicative
// ping noise U(0.9, 1.1).
inline void observe_round(LatencyHistory& history, const LatencyMatrix& truth, Rng& rng) {
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (i != j) history.record(NodeId(i), NodeId(j), truth.at(i, j) * rng.uniform(0.9, 1.1));
    }
  }
}

// First-round history when no traffic has been observed yet.
inline LatencyHistory bootstrap_history(const LatencyMatrix& truth, std::uint64_t seed) {
  LatencyHistory h(truth.size());
  Rng rng(derive_seed(seed, "bootstrap-ping"));
  observe_round(h, truth, rng);
  return h;
}

struct HeadSet {
  std::vector<NodeId> heads;  // ascending node id
};

enum class HeadPolicy { random, spread };

namespace detail {

inline Millis pair_distance(const EstimatedLatency& l, std::size_t a, std::size_t b) {
  return std::min(l.at(a, b), l.at(b, a));
}

}  // namespace detail

inline HeadSet announce_heads(std::size_t n_nodes, std::size_t pool_count, HeadPolicy policy,
                              const EstimatedLatency& l_hat, std::uint64_t seed) {
  if (pool_count == 0) throw Error(Errc::invalid_config, "pool count must be at least 1");
  if (pool_count > n_nodes) throw Error(Errc::too_many_pools, "more pools than nodes");

  std::vector<std::size_t> chosen;
  if (pool_count == n_nodes) {
    chosen.resize(n_nodes);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  } else if (policy == HeadPolicy::random) {
    Rng rng(derive_seed(seed, "heads"));
    auto perm = rng.permutation(n_nodes);
    chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(pool_count));
  } else if (pool_count == 1) {
    // Minimum eccentricity.
    std::size_t best = 0;
    Millis best_ecc = std::numeric_limits<Millis>::infinity();
    for (std::size_t i = 0; i < n_nodes; ++i) {
      Millis ecc = 0.0;
      for (std::size_t j = 0; j < n_nodes; ++j) ecc = std::max(ecc, l_hat.at(i, j));
      if (ecc < best_ecc) best_ecc = ecc, best = i;
    }
    chosen.push_back(best);
  } else {
    // Farthest pair, then farthest-point insertion on min distance to the set.
    std::size_t a = 0, b = 1;
    Millis far = -1.0;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      for (std::size_t j = i + 1; j < n_nodes; ++j) {
        const Millis d = detail::pair_distance(l_hat, i, j);
        if (d > far) far = d, a = i, b = j;
      }
    }
    chosen = {a, b};
    std::vector<Millis> to_set(n_nodes, std::numeric_limits<Millis>::infinity());
    for (std::size_t i = 0; i < n_nodes; ++i) {
      to_set[i] = std::min(detail::pair_distance(l_hat, i, a), detail::pair_distance(l_hat, i, b));
    }
    to_set[a] = to_set[b] = -1.0;
    while (chosen.size() < pool_count) {
      const auto next = static_cast<std::size_t>(
          std::max_element(to_set.begin(), to_set.end()) - to_set.begin());
      chosen.push_back(next);
      for (std::size_t i = 0; i < n_nodes; ++i) {
        if (to_set[i] >= 0.0) {
          to_set[i] = std::min(to_set[i], detail::pair_distance(l_hat, i, next));
        }
      }
      to_set[next] = -1.0;
    }
  }

  std::sort(chosen.begin(), chosen.end());
  HeadSet hs;
  for (auto c : chosen) hs.heads.emplace_back(c);
  return hs;
}

// max(t_p, max over members m of l'_{n,m}).
inline Millis pool_cost(NodeId n, std::span<const NodeId> members, Millis t_p,
                        const EstimatedLatency& l_hat) {
  Millis worst = 0.0;
  for (NodeId m : members) worst = std::max(worst, l_hat.at(n, m));
  return std::max(t_p, worst);
}

struct Pool {
  NodeId head;
  std::vector<NodeId> members;  // head first, then in join order
};

// One greedy decision, kept so callers can audit local optimality.
struct JoinRecord {
  NodeId node;
  std::size_t chosen = 0;
  std::vector<Millis> costs;  // per pool, against membership at that moment
};

struct PoolAssignment {
  std::vector<Pool> pools;
  std::vector<std::size_t> pool_of;  // indexed by node
  std::vector<JoinRecord> joins;

  std::size_t pool_count() const { return pools.size(); }
};

// t_p_of(prospective members) -> estimated pool time. Non-heads join in a
// seeded random order; each picks argmin pool_cost, ties to the lower head id.
template <typename PoolTimeFn>
  requires std::invocable<PoolTimeFn&, const std::vector<NodeId>&>
PoolAssignment assign_pools(std::size_t n_nodes, const HeadSet& heads,
                            const EstimatedLatency& l_hat, PoolTimeFn&& t_p_of,
                            std::uint64_t order_seed) {
  if (heads.heads.empty()) throw Error(Errc::invalid_config, "empty head set");
  PoolAssignment out;
  constexpr auto unassigned = std::numeric_limits<std::size_t>::max();
  out.pool_of.assign(n_nodes, unassigned);
  for (std::size_t p = 0; p < heads.heads.size(); ++p) {
    const NodeId h = heads.heads[p];
    if (h.index() >= n_nodes) throw Error(Errc::node_not_found, "head outside node set");
    if (out.pool_of[h.index()] != unassigned) throw Error(Errc::invalid_config, "duplicate head");
    out.pools.push_back(Pool{h, {h}});
    out.pool_of[h.index()] = p;
  }

  Rng rng(derive_seed(order_seed, "join-order"));
  for (std::size_t idx : rng.permutation(n_nodes)) {
    if (out.pool_of[idx] != unassigned) continue;
    const NodeId n(idx);
    JoinRecord rec{n, 0, {}};
    Millis best = std::numeric_limits<Millis>::infinity();
    for (std::size_t p = 0; p < out.pools.size(); ++p) {
      std::vector<NodeId> prospective = out.pools[p].members;
      prospective.push_back(n);
      const Millis cost = pool_cost(n, out.pools[p].members, t_p_of(prospective), l_hat);
      rec.costs.push_back(cost);
      if (cost < best) best = cost, rec.chosen = p;  // heads ascend, so first wins ties
    }
    out.pools[rec.chosen].members.push_back(n);
    out.pool_of[idx] = rec.chosen;
    out.joins.push_back(std::move(rec));
  }
  return out;
}

// Fixed per-pool time estimates.
inline PoolAssignment assign_pools(std::size_t n_nodes, const HeadSet& heads,
                                   const EstimatedLatency& l_hat, std::span<const Millis> t_p,
                                   std::uint64_t order_seed) {
  if (t_p.size() != heads.heads.size()) {
    throw Error(Errc::invalid_config, "one time estimate per pool required");
  }
  // Prospective membership always contains the head, which identifies the pool.
  std::vector<std::size_t> pool_by_head(n_nodes, 0);
  for (std::size_t p = 0; p < heads.heads.size(); ++p) {
    if (heads.heads[p].index() >= n_nodes) throw Error(Errc::node_not_found, "head outside node set");
    pool_by_head[heads.heads[p].index()] = p;
  }
  return assign_pools(
      n_nodes, heads, l_hat,
      [&](const std::vector<NodeId>& members) { return t_p[pool_by_head[members.front().index()]]; },
      order_seed);
}

// t_p = rounds_hint * (max compute + 2(|p|-1) * mean intra-pool l' * size_units).
inline Millis pool_time_estimate(std::span<const NodeId> members, std::span<const Millis> compute,
                                 const EstimatedLatency& l_hat, std::uint64_t size_units,
                                 std::size_t rounds_hint) {
  if (members.empty()) throw Error(Errc::invalid_config, "empty pool");
  Millis max_compute = 0.0;
  for (NodeId m : members) max_compute = std::max(max_compute, compute[m.index()]);
  Millis comm = 0.0;
  if (members.size() > 1) {
    Millis sum = 0.0;
    std::size_t pairs = 0;
    for (NodeId a : members) {
      for (NodeId b : members) {
        if (a == b) continue;
        sum += l_hat.at(a, b);
        ++pairs;
      }
    }
    comm = 2.0 * static_cast<Millis>(members.size() - 1) * (sum / static_cast<Millis>(pairs)) *
           static_cast<Millis>(size_units);
  }
  return static_cast<Millis>(rounds_hint) * (max_compute + comm);
}

inline void write_assignment_csv(std::ostream& os, const PoolAssignment& a) {
  os << "node_id,pool_id,is_head\n";
  for (std::size_t n = 0; n < a.pool_of.size(); ++n) {
    const std::size_t p = a.pool_of[n];
    os << n << ',' << p << ',' << (a.pools[p].head.index() == n ? 1 : 0) << '\n';
  }
}

}  // namespace fedchain::pools
