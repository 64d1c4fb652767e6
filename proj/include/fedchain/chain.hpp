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
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fedchain/digest.hpp"
#include "fedchain/error.hpp"
#include "fedchain/fed.hpp"
#include "fedchain/fixed_point.hpp"
#include "fedchain/ledger.hpp"
#include "fedchain/netsim.hpp"
#include "fedchain/pools.hpp"
#include "fedchain/random.hpp"
#include "fedchain/sharedring.hpp"
#include "fedchain/verify.hpp"

// Mining rounds under the simulator: FedChain (pools + masked ring +
// weighted aggregation + verification) and the three baselines.
namespace fedchain::chain {

enum class ConsensusMode { fedchain, fedavg_central, pow, gfl_ring };

inline std::string_view mode_name(ConsensusMode m) {
  switch (m) {
    case ConsensusMode::fedchain: return "fedchain";
    case ConsensusMode::fedavg_central: return "fedavg_central";
    case ConsensusMode::pow: return "pow";
    case ConsensusMode::gfl_ring: return "gfl_ring";
  }
  return "?";
}

inline ConsensusMode parse_mode(std::string_view s) {
  for (auto m : {ConsensusMode::fedchain, ConsensusMode::fedavg_central, ConsensusMode::pow,
                 ConsensusMode::gfl_ring}) {
    if (mode_name(m) == s) return m;
  }
  throw Error(Errc::invalid_config, "unknown consensus mode " + std::string(s));
}

struct NetworkSetup {
  netsim::LatencyMatrix latency;
  std::vector<Millis> compute_ms;  // one local training round, per node
};

inline NetworkSetup make_network(std::size_t n_nodes, std::uint64_t seed,
                                 const netsim::TopologyModel& topology, Millis compute_lo = 50.0,
                                 Millis compute_hi = 200.0) {
  NetworkSetup net{netsim::build_topology(n_nodes, seed, topology), {}};
  Rng rng(derive_seed(seed, "compute"));
  for (std::size_t i = 0; i < n_nodes; ++i) net.compute_ms.push_back(rng.uniform(compute_lo, compute_hi));
  return net;
}

// Publisher-held data: validation split for pool self-evaluation and the
// held-out pool that verification challenges are drawn from.
struct TaskData {
  fed::Dataset validation;
  fed::Dataset challenge_pool;
};

struct EngineConfig {
  fed::TrainConfig train;
  fed::Scheme scheme = fed::Scheme::kl;
  std::size_t max_rounds = 40;
  double model_size_units = 10.0;
  sharedring::RingOptions ring;
  unsigned lambda = 128;
  std::size_t challenge_k = 200;
  Millis prove_ms_per_sample = 0.5;
  Millis verify_ms_per_sample = 0.5;
  Millis ingress_ms_per_unit = 2.0;  // coordinator ingress service time (fedavg_central)
  unsigned pow_difficulty = 12;
  Millis pow_trial_ms = 1.0;
  std::uint64_t seed = 1;
};

// Pools whose first proof gets one prediction flipped before submission.
struct FaultInjection {
  std::set<std::size_t> tamper_pools;
};

struct Attempt {
  std::size_t pool = 0;
  NodeId head;
  std::size_t rounds = 0;
  Millis finished_ms = 0.0;  // head holds a model meeting the target
  Millis verified_ms = 0.0;
  double claimed_accuracy = 0.0;
  verify::Verdict verdict;
  bool claim_ok = false;
  bool accepted = false;
};

struct RoundResult {
  ConsensusMode mode = ConsensusMode::fedchain;
  std::optional<Block> block;
  Millis latency_ms = 0.0;
  std::size_t winner_pool = 0;
  std::size_t rounds = 0;
  double accuracy = 0.0;
  std::vector<Attempt> attempts;
  std::vector<fed::RoundMetric> metrics;
  std::vector<netsim::TraceRecord> trace;
  std::uint64_t messages = 0;
  std::uint64_t ring_hops = 0;
  std::uint64_t pow_trials = 0;

  const Block& expect_block() const {
    if (!block) throw Error(Errc::round_failed, "no pool reached the target before the deadline");
    return *block;
  }
};

// Hash trials until the digest has `difficulty` leading zero bits, capped.
inline std::uint64_t pow_trials(std::string_view header, NodeId node, unsigned difficulty,
                                std::uint64_t cap) {
  for (std::uint64_t nonce = 0; nonce < cap; ++nonce) {
    const Bytes d = Hasher().update(header).update_u64(node.value).update_u64(nonce).finish();
    if (leading_zero_bits(d) >= difficulty) return nonce + 1;
  }
  return cap;
}

namespace detail {

struct TaskAnnounce {};
struct TrainDone {
  std::size_t pool, position, round;
};
struct RingHop {
  std::size_t pool;
  sharedring::Hop hop;
};
enum class ProofStage { commit, challenge, proved, proof, verified };
struct ProofStep {
  std::size_t pool;
  ProofStage stage;
};
struct ModelDown {
  std::size_t round;
};
struct ModelUp {
  std::size_t node, round;
};
struct IngressDone {
  std::size_t node, round;
};

using Message = std::variant<TaskAnnounce, TrainDone, RingHop, ProofStep, ModelDown, ModelUp, IngressDone>;

inline std::string_view message_kind(const Message& m) {
  struct {
    std::string_view operator()(const TaskAnnounce&) const { return "task"; }
    std::string_view operator()(const TrainDone&) const { return "train"; }
    std::string_view operator()(const RingHop& h) const {
      switch (h.hop.phase) {
        case sharedring::Phase::reduce: return "ring-reduce";
        case sharedring::Phase::back: return "ring-return";
        case sharedring::Phase::gather: return "ring-gather";
      }
      return "ring";
    }
    std::string_view operator()(const ProofStep& p) const {
      switch (p.stage) {
        case ProofStage::commit: return "commit";
        case ProofStage::challenge: return "challenge";
        case ProofStage::proved: return "prove";
        case ProofStage::proof: return "proof";
        case ProofStage::verified: return "verify";
      }
      return "proof";
    }
    std::string_view operator()(const ModelDown&) const { return "model-down"; }
    std::string_view operator()(const ModelUp&) const { return "model-up"; }
    std::string_view operator()(const IngressDone&) const { return "ingress"; }
  } visitor;
  return std::visit(visitor, m);
}

struct Envelope {
  Message msg;
};

inline std::string_view event_kind(const Envelope& e) { return message_kind(e.msg); }

}  // namespace detail

class RoundEngine {
 public:
  RoundEngine(NetworkSetup net, std::vector<fed::Dataset> node_data, TaskData task_data,
              EngineConfig cfg)
      : net_(std::move(net)), data_(std::move(node_data)), task_data_(std::move(task_data)),
        cfg_(std::move(cfg)) {
    if (data_.size() != net_.latency.size() || net_.compute_ms.size() != data_.size()) {
      throw Error(Errc::invalid_config, "one dataset and compute time per node required");
    }
    cfg_.train.validate();
  }

  const NetworkSetup& network() const { return net_; }
  const EngineConfig& config() const { return cfg_; }
  std::size_t node_count() const { return data_.size(); }

  void enable_trace(bool on = true) { trace_ = on; }

  // Latency-guided pools from bootstrap pings: spread heads, sequential
  // greedy joins against t_p of the prospective membership.
  pools::PoolAssignment form_pools(std::size_t pool_count, const Task& task,
                                   pools::HeadPolicy policy = pools::HeadPolicy::spread) const {
    const auto history = pools::bootstrap_history(net_.latency, derive_seed(cfg_.seed, "ping", task.id));
    const auto l_hat = pools::estimate_latency(history);
    const auto heads = pools::announce_heads(node_count(), pool_count, policy, l_hat,
                                             derive_seed(cfg_.seed, "heads", task.id));
    const std::size_t M = task.arch.parameter_count();
    auto t_p = [&](const std::vector<NodeId>& members) {
      const std::size_t p = members.size();
      const auto units = sharedring::chunk_size_units(M / std::min(p, M), M, cfg_.model_size_units);
      return pools::pool_time_estimate(members, net_.compute_ms, l_hat, units, cfg_.train.epochs);
    };
    return pools::assign_pools(node_count(), heads, l_hat, t_p, derive_seed(cfg_.seed, "order", task.id));
  }

  RoundResult run_fedchain(Ledger& ledger, const Task& task, const pools::PoolAssignment& assignment,
                           const FaultInjection& faults = {}) const {
    std::vector<std::vector<NodeId>> rings;
    for (const auto& p : assignment.pools) rings.push_back(p.members);
    return run_rings(ledger, task, ConsensusMode::fedchain, rings, cfg_.scheme, faults);
  }

  RoundResult run_baseline(Ledger& ledger, const Task& task, ConsensusMode mode,
                           const FaultInjection& faults = {}) const {
    switch (mode) {
      case ConsensusMode::gfl_ring: {
        std::vector<NodeId> all;
        for (std::size_t i = 0; i < node_count(); ++i) all.emplace_back(i);
        return run_rings(ledger, task, mode, {all}, fed::Scheme::fedavg, faults);
      }
      case ConsensusMode::fedavg_central: return run_central(ledger, task, faults);
      case ConsensusMode::pow: return run_pow(ledger, task);
      case ConsensusMode::fedchain: break;
    }
    throw Error(Errc::invalid_config, "fedchain is not a baseline mode");
  }

  // Sequential rounds ordered by task id; each task's clock starts at the
  // ledger tip.
  std::vector<RoundResult> run_tasks(Ledger& ledger, std::vector<Task> tasks, ConsensusMode mode,
                                     std::size_t pool_count) const {
    std::sort(tasks.begin(), tasks.end(), [](const Task& a, const Task& b) { return a.id < b.id; });
    std::vector<RoundResult> out;
    for (auto& t : tasks) {
      const Millis offset = ledger.tip().timestamp;
      t.deadline += offset - t.publish_time;
      t.publish_time = offset;
      if (mode == ConsensusMode::fedchain) {
        out.push_back(run_fedchain(ledger, t, form_pools(pool_count, t)));
      } else {
        out.push_back(run_baseline(ledger, t, mode));
      }
    }
    return out;
  }

  fed::Model initial_model(const Task& task) const {
    return fed::init_model(task.arch, derive_seed(cfg_.seed, "task-model", task.id));
  }

 private:
  using Sim = netsim::Simulator<detail::Envelope>;

  struct PoolState {
    std::vector<NodeId> members;
    fed::AggregationWeights weights;
    std::vector<fed::Model> round_models;  // round_models[r-1] is the input to round r
    std::map<std::size_t, sharedring::RingSession> sessions;
    std::map<std::pair<std::size_t, std::size_t>, std::vector<sharedring::Hop>> parked;
    std::map<std::size_t, double> accuracy;  // per completed round
    std::optional<std::size_t> reached;      // round meeting the target
    bool verifying = false;
    Attempt attempt;
    std::optional<Transaction> commit_tx;
    Bytes blinding;
    verify::ModelCommitment commitment;
    std::vector<std::size_t> challenge;
    verify::Prediction prediction;
  };

  struct Outcome {
    std::optional<std::size_t> winner;
    Millis time = 0.0;
  };

  fed::AggregationWeights weights_for(const std::vector<NodeId>& members, const Task& task,
                                      fed::Scheme scheme) const {
    std::vector<std::size_t> sizes;
    std::vector<fed::LabelHistogram> hists;
    for (auto m : members) {
      sizes.push_back(data_[m.index()].size());
      hists.push_back(fed::smooth(fed::histogram(data_[m.index()])));
    }
    if (scheme == fed::Scheme::fedavg) return fed::fedavg_weights(sizes);
    return fed::kl_weights(hists, fed::smooth(task.reference), sizes);
  }

  fed::TrainConfig train_cfg(std::size_t round) const {
    auto c = cfg_.train;
    c.round = round;
    return c;
  }

  fed::Model train_member(const fed::Model& start, NodeId node, std::size_t round) const {
    return fed::local_train(start, data_[node.index()], train_cfg(round),
                            derive_seed(cfg_.seed, "node-train", node.index()));
  }

  NodeId verifier_of(const Task& task) const { return task.publisher; }

  static void post(Sim& sim, NodeId from, NodeId to, detail::Message msg, std::uint64_t units = 1) {
    if (from == to) {
      sim.schedule_at(to, sim.now(), detail::Envelope{std::move(msg)});
    } else {
      sim.send(from, to, detail::Envelope{std::move(msg)}, units);
    }
  }

  // Commit -> challenge -> prove -> proof -> verify, as messages between the
  // pool head and the task verifier.
  void start_verification(Sim& sim, PoolState& ps, std::size_t pool, NodeId head, const Ledger& ledger,
                          const Task& task, const verify::PublicParams& pp,
                          const fed::Model& model) const {
    ps.verifying = true;
    ps.attempt.pool = pool;
    ps.attempt.head = head;
    ps.attempt.finished_ms = sim.now();
    ps.attempt.claimed_accuracy = ps.accuracy.at(*ps.reached);
    ps.attempt.rounds = *ps.reached;
    ps.blinding = verify::make_blinding(derive_seed(cfg_.seed, "blinding", pool * 1000003 + task.id), pp.lambda);
    ps.commitment = verify::commit(model, pp, ps.blinding);
    ps.commit_tx = Transaction{TxKind::model_commit,
                               Json{{"pool", pool}, {"commitment", to_hex(ps.commitment.digest)},
                                    {"round", *ps.reached}},
                               head, task.publish_time + sim.now()};
    const Bytes seed = challenge_seed(ledger.tip().hash, *ps.commit_tx);
    ps.challenge = verify::derive_challenge(seed, task_data_.challenge_pool.size(), cfg_.challenge_k);
    post(sim, head, verifier_of(task), detail::ProofStep{pool, detail::ProofStage::commit});
  }

  void on_proof_step(Sim& sim, const detail::ProofStep& step, std::vector<PoolState>& pools,
                     const std::vector<std::vector<NodeId>>& rings, const Task& task,
                     const verify::PublicParams& pp, const FaultInjection& faults,
                     Outcome& outcome) const {
    PoolState& ps = pools[step.pool];
    const NodeId head = rings[step.pool].front();
    const NodeId verifier = verifier_of(task);
    const auto k = static_cast<Millis>(cfg_.challenge_k);
    switch (step.stage) {
      case detail::ProofStage::commit:
        post(sim, verifier, head, detail::ProofStep{step.pool, detail::ProofStage::challenge});
        break;
      case detail::ProofStage::challenge: {
        const auto X = task_data_.challenge_pool.subset(ps.challenge);
        ps.prediction = verify::prove(ps.round_models[*ps.reached], X, pp, ps.blinding);
        if (faults.tamper_pools.count(step.pool) && !ps.prediction.y.empty()) {
          ps.prediction.y[0] = (ps.prediction.y[0] + 1) % task.arch.n_classes;
        }
        sim.schedule_at(head, sim.now() + k * cfg_.prove_ms_per_sample,
                        detail::Envelope{detail::ProofStep{step.pool, detail::ProofStage::proved}});
        break;
      }
      case detail::ProofStage::proved:
        post(sim, head, verifier, detail::ProofStep{step.pool, detail::ProofStage::proof});
        break;
      case detail::ProofStage::proof:
        sim.schedule_at(verifier, sim.now() + k * cfg_.verify_ms_per_sample,
                        detail::Envelope{detail::ProofStep{step.pool, detail::ProofStage::verified}});
        break;
      case detail::ProofStage::verified: {
        const auto X = task_data_.challenge_pool.subset(ps.challenge);
        ps.attempt.verified_ms = sim.now();
        ps.attempt.verdict = verify::verify(ps.commitment, X, ps.prediction.y, ps.prediction.proof, pp);
        ps.attempt.claim_ok =
            ps.attempt.verdict.accepted &&
            verify::accuracy_claim_check(ps.attempt.verdict.accuracy, ps.attempt.claimed_accuracy,
                                         cfg_.challenge_k);
        ps.attempt.accepted = ps.attempt.claim_ok && task.publish_time + sim.now() <= task.deadline;
        if (ps.attempt.accepted && !outcome.winner) {
          outcome.winner = step.pool;
          outcome.time = sim.now();
          sim.stop();
        }
        break;
      }
    }
  }

  Block assemble_block(const Ledger& ledger, const Task& task, ConsensusMode mode,
                       const std::vector<std::vector<NodeId>>& rings, std::size_t winner,
                       PoolState& ps, Millis end_time) const {
    Block b;
    b.timestamp = task.publish_time + end_time;
    b.proposer = rings[winner].front();
    b.task_id = task.id;
    b.commitment = to_hex(ps.commitment.digest);
    b.txs.push_back(publish_task(task));
    for (std::size_t p = 0; p < rings.size(); ++p) {
      Json members = Json::array();
      for (auto m : rings[p]) members.push_back(m.value);
      b.txs.push_back(Transaction{TxKind::pool_register,
                                  Json{{"pool", p}, {"head", rings[p].front().value}, {"members", members},
                                       {"mode", mode_name(mode)}},
                                  rings[p].front(), task.publish_time});
    }
    b.txs.push_back(*ps.commit_tx);
    b.txs.push_back(Transaction{
        TxKind::proof_submit,
        Json{{"pool", winner},
             {"challenge_seed", to_hex(challenge_seed(ledger.tip().hash, *ps.commit_tx))},
             {"k", cfg_.challenge_k},
             {"claimed_accuracy", ps.attempt.claimed_accuracy},
             {"trace_tip", to_hex(ps.prediction.proof.trace.back())}},
        rings[winner].front(), task.publish_time + ps.attempt.finished_ms});
    b.txs.push_back(Transaction{TxKind::verify_vote,
                                Json{{"pool", winner}, {"accept", true},
                                     {"measured_accuracy", ps.attempt.verdict.accuracy}},
                                verifier_of(task), b.timestamp});
    const auto credits = split_reward(task.reward, rings[winner], ps.weights.w);
    b.txs.push_back(Transaction{TxKind::reward_settle, Json{{"credits", credits_json(credits)}},
                                verifier_of(task), b.timestamp});
    return b;
  }

  void finish(Ledger& ledger, const Task& task, RoundResult& res, Block b) const {
    ledger.open_task(task);
    res.block = ledger.append(std::move(b));
    ledger.settle_reward(task.id);
  }

  // One or more rings training concurrently; the first verified finisher wins.
  RoundResult run_rings(Ledger& ledger, const Task& task, ConsensusMode mode,
                        const std::vector<std::vector<NodeId>>& rings, fed::Scheme scheme,
                        const FaultInjection& faults) const {
    validate_task(task);
    if (ledger.has_block_for(task.id)) throw Error(Errc::invalid_task, "task already mined");
    RoundResult res;
    res.mode = mode;
    const std::size_t M = task.arch.parameter_count();
    const auto pp = verify::keygen(cfg_.lambda, derive_seed(cfg_.seed, "keygen", task.id));

    std::vector<PoolState> pools(rings.size());
    std::vector<std::pair<std::size_t, std::size_t>> where(node_count(), {SIZE_MAX, 0});
    for (std::size_t p = 0; p < rings.size(); ++p) {
      if (rings[p].empty() || rings[p].size() > M) throw Error(Errc::model_too_small, "pool size");
      pools[p].members = rings[p];
      pools[p].weights = weights_for(rings[p], task, scheme);
      pools[p].round_models.push_back(initial_model(task));
      for (std::size_t i = 0; i < rings[p].size(); ++i) where[rings[p][i].index()] = {p, i};
    }

    Sim sim(net_.latency);
    sim.enable_trace(trace_);
    Outcome outcome;
    const Millis budget = task.deadline - task.publish_time;

    auto session_for = [&](std::size_t p, std::size_t round) -> sharedring::RingSession& {
      auto& ps = pools[p];
      auto it = ps.sessions.find(round);
      if (it == ps.sessions.end()) {
        it = ps.sessions
                 .emplace(round, sharedring::RingSession(ps.members.size(),
                                                         sharedring::balanced_layout(M, ps.members.size()),
                                                         round))
                 .first;
      }
      return it->second;
    };

    auto send_hops = [&](std::size_t p, std::vector<sharedring::Hop> hops) {
      const auto& ring = pools[p].members;
      const auto& layout = session_for(p, hops.empty() ? 1 : hops.front().round).layout();
      for (auto& h : hops) {
        const auto units = sharedring::chunk_size_units(layout.length(h.slot), M, cfg_.model_size_units);
        ++res.ring_hops;
        sim.send(ring[h.from], ring[h.to], detail::Envelope{detail::RingHop{p, std::move(h)}}, units);
      }
    };

    auto schedule_training = [&](std::size_t p, std::size_t i, std::size_t round) {
      const NodeId n = pools[p].members[i];
      const Millis done = sim.now() + net_.compute_ms[n.index()];
      if (round > cfg_.max_rounds || done > budget) return;
      sim.schedule_at(n, done, detail::Envelope{detail::TrainDone{p, i, round}});
    };

    std::function<void(std::size_t, std::size_t, std::size_t)> member_complete;

    auto deliver_hop = [&](std::size_t p, const sharedring::Hop& hop) {
      auto& session = session_for(p, hop.round);
      send_hops(p, session.deliver(hop));
      if (session.complete(hop.to)) member_complete(p, hop.to, hop.round);
    };

    member_complete = [&](std::size_t p, std::size_t i, std::size_t round) {
      auto& ps = pools[p];
      if (ps.round_models.size() <= round) {
        const auto words = session_for(p, round).result(i);
        fed::Model next{task.arch, fixed::decode(words)};
        for (auto& w : next.weights) w /= static_cast<double>(ps.members.size());
        ps.round_models.push_back(std::move(next));
        const auto& model = ps.round_models.back();
        const double acc = fed::evaluate(model, task_data_.validation);
        ps.accuracy[round] = acc;
        res.metrics.push_back({round, p, acc, fed::mean_loss(model, task_data_.validation), sim.now()});
        if (acc >= task.target_accuracy && !ps.reached) ps.reached = round;
      }
      if (ps.reached && *ps.reached == round) {
        if (i == 0 && !ps.verifying) {
          start_verification(sim, ps, p, ps.members.front(), ledger, task, pp, ps.round_models[round]);
        }
        return;
      }
      if (ps.reached) return;
      schedule_training(p, i, round + 1);
    };

    auto on_event = [&](const Sim::EventType& ev) {
      const auto& msg = ev.payload.msg;
      if (std::holds_alternative<detail::TaskAnnounce>(msg)) {
        const auto [p, i] = where[ev.dst.index()];
        if (p != SIZE_MAX) schedule_training(p, i, 1);
      } else if (const auto* td = std::get_if<detail::TrainDone>(&msg)) {
        auto& ps = pools[td->pool];
        const NodeId n = ps.members[td->position];
        fed::Model local = train_member(ps.round_models[td->round - 1], n, td->round);
        const double scale = ps.weights.w[td->position] * static_cast<double>(ps.members.size());
        for (auto& w : local.weights) w *= scale;
        const auto words = fixed::encode(local.weights);
        const auto session_seed = derive_seed(cfg_.seed, "ring", (td->pool << 20) ^ td->round ^ (task.id << 40));
        auto [masked, mask] = sharedring::prepare_contribution(words, td->position, ps.members.size(),
                                                               session_seed, cfg_.ring);
        auto& session = session_for(td->pool, td->round);
        send_hops(td->pool, session.contribute(td->position, std::move(masked), std::move(mask)));
        auto parked = ps.parked.find({td->round, td->position});
        if (parked != ps.parked.end()) {
          auto hops = std::move(parked->second);
          ps.parked.erase(parked);
          for (const auto& h : hops) deliver_hop(td->pool, h);
        }
        if (session.complete(td->position)) member_complete(td->pool, td->position, td->round);
      } else if (const auto* rh = std::get_if<detail::RingHop>(&msg)) {
        auto& session = session_for(rh->pool, rh->hop.round);
        if (rh->hop.phase == sharedring::Phase::reduce && !session.contributed(rh->hop.to)) {
          pools[rh->pool].parked[{rh->hop.round, rh->hop.to}].push_back(rh->hop);
        } else {
          deliver_hop(rh->pool, rh->hop);
        }
      } else if (const auto* ps = std::get_if<detail::ProofStep>(&msg)) {
        on_proof_step(sim, *ps, pools, rings, task, pp, faults, outcome);
      }
    };

    const NodeId publisher = task.publisher;
    for (std::size_t n = 0; n < node_count(); ++n) {
      post(sim, publisher, NodeId(n), detail::TaskAnnounce{});
    }
    sim.run_until_idle(on_event);
    res.messages = sim.messages();
    res.trace = sim.trace();
    for (auto& ps : pools) {
      if (ps.verifying) res.attempts.push_back(ps.attempt);
    }
    std::sort(res.attempts.begin(), res.attempts.end(),
              [](const Attempt& a, const Attempt& b) { return a.verified_ms < b.verified_ms; });
    if (!outcome.winner) {
      res.latency_ms = sim.now();
      return res;
    }
    const std::size_t w = *outcome.winner;
    res.winner_pool = w;
    res.latency_ms = outcome.time;
    res.rounds = *pools[w].reached;
    res.accuracy = pools[w].accuracy.at(res.rounds);
    finish(ledger, task, res, assemble_block(ledger, task, mode, rings, w, pools[w], outcome.time));
    return res;
  }

  // All nodes exchange the full model with one coordinator whose ingress
  // serves uploads one at a time.
  RoundResult run_central(Ledger& ledger, const Task& task, const FaultInjection& faults) const {
    validate_task(task);
    if (ledger.has_block_for(task.id)) throw Error(Errc::invalid_task, "task already mined");
    RoundResult res;
    res.mode = ConsensusMode::fedavg_central;
    const auto pp = verify::keygen(cfg_.lambda, derive_seed(cfg_.seed, "keygen", task.id));
    const std::size_t N = node_count();

    // Coordinator: minimum eccentricity on the true matrix.
    std::size_t coord = 0;
    Millis best = std::numeric_limits<Millis>::infinity();
    for (std::size_t i = 0; i < N; ++i) {
      Millis ecc = 0.0;
      for (std::size_t j = 0; j < N; ++j) ecc = std::max(ecc, net_.latency.at(j, i));
      if (ecc < best) best = ecc, coord = i;
    }
    const NodeId hub(coord);
    const auto full_units = static_cast<std::uint64_t>(std::max(1.0, std::round(cfg_.model_size_units)));

    std::vector<NodeId> everyone;
    for (std::size_t i = 0; i < N; ++i) everyone.emplace_back(i);
    // Coordinator first so it heads the single "pool".
    std::rotate(everyone.begin(), everyone.begin() + static_cast<std::ptrdiff_t>(coord), everyone.end());
    std::vector<std::vector<NodeId>> rings{everyone};

    std::vector<PoolState> pools(1);
    auto& ps = pools[0];
    ps.members = everyone;
    ps.weights = weights_for(everyone, task, fed::Scheme::fedavg);
    ps.round_models.push_back(initial_model(task));
    std::vector<std::size_t> position(N);
    for (std::size_t i = 0; i < N; ++i) position[everyone[i].index()] = i;

    std::map<std::size_t, std::vector<std::optional<fed::Model>>> uploads;
    Millis ingress_free = 0.0;
    const Millis budget = task.deadline - task.publish_time;

    Sim sim(net_.latency);
    sim.enable_trace(trace_);
    Outcome outcome;

    auto begin_round = [&](std::size_t round) {
      if (round > cfg_.max_rounds) return;
      uploads[round].assign(N, std::nullopt);
      for (std::size_t n = 0; n < N; ++n) {
        if (n == coord) {
          const Millis done = sim.now() + net_.compute_ms[n];
          if (done <= budget) sim.schedule_at(hub, done, detail::Envelope{detail::TrainDone{0, position[n], round}});
        } else {
          sim.send(hub, NodeId(n), detail::Envelope{detail::ModelDown{round}}, full_units);
        }
      }
    };

    auto try_aggregate = [&](std::size_t round) {
      auto& got = uploads[round];
      if (!std::all_of(got.begin(), got.end(), [](const auto& m) { return m.has_value(); })) return;
      std::vector<fed::Model> ordered;
      for (auto n : everyone) ordered.push_back(*got[n.index()]);
      ps.round_models.push_back(fed::aggregate(ordered, ps.weights));
      uploads.erase(round);
      const auto& model = ps.round_models.back();
      const double acc = fed::evaluate(model, task_data_.validation);
      ps.accuracy[round] = acc;
      res.metrics.push_back({round, 0, acc, fed::mean_loss(model, task_data_.validation), sim.now()});
      if (acc >= task.target_accuracy) {
        ps.reached = round;
        start_verification(sim, ps, 0, hub, ledger, task, pp, model);
      } else {
        begin_round(round + 1);
      }
    };

    auto on_event = [&](const Sim::EventType& ev) {
      const auto& msg = ev.payload.msg;
      if (std::holds_alternative<detail::TaskAnnounce>(msg)) {
        if (ev.dst == hub) begin_round(1);
      } else if (const auto* down = std::get_if<detail::ModelDown>(&msg)) {
        const Millis done = sim.now() + net_.compute_ms[ev.dst.index()];
        if (done <= budget) {
          sim.schedule_at(ev.dst, done,
                          detail::Envelope{detail::TrainDone{0, position[ev.dst.index()], down->round}});
        }
      } else if (const auto* td = std::get_if<detail::TrainDone>(&msg)) {
        const NodeId n = ps.members[td->position];
        fed::Model local = train_member(ps.round_models[td->round - 1], n, td->round);
        if (n == hub) {
          uploads[td->round][n.index()] = std::move(local);
          try_aggregate(td->round);
        } else {
          pending_uploads_[{n.index(), td->round}] = std::move(local);
          sim.send(n, hub, detail::Envelope{detail::ModelUp{n.index(), td->round}}, full_units);
        }
      } else if (const auto* up = std::get_if<detail::ModelUp>(&msg)) {
        const Millis start = std::max(sim.now(), ingress_free);
        ingress_free = start + static_cast<Millis>(full_units) * cfg_.ingress_ms_per_unit;
        sim.schedule_at(hub, ingress_free, detail::Envelope{detail::IngressDone{up->node, up->round}});
      } else if (const auto* in = std::get_if<detail::IngressDone>(&msg)) {
        auto it = pending_uploads_.find({in->node, in->round});
        uploads[in->round][in->node] = std::move(it->second);
        pending_uploads_.erase(it);
        try_aggregate(in->round);
      } else if (const auto* step = std::get_if<detail::ProofStep>(&msg)) {
        on_proof_step(sim, *step, pools, rings, task, pp, faults, outcome);
      }
    };

    pending_uploads_.clear();
    for (std::size_t n = 0; n < N; ++n) post(sim, task.publisher, NodeId(n), detail::TaskAnnounce{});
    sim.run_until_idle(on_event);
    pending_uploads_.clear();
    res.messages = sim.messages();
    res.trace = sim.trace();
    if (ps.verifying) res.attempts.push_back(ps.attempt);
    if (!outcome.winner) {
      res.latency_ms = sim.now();
      return res;
    }
    res.latency_ms = outcome.time;
    res.rounds = *ps.reached;
    res.accuracy = ps.accuracy.at(res.rounds);
    finish(ledger, task, res, assemble_block(ledger, task, ConsensusMode::fedavg_central, rings, 0, ps, outcome.time));
    return res;
  }

  // Every node hashes in parallel; the first preimage below the target wins
  // and its block reaches the verifier one link later.
  RoundResult run_pow(Ledger& ledger, const Task& task) const {
    validate_task(task);
    if (ledger.has_block_for(task.id)) throw Error(Errc::invalid_task, "task already mined");
    RoundResult res;
    res.mode = ConsensusMode::pow;
    const std::string header = ledger.tip().hash + ":" + std::to_string(task.id);
    const std::uint64_t cap = std::uint64_t{64} << cfg_.pow_difficulty;
    std::size_t winner = 0;
    Millis best = std::numeric_limits<Millis>::infinity();
    std::uint64_t winner_trials = 0;
    for (std::size_t n = 0; n < node_count(); ++n) {
      const NodeId node(n);
      const Millis announce = node == task.publisher ? 0.0 : net_.latency.at(task.publisher, node);
      const auto trials = pow_trials(header, node, cfg_.pow_difficulty, cap);
      res.pow_trials += trials;
      const Millis found = announce + static_cast<Millis>(trials) * cfg_.pow_trial_ms;
      if (trials < cap && found < best) best = found, winner = n, winner_trials = trials;
    }
    if (!std::isfinite(best)) return res;
    const NodeId w(winner);
    const Millis arrive = best + (w == task.publisher ? 0.0 : net_.latency.at(w, task.publisher));
    res.latency_ms = arrive;
    res.winner_pool = winner;
    if (task.publish_time + arrive > task.deadline) return res;

    Block b;
    b.timestamp = task.publish_time + arrive;
    b.proposer = w;
    b.task_id = task.id;
    b.txs.push_back(publish_task(task));
    b.txs.push_back(Transaction{TxKind::proof_submit,
                                Json{{"nonce", winner_trials - 1}, {"difficulty", cfg_.pow_difficulty},
                                     {"header", header}},
                                w, task.publish_time + best});
    b.txs.push_back(Transaction{TxKind::verify_vote, Json{{"accept", true}}, task.publisher, b.timestamp});
    const std::vector<Credit> credits{{w, task.reward}};
    b.txs.push_back(Transaction{TxKind::reward_settle, Json{{"credits", credits_json(credits)}},
                                task.publisher, b.timestamp});
    finish(ledger, task, res, std::move(b));
    return res;
  }

  NetworkSetup net_;
  std::vector<fed::Dataset> data_;
  TaskData task_data_;
  EngineConfig cfg_;
  bool trace_ = false;
  mutable std::map<std::pair<std::size_t, std::size_t>, fed::Model> pending_uploads_;
};

}  // namespace fedchain::chain
