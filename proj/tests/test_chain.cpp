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

#include <gtest/gtest.h>

#include "fedchain/experiments.hpp"

using namespace fedchain;
using namespace fedchain::chain;
namespace ex = fedchain::experiments;

namespace {

ex::ExperimentConfig base_config() {
  ex::ExperimentConfig c;
  c.synthetic.samples = 1600;
  return c;
}

NetworkSetup flat_network(std::vector<Millis> compute, Millis link = 20) {
  const std::size_t n = compute.size();
  netsim::LatencyMatrix l(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) l.set(i, j, link);
    }
  }
  return {l, std::move(compute)};
}

pools::PoolAssignment manual_pools(std::vector<std::vector<std::size_t>> groups, std::size_t n) {
  pools::PoolAssignment a;
  a.pool_of.assign(n, 0);
  for (std::size_t p = 0; p < groups.size(); ++p) {
    pools::Pool pool;
    for (auto m : groups[p]) {
      pool.members.emplace_back(m);
      a.pool_of[m] = p;
    }
    pool.head = pool.members.front();
    a.pools.push_back(pool);
  }
  return a;
}

// Every node holds the same iid shard, so pools differ only in compute.
struct TwoPoolSetup {
  ex::ExperimentConfig c = base_config();
  ex::DataBundle data = ex::load_data(c, 3);
  Task task = ex::make_task(c, data, 1);

  RoundEngine engine(std::vector<Millis> compute) const {
    std::vector<fed::Dataset> shards(compute.size(), data.train);
    return RoundEngine(flat_network(std::move(compute)), std::move(shards), {data.validation, data.challenge},
                       c.engine(3));
  }
};

}  // namespace

TEST(ParseMode, NamesRoundTrip) {
  for (auto m : {ConsensusMode::fedchain, ConsensusMode::fedavg_central, ConsensusMode::pow,
                 ConsensusMode::gfl_ring}) {
    EXPECT_EQ(parse_mode(mode_name(m)), m);
  }
  try {
    parse_mode("raft");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_config);
  }
}

TEST(RunFedchain, SinglePoolBlockProposedByHead) {
  const auto c = base_config();
  const auto data = ex::load_data(c, 1);
  const auto engine = ex::make_engine(c, data, 8, 0.0, 1);
  const auto task = ex::make_task(c, data, 1);
  const auto a = engine.form_pools(1, task);
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, task, a);
  const auto& b = res.expect_block();
  EXPECT_EQ(b.proposer, a.pools[0].head);
  EXPECT_GE(res.accuracy, task.target_accuracy);
  EXPECT_EQ(ledger.blocks().size(), 2u);
  EXPECT_TRUE(ledger.validate().ok);
}

TEST(RunFedchain, FasterPoolWinsOnIdenticalData) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  const auto a = manual_pools({{0, 1, 2}, {3, 4, 5}}, 6);
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, s.task, a);
  EXPECT_EQ(res.winner_pool, 0u);
  EXPECT_EQ(res.expect_block().proposer, NodeId(0));

  // Swap the compute profile and the other pool wins.
  const auto swapped = s.engine({400, 400, 400, 40, 40, 40});
  Ledger other;
  EXPECT_EQ(swapped.run_fedchain(other, s.task, a).winner_pool, 1u);
}

TEST(RunFedchain, TamperedFirstFinisherLosesToSecond) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  const auto a = manual_pools({{0, 1, 2}, {3, 4, 5}}, 6);
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, s.task, a, FaultInjection{{0}});
  ASSERT_TRUE(res.block);
  EXPECT_EQ(res.winner_pool, 1u);
  EXPECT_EQ(res.block->proposer, NodeId(3));
  ASSERT_EQ(res.attempts.size(), 2u);
  EXPECT_EQ(res.attempts[0].pool, 0u);
  EXPECT_FALSE(res.attempts[0].verdict.accepted);
  EXPECT_LT(res.attempts[0].verified_ms, res.attempts[1].verified_ms);
  EXPECT_TRUE(res.attempts[1].accepted);
  EXPECT_TRUE(ledger.validate().ok);
}

TEST(RunFedchain, FailedVerificationNeverAppends) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  const auto a = manual_pools({{0, 1, 2}, {3, 4, 5}}, 6);
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, s.task, a, FaultInjection{{0, 1}});
  EXPECT_FALSE(res.block);
  EXPECT_EQ(ledger.blocks().size(), 1u);
  EXPECT_EQ(res.attempts.size(), 2u);
  for (const auto& at : res.attempts) EXPECT_FALSE(at.accepted);
  try {
    res.expect_block();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::round_failed);
  }
}

TEST(RunFedchain, TinyDeadlineProducesNoBlock) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  auto task = s.task;
  task.deadline = 30;
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, task, manual_pools({{0, 1, 2}, {3, 4, 5}}, 6));
  EXPECT_FALSE(res.block);
  EXPECT_THROW(res.expect_block(), Error);
}

TEST(RunFedchain, OneBlockPerTask) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  const auto a = manual_pools({{0, 1, 2}, {3, 4, 5}}, 6);
  Ledger ledger;
  engine.run_fedchain(ledger, s.task, a).expect_block();
  try {
    engine.run_fedchain(ledger, s.task, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_task);
  }
}

TEST(RunFedchain, RewardConservedAndSplitByWeights) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, s.task, manual_pools({{0, 1, 2}, {3, 4, 5}}, 6));
  ASSERT_TRUE(res.block);
  EXPECT_EQ(ledger.total_balances() + ledger.unspent_rewards(), s.task.reward);
  EXPECT_EQ(ledger.unspent_rewards(), 0u);
  for (std::size_t n = 3; n < 6; ++n) EXPECT_EQ(ledger.balance(NodeId(n)), 0u);
}

TEST(RunFedchain, BlockCarriesSixKindsInOrder) {
  TwoPoolSetup s;
  const auto engine = s.engine({40, 40, 40, 400, 400, 400});
  Ledger ledger;
  const auto res = engine.run_fedchain(ledger, s.task, manual_pools({{0, 1, 2}, {3, 4, 5}}, 6));
  const auto& b = res.expect_block();
  std::vector<TxKind> kinds;
  for (const auto& tx : b.txs) kinds.push_back(tx.kind);
  EXPECT_EQ(kinds, (std::vector<TxKind>{TxKind::task_publish, TxKind::pool_register, TxKind::pool_register,
                                        TxKind::model_commit, TxKind::proof_submit, TxKind::verify_vote,
                                        TxKind::reward_settle}));
}

TEST(RunBaseline, GflRingHopCount) {
  const auto c = base_config();
  const auto data = ex::load_data(c, 2);
  for (std::size_t n : {4, 7}) {
    const auto engine = ex::make_engine(c, data, n, 0.0, 2);
    Ledger ledger;
    const auto res = engine.run_baseline(ledger, ex::make_task(c, data, 1), ConsensusMode::gfl_ring);
    ASSERT_TRUE(res.block);
    // Per round each of the n slots travels 2(n-1) hops plus one return to its owner.
    EXPECT_EQ(res.ring_hops, res.rounds * n * (2 * (n - 1) + 1));
  }
}

TEST(RunBaseline, CentralRoundTimeGrowsWithNUnderFixedLinks) {
  // 20 ms links, 10 units per model, 50 ms compute, 2 ms ingress per unit:
  // download 200 + train 50 + upload 200, then N-1 uploads served one at a
  // time, 20 ms each.
  TwoPoolSetup s;
  std::vector<Millis> first_round;
  for (std::size_t n : {10, 20, 40}) {
    const auto engine = s.engine(std::vector<Millis>(n, 50));
    Ledger ledger;
    const auto res = engine.run_baseline(ledger, s.task, ConsensusMode::fedavg_central);
    ASSERT_FALSE(res.metrics.empty());
    first_round.push_back(res.metrics.front().sim_time_ms);
    EXPECT_DOUBLE_EQ(first_round.back(), 450.0 + 20.0 * static_cast<double>(n - 1)) << n;
  }
  EXPECT_LT(first_round[0], first_round[1]);
  EXPECT_LT(first_round[1], first_round[2]);
}

TEST(RunBaseline, PowReproducibleAndGeometric) {
  const auto c = base_config();
  const auto a = ex::run_single(c, ConsensusMode::pow, 10, 1, 4, false);
  const auto b = ex::run_single(c, ConsensusMode::pow, 10, 1, 4, false);
  ASSERT_TRUE(a.result.block);
  EXPECT_EQ(a.result.latency_ms, b.result.latency_ms);
  EXPECT_EQ(a.result.pow_trials, b.result.pow_trials);
  EXPECT_EQ(a.ledger.tip().hash, b.ledger.tip().hash);
  EXPECT_TRUE(a.ledger.validate().ok);

  const unsigned d = 8;
  double total = 0;
  const int runs = 2000;
  for (int i = 0; i < runs; ++i) total += static_cast<double>(pow_trials("h" + std::to_string(i), NodeId(0), d, 1u << 20));
  const double mean = total / runs;
  // Geometric with p = 2^-d: sd of the mean is about 2^d / sqrt(runs).
  EXPECT_NEAR(mean, 256.0, 4 * 256.0 / std::sqrt(static_cast<double>(runs)));
}

TEST(RunBaseline, FedchainIsNotABaseline) {
  const auto c = base_config();
  const auto data = ex::load_data(c, 1);
  const auto engine = ex::make_engine(c, data, 4, 0.0, 1);
  Ledger ledger;
  EXPECT_THROW(engine.run_baseline(ledger, ex::make_task(c, data, 1), ConsensusMode::fedchain), Error);
}

TEST(RunTasks, SequentialByIdAndValid) {
  const auto c = base_config();
  const auto data = ex::load_data(c, 5);
  const auto engine = ex::make_engine(c, data, 8, 0.0, 5);
  for (auto mode : {ConsensusMode::fedchain, ConsensusMode::fedavg_central, ConsensusMode::pow}) {
    Ledger ledger;
    const auto res = engine.run_tasks(ledger, {ex::make_task(c, data, 7), ex::make_task(c, data, 3)}, mode, 2);
    ASSERT_EQ(res.size(), 2u);
    ASSERT_EQ(ledger.blocks().size(), 3u);
    EXPECT_EQ(ledger.blocks()[1].task_id, 3u);
    EXPECT_EQ(ledger.blocks()[2].task_id, 7u);
    EXPECT_GE(ledger.blocks()[2].timestamp, ledger.blocks()[1].timestamp);
    EXPECT_TRUE(ledger.validate().ok) << mode_name(mode);
  }
}

TEST(RunSingle, EveryModeValidatesAndIsDeterministic) {
  const auto c = base_config();
  for (const auto& name : c.modes) {
    const auto mode = parse_mode(name);
    const auto a = ex::run_single(c, mode, 12, 3, 6, true);
    const auto b = ex::run_single(c, mode, 12, 3, 6, true);
    EXPECT_TRUE(a.ledger.validate().ok) << name;
    EXPECT_EQ(a.result.latency_ms, b.result.latency_ms) << name;
    EXPECT_EQ(a.ledger.tip().hash, b.ledger.tip().hash) << name;
    EXPECT_EQ(a.result.trace.size(), b.result.trace.size()) << name;
  }
}

TEST(RunSingle, TooManyPools) {
  EXPECT_THROW(ex::run_single(base_config(), ConsensusMode::fedchain, 3, 4, 1), Error);
}
