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
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedchain/digest.hpp"
#include "fedchain/error.hpp"
#include "fedchain/fed.hpp"
#include "fedchain/netsim.hpp"
#include "json.hpp"

// Ledger data model: transactions, blocks, balances, and chain validation.
namespace fedchain::chain {

using netsim::Millis;
using netsim::NodeId;
using Json = nlohmann::json;

// Declaration order is the required order within a task's block.
enum class TxKind { task_publish, pool_register, model_commit, proof_submit, verify_vote, reward_settle };

inline std::string_view tx_kind_name(TxKind k) {
  switch (k) {
    case TxKind::task_publish: return "TaskPublish";
    case TxKind::pool_register: return "PoolRegister";
    case TxKind::model_commit: return "ModelCommit";
    case TxKind::proof_submit: return "ProofSubmit";
    case TxKind::verify_vote: return "VerifyVote";
    case TxKind::reward_settle: return "RewardSettle";
  }
  return "?";
}

inline TxKind parse_tx_kind(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(TxKind::reward_settle); ++k) {
    if (tx_kind_name(static_cast<TxKind>(k)) == s) return static_cast<TxKind>(k);
  }
  throw Error(Errc::io_error, "unknown transaction kind " + std::string(s));
}

struct Transaction {
  TxKind kind = TxKind::task_publish;
  Json payload = Json::object();
  NodeId author;
  Millis timestamp = 0.0;
};

inline Json to_json(const Transaction& tx) {
  return Json{{"kind", tx_kind_name(tx.kind)},
              {"payload", tx.payload},
              {"author", tx.author.value},
              {"timestamp", tx.timestamp}};
}

inline Transaction transaction_from_json(const Json& j) {
  return Transaction{parse_tx_kind(j.at("kind").get<std::string>()), j.at("payload"),
                     NodeId(j.at("author").get<std::size_t>()), j.at("timestamp").get<double>()};
}

inline Bytes tx_digest(const Transaction& tx) { return sha256(to_json(tx).dump()); }

struct Block {
  std::uint64_t height = 0;
  std::string prev_hash;  // hex
  Millis timestamp = 0.0;
  std::vector<Transaction> txs;
  NodeId proposer;
  std::optional<std::uint64_t> task_id;
  std::string commitment;  // hex; empty when the block carries no model
  std::string hash;        // hex of block_hash()
};

inline Json header_json(const Block& b) {
  Json tx_hashes = Json::array();
  for (const auto& tx : b.txs) tx_hashes.push_back(to_hex(tx_digest(tx)));
  return Json{{"height", b.height},
              {"prev_hash", b.prev_hash},
              {"timestamp", b.timestamp},
              {"proposer", b.proposer.value},
              {"task_id", b.task_id ? Json(*b.task_id) : Json(nullptr)},
              {"commitment", b.commitment},
              {"txs", tx_hashes}};
}

inline std::string block_hash(const Block& b) { return to_hex(sha256(header_json(b).dump())); }

inline std::string genesis_prev_hash() { return std::string(64, '0'); }

// Seed for challenge derivation: binds the previous block and the commit
// transaction, so challenges cannot exist before the commitment does.
inline Bytes challenge_seed(std::string_view prev_hash, const Transaction& commit_tx) {
  return Hasher().update("fedchain/challenge").update(prev_hash).update(tx_digest(commit_tx)).finish();
}

struct Task {
  std::uint64_t id = 0;
  fed::Architecture arch;
  fed::LabelHistogram reference;  // publisher's example dataset d
  double target_accuracy = 0.90;
  Millis publish_time = 0.0;
  Millis deadline = 1e9;
  std::uint64_t reward = 1000;
  NodeId publisher;
};

inline Json to_json(const Task& t) {
  return Json{{"id", t.id},
              {"arch", {t.arch.n_features, t.arch.hidden, t.arch.n_classes}},
              {"reference", t.reference.freq},
              {"target_accuracy", t.target_accuracy},
              {"deadline", t.deadline},
              {"reward", t.reward}};
}

inline void validate_task(const Task& t) {
  if (!(t.target_accuracy > 0.0 && t.target_accuracy <= 1.0)) {
    throw Error(Errc::invalid_task, "accuracy target outside (0,1]");
  }
  if (!(t.deadline > t.publish_time)) throw Error(Errc::invalid_task, "deadline not after publish");
  if (t.arch.parameter_count() == 0) throw Error(Errc::invalid_task, "empty architecture");
}

inline Transaction publish_task(const Task& t) {
  validate_task(t);
  return Transaction{TxKind::task_publish, to_json(t), t.publisher, t.publish_time};
}

struct Credit {
  NodeId node;
  std::uint64_t amount = 0;
};

// Integer split of `reward` proportional to `weights` (largest remainder;
// ties to the earlier member). Sums to `reward` exactly.
inline std::vector<Credit> split_reward(std::uint64_t reward, std::span<const NodeId> members,
                                        std::span<const double> weights) {
  if (members.size() != weights.size() || members.empty()) {
    throw Error(Errc::invalid_config, "one weight per member required");
  }
  double total = 0.0;
  for (double w : weights) total += std::max(0.0, w);
  std::vector<Credit> out;
  std::vector<double> frac;
  std::uint64_t given = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double share = total > 0.0 ? std::max(0.0, weights[i]) / total
                                     : 1.0 / static_cast<double>(members.size());
    const double exact = share * static_cast<double>(reward);
    auto whole = static_cast<std::uint64_t>(std::floor(exact + 1e-9));
    whole = std::min(whole, reward - given);
    out.push_back({members[i], whole});
    frac.push_back(exact - static_cast<double>(whole));
    given += whole;
  }
  std::vector<std::size_t> order(members.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; given < reward; ++r, ++given) ++out[order[r % order.size()]].amount;
  return out;
}

inline Json credits_json(std::span<const Credit> credits) {
  Json arr = Json::array();
  for (const auto& c : credits) arr.push_back({c.node.value, c.amount});
  return arr;
}

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;

  void flag(std::uint64_t height, const std::string& what) {
    ok = false;
    violations.push_back("height " + std::to_string(height) + ": " + what);
  }
};

namespace detail {

inline void check_link(const Block* prev, const Block& b, ValidationReport& r) {
  if (block_hash(b) != b.hash) r.flag(b.height, "hash does not match contents");
  if (!prev) {
    if (b.height != 0 || b.prev_hash != genesis_prev_hash()) r.flag(b.height, "bad genesis");
    return;
  }
  if (b.prev_hash != prev->hash) r.flag(b.height, "hash link broken");
  if (b.height != prev->height + 1) r.flag(b.height, "height not consecutive");
  if (b.timestamp < prev->timestamp) r.flag(b.height, "timestamp decreased");
}

inline void check_contents(const Block& b, ValidationReport& r) {
  const Transaction* commit = nullptr;
  bool proof_seen = false;
  bool accepted_vote = false;
  for (std::size_t t = 0; t < b.txs.size(); ++t) {
    const auto& tx = b.txs[t];
    if (t > 0 && tx.kind < b.txs[t - 1].kind) {
      r.flag(b.height, std::string(tx_kind_name(tx.kind)) + " after " +
                           std::string(tx_kind_name(b.txs[t - 1].kind)));
    }
    if (tx.kind == TxKind::model_commit) commit = &tx;
    if (tx.kind == TxKind::proof_submit) {
      proof_seen = true;
      if (tx.payload.contains("challenge_seed")) {
        if (!commit) {
          r.flag(b.height, "proof without a prior model commitment");
        } else if (tx.payload.at("challenge_seed").get<std::string>() !=
                   to_hex(challenge_seed(b.prev_hash, *commit))) {
          r.flag(b.height, "challenge not derived from the commitment");
        }
      }
    }
    if (tx.kind == TxKind::verify_vote && tx.payload.value("accept", false)) accepted_vote = true;
  }
  if (proof_seen && !accepted_vote) r.flag(b.height, "proof without an accepting vote");
}

}  // namespace detail

// Hash links, heights, per-block transaction order, commit-then-challenge,
// one block per task, and verification gating.
inline ValidationReport validate_chain(std::span<const Block> blocks) {
  ValidationReport r;
  std::set<std::uint64_t> tasks;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    detail::check_link(i == 0 ? nullptr : &blocks[i - 1], b, r);
    if (b.task_id && !tasks.insert(*b.task_id).second) {
      r.flag(b.height, "second block for task " + std::to_string(*b.task_id));
    }
    detail::check_contents(b, r);
  }
  return r;
}

class Ledger {
 public:
  Ledger() {
    Block genesis;
    genesis.prev_hash = genesis_prev_hash();
    genesis.hash = block_hash(genesis);
    blocks_.push_back(std::move(genesis));
  }

  explicit Ledger(std::vector<Block> blocks) : blocks_(std::move(blocks)) {}

  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& tip() const { return blocks_.back(); }

  bool has_block_for(std::uint64_t task_id) const {
    return std::any_of(blocks_.begin(), blocks_.end(),
                       [&](const Block& b) { return b.task_id == task_id; });
  }

  // Reward goes into escrow until settlement.
  void open_task(const Task& t) {
    validate_task(t);
    escrow_.try_emplace(t.id, t.reward);
  }

  // Fills height/prev/hash and appends; rejects anything validate_chain
  // would flag.
  const Block& append(Block b) {
    b.height = tip().height + 1;
    b.prev_hash = tip().hash;
    b.hash = block_hash(b);
    ValidationReport report;
    detail::check_link(&tip(), b, report);
    detail::check_contents(b, report);
    if (b.task_id && has_block_for(*b.task_id)) report.flag(b.height, "task already has a block");
    if (!report.ok) throw Error(Errc::round_failed, report.violations.front());
    blocks_.push_back(std::move(b));
    return blocks_.back();
  }

  // Credits the RewardSettle transaction of the task's block. Returns false
  // (no-op) when the task was already settled.
  bool settle_reward(std::uint64_t task_id) {
    if (settled_.count(task_id)) return false;
    auto it = std::find_if(blocks_.begin(), blocks_.end(),
                           [&](const Block& b) { return b.task_id == task_id; });
    if (it == blocks_.end()) throw Error(Errc::round_failed, "no accepted block for task");
    const Transaction* settle = nullptr;
    for (const auto& tx : it->txs) {
      if (tx.kind == TxKind::reward_settle) settle = &tx;
    }
    if (!settle) throw Error(Errc::round_failed, "block carries no settlement");
    std::uint64_t total = 0;
    for (const auto& c : settle->payload.at("credits")) total += c.at(1).get<std::uint64_t>();
    auto esc = escrow_.find(task_id);
    const std::uint64_t available = esc == escrow_.end() ? 0 : esc->second;
    if (total > available) throw Error(Errc::round_failed, "settlement exceeds escrow");
    for (const auto& c : settle->payload.at("credits")) {
      balances_[c.at(0).get<std::uint32_t>()] += c.at(1).get<std::uint64_t>();
    }
    esc->second -= total;
    settled_.insert(task_id);
    return true;
  }

  std::uint64_t balance(NodeId n) const {
    auto it = balances_.find(n.value);
    return it == balances_.end() ? 0 : it->second;
  }

  std::uint64_t total_balances() const {
    std::uint64_t s = 0;
    for (const auto& [_, v] : balances_) s += v;
    return s;
  }

  std::uint64_t unspent_rewards() const {
    std::uint64_t s = 0;
    for (const auto& [_, v] : escrow_) s += v;
    return s;
  }

  ValidationReport validate() const { return validate_chain(blocks_); }

 private:
  std::vector<Block> blocks_;
  std::map<std::uint32_t, std::uint64_t> balances_;
  std::map<std::uint64_t, std::uint64_t> escrow_;
  std::set<std::uint64_t> settled_;
};

// Line-delimited export: a "block" record followed by one "tx" record per
// transaction.
inline void write_ledger(std::ostream& os, std::span<const Block> blocks) {
  for (const auto& b : blocks) {
    Json head = header_json(b);
    head.erase("txs");
    head["type"] = "block";
    head["hash"] = b.hash;
    head["tx_count"] = b.txs.size();
    os << head.dump() << '\n';
    for (std::size_t t = 0; t < b.txs.size(); ++t) {
      Json tx = to_json(b.txs[t]);
      tx["type"] = "tx";
      tx["height"] = b.height;
      tx["index"] = t;
      os << tx.dump() << '\n';
    }
  }
}

inline std::vector<Block> read_ledger(std::istream& is) {
  std::vector<Block> blocks;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "block") {
      Block b;
      b.height = j.at("height").get<std::uint64_t>();
      b.prev_hash = j.at("prev_hash").get<std::string>();
      b.timestamp = j.at("timestamp").get<double>();
      b.proposer = NodeId(j.at("proposer").get<std::size_t>());
      if (!j.at("task_id").is_null()) b.task_id = j.at("task_id").get<std::uint64_t>();
      b.commitment = j.at("commitment").get<std::string>();
      b.hash = j.at("hash").get<std::string>();
      blocks.push_back(std::move(b));
    } else if (type == "tx") {
      if (blocks.empty()) throw Error(Errc::io_error, "transaction before any block");
      blocks.back().txs.push_back(transaction_from_json(j));
    } else {
      throw Error(Errc::io_error, "unknown ledger record " + type);
    }
  }
  return blocks;
}

}  // namespace fedchain::chain
