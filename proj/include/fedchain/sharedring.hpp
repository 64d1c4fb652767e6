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
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedchain/error.hpp"
#include "fedchain/fixed_point.hpp"
#include "fedchain/random.hpp"

// Secret-sharing ring all-reduce over fixed-point words.
//
// Ring position k owns slot k. The owner adds private noise b_k to its own
// chunk and starts the slot's chain: |p|-1 accumulate hops k -> k+1 -> ... ->
// k-1, one return hop k-1 -> k that hands the owner b_k + sum, the owner
// strips b_k, then |p|-1 gather hops circulate the finished slot. Every
// message of the reduce and return phases carries b_k.
namespace fedchain::sharedring {

using fixed::Word;

template <typename T>
using ChunkSplit = std::vector<std::vector<T>>;

// Contiguous balanced chunks; the first (M mod parts) chunks hold one extra.
struct ChunkLayout {
  std::vector<std::size_t> offsets;  // parts + 1 entries

  std::size_t parts() const { return offsets.size() - 1; }
  std::size_t total() const { return offsets.back(); }
  std::size_t begin(std::size_t j) const { return offsets[j]; }
  std::size_t length(std::size_t j) const { return offsets[j + 1] - offsets[j]; }
};

inline ChunkLayout balanced_layout(std::size_t total, std::size_t parts) {
  if (parts == 0) throw Error(Errc::invalid_config, "split into zero parts");
  if (total < parts) throw Error(Errc::model_too_small, "model shorter than pool size");
  ChunkLayout layout;
  layout.offsets.reserve(parts + 1);
  const std::size_t base = total / parts;
  const std::size_t extra = total % parts;
  std::size_t at = 0;
  layout.offsets.push_back(0);
  for (std::size_t j = 0; j < parts; ++j) {
    at += base + (j < extra ? 1 : 0);
    layout.offsets.push_back(at);
  }
  return layout;
}

template <typename T>
ChunkSplit<T> split(std::span<const T> w, std::size_t parts) {
  const ChunkLayout layout = balanced_layout(w.size(), parts);
  ChunkSplit<T> chunks(parts);
  for (std::size_t j = 0; j < parts; ++j) {
    auto first = w.begin() + static_cast<std::ptrdiff_t>(layout.begin(j));
    chunks[j].assign(first, first + static_cast<std::ptrdiff_t>(layout.length(j)));
  }
  return chunks;
}

template <typename T>
ChunkSplit<T> split(const std::vector<T>& w, std::size_t parts) {
  return split(std::span<const T>(w), parts);
}

template <typename T>
std::vector<T> concat(const ChunkSplit<T>& chunks) {
  std::vector<T> out;
  for (const auto& c : chunks) out.insert(out.end(), c.begin(), c.end());
  return out;
}

// Payload weight of a chunk message: max(1, round(c * S / M)).
inline std::uint64_t chunk_size_units(std::size_t chunk_len, std::size_t model_len,
                                      double model_size_units = 10.0) {
  const double units = std::round(static_cast<double>(chunk_len) * model_size_units /
                                  static_cast<double>(model_len));
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(units));
}

struct NoiseMask {
  std::vector<Word> values;
  std::uint64_t seed = 0;
};

// b_i, uniform over [0, 2^width_bits); width 0 yields an all-zero mask.
inline NoiseMask generate_noise(std::size_t length, std::uint64_t seed, unsigned width_bits = 64) {
  NoiseMask mask{std::vector<Word>(length, 0), seed};
  if (width_bits == 0) return mask;
  Rng rng(derive_seed(seed, "noise"));
  const Word keep = width_bits >= 64 ? ~Word{0} : (Word{1} << width_bits) - 1;
  for (auto& v : mask.values) v = rng.next_u64() & keep;
  return mask;
}

inline void add_into(std::vector<Word>& acc, std::span<const Word> x) {
  if (acc.size() != x.size()) throw Error(Errc::mask_shape_error, "chunk length mismatch");
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += x[k];
}

inline ChunkSplit<Word> mask_own_chunk(ChunkSplit<Word> chunks, std::size_t own,
                                       const NoiseMask& mask) {
  if (own >= chunks.size() || chunks[own].size() != mask.values.size()) {
    throw Error(Errc::mask_shape_error, "noise length differs from own chunk");
  }
  add_into(chunks[own], mask.values);
  return chunks;
}

inline std::vector<Word> unmask_own_sum(std::vector<Word> acc, const NoiseMask& mask) {
  if (acc.size() != mask.values.size()) {
    throw Error(Errc::mask_shape_error, "noise length differs from accumulated chunk");
  }
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] -= mask.values[k];
  return acc;
}

// Hardened mode: pairwise shares on every slot that cancel over the pool.
// Position a adds r_ab and position b subtracts it, for every a < b.
inline void apply_pairwise_shares(ChunkSplit<Word>& chunks, std::size_t position,
                                  std::size_t pool_size, std::uint64_t session_seed) {
  for (std::size_t other = 0; other < pool_size; ++other) {
    if (other == position) continue;
    const std::size_t a = std::min(position, other);
    const std::size_t b = std::max(position, other);
    Rng rng(derive_seed(session_seed, "pair-share", a * pool_size + b));
    for (auto& chunk : chunks) {
      for (auto& w : chunk) {
        const Word r = rng.next_u64();
        w = position == a ? w + r : w - r;
      }
    }
  }
}

enum class Phase { reduce, back, gather };

struct Hop {
  std::size_t hop = 0;    // emission order within the session
  std::size_t round = 0;  // FL round the session belongs to
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t slot = 0;
  std::size_t step = 0;  // index within the slot's phase
  Phase phase = Phase::reduce;
  std::vector<Word> data;

  bool masked() const { return phase != Phase::gather; }
};

using Transcript = std::vector<Hop>;

// Line format: hop,round,from,to,slot,masked
inline void write_transcript(std::ostream& os, const Transcript& t) {
  for (const auto& h : t) {
    os << h.hop << ',' << h.round << ',' << h.from << ',' << h.to << ',' << h.slot << ','
       << (h.masked() ? "true" : "false") << '\n';
  }
}

// Protocol state for one pool and one round. Transport-agnostic: callers feed
// hops back through deliver() in any causal order (a FIFO queue or netsim).
class RingSession {
 public:
  RingSession(std::size_t pool_size, ChunkLayout layout, std::size_t round = 0)
      : p_(pool_size), layout_(std::move(layout)), round_(round), miners_(pool_size) {
    if (p_ == 0 || layout_.parts() != p_) throw Error(Errc::mask_shape_error, "layout/pool mismatch");
    for (auto& m : miners_) m.finished.resize(p_);
  }

  std::size_t pool_size() const { return p_; }
  std::size_t round() const { return round_; }
  const ChunkLayout& layout() const { return layout_; }

  bool contributed(std::size_t i) const { return miners_[i].contributed; }

  // Miner i hands in its masked split. With a mask, the owner strips it
  // itself when the return hop arrives and starts the gather phase.
  std::vector<Hop> contribute(std::size_t i, ChunkSplit<Word> masked_split,
                              std::optional<NoiseMask> mask = std::nullopt) {
    check_position(i);
    if (masked_split.size() != p_) throw Error(Errc::mask_shape_error, "split has wrong part count");
    for (std::size_t j = 0; j < p_; ++j) {
      if (masked_split[j].size() != layout_.length(j)) {
        throw Error(Errc::mask_shape_error, "chunk length differs from layout");
      }
    }
    auto& m = miners_[i];
    m.split = std::move(masked_split);
    m.mask = std::move(mask);
    m.contributed = true;

    std::vector<Hop> out;
    if (p_ == 1) {
      m.masked_total = m.split[0];
      if (m.mask) return start_gather(0, unmask_own_sum(m.split[0], *m.mask));
      return out;
    }
    out.push_back(make_hop(i, next(i), i, 0, Phase::reduce, m.split[i]));
    return out;
  }

  std::vector<Hop> deliver(const Hop& h) {
    check_position(h.to);
    std::vector<Hop> out;
    auto& m = miners_[h.to];
    switch (h.phase) {
      case Phase::reduce: {
        if (!m.contributed) throw Error(Errc::ring_broken, "reduce hop reached an idle miner");
        std::vector<Word> acc = h.data;
        add_into(acc, m.split[h.slot]);
        if (h.step + 1 < p_ - 1) {
          out.push_back(make_hop(h.to, next(h.to), h.slot, h.step + 1, Phase::reduce, std::move(acc)));
        } else {
          out.push_back(make_hop(h.to, h.slot, h.slot, 0, Phase::back, std::move(acc)));
        }
        break;
      }
      case Phase::back: {
        m.masked_total = h.data;
        if (m.mask) return start_gather(h.slot, unmask_own_sum(h.data, *m.mask));
        break;
      }
      case Phase::gather: {
        m.finished[h.slot] = h.data;
        if (h.step + 1 < p_ - 1) {
          out.push_back(make_hop(h.to, next(h.to), h.slot, h.step + 1, Phase::gather, h.data));
        }
        break;
      }
    }
    return out;
  }

  // Owner k publishes its finished slot sum to the ring.
  std::vector<Hop> start_gather(std::size_t k, std::vector<Word> slot_sum) {
    check_position(k);
    if (slot_sum.size() != layout_.length(k)) throw Error(Errc::mask_shape_error, "slot length");
    std::vector<Hop> out;
    miners_[k].finished[k] = slot_sum;
    if (p_ > 1) out.push_back(make_hop(k, next(k), k, 0, Phase::gather, std::move(slot_sum)));
    return out;
  }

  // b_k + sum held by owner k after the return hop.
  const std::optional<std::vector<Word>>& owner_masked_total(std::size_t k) const {
    return miners_[k].masked_total;
  }

  bool complete(std::size_t i) const {
    const auto& f = miners_[i].finished;
    return std::all_of(f.begin(), f.end(), [](const auto& s) { return s.has_value(); });
  }

  std::vector<Word> result(std::size_t i) const {
    if (!complete(i)) throw Error(Errc::ring_broken, "all-reduce incomplete at miner");
    std::vector<Word> out;
    out.reserve(layout_.total());
    for (const auto& s : miners_[i].finished) out.insert(out.end(), s->begin(), s->end());
    return out;
  }

  std::size_t hops_emitted() const { return hop_counter_; }

 private:
  struct MinerState {
    bool contributed = false;
    ChunkSplit<Word> split;
    std::optional<NoiseMask> mask;
    std::optional<std::vector<Word>> masked_total;
    std::vector<std::optional<std::vector<Word>>> finished;
  };

  std::size_t next(std::size_t i) const { return (i + 1) % p_; }

  void check_position(std::size_t i) const {
    if (i >= p_) throw Error(Errc::ring_broken, "ring position out of range");
  }

  Hop make_hop(std::size_t from, std::size_t to, std::size_t slot, std::size_t step, Phase phase,
               std::vector<Word> data) {
    return Hop{hop_counter_++, round_, from, to, slot, step, phase, std::move(data)};
  }

  std::size_t p_;
  ChunkLayout layout_;
  std::size_t round_;
  std::vector<MinerState> miners_;
  std::size_t hop_counter_ = 0;
};

namespace detail {

inline void drain(RingSession& session, std::deque<Hop> queue, Transcript* transcript) {
  while (!queue.empty()) {
    Hop h = std::move(queue.front());
    queue.pop_front();
    for (auto& out : session.deliver(h)) queue.push_back(std::move(out));
    if (transcript) transcript->push_back(std::move(h));
  }
}

inline ChunkLayout common_layout(const std::vector<ChunkSplit<Word>>& splits) {
  if (splits.empty()) throw Error(Errc::ring_broken, "empty pool");
  ChunkLayout layout;
  layout.offsets.push_back(0);
  for (const auto& c : splits.front()) layout.offsets.push_back(layout.offsets.back() + c.size());
  return layout;
}

}  // namespace detail

// Runs the reduce and return phases; entry k is b_k + sum of slot k.
inline std::vector<std::vector<Word>> ring_reduce_scatter(
    const std::vector<ChunkSplit<Word>>& masked_splits, Transcript* transcript = nullptr,
    std::size_t round = 0) {
  const std::size_t p = masked_splits.size();
  RingSession session(p, detail::common_layout(masked_splits), round);
  std::deque<Hop> queue;
  for (std::size_t i = 0; i < p; ++i) {
    for (auto& h : session.contribute(i, masked_splits[i])) queue.push_back(std::move(h));
  }
  detail::drain(session, std::move(queue), transcript);
  std::vector<std::vector<Word>> totals;
  for (std::size_t k = 0; k < p; ++k) {
    if (!session.owner_masked_total(k)) throw Error(Errc::ring_broken, "slot never returned");
    totals.push_back(*session.owner_masked_total(k));
  }
  return totals;
}

// Circulates each owner's finished slot; entry i is miner i's full vector.
inline std::vector<std::vector<Word>> ring_allgather(const std::vector<std::vector<Word>>& slot_sums,
                                                     Transcript* transcript = nullptr,
                                                     std::size_t round = 0) {
  const std::size_t p = slot_sums.size();
  if (p == 0) throw Error(Errc::ring_broken, "empty pool");
  ChunkLayout layout;
  layout.offsets.push_back(0);
  for (const auto& s : slot_sums) layout.offsets.push_back(layout.offsets.back() + s.size());
  RingSession session(p, std::move(layout), round);
  std::deque<Hop> queue;
  for (std::size_t k = 0; k < p; ++k) {
    for (auto& h : session.start_gather(k, slot_sums[k])) queue.push_back(std::move(h));
  }
  detail::drain(session, std::move(queue), transcript);
  std::vector<std::vector<Word>> out;
  for (std::size_t i = 0; i < p; ++i) out.push_back(session.result(i));
  return out;
}

struct RingOptions {
  unsigned noise_width_bits = 64;
  bool mask_all_slots = false;
};

// Noise seed for ring position i in a session.
inline std::uint64_t miner_noise_seed(std::uint64_t session_seed, std::size_t position) {
  return derive_seed(session_seed, "miner-noise", position);
}

// Masks miner i's vector for a session: split, optional pairwise shares, own
// slot noise. Returns the masked split and the private mask.
inline std::pair<ChunkSplit<Word>, NoiseMask> prepare_contribution(
    std::span<const Word> model, std::size_t position, std::size_t pool_size,
    std::uint64_t session_seed, const RingOptions& opts = {}) {
  ChunkSplit<Word> chunks = split(model, pool_size);
  if (opts.mask_all_slots) apply_pairwise_shares(chunks, position, pool_size, session_seed);
  NoiseMask mask = generate_noise(chunks[position].size(), miner_noise_seed(session_seed, position),
                                  opts.noise_width_bits);
  return {mask_own_chunk(std::move(chunks), position, mask), std::move(mask)};
}

// Full masked all-reduce of equal-length vectors; entry i is what miner i
// ends with (every entry equals the wrapping sum of the inputs).
inline std::vector<std::vector<Word>> all_reduce(const std::vector<std::vector<Word>>& models,
                                                 std::uint64_t session_seed,
                                                 const RingOptions& opts = {},
                                                 Transcript* transcript = nullptr,
                                                 std::size_t round = 0) {
  const std::size_t p = models.size();
  if (p == 0) throw Error(Errc::ring_broken, "empty pool");
  for (const auto& m : models) {
    if (m.size() != models.front().size()) throw Error(Errc::mask_shape_error, "model lengths differ");
  }
  RingSession session(p, balanced_layout(models.front().size(), p), round);
  std::deque<Hop> queue;
  for (std::size_t i = 0; i < p; ++i) {
    auto [masked, mask] = prepare_contribution(models[i], i, p, session_seed, opts);
    for (auto& h : session.contribute(i, std::move(masked), std::move(mask))) {
      queue.push_back(std::move(h));
    }
  }
  detail::drain(session, std::move(queue), transcript);
  std::vector<std::vector<Word>> out;
  for (std::size_t i = 0; i < p; ++i) out.push_back(session.result(i));
  return out;
}

struct LeakageReport {
  bool passed = true;
  std::size_t messages_checked = 0;
  std::size_t raw_matches = 0;          // masked-phase payload equal to another miner's raw chunk
  std::size_t unmasked_first_hops = 0;  // owner's opening hop equal to its raw chunk
  std::vector<std::string> findings;
};

// Scans what `observer` received in the masked phases. raw_splits[m] is miner
// m's unmasked split.
inline LeakageReport transcript_leakage_check(const Transcript& transcript, std::size_t observer,
                                              const std::vector<ChunkSplit<Word>>& raw_splits) {
  LeakageReport report;
  for (const auto& h : transcript) {
    if (h.to != observer || !h.masked()) continue;
    ++report.messages_checked;
    for (std::size_t m = 0; m < raw_splits.size(); ++m) {
      if (m == observer || raw_splits[m][h.slot] != h.data) continue;
      ++report.raw_matches;
      report.findings.push_back("hop " + std::to_string(h.hop) + ": miner " +
                                std::to_string(observer) + " saw raw chunk " +
                                std::to_string(h.slot) + " of miner " + std::to_string(m));
    }
    if (h.phase == Phase::reduce && h.step == 0 && h.from == h.slot &&
        raw_splits[h.slot][h.slot] == h.data) {
      ++report.unmasked_first_hops;
    }
  }
  report.passed = report.raw_matches == 0 && report.unmasked_first_hops == 0;
  return report;
}

inline LeakageReport transcript_leakage_check(const Transcript& transcript,
                                              const std::vector<ChunkSplit<Word>>& raw_splits) {
  LeakageReport all;
  for (std::size_t j = 0; j < raw_splits.size(); ++j) {
    auto r = transcript_leakage_check(transcript, j, raw_splits);
    all.messages_checked += r.messages_checked;
    all.raw_matches += r.raw_matches;
    all.unmasked_first_hops += r.unmasked_first_hops;
    for (auto& f : r.findings) all.findings.push_back(std::move(f));
  }
  all.passed = all.raw_matches == 0 && all.unmasked_first_hops == 0;
  return all;
}

}  // namespace fedchain::sharedring
