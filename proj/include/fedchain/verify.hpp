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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedchain/digest.hpp"
#include "fedchain/error.hpp"
#include "fedchain/fed.hpp"
#include "fedchain/fixed_point.hpp"
#include "fedchain/random.hpp"

// Model-accuracy verification with the KeyGen / Commit / Prove / Verify
// interface of a zkCNN-style prover, realized as a transparent hash
// commitment.
//
// NOT zero-knowledge: a proof opens the committed model (canonical
// serialization plus blinding) so the verifier can replay the predictions.
// Soundness rests on collision resistance of the digest. The four calls keep
// their shape so a real ZK backend can replace this one.
namespace fedchain::verify {

inline constexpr std::string_view kDomainTag = "fedchain/model-commitment/v1";

struct PublicParams {
  unsigned lambda = 128;
  std::string tag{kDomainTag};
  Bytes nonce;  // r_v, lambda / 8 bytes

  HashAlgorithm algorithm() const {
    return lambda == 128 ? HashAlgorithm::sha256 : HashAlgorithm::sha512;
  }
};

inline PublicParams keygen(unsigned lambda, std::uint64_t verifier_seed) {
  if (lambda != 128 && lambda != 256) {
    throw Error(Errc::unsupported_security_parameter, "lambda must be 128 or 256");
  }
  PublicParams pp{lambda, std::string(kDomainTag), {}};
  for (std::uint64_t attempt = 0;; ++attempt) {
    Bytes d = Hasher(HashAlgorithm::sha512)
                  .update("fedchain/keygen")
                  .update_u64(lambda)
                  .update_u64(verifier_seed)
                  .update_u64(attempt)
                  .finish();
    d.resize(lambda / 8);
    bool nonzero = false;
    for (auto b : d) nonzero |= b != 0;
    if (nonzero) {
      pp.nonce = std::move(d);
      return pp;
    }
  }
}

inline Bytes make_blinding(std::uint64_t seed, unsigned lambda = 128) {
  Bytes r = Hasher(HashAlgorithm::sha512).update("fedchain/blinding").update_u64(seed).finish();
  r.resize(lambda / 8);
  return r;
}

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{in[at + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr std::size_t kHeaderBytes = 4 + 3 * 4 + 8;

// "FCM1" | u32 n_features | u32 hidden | u32 n_classes | u64 M | M x i64
// fixed-point words, all little-endian.
inline Bytes serialize_model(const fed::Model& m) {
  Bytes out{'F', 'C', 'M', '1'};
  out.reserve(kHeaderBytes + 8 * m.weights.size());
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch.n_features));
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch.hidden));
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch.n_classes));
  detail::put_u64(out, m.weights.size());
  for (double w : m.weights) detail::put_u64(out, fixed::encode(w));
  return out;
}

inline fed::Model deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || bytes[0] != 'F' || bytes[1] != 'C' || bytes[2] != 'M' ||
      bytes[3] != '1') {
    throw Error(Errc::io_error, "not a serialized model");
  }
  fed::Model m;
  m.arch.n_features = detail::get_le(bytes, 4, 4);
  m.arch.hidden = detail::get_le(bytes, 8, 4);
  m.arch.n_classes = detail::get_le(bytes, 12, 4);
  const std::uint64_t count = detail::get_le(bytes, 16, 8);
  if (count != m.arch.parameter_count() || bytes.size() != kHeaderBytes + 8 * count) {
    throw Error(Errc::io_error, "serialized model length mismatch");
  }
  m.weights.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    m.weights.push_back(fixed::decode(detail::get_le(bytes, kHeaderBytes + 8 * k, 8)));
  }
  return m;
}

struct ModelCommitment {
  Bytes digest;

  friend bool operator==(const ModelCommitment&, const ModelCommitment&) = default;
};

inline ModelCommitment commit_serialized(std::span<const std::uint8_t> opening, const PublicParams& pp,
                                         std::span<const std::uint8_t> r) {
  return {Hasher(pp.algorithm())
              .update(pp.tag)
              .update(pp.nonce)
              .update("commit")
              .update_u64(opening.size())
              .update(opening)
              .update(r)
              .finish()};
}

// com_{m_p} = H(tag | r_v | serialize(m_p) | r).
inline ModelCommitment commit(const fed::Model& m, const PublicParams& pp,
                              std::span<const std::uint8_t> r) {
  return commit_serialized(serialize_model(m), pp, r);
}

struct PredictionProof {
  Bytes opening;  // canonical model serialization
  Bytes blinding;
  std::vector<Bytes> trace;  // per-sample execution digest chain
};

struct Prediction {
  std::vector<std::size_t> y;
  PredictionProof proof;
};

namespace detail {

inline Bytes trace_step(const PublicParams& pp, std::span<const std::uint8_t> prev,
                        std::span<const double> x, std::size_t label,
                        std::span<const double> logits) {
  Hasher h(pp.algorithm());
  h.update(pp.tag).update("trace").update(prev);
  for (double v : x) h.update_u64(fixed::encode(v));
  h.update_u64(label);
  for (double z : logits) h.update_u64(fixed::encode(z));
  return h.finish();
}

inline std::vector<double> logits_of(const fed::Model& m, std::span<const double> x) {
  return fed::detail::forward_pass(m, x).logits;
}

}  // namespace detail

// Predictions on the challenge batch X plus the opening that lets a verifier
// replay them against the commitment.
inline Prediction prove(const fed::Model& m, const fed::Dataset& X, const PublicParams& pp,
                        std::span<const std::uint8_t> r) {
  if (X.size() == 0) throw Error(Errc::empty_challenge, "no challenge samples");
  Prediction out;
  out.proof.opening = serialize_model(m);
  out.proof.blinding.assign(r.begin(), r.end());
  const fed::Model committed = deserialize_model(out.proof.opening);
  Bytes prev = commit_serialized(out.proof.opening, pp, r).digest;
  for (std::size_t k = 0; k < X.size(); ++k) {
    const auto logits = detail::logits_of(committed, X.row(k));
    const auto label = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    out.y.push_back(label);
    prev = detail::trace_step(pp, prev, X.row(k), label, logits);
    out.proof.trace.push_back(prev);
  }
  return out;
}

struct Verdict {
  bool accepted = false;
  double accuracy = 0.0;  // fraction of y matching X's labels
  std::string reason;
};

inline Verdict verify(const ModelCommitment& com, const fed::Dataset& X,
                      std::span<const std::size_t> y, const PredictionProof& proof,
                      const PublicParams& pp) {
  Verdict v;
  if (X.size() == 0) {
    v.reason = "empty challenge";
    return v;
  }
  if (y.size() != X.size() || proof.trace.size() != X.size()) {
    v.reason = "prediction count mismatch";
    return v;
  }
  if (commit_serialized(proof.opening, pp, proof.blinding) != com) {
    v.reason = "opening does not match commitment";
    return v;
  }
  fed::Model m;
  try {
    m = deserialize_model(proof.opening);
  } catch (const Error&) {
    v.reason = "malformed opening";
    return v;
  }
  if (m.arch.n_features != X.n_features || m.arch.n_classes != X.n_classes) {
    v.reason = "model shape differs from challenge";
    return v;
  }
  Bytes prev = com.digest;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    const auto logits = detail::logits_of(m, X.row(k));
    const auto label = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (label != y[k]) {
      v.reason = "prediction " + std::to_string(k) + " does not replay";
      return v;
    }
    prev = detail::trace_step(pp, prev, X.row(k), label, logits);
    if (prev != proof.trace[k]) {
      v.reason = "execution trace mismatch at " + std::to_string(k);
      return v;
    }
    correct += y[k] == X.y[k];
  }
  v.accepted = true;
  v.accuracy = static_cast<double>(correct) / static_cast<double>(X.size());
  return v;
}

inline constexpr std::size_t kMinChallengeSamples = 200;

// One-sided 99% binomial margin: 2.326 * sqrt(c (1 - c) / K).
inline double accuracy_margin(double claimed, std::size_t k) {
  return 2.326 * std::sqrt(claimed * (1.0 - claimed) / static_cast<double>(k));
}

inline bool accuracy_claim_check(double measured, double claimed, std::size_t k,
                                 std::size_t k_min = kMinChallengeSamples) {
  if (k < k_min) throw Error(Errc::insufficient_samples, "too few challenge samples");
  return measured >= claimed - accuracy_margin(claimed, k);
}

// K distinct indices into the held-out set, seeded by a commitment digest.
inline std::vector<std::size_t> derive_challenge(std::span<const std::uint8_t> seed_digest,
                                                 std::size_t heldout_size, std::size_t k) {
  if (k == 0) throw Error(Errc::empty_challenge, "challenge of size zero");
  if (k > heldout_size) throw Error(Errc::insufficient_samples, "held-out set smaller than K");
  Rng rng(derive_seed(digest_prefix_u64(seed_digest), "challenge"));
  std::vector<std::size_t> idx(heldout_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(heldout_size - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace fedchain::verify
