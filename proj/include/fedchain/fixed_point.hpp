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
#include <vector>

#include "fedchain/error.hpp"

namespace fedchain::fixed {

// Q39.24 two's-complement words. Ring arithmetic runs on the unsigned image
// (mod 2^64) so additive masks cancel exactly regardless of wraparound.
inline constexpr int kFractionBits = 24;
inline constexpr double kScale = 16777216.0;  // 2^24
inline constexpr double kMaxMagnitude = 549755813888.0;  // 2^39

using Word = std::uint64_t;

inline Word encode(double x) {
  if (!std::isfinite(x) || std::fabs(x) >= kMaxMagnitude) {
    throw Error(Errc::value_out_of_range, "value outside fixed-point range");
  }
  return static_cast<Word>(static_cast<std::int64_t>(std::llround(x * kScale)));
}

inline double decode(Word w) { return static_cast<double>(static_cast<std::int64_t>(w)) / kScale; }

inline std::vector<Word> encode(std::span<const double> xs) {
  std::vector<Word> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(encode(x));
  return out;
}

inline std::vector<double> decode(std::span<const Word> ws) {
  std::vector<double> out;
  out.reserve(ws.size());
  for (Word w : ws) out.push_back(decode(w));
  return out;
}

// Rounds every value onto the fixed-point grid.
inline std::vector<double> quantize(std::span<const double> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(decode(encode(x)));
  return out;
}

}  // namespace fedchain::fixed
