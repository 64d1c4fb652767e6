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

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedchain {

using Bytes = std::vector<std::uint8_t>;

enum class HashAlgorithm { sha256, sha512 };

// Incremental hash over OpenSSL EVP.
class Hasher {
 public:
  explicit Hasher(HashAlgorithm alg = HashAlgorithm::sha256) : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_) throw std::runtime_error("EVP_MD_CTX_new failed");
    const EVP_MD* md = alg == HashAlgorithm::sha256 ? EVP_sha256() : EVP_sha512();
    if (EVP_DigestInit_ex(ctx_.get(), md, nullptr) != 1) {
      throw std::runtime_error("EVP_DigestInit_ex failed");
    }
  }

  Hasher& update(std::span<const std::uint8_t> data) {
    EVP_DigestUpdate(ctx_.get(), data.data(), data.size());
    return *this;
  }

  Hasher& update(std::string_view s) {
    EVP_DigestUpdate(ctx_.get(), s.data(), s.size());
    return *this;
  }

  Hasher& update_u64(std::uint64_t v) {
    std::array<std::uint8_t, 8> le{};
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return update(le);
  }

  Bytes finish() {
    Bytes out(EVP_MAX_MD_SIZE);
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
    out.resize(len);
    return out;
  }

 private:
  struct Free {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
  };
  std::unique_ptr<EVP_MD_CTX, Free> ctx_;
};

inline Bytes sha256(std::string_view s) { return Hasher().update(s).finish(); }
inline Bytes sha256(std::span<const std::uint8_t> s) { return Hasher().update(s).finish(); }

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("bad hex digit");
  };
  if (hex.size() % 2 != 0) throw std::invalid_argument("odd hex length");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

// First eight bytes of a digest as a little-endian integer (seed material).
inline std::uint64_t digest_prefix_u64(std::span<const std::uint8_t> d) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8 && i < d.size(); ++i) v |= std::uint64_t{d[i]} << (8 * i);
  return v;
}

// Number of leading zero bits in a digest.
inline unsigned leading_zero_bits(std::span<const std::uint8_t> d) {
  unsigned n = 0;
  for (auto b : d) {
    if (b == 0) {
      n += 8;
      continue;
    }
    for (int bit = 7; bit >= 0 && !(b >> bit & 1); --bit) ++n;
    break;
  }
  return n;
}

}  // namespace fedchain
