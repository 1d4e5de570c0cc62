// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "canfota/common.hpp"

namespace canfota::integrity {

inline constexpr std::size_t kDefaultBlockSize = 1024;

/// CRC-32/MPEG-2: poly 0x04C11DB7, init 0xFFFFFFFF, MSB first, no reflection,
/// no final xor. Matches the STM32 CRC peripheral fed byte-wise.
std::uint32_t crc32(ByteView data);

/// Continues a running CRC-32/MPEG-2 over more bytes.
std::uint32_t crc32_update(std::uint32_t crc, ByteView data);

inline constexpr std::uint32_t kCrcInit = 0xFFFFFFFF;

class EmptyImage : public std::invalid_argument {
 public:
  EmptyImage() : std::invalid_argument("image is empty") {}
};

class MalformedTable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BlockCrcTable {
  std::size_t block_size = kDefaultBlockSize;
  std::size_t image_length = 0;
  std::vector<std::uint32_t> entries;

  /// u16 LE count followed by one u32 LE per entry.
  Bytes serialize() const;
  std::size_t serialized_size() const { return 2 + 4 * entries.size(); }

  /// Parses a serialized table from the front of `bytes`; trailing bytes are
  /// ignored. Throws MalformedTable when truncated.
  static BlockCrcTable deserialize(ByteView bytes, std::size_t block_size, std::size_t image_length);

  friend bool operator==(const BlockCrcTable&, const BlockCrcTable&) = default;
};

std::size_t block_count(std::size_t image_length, std::size_t block_size);

/// Entry i covers image[i*B, min((i+1)*B, len)); the last block is hashed at
/// its real length.
BlockCrcTable block_crcs(ByteView image, std::size_t block_size = kDefaultBlockSize);

enum class CrcResult { Succeeded, Failed };

inline CrcResult crc_compare(std::uint32_t calculated, std::uint32_t stored) {
  return calculated == stored ? CrcResult::Succeeded : CrcResult::Failed;
}

}  // namespace canfota::integrity
