// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Block-granular delta packages.
//
// Images are compared on a grid of fixed-size blocks. A block whose CRC
// differs becomes one entry carrying (offset, length, data) tuples for the
// differing byte runs, plus the CRC the patched block must have.
//
// Transfer savings are per block, but flash can only be erased per sector
// (16K-128K). program_delta() therefore reprograms whole sectors from a
// staged copy of the new image, and only the sectors that contain at least
// one changed block.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "canfota/common.hpp"
#include "canfota/flash.hpp"
#include "canfota/integrity.hpp"

namespace canfota::delta {

inline constexpr std::uint8_t kPackageVersion = 1;
inline constexpr std::size_t kHeaderSize = 19;
inline constexpr std::size_t kDefaultGapMerge = 8;

enum class DeltaErrc {
  EmptyImage,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  Malformed,
  BlockCrcMismatch,
  ImageCrcMismatch,
};

const char* to_string(DeltaErrc code);

class DeltaError : public std::runtime_error {
 public:
  DeltaError(DeltaErrc code, const std::string& what, std::optional<std::size_t> block = {})
      : std::runtime_error(what), code_(code), block_(block) {}

  DeltaErrc code() const { return code_; }
  std::optional<std::size_t> block_index() const { return block_; }

 private:
  DeltaErrc code_;
  std::optional<std::size_t> block_;
};

struct DeltaTuple {
  std::uint16_t offset = 0;  // within the block; length is data.size()
  Bytes data;

  friend bool operator==(const DeltaTuple&, const DeltaTuple&) = default;
};

struct DeltaEntry {
  std::uint16_t block_index = 0;
  std::uint32_t new_block_crc = 0;
  std::vector<DeltaTuple> tuples;

  friend bool operator==(const DeltaEntry&, const DeltaEntry&) = default;
};

struct DeltaPackage {
  std::uint32_t block_size = integrity::kDefaultBlockSize;
  std::uint32_t new_image_length = 0;
  std::uint32_t new_image_crc = 0;
  std::vector<DeltaEntry> entries;

  friend bool operator==(const DeltaPackage&, const DeltaPackage&) = default;
};

/// The shorter image is padded with 0xFF for comparison. Runs of differing
/// bytes separated by fewer than `gap_merge` equal bytes share one tuple.
DeltaPackage build_delta(ByteView old_image, ByteView new_image,
                         std::size_t block_size = integrity::kDefaultBlockSize,
                         std::size_t gap_merge = kDefaultGapMerge);

/// Little-endian: "FDP1" version block_size new_len new_crc entry_count, then
/// per entry block_index tuple_count new_block_crc and per tuple offset
/// length data.
Bytes encode_package(const DeltaPackage& pkg);
DeltaPackage decode_package(ByteView bytes);

/// Checks ordering and bounds invariants; throws DeltaError(Malformed).
void validate(const DeltaPackage& pkg);

/// Stages `base` at the new length (0xFF padded or truncated), patches it,
/// and verifies every touched block CRC and the whole-image CRC.
Bytes apply_delta(ByteView base, const DeltaPackage& pkg);

struct PackageStats {
  std::size_t blocks_changed = 0;
  std::size_t tuples = 0;
  std::size_t payload_bytes = 0;
  std::size_t package_bytes = 0;
  std::size_t full_image_bytes = 0;
  double reduction_ratio = 0.0;  // 1 - package/full
};

PackageStats package_stats(const DeltaPackage& pkg);

struct FlashStats {
  /// Sectors erased because they hold a changed block.
  std::size_t sectors_erased = 0;
  /// Erases of the metadata sector when it holds no changed block. The
  /// metadata record can only be rewritten after an erase, so every commit
  /// pays for one.
  std::size_t metadata_sector_erases = 0;
  std::size_t bytes_programmed = 0;
  Micros simulated_duration{0};
  std::vector<std::size_t> erased_sectors;
};

/// Writes a verified staged image into the application region. The
/// metadata sector is erased first and the new metadata record is written
/// last, so an interruption anywhere in between leaves no valid metadata.
FlashStats program_delta(flash::FlashDevice& device, ByteView staged_new_image, const DeltaPackage& pkg);

}  // namespace canfota::delta
