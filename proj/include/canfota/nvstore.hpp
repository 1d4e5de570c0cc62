// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Boot-control flags in RTC backup registers and the flash-resident
// application metadata record.

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>

#include "canfota/common.hpp"
#include "canfota/flash.hpp"
#include "canfota/integrity.hpp"

namespace canfota::nv {

/// Survives a software reset; cleared by a power cycle.
class BackupRegisters {
 public:
  static constexpr std::size_t kCount = 20;

  std::uint32_t read(std::size_t index) const { return regs_.at(index); }
  void write(std::size_t index, std::uint32_t value) { regs_.at(index) = value; }
  void clear() { regs_.fill(0); }

 private:
  std::array<std::uint32_t, kCount> regs_{};
};

enum class BootFlag : std::uint32_t { Enter = 0xAA, NotEnter = 0x55 };

/// Register index of each flag.
enum class FlagRegister : std::size_t { ApplicationEnter = 0, BootloaderUpdaterEnter = 1 };

/// Anything but 0xAA decodes as NotEnter, so zeroed registers are safe.
BootFlag read_flag(const BackupRegisters& regs, FlagRegister which);
void write_flag(BackupRegisters& regs, FlagRegister which, BootFlag value);

const char* to_string(BootFlag flag);

class MalformedMetadata : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reserved slice at the tail of the application region.
inline constexpr std::size_t kMetadataSize = 1024;
inline constexpr std::size_t kSizeFieldLength = 16;

struct AppMetadata {
  std::uint32_t byte_count = 0;
  std::uint32_t image_crc = 0;
  integrity::BlockCrcTable block_table;

  /// Metadata describing `image` as stored in flash.
  static AppMetadata describe(ByteView image, std::size_t block_size = integrity::kDefaultBlockSize);

  friend bool operator==(const AppMetadata&, const AppMetadata&) = default;
};

/// [0,16) ASCII decimal byte count, NUL padded; [16,20) CRC LE; then the
/// serialized block table. Throws MalformedMetadata if it will not fit in
/// kMetadataSize.
Bytes encode_app_metadata(const AppMetadata& meta);

/// Accepts the raw metadata slice (trailing erased bytes are fine).
AppMetadata decode_app_metadata(ByteView bytes, std::size_t block_size = integrity::kDefaultBlockSize);

/// Device offset of the metadata slice for a layout.
std::size_t metadata_offset(const flash::FlashLayout& layout);

/// Largest image that fits in the application region in front of metadata.
std::size_t application_capacity(const flash::FlashLayout& layout);

}  // namespace canfota::nv
