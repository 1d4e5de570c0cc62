// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/nvstore.hpp"

#include <string>

namespace canfota::nv {

BootFlag read_flag(const BackupRegisters& regs, FlagRegister which) {
  return regs.read(static_cast<std::size_t>(which)) == static_cast<std::uint32_t>(BootFlag::Enter)
             ? BootFlag::Enter
             : BootFlag::NotEnter;
}

void write_flag(BackupRegisters& regs, FlagRegister which, BootFlag value) {
  regs.write(static_cast<std::size_t>(which), static_cast<std::uint32_t>(value));
}

const char* to_string(BootFlag flag) { return flag == BootFlag::Enter ? "ENTER" : "N_ENTER"; }

AppMetadata AppMetadata::describe(ByteView image, std::size_t block_size) {
  AppMetadata m;
  m.byte_count = static_cast<std::uint32_t>(image.size());
  m.image_crc = integrity::crc32(image);
  m.block_table = integrity::block_crcs(image, block_size);
  return m;
}

Bytes encode_app_metadata(const AppMetadata& meta) {
  Bytes out;
  const auto digits = std::to_string(meta.byte_count);
  out.assign(digits.begin(), digits.end());
  out.resize(kSizeFieldLength, 0x00);
  put_le32(out, meta.image_crc);
  const auto table = meta.block_table.serialize();
  out.insert(out.end(), table.begin(), table.end());
  if (out.size() > kMetadataSize) {
    throw MalformedMetadata("metadata record of " + std::to_string(out.size()) + " bytes exceeds the reserved slice");
  }
  return out;
}

AppMetadata decode_app_metadata(ByteView bytes, std::size_t block_size) {
  if (bytes.size() < kSizeFieldLength + 4) throw MalformedMetadata("metadata truncated");
  std::size_t i = 0;
  std::uint64_t count = 0;
  while (i < kSizeFieldLength && bytes[i] >= '0' && bytes[i] <= '9') {
    count = count * 10 + (bytes[i] - '0');
    ++i;
  }
  if (i == 0) throw MalformedMetadata("size field does not start with a digit");
  if (i > 10 || count > 0xFFFFFFFFu) throw MalformedMetadata("size field too long");
  for (; i < kSizeFieldLength; ++i) {
    if (bytes[i] != 0x00) throw MalformedMetadata("size field not NUL padded");
  }
  AppMetadata m;
  m.byte_count = static_cast<std::uint32_t>(count);
  m.image_crc = get_le32(bytes, kSizeFieldLength);
  try {
    m.block_table = integrity::BlockCrcTable::deserialize(bytes.subspan(kSizeFieldLength + 4), block_size, m.byte_count);
  } catch (const integrity::MalformedTable& e) {
    throw MalformedMetadata(e.what());
  }
  if (m.block_table.entries.size() != integrity::block_count(m.byte_count, block_size)) {
    throw MalformedMetadata("block table size does not match byte count");
  }
  return m;
}

std::size_t metadata_offset(const flash::FlashLayout& layout) {
  return layout.region(flash::RegionId::Application).end() - kMetadataSize;
}

std::size_t application_capacity(const flash::FlashLayout& layout) {
  return layout.region(flash::RegionId::Application).size - kMetadataSize;
}

}  // namespace canfota::nv
