// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/integrity.hpp"

#include <array>

namespace canfota::integrity {
namespace {

constexpr std::uint32_t kPoly = 0x04C11DB7;

constexpr std::array<std::uint32_t, 256> make_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i << 24;
    for (int bit = 0; bit < 8; ++bit) c = (c & 0x80000000u) ? (c << 1) ^ kPoly : c << 1;
    table[i] = c;
  }
  return table;
}

constexpr auto kTable = make_table();

}  // namespace

std::uint32_t crc32_update(std::uint32_t crc, ByteView data) {
  for (auto b : data) crc = (crc << 8) ^ kTable[((crc >> 24) ^ b) & 0xFF];
  return crc;
}

std::uint32_t crc32(ByteView data) { return crc32_update(kCrcInit, data); }

std::size_t block_count(std::size_t image_length, std::size_t block_size) {
  return (image_length + block_size - 1) / block_size;
}

Bytes BlockCrcTable::serialize() const {
  Bytes out;
  out.reserve(serialized_size());
  put_le16(out, static_cast<std::uint16_t>(entries.size()));
  for (auto e : entries) put_le32(out, e);
  return out;
}

BlockCrcTable BlockCrcTable::deserialize(ByteView bytes, std::size_t block_size, std::size_t image_length) {
  if (bytes.size() < 2) throw MalformedTable("block table truncated before count");
  const std::size_t count = get_le16(bytes, 0);
  if (bytes.size() < 2 + 4 * count) throw MalformedTable("block table truncated");
  BlockCrcTable t;
  t.block_size = block_size;
  t.image_length = image_length;
  t.entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) t.entries.push_back(get_le32(bytes, 2 + 4 * i));
  return t;
}

BlockCrcTable block_crcs(ByteView image, std::size_t block_size) {
  if (image.empty()) throw EmptyImage();
  if (block_size == 0) throw std::invalid_argument("block size must be positive");
  BlockCrcTable t;
  t.block_size = block_size;
  t.image_length = image.size();
  const auto n = block_count(image.size(), block_size);
  t.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto start = i * block_size;
    t.entries.push_back(crc32(image.subspan(start, std::min(block_size, image.size() - start))));
  }
  return t;
}

}  // namespace canfota::integrity
