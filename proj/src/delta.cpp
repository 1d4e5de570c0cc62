// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/delta.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "canfota/nvstore.hpp"

namespace canfota::delta {
namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'D', 'P', '1'};

std::uint8_t at_or_erased(ByteView image, std::size_t i) { return i < image.size() ? image[i] : 0xFF; }

std::size_t block_length(std::size_t image_length, std::size_t block_size, std::size_t index) {
  return std::min(block_size, image_length - index * block_size);
}

class Reader {
 public:
  explicit Reader(ByteView bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DeltaError(DeltaErrc::Truncated, "package truncated");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    auto v = get_le16(bytes_, pos_);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    auto v = get_le32(bytes_, pos_);
    pos_ += 4;
    return v;
  }
  ByteView take(std::size_t n) {
    need(n);
    auto v = bytes_.subspan(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  ByteView bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* to_string(DeltaErrc code) {
  switch (code) {
    case DeltaErrc::EmptyImage: return "EmptyImage";
    case DeltaErrc::BadMagic: return "BadMagic";
    case DeltaErrc::UnsupportedVersion: return "UnsupportedVersion";
    case DeltaErrc::Truncated: return "Truncated";
    case DeltaErrc::Malformed: return "Malformed";
    case DeltaErrc::BlockCrcMismatch: return "BlockCrcMismatch";
    case DeltaErrc::ImageCrcMismatch: return "ImageCrcMismatch";
  }
  return "?";
}

DeltaPackage build_delta(ByteView old_image, ByteView new_image, std::size_t block_size, std::size_t gap_merge) {
  if (old_image.empty() || new_image.empty()) throw DeltaError(DeltaErrc::EmptyImage, "image is empty");
  if (block_size == 0 || block_size > 0xFFFF) throw std::invalid_argument("block size must be in [1, 65535]");
  const auto blocks = integrity::block_count(new_image.size(), block_size);
  if (blocks > 0x10000) throw std::invalid_argument("image has more than 65536 blocks");

  DeltaPackage pkg;
  pkg.block_size = static_cast<std::uint32_t>(block_size);
  pkg.new_image_length = static_cast<std::uint32_t>(new_image.size());
  pkg.new_image_crc = integrity::crc32(new_image);

  Bytes old_block(block_size);
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto start = b * block_size;
    const auto len = block_length(new_image.size(), block_size, b);
    for (std::size_t i = 0; i < len; ++i) old_block[i] = at_or_erased(old_image, start + i);
    const auto new_block = new_image.subspan(start, len);
    const auto new_crc = integrity::crc32(new_block);
    if (integrity::crc32(ByteView(old_block).first(len)) == new_crc) continue;

    DeltaEntry entry;
    entry.block_index = static_cast<std::uint16_t>(b);
    entry.new_block_crc = new_crc;
    std::size_t i = 0;
    while (i < len) {
      if (old_block[i] == new_block[i]) {
        ++i;
        continue;
      }
      const std::size_t run_start = i;
      std::size_t run_end = i + 1;  // one past the last differing byte
      std::size_t j = run_end;
      while (j < len) {
        if (old_block[j] != new_block[j]) {
          run_end = ++j;
        } else if (j - run_end + 1 < gap_merge) {
          ++j;
        } else {
          break;
        }
      }
      DeltaTuple t;
      t.offset = static_cast<std::uint16_t>(run_start);
      t.data.assign(new_block.begin() + static_cast<std::ptrdiff_t>(run_start),
                    new_block.begin() + static_cast<std::ptrdiff_t>(run_end));
      entry.tuples.push_back(std::move(t));
      i = run_end;
    }
    // A CRC mismatch with identical bytes cannot happen; an identical CRC
    // over different bytes is an accepted collision and yields no entry.
    if (!entry.tuples.empty()) pkg.entries.push_back(std::move(entry));
  }
  return pkg;
}

void validate(const DeltaPackage& pkg) {
  if (pkg.block_size == 0 || pkg.block_size > 0xFFFF) throw DeltaError(DeltaErrc::Malformed, "bad block size");
  if (pkg.new_image_length == 0) throw DeltaError(DeltaErrc::Malformed, "zero image length");
  const auto blocks = integrity::block_count(pkg.new_image_length, pkg.block_size);
  std::optional<std::size_t> prev_block;
  for (const auto& e : pkg.entries) {
    if (prev_block && e.block_index <= *prev_block) {
      throw DeltaError(DeltaErrc::Malformed, "entries not sorted/unique", e.block_index);
    }
    prev_block = e.block_index;
    if (e.block_index >= blocks) throw DeltaError(DeltaErrc::Malformed, "block index out of range", e.block_index);
    const auto len = block_length(pkg.new_image_length, pkg.block_size, e.block_index);
    std::size_t cursor = 0;
    for (const auto& t : e.tuples) {
      if (t.data.empty()) throw DeltaError(DeltaErrc::Malformed, "empty tuple", e.block_index);
      if (t.offset < cursor) throw DeltaError(DeltaErrc::Malformed, "tuples overlap or unsorted", e.block_index);
      if (t.offset + t.data.size() > len) throw DeltaError(DeltaErrc::Malformed, "tuple past block end", e.block_index);
      cursor = t.offset + t.data.size();
    }
  }
}

Bytes encode_package(const DeltaPackage& pkg) {
  validate(pkg);
  Bytes out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kPackageVersion);
  put_le32(out, pkg.block_size);
  put_le32(out, pkg.new_image_length);
  put_le32(out, pkg.new_image_crc);
  put_le16(out, static_cast<std::uint16_t>(pkg.entries.size()));
  for (const auto& e : pkg.entries) {
    put_le16(out, e.block_index);
    put_le16(out, static_cast<std::uint16_t>(e.tuples.size()));
    put_le32(out, e.new_block_crc);
    for (const auto& t : e.tuples) {
      put_le16(out, t.offset);
      put_le16(out, static_cast<std::uint16_t>(t.data.size()));
      out.insert(out.end(), t.data.begin(), t.data.end());
    }
  }
  return out;
}

DeltaPackage decode_package(ByteView bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw DeltaError(DeltaErrc::BadMagic, "bad magic");
  const auto version = r.u8();
  if (version != kPackageVersion) {
    throw DeltaError(DeltaErrc::UnsupportedVersion, "unsupported package version " + std::to_string(version));
  }
  DeltaPackage pkg;
  pkg.block_size = r.u32();
  pkg.new_image_length = r.u32();
  pkg.new_image_crc = r.u32();
  const auto entries = r.u16();
  pkg.entries.reserve(entries);
  for (std::size_t i = 0; i < entries; ++i) {
    DeltaEntry e;
    e.block_index = r.u16();
    const auto tuples = r.u16();
    e.new_block_crc = r.u32();
    e.tuples.reserve(tuples);
    for (std::size_t k = 0; k < tuples; ++k) {
      DeltaTuple t;
      t.offset = r.u16();
      const auto len = r.u16();
      const auto data = r.take(len);
      t.data.assign(data.begin(), data.end());
      e.tuples.push_back(std::move(t));
    }
    pkg.entries.push_back(std::move(e));
  }
  if (!r.done()) throw DeltaError(DeltaErrc::Malformed, "trailing bytes after package");
  validate(pkg);
  return pkg;
}

Bytes apply_delta(ByteView base, const DeltaPackage& pkg) {
  if (base.empty()) throw DeltaError(DeltaErrc::EmptyImage, "base image is empty");
  validate(pkg);
  Bytes staged(pkg.new_image_length, 0xFF);
  std::copy_n(base.begin(), std::min<std::size_t>(base.size(), staged.size()), staged.begin());
  for (const auto& e : pkg.entries) {
    const auto start = static_cast<std::size_t>(e.block_index) * pkg.block_size;
    for (const auto& t : e.tuples) {
      std::copy(t.data.begin(), t.data.end(), staged.begin() + static_cast<std::ptrdiff_t>(start + t.offset));
    }
    const auto len = block_length(pkg.new_image_length, pkg.block_size, e.block_index);
    if (integrity::crc32(ByteView(staged).subspan(start, len)) != e.new_block_crc) {
      throw DeltaError(DeltaErrc::BlockCrcMismatch, "block " + std::to_string(e.block_index) + " CRC mismatch after patch",
                       e.block_index);
    }
  }
  if (integrity::crc32(staged) != pkg.new_image_crc) {
    throw DeltaError(DeltaErrc::ImageCrcMismatch, "image CRC mismatch after patch");
  }
  return staged;
}

PackageStats package_stats(const DeltaPackage& pkg) {
  PackageStats s;
  s.blocks_changed = pkg.entries.size();
  for (const auto& e : pkg.entries) {
    s.tuples += e.tuples.size();
    for (const auto& t : e.tuples) s.payload_bytes += t.data.size();
  }
  s.package_bytes = encode_package(pkg).size();
  s.full_image_bytes = pkg.new_image_length;
  s.reduction_ratio = 1.0 - static_cast<double>(s.package_bytes) / static_cast<double>(s.full_image_bytes);
  return s;
}

FlashStats program_delta(flash::FlashDevice& device, ByteView staged_new_image, const DeltaPackage& pkg) {
  const auto& layout = device.layout();
  const auto& app = layout.region(flash::RegionId::Application);
  const auto meta_offset = nv::metadata_offset(layout);
  if (staged_new_image.size() != pkg.new_image_length) {
    throw DeltaError(DeltaErrc::Malformed, "staged image length does not match package");
  }
  if (staged_new_image.size() > nv::application_capacity(layout)) {
    throw DeltaError(DeltaErrc::Malformed, "image does not fit in front of the metadata slice");
  }
  const auto meta_record = nv::encode_app_metadata(nv::AppMetadata::describe(staged_new_image, pkg.block_size));

  std::set<std::size_t> changed;
  for (const auto& e : pkg.entries) {
    const auto first = app.offset + static_cast<std::size_t>(e.block_index) * pkg.block_size;
    const auto len = block_length(pkg.new_image_length, pkg.block_size, e.block_index);
    for (auto s = layout.sector_at(first); s <= layout.sector_at(first + len - 1); ++s) changed.insert(s);
  }
  const auto meta_sector = layout.sector_at(meta_offset);

  FlashStats stats;
  auto erase = [&](std::size_t s) {
    stats.simulated_duration += device.erase_sectors(static_cast<std::uint8_t>(s), 1);
    stats.erased_sectors.push_back(s);
  };
  erase(meta_sector);
  for (auto s : changed) {
    if (s != meta_sector) erase(s);
  }
  stats.sectors_erased = changed.size();
  stats.metadata_sector_erases = changed.count(meta_sector) ? 0 : 1;

  const auto image_end = app.offset + staged_new_image.size();
  std::set<std::size_t> rewrite(changed);
  rewrite.insert(meta_sector);
  for (auto s : rewrite) {
    const auto& sec = layout.sector(s);
    const auto from = std::max(sec.offset, app.offset);
    const auto to = std::min(sec.end(), image_end);
    if (from >= to) continue;
    stats.simulated_duration += device.program(from, staged_new_image.subspan(from - app.offset, to - from));
    stats.bytes_programmed += to - from;
  }
  stats.simulated_duration += device.program(meta_offset, meta_record);
  stats.bytes_programmed += meta_record.size();
  return stats;
}

}  // namespace canfota::delta
