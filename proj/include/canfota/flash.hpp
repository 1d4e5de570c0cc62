// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Emulated single-bank sectored flash.
//
// The model is deliberately strict: a byte may only be programmed while it
// reads 0xFF, and the only way back to 0xFF is a whole-sector erase. Every
// mutating operation returns the simulated time it keeps the device busy;
// reads issued while the device is busy report the stall they would incur.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "canfota/common.hpp"

namespace canfota::flash {

enum class FlashErrc {
  InvalidLayout,
  BadKeySequence,
  AlreadyUnlocked,
  LockedDevice,
  SectorOutOfRange,
  ProgramOnNonErased,
  AddressOutOfRange,
  InjectedFault,
  PowerLoss,
};

const char* to_string(FlashErrc code);

class FlashError : public std::runtime_error {
 public:
  FlashError(FlashErrc code, const std::string& what, std::optional<std::size_t> offset = {})
      : std::runtime_error(what), code_(code), offset_(offset) {}

  FlashErrc code() const { return code_; }
  /// First offending byte offset, when the error concerns one.
  std::optional<std::size_t> offset() const { return offset_; }

 private:
  FlashErrc code_;
  std::optional<std::size_t> offset_;
};

struct Sector {
  std::uint8_t index = 0;
  std::size_t offset = 0;
  std::size_t size = 0;

  std::size_t end() const { return offset + size; }
};

enum class RegionId { BootManager, Bootloader, Application };

const char* to_string(RegionId id);

struct Region {
  std::size_t offset = 0;
  std::size_t size = 0;

  std::size_t end() const { return offset + size; }
  bool contains(std::size_t addr, std::size_t len) const {
    return addr >= offset && len <= size && addr - offset <= size - len;
  }
};

class FlashLayout {
 public:
  /// Throws FlashError(InvalidLayout) unless sectors tile [0, total) in
  /// order and every region is sector aligned and disjoint from the others.
  FlashLayout(std::vector<Sector> sectors, std::map<RegionId, Region> regions);

  /// 4x16K, 64K, 3x128K; boot manager in sectors 0-3, bootloader in sector 4,
  /// application in sectors 5-7.
  static FlashLayout stm32f401();

  const std::vector<Sector>& sectors() const { return sectors_; }
  const Sector& sector(std::size_t index) const { return sectors_.at(index); }
  const Region& region(RegionId id) const { return regions_.at(id); }
  std::size_t total_size() const { return total_; }

  /// Index of the sector holding byte `addr`.
  std::size_t sector_at(std::size_t addr) const;
  /// Indices of the sectors making up a region, ascending.
  std::vector<std::size_t> sectors_of(RegionId id) const;

 private:
  std::vector<Sector> sectors_;
  std::map<RegionId, Region> regions_;
  std::size_t total_ = 0;
};

struct FlashTiming {
  std::map<std::size_t, Micros> erase_cost;  // keyed by sector size in bytes
  Micros program_cost_per_word{16};
  std::size_t word_size = 4;

  /// 16K: 250 ms, 64K: 700 ms, 128K: 1000 ms, 16 us per 32-bit word.
  static FlashTiming defaults();
};

struct UnlockKeys {
  std::uint32_t key1 = 0x45670123;
  std::uint32_t key2 = 0xCDEF89AB;
};

/// Start sector value selecting a mass erase of the application region.
inline constexpr std::uint8_t kMassEraseApplication = 0xFF;

enum class LockState { Locked, Unlocked };

struct ReadResult {
  Bytes data;
  Micros stall{0};
};

struct FlashCounters {
  std::uint64_t sector_erases = 0;
  std::uint64_t bytes_programmed = 0;
  Micros busy_time{0};
};

class FlashDevice {
 public:
  FlashDevice(FlashLayout layout, FlashTiming timing = FlashTiming::defaults(), UnlockKeys keys = {});

  const FlashLayout& layout() const { return layout_; }
  const FlashTiming& timing() const { return timing_; }
  const UnlockKeys& keys() const { return keys_; }

  LockState lock_state() const { return state_; }
  bool latched() const { return latched_; }

  void unlock(std::uint32_t key1, std::uint32_t key2);
  void lock();
  /// Hardware reset: relocks the device and clears a latched key failure.
  /// Cell contents are non-volatile and survive.
  void reset_device();

  Micros erase_sectors(std::uint8_t start_sector, std::uint8_t count);
  Micros program(std::size_t address, ByteView data);
  ReadResult read(std::size_t address, std::size_t length) const;

  /// Zero-copy view of all cells.
  ByteView contents() const { return cells_; }
  ByteView view(std::size_t address, std::size_t length) const;

  /// Simulated-time bookkeeping. Operations issued at `now` queue behind any
  /// operation still in progress.
  void advance_to(Micros now);
  Micros now() const { return now_; }
  Micros busy_until() const { return busy_until_; }
  bool busy() const { return busy_until_ > now_; }

  const FlashCounters& counters() const { return counters_; }

  /// The mutating operation after `ops` more successful ones fails with
  /// InjectedFault and leaves the cells untouched. One shot.
  void fail_after_ops(std::size_t ops) { fail_after_ops_ = ops; }
  /// The next program call writes at most `bytes` more bytes, then throws
  /// PowerLoss. Erases are unaffected. One shot.
  void power_loss_after_bytes(std::size_t bytes) { power_loss_budget_ = bytes; }
  void clear_faults();

  void save_snapshot(const std::filesystem::path& path) const;
  /// Replaces all cells with a raw image of exactly total_size() bytes.
  void load_snapshot(ByteView image);

 private:
  void require_unlocked(const char* op) const;
  void check_range(std::size_t address, std::size_t length) const;
  void maybe_inject_fault(const char* op);
  Micros occupy(Micros cost);

  FlashLayout layout_;
  FlashTiming timing_;
  UnlockKeys keys_;
  Bytes cells_;
  LockState state_ = LockState::Locked;
  bool latched_ = false;
  Micros now_{0};
  Micros busy_until_{0};
  FlashCounters counters_;
  std::optional<std::size_t> fail_after_ops_;
  std::optional<std::size_t> power_loss_budget_;
};

}  // namespace canfota::flash
