// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/flash.hpp"

#include <algorithm>

namespace canfota::flash {

const char* to_string(FlashErrc code) {
  switch (code) {
    case FlashErrc::InvalidLayout: return "InvalidLayout";
    case FlashErrc::BadKeySequence: return "BadKeySequence";
    case FlashErrc::AlreadyUnlocked: return "AlreadyUnlocked";
    case FlashErrc::LockedDevice: return "LockedDevice";
    case FlashErrc::SectorOutOfRange: return "SectorOutOfRange";
    case FlashErrc::ProgramOnNonErased: return "ProgramOnNonErased";
    case FlashErrc::AddressOutOfRange: return "AddressOutOfRange";
    case FlashErrc::InjectedFault: return "InjectedFault";
    case FlashErrc::PowerLoss: return "PowerLoss";
  }
  return "?";
}

const char* to_string(RegionId id) {
  switch (id) {
    case RegionId::BootManager: return "boot_manager";
    case RegionId::Bootloader: return "bootloader";
    case RegionId::Application: return "application";
  }
  return "?";
}

FlashLayout::FlashLayout(std::vector<Sector> sectors, std::map<RegionId, Region> regions)
    : sectors_(std::move(sectors)), regions_(std::move(regions)) {
  if (sectors_.empty()) throw FlashError(FlashErrc::InvalidLayout, "layout has no sectors");
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < sectors_.size(); ++i) {
    const auto& s = sectors_[i];
    if (s.index != i) throw FlashError(FlashErrc::InvalidLayout, "sector indices must be 0..n-1 in order");
    if (s.size == 0) throw FlashError(FlashErrc::InvalidLayout, "zero-sized sector");
    if (s.offset != cursor) throw FlashError(FlashErrc::InvalidLayout, "sectors must be contiguous from offset 0");
    cursor += s.size;
  }
  total_ = cursor;

  auto on_boundary = [&](std::size_t addr) {
    return addr == total_ ||
           std::any_of(sectors_.begin(), sectors_.end(), [&](const Sector& s) { return s.offset == addr; });
  };
  for (auto id : {RegionId::BootManager, RegionId::Bootloader, RegionId::Application}) {
    auto it = regions_.find(id);
    if (it == regions_.end()) throw FlashError(FlashErrc::InvalidLayout, std::string("missing region ") + to_string(id));
    const auto& r = it->second;
    if (r.size == 0 || r.end() > total_ || !on_boundary(r.offset) || !on_boundary(r.end())) {
      throw FlashError(FlashErrc::InvalidLayout, std::string("region not sector aligned: ") + to_string(id));
    }
  }
  for (auto a = regions_.begin(); a != regions_.end(); ++a) {
    for (auto b = std::next(a); b != regions_.end(); ++b) {
      if (a->second.offset < b->second.end() && b->second.offset < a->second.end()) {
        throw FlashError(FlashErrc::InvalidLayout, "regions overlap");
      }
    }
  }
}

FlashLayout FlashLayout::stm32f401() {
  constexpr std::size_t K = 1024;
  std::vector<Sector> sectors;
  std::size_t offset = 0;
  const std::size_t sizes[] = {16 * K, 16 * K, 16 * K, 16 * K, 64 * K, 128 * K, 128 * K, 128 * K};
  for (std::uint8_t i = 0; i < 8; ++i) {
    sectors.push_back({i, offset, sizes[i]});
    offset += sizes[i];
  }
  return FlashLayout(std::move(sectors), {{RegionId::BootManager, {0, 64 * K}},
                                          {RegionId::Bootloader, {64 * K, 64 * K}},
                                          {RegionId::Application, {128 * K, 384 * K}}});
}

std::size_t FlashLayout::sector_at(std::size_t addr) const {
  if (addr >= total_) throw FlashError(FlashErrc::AddressOutOfRange, "address beyond device", addr);
  auto it = std::upper_bound(sectors_.begin(), sectors_.end(), addr,
                             [](std::size_t a, const Sector& s) { return a < s.offset; });
  return static_cast<std::size_t>(std::distance(sectors_.begin(), it)) - 1;
}

std::vector<std::size_t> FlashLayout::sectors_of(RegionId id) const {
  const auto& r = region(id);
  std::vector<std::size_t> out;
  for (const auto& s : sectors_) {
    if (s.offset >= r.offset && s.end() <= r.end()) out.push_back(s.index);
  }
  return out;
}

FlashTiming FlashTiming::defaults() {
  using namespace std::chrono_literals;
  FlashTiming t;
  t.erase_cost = {{16 * 1024, 250ms}, {64 * 1024, 700ms}, {128 * 1024, 1000ms}};
  t.program_cost_per_word = 16us;
  t.word_size = 4;
  return t;
}

FlashDevice::FlashDevice(FlashLayout layout, FlashTiming timing, UnlockKeys keys)
    : layout_(std::move(layout)), timing_(std::move(timing)), keys_(keys), cells_(layout_.total_size(), 0xFF) {
  if (timing_.word_size == 0 || timing_.program_cost_per_word <= Micros{0}) {
    throw std::invalid_argument("program timing must be positive");
  }
  for (const auto& s : layout_.sectors()) {
    auto it = timing_.erase_cost.find(s.size);
    if (it == timing_.erase_cost.end() || it->second <= Micros{0}) {
      throw std::invalid_argument("missing or non-positive erase cost for sector size " + std::to_string(s.size));
    }
  }
}

void FlashDevice::unlock(std::uint32_t key1, std::uint32_t key2) {
  if (state_ == LockState::Unlocked) throw FlashError(FlashErrc::AlreadyUnlocked, "flash already unlocked");
  if (latched_ || key1 != keys_.key1 || key2 != keys_.key2) {
    latched_ = true;
    throw FlashError(FlashErrc::BadKeySequence, "bad unlock key sequence; device latched until reset");
  }
  state_ = LockState::Unlocked;
}

void FlashDevice::lock() { state_ = LockState::Locked; }

void FlashDevice::reset_device() {
  state_ = LockState::Locked;
  latched_ = false;
  busy_until_ = now_;
}

void FlashDevice::require_unlocked(const char* op) const {
  if (state_ != LockState::Unlocked) throw FlashError(FlashErrc::LockedDevice, std::string(op) + " on locked device");
}

void FlashDevice::check_range(std::size_t address, std::size_t length) const {
  if (address > cells_.size() || length > cells_.size() - address) {
    throw FlashError(FlashErrc::AddressOutOfRange, "range outside device", address);
  }
}

void FlashDevice::maybe_inject_fault(const char* op) {
  if (!fail_after_ops_) return;
  if (*fail_after_ops_ == 0) {
    fail_after_ops_.reset();
    throw FlashError(FlashErrc::InjectedFault, std::string("injected fault during ") + op);
  }
  --*fail_after_ops_;
}

Micros FlashDevice::occupy(Micros cost) {
  busy_until_ = std::max(busy_until_, now_) + cost;
  counters_.busy_time += cost;
  return cost;
}

Micros FlashDevice::erase_sectors(std::uint8_t start_sector, std::uint8_t count) {
  require_unlocked("erase");
  std::vector<std::size_t> targets;
  if (start_sector == kMassEraseApplication) {
    targets = layout_.sectors_of(RegionId::Application);
  } else {
    if (count == 0 || static_cast<std::size_t>(start_sector) + count > layout_.sectors().size()) {
      throw FlashError(FlashErrc::SectorOutOfRange, "sector range out of bounds");
    }
    for (std::size_t i = start_sector; i < static_cast<std::size_t>(start_sector) + count; ++i) targets.push_back(i);
  }
  maybe_inject_fault("erase");
  Micros total{0};
  for (auto i : targets) {
    const auto& s = layout_.sector(i);
    std::fill(cells_.begin() + static_cast<std::ptrdiff_t>(s.offset),
              cells_.begin() + static_cast<std::ptrdiff_t>(s.end()), 0xFF);
    total += timing_.erase_cost.at(s.size);
    ++counters_.sector_erases;
  }
  return occupy(total);
}

Micros FlashDevice::program(std::size_t address, ByteView data) {
  require_unlocked("program");
  check_range(address, data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (cells_[address + i] != 0xFF) {
      throw FlashError(FlashErrc::ProgramOnNonErased, "program onto non-erased byte", address + i);
    }
  }
  maybe_inject_fault("program");
  std::size_t n = data.size();
  bool lost_power = false;
  if (power_loss_budget_ && *power_loss_budget_ < n) {
    n = *power_loss_budget_;
    lost_power = true;
  }
  if (power_loss_budget_) *power_loss_budget_ -= n;
  std::copy_n(data.begin(), n, cells_.begin() + static_cast<std::ptrdiff_t>(address));
  counters_.bytes_programmed += n;
  const auto words = (n + timing_.word_size - 1) / timing_.word_size;
  const Micros cost = timing_.program_cost_per_word * static_cast<Micros::rep>(words);
  if (lost_power) {
    power_loss_budget_.reset();
    occupy(cost);
    throw FlashError(FlashErrc::PowerLoss, "power lost during program", address + n);
  }
  return occupy(cost);
}

ReadResult FlashDevice::read(std::size_t address, std::size_t length) const {
  check_range(address, length);
  ReadResult r;
  r.data.assign(cells_.begin() + static_cast<std::ptrdiff_t>(address),
                cells_.begin() + static_cast<std::ptrdiff_t>(address + length));
  if (busy_until_ > now_) r.stall = busy_until_ - now_;
  return r;
}

ByteView FlashDevice::view(std::size_t address, std::size_t length) const {
  check_range(address, length);
  return ByteView(cells_).subspan(address, length);
}

void FlashDevice::advance_to(Micros now) { now_ = std::max(now_, now); }

void FlashDevice::clear_faults() {
  fail_after_ops_.reset();
  power_loss_budget_.reset();
}

void FlashDevice::save_snapshot(const std::filesystem::path& path) const { write_file(path, cells_); }

void FlashDevice::load_snapshot(ByteView image) {
  if (image.size() != cells_.size()) {
    throw FlashError(FlashErrc::AddressOutOfRange, "snapshot size does not match device size");
  }
  std::copy(image.begin(), image.end(), cells_.begin());
}

}  // namespace canfota::flash
