// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/bootflow.hpp"

#include <algorithm>

namespace canfota::boot {

using flash::FlashDevice;
using flash::FlashError;
using flash::RegionId;
using nv::BootFlag;
using nv::FlagRegister;

const char* to_string(ProgramMode mode) {
  switch (mode) {
    case ProgramMode::BootManager: return "BootManager";
    case ProgramMode::Application: return "Application";
    case ProgramMode::Bootloader: return "Bootloader";
    case ProgramMode::Updater: return "Updater";
  }
  return "?";
}

const char* to_string(BootDecision d) {
  switch (d) {
    case BootDecision::JumpApplication: return "JumpApplication";
    case BootDecision::JumpBootloader: return "JumpBootloader";
    case BootDecision::JumpUpdater: return "JumpUpdater";
  }
  return "?";
}

const char* to_string(UpdaterStep s) {
  switch (s) {
    case UpdaterStep::Backup: return "Backup";
    case UpdaterStep::CapacityCheck: return "CapacityCheck";
    case UpdaterStep::Erase: return "Erase";
    case UpdaterStep::Program: return "Program";
    case UpdaterStep::Verify: return "Verify";
    case UpdaterStep::Finalize: return "Finalize";
  }
  return "?";
}

Bytes ack(std::uint8_t code) { return {kAck, code}; }

Bytes nack(std::uint8_t code, NackReason reason) { return {kNack, code, static_cast<std::uint8_t>(reason)}; }

FlashUnlockGuard::FlashUnlockGuard(FlashDevice& device) : device_(device) {
  if (device_.lock_state() == flash::LockState::Locked) {
    device_.unlock(device_.keys().key1, device_.keys().key2);
    unlocked_here_ = true;
  }
}

FlashUnlockGuard::~FlashUnlockGuard() {
  if (unlocked_here_) device_.lock();
}

std::optional<nv::AppMetadata> read_app_metadata(const FlashDevice& device) {
  const auto& layout = device.layout();
  const auto slice = device.view(nv::metadata_offset(layout), nv::kMetadataSize);
  if (std::all_of(slice.begin(), slice.end(), [](std::uint8_t b) { return b == 0xFF; })) return std::nullopt;
  try {
    auto meta = nv::decode_app_metadata(slice);
    if (meta.byte_count == 0 || meta.byte_count > nv::application_capacity(layout)) return std::nullopt;
    return meta;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

integrity::CrcResult application_integrity(const FlashDevice& device) {
  const auto meta = read_app_metadata(device);
  if (!meta) return integrity::CrcResult::Failed;
  const auto& app = device.layout().region(RegionId::Application);
  return integrity::crc_compare(integrity::crc32(device.view(app.offset, meta->byte_count)), meta->image_crc);
}

BootDecision boot_decide(const FlashDevice& device, nv::BackupRegisters& regs) {
  const auto integrity = application_integrity(device);
  if (integrity == integrity::CrcResult::Succeeded &&
      nv::read_flag(regs, FlagRegister::ApplicationEnter) == BootFlag::Enter) {
    return BootDecision::JumpApplication;
  }
  if (nv::read_flag(regs, FlagRegister::BootloaderUpdaterEnter) == BootFlag::Enter) {
    return BootDecision::JumpUpdater;
  }
  nv::write_flag(regs, FlagRegister::ApplicationEnter, BootFlag::NotEnter);
  nv::write_flag(regs, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
  return BootDecision::JumpBootloader;
}

std::optional<Bytes> read_application(const FlashDevice& device) {
  const auto meta = read_app_metadata(device);
  if (!meta) return std::nullopt;
  const auto& app = device.layout().region(RegionId::Application);
  const auto v = device.view(app.offset, meta->byte_count);
  return Bytes(v.begin(), v.end());
}

namespace {

struct WriteRequest {
  std::uint32_t address = 0;
  ByteView data;
};

std::optional<WriteRequest> parse_write(ByteView cmd) {
  if (cmd.size() < 7) return std::nullopt;
  WriteRequest w;
  w.address = get_le32(cmd, 1);
  const auto len = get_le16(cmd, 5);
  if (len == 0 || cmd.size() != 7u + len) return std::nullopt;
  w.data = cmd.subspan(7);
  return w;
}

bool already_written(const FlashDevice& device, std::size_t address, ByteView data) {
  const auto cur = device.view(address, data.size());
  return std::equal(cur.begin(), cur.end(), data.begin());
}

// Writes that exactly reproduce the current contents are acknowledged
// without touching flash, so a retried command whose ACK was lost succeeds.
ServeResult program_checked(BootContext& ctx, std::uint8_t code, const WriteRequest& w) {
  ServeResult r;
  if (already_written(ctx.flash, w.address, w.data)) {
    r.reply = ack(code);
    r.log = "write (already present) at " + hex32(w.address);
    return r;
  }
  try {
    FlashUnlockGuard guard(ctx.flash);
    ctx.flash.program(w.address, w.data);
    r.reply = ack(code);
    r.log = "write " + std::to_string(w.data.size()) + " bytes at " + hex32(w.address);
  } catch (const FlashError& e) {
    r.reply = nack(code, NackReason::FlashError);
    r.log = std::string("write failed: ") + e.what();
  }
  return r;
}

bool app_sectors_only(const flash::FlashLayout& layout, std::uint8_t start, std::uint8_t count) {
  if (start == flash::kMassEraseApplication) return true;
  if (count == 0 || static_cast<std::size_t>(start) + count > layout.sectors().size()) return false;
  const auto app = layout.sectors_of(RegionId::Application);
  for (std::size_t s = start; s < static_cast<std::size_t>(start) + count; ++s) {
    if (std::find(app.begin(), app.end(), s) == app.end()) return false;
  }
  return true;
}

ServeResult serve_erase(BootContext& ctx, ByteView cmd) {
  ServeResult r;
  if (cmd.size() != 3) {
    r.reply = nack(cmd[0], NackReason::MalformedRequest);
    return r;
  }
  if (!app_sectors_only(ctx.flash.layout(), cmd[1], cmd[2])) {
    r.reply = nack(cmd[0], NackReason::RegionViolation);
    r.log = "erase outside application region refused";
    return r;
  }
  try {
    FlashUnlockGuard guard(ctx.flash);
    ctx.flash.erase_sectors(cmd[1], cmd[2]);
    r.reply = ack(cmd[0]);
    r.log = "erase sectors " + std::to_string(cmd[1]) + "+" + std::to_string(cmd[2]);
  } catch (const FlashError& e) {
    r.reply = nack(cmd[0], NackReason::FlashError);
    r.log = std::string("erase failed: ") + e.what();
  }
  return r;
}

ServeResult serve_mem_write(BootContext& ctx, ByteView cmd) {
  ServeResult r;
  const auto w = parse_write(cmd);
  if (!w) {
    r.reply = nack(cmd[0], NackReason::MalformedRequest);
    return r;
  }
  const auto& layout = ctx.flash.layout();
  const auto& app = layout.region(RegionId::Application);
  const auto meta = nv::metadata_offset(layout);
  const flash::Region image_area{app.offset, meta - app.offset};
  const flash::Region meta_area{meta, nv::kMetadataSize};
  if (!image_area.contains(w->address, w->data.size()) && !meta_area.contains(w->address, w->data.size())) {
    r.reply = nack(cmd[0], NackReason::RegionViolation);
    r.log = "write outside application region refused at " + hex32(w->address);
    return r;
  }
  return program_checked(ctx, cmd[0], *w);
}

ServeResult serve_delta_data(BootContext& ctx, ByteView cmd) {
  ServeResult r;
  if (!ctx.delta_staging || cmd.size() < 6) {
    r.reply = nack(cmd[0], NackReason::MalformedRequest);
    return r;
  }
  auto& staging = *ctx.delta_staging;
  const std::size_t offset = get_le32(cmd, 1);
  const auto chunk = cmd.subspan(5);
  if (offset == 0) staging.clear();
  if (offset + chunk.size() <= staging.size() &&
      std::equal(chunk.begin(), chunk.end(), staging.begin() + static_cast<std::ptrdiff_t>(offset))) {
    r.reply = ack(cmd[0]);
    return r;
  }
  if (offset != staging.size() ||
      staging.size() + chunk.size() > nv::application_capacity(ctx.flash.layout()) + delta::kHeaderSize) {
    r.reply = nack(cmd[0], NackReason::TransferError);
    r.log = "delta chunk out of order at " + std::to_string(offset);
    return r;
  }
  staging.insert(staging.end(), chunk.begin(), chunk.end());
  r.reply = ack(cmd[0]);
  return r;
}

ServeResult serve_delta_commit(BootContext& ctx, ByteView cmd) {
  ServeResult r;
  if (!ctx.delta_staging || cmd.size() != 5) {
    r.reply = nack(cmd[0], NackReason::MalformedRequest);
    return r;
  }
  const auto& staging = *ctx.delta_staging;
  if (get_le32(cmd, 1) != staging.size()) {
    r.reply = nack(cmd[0], NackReason::TransferError);
    r.log = "delta package incomplete";
    return r;
  }
  delta::DeltaPackage pkg;
  try {
    pkg = delta::decode_package(staging);
    delta::validate(pkg);
  } catch (const delta::DeltaError& e) {
    r.reply = nack(cmd[0], NackReason::MalformedRequest);
    r.log = std::string("delta package rejected: ") + e.what();
    return r;
  }

  const auto& layout = ctx.flash.layout();
  if (pkg.new_image_length == 0 || pkg.new_image_length > nv::application_capacity(layout)) {
    r.reply = nack(cmd[0], NackReason::RegionViolation);
    r.log = "delta image does not fit";
    return r;
  }
  auto base = read_application(ctx.flash);
  if (!base) {
    // No valid metadata: patch whatever the region holds and let the CRCs decide.
    const auto& app = layout.region(RegionId::Application);
    const auto v = ctx.flash.view(app.offset, pkg.new_image_length);
    base = Bytes(v.begin(), v.end());
  }

  Bytes staged;
  try {
    staged = delta::apply_delta(*base, pkg);
  } catch (const delta::DeltaError& e) {
    const bool image = e.code() == delta::DeltaErrc::ImageCrcMismatch;
    r.reply = nack(cmd[0], image ? NackReason::ImageCrcMismatch : NackReason::BlockCrcMismatch);
    r.log = std::string("delta verification failed: ") + e.what();
    return r;
  }

  try {
    FlashUnlockGuard guard(ctx.flash);
    const auto stats = delta::program_delta(ctx.flash, staged, pkg);
    r.reply = ack(cmd[0]);
    r.reply.push_back(static_cast<std::uint8_t>(stats.sectors_erased));
    r.reply.push_back(static_cast<std::uint8_t>(stats.metadata_sector_erases));
    put_le16(r.reply, static_cast<std::uint16_t>(pkg.entries.size()));
    r.log = "delta committed, " + std::to_string(pkg.entries.size()) + " blocks, " +
            std::to_string(stats.sectors_erased) + " sectors";
    r.delta_stats = stats;
  } catch (const FlashError& e) {
    r.reply = nack(cmd[0], NackReason::FlashError);
    r.log = std::string("delta programming failed: ") + e.what();
  }
  return r;
}

bool needs_security(std::uint8_t code) {
  return code == cmd::kFlashErase || code == cmd::kMemWrite || code == cmd::kDeltaData || code == cmd::kDeltaCommit;
}

}  // namespace

ServeResult bootloader_serve(BootContext& ctx, ByteView command) {
  ServeResult r;
  if (command.empty()) {
    r.reply = nack(0x00, NackReason::MalformedRequest);
    return r;
  }
  const auto code = command[0];
  ctx.flash.advance_to(ctx.now);
  if (needs_security(code) && !ctx.session.unlocked()) {
    r.reply = nack(code, NackReason::SecurityLocked);
    r.log = "command " + std::to_string(code) + " refused: security locked";
    return r;
  }
  switch (code) {
    case cmd::kFlashErase: return serve_erase(ctx, command);
    case cmd::kMemWrite: return serve_mem_write(ctx, command);
    case cmd::kDeltaData: return serve_delta_data(ctx, command);
    case cmd::kDeltaCommit: return serve_delta_commit(ctx, command);
    case cmd::kGoToAddr:
      if (command.size() != 3) {
        r.reply = nack(code, NackReason::MalformedRequest);
        return r;
      }
      ctx.regs.write(static_cast<std::size_t>(FlagRegister::ApplicationEnter), command[1]);
      ctx.regs.write(static_cast<std::size_t>(FlagRegister::BootloaderUpdaterEnter), command[2]);
      r.reply = ack(code);
      r.reset_requested = true;
      r.log = "go to boot manager";
      return r;
    case cmd::kStatus:
      r.reply = {kAck, code, static_cast<std::uint8_t>(ProgramMode::Bootloader)};
      return r;
    default:
      r.reply = {kNack, code};
      r.log = "invalid command code received";
      return r;
  }
}

ServeResult updater_serve(BootContext& ctx, ByteView command, const Version& version) {
  ServeResult r;
  if (command.empty()) return r;
  const auto code = command[0];
  ctx.flash.advance_to(ctx.now);
  const auto& layout = ctx.flash.layout();
  const auto& bl = layout.region(RegionId::Bootloader);
  switch (code) {
    case cmd::kGetVersion:
      r.reply = {kAck, version.major, version.minor, version.patch};
      return r;
    case cmd::kMemEraseBootloader: {
      const auto sectors = layout.sectors_of(RegionId::Bootloader);
      try {
        FlashUnlockGuard guard(ctx.flash);
        ctx.flash.erase_sectors(static_cast<std::uint8_t>(sectors.front()), static_cast<std::uint8_t>(sectors.size()));
        r.reply = ack(code);
        r.log = "bootloader erased";
      } catch (const FlashError& e) {
        r.reply = nack(code, NackReason::FlashError);
        r.log = std::string("bootloader erase failed: ") + e.what();
      }
      return r;
    }
    case cmd::kMemWriteBootloader: {
      const auto w = parse_write(command);
      if (!w) {
        r.reply = nack(code, NackReason::MalformedRequest);
        return r;
      }
      if (!bl.contains(w->address, w->data.size())) {
        r.reply = nack(code, NackReason::RegionViolation);
        return r;
      }
      return program_checked(ctx, code, *w);
    }
    case cmd::kLeaveToBootManager:
      nv::write_flag(ctx.regs, FlagRegister::ApplicationEnter, BootFlag::NotEnter);
      nv::write_flag(ctx.regs, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
      r.reply = ack(code);
      r.reset_requested = true;
      r.log = "leave to boot manager";
      return r;
    case cmd::kStatus:
      r.reply = {kAck, code, static_cast<std::uint8_t>(ProgramMode::Updater)};
      return r;
    default:
      return r;
  }
}

namespace {

struct InjectedStepFailure {
  UpdaterStep step;
};

void restore_region(FlashDevice& device, RegionId id, ByteView backup) {
  const auto& region = device.layout().region(id);
  const auto sectors = device.layout().sectors_of(id);
  device.clear_faults();
  FlashUnlockGuard guard(device);
  device.erase_sectors(static_cast<std::uint8_t>(sectors.front()), static_cast<std::uint8_t>(sectors.size()));
  // Erased cells already read 0xFF; only program up to the last non-erased byte.
  auto last = std::find_if(backup.rbegin(), backup.rend(), [](std::uint8_t b) { return b != 0xFF; });
  const auto n = static_cast<std::size_t>(backup.rend() - last);
  if (n > 0) device.program(region.offset, backup.first(n));
}

}  // namespace

UpdaterOutcome updater_silent(BootContext& ctx, ByteView image, std::optional<UpdaterStep> fail_after) {
  UpdaterOutcome out;
  auto& dev = ctx.flash;
  dev.advance_to(ctx.now);
  const auto& region = dev.layout().region(RegionId::Bootloader);
  const auto sectors = dev.layout().sectors_of(RegionId::Bootloader);
  auto checkpoint = [&](UpdaterStep s) {
    if (fail_after && *fail_after == s) throw InjectedStepFailure{s};
  };

  Bytes backup;
  try {
    const auto v = dev.view(region.offset, region.size);
    backup.assign(v.begin(), v.end());
    checkpoint(UpdaterStep::Backup);

    if (image.empty() || image.size() > region.size) {
      out.cause = "image of " + std::to_string(image.size()) + " bytes does not fit the bootloader region";
      nv::write_flag(ctx.regs, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
      return out;
    }
    checkpoint(UpdaterStep::CapacityCheck);

    {
      FlashUnlockGuard guard(dev);
      dev.erase_sectors(static_cast<std::uint8_t>(sectors.front()), static_cast<std::uint8_t>(sectors.size()));
      checkpoint(UpdaterStep::Erase);
      dev.program(region.offset, image);
      checkpoint(UpdaterStep::Program);
    }

    if (integrity::crc32(dev.view(region.offset, image.size())) != integrity::crc32(image)) {
      throw std::runtime_error("read-back CRC mismatch");
    }
    checkpoint(UpdaterStep::Verify);

    nv::write_flag(ctx.regs, FlagRegister::ApplicationEnter, BootFlag::NotEnter);
    nv::write_flag(ctx.regs, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
    checkpoint(UpdaterStep::Finalize);
    out.success = true;
    return out;
  } catch (const InjectedStepFailure& f) {
    out.cause = std::string("injected failure after ") + to_string(f.step);
  } catch (const std::exception& e) {
    out.cause = e.what();
  }

  if (!backup.empty()) {
    const auto now = dev.view(region.offset, region.size);
    if (!std::equal(now.begin(), now.end(), backup.begin())) restore_region(dev, RegionId::Bootloader, backup);
    out.rolled_back = true;
  }
  nv::write_flag(ctx.regs, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
  return out;
}

}  // namespace canfota::boot
