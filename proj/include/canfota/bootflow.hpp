// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// The target ECU's boot chain: boot-manager decision, bootloader command
// server, and the silent and communicative bootloader updaters.
//
// Command wire format (first byte of a segmented message):
//
//   0x14 GO_TO_ADDR           [app_flag, updater_flag]
//   0x15 FLASH_ERASE          [sector, count]        (sector 0xFF = whole app region)
//   0x16 MEM_WRITE            [addr u32 LE, len u16 LE, data...]
//   0x17 DELTA_DATA           [offset u32 LE, chunk...]
//   0x18 DELTA_COMMIT         [package_length u32 LE]
//   0x20 GET_VERSION          -> [0x79, major, minor, patch]
//   0x21 MEM_WRITE_BOOTLOADER [addr u32 LE, len u16 LE, data...]
//   0x22 MEM_ERASE_BOOTLOADER
//   0x23 LEAVE_TO_BOOT_MANAGER
//   0x30 STATUS               -> [0x79, 0x30, mode]
//   0x31 ENTER_BOOTLOADER     (application, needs security access)
//   0x32 ENTER_UPDATER        (application, needs security access)
//
// ACK is [0x79, code, ...]; NACK is [0x1F, code] for an unknown code and
// [0x1F, code, reason] otherwise.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "canfota/common.hpp"
#include "canfota/delta.hpp"
#include "canfota/flash.hpp"
#include "canfota/integrity.hpp"
#include "canfota/nvstore.hpp"
#include "canfota/uds.hpp"

namespace canfota::boot {

inline constexpr std::uint8_t kAck = 0x79;
inline constexpr std::uint8_t kNack = 0x1F;

namespace cmd {
inline constexpr std::uint8_t kGoToAddr = 0x14;
inline constexpr std::uint8_t kFlashErase = 0x15;
inline constexpr std::uint8_t kMemWrite = 0x16;
inline constexpr std::uint8_t kDeltaData = 0x17;
inline constexpr std::uint8_t kDeltaCommit = 0x18;
inline constexpr std::uint8_t kGetVersion = 0x20;
inline constexpr std::uint8_t kMemWriteBootloader = 0x21;
inline constexpr std::uint8_t kMemEraseBootloader = 0x22;
inline constexpr std::uint8_t kLeaveToBootManager = 0x23;
inline constexpr std::uint8_t kStatus = 0x30;
inline constexpr std::uint8_t kEnterBootloader = 0x31;
inline constexpr std::uint8_t kEnterUpdater = 0x32;
}  // namespace cmd

enum class NackReason : std::uint8_t {
  RegionViolation = 0x01,
  SecurityLocked = 0x02,
  FlashError = 0x03,
  BlockCrcMismatch = 0x04,
  TransferError = 0x05,
  MalformedRequest = 0x06,
  ImageCrcMismatch = 0x07,
};

enum class ProgramMode : std::uint8_t { BootManager = 0, Application = 1, Bootloader = 2, Updater = 3 };

const char* to_string(ProgramMode mode);

enum class BootDecision { JumpApplication, JumpBootloader, JumpUpdater };

const char* to_string(BootDecision d);

struct Version {
  std::uint8_t major = 1;
  std::uint8_t minor = 0;
  std::uint8_t patch = 0;
};

Bytes ack(std::uint8_t code);
Bytes nack(std::uint8_t code, NackReason reason);

/// Unlocks the device with its configured keys for the lifetime of the guard.
class FlashUnlockGuard {
 public:
  explicit FlashUnlockGuard(flash::FlashDevice& device);
  ~FlashUnlockGuard();
  FlashUnlockGuard(const FlashUnlockGuard&) = delete;
  FlashUnlockGuard& operator=(const FlashUnlockGuard&) = delete;

 private:
  flash::FlashDevice& device_;
  bool unlocked_here_ = false;
};

/// Decoded metadata, or nullopt when the slice is erased or garbage.
std::optional<nv::AppMetadata> read_app_metadata(const flash::FlashDevice& device);

/// CRC of the stored image against the stored CRC. Undecodable metadata or
/// an impossible byte count is a failure.
integrity::CrcResult application_integrity(const flash::FlashDevice& device);

/// Integrity OK and app flag ENTER -> application; else updater flag ENTER
/// -> updater; else both flags are reset to N_ENTER -> bootloader.
BootDecision boot_decide(const flash::FlashDevice& device, nv::BackupRegisters& regs);

/// Current application image as described by the metadata.
std::optional<Bytes> read_application(const flash::FlashDevice& device);

/// State a boot program may touch while serving a command.
struct BootContext {
  flash::FlashDevice& flash;
  nv::BackupRegisters& regs;
  uds::SecuritySession& session;
  Micros now{0};
  Bytes* delta_staging = nullptr;  // RAM buffer for an incoming package
};

struct ServeResult {
  Bytes reply;  // empty: send nothing
  bool reset_requested = false;
  std::string log;  // short description for the event log
  std::optional<delta::FlashStats> delta_stats;
};

/// Handles one bootloader command. Erase and write need an unlocked
/// security session and may only touch the application region.
ServeResult bootloader_serve(BootContext& ctx, ByteView command);

/// Handles one communicative-updater command. Unsupported codes produce no
/// reply. No security gate, matching the updater's original design.
ServeResult updater_serve(BootContext& ctx, ByteView command, const Version& version);

/// Points at which updater_silent can be told to fail.
enum class UpdaterStep { Backup, CapacityCheck, Erase, Program, Verify, Finalize };

const char* to_string(UpdaterStep s);

struct UpdaterOutcome {
  bool success = false;
  bool rolled_back = false;
  std::string cause;
};

/// Replaces the bootloader region with `image`: backup, erase, program,
/// verify. Any failure restores the backup. On return both flags have been
/// written and the caller should reset into the boot manager.
/// `fail_after` injects a failure right after the named step completes.
UpdaterOutcome updater_silent(BootContext& ctx, ByteView image, std::optional<UpdaterStep> fail_after = {});

}  // namespace canfota::boot
