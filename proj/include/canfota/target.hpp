// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Target ECU node: flash, backup registers, security session and the boot
// chain, driven by three tasks (Comm, Nvm, App) under the sim runtime.
//
// Requests arrive on 0x600+n and replies leave on 0x680+n, n being the low
// seven bits of the node id, both as segmented messages. In application mode
// the node answers UDS 0x27, STATUS, ENTER_BOOTLOADER and ENTER_UPDATER.

#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "canfota/bootflow.hpp"
#include "canfota/can.hpp"
#include "canfota/flash.hpp"
#include "canfota/lka.hpp"
#include "canfota/nvstore.hpp"
#include "canfota/sim.hpp"
#include "canfota/uds.hpp"

namespace canfota::ota {

using can::NodeId;

inline std::uint16_t request_id(NodeId target) { return static_cast<std::uint16_t>(0x600 + (target & 0x7F)); }
inline std::uint16_t response_id(NodeId target) { return static_cast<std::uint16_t>(0x680 + (target & 0x7F)); }

enum class UpdaterKind { Silent, Communicative };

struct TargetConfig {
  std::uint32_t shared_secret = 0;
  std::uint32_t session_rng_seed = 0x2545F491;
  UpdaterKind updater = UpdaterKind::Silent;
  boot::Version version;
  /// Image the silent updater installs into the bootloader region.
  Bytes embedded_bootloader;
  /// Factory contents written before the first boot; empty leaves flash erased.
  Bytes factory_application;
  Bytes factory_bootloader;
  std::optional<boot::UpdaterStep> updater_fail_after;
  flash::FlashTiming timing = flash::FlashTiming::defaults();
  /// Lateral deviations in metres, consumed one per LKA period.
  std::vector<double> deviations;
  Micros lka_period{10'000};
};

struct LkaSample {
  Micros time{0};
  double deviation_m = 0.0;
  double target_deg = 0.0;
  double position_deg = 0.0;
  lka::MotorOrder order = lka::MotorOrder::Straight;
};

class TargetEcu : public sim::Node {
 public:
  TargetEcu(NodeId id, TargetConfig config);

  void on_attach(sim::World& world) override;
  void software_reset(sim::World& world) override;
  void power_cycle(sim::World& world) override;

  /// Factory state: application image and metadata written, app flag ENTER,
  /// then a fresh boot. Bypasses flash timing and locking.
  void provision(sim::World& world, ByteView app_image, ByteView bootloader_image = {});

  boot::ProgramMode mode() const { return mode_; }
  std::optional<boot::BootDecision> last_decision() const { return last_decision_; }
  std::uint64_t boots() const { return boots_; }

  flash::FlashDevice& flash() { return flash_; }
  const flash::FlashDevice& flash() const { return flash_; }
  nv::BackupRegisters& registers() { return regs_; }
  uds::SecuritySession& session() { return session_; }
  const TargetConfig& config() const { return config_; }

  const std::vector<LkaSample>& lka_trace() const { return lka_trace_; }
  const lka::PidGains& active_gains() const { return gains_; }
  std::optional<boot::UpdaterOutcome> last_updater_outcome() const { return updater_outcome_; }

 private:
  void boot(sim::World& world);
  void restart(sim::World& world);
  void write_factory(ByteView app_image, ByteView bootloader_image);
  void comm_task(sim::World& world);
  void nvm_task(sim::World& world);
  void app_task(sim::World& world);
  Bytes handle_application(sim::World& world, ByteView msg, bool& reset);
  void send(sim::World& world, ByteView reply);
  bool comm_ready() const;

  TargetConfig config_;
  flash::FlashDevice flash_;
  nv::BackupRegisters regs_;
  uds::SecuritySession session_;
  can::SegmentedReceiver receiver_;
  Bytes delta_staging_;

  boot::ProgramMode mode_ = boot::ProgramMode::BootManager;
  std::optional<boot::BootDecision> last_decision_;
  std::uint64_t boots_ = 0;

  struct PendingReply {
    Bytes bytes;
    Micros release{0};
  };
  std::optional<PendingReply> pending_reply_;
  bool reset_after_reply_ = false;
  bool reset_when_idle_ = false;
  bool transfer_broken_ = false;
  bool updater_done_ = false;

  lka::PidGains gains_;
  lka::SteeringState steering_;
  std::size_t next_deviation_ = 0;
  Micros next_lka_{0};
  std::vector<LkaSample> lka_trace_;
  std::optional<boot::UpdaterOutcome> updater_outcome_;
  sim::World* world_ = nullptr;
};

}  // namespace canfota::ota
