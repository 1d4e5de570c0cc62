// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/target.hpp"

#include <algorithm>
#include <cstdio>

namespace canfota::ota {

using boot::ProgramMode;
using nv::BootFlag;
using nv::FlagRegister;
using sim::EventKind;

namespace {

std::string code_label(std::uint8_t code) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", code);
  return buf;
}

}  // namespace

TargetEcu::TargetEcu(NodeId id, TargetConfig config)
    : sim::Node(id),
      config_(std::move(config)),
      flash_(flash::FlashLayout::stm32f401(), config_.timing),
      session_(uds::SessionConfig{config_.shared_secret, config_.session_rng_seed}) {}

void TargetEcu::on_attach(sim::World& world) {
  world_ = &world;
  world.bus().attach(id(), {can::exact(request_id(id()))});
  add_task({"comm", sim::TaskPriority::Comm,
            [this] { return comm_ready() ? sim::TaskState::Ready : sim::TaskState::Blocked; },
            [this](sim::World& w) { comm_task(w); }});
  add_task({"nvm", sim::TaskPriority::Nvm,
            [this] {
              const bool ready = mode_ == ProgramMode::Updater && config_.updater == UpdaterKind::Silent &&
                                 !updater_done_;
              return ready ? sim::TaskState::Ready : sim::TaskState::Blocked;
            },
            [this](sim::World& w) { nvm_task(w); }});
  add_task({"app", sim::TaskPriority::App,
            [this] {
              const bool ready = mode_ == ProgramMode::Application && next_deviation_ < config_.deviations.size() &&
                                 world_->now() >= next_lka_;
              return ready ? sim::TaskState::Ready : sim::TaskState::Blocked;
            },
            [this](sim::World& w) { app_task(w); }});
  if (!config_.factory_application.empty() || !config_.factory_bootloader.empty()) {
    write_factory(config_.factory_application, config_.factory_bootloader);
  }
  boot(world);
}

void TargetEcu::write_factory(ByteView app_image, ByteView bootloader_image) {
  const auto& layout = flash_.layout();
  Bytes cells(flash_.contents().begin(), flash_.contents().end());
  if (!app_image.empty()) {
    if (app_image.size() > nv::application_capacity(layout)) {
      throw std::invalid_argument("factory application does not fit");
    }
    const auto& app = layout.region(flash::RegionId::Application);
    std::fill(cells.begin() + static_cast<std::ptrdiff_t>(app.offset),
              cells.begin() + static_cast<std::ptrdiff_t>(app.end()), 0xFF);
    std::copy(app_image.begin(), app_image.end(), cells.begin() + static_cast<std::ptrdiff_t>(app.offset));
    const auto meta = nv::encode_app_metadata(nv::AppMetadata::describe(app_image));
    std::copy(meta.begin(), meta.end(), cells.begin() + static_cast<std::ptrdiff_t>(nv::metadata_offset(layout)));
    nv::write_flag(regs_, FlagRegister::ApplicationEnter, BootFlag::Enter);
    nv::write_flag(regs_, FlagRegister::BootloaderUpdaterEnter, BootFlag::NotEnter);
  }
  if (!bootloader_image.empty()) {
    const auto& bl = layout.region(flash::RegionId::Bootloader);
    if (bootloader_image.size() > bl.size) throw std::invalid_argument("factory bootloader does not fit");
    std::fill(cells.begin() + static_cast<std::ptrdiff_t>(bl.offset),
              cells.begin() + static_cast<std::ptrdiff_t>(bl.end()), 0xFF);
    std::copy(bootloader_image.begin(), bootloader_image.end(),
              cells.begin() + static_cast<std::ptrdiff_t>(bl.offset));
  }
  flash_.load_snapshot(cells);
}

void TargetEcu::provision(sim::World& world, ByteView app_image, ByteView bootloader_image) {
  write_factory(app_image, bootloader_image);
  restart(world);
}

void TargetEcu::boot(sim::World& world) {
  ++boots_;
  mode_ = ProgramMode::BootManager;
  world.log(id(), EventKind::Boot, "boot " + std::to_string(boots_));
  const auto decision = boot::boot_decide(flash_, regs_);
  last_decision_ = decision;
  world.log(id(), EventKind::Decision, boot::to_string(decision));
  switch (decision) {
    case boot::BootDecision::JumpApplication: {
      mode_ = ProgramMode::Application;
      const auto image = boot::read_application(flash_);
      gains_ = (image ? lka::read_gains(*image) : std::nullopt).value_or(lka::PidGains{});
      steering_ = {};
      next_lka_ = world.now();
      break;
    }
    case boot::BootDecision::JumpBootloader: mode_ = ProgramMode::Bootloader; break;
    case boot::BootDecision::JumpUpdater:
      mode_ = ProgramMode::Updater;
      updater_done_ = false;
      break;
  }
}

void TargetEcu::restart(sim::World& world) {
  world.bus().flush(id());
  flash_.advance_to(world.now());
  flash_.reset_device();
  session_.reset();
  receiver_.reset();
  delta_staging_.clear();
  pending_reply_.reset();
  reset_after_reply_ = false;
  reset_when_idle_ = false;
  transfer_broken_ = false;
  boot(world);
}

void TargetEcu::software_reset(sim::World& world) {
  sim::Node::software_reset(world);
  restart(world);
}

void TargetEcu::power_cycle(sim::World& world) {
  sim::Node::power_cycle(world);
  regs_.clear();
  restart(world);
}

bool TargetEcu::comm_ready() const {
  if (pending_reply_ || reset_when_idle_) return true;
  return !world_->bus().endpoint(id()).rx_fifo.empty();
}

void TargetEcu::send(sim::World& world, ByteView reply) {
  can::send_segmented(world.bus(), id(), response_id(id()), reply);
}

void TargetEcu::comm_task(sim::World& world) {
  flash_.advance_to(world.now());

  if (pending_reply_) {
    if (world.now() < pending_reply_->release) return;
    send(world, pending_reply_->bytes);
    pending_reply_.reset();
    if (reset_after_reply_) {
      reset_after_reply_ = false;
      reset_when_idle_ = true;
    }
  }
  if (reset_when_idle_) {
    if (world.bus().endpoint(id()).tx_queue.empty() && !flash_.busy()) software_reset(world);
    return;
  }

  auto ev = can::recv_segmented(world.bus(), id(), receiver_);
  if (ev.status == can::RxStatus::Pending) return;
  if (ev.status != can::RxStatus::Complete) {
    // One transfer-error NACK per broken message; the master resends it whole.
    if (!transfer_broken_) {
      transfer_broken_ = true;
      pending_reply_ = PendingReply{boot::nack(0x00, boot::NackReason::TransferError), world.now()};
      world.log(id(), EventKind::Fault, std::string("transfer ") + can::to_string(ev.status));
    }
  } else {
    transfer_broken_ = false;
    const ByteView msg = ev.payload;
    Bytes reply;
    bool reset = false;
    std::string detail;
    if (msg[0] == uds::kSecurityAccess && mode_ != ProgramMode::Updater) {
      reply = session_.server_handle(msg, world.now());
      detail = "security access";
    } else if (mode_ == ProgramMode::Application) {
      reply = handle_application(world, msg, reset);
    } else if (mode_ == ProgramMode::Bootloader || mode_ == ProgramMode::Updater) {
      boot::BootContext ctx{flash_, regs_, session_, world.now(), &delta_staging_};
      auto served = mode_ == ProgramMode::Bootloader ? boot::bootloader_serve(ctx, msg)
                                                     : boot::updater_serve(ctx, msg, config_.version);
      reply = std::move(served.reply);
      reset = served.reset_requested;
      detail = std::move(served.log);
    }
    std::string line = code_label(msg[0]) + " " + boot::to_string(mode_);
    if (!detail.empty()) line += ": " + detail;
    world.log(id(), EventKind::CommandServed, line);
    if (!reply.empty()) {
      // The reply leaves once the flash operation it reports on has finished.
      pending_reply_ = PendingReply{std::move(reply), std::max(world.now(), flash_.busy_until())};
      reset_after_reply_ = reset;
    } else if (reset) {
      reset_when_idle_ = true;
    }
  }

  if (pending_reply_ && world.now() >= pending_reply_->release) {
    send(world, pending_reply_->bytes);
    pending_reply_.reset();
    if (reset_after_reply_) {
      reset_after_reply_ = false;
      reset_when_idle_ = true;
    }
  }
}

Bytes TargetEcu::handle_application(sim::World&, ByteView msg, bool& reset) {
  const auto code = msg[0];
  switch (code) {
    case boot::cmd::kStatus: return {boot::kAck, code, static_cast<std::uint8_t>(ProgramMode::Application)};
    case boot::cmd::kEnterBootloader:
    case boot::cmd::kEnterUpdater:
      if (msg.size() != 1) return boot::nack(code, boot::NackReason::MalformedRequest);
      if (!session_.unlocked()) return boot::nack(code, boot::NackReason::SecurityLocked);
      nv::write_flag(regs_, FlagRegister::ApplicationEnter, BootFlag::NotEnter);
      nv::write_flag(regs_, FlagRegister::BootloaderUpdaterEnter,
                     code == boot::cmd::kEnterUpdater ? BootFlag::Enter : BootFlag::NotEnter);
      reset = true;
      return boot::ack(code);
    default: return {boot::kNack, code};
  }
}

void TargetEcu::nvm_task(sim::World& world) {
  updater_done_ = true;
  boot::BootContext ctx{flash_, regs_, session_, world.now(), nullptr};
  auto outcome = boot::updater_silent(ctx, config_.embedded_bootloader, config_.updater_fail_after);
  if (outcome.success) {
    world.log(id(), EventKind::CommandServed, "silent bootloader update complete");
  } else if (outcome.rolled_back) {
    world.log(id(), EventKind::Rollback, outcome.cause);
  } else {
    world.log(id(), EventKind::Fault, "silent update refused: " + outcome.cause);
  }
  updater_outcome_ = std::move(outcome);
  reset_when_idle_ = true;
}

void TargetEcu::app_task(sim::World& world) {
  const double dt = std::chrono::duration<double>(config_.lka_period).count();
  const double deviation = config_.deviations[next_deviation_++];
  const double target = lka::DeviationMap{}.target_for(deviation);
  lka::control_step(steering_, gains_, target, dt);
  lka_trace_.push_back({world.now(), deviation, target, steering_.position, lka::motor_order(deviation)});
  next_lka_ += config_.lka_period;
}

}  // namespace canfota::ota
