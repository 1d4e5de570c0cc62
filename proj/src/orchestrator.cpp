// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/orchestrator.hpp"

#include <algorithm>
#include <cstdio>

#include "canfota/bootflow.hpp"
#include "canfota/nvstore.hpp"

namespace canfota::ota {

using sim::EventKind;

namespace {

constexpr Micros kStatusPollInterval{100'000};

std::string byte_label(std::uint8_t b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", b);
  return buf;
}

bool is_uds_reply(ByteView r) {
  return !r.empty() && (r[0] == uds::kSecurityAccess + uds::kPositiveOffset ||
                        (r[0] == uds::kNegativeResponse && r.size() >= 2 && r[1] == uds::kSecurityAccess));
}

bool is_transfer_error(ByteView r) {
  return r.size() == 3 && r[0] == boot::kNack && r[1] == 0x00 &&
         r[2] == static_cast<std::uint8_t>(boot::NackReason::TransferError);
}

Outcome outcome_for(ByteView nack) {
  if (nack.size() < 3) return Outcome::Protocol;
  switch (static_cast<boot::NackReason>(nack[2])) {
    case boot::NackReason::RegionViolation: return Outcome::RegionViolation;
    case boot::NackReason::SecurityLocked: return Outcome::SecurityDenied;
    case boot::NackReason::FlashError: return Outcome::FlashError;
    case boot::NackReason::BlockCrcMismatch: return Outcome::BlockCrcMismatch;
    case boot::NackReason::ImageCrcMismatch: return Outcome::ImageCrcMismatch;
    default: return Outcome::Protocol;
  }
}

}  // namespace

// --- master node ------------------------------------------------------------

void MasterEcu::on_attach(sim::World& world) {
  world_ = &world;
  world.bus().attach(id(), {can::AcceptanceFilter{0x780, 0x680}});
  add_task({"comm", sim::TaskPriority::Comm,
            [this] {
              const bool busy = job_ && !job_->done();
              return busy || !world_->bus().endpoint(id()).rx_fifo.empty() ? sim::TaskState::Ready
                                                                             : sim::TaskState::Blocked;
            },
            [this](sim::World& w) { comm_task(w); }});
}

void MasterEcu::software_reset(sim::World& world) {
  sim::Node::software_reset(world);
  world.bus().flush(id());
  receiver_.reset();
}

void MasterEcu::send(sim::World& world, NodeId target, ByteView message) {
  can::send_segmented(world.bus(), id(), request_id(target), message);
  if (keep_transcript_) transcript_.push_back({world.now(), target, true, Bytes(message.begin(), message.end())});
}

void MasterEcu::set_job(std::shared_ptr<MasterJob> job) {
  job_ = std::move(job);
  job_started_ = false;
}

void MasterEcu::comm_task(sim::World& world) {
  if (job_ && !job_started_) {
    job_started_ = true;
    job_->start(world, *this);
  }
  for (;;) {
    auto ev = can::recv_segmented(world.bus(), id(), receiver_);
    if (ev.status == can::RxStatus::Pending) break;
    if (ev.status != can::RxStatus::Complete) continue;
    const NodeId from = ev.id & 0x7F;
    if (keep_transcript_) transcript_.push_back({world.now(), from, false, ev.payload});
    if (job_ && !job_->done()) job_->on_reply(world, *this, from, ev.payload);
  }
  if (job_ && !job_->done()) job_->poll(world, *this);
}

// --- security access --------------------------------------------------------

UnlockJob::UnlockJob(NodeId target, std::uint32_t secret, Micros deadline)
    : target_(target), client_(secret, deadline) {}

void UnlockJob::start(sim::World& world, MasterEcu& master) { master.send(world, target_, client_.start(world.now())); }

void UnlockJob::on_reply(sim::World& world, MasterEcu& master, NodeId target, ByteView reply) {
  if ((target & 0x7F) != (target_ & 0x7F) || !is_uds_reply(reply) || client_.done()) return;
  if (auto next = client_.on_response(reply, world.now())) master.send(world, target_, *next);
}

void UnlockJob::poll(sim::World& world, MasterEcu&) { client_.poll(world.now()); }

uds::UnlockResult client_unlock(sim::World& world, MasterEcu& master, NodeId target, std::uint32_t secret,
                                Micros deadline) {
  auto job = std::make_shared<UnlockJob>(target, secret, deadline);
  master.set_job(job);
  const auto budget = static_cast<std::uint64_t>(deadline / sim::kTick) + 10;
  sim::run_until(world, [&](const sim::World&) { return job->done(); }, budget);
  if (job->result()) return *job->result();
  return uds::UnlockResult{uds::UnlockOutcome::Timeout, std::nullopt, deadline};
}

// --- campaign ---------------------------------------------------------------

const char* to_string(CampaignMode m) { return m == CampaignMode::Full ? "Full" : "Delta"; }

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "Success";
    case Outcome::SecurityDenied: return "SecurityDenied";
    case Outcome::Timeout: return "Timeout";
    case Outcome::BlockCrcMismatch: return "BlockCrcMismatch";
    case Outcome::ImageCrcMismatch: return "ImageCrcMismatch";
    case Outcome::FlashError: return "FlashError";
    case Outcome::RegionViolation: return "RegionViolation";
    case Outcome::BootFailed: return "BootFailed";
    case Outcome::Aborted: return "Aborted";
    case Outcome::Protocol: return "Protocol";
  }
  return "?";
}

nlohmann::ordered_json to_json(const CampaignReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(r.mode);
  j["outcome"] = r.success() ? "Success" : "Failed";
  if (!r.success()) j["failure"] = to_string(r.outcome);
  if (!r.reason.empty()) j["reason"] = r.reason;
  j["frames_sent"] = r.frames_sent;
  j["bytes_on_bus"] = r.bytes_on_bus;
  j["retransmissions"] = r.retransmissions;
  j["command_retries"] = r.command_retries;
  j["blocks_total"] = r.blocks_total;
  j["blocks_transferred"] = r.blocks_transferred;
  j["blocks_skipped"] = r.blocks_skipped;
  j["sectors_erased"] = r.sectors_erased;
  j["package_bytes"] = r.package_bytes;
  j["handshake_duration_us"] = r.handshake_duration.count();
  j["simulated_transfer_duration_us"] = r.transfer_duration.count();
  j["simulated_flash_duration_us"] = r.flash_duration.count();
  j["total_simulated_duration_us"] = r.total_duration.count();
  j["old_image_crc"] = hex32(r.old_image_crc);
  j["new_image_crc"] = hex32(r.new_image_crc);
  j["new_image_length"] = r.new_image_length;
  return j;
}

double reduction_ratio(const CampaignReport& delta_report, const CampaignReport& full_report) {
  if (delta_report.mode != CampaignMode::Delta || full_report.mode != CampaignMode::Full) {
    throw IncomparableReports("expected one delta and one full report");
  }
  if (!delta_report.success() || !full_report.success()) throw IncomparableReports("both campaigns must succeed");
  if (delta_report.old_image_crc != full_report.old_image_crc ||
      delta_report.new_image_crc != full_report.new_image_crc ||
      delta_report.new_image_length != full_report.new_image_length) {
    throw IncomparableReports("campaigns moved different images");
  }
  if (full_report.total_duration <= Micros{0}) throw IncomparableReports("full campaign took no time");
  return 1.0 - static_cast<double>(delta_report.total_duration.count()) /
                   static_cast<double>(full_report.total_duration.count());
}

Campaign::Campaign(CampaignPlan plan) : plan_(std::move(plan)) { report_.mode = plan_.mode; }

std::string Campaign::phase_name() const {
  switch (phase_) {
    case Phase::QueryStatus: return "QueryStatus";
    case Phase::AuthApp: return "AuthApp";
    case Phase::EnterBootloader: return "EnterBootloader";
    case Phase::AwaitBootloader: return "AwaitBootloader";
    case Phase::AuthBootloader: return "AuthBootloader";
    case Phase::Erase: return "Erase";
    case Phase::WriteBlocks: return "WriteBlocks";
    case Phase::WriteMetadata: return "WriteMetadata";
    case Phase::SendDelta: return "SendDelta";
    case Phase::CommitDelta: return "CommitDelta";
    case Phase::GoToApp: return "GoToApp";
    case Phase::AwaitApplication: return "AwaitApplication";
    case Phase::Finished: return "Finished";
  }
  return "?";
}

void Campaign::snapshot_counters(sim::World& world, bool at_start) {
  const auto& bus = world.bus();
  const auto master = bus.endpoint(plan_.master).stats;
  const auto target = bus.endpoint(plan_.target).stats;
  Micros flash_busy{0};
  if (auto* t = dynamic_cast<TargetEcu*>(&world.node(plan_.target))) flash_busy = t->flash().counters().busy_time;
  if (at_start) {
    master_at_start_ = master;
    target_at_start_ = target;
    flash_busy_at_start_ = flash_busy;
    return;
  }
  report_.frames_sent =
      (master.frames_sent - master_at_start_.frames_sent) + (target.frames_sent - target_at_start_.frames_sent);
  report_.bytes_on_bus =
      (master.bytes_sent - master_at_start_.bytes_sent) + (target.bytes_sent - target_at_start_.bytes_sent);
  report_.retransmissions = (master.retransmissions - master_at_start_.retransmissions) +
                            (target.retransmissions - target_at_start_.retransmissions);
  report_.total_duration = world.now() - started_;
  report_.flash_duration = std::min(flash_busy - flash_busy_at_start_, report_.total_duration);
  report_.transfer_duration = report_.total_duration - report_.flash_duration;
}

void Campaign::start(sim::World& world, MasterEcu& master) {
  master_ = &master;
  started_ = world.now();
  snapshot_counters(world, true);
  const auto& img = plan_.new_image;
  report_.new_image_length = img.size();
  report_.new_image_crc = img.empty() ? 0 : integrity::crc32(img);
  report_.old_image_crc = plan_.old_image.empty() ? 0 : integrity::crc32(plan_.old_image);
  world.log(master.id(), EventKind::Campaign,
            std::string("start ") + to_string(plan_.mode) + " target " + std::to_string(plan_.target));

  if (img.empty()) return fail(world, Outcome::Protocol, "new image is empty");
  if (img.size() > nv::application_capacity(plan_.layout)) {
    return fail(world, Outcome::RegionViolation, "new image exceeds application capacity");
  }
  report_.blocks_total = integrity::block_count(img.size(), plan_.block_size);
  try {
    nv::encode_app_metadata(nv::AppMetadata::describe(img, plan_.block_size));
    if (plan_.mode == CampaignMode::Full) {
      units_ = report_.blocks_total;
      report_.blocks_transferred = units_;
      report_.package_bytes = img.size();
    } else {
      if (plan_.old_image.empty()) return fail(world, Outcome::Protocol, "delta mode needs the current image");
      const auto pkg = delta::build_delta(plan_.old_image, img, plan_.block_size, plan_.gap_merge);
      package_ = delta::encode_package(pkg);
      units_ = (package_.size() + plan_.delta_chunk - 1) / plan_.delta_chunk;
      report_.blocks_transferred = pkg.entries.size();
      report_.blocks_skipped = report_.blocks_total - pkg.entries.size();
      report_.package_bytes = package_.size();
    }
  } catch (const std::exception& e) {
    return fail(world, Outcome::Protocol, e.what());
  }
  enter(world, master, Phase::QueryStatus);
}

void Campaign::issue(sim::World& world, MasterEcu& master, Bytes request) {
  exchange_ = Exchange{std::move(request), world.now(), 1};
  master.send(world, plan_.target, exchange_->request);
}

void Campaign::resend(sim::World& world, MasterEcu& master) {
  if (exchange_->attempts > plan_.retry_budget) {
    return fail(world, Outcome::Timeout, "no reply to " + byte_label(exchange_->request[0]));
  }
  ++exchange_->attempts;
  ++report_.command_retries;
  exchange_->sent_at = world.now();
  master.send(world, plan_.target, exchange_->request);
}

void Campaign::begin_handshake(sim::World& world, MasterEcu& master) {
  exchange_.reset();
  client_.emplace(plan_.shared_secret, plan_.handshake_deadline);
  handshake_started_ = world.now();
  master.send(world, plan_.target, client_->start(world.now()));
}

void Campaign::enter(sim::World& world, MasterEcu& master, Phase next) {
  phase_ = next;
  phase_started_ = world.now();
  exchange_.reset();
  switch (next) {
    case Phase::QueryStatus:
    case Phase::AwaitBootloader:
    case Phase::AwaitApplication: return issue(world, master, {boot::cmd::kStatus});
    case Phase::AuthApp:
    case Phase::AuthBootloader:
      handshake_restarts_ = 0;
      return begin_handshake(world, master);
    case Phase::EnterBootloader: return issue(world, master, {boot::cmd::kEnterBootloader});
    case Phase::Erase: return issue(world, master, {boot::cmd::kFlashErase, flash::kMassEraseApplication, 0x00});
    case Phase::WriteBlocks:
    case Phase::SendDelta:
      next_unit_ = 0;
      return next_unit(world, master);
    case Phase::WriteMetadata: {
      const auto meta = nv::encode_app_metadata(nv::AppMetadata::describe(plan_.new_image, plan_.block_size));
      Bytes req{boot::cmd::kMemWrite};
      put_le32(req, static_cast<std::uint32_t>(nv::metadata_offset(plan_.layout)));
      put_le16(req, static_cast<std::uint16_t>(meta.size()));
      req.insert(req.end(), meta.begin(), meta.end());
      return issue(world, master, std::move(req));
    }
    case Phase::CommitDelta: {
      Bytes req{boot::cmd::kDeltaCommit};
      put_le32(req, static_cast<std::uint32_t>(package_.size()));
      erase_acked_ = true;
      return issue(world, master, std::move(req));
    }
    case Phase::GoToApp:
      return issue(world, master,
                   {boot::cmd::kGoToAddr, static_cast<std::uint8_t>(nv::BootFlag::Enter),
                    static_cast<std::uint8_t>(nv::BootFlag::NotEnter)});
    case Phase::Finished: return finish(world);
  }
}

void Campaign::next_unit(sim::World& world, MasterEcu& master) {
  if (paused_) return;
  const auto i = next_unit_;
  if (plan_.mode == CampaignMode::Full) {
    const auto& app = plan_.layout.region(flash::RegionId::Application);
    const auto from = i * plan_.block_size;
    const auto len = std::min(plan_.block_size, plan_.new_image.size() - from);
    Bytes req{boot::cmd::kMemWrite};
    put_le32(req, static_cast<std::uint32_t>(app.offset + from));
    put_le16(req, static_cast<std::uint16_t>(len));
    req.insert(req.end(), plan_.new_image.begin() + static_cast<std::ptrdiff_t>(from),
               plan_.new_image.begin() + static_cast<std::ptrdiff_t>(from + len));
    return issue(world, master, std::move(req));
  }
  const auto from = i * plan_.delta_chunk;
  const auto len = std::min(plan_.delta_chunk, package_.size() - from);
  Bytes req{boot::cmd::kDeltaData};
  put_le32(req, static_cast<std::uint32_t>(from));
  req.insert(req.end(), package_.begin() + static_cast<std::ptrdiff_t>(from),
             package_.begin() + static_cast<std::ptrdiff_t>(from + len));
  issue(world, master, std::move(req));
}

void Campaign::poll(sim::World& world, MasterEcu& master) {
  if (finished_) return;
  const auto now = world.now();
  if (client_) {
    client_->poll(now);
    if (client_->done() && client_->result()->outcome == uds::UnlockOutcome::Timeout) {
      if (handshake_restarts_ >= plan_.retry_budget) return fail(world, Outcome::Timeout, "security handshake");
      ++handshake_restarts_;
      ++report_.command_retries;
      begin_handshake(world, master);
    }
    return;
  }
  if (!exchange_) {
    if (!paused_ && (phase_ == Phase::WriteBlocks || phase_ == Phase::SendDelta)) next_unit(world, master);
    return;
  }
  const bool awaiting = phase_ == Phase::AwaitBootloader || phase_ == Phase::AwaitApplication;
  if (awaiting) {
    if (now - phase_started_ >= plan_.command_timeout) {
      return fail(world, Outcome::Timeout, std::string("target did not reach ") +
                                               (phase_ == Phase::AwaitBootloader ? "bootloader" : "application"));
    }
    if (now - exchange_->sent_at >= kStatusPollInterval) {
      exchange_->sent_at = now;
      master.send(world, plan_.target, exchange_->request);
    }
    return;
  }
  if (now - exchange_->sent_at >= plan_.command_timeout) resend(world, master);
}

bool Campaign::matches(ByteView reply) const {
  return exchange_ && reply.size() >= 2 && (reply[0] == boot::kAck || reply[0] == boot::kNack) &&
         reply[1] == exchange_->request[0];
}

void Campaign::on_reply(sim::World& world, MasterEcu& master, NodeId target, ByteView reply) {
  if (finished_ || (target & 0x7F) != (plan_.target & 0x7F) || reply.empty()) return;
  if (client_) {
    if (is_uds_reply(reply)) handle_uds(world, master, reply);
    return;
  }
  if (!exchange_) return;
  if (is_transfer_error(reply)) return resend(world, master);
  if (matches(reply)) handle_command(world, master, reply);
}

void Campaign::handle_uds(sim::World& world, MasterEcu& master, ByteView reply) {
  if (client_->done()) return;
  if (auto next = client_->on_response(reply, world.now())) {
    master.send(world, plan_.target, *next);
    return;
  }
  if (!client_->done()) return;
  const auto result = *client_->result();
  client_.reset();
  if (result.outcome == uds::UnlockOutcome::Granted) {
    if (!first_handshake_done_) {
      first_handshake_done_ = true;
      report_.handshake_duration = result.duration;
    }
    if (phase_ == Phase::AuthApp) return enter(world, master, Phase::EnterBootloader);
    return enter(world, master, plan_.mode == CampaignMode::Full ? Phase::Erase : Phase::SendDelta);
  }
  const auto nrc = result.nrc.value_or(0);
  if (nrc == static_cast<std::uint8_t>(uds::Nrc::RequestSequenceError) && handshake_restarts_ < plan_.retry_budget) {
    ++handshake_restarts_;
    ++report_.command_retries;
    return begin_handshake(world, master);
  }
  fail(world, Outcome::SecurityDenied, "security access NRC " + byte_label(nrc));
}

void Campaign::handle_command(sim::World& world, MasterEcu& master, ByteView reply) {
  const bool ok = reply[0] == boot::kAck;
  const auto code = exchange_->request[0];
  switch (phase_) {
    case Phase::QueryStatus:
      if (!ok || reply.size() != 3) return fail(world, Outcome::Protocol, "bad status reply");
      if (reply[2] == static_cast<std::uint8_t>(boot::ProgramMode::Application)) {
        return enter(world, master, Phase::AuthApp);
      }
      if (reply[2] == static_cast<std::uint8_t>(boot::ProgramMode::Bootloader)) {
        return enter(world, master, Phase::AuthBootloader);
      }
      return fail(world, Outcome::Protocol, "target is in mode " + std::to_string(reply[2]));
    case Phase::AwaitBootloader:
    case Phase::AwaitApplication: {
      if (!ok || reply.size() != 3) return;
      const auto mode = static_cast<boot::ProgramMode>(reply[2]);
      if (phase_ == Phase::AwaitBootloader) {
        if (mode == boot::ProgramMode::Bootloader) enter(world, master, Phase::AuthBootloader);
        return;
      }
      if (mode == boot::ProgramMode::Application) {
        report_.outcome = Outcome::Success;
        return enter(world, master, Phase::Finished);
      }
      return fail(world, Outcome::BootFailed, std::string("target booted into ") + boot::to_string(mode));
    }
    case Phase::EnterBootloader:
      if (ok) return enter(world, master, Phase::AwaitBootloader);
      return fail(world, outcome_for(reply), "enter bootloader refused");
    case Phase::GoToApp:
      // A bare NACK means the request reached an already-restarted target.
      if (ok || reply.size() == 2) return enter(world, master, Phase::AwaitApplication);
      return fail(world, outcome_for(reply), "go to address refused");
    default: break;
  }

  if (!ok) return fail(world, outcome_for(reply), "command " + byte_label(code) + " refused");
  exchange_.reset();
  switch (phase_) {
    case Phase::Erase:
      erase_acked_ = true;
      report_.sectors_erased = plan_.layout.sectors_of(flash::RegionId::Application).size();
      return enter(world, master, Phase::WriteBlocks);
    case Phase::WriteBlocks:
      if (++next_unit_ == units_) return enter(world, master, Phase::WriteMetadata);
      return next_unit(world, master);
    case Phase::WriteMetadata: return enter(world, master, Phase::GoToApp);
    case Phase::SendDelta:
      if (++next_unit_ == units_) return enter(world, master, Phase::CommitDelta);
      return next_unit(world, master);
    case Phase::CommitDelta:
      if (reply.size() >= 4) report_.sectors_erased = reply[2];
      return enter(world, master, Phase::GoToApp);
    default: return;
  }
}

void Campaign::fail(sim::World& world, Outcome outcome, const std::string& reason) {
  report_.outcome = outcome;
  report_.reason = reason;
  finish(world);
}

void Campaign::finish(sim::World& world) {
  if (finished_) return;
  finished_ = true;
  phase_ = Phase::Finished;
  exchange_.reset();
  client_.reset();
  snapshot_counters(world, false);
  const auto node = master_ ? master_->id() : plan_.master;
  std::string line = std::string("end ") + to_string(report_.outcome);
  if (!report_.reason.empty()) line += ": " + report_.reason;
  world.log(node, EventKind::Campaign, line);
}

void Campaign::abort(sim::World& world, const std::string& why) {
  if (!finished_) fail(world, Outcome::Aborted, why);
}

CampaignReport run_campaign(sim::World& world, const CampaignPlan& plan, std::uint64_t max_ticks) {
  if (!world.has_node(plan.master) || !world.has_node(plan.target)) {
    throw std::invalid_argument("campaign needs master and target nodes in the world");
  }
  auto& master = world.node_as<MasterEcu>(plan.master);
  auto campaign = std::make_shared<Campaign>(plan);
  master.set_job(campaign);
  sim::run_until(world, [&](const sim::World&) { return campaign->done(); }, max_ticks);
  if (!campaign->done()) {
    campaign->abort(world, "tick budget exhausted");
    auto report = campaign->report();
    report.outcome = Outcome::Timeout;
    return report;
  }
  return campaign->report();
}

}  // namespace canfota::ota
