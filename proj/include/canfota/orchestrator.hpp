// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Master ECU and the update campaign it drives.
//
// A campaign is a job stepped by the master's Comm task: one outstanding
// request at a time, each with a timeout and a retry budget.
//
//   status -> [auth -> ENTER_BOOTLOADER -> wait for bootloader] -> auth
//     Full:  FLASH_ERASE (application) -> MEM_WRITE per block -> MEM_WRITE metadata
//     Delta: DELTA_DATA chunks -> DELTA_COMMIT
//   -> GO_TO_ADDR [ENTER, N_ENTER] -> wait for application

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "canfota/can.hpp"
#include "canfota/delta.hpp"
#include "canfota/flash.hpp"
#include "canfota/sim.hpp"
#include "canfota/target.hpp"
#include "canfota/uds.hpp"

namespace canfota::ota {

class MasterEcu;

/// Work driven by the master, one at a time.
class MasterJob {
 public:
  virtual ~MasterJob() = default;
  virtual void start(sim::World& world, MasterEcu& master) = 0;
  virtual void on_reply(sim::World& world, MasterEcu& master, NodeId target, ByteView reply) = 0;
  virtual void poll(sim::World& world, MasterEcu& master) = 0;
  virtual bool done() const = 0;
};

struct TranscriptEntry {
  Micros time{0};
  NodeId target = 0;
  bool outgoing = true;
  Bytes bytes;
};

class MasterEcu : public sim::Node {
 public:
  explicit MasterEcu(NodeId id) : sim::Node(id) {}

  void on_attach(sim::World& world) override;
  void software_reset(sim::World& world) override;

  void send(sim::World& world, NodeId target, ByteView message);

  /// Replaces the current job; it starts on the next tick.
  void set_job(std::shared_ptr<MasterJob> job);
  const std::shared_ptr<MasterJob>& job() const { return job_; }

  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
  void keep_transcript(bool on) { keep_transcript_ = on; }

 private:
  void comm_task(sim::World& world);

  can::SegmentedReceiver receiver_;
  std::shared_ptr<MasterJob> job_;
  bool job_started_ = false;
  std::vector<TranscriptEntry> transcript_;
  bool keep_transcript_ = true;
  sim::World* world_ = nullptr;
};

// --- security access --------------------------------------------------------

/// Runs one seed/key handshake against `target`.
class UnlockJob : public MasterJob {
 public:
  UnlockJob(NodeId target, std::uint32_t secret, Micros deadline = Micros{5'000'000});

  void start(sim::World& world, MasterEcu& master) override;
  void on_reply(sim::World& world, MasterEcu& master, NodeId target, ByteView reply) override;
  void poll(sim::World& world, MasterEcu& master) override;
  bool done() const override { return client_.done(); }

  const std::optional<uds::UnlockResult>& result() const { return client_.result(); }

 private:
  NodeId target_;
  uds::UdsClient client_;
};

/// Handshake driven through the world until it finishes or `deadline`
/// passes in simulated time.
uds::UnlockResult client_unlock(sim::World& world, MasterEcu& master, NodeId target, std::uint32_t secret,
                                Micros deadline = Micros{5'000'000});

// --- campaign -----------------------------------------------------------

enum class CampaignMode { Full, Delta };

const char* to_string(CampaignMode m);

enum class Outcome {
  Success,
  SecurityDenied,
  Timeout,
  BlockCrcMismatch,
  ImageCrcMismatch,
  FlashError,
  RegionViolation,
  BootFailed,
  Aborted,
  Protocol,
};

const char* to_string(Outcome o);

struct CampaignPlan {
  CampaignMode mode = CampaignMode::Delta;
  Bytes old_image;
  Bytes new_image;
  NodeId master = 1;
  NodeId target = 2;
  std::uint32_t shared_secret = 0;
  std::uint32_t retry_budget = 3;
  Micros command_timeout{10'000'000};
  Micros handshake_deadline{5'000'000};
  std::size_t block_size = integrity::kDefaultBlockSize;
  std::size_t gap_merge = delta::kDefaultGapMerge;
  std::size_t delta_chunk = 1024;
  flash::FlashLayout layout = flash::FlashLayout::stm32f401();
};

struct CampaignReport {
  CampaignMode mode = CampaignMode::Delta;
  Outcome outcome = Outcome::Timeout;
  std::string reason;
  std::uint64_t frames_sent = 0;
  std::uint64_t bytes_on_bus = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t command_retries = 0;
  std::size_t blocks_total = 0;
  std::size_t blocks_transferred = 0;
  std::size_t blocks_skipped = 0;
  std::size_t sectors_erased = 0;
  std::size_t package_bytes = 0;
  Micros handshake_duration{0};
  Micros transfer_duration{0};
  Micros flash_duration{0};
  Micros total_duration{0};
  std::uint32_t old_image_crc = 0;
  std::uint32_t new_image_crc = 0;
  std::size_t new_image_length = 0;

  bool success() const { return outcome == Outcome::Success; }
};

nlohmann::ordered_json to_json(const CampaignReport& r);

class IncomparableReports : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 1 - delta.total / full.total. Both reports must be successful and
/// describe the same (old, new) pair.
double reduction_ratio(const CampaignReport& delta_report, const CampaignReport& full_report);

class Campaign : public MasterJob {
 public:
  explicit Campaign(CampaignPlan plan);

  void start(sim::World& world, MasterEcu& master) override;
  void on_reply(sim::World& world, MasterEcu& master, NodeId target, ByteView reply) override;
  void poll(sim::World& world, MasterEcu& master) override;
  bool done() const override { return finished_; }

  /// Suspends streaming after the in-flight exchange; nothing is persisted.
  void pause() { paused_ = true; }
  void resume() { paused_ = false; }
  bool paused() const { return paused_; }
  /// Stops immediately; the target keeps whatever it has been sent.
  void abort(sim::World& world, const std::string& why = "aborted");

  const CampaignReport& report() const { return report_; }
  const CampaignPlan& plan() const { return plan_; }

  /// Name of the current step, for tests and logs.
  std::string phase_name() const;
  /// Blocks (Full) or package chunks (Delta) acknowledged so far.
  std::size_t units_done() const { return next_unit_; }
  /// True once the application region has been erased (Full) or the
  /// delta commit has been sent.
  bool erase_acknowledged() const { return erase_acked_; }

 private:
  enum class Phase {
    QueryStatus,
    AuthApp,
    EnterBootloader,
    AwaitBootloader,
    AuthBootloader,
    Erase,
    WriteBlocks,
    WriteMetadata,
    SendDelta,
    CommitDelta,
    GoToApp,
    AwaitApplication,
    Finished,
  };

  struct Exchange {
    Bytes request;
    Micros sent_at{0};
    std::uint32_t attempts = 0;
  };

  void enter(sim::World& world, MasterEcu& master, Phase next);
  void issue(sim::World& world, MasterEcu& master, Bytes request);
  void resend(sim::World& world, MasterEcu& master);
  bool matches(ByteView reply) const;
  void begin_handshake(sim::World& world, MasterEcu& master);
  void handle_uds(sim::World& world, MasterEcu& master, ByteView reply);
  void handle_command(sim::World& world, MasterEcu& master, ByteView reply);
  void next_unit(sim::World& world, MasterEcu& master);
  void fail(sim::World& world, Outcome outcome, const std::string& reason);
  void finish(sim::World& world);
  void snapshot_counters(sim::World& world, bool at_start);

  CampaignPlan plan_;
  CampaignReport report_;
  Phase phase_ = Phase::QueryStatus;
  bool finished_ = false;
  bool paused_ = false;
  bool erase_acked_ = false;
  std::optional<Exchange> exchange_;
  std::optional<uds::UdsClient> client_;
  std::uint32_t handshake_restarts_ = 0;
  Micros handshake_started_{0};
  bool first_handshake_done_ = false;
  Micros phase_started_{0};
  Micros started_{0};
  Micros flash_busy_at_start_{0};
  can::EndpointStats master_at_start_{};
  can::EndpointStats target_at_start_{};
  MasterEcu* master_ = nullptr;

  Bytes package_;
  std::size_t units_ = 0;
  std::size_t next_unit_ = 0;
};

/// Runs `plan` on `world` (which must hold both nodes) until the campaign
/// finishes or `max_ticks` elapse.
CampaignReport run_campaign(sim::World& world, const CampaignPlan& plan, std::uint64_t max_ticks = 2'000'000);

}  // namespace canfota::ota
