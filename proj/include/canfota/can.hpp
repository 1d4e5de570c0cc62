// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Simulated classic CAN bus plus a length-prefixed segmented transport.
//
// Arbitration is modelled at frame granularity: each bus step the pending
// frame with the lowest identifier wins (ties go to the earliest enqueued).
// The link-layer CRC is not simulated; instead the fault injector decides
// whether a frame is dropped or corrupted, and either outcome triggers the
// controller's automatic retransmission until the budget is spent.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "canfota/common.hpp"

namespace canfota::can {

using NodeId = std::uint32_t;

inline constexpr std::uint16_t kMaxId = 0x7FF;
inline constexpr std::uint8_t kMaxDlc = 8;

enum class FrameKind { Data, ErrorFrame };

struct CanFrame {
  std::uint16_t id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, 8> data{};
  FrameKind kind = FrameKind::Data;

  static CanFrame make(std::uint16_t id, ByteView payload);
  ByteView payload() const { return ByteView(data.data(), dlc <= kMaxDlc ? dlc : kMaxDlc); }
  bool well_formed() const { return id <= kMaxId && dlc <= kMaxDlc; }

  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

class MalformedFrame : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DuplicateNode : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AcceptanceFilter {
  std::uint16_t mask = 0;
  std::uint16_t match = 0;

  bool accepts(std::uint16_t id) const { return (id & mask) == match; }
};

/// Accept exactly one identifier.
inline AcceptanceFilter exact(std::uint16_t id) { return {kMaxId, id}; }

struct BusConfig {
  Micros frame_time{500};
  double corruption_probability = 0.0;
  double drop_probability = 0.0;
  std::uint64_t rng_seed = 0;
  /// nullopt: retransmit forever.
  std::optional<std::uint32_t> max_auto_retransmit = 3;

  void validate() const;
};

struct EndpointStats {
  std::uint64_t frames_sent = 0;  // every attempt that occupied the bus
  std::uint64_t bytes_sent = 0;   // payload bytes over those attempts
  std::uint64_t retransmissions = 0;
  std::uint64_t bus_off_events = 0;
  std::uint64_t frames_received = 0;
};

struct Endpoint {
  struct Pending {
    CanFrame frame;
    std::uint64_t order = 0;
    std::uint32_t failures = 0;
  };

  NodeId node = 0;
  std::vector<AcceptanceFilter> filters;
  std::deque<CanFrame> rx_fifo;
  std::deque<Pending> tx_queue;
  EndpointStats stats;

  bool accepts(std::uint16_t id) const;
};

struct Delivery {
  NodeId receiver = 0;
  CanFrame frame;
};

/// One frame occupying the bus, as recorded in the trace.
struct WireEvent {
  Micros time{0};
  NodeId sender = 0;
  CanFrame frame;  // kind == ErrorFrame when the attempt was corrupted
};

struct StepResult {
  std::vector<Delivery> delivered;
  Micros elapsed{0};
  std::optional<WireEvent> wire;  // absent when idle or the frame was dropped
};

class CanBus {
 public:
  explicit CanBus(BusConfig config = {});

  Endpoint& attach(NodeId node, std::vector<AcceptanceFilter> filters);
  Endpoint& endpoint(NodeId node);
  const Endpoint& endpoint(NodeId node) const;
  bool attached(NodeId node) const { return endpoints_.count(node) != 0; }

  /// Throws MalformedFrame for an out-of-range id or dlc.
  void transmit(NodeId node, const CanFrame& frame);

  /// Arbitrates and carries at most one frame.
  StepResult step(Micros now);

  /// Controller reset: drops both queues of one node.
  void flush(NodeId node);

  bool idle() const;

  const BusConfig& config() const { return config_; }
  /// Replaces fault probabilities and timing; the RNG stream continues.
  void reconfigure(const BusConfig& config);

 private:
  double uniform();

  BusConfig config_;
  std::mt19937_64 rng_;
  std::map<NodeId, Endpoint> endpoints_;
  std::uint64_t next_order_ = 0;
};

/// `time_us,id_hex,dlc,data_hex,kind`
std::string trace_line(const WireEvent& ev);
inline constexpr const char* kTraceHeader = "time_us,id_hex,dlc,data_hex,kind";

// --- segmented transport -------------------------------------------------

inline constexpr std::uint8_t kHeaderMarker = 0xA0;
inline constexpr std::size_t kBodyChunk = 7;
inline constexpr std::size_t kMaxSegmentedPayload = 0xFFFF;

class PayloadTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Header [0xA0, len_lo, len_hi, crc32 LE x4, 0x00] followed by
/// ceil(len/7) body frames [seq, up to 7 bytes] with seq counting from 0.
std::vector<CanFrame> segment(std::uint16_t id, ByteView payload);

void send_segmented(CanBus& bus, NodeId node, std::uint16_t id, ByteView payload);

enum class RxStatus { Pending, Complete, SequenceGap, ChecksumMismatch };

const char* to_string(RxStatus s);

struct RxEvent {
  RxStatus status = RxStatus::Pending;
  std::uint16_t id = 0;
  Bytes payload;  // set only when Complete
};

struct ReceiverStats {
  std::uint64_t completed = 0;
  std::uint64_t sequence_gaps = 0;
  std::uint64_t checksum_mismatches = 0;
  std::uint64_t restarts = 0;
};

/// Reassembles messages per CAN identifier. Each call consumes frames from
/// the fifo until a message completes, an error is detected, or the fifo
/// runs dry; remaining frames are left for the next call.
class SegmentedReceiver {
 public:
  RxEvent poll(std::deque<CanFrame>& fifo);
  void reset() { assemblies_.clear(); }
  const ReceiverStats& stats() const { return stats_; }

 private:
  struct Assembly {
    std::size_t expected_length = 0;
    std::uint32_t expected_crc = 0;
    std::uint8_t next_seq = 0;
    Bytes data;
  };

  static bool looks_like_header(const CanFrame& f) { return f.dlc == 8 && f.data[0] == kHeaderMarker; }
  std::optional<RxEvent> accept(const CanFrame& frame);

  std::map<std::uint16_t, Assembly> assemblies_;
  ReceiverStats stats_;
};

RxEvent recv_segmented(CanBus& bus, NodeId node, SegmentedReceiver& receiver);

}  // namespace canfota::can
