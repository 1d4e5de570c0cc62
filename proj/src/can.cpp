// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/can.hpp"

#include <algorithm>
#include <cstdio>

#include "canfota/integrity.hpp"

namespace canfota::can {

CanFrame CanFrame::make(std::uint16_t id, ByteView payload) {
  if (payload.size() > kMaxDlc) throw MalformedFrame("payload longer than 8 bytes");
  CanFrame f;
  f.id = id;
  f.dlc = static_cast<std::uint8_t>(payload.size());
  std::copy(payload.begin(), payload.end(), f.data.begin());
  return f;
}

void BusConfig::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(corruption_probability) || !prob_ok(drop_probability)) {
    throw std::invalid_argument("bus fault probabilities must lie in [0,1]");
  }
  if (frame_time <= Micros{0}) throw std::invalid_argument("frame time must be positive");
}

bool Endpoint::accepts(std::uint16_t id) const {
  return std::any_of(filters.begin(), filters.end(), [id](const AcceptanceFilter& f) { return f.accepts(id); });
}

CanBus::CanBus(BusConfig config) : config_(config), rng_(config.rng_seed) { config_.validate(); }

Endpoint& CanBus::attach(NodeId node, std::vector<AcceptanceFilter> filters) {
  if (endpoints_.count(node)) throw DuplicateNode("node " + std::to_string(node) + " already attached");
  auto& ep = endpoints_[node];
  ep.node = node;
  ep.filters = std::move(filters);
  return ep;
}

Endpoint& CanBus::endpoint(NodeId node) {
  auto it = endpoints_.find(node);
  if (it == endpoints_.end()) throw std::out_of_range("node " + std::to_string(node) + " not attached");
  return it->second;
}

const Endpoint& CanBus::endpoint(NodeId node) const {
  auto it = endpoints_.find(node);
  if (it == endpoints_.end()) throw std::out_of_range("node " + std::to_string(node) + " not attached");
  return it->second;
}

void CanBus::transmit(NodeId node, const CanFrame& frame) {
  if (frame.id > kMaxId) throw MalformedFrame("identifier exceeds 11 bits");
  if (frame.dlc > kMaxDlc) throw MalformedFrame("dlc exceeds 8");
  if (frame.kind != FrameKind::Data) throw MalformedFrame("only data frames may be queued");
  endpoint(node).tx_queue.push_back({frame, next_order_++, 0});
}

double CanBus::uniform() {
  // 53 random mantissa bits; avoids distribution classes whose output is
  // implementation defined.
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

StepResult CanBus::step(Micros now) {
  StepResult result;
  Endpoint* winner = nullptr;
  for (auto& [id, ep] : endpoints_) {
    if (ep.tx_queue.empty()) continue;
    const auto& head = ep.tx_queue.front();
    if (!winner) {
      winner = &ep;
      continue;
    }
    const auto& best = winner->tx_queue.front();
    if (head.frame.id < best.frame.id || (head.frame.id == best.frame.id && head.order < best.order)) winner = &ep;
  }
  if (!winner) return result;

  result.elapsed = config_.frame_time;
  auto& pending = winner->tx_queue.front();
  winner->stats.frames_sent += 1;
  winner->stats.bytes_sent += pending.frame.dlc;

  // Always draw three values so the random stream does not depend on outcomes.
  const double drop_draw = uniform();
  const double corrupt_draw = uniform();
  const std::uint64_t bit_draw = rng_();
  const bool dropped = drop_draw < config_.drop_probability;
  const bool corrupted = !dropped && corrupt_draw < config_.corruption_probability;

  if (!dropped && !corrupted) {
    const CanFrame frame = pending.frame;
    winner->tx_queue.pop_front();
    result.wire = WireEvent{now, winner->node, frame};
    for (auto& [id, ep] : endpoints_) {
      if (&ep == winner || !ep.accepts(frame.id)) continue;
      ep.rx_fifo.push_back(frame);
      ep.stats.frames_received += 1;
      result.delivered.push_back({ep.node, frame});
    }
    return result;
  }

  if (corrupted) {
    CanFrame garbled = pending.frame;
    if (garbled.dlc > 0) {
      const auto bit = bit_draw % (garbled.dlc * 8u);
      garbled.data[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
    garbled.kind = FrameKind::ErrorFrame;
    result.wire = WireEvent{now, winner->node, garbled};
  }

  pending.failures += 1;
  if (!config_.max_auto_retransmit || pending.failures <= *config_.max_auto_retransmit) {
    winner->stats.retransmissions += 1;
  } else {
    winner->stats.bus_off_events += 1;
    winner->tx_queue.pop_front();
  }
  return result;
}

void CanBus::flush(NodeId node) {
  auto& ep = endpoint(node);
  ep.rx_fifo.clear();
  ep.tx_queue.clear();
}

bool CanBus::idle() const {
  return std::all_of(endpoints_.begin(), endpoints_.end(), [](const auto& kv) { return kv.second.tx_queue.empty(); });
}

void CanBus::reconfigure(const BusConfig& config) {
  config.validate();
  const auto seed = config_.rng_seed;
  config_ = config;
  config_.rng_seed = seed;
}

std::string trace_line(const WireEvent& ev) {
  char prefix[64];
  std::snprintf(prefix, sizeof prefix, "%lld,0x%03x,%u,", static_cast<long long>(ev.time.count()), ev.frame.id,
                static_cast<unsigned>(ev.frame.dlc));
  return prefix + to_hex(ev.frame.payload()) + (ev.frame.kind == FrameKind::Data ? ",Data" : ",ErrorFrame");
}

std::vector<CanFrame> segment(std::uint16_t id, ByteView payload) {
  if (payload.empty()) throw std::invalid_argument("segmented payload must not be empty");
  if (payload.size() > kMaxSegmentedPayload) throw PayloadTooLarge("segmented payload exceeds 65535 bytes");
  std::vector<CanFrame> frames;
  frames.reserve(1 + (payload.size() + kBodyChunk - 1) / kBodyChunk);

  Bytes header{kHeaderMarker, static_cast<std::uint8_t>(payload.size()), static_cast<std::uint8_t>(payload.size() >> 8)};
  put_le32(header, integrity::crc32(payload));
  header.push_back(0x00);
  frames.push_back(CanFrame::make(id, header));

  std::uint8_t seq = 0;
  for (std::size_t at = 0; at < payload.size(); at += kBodyChunk) {
    const auto n = std::min(kBodyChunk, payload.size() - at);
    CanFrame f;
    f.id = id;
    f.dlc = static_cast<std::uint8_t>(n + 1);
    f.data[0] = seq++;
    std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(at), n, f.data.begin() + 1);
    frames.push_back(f);
  }
  return frames;
}

void send_segmented(CanBus& bus, NodeId node, std::uint16_t id, ByteView payload) {
  for (const auto& f : segment(id, payload)) bus.transmit(node, f);
}

const char* to_string(RxStatus s) {
  switch (s) {
    case RxStatus::Pending: return "Pending";
    case RxStatus::Complete: return "Complete";
    case RxStatus::SequenceGap: return "SequenceGap";
    case RxStatus::ChecksumMismatch: return "ChecksumMismatch";
  }
  return "?";
}

std::optional<RxEvent> SegmentedReceiver::accept(const CanFrame& frame) {
  auto it = assemblies_.find(frame.id);
  const bool assembling = it != assemblies_.end();

  if (frame.kind != FrameKind::Data || frame.dlc == 0) {
    return std::nullopt;
  }
  if (looks_like_header(frame) && (!assembling || frame.data[0] != it->second.next_seq)) {
    if (assembling) ++stats_.restarts;
    Assembly a;
    a.expected_length = frame.data[1] | (frame.data[2] << 8);
    a.expected_crc = get_le32(frame.payload(), 3);
    if (a.expected_length == 0) {
      assemblies_.erase(frame.id);
      ++stats_.sequence_gaps;
      return RxEvent{RxStatus::SequenceGap, frame.id, {}};
    }
    a.data.reserve(a.expected_length);
    assemblies_[frame.id] = std::move(a);
    return std::nullopt;
  }
  if (!assembling) {
    ++stats_.sequence_gaps;
    return RxEvent{RxStatus::SequenceGap, frame.id, {}};
  }
  auto& a = it->second;
  const std::size_t chunk = frame.dlc - 1u;
  if (frame.data[0] != a.next_seq || chunk > a.expected_length - a.data.size()) {
    assemblies_.erase(it);
    ++stats_.sequence_gaps;
    return RxEvent{RxStatus::SequenceGap, frame.id, {}};
  }
  a.data.insert(a.data.end(), frame.data.begin() + 1, frame.data.begin() + 1 + chunk);
  a.next_seq = static_cast<std::uint8_t>(a.next_seq + 1);
  if (a.data.size() < a.expected_length) return std::nullopt;

  Assembly done = std::move(a);
  assemblies_.erase(it);
  if (integrity::crc32(done.data) != done.expected_crc) {
    ++stats_.checksum_mismatches;
    return RxEvent{RxStatus::ChecksumMismatch, frame.id, {}};
  }
  ++stats_.completed;
  return RxEvent{RxStatus::Complete, frame.id, std::move(done.data)};
}

RxEvent SegmentedReceiver::poll(std::deque<CanFrame>& fifo) {
  while (!fifo.empty()) {
    const CanFrame frame = fifo.front();
    fifo.pop_front();
    if (auto ev = accept(frame)) return std::move(*ev);
  }
  return {};
}

RxEvent recv_segmented(CanBus& bus, NodeId node, SegmentedReceiver& receiver) {
  return receiver.poll(bus.endpoint(node).rx_fifo);
}

}  // namespace canfota::can
