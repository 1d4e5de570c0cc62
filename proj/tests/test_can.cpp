// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "canfota/can.hpp"
#include "canfota/integrity.hpp"
#include "test_support.hpp"

namespace canfota::can {
namespace {

using canfota::testing::random_bytes;

constexpr AcceptanceFilter kAll{0, 0};

CanFrame frame(std::uint16_t id, Bytes data) { return CanFrame::make(id, data); }

/// Steps the bus until every transmit queue is empty.
std::vector<Delivery> drain(CanBus& bus, std::size_t max_steps = 1'000'000) {
  std::vector<Delivery> all;
  Micros now{0};
  for (std::size_t i = 0; i < max_steps && !bus.idle(); ++i) {
    auto r = bus.step(now);
    now += r.elapsed;
    all.insert(all.end(), r.delivered.begin(), r.delivered.end());
  }
  return all;
}

TEST(CanBusTest, DistinctNodesReceivePerFilter) {
  CanBus bus;
  bus.attach(1, {exact(0x101)});
  bus.attach(2, {exact(0x202)});
  bus.attach(3, {kAll});
  bus.transmit(3, frame(0x101, {1}));
  bus.transmit(3, frame(0x202, {2}));
  drain(bus);
  ASSERT_EQ(bus.endpoint(1).rx_fifo.size(), 1u);
  EXPECT_EQ(bus.endpoint(1).rx_fifo.front().id, 0x101);
  ASSERT_EQ(bus.endpoint(2).rx_fifo.size(), 1u);
  EXPECT_EQ(bus.endpoint(2).rx_fifo.front().id, 0x202);
  EXPECT_TRUE(bus.endpoint(3).rx_fifo.empty());
}

TEST(CanBusTest, DuplicateNodeRejected) {
  CanBus bus;
  bus.attach(1, {kAll});
  EXPECT_THROW(bus.attach(1, {kAll}), DuplicateNode);
}

TEST(CanBusTest, ExactMaskFilter) {
  CanBus bus;
  bus.attach(1, {AcceptanceFilter{0x7FF, 0x101}});
  bus.attach(2, {kAll});
  bus.transmit(2, frame(0x100, {}));
  bus.transmit(2, frame(0x101, {}));
  bus.transmit(2, frame(0x103, {}));
  drain(bus);
  ASSERT_EQ(bus.endpoint(1).rx_fifo.size(), 1u);
  EXPECT_EQ(bus.endpoint(1).rx_fifo.front().id, 0x101);
}

TEST(CanBusTest, MalformedFramesRejected) {
  CanBus bus;
  bus.attach(1, {kAll});
  CanFrame f;
  f.id = 0x100;
  f.dlc = 9;
  EXPECT_THROW(bus.transmit(1, f), MalformedFrame);
  f.dlc = 1;
  f.id = 0x800;
  EXPECT_THROW(bus.transmit(1, f), MalformedFrame);
  EXPECT_THROW(CanFrame::make(0x100, Bytes(9, 0)), MalformedFrame);
  EXPECT_TRUE(bus.idle());
}

TEST(CanBusTest, ValidFrameDeliveredOnLaterStep) {
  CanBus bus;
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  bus.transmit(1, frame(0x123, {9, 8, 7}));
  EXPECT_TRUE(bus.endpoint(2).rx_fifo.empty());
  const auto r = bus.step(Micros{0});
  EXPECT_EQ(r.elapsed, Micros{500});
  ASSERT_EQ(r.delivered.size(), 1u);
  EXPECT_EQ(r.delivered[0].receiver, 2u);
  EXPECT_EQ(bus.endpoint(2).rx_fifo.front(), frame(0x123, {9, 8, 7}));
}

TEST(CanBusTest, IdleStepTakesNoTime) {
  CanBus bus;
  bus.attach(1, {kAll});
  const auto r = bus.step(Micros{0});
  EXPECT_EQ(r.elapsed, Micros{0});
  EXPECT_FALSE(r.wire.has_value());
}

TEST(CanBusTest, LowerIdWinsArbitration) {
  CanBus bus;
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  bus.attach(3, {kAll});
  bus.transmit(1, frame(0x202, {}));
  bus.transmit(2, frame(0x101, {}));
  auto r = bus.step(Micros{0});
  ASSERT_TRUE(r.wire);
  EXPECT_EQ(r.wire->frame.id, 0x101);
  EXPECT_EQ(bus.endpoint(1).tx_queue.size(), 1u);
  r = bus.step(Micros{500});
  EXPECT_EQ(r.wire->frame.id, 0x202);
}

// Every interleaving of three senders over ids {0x100, 0x200} resolves
// lowest id first, then enqueue order.
TEST(CanBusTest, ThreeNodeContentionExhaustive) {
  const std::uint16_t ids[2] = {0x100, 0x200};
  for (int mask = 0; mask < 8; ++mask) {
    for (int rot = 0; rot < 3; ++rot) {
      CanBus bus;
      for (NodeId n = 1; n <= 3; ++n) bus.attach(n, {kAll});
      bus.attach(9, {kAll});
      std::vector<std::pair<std::uint16_t, NodeId>> expected;
      for (int k = 0; k < 3; ++k) {
        const NodeId sender = static_cast<NodeId>(1 + (k + rot) % 3);
        const auto id = ids[(mask >> k) & 1];
        bus.transmit(sender, frame(id, {static_cast<std::uint8_t>(sender)}));
        expected.emplace_back(id, sender);
      }
      std::stable_sort(expected.begin(), expected.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::pair<std::uint16_t, NodeId>> seen;
      Micros now{0};
      while (!bus.idle()) {
        const auto r = bus.step(now);
        now += r.elapsed;
        seen.emplace_back(r.wire->frame.id, r.wire->sender);
      }
      EXPECT_EQ(seen, expected) << "mask " << mask << " rot " << rot;
    }
  }
}

TEST(CanBusTest, LosslessDeliveryIsBitIdentical) {
  CanBus bus;
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  std::mt19937_64 rng(1);
  std::vector<CanFrame> sent;
  for (int i = 0; i < 200; ++i) {
    auto data = random_bytes(rng() % 9, rng());
    sent.push_back(frame(static_cast<std::uint16_t>(0x300), data));
    bus.transmit(1, sent.back());
  }
  drain(bus);
  const auto& rx = bus.endpoint(2).rx_fifo;
  ASSERT_EQ(rx.size(), sent.size());
  for (std::size_t i = 0; i < sent.size(); ++i) EXPECT_EQ(rx[i], sent[i]);
}

TEST(CanBusTest, AlwaysDropLeadsToBusOff) {
  BusConfig cfg;
  cfg.drop_probability = 1.0;
  cfg.max_auto_retransmit = 3;
  CanBus bus(cfg);
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  bus.transmit(1, frame(0x10, {1}));
  const auto delivered = drain(bus);
  EXPECT_TRUE(delivered.empty());
  const auto& st = bus.endpoint(1).stats;
  EXPECT_EQ(st.retransmissions, 3u);
  EXPECT_EQ(st.bus_off_events, 1u);
  EXPECT_EQ(st.frames_sent, 4u);
}

TEST(CanBusTest, CorruptionEmitsErrorFrameAndRetransmits) {
  BusConfig cfg;
  cfg.corruption_probability = 1.0;
  cfg.max_auto_retransmit = 1;
  CanBus bus(cfg);
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  bus.transmit(1, frame(0x10, {0xAA, 0xBB}));
  const auto r = bus.step(Micros{0});
  ASSERT_TRUE(r.wire);
  EXPECT_EQ(r.wire->frame.kind, FrameKind::ErrorFrame);
  EXPECT_NE(Bytes(r.wire->frame.payload().begin(), r.wire->frame.payload().end()), (Bytes{0xAA, 0xBB}));
  EXPECT_TRUE(r.delivered.empty());
  EXPECT_EQ(bus.endpoint(1).tx_queue.size(), 1u);
}

TEST(CanBusTest, InvalidProbabilityRejected) {
  BusConfig cfg;
  cfg.corruption_probability = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(CanBusTest, TraceLineFormat) {
  WireEvent ev{Micros{1500}, 1, frame(0x6A2, {0x01, 0xFF})};
  EXPECT_EQ(trace_line(ev), "1500,0x6a2,2,01ff,Data");
}

TEST(SegmentedTest, SevenBytePayloadIsOneBody) {
  const Bytes payload{1, 2, 3, 4, 5, 6, 7};
  const auto frames = segment(0x600, payload);
  ASSERT_EQ(frames.size(), 2u);
  const auto crc = integrity::crc32(payload);
  const Bytes header{0xA0,
                     7,
                     0,
                     static_cast<std::uint8_t>(crc),
                     static_cast<std::uint8_t>(crc >> 8),
                     static_cast<std::uint8_t>(crc >> 16),
                     static_cast<std::uint8_t>(crc >> 24),
                     0x00};
  EXPECT_EQ(Bytes(frames[0].payload().begin(), frames[0].payload().end()), header);
  EXPECT_EQ(frames[1].dlc, 8);
  EXPECT_EQ(frames[1].data[0], 0);
}

TEST(SegmentedTest, FifteenBytesSplitSevenSevenOne) {
  const auto frames = segment(0x600, random_bytes(15, 2));
  ASSERT_EQ(frames.size(), 4u);
  EXPECT_EQ(frames[1].data[0], 0);
  EXPECT_EQ(frames[2].data[0], 1);
  EXPECT_EQ(frames[3].data[0], 2);
  EXPECT_EQ(frames[1].dlc - 1, 7);
  EXPECT_EQ(frames[2].dlc - 1, 7);
  EXPECT_EQ(frames[3].dlc - 1, 1);
}

TEST(SegmentedTest, SizeLimits) {
  EXPECT_THROW(segment(0x600, Bytes{}), std::invalid_argument);
  EXPECT_THROW(segment(0x600, Bytes(65536, 0)), PayloadTooLarge);
  EXPECT_EQ(segment(0x600, Bytes(65535, 0)).size(), 1u + 9363u);
}

TEST(SegmentedTest, SequenceNumberWraps) {
  const auto frames = segment(0x600, Bytes(7 * 300, 0));
  EXPECT_EQ(frames[256].data[0], 255);
  EXPECT_EQ(frames[257].data[0], 0);
}

TEST(SegmentedTest, RoundTripRandomPayloads) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    CanBus bus;
    bus.attach(1, {kAll});
    bus.attach(2, {kAll});
    const auto payload = random_bytes(1 + rng() % 4096, rng());
    send_segmented(bus, 1, 0x600, payload);
    SegmentedReceiver rx;
    RxEvent ev;
    Micros now{0};
    while (ev.status == RxStatus::Pending && !bus.idle()) {
      now += bus.step(now).elapsed;
      ev = recv_segmented(bus, 2, rx);
    }
    ASSERT_EQ(ev.status, RxStatus::Complete);
    ASSERT_EQ(ev.payload, payload);
    ASSERT_EQ(recv_segmented(bus, 2, rx).status, RxStatus::Pending);
  }
}

TEST(SegmentedTest, SkippedSequenceIsGap) {
  auto frames = segment(0x600, random_bytes(20, 3));
  std::deque<CanFrame> fifo{frames[0], frames[1], frames[3]};
  SegmentedReceiver rx;
  EXPECT_EQ(rx.poll(fifo).status, RxStatus::SequenceGap);
  EXPECT_EQ(rx.stats().sequence_gaps, 1u);
}

TEST(SegmentedTest, CorruptedBodyIsChecksumMismatch) {
  const auto payload = random_bytes(20, 4);
  auto frames = segment(0x600, payload);
  frames[2].data[3] ^= 0x10;
  std::deque<CanFrame> fifo(frames.begin(), frames.end());
  SegmentedReceiver rx;
  EXPECT_EQ(rx.poll(fifo).status, RxStatus::ChecksumMismatch);
  EXPECT_EQ(rx.stats().checksum_mismatches, 1u);
}

TEST(SegmentedTest, InterleavedIdsReassembleIndependently) {
  const auto a = random_bytes(30, 5);
  const auto b = random_bytes(25, 6);
  const auto fa = segment(0x600, a);
  const auto fb = segment(0x601, b);
  std::deque<CanFrame> fifo;
  for (std::size_t i = 0; i < std::max(fa.size(), fb.size()); ++i) {
    if (i < fa.size()) fifo.push_back(fa[i]);
    if (i < fb.size()) fifo.push_back(fb[i]);
  }
  SegmentedReceiver rx;
  std::map<std::uint16_t, Bytes> got;
  for (auto ev = rx.poll(fifo); ev.status != RxStatus::Pending; ev = rx.poll(fifo)) {
    ASSERT_EQ(ev.status, RxStatus::Complete);
    got[ev.id] = ev.payload;
  }
  EXPECT_EQ(got[0x600], a);
  EXPECT_EQ(got[0x601], b);
}

// With an unlimited retransmit budget every payload eventually arrives.
TEST(SegmentedTest, HeavyCorruptionStillDelivers) {
  BusConfig cfg;
  cfg.corruption_probability = 0.2;
  cfg.max_auto_retransmit = std::nullopt;
  cfg.rng_seed = 1234;
  CanBus bus(cfg);
  bus.attach(1, {kAll});
  bus.attach(2, {kAll});
  SegmentedReceiver rx;
  std::mt19937_64 rng(99);
  for (int i = 0; i < 50; ++i) {
    const auto payload = random_bytes(1 + rng() % 500, rng());
    send_segmented(bus, 1, 0x600, payload);
    RxEvent ev;
    Micros now{0};
    while (ev.status == RxStatus::Pending && !bus.idle()) {
      now += bus.step(now).elapsed;
      ev = recv_segmented(bus, 2, rx);
    }
    ASSERT_EQ(ev.status, RxStatus::Complete);
    ASSERT_EQ(ev.payload, payload);
  }
  EXPECT_GT(bus.endpoint(1).stats.retransmissions, 0u);
  EXPECT_EQ(bus.endpoint(1).stats.bus_off_events, 0u);
}

TEST(CanBusTest, SameSeedSameFaultPattern) {
  auto run = [](std::uint64_t seed) {
    BusConfig cfg;
    cfg.corruption_probability = 0.3;
    cfg.drop_probability = 0.1;
    cfg.rng_seed = seed;
    cfg.max_auto_retransmit = std::nullopt;
    CanBus bus(cfg);
    bus.attach(1, {kAll});
    bus.attach(2, {kAll});
    for (int i = 0; i < 100; ++i) bus.transmit(1, frame(0x100, {static_cast<std::uint8_t>(i)}));
    std::string log;
    Micros now{0};
    while (!bus.idle()) {
      const auto r = bus.step(now);
      now += r.elapsed;
      log += r.wire ? trace_line(*r.wire) + "\n" : "drop\n";
    }
    return log;
  };
  EXPECT_EQ(run(7), run(7));
  EXPECT_NE(run(7), run(8));
}

}  // namespace
}  // namespace canfota::can
