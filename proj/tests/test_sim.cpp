// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "canfota/bootflow.hpp"
#include "canfota/sim.hpp"
#include "canfota/target.hpp"
#include "test_support.hpp"

namespace canfota::sim {
namespace {

using canfota::testing::random_bytes;

/// Node with one task per priority that records the order of execution.
class ProbeNode : public Node {
 public:
  explicit ProbeNode(NodeId id) : Node(id) {}

  void on_attach(World& world) override {
    world.bus().attach(id(), {can::AcceptanceFilter{0, 0}});
    add_task({"app", TaskPriority::App, [this] { return app_ready ? TaskState::Ready : TaskState::Blocked; },
              [this](World&) {
                order += 'A';
                app_saw = comm_value;
                ++app_runs;
              }});
    add_task({"comm", TaskPriority::Comm, [this] { return comm_ready ? TaskState::Ready : TaskState::Blocked; },
              [this](World& w) {
                order += 'C';
                comm_value = w.now().count() + 1;
                if (flood) w.bus().transmit(id(), can::CanFrame::make(0x100, Bytes{1}));
              }});
    add_task({"nvm", TaskPriority::Nvm, [this] { return nvm_ready ? TaskState::Ready : TaskState::Blocked; },
              [this](World&) { order += 'N'; }});
  }

  bool app_ready = false;
  bool comm_ready = false;
  bool nvm_ready = false;
  bool flood = false;
  std::string order;
  long long comm_value = 0;
  long long app_saw = 0;
  int app_runs = 0;
};

TEST(WorldTest, IdleTickAdvancesOneMillisecond) {
  World world;
  world.add_node<ProbeNode>(1);
  const auto events = world.tick();
  EXPECT_EQ(world.now(), Micros{1000});
  EXPECT_TRUE(events.empty());
  EXPECT_EQ(world.ticks(), 1u);
}

TEST(WorldTest, SlowFramesDominateTheTick) {
  can::BusConfig bus;
  bus.frame_time = Micros{2500};
  World world(bus);
  auto& n = world.add_node<ProbeNode>(1);
  world.add_node<ProbeNode>(2);
  world.bus().transmit(n.id(), can::CanFrame::make(0x10, Bytes{1}));
  world.tick();
  EXPECT_EQ(world.now(), Micros{2500});
  world.tick();
  EXPECT_EQ(world.now(), Micros{3500});
}

TEST(WorldTest, TasksRunInPriorityOrder) {
  World world;
  auto& n = world.add_node<ProbeNode>(1);
  n.app_ready = n.comm_ready = n.nvm_ready = true;
  world.tick();
  EXPECT_EQ(n.order, "CNA");
}

TEST(WorldTest, CommEffectsVisibleToAppInSameTick) {
  World world;
  auto& n = world.add_node<ProbeNode>(1);
  n.app_ready = n.comm_ready = true;
  world.tick();
  world.tick();
  EXPECT_EQ(n.app_saw, 1000 + 1);
}

TEST(WorldTest, AppNotStarvedByBusyComm) {
  World world;
  auto& n = world.add_node<ProbeNode>(1);
  world.add_node<ProbeNode>(2);
  n.app_ready = n.comm_ready = n.flood = true;
  for (int i = 0; i < 500; ++i) world.tick();
  EXPECT_EQ(n.app_runs, 500);
}

TEST(WorldTest, DuplicateNodeRejected) {
  World world;
  world.add_node<ProbeNode>(1);
  EXPECT_THROW(world.add_node<ProbeNode>(1), std::invalid_argument);
}

TEST(WorldTest, ScheduledActionsRunInTimeOrder) {
  World world;
  world.add_node<ProbeNode>(1);
  std::string seen;
  world.schedule(Micros{3000}, [&](World& w) { seen += "b" + std::to_string(w.now().count()); });
  world.schedule(Micros{1500}, [&](World& w) { seen += "a" + std::to_string(w.now().count()); });
  world.schedule(Micros{3000}, [&](World&) { seen += "c"; });
  for (int i = 0; i < 5; ++i) world.tick();
  EXPECT_EQ(seen, "a2000b3000c");
}

TEST(WorldTest, EventLogJsonLines) {
  World world;
  world.add_node<ProbeNode>(1);
  world.tick();
  world.log(1, EventKind::Fault, "x\"y");
  EXPECT_EQ(world.event_log_jsonl(), "{\"time_us\":1000,\"node\":1,\"event\":\"Fault\",\"detail\":\"x\\\"y\"}\n");
}

TEST(RunUntilTest, MetAndExhausted) {
  World world;
  world.add_node<ProbeNode>(1);
  const auto met = run_until(world, [](const World& w) { return w.now() >= Micros{5000}; }, 100);
  EXPECT_TRUE(met.met);
  EXPECT_EQ(met.ticks, 5u);
  const auto never = run_until(world, [](const World&) { return false; }, 7);
  EXPECT_FALSE(never.met);
  EXPECT_EQ(never.ticks, 7u);
  EXPECT_THROW(run_until(world, [](const World&) { return false; }, 0), std::invalid_argument);
}

TEST(RunUntilTest, MetTimeMatchesTriggeringEvent) {
  World world;
  world.add_node<ProbeNode>(1);
  world.schedule(Micros{7000}, [](World& w) { w.log(1, EventKind::Fault, "trigger"); });
  const auto r = run_until(
      world, [](const World& w) { return !w.events().empty() && w.events().back().detail == "trigger"; }, 100);
  ASSERT_TRUE(r.met);
  EXPECT_EQ(r.at, world.events().back().time);
  EXPECT_EQ(r.at, Micros{7000});
}

ota::TargetConfig provisioned_target() {
  ota::TargetConfig cfg;
  cfg.factory_application = random_bytes(8192, 3);
  return cfg;
}

TEST(ResetTest, SoftwareResetPreservesFlags) {
  World world;
  auto& t = world.add_node<ota::TargetEcu>(2, provisioned_target());
  EXPECT_EQ(t.last_decision(), boot::BootDecision::JumpApplication);
  nv::write_flag(t.registers(), nv::FlagRegister::BootloaderUpdaterEnter, nv::BootFlag::Enter);
  software_reset(world, 2);
  EXPECT_EQ(nv::read_flag(t.registers(), nv::FlagRegister::BootloaderUpdaterEnter), nv::BootFlag::Enter);
  EXPECT_EQ(nv::read_flag(t.registers(), nv::FlagRegister::ApplicationEnter), nv::BootFlag::Enter);
  EXPECT_EQ(t.last_decision(), boot::BootDecision::JumpApplication);
  EXPECT_EQ(t.boots(), 2u);
}

TEST(ResetTest, PowerCycleClearsFlags) {
  World world;
  auto& t = world.add_node<ota::TargetEcu>(2, provisioned_target());
  power_cycle(world, 2);
  EXPECT_EQ(nv::read_flag(t.registers(), nv::FlagRegister::ApplicationEnter), nv::BootFlag::NotEnter);
  EXPECT_EQ(t.last_decision(), boot::BootDecision::JumpBootloader);
}

TEST(ResetTest, FlashContentsSurviveBothResets) {
  World world;
  auto& t = world.add_node<ota::TargetEcu>(2, provisioned_target());
  const Bytes before(t.flash().contents().begin(), t.flash().contents().end());
  software_reset(world, 2);
  power_cycle(world, 2);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), t.flash().contents().begin()));
}

TEST(ResetTest, PowerLossMidProgramKeepsWrittenPrefix) {
  World world;
  auto& t = world.add_node<ota::TargetEcu>(2, ota::TargetConfig{});
  auto& dev = t.flash();
  dev.unlock(flash::UnlockKeys{}.key1, flash::UnlockKeys{}.key2);
  dev.power_loss_after_bytes(100);
  EXPECT_THROW(dev.program(131072, Bytes(1024, 0x00)), flash::FlashError);
  power_cycle(world, 2);
  EXPECT_EQ(dev.view(131072 + 99, 1)[0], 0x00);
  EXPECT_EQ(dev.view(131072 + 100, 1)[0], 0xFF);
  EXPECT_EQ(t.last_decision(), boot::BootDecision::JumpBootloader);
}

TEST(DeterminismTest, SameSeedSameEventLog) {
  auto run = [] {
    can::BusConfig bus;
    bus.corruption_probability = 0.02;
    bus.rng_seed = 99;
    canfota::testing::Rig rig(random_bytes(16384, 4), bus);
    const auto next = canfota::testing::mutate_blocks(random_bytes(16384, 4), {2, 9}, 5);
    rig.run(ota::CampaignMode::Delta, random_bytes(16384, 4), next);
    return rig.world.event_log_jsonl();
  };
  const auto a = run();
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run());
}

}  // namespace
}  // namespace canfota::sim
