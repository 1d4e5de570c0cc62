// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Deterministic discrete-time world.
//
// One tick = one bus step, then every node runs its ready tasks in priority
// order (Comm, Nvm, App), each to completion. The clock then advances by the
// larger of the bus occupancy and the 1 ms base tick. This is a cooperative
// stand-in for a preemptive priority scheduler: priorities decide order
// within a tick, nothing is ever interrupted.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "canfota/can.hpp"
#include "canfota/common.hpp"

namespace canfota::sim {

using can::NodeId;

inline constexpr Micros kTick{1000};

enum class TaskPriority : std::uint8_t { Comm = 0, Nvm = 1, App = 2 };
enum class TaskState { Ready, Blocked, Done };

class World;

struct Task {
  std::string name;
  TaskPriority priority = TaskPriority::App;
  std::function<TaskState()> state;
  std::function<void(World&)> run;
};

enum class EventKind { Boot, Decision, CommandServed, Reset, PowerCycle, Rollback, Campaign, Fault };

const char* to_string(EventKind kind);

struct Event {
  Micros time{0};
  NodeId node = 0;
  EventKind kind = EventKind::Boot;
  std::string detail;
};

/// {"time_us":..,"node":..,"event":"..","detail":".."}
std::string to_json_line(const Event& ev);

class Node {
 public:
  explicit Node(NodeId id) : id_(id) {}
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  NodeId id() const { return id_; }

  /// Called once when the node joins a world; attach bus endpoints here.
  virtual void on_attach(World& world) = 0;
  /// Called at the start of every tick before any task runs.
  virtual void service(World&) {}
  virtual void software_reset(World& world);
  virtual void power_cycle(World& world);

  /// Runs every Ready task in priority order; returns how many ran.
  std::size_t run_tasks(World& world);

  const std::vector<Task>& tasks() const { return tasks_; }

 protected:
  void add_task(Task task);

 private:
  NodeId id_;
  std::vector<Task> tasks_;
};

class World {
 public:
  explicit World(can::BusConfig bus = {});

  Micros now() const { return clock_; }
  can::CanBus& bus() { return bus_; }
  const can::CanBus& bus() const { return bus_; }

  template <class T, class... Args>
  T& add_node(Args&&... args) {
    auto node = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *node;
    insert(std::move(node));
    return ref;
  }

  Node& node(NodeId id);
  template <class T>
  T& node_as(NodeId id) {
    return dynamic_cast<T&>(node(id));
  }
  bool has_node(NodeId id) const { return nodes_.count(id) != 0; }

  /// Advances one tick and returns the events it produced.
  std::vector<Event> tick();

  void log(NodeId node, EventKind kind, std::string detail = {});
  const std::vector<Event>& events() const { return events_; }
  std::string event_log_jsonl() const;

  void record_trace(bool on) { record_trace_ = on; }
  const std::vector<can::WireEvent>& wire_trace() const { return trace_; }
  std::string frame_trace_csv() const;

  /// Runs `action` at the start of the first tick at or after `at`.
  void schedule(Micros at, std::function<void(World&)> action);

  std::uint64_t ticks() const { return ticks_; }

 private:
  struct Scheduled {
    Micros at;
    std::uint64_t order;
    std::function<void(World&)> action;
  };

  void insert(std::unique_ptr<Node> node);

  can::CanBus bus_;
  Micros clock_{0};
  std::uint64_t ticks_ = 0;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::vector<Event> events_;
  std::size_t tick_events_begin_ = 0;
  bool record_trace_ = false;
  std::vector<can::WireEvent> trace_;
  std::vector<Scheduled> scheduled_;
  std::uint64_t next_order_ = 0;
};

struct RunResult {
  bool met = false;
  Micros at{0};  // start time of the tick after which the predicate held
  std::uint64_t ticks = 0;
};

RunResult run_until(World& world, const std::function<bool(const World&)>& predicate, std::uint64_t max_ticks);

void software_reset(World& world, NodeId node);
void power_cycle(World& world, NodeId node);

}  // namespace canfota::sim
