// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/sim.hpp"

#include <algorithm>
#include <json.hpp>
#include <stdexcept>

namespace canfota::sim {

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Boot: return "Boot";
    case EventKind::Decision: return "Decision";
    case EventKind::CommandServed: return "CommandServed";
    case EventKind::Reset: return "Reset";
    case EventKind::PowerCycle: return "PowerCycle";
    case EventKind::Rollback: return "Rollback";
    case EventKind::Campaign: return "Campaign";
    case EventKind::Fault: return "Fault";
  }
  return "?";
}

std::string to_json_line(const Event& ev) {
  nlohmann::ordered_json j;
  j["time_us"] = ev.time.count();
  j["node"] = ev.node;
  j["event"] = to_string(ev.kind);
  j["detail"] = ev.detail;
  return j.dump();
}

void Node::add_task(Task task) {
  tasks_.push_back(std::move(task));
  std::stable_sort(tasks_.begin(), tasks_.end(),
                   [](const Task& a, const Task& b) { return a.priority < b.priority; });
}

std::size_t Node::run_tasks(World& world) {
  std::size_t ran = 0;
  for (auto& t : tasks_) {
    if (t.state() != TaskState::Ready) continue;
    t.run(world);
    ++ran;
  }
  return ran;
}

void Node::software_reset(World& world) { world.log(id_, EventKind::Reset, "software"); }

void Node::power_cycle(World& world) { world.log(id_, EventKind::PowerCycle); }

World::World(can::BusConfig bus) : bus_(bus) {}

void World::insert(std::unique_ptr<Node> node) {
  const auto id = node->id();
  if (nodes_.count(id)) throw std::invalid_argument("duplicate node id " + std::to_string(id));
  auto& ref = *node;
  nodes_.emplace(id, std::move(node));
  ref.on_attach(*this);
}

Node& World::node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::out_of_range("no node " + std::to_string(id));
  return *it->second;
}

void World::log(NodeId node, EventKind kind, std::string detail) {
  events_.push_back({clock_, node, kind, std::move(detail)});
}

void World::schedule(Micros at, std::function<void(World&)> action) {
  scheduled_.push_back({at, next_order_++, std::move(action)});
}

std::vector<Event> World::tick() {
  tick_events_begin_ = events_.size();

  std::vector<Scheduled> due;
  auto split = std::stable_partition(scheduled_.begin(), scheduled_.end(),
                                     [&](const Scheduled& s) { return s.at > clock_; });
  std::move(split, scheduled_.end(), std::back_inserter(due));
  scheduled_.erase(split, scheduled_.end());
  std::sort(due.begin(), due.end(),
            [](const Scheduled& a, const Scheduled& b) { return a.at != b.at ? a.at < b.at : a.order < b.order; });
  for (auto& s : due) s.action(*this);

  auto step = bus_.step(clock_);
  if (record_trace_ && step.wire) trace_.push_back(*step.wire);

  for (auto& [id, node] : nodes_) node->service(*this);
  for (auto& [id, node] : nodes_) node->run_tasks(*this);

  clock_ += std::max(step.elapsed, kTick);
  ++ticks_;
  return {events_.begin() + static_cast<std::ptrdiff_t>(tick_events_begin_), events_.end()};
}

std::string World::event_log_jsonl() const {
  std::string out;
  for (const auto& ev : events_) {
    out += to_json_line(ev);
    out += '\n';
  }
  return out;
}

std::string World::frame_trace_csv() const {
  std::string out = can::kTraceHeader;
  out += '\n';
  for (const auto& w : trace_) {
    out += can::trace_line(w);
    out += '\n';
  }
  return out;
}

RunResult run_until(World& world, const std::function<bool(const World&)>& predicate, std::uint64_t max_ticks) {
  if (max_ticks == 0) throw std::invalid_argument("max_ticks must be positive");
  RunResult r;
  if (predicate(world)) {
    r.met = true;
    r.at = world.now();
    return r;
  }
  for (; r.ticks < max_ticks;) {
    const auto started = world.now();
    world.tick();
    ++r.ticks;
    if (predicate(world)) {
      r.met = true;
      r.at = started;
      return r;
    }
  }
  r.at = world.now();
  return r;
}

void software_reset(World& world, NodeId node) { world.node(node).software_reset(world); }

void power_cycle(World& world, NodeId node) { world.node(node).power_cycle(world); }

}  // namespace canfota::sim
