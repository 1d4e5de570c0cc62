// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// JSON scenario files: a bus, a set of nodes, an optional campaign and a
// fault schedule. See docs/formats.md for the schema.

#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "canfota/can.hpp"
#include "canfota/nvstore.hpp"
#include "canfota/orchestrator.hpp"
#include "canfota/target.hpp"

namespace canfota::scenario {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NodeSpec {
  can::NodeId id = 0;
  bool master = false;
  ota::TargetConfig target;  // unused for the master
};

enum class FaultAction { SoftwareReset, PowerCycle, SetBus, WriteFlag, AbortCampaign, PauseCampaign, ResumeCampaign };

struct FaultSpec {
  Micros at{0};
  FaultAction action = FaultAction::SoftwareReset;
  can::NodeId node = 0;
  can::BusConfig bus;  // SetBus only
  nv::FlagRegister flag = nv::FlagRegister::ApplicationEnter;  // WriteFlag only
  nv::BootFlag flag_value = nv::BootFlag::NotEnter;
};

struct CampaignSpec {
  ota::CampaignPlan plan;
  Micros start{0};
  bool compare_full = false;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  can::BusConfig bus;
  std::vector<NodeSpec> nodes;
  std::optional<CampaignSpec> campaign;
  std::vector<FaultSpec> faults;
  std::uint64_t max_ticks = 2'000'000;
  /// Simulated time to keep running after the campaign ends (or in total
  /// when there is none).
  Micros settle{0};
};

/// Image spec: a path (relative to `base_dir`), {"random": {"size", "seed"}}
/// or {"mutate": {"base", "blocks", "seed", "bytes_per_block", "first_block",
/// "last_block"}}, any of which may be wrapped as {"image": spec, "gains":
/// [kp, ki, kd]} to append a parameter block.
Bytes resolve_image(const nlohmann::json& spec, const std::filesystem::path& base_dir);

/// Throws ScenarioError on schema violations.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Reads and parses a file. Missing files raise std::filesystem::filesystem_error.
Scenario load_scenario(const std::filesystem::path& path);

struct RunOutput {
  nlohmann::ordered_json report;
  bool success = true;
  std::string events_jsonl;
  std::string frames_csv;
  std::string lka_csv;
};

/// Runs a scenario; a seed override replaces the file's seed.
RunOutput run_scenario(const Scenario& sc, std::optional<std::uint64_t> seed_override = {},
                       bool record_frames = false);

inline constexpr const char* kLkaTraceHeader = "time_us,node,deviation_m,target_deg,position_deg,motor_order";

}  // namespace canfota::scenario
