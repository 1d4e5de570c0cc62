// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "canfota/delta.hpp"
#include "canfota/integrity.hpp"
#include "canfota/lka.hpp"
#include "canfota/orchestrator.hpp"
#include "canfota/scenario.hpp"

namespace canfota::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

/// Raised by a subcommand for a usage problem CLI11 cannot see.
struct UsageError {
  std::string what;
};

void emit(std::ostream& out, const ordered_json& j) { out << j.dump(2) << '\n'; }

int cmd_crc(const std::string& file, std::ostream& out, std::ostream& err) {
  const auto data = read_file(file);
  ordered_json j;
  j["file"] = file;
  j["length"] = data.size();
  j["crc32"] = hex32(integrity::crc32(data));
  j["blocks"] = integrity::block_count(data.size(), integrity::kDefaultBlockSize);
  emit(out, j);
  err << file << ": " << data.size() << " bytes, crc " << hex32(integrity::crc32(data)) << '\n';
  return kOk;
}

int cmd_pack(const std::string& raw_path, const std::string& out_path, const std::vector<double>& g,
             std::ostream& out, std::ostream& err) {
  const auto raw = read_file(raw_path);
  const lka::PidGains gains{g[0], g[1], g[2]};
  const auto image = lka::pack_image(raw, gains);
  write_file(out_path, image);
  ordered_json j;
  j["output"] = out_path;
  j["length"] = image.size();
  j["crc32"] = hex32(integrity::crc32(image));
  j["gains"] = {gains.kp, gains.ki, gains.kd};
  emit(out, j);
  err << "packed " << raw.size() << " -> " << image.size() << " bytes\n";
  return kOk;
}

int cmd_delta_build(const std::string& old_path, const std::string& new_path, const std::string& out_path,
                    std::size_t block_size, std::size_t gap_merge, std::ostream& out, std::ostream& err) {
  const auto old_image = read_file(old_path);
  const auto new_image = read_file(new_path);
  const auto pkg = delta::build_delta(old_image, new_image, block_size, gap_merge);
  write_file(out_path, delta::encode_package(pkg));
  const auto s = delta::package_stats(pkg);
  ordered_json j;
  j["blocks_changed"] = s.blocks_changed;
  j["tuples"] = s.tuples;
  j["payload_bytes"] = s.payload_bytes;
  j["package_bytes"] = s.package_bytes;
  j["full_image_bytes"] = s.full_image_bytes;
  j["reduction_ratio"] = s.reduction_ratio;
  emit(out, j);
  err << s.blocks_changed << " blocks changed, package " << s.package_bytes << " bytes\n";
  return kOk;
}

int cmd_delta_apply(const std::string& base_path, const std::string& pkg_path, const std::string& out_path,
                    std::ostream& out, std::ostream& err) {
  const auto base = read_file(base_path);
  const auto pkg = delta::decode_package(read_file(pkg_path));
  const auto image = delta::apply_delta(base, pkg);
  write_file(out_path, image);
  ordered_json j;
  j["output"] = out_path;
  j["length"] = image.size();
  j["crc32"] = hex32(integrity::crc32(image));
  j["blocks_patched"] = pkg.entries.size();
  emit(out, j);
  err << "patched " << pkg.entries.size() << " blocks\n";
  return kOk;
}

std::uint32_t parse_hex32(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used, 16);
  } catch (const std::exception&) {
    throw UsageError{"--secret must be hexadecimal"};
  }
  if (used != text.size() || v > 0xFFFFFFFFull) throw UsageError{"--secret must be a 32-bit hexadecimal value"};
  return static_cast<std::uint32_t>(v);
}

int cmd_uds_demo(const std::string& secret_text, std::optional<std::uint32_t> seed, std::ostream& out,
                 std::ostream& err) {
  const auto secret = parse_hex32(secret_text);
  sim::World world;
  auto& master = world.add_node<ota::MasterEcu>(1);
  ota::TargetConfig cfg;
  cfg.shared_secret = secret;
  if (seed) cfg.session_rng_seed = *seed;
  world.add_node<ota::TargetEcu>(2, cfg);
  const auto result = ota::client_unlock(world, master, 2, secret);

  ordered_json j;
  j["secret"] = hex32(secret);
  j["session_seed"] = hex32(cfg.session_rng_seed);
  j["outcome"] = uds::to_string(result.outcome);
  if (result.nrc) j["nrc"] = *result.nrc;
  j["duration_us"] = result.duration.count();
  auto exchange = ordered_json::array();
  for (const auto& t : master.transcript()) {
    ordered_json e;
    e["time_us"] = t.time.count();
    e["direction"] = t.outgoing ? "request" : "response";
    e["hex"] = to_hex(t.bytes);
    exchange.push_back(e);
  }
  j["exchange"] = exchange;
  emit(out, j);
  err << "security access " << uds::to_string(result.outcome) << " in " << result.duration.count() << " us\n";
  return result.outcome == uds::UnlockOutcome::Granted ? kOk : kFailed;
}

int cmd_sim_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& trace_dir,
                std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(path)) {
    err << "scenario not found: " << path << '\n';
    return kUsage;
  }
  const auto sc = scenario::load_scenario(path);
  const auto result = scenario::run_scenario(sc, seed, !trace_dir.empty());
  if (!trace_dir.empty()) {
    fs::create_directories(trace_dir);
    const auto put = [&](const char* name, const std::string& text) {
      write_file(fs::path(trace_dir) / name, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    };
    put("report.json", result.report.dump(2) + "\n");
    put("events.jsonl", result.events_jsonl);
    put("frames.csv", result.frames_csv);
    put("lka_trace.csv", result.lka_csv);
  }
  emit(out, result.report);
  if (result.report.contains("campaign")) {
    const auto& c = result.report["campaign"];
    err << sc.name << ": " << c["mode"].get<std::string>() << " campaign "
        << (result.success ? "succeeded" : "failed") << " in "
        << c["total_simulated_duration_us"].get<std::int64_t>() / 1000 << " ms simulated\n";
  } else {
    err << sc.name << ": ran " << result.report["simulated_time_us"].get<std::int64_t>() / 1000
        << " ms simulated\n";
  }
  return result.success ? kOk : kFailed;
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"canfota: FOTA protocol stack and ECU network simulator", "fota"};
  app.require_subcommand(1);

  std::string file;
  auto* crc = app.add_subcommand("crc", "CRC-32/MPEG-2 of a file");
  crc->add_option("FILE", file)->required();

  auto* image = app.add_subcommand("image", "firmware image tooling");
  image->require_subcommand(1);
  auto* pack = image->add_subcommand("pack", "pad a raw image and append the LKA parameter block");
  std::string raw_path, out_path;
  std::vector<double> gains;
  pack->add_option("RAW", raw_path)->required();
  pack->add_option("-o,--output", out_path)->required();
  pack->add_option("--gains", gains, "kp,ki,kd")->delimiter(',')->expected(3)->required();

  auto* delta_cmd = app.add_subcommand("delta", "delta packages");
  delta_cmd->require_subcommand(1);
  auto* build = delta_cmd->add_subcommand("build", "build a .fdp package");
  std::string old_path, new_path;
  std::size_t block_size = integrity::kDefaultBlockSize;
  std::size_t gap_merge = delta::kDefaultGapMerge;
  build->add_option("OLD", old_path)->required();
  build->add_option("NEW", new_path)->required();
  build->add_option("-o,--output", out_path)->required();
  build->add_option("--block-size", block_size)->check(CLI::Range(std::size_t{1}, std::size_t{65535}));
  build->add_option("--gap-merge", gap_merge);
  auto* apply = delta_cmd->add_subcommand("apply", "apply a .fdp package");
  std::string base_path, pkg_path;
  apply->add_option("BASE", base_path)->required();
  apply->add_option("PKG", pkg_path)->required();
  apply->add_option("-o,--output", out_path)->required();

  auto* uds_cmd = app.add_subcommand("uds", "security access");
  uds_cmd->require_subcommand(1);
  auto* demo = uds_cmd->add_subcommand("demo", "seed/key handshake over the simulated bus");
  std::string secret = "1a2b3c4d";
  std::optional<std::uint32_t> uds_seed;
  demo->add_option("--secret", secret, "shared secret, hex");
  demo->add_option("--seed", uds_seed, "seed generator state");

  auto* sim_cmd = app.add_subcommand("sim", "scenario simulation");
  sim_cmd->require_subcommand(1);
  auto* run = sim_cmd->add_subcommand("run", "run a scenario file");
  std::string scenario_path, trace_dir;
  std::optional<std::uint64_t> sim_seed;
  run->add_option("SCENARIO", scenario_path)->required();
  run->add_option("--seed", sim_seed);
  run->add_option("--trace", trace_dir, "directory for report, events, frames and LKA trace");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*crc) return cmd_crc(file, out, err);
    if (*pack) return cmd_pack(raw_path, out_path, gains, out, err);
    if (*build) return cmd_delta_build(old_path, new_path, out_path, block_size, gap_merge, out, err);
    if (*apply) return cmd_delta_apply(base_path, pkg_path, out_path, out, err);
    if (*demo) return cmd_uds_demo(secret, uds_seed, out, err);
    if (*run) return cmd_sim_run(scenario_path, sim_seed, trace_dir, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    ordered_json j;
    j["error"] = e.what();
    emit(out, j);
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  err << "error: no command\n";
  return kUsage;
}

int cli_run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_run(args, std::cout, std::cerr);
}

}  // namespace canfota::cli
