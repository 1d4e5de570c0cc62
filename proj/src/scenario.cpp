// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "canfota/bootflow.hpp"
#include "canfota/lka.hpp"

namespace canfota::scenario {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t below(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

std::uint32_t parse_u32(const json& v, const char* what) {
  if (v.is_number_unsigned()) return v.get<std::uint32_t>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    try {
      std::size_t used = 0;
      const auto x = std::stoull(s, &used, 0);
      if (used == s.size() && x <= 0xFFFFFFFFull) return static_cast<std::uint32_t>(x);
    } catch (const std::exception&) {
    }
  }
  throw ScenarioError(std::string("invalid ") + what);
}

Micros micros(const json& obj, const char* key, Micros fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ScenarioError(std::string("invalid ") + key);
  return Micros{v.get<std::int64_t>()};
}

Bytes random_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes out(size);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng() >> 56);
  return out;
}

Bytes mutate_image(Bytes base, const json& m) {
  constexpr std::size_t kBlock = integrity::kDefaultBlockSize;
  const auto blocks = integrity::block_count(base.size(), kBlock);
  const auto count = m.at("blocks").get<std::size_t>();
  const auto per_block = m.value("bytes_per_block", std::size_t{16});
  const auto first = m.value("first_block", std::size_t{0});
  const auto last = m.value("last_block", blocks);
  if (first >= last || last > blocks || count > last - first) throw ScenarioError("mutate: block range invalid");
  if (per_block == 0 || per_block > kBlock) throw ScenarioError("mutate: bytes_per_block invalid");
  std::mt19937_64 rng(m.value("seed", std::uint64_t{0}));
  std::vector<std::size_t> pool(last - first);
  std::iota(pool.begin(), pool.end(), first);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + below(rng, pool.size() - i)]);
    const auto start = pool[i] * kBlock;
    const auto len = std::min(kBlock, base.size() - start);
    const auto n = std::min(per_block, len);
    const auto at = start + below(rng, len - n + 1);
    for (std::size_t k = 0; k < n; ++k) base[at + k] ^= static_cast<std::uint8_t>((rng() >> 56) | 1);
  }
  return base;
}

boot::UpdaterStep parse_step(const std::string& s) {
  for (auto st : {boot::UpdaterStep::Backup, boot::UpdaterStep::CapacityCheck, boot::UpdaterStep::Erase,
                  boot::UpdaterStep::Program, boot::UpdaterStep::Verify, boot::UpdaterStep::Finalize}) {
    if (s == boot::to_string(st)) return st;
  }
  throw ScenarioError("unknown updater step " + s);
}

can::BusConfig parse_bus(const json& b, can::BusConfig base) {
  base.frame_time = micros(b, "frame_time_us", base.frame_time);
  base.corruption_probability = b.value("corruption_probability", base.corruption_probability);
  base.drop_probability = b.value("drop_probability", base.drop_probability);
  if (b.contains("max_auto_retransmit")) {
    const auto& v = b.at("max_auto_retransmit");
    if (v.is_null()) {
      base.max_auto_retransmit.reset();
    } else {
      base.max_auto_retransmit = v.get<std::uint32_t>();
    }
  }
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }
  return base;
}

NodeSpec parse_node(const json& n, const std::filesystem::path& dir) {
  NodeSpec spec;
  spec.id = n.at("id").get<can::NodeId>();
  if (spec.id == 0 || spec.id > 0x7F) throw ScenarioError("node id must lie in 1..127");
  const auto role = n.at("role").get<std::string>();
  if (role == "master") {
    spec.master = true;
    return spec;
  }
  if (role != "target") throw ScenarioError("unknown role " + role);
  auto& t = spec.target;
  if (n.contains("secret")) t.shared_secret = parse_u32(n.at("secret"), "secret");
  if (n.contains("session_seed")) t.session_rng_seed = parse_u32(n.at("session_seed"), "session_seed");
  const auto updater = n.value("updater", std::string("silent"));
  if (updater == "silent") {
    t.updater = ota::UpdaterKind::Silent;
  } else if (updater == "communicative") {
    t.updater = ota::UpdaterKind::Communicative;
  } else {
    throw ScenarioError("unknown updater " + updater);
  }
  if (n.contains("version")) {
    const auto v = n.at("version").get<std::vector<int>>();
    if (v.size() != 3) throw ScenarioError("version must be [major, minor, patch]");
    t.version = {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]), static_cast<std::uint8_t>(v[2])};
  }
  if (n.contains("application")) t.factory_application = resolve_image(n.at("application"), dir);
  if (n.contains("bootloader")) t.factory_bootloader = resolve_image(n.at("bootloader"), dir);
  if (n.contains("embedded_bootloader")) t.embedded_bootloader = resolve_image(n.at("embedded_bootloader"), dir);
  if (n.contains("updater_fail_after")) t.updater_fail_after = parse_step(n.at("updater_fail_after").get<std::string>());
  if (n.contains("lka")) {
    const auto& l = n.at("lka");
    t.deviations = l.value("deviations", std::vector<double>{});
    if (l.contains("constant")) {
      t.deviations.assign(l.at("steps").get<std::size_t>(), l.at("constant").get<double>());
    }
    t.lka_period = micros(l, "period_us", t.lka_period);
    if (t.lka_period <= Micros{0}) throw ScenarioError("lka period must be positive");
  }
  return spec;
}

FaultSpec parse_fault(const json& f, const can::BusConfig& bus) {
  FaultSpec spec;
  spec.at = micros(f, "at_us", Micros{0});
  const auto action = f.at("action").get<std::string>();
  if (action == "software_reset") {
    spec.action = FaultAction::SoftwareReset;
  } else if (action == "power_cycle") {
    spec.action = FaultAction::PowerCycle;
  } else if (action == "set_bus") {
    spec.action = FaultAction::SetBus;
    spec.bus = parse_bus(f, bus);
  } else if (action == "write_flag") {
    spec.action = FaultAction::WriteFlag;
    const auto flag = f.at("flag").get<std::string>();
    if (flag == "application") {
      spec.flag = nv::FlagRegister::ApplicationEnter;
    } else if (flag == "updater") {
      spec.flag = nv::FlagRegister::BootloaderUpdaterEnter;
    } else {
      throw ScenarioError("flag must be application or updater");
    }
    const auto value = f.at("value").get<std::string>();
    if (value != "ENTER" && value != "N_ENTER") throw ScenarioError("flag value must be ENTER or N_ENTER");
    spec.flag_value = value == "ENTER" ? nv::BootFlag::Enter : nv::BootFlag::NotEnter;
  } else if (action == "abort_campaign") {
    spec.action = FaultAction::AbortCampaign;
  } else if (action == "pause_campaign") {
    spec.action = FaultAction::PauseCampaign;
  } else if (action == "resume_campaign") {
    spec.action = FaultAction::ResumeCampaign;
  } else {
    throw ScenarioError("unknown fault action " + action);
  }
  if (spec.action == FaultAction::SoftwareReset || spec.action == FaultAction::PowerCycle ||
      spec.action == FaultAction::WriteFlag) {
    spec.node = f.at("node").get<can::NodeId>();
  }
  return spec;
}

}  // namespace

Bytes resolve_image(const json& spec, const std::filesystem::path& base_dir) {
  if (spec.is_string()) {
    const auto path = base_dir / spec.get<std::string>();
    try {
      return read_file(path);
    } catch (const std::exception&) {
      throw ScenarioError("cannot read image " + path.string());
    }
  }
  if (!spec.is_object()) throw ScenarioError("image spec must be a path or an object");
  if (spec.contains("image")) {
    auto raw = resolve_image(spec.at("image"), base_dir);
    if (!spec.contains("gains")) return raw;
    const auto g = spec.at("gains").get<std::vector<double>>();
    if (g.size() != 3) throw ScenarioError("gains must be [kp, ki, kd]");
    return lka::pack_image(raw, lka::PidGains{g[0], g[1], g[2]});
  }
  if (spec.contains("random")) {
    const auto& r = spec.at("random");
    const auto size = r.at("size").get<std::size_t>();
    if (size == 0) throw ScenarioError("random image size must be positive");
    return random_image(size, r.value("seed", std::uint64_t{0}));
  }
  if (spec.contains("mutate")) {
    const auto& m = spec.at("mutate");
    return mutate_image(resolve_image(m.at("base"), base_dir), m);
  }
  throw ScenarioError("unrecognised image spec");
}

Scenario parse_scenario(const json& doc, const std::filesystem::path& base_dir) {
  try {
    Scenario sc;
    sc.name = doc.value("name", std::string("scenario"));
    sc.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("bus")) sc.bus = parse_bus(doc.at("bus"), sc.bus);
    sc.max_ticks = doc.value("max_ticks", sc.max_ticks);
    if (sc.max_ticks == 0) throw ScenarioError("max_ticks must be positive");
    sc.settle = micros(doc, "settle_us", Micros{0});

    for (const auto& n : doc.at("nodes")) {
      auto spec = parse_node(n, base_dir);
      const bool dup = std::any_of(sc.nodes.begin(), sc.nodes.end(), [&](const NodeSpec& s) { return s.id == spec.id; });
      if (dup) throw ScenarioError("duplicate node id " + std::to_string(spec.id));
      sc.nodes.push_back(std::move(spec));
    }

    if (doc.contains("campaign")) {
      const auto& c = doc.at("campaign");
      CampaignSpec cs;
      auto& p = cs.plan;
      const auto mode = c.value("mode", std::string("delta"));
      if (mode == "full") {
        p.mode = ota::CampaignMode::Full;
      } else if (mode == "delta") {
        p.mode = ota::CampaignMode::Delta;
      } else {
        throw ScenarioError("campaign mode must be full or delta");
      }
      p.master = c.at("master").get<can::NodeId>();
      p.target = c.at("target").get<can::NodeId>();
      auto find = [&](can::NodeId id) -> const NodeSpec* {
        for (const auto& n : sc.nodes) {
          if (n.id == id) return &n;
        }
        return nullptr;
      };
      const auto* master = find(p.master);
      const auto* target = find(p.target);
      if (!master || !master->master) throw ScenarioError("campaign master must name a master node");
      if (!target || target->master) throw ScenarioError("campaign target must name a target node");
      p.shared_secret = c.contains("secret") ? parse_u32(c.at("secret"), "secret") : target->target.shared_secret;
      p.new_image = resolve_image(c.at("new"), base_dir);
      p.old_image = c.contains("old") ? resolve_image(c.at("old"), base_dir) : target->target.factory_application;
      p.retry_budget = c.value("retry_budget", p.retry_budget);
      p.command_timeout = micros(c, "command_timeout_us", p.command_timeout);
      p.gap_merge = c.value("gap_merge", p.gap_merge);
      cs.start = micros(c, "start_us", Micros{0});
      cs.compare_full = c.value("compare_full", false);
      sc.campaign = std::move(cs);
    }

    if (doc.contains("faults")) {
      for (const auto& f : doc.at("faults")) sc.faults.push_back(parse_fault(f, sc.bus));
    }
    for (const auto& f : sc.faults) {
      if (f.action != FaultAction::SoftwareReset && f.action != FaultAction::PowerCycle &&
          f.action != FaultAction::WriteFlag) {
        continue;
      }
      const auto it = std::find_if(sc.nodes.begin(), sc.nodes.end(), [&](const NodeSpec& s) { return s.id == f.node; });
      if (it == sc.nodes.end()) throw ScenarioError("fault names unknown node " + std::to_string(f.node));
      if (f.action == FaultAction::WriteFlag && it->master) throw ScenarioError("write_flag needs a target node");
    }
    return sc;
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario schema: ") + e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw std::filesystem::filesystem_error("scenario not found", path, std::make_error_code(std::errc::no_such_file_or_directory));
  }
  std::ifstream in(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
  }
  auto sc = parse_scenario(doc, path.parent_path());
  if (!doc.contains("name")) sc.name = path.stem().string();
  return sc;
}

namespace {

struct Run {
  std::unique_ptr<sim::World> world;
  std::shared_ptr<ota::Campaign> campaign;
  std::optional<ota::CampaignReport> report;
};

Run execute(const Scenario& sc, std::uint64_t seed, std::optional<ota::CampaignMode> mode, bool record_frames) {
  Run run;
  auto bus = sc.bus;
  bus.rng_seed = seed;
  run.world = std::make_unique<sim::World>(bus);
  auto& world = *run.world;
  world.record_trace(record_frames);

  for (const auto& n : sc.nodes) {
    if (n.master) {
      world.add_node<ota::MasterEcu>(n.id);
      continue;
    }
    auto cfg = n.target;
    if (cfg.session_rng_seed == ota::TargetConfig{}.session_rng_seed) {
      cfg.session_rng_seed = static_cast<std::uint32_t>(splitmix64(seed ^ (std::uint64_t{n.id} << 32))) | 1u;
    }
    world.add_node<ota::TargetEcu>(n.id, std::move(cfg));
  }

  if (sc.campaign) {
    auto plan = sc.campaign->plan;
    if (mode) plan.mode = *mode;
    run.campaign = std::make_shared<ota::Campaign>(std::move(plan));
    auto campaign = run.campaign;
    const auto master = sc.campaign->plan.master;
    world.schedule(sc.campaign->start,
                   [campaign, master](sim::World& w) { w.node_as<ota::MasterEcu>(master).set_job(campaign); });
  }
  for (const auto& f : sc.faults) {
    auto campaign = run.campaign;
    world.schedule(f.at, [f, campaign](sim::World& w) {
      switch (f.action) {
        case FaultAction::SoftwareReset:
          w.log(f.node, sim::EventKind::Fault, "scheduled software reset");
          sim::software_reset(w, f.node);
          break;
        case FaultAction::PowerCycle:
          w.log(f.node, sim::EventKind::Fault, "scheduled power cycle");
          sim::power_cycle(w, f.node);
          break;
        case FaultAction::SetBus: w.bus().reconfigure(f.bus); break;
        case FaultAction::WriteFlag:
          w.log(f.node, sim::EventKind::Fault, std::string("scheduled flag write ") + nv::to_string(f.flag_value));
          nv::write_flag(w.node_as<ota::TargetEcu>(f.node).registers(), f.flag, f.flag_value);
          break;
        case FaultAction::AbortCampaign:
          if (campaign) campaign->abort(w, "killed by fault schedule");
          break;
        case FaultAction::PauseCampaign:
          if (campaign) campaign->pause();
          break;
        case FaultAction::ResumeCampaign:
          if (campaign) campaign->resume();
          break;
      }
    });
  }

  std::uint64_t used = 0;
  if (run.campaign) {
    auto campaign = run.campaign;
    const auto r = sim::run_until(world, [&](const sim::World&) { return campaign->done(); }, sc.max_ticks);
    used = r.ticks;
    if (!campaign->done()) {
      campaign->abort(world, "tick budget exhausted");
      run.report = campaign->report();
      run.report->outcome = ota::Outcome::Timeout;
    } else {
      run.report = campaign->report();
    }
  }
  const auto until = world.now() + sc.settle;
  while (world.now() < until && used < sc.max_ticks) {
    world.tick();
    ++used;
  }
  return run;
}

nlohmann::ordered_json target_summary(const ota::TargetEcu& t, const std::optional<ota::CampaignPlan>& plan) {
  nlohmann::ordered_json j;
  j["node"] = t.id();
  j["mode"] = boot::to_string(t.mode());
  j["last_decision"] = t.last_decision() ? boot::to_string(*t.last_decision()) : "none";
  j["boots"] = t.boots();
  const auto meta = boot::read_app_metadata(t.flash());
  if (meta) {
    j["app_bytes"] = meta->byte_count;
    j["app_crc"] = hex32(meta->image_crc);
  } else {
    j["app_bytes"] = nullptr;
    j["app_crc"] = nullptr;
  }
  if (plan && plan->target == t.id()) {
    const auto& app = t.flash().layout().region(flash::RegionId::Application);
    const auto& img = plan->new_image;
    bool same = img.size() <= app.size;
    if (same) {
      const auto v = t.flash().view(app.offset, img.size());
      same = std::equal(v.begin(), v.end(), img.begin());
    }
    j["app_matches_new_image"] = same;
  }
  const auto& g = t.active_gains();
  j["gains"] = {g.kp, g.ki, g.kd};
  const auto& trace = t.lka_trace();
  j["lka_samples"] = trace.size();
  if (!trace.empty()) j["lka_final_error_deg"] = std::abs(trace.back().target_deg - trace.back().position_deg);
  if (const auto u = t.last_updater_outcome()) {
    nlohmann::ordered_json uj;
    uj["success"] = u->success;
    uj["rolled_back"] = u->rolled_back;
    uj["cause"] = u->cause;
    j["bootloader_update"] = uj;
  }
  return j;
}

std::string lka_csv(sim::World& world, const Scenario& sc) {
  std::string out = kLkaTraceHeader;
  out += '\n';
  char line[160];
  for (const auto& n : sc.nodes) {
    if (n.master) continue;
    const auto& t = world.node_as<ota::TargetEcu>(n.id);
    for (const auto& s : t.lka_trace()) {
      std::snprintf(line, sizeof line, "%lld,%u,%.2f,%.6f,%.6f,%d\n", static_cast<long long>(s.time.count()),
                    static_cast<unsigned>(n.id), s.deviation_m, s.target_deg, s.position_deg,
                    static_cast<int>(s.order));
      out += line;
    }
  }
  return out;
}

}  // namespace

RunOutput run_scenario(const Scenario& sc, std::optional<std::uint64_t> seed_override, bool record_frames) {
  const auto seed = seed_override.value_or(sc.seed);
  auto run = execute(sc, seed, std::nullopt, record_frames);
  auto& world = *run.world;

  RunOutput out;
  nlohmann::ordered_json j;
  j["scenario"] = sc.name;
  j["seed"] = seed;
  if (run.report) {
    j["campaign"] = ota::to_json(*run.report);
    out.success = run.report->success();
  }
  if (sc.campaign && sc.campaign->compare_full) {
    const auto other = sc.campaign->plan.mode == ota::CampaignMode::Delta ? ota::CampaignMode::Full
                                                                          : ota::CampaignMode::Delta;
    auto cmp = execute(sc, seed, other, false);
    j["comparison_campaign"] = ota::to_json(*cmp.report);
    const auto& delta = other == ota::CampaignMode::Full ? *run.report : *cmp.report;
    const auto& full = other == ota::CampaignMode::Full ? *cmp.report : *run.report;
    try {
      j["reduction_ratio"] = ota::reduction_ratio(delta, full);
      j["bus_byte_ratio"] = full.bytes_on_bus ? static_cast<double>(delta.bytes_on_bus) / full.bytes_on_bus : 0.0;
    } catch (const ota::IncomparableReports& e) {
      j["reduction_ratio"] = nullptr;
      j["comparison_error"] = e.what();
      out.success = false;
    }
  }
  std::optional<ota::CampaignPlan> plan;
  if (sc.campaign) plan = sc.campaign->plan;
  auto targets = nlohmann::ordered_json::array();
  for (const auto& n : sc.nodes) {
    if (!n.master) targets.push_back(target_summary(world.node_as<ota::TargetEcu>(n.id), plan));
  }
  j["targets"] = targets;
  j["simulated_time_us"] = world.now().count();
  j["ticks"] = world.ticks();
  out.report = std::move(j);
  out.events_jsonl = world.event_log_jsonl();
  out.frames_csv = world.frame_trace_csv();
  out.lka_csv = lka_csv(world, sc);
  return out;
}

}  // namespace canfota::scenario
