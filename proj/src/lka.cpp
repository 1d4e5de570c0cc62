// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/lka.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace canfota::lka {

MotorOrder motor_order(double deviation_m, double threshold_m) {
  if (!std::isfinite(deviation_m) || !std::isfinite(threshold_m)) throw NonFiniteInput("deviation must be finite");
  if (deviation_m > threshold_m) return MotorOrder::Right;
  if (deviation_m < -threshold_m) return MotorOrder::Left;
  return MotorOrder::Straight;
}

PidOutput pid_step(const SteeringState& state, const PidGains& gains, double error, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  PidOutput out;
  const double derivative = (error - state.previous_error) / dt;
  out.command = std::clamp(gains.kp * error + gains.ki * state.integral + gains.kd * derivative, -kCommandLimit,
                           kCommandLimit);
  out.state = state;
  out.state.integral = std::clamp(state.integral + error * dt, -kIntegralLimit, kIntegralLimit);
  out.state.previous_error = error;
  return out;
}

double control_step(SteeringState& state, const PidGains& gains, double target_deg, double dt, PlantConfig plant) {
  const auto out = pid_step(state, gains, target_deg - state.position, dt);
  state = out.state;
  state.position = std::clamp(state.position + dt * plant.gain * out.command, -kPositionLimit, kPositionLimit);
  return out.command;
}

std::vector<TracePoint> simulate(const PidGains& gains, double target_deg, double initial_position_deg,
                                 double duration_s, double dt, PlantConfig plant) {
  if (!(duration_s > 0.0) || !(dt > 0.0)) throw std::invalid_argument("duration and dt must be positive");
  SteeringState state;
  state.position = initial_position_deg;
  const auto steps = static_cast<std::size_t>(std::llround(duration_s / dt));
  std::vector<TracePoint> trace;
  trace.reserve(steps);
  for (std::size_t i = 1; i <= steps; ++i) {
    control_step(state, gains, target_deg, dt, plant);
    trace.push_back({static_cast<double>(i) * dt, std::abs(target_deg - state.position)});
  }
  return trace;
}

double parse_deviation_line(std::string_view text) {
  auto fail = [&]() -> MalformedDeviation { return MalformedDeviation("malformed deviation line"); };
  if (text.empty() || text.back() != '\n') throw fail();
  text.remove_suffix(1);
  bool negative = false;
  if (!text.empty() && (text.front() == '-' || text.front() == '+')) {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }
  const auto dot = text.find('.');
  if (dot == std::string_view::npos || dot == 0 || text.size() - dot - 1 != 2) throw fail();
  long long whole = 0;
  for (std::size_t i = 0; i < dot; ++i) {
    if (text[i] < '0' || text[i] > '9' || i > 12) throw fail();
    whole = whole * 10 + (text[i] - '0');
  }
  const char f1 = text[dot + 1];
  const char f2 = text[dot + 2];
  if (f1 < '0' || f1 > '9' || f2 < '0' || f2 > '9') throw fail();
  const long long hundredths = whole * 100 + (f1 - '0') * 10 + (f2 - '0');
  const double value = static_cast<double>(hundredths) / 100.0;
  return negative ? -value : value;
}

double DeviationMap::target_for(double deviation_m) const {
  return std::clamp(deviation_m * degrees_per_meter, -limit_deg, limit_deg);
}

Bytes encode_gains_block(const PidGains& gains) {
  Bytes block(kParamBlockSize, 0xFF);
  std::copy(std::begin(kParamMagic), std::end(kParamMagic), block.begin());
  std::size_t at = 4;
  for (double v : {gains.kp, gains.ki, gains.kd}) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) block[at++] = static_cast<std::uint8_t>(bits >> (8 * i));
  }
  return block;
}

Bytes pack_image(ByteView raw, const PidGains& gains) {
  for (double v : {gains.kp, gains.ki, gains.kd}) {
    if (!std::isfinite(v)) throw NonFiniteInput("gains must be finite");
  }
  Bytes image(raw.begin(), raw.end());
  image.resize((raw.size() + kParamBlockSize - 1) / kParamBlockSize * kParamBlockSize, 0xFF);
  const auto block = encode_gains_block(gains);
  image.insert(image.end(), block.begin(), block.end());
  return image;
}

std::optional<PidGains> read_gains(ByteView image) {
  if (image.size() < kParamBlockSize) return std::nullopt;
  const auto block = image.last(kParamBlockSize);
  if (!std::equal(std::begin(kParamMagic), std::end(kParamMagic), block.begin())) return std::nullopt;
  double v[3];
  for (int k = 0; k < 3; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(block[4 + 8 * k + i]) << (8 * i);
    v[k] = std::bit_cast<double>(bits);
    if (!std::isfinite(v[k])) return std::nullopt;
  }
  return PidGains{v[0], v[1], v[2]};
}

}  // namespace canfota::lka
