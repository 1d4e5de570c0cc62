// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// Lane-keep-assist steering controller used as the updatable application.

#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "canfota/common.hpp"

namespace canfota::lka {

struct PidGains {
  double kp = 2.0;
  double ki = 0.1;
  double kd = 0.5;

  friend bool operator==(const PidGains&, const PidGains&) = default;
};

struct SteeringState {
  double position = 0.0;        // degrees, |position| <= 540
  double integral = 0.0;        // degree-seconds
  double previous_error = 0.0;  // degrees
};

inline constexpr double kPositionLimit = 540.0;
inline constexpr double kIntegralLimit = 100.0;
inline constexpr double kCommandLimit = 100.0;

class NonFiniteInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MalformedDeviation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MotorOrder : int { Right = 1, Left = 2, Straight = 3 };

/// Positive deviation means the vehicle sits left of the lane centre.
MotorOrder motor_order(double deviation_m, double threshold_m = 0.05);

struct PidOutput {
  double command = 0.0;
  SteeringState state;
};

/// command = kp*e + ki*I + kd*(e - e_prev)/dt with I the integral up to the
/// previous step (left rectangle), I clamped to +-100 and command to +-100.
PidOutput pid_step(const SteeringState& state, const PidGains& gains, double error, double dt);

struct TracePoint {
  double time_s = 0.0;
  double error_deg = 0.0;
};

struct PlantConfig {
  double gain = 1.0;  // degrees per second per unit command
};

/// First-order plant driven by the PID loop; records |target - position|
/// after every step.
std::vector<TracePoint> simulate(const PidGains& gains, double target_deg, double initial_position_deg,
                                 double duration_s, double dt = 0.01, PlantConfig plant = {});

/// Advances the plant one step under the controller, in place. Returns the
/// command applied.
double control_step(SteeringState& state, const PidGains& gains, double target_deg, double dt, PlantConfig plant = {});

/// Optional sign, digits, '.', exactly two fractional digits, '\n'.
double parse_deviation_line(std::string_view text);

struct DeviationMap {
  double degrees_per_meter = 60.0;
  double limit_deg = 30.0;

  double target_for(double deviation_m) const;
};

// --- parameter block -----------------------------------------------------

inline constexpr std::size_t kParamBlockSize = 1024;
inline constexpr std::uint8_t kParamMagic[4] = {'L', 'K', 'A', 'G'};

/// Pads `raw` with 0xFF to a whole number of blocks and appends the
/// parameter block: "LKAG" then kp, ki, kd as little-endian doubles.
Bytes pack_image(ByteView raw, const PidGains& gains);

/// Reads gains from the last block of an image; nullopt when absent.
std::optional<PidGains> read_gains(ByteView image);

Bytes encode_gains_block(const PidGains& gains);

}  // namespace canfota::lka
