// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "canfota/lka.hpp"
#include "test_support.hpp"

namespace canfota::lka {
namespace {

using canfota::testing::random_bytes;

TEST(MotorOrderTest, Thresholds) {
  EXPECT_EQ(motor_order(0.0), MotorOrder::Straight);
  EXPECT_EQ(motor_order(0.5), MotorOrder::Right);
  EXPECT_EQ(motor_order(-0.5), MotorOrder::Left);
  EXPECT_EQ(motor_order(0.05), MotorOrder::Straight);
  EXPECT_EQ(motor_order(-0.05), MotorOrder::Straight);
  EXPECT_EQ(static_cast<int>(motor_order(0.06)), 1);
  EXPECT_EQ(static_cast<int>(motor_order(-0.06)), 2);
  EXPECT_EQ(static_cast<int>(motor_order(0.01)), 3);
}

TEST(MotorOrderTest, NonFiniteRejected) {
  EXPECT_THROW(motor_order(std::numeric_limits<double>::quiet_NaN()), NonFiniteInput);
  EXPECT_THROW(motor_order(std::numeric_limits<double>::infinity()), NonFiniteInput);
}

TEST(PidStepTest, ZeroErrorZeroCommand) {
  EXPECT_EQ(pid_step({}, PidGains{}, 0.0, 0.01).command, 0.0);
}

TEST(PidStepTest, ProportionalOnly) {
  EXPECT_DOUBLE_EQ(pid_step({}, PidGains{1.0, 0.0, 0.0}, 7.0, 0.01).command, 7.0);
}

TEST(PidStepTest, FiniteDifferenceDerivativeWithRespectToError) {
  const PidGains g{2.0, 0.1, 0.5};
  const double dt = 0.01;
  SteeringState state;
  state.integral = 3.0;
  state.previous_error = 0.2;
  const double e = 0.25;  // keeps the command inside the clamp
  const double h = 1e-6;
  const double numeric =
      (pid_step(state, g, e + h, dt).command - pid_step(state, g, e - h, dt).command) / (2.0 * h);
  const double analytic = g.kp + g.kd / dt;
  EXPECT_NEAR(numeric, analytic, 1e-6 * analytic);
}

TEST(PidStepTest, ClampsAndState) {
  const auto out = pid_step({}, PidGains{1000.0, 0.0, 0.0}, 10.0, 0.01);
  EXPECT_EQ(out.command, kCommandLimit);
  SteeringState wound;
  wound.integral = 99.99;
  EXPECT_EQ(pid_step(wound, PidGains{}, 50.0, 1.0).state.integral, kIntegralLimit);
  const auto s = pid_step({}, PidGains{}, 4.0, 0.5).state;
  EXPECT_DOUBLE_EQ(s.integral, 2.0);
  EXPECT_DOUBLE_EQ(s.previous_error, 4.0);
  EXPECT_THROW(pid_step({}, PidGains{}, 1.0, 0.0), std::invalid_argument);
}

TEST(PidStepTest, PureFunctionOfInputs) {
  SteeringState s;
  s.integral = 1.5;
  s.previous_error = -0.5;
  const PidGains g{1.1, 0.2, 0.3};
  const auto a = pid_step(s, g, 2.0, 0.02);
  const auto b = pid_step(s, g, 2.0, 0.02);
  EXPECT_EQ(a.command, b.command);
  EXPECT_EQ(a.state.integral, b.state.integral);
}

TEST(SimulateTest, ZeroGainsNeverMove) {
  const auto trace = simulate(PidGains{0, 0, 0}, 10.0, 0.0, 1.0);
  ASSERT_EQ(trace.size(), 100u);
  for (const auto& p : trace) EXPECT_EQ(p.error_deg, 10.0);
}

TEST(SimulateTest, TunedDefaultsReachTenDegrees) {
  const auto trace = simulate(PidGains{}, 10.0, 0.0, 5.0);
  ASSERT_EQ(trace.size(), 500u);
  EXPECT_NEAR(trace.back().time_s, 5.0, 1e-9);
  EXPECT_LE(trace.back().error_deg, 0.5);
}

TEST(SimulateTest, TunedDefaultsReachThirtyDegrees) {
  EXPECT_LE(simulate(PidGains{}, 30.0, 0.0, 5.0).back().error_deg, 1.0);
}

TEST(SimulateTest, ConvergenceEnvelopeOverTargetSweep) {
  for (double target = 5.0; target <= 30.0; target += 2.5) {
    const auto trace = simulate(PidGains{}, target, 0.0, 5.0);
    double worst = 0.0;
    for (std::size_t i = trace.size() - 100; i < trace.size(); ++i) worst = std::max(worst, trace[i].error_deg);
    EXPECT_LE(worst, 1.0) << "target " << target;
  }
}

TEST(SimulateTest, FirstStepAlreadyActuates) {
  SteeringState s;
  const double cmd = control_step(s, PidGains{}, 10.0, 0.01);
  EXPECT_NE(cmd, 0.0);
  EXPECT_GT(s.position, 0.0);
}

TEST(SimulateTest, PositionClamp) {
  SteeringState s;
  for (int i = 0; i < 1000; ++i) control_step(s, PidGains{100, 0, 0}, 10'000.0, 0.1);
  EXPECT_EQ(s.position, kPositionLimit);
}

TEST(DeviationTest, ParseValid) {
  EXPECT_DOUBLE_EQ(parse_deviation_line("0.25\n"), 0.25);
  EXPECT_DOUBLE_EQ(parse_deviation_line("-1.07\n"), -1.07);
  EXPECT_DOUBLE_EQ(parse_deviation_line("+12.50\n"), 12.5);
}

TEST(DeviationTest, ParseInvalid) {
  for (const char* bad : {"1.5\n", "1.500\n", "0.25", ".25\n", "1,25\n", "a.bc\n", "\n", "", "--1.00\n", "1.2x\n"}) {
    EXPECT_THROW(parse_deviation_line(bad), MalformedDeviation) << '"' << bad << '"';
  }
}

TEST(DeviationTest, LinearMapWithClamp) {
  const DeviationMap map;
  EXPECT_DOUBLE_EQ(map.target_for(0.25), 15.0);
  EXPECT_DOUBLE_EQ(map.target_for(-0.1), -6.0);
  EXPECT_DOUBLE_EQ(map.target_for(2.0), 30.0);
  EXPECT_DOUBLE_EQ(map.target_for(-2.0), -30.0);
}

TEST(ImageTest, PackPadsAndAppendsGains) {
  const auto raw = random_bytes(1500, 1);
  const PidGains g{2.5, 0.125, 0.75};
  const auto image = pack_image(raw, g);
  ASSERT_EQ(image.size(), 3072u);
  EXPECT_TRUE(std::equal(raw.begin(), raw.end(), image.begin()));
  for (std::size_t i = 1500; i < 2048; ++i) ASSERT_EQ(image[i], 0xFF);
  EXPECT_EQ(image[2048], 'L');
  EXPECT_EQ(image[2051], 'G');
  ASSERT_TRUE(read_gains(image));
  EXPECT_EQ(*read_gains(image), g);
}

TEST(ImageTest, GainsAreLittleEndianDoubles) {
  const auto block = encode_gains_block(PidGains{1.0, 0.0, 0.0});
  // 1.0 is 0x3FF0000000000000.
  EXPECT_EQ(block[4 + 7], 0x3F);
  EXPECT_EQ(block[4 + 6], 0xF0);
  EXPECT_EQ(block[4], 0x00);
}

TEST(ImageTest, ImagesWithoutParameterBlock) {
  EXPECT_FALSE(read_gains(random_bytes(4096, 2)));
  EXPECT_FALSE(read_gains(Bytes(10, 0)));
  EXPECT_THROW(pack_image(Bytes{1}, PidGains{std::nan(""), 0, 0}), NonFiniteInput);
}

}  // namespace
}  // namespace canfota::lka
