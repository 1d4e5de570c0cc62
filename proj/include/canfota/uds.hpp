// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

// UDS service 0x27 (Security Access): the ECU-side session and a
// transport-agnostic tester state machine.

#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "canfota/common.hpp"

namespace canfota::uds {

inline constexpr std::uint8_t kSecurityAccess = 0x27;
inline constexpr std::uint8_t kPositiveOffset = 0x40;
inline constexpr std::uint8_t kNegativeResponse = 0x7F;
inline constexpr std::uint8_t kRequestSeed = 0x01;
inline constexpr std::uint8_t kSendKey = 0x02;

enum class Nrc : std::uint8_t {
  ConditionsNotCorrect = 0x22,
  RequestSequenceError = 0x24,
  InvalidKey = 0x35,
  ExceededNumberOfAttempts = 0x36,
};

inline constexpr std::size_t kSeedLength = 4;
inline constexpr std::size_t kKeyLength = 32;

using Seed = std::array<std::uint8_t, kSeedLength>;
using Key = std::array<std::uint8_t, kKeyLength>;

/// x ^= x << 13; x ^= x >> 17; x ^= x << 5
constexpr std::uint32_t xorshift32(std::uint32_t x) {
  x ^= x << 13;
  x ^= x >> 17;
  x ^= x << 5;
  return x;
}

/// Toy derivation shared by tester and ECU: k0 = seed(BE) ^ secret (0 maps to
/// 0xDEADBEEF), then eight xorshift32 states, each big-endian.
Key derive_key(const Seed& seed, std::uint32_t shared_secret);

enum class SecurityState { Locked, SeedIssued, Unlocked };

const char* to_string(SecurityState s);

struct SessionConfig {
  std::uint32_t shared_secret = 0;
  std::uint32_t rng_seed = 0x2545F491;
  std::uint32_t max_attempts = 3;
  Micros lockout{10'000'000};
};

class SecuritySession {
 public:
  explicit SecuritySession(SessionConfig config);

  /// Always answers with a positive or negative response; never throws.
  Bytes server_handle(ByteView request, Micros now);

  /// ECU reset: back to Locked. The RNG keeps running so seeds stay fresh.
  void reset();

  SecurityState state() const { return state_; }
  bool unlocked() const { return state_ == SecurityState::Unlocked; }
  const std::optional<Seed>& active_seed() const { return seed_; }
  std::uint32_t failed_attempts() const { return failed_attempts_; }
  bool locked_out(Micros now) const { return lockout_until_ && now < *lockout_until_; }
  const SessionConfig& config() const { return config_; }

 private:
  Seed next_seed();

  SessionConfig config_;
  SecurityState state_ = SecurityState::Locked;
  std::optional<Seed> seed_;
  std::uint32_t failed_attempts_ = 0;
  std::uint32_t rng_state_;
  std::optional<Micros> lockout_until_;
};

Bytes negative_response(Nrc nrc);

enum class UnlockOutcome { Granted, Denied, Timeout };

const char* to_string(UnlockOutcome o);

struct UnlockResult {
  UnlockOutcome outcome = UnlockOutcome::Timeout;
  std::optional<std::uint8_t> nrc;
  Micros duration{0};
};

/// Tester side of the seed/key exchange. Feed it responses and clock ticks;
/// it hands back the next request to put on the wire.
class UdsClient {
 public:
  explicit UdsClient(std::uint32_t shared_secret, Micros deadline = Micros{5'000'000});

  /// Returns the request-seed message.
  Bytes start(Micros now);
  /// Returns the follow-up request, if any.
  std::optional<Bytes> on_response(ByteView response, Micros now);
  void poll(Micros now);

  bool done() const { return result_.has_value(); }
  const std::optional<UnlockResult>& result() const { return result_; }

 private:
  enum class Phase { Idle, AwaitSeed, AwaitKeyReply };

  void finish(UnlockOutcome outcome, Micros now, std::optional<std::uint8_t> nrc = {});

  std::uint32_t secret_;
  Micros deadline_;
  Micros started_{0};
  Phase phase_ = Phase::Idle;
  std::optional<UnlockResult> result_;
};

}  // namespace canfota::uds
