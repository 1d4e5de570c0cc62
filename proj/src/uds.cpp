// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include "canfota/uds.hpp"

#include <algorithm>

namespace canfota::uds {

Key derive_key(const Seed& seed, std::uint32_t shared_secret) {
  std::uint32_t x = get_be32(seed, 0) ^ shared_secret;
  if (x == 0) x = 0xDEADBEEF;
  Key key{};
  for (std::size_t i = 0; i < 8; ++i) {
    x = xorshift32(x);
    key[4 * i] = static_cast<std::uint8_t>(x >> 24);
    key[4 * i + 1] = static_cast<std::uint8_t>(x >> 16);
    key[4 * i + 2] = static_cast<std::uint8_t>(x >> 8);
    key[4 * i + 3] = static_cast<std::uint8_t>(x);
  }
  return key;
}

const char* to_string(SecurityState s) {
  switch (s) {
    case SecurityState::Locked: return "Locked";
    case SecurityState::SeedIssued: return "SeedIssued";
    case SecurityState::Unlocked: return "Unlocked";
  }
  return "?";
}

Bytes negative_response(Nrc nrc) { return {kNegativeResponse, kSecurityAccess, static_cast<std::uint8_t>(nrc)}; }

SecuritySession::SecuritySession(SessionConfig config)
    : config_(config), rng_state_(config.rng_seed != 0 ? config.rng_seed : 0x2545F491) {}

Seed SecuritySession::next_seed() {
  rng_state_ = xorshift32(rng_state_);
  Seed s{};
  for (int i = 0; i < 4; ++i) s[i] = static_cast<std::uint8_t>(rng_state_ >> (24 - 8 * i));
  return s;
}

void SecuritySession::reset() {
  state_ = SecurityState::Locked;
  seed_.reset();
}

Bytes SecuritySession::server_handle(ByteView request, Micros now) {
  if (request.size() < 2 || request[0] != kSecurityAccess) return negative_response(Nrc::ConditionsNotCorrect);
  const auto sub = request[1];
  if (sub != kRequestSeed && sub != kSendKey) return negative_response(Nrc::ConditionsNotCorrect);

  if (lockout_until_) {
    if (now < *lockout_until_) return negative_response(Nrc::ExceededNumberOfAttempts);
    lockout_until_.reset();
    failed_attempts_ = 0;
  }

  if (sub == kRequestSeed) {
    if (request.size() != 2) return negative_response(Nrc::ConditionsNotCorrect);
    if (state_ == SecurityState::Unlocked) return {kSecurityAccess + kPositiveOffset, kRequestSeed, 0, 0, 0, 0};
    seed_ = next_seed();
    state_ = SecurityState::SeedIssued;
    Bytes reply{kSecurityAccess + kPositiveOffset, kRequestSeed};
    reply.insert(reply.end(), seed_->begin(), seed_->end());
    return reply;
  }

  if (state_ != SecurityState::SeedIssued) return negative_response(Nrc::RequestSequenceError);
  if (request.size() != 2 + kKeyLength) return negative_response(Nrc::ConditionsNotCorrect);

  const auto expected = derive_key(*seed_, config_.shared_secret);
  seed_.reset();
  if (std::equal(expected.begin(), expected.end(), request.begin() + 2)) {
    state_ = SecurityState::Unlocked;
    failed_attempts_ = 0;
    return {kSecurityAccess + kPositiveOffset, kSendKey};
  }
  state_ = SecurityState::Locked;
  ++failed_attempts_;
  if (failed_attempts_ >= config_.max_attempts) {
    failed_attempts_ = config_.max_attempts;
    lockout_until_ = now + config_.lockout;
    return negative_response(Nrc::ExceededNumberOfAttempts);
  }
  return negative_response(Nrc::InvalidKey);
}

const char* to_string(UnlockOutcome o) {
  switch (o) {
    case UnlockOutcome::Granted: return "Granted";
    case UnlockOutcome::Denied: return "Denied";
    case UnlockOutcome::Timeout: return "Timeout";
  }
  return "?";
}

UdsClient::UdsClient(std::uint32_t shared_secret, Micros deadline) : secret_(shared_secret), deadline_(deadline) {}

Bytes UdsClient::start(Micros now) {
  started_ = now;
  phase_ = Phase::AwaitSeed;
  result_.reset();
  return {kSecurityAccess, kRequestSeed};
}

void UdsClient::finish(UnlockOutcome outcome, Micros now, std::optional<std::uint8_t> nrc) {
  result_ = UnlockResult{outcome, nrc, now - started_};
  phase_ = Phase::Idle;
}

std::optional<Bytes> UdsClient::on_response(ByteView response, Micros now) {
  if (done() || phase_ == Phase::Idle) return std::nullopt;
  if (response.size() == 3 && response[0] == kNegativeResponse && response[1] == kSecurityAccess) {
    finish(UnlockOutcome::Denied, now, response[2]);
    return std::nullopt;
  }
  const std::uint8_t positive = kSecurityAccess + kPositiveOffset;
  if (phase_ == Phase::AwaitSeed && response.size() == 2 + kSeedLength && response[0] == positive &&
      response[1] == kRequestSeed) {
    Seed seed{};
    std::copy_n(response.begin() + 2, kSeedLength, seed.begin());
    if (std::all_of(seed.begin(), seed.end(), [](auto b) { return b == 0; })) {
      finish(UnlockOutcome::Granted, now);  // ECU reports it is already unlocked
      return std::nullopt;
    }
    const auto key = derive_key(seed, secret_);
    Bytes req{kSecurityAccess, kSendKey};
    req.insert(req.end(), key.begin(), key.end());
    phase_ = Phase::AwaitKeyReply;
    return req;
  }
  if (phase_ == Phase::AwaitKeyReply && response.size() == 2 && response[0] == positive && response[1] == kSendKey) {
    finish(UnlockOutcome::Granted, now);
  }
  return std::nullopt;
}

void UdsClient::poll(Micros now) {
  if (!done() && phase_ != Phase::Idle && now - started_ >= deadline_) finish(UnlockOutcome::Timeout, now);
}

}  // namespace canfota::uds
