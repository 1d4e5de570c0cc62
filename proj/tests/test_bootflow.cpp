// Copyright 2026 The canfota Authors
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "canfota/bootflow.hpp"
#include "test_support.hpp"

namespace canfota::boot {
namespace {

using canfota::testing::kSecret;
using canfota::testing::random_bytes;
using nv::BootFlag;
using nv::FlagRegister;

constexpr std::size_t kApp = 131072;
constexpr std::size_t kBootloader = 65536;

class BootFixture : public ::testing::Test {
 protected:
  /// Writes an application with valid metadata, bypassing flash timing.
  void install_app(const Bytes& app) {
    Bytes cells(device_.contents().begin(), device_.contents().end());
    std::fill(cells.begin() + kApp, cells.end(), 0xFF);
    std::copy(app.begin(), app.end(), cells.begin() + kApp);
    const auto meta = nv::encode_app_metadata(nv::AppMetadata::describe(app));
    std::copy(meta.begin(), meta.end(), cells.begin() + static_cast<long>(nv::metadata_offset(device_.layout())));
    device_.load_snapshot(cells);
  }

  void install_bootloader(const Bytes& image) {
    Bytes cells(device_.contents().begin(), device_.contents().end());
    std::fill(cells.begin() + kBootloader, cells.begin() + kApp, 0xFF);
    std::copy(image.begin(), image.end(), cells.begin() + kBootloader);
    device_.load_snapshot(cells);
  }

  void unlock_session() {
    const auto reply = session_.server_handle(Bytes{0x27, 0x01}, Micros{0});
    uds::Seed seed{};
    std::copy_n(reply.begin() + 2, 4, seed.begin());
    Bytes req{0x27, 0x02};
    const auto key = uds::derive_key(seed, kSecret);
    req.insert(req.end(), key.begin(), key.end());
    ASSERT_EQ(session_.server_handle(req, Micros{0}), (Bytes{0x67, 0x02}));
  }

  void set_flags(BootFlag app, BootFlag updater) {
    nv::write_flag(regs_, FlagRegister::ApplicationEnter, app);
    nv::write_flag(regs_, FlagRegister::BootloaderUpdaterEnter, updater);
  }

  static Bytes mem_write(std::uint32_t address, const Bytes& data) {
    Bytes cmd{cmd::kMemWrite};
    put_le32(cmd, address);
    put_le16(cmd, static_cast<std::uint16_t>(data.size()));
    cmd.insert(cmd.end(), data.begin(), data.end());
    return cmd;
  }

  ServeResult serve(const Bytes& command) { return bootloader_serve(ctx_, command); }

  Bytes region(std::size_t offset, std::size_t size) const {
    const auto v = device_.view(offset, size);
    return Bytes(v.begin(), v.end());
  }

  flash::FlashDevice device_{flash::FlashLayout::stm32f401()};
  nv::BackupRegisters regs_;
  uds::SecuritySession session_{uds::SessionConfig{kSecret}};
  Bytes staging_;
  BootContext ctx_{device_, regs_, session_, Micros{0}, &staging_};
};

TEST_F(BootFixture, ValidAppWithEnterJumpsToApplication) {
  install_app(random_bytes(20000, 1));
  set_flags(BootFlag::Enter, BootFlag::NotEnter);
  EXPECT_EQ(boot_decide(device_, regs_), BootDecision::JumpApplication);
}

TEST_F(BootFixture, UpdaterFlagWinsWhenAppNotEntered) {
  install_app(random_bytes(20000, 1));
  set_flags(BootFlag::NotEnter, BootFlag::Enter);
  EXPECT_EQ(boot_decide(device_, regs_), BootDecision::JumpUpdater);
}

TEST_F(BootFixture, CorruptAppResetsFlagsAndEntersBootloader) {
  install_app(random_bytes(20000, 1));
  auto cells = Bytes(device_.contents().begin(), device_.contents().end());
  cells[kApp + 12345] ^= 0x01;
  device_.load_snapshot(cells);
  set_flags(BootFlag::Enter, BootFlag::NotEnter);
  EXPECT_EQ(application_integrity(device_), integrity::CrcResult::Failed);
  EXPECT_EQ(boot_decide(device_, regs_), BootDecision::JumpBootloader);
  EXPECT_EQ(regs_.read(0), 0x55u);
  EXPECT_EQ(regs_.read(1), 0x55u);
}

TEST_F(BootFixture, ErasedApplicationEntersBootloader) {
  set_flags(BootFlag::Enter, BootFlag::NotEnter);
  EXPECT_FALSE(read_app_metadata(device_));
  EXPECT_EQ(boot_decide(device_, regs_), BootDecision::JumpBootloader);
}

// The full branch table over integrity x app flag x updater flag.
TEST_F(BootFixture, DecisionTableAllEightCombinations) {
  const auto app = random_bytes(30000, 2);
  for (int combo = 0; combo < 8; ++combo) {
    const bool ok = combo & 1;
    const auto app_flag = combo & 2 ? BootFlag::Enter : BootFlag::NotEnter;
    const auto upd_flag = combo & 4 ? BootFlag::Enter : BootFlag::NotEnter;
    install_app(app);
    if (!ok) {
      auto cells = Bytes(device_.contents().begin(), device_.contents().end());
      cells[kApp + 7] ^= 0x80;
      device_.load_snapshot(cells);
    }
    set_flags(app_flag, upd_flag);

    BootDecision expected;
    if (ok && app_flag == BootFlag::Enter) {
      expected = BootDecision::JumpApplication;
    } else if (upd_flag == BootFlag::Enter) {
      expected = BootDecision::JumpUpdater;
    } else {
      expected = BootDecision::JumpBootloader;
    }
    EXPECT_EQ(boot_decide(device_, regs_), expected) << "combo " << combo;
    if (expected == BootDecision::JumpBootloader) {
      EXPECT_EQ(nv::read_flag(regs_, FlagRegister::ApplicationEnter), BootFlag::NotEnter);
      EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), BootFlag::NotEnter);
    } else {
      EXPECT_EQ(nv::read_flag(regs_, FlagRegister::ApplicationEnter), app_flag);
      EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), upd_flag);
    }
  }
}

TEST_F(BootFixture, MemWriteWhileLockedRefused) {
  const auto r = serve(mem_write(kApp, Bytes{1, 2, 3, 4}));
  EXPECT_EQ(r.reply, (Bytes{0x1F, cmd::kMemWrite, 0x02}));
  EXPECT_EQ(region(kApp, 4), Bytes(4, 0xFF));
}

TEST_F(BootFixture, EraseWhileLockedRefused) {
  EXPECT_EQ(serve(Bytes{cmd::kFlashErase, 5, 1}).reply, (Bytes{0x1F, cmd::kFlashErase, 0x02}));
}

TEST_F(BootFixture, EraseSectorFiveWhenUnlocked) {
  install_app(random_bytes(20000, 3));
  unlock_session();
  EXPECT_EQ(serve(Bytes{cmd::kFlashErase, 5, 1}).reply, (Bytes{0x79, cmd::kFlashErase}));
  EXPECT_EQ(region(kApp, 131072), Bytes(131072, 0xFF));
  EXPECT_EQ(device_.lock_state(), flash::LockState::Locked);
}

TEST_F(BootFixture, EraseOutsideApplicationRefused) {
  unlock_session();
  EXPECT_EQ(serve(Bytes{cmd::kFlashErase, 4, 1}).reply, (Bytes{0x1F, cmd::kFlashErase, 0x01}));
  EXPECT_EQ(serve(Bytes{cmd::kFlashErase, 0, 8}).reply, (Bytes{0x1F, cmd::kFlashErase, 0x01}));
  EXPECT_EQ(serve(Bytes{cmd::kFlashErase, 0xFF, 0}).reply, (Bytes{0x79, cmd::kFlashErase}));
}

TEST_F(BootFixture, MemWriteIntoBootloaderRefused) {
  unlock_session();
  EXPECT_EQ(serve(mem_write(kBootloader, Bytes{1, 2})).reply, (Bytes{0x1F, cmd::kMemWrite, 0x01}));
  EXPECT_EQ(serve(mem_write(kApp - 1, Bytes{1, 2})).reply, (Bytes{0x1F, cmd::kMemWrite, 0x01}));
}

TEST_F(BootFixture, MemWriteProgramsAndIsIdempotent) {
  unlock_session();
  const Bytes data{0xDE, 0xAD, 0xBE, 0xEF};
  EXPECT_EQ(serve(mem_write(kApp + 16, data)).reply, (Bytes{0x79, cmd::kMemWrite}));
  EXPECT_EQ(region(kApp + 16, 4), data);
  EXPECT_EQ(serve(mem_write(kApp + 16, data)).reply, (Bytes{0x79, cmd::kMemWrite}));
  EXPECT_EQ(serve(mem_write(kApp + 16, Bytes{0, 0, 0, 0})).reply, (Bytes{0x1F, cmd::kMemWrite, 0x03}));
}

TEST_F(BootFixture, MemWriteCannotCrossIntoMetadataSlice) {
  unlock_session();
  const auto meta = nv::metadata_offset(device_.layout());
  EXPECT_EQ(serve(mem_write(static_cast<std::uint32_t>(meta - 2), Bytes(4, 0))).reply,
            (Bytes{0x1F, cmd::kMemWrite, 0x01}));
  EXPECT_EQ(serve(mem_write(static_cast<std::uint32_t>(meta), Bytes(4, 0))).reply, (Bytes{0x79, cmd::kMemWrite}));
}

TEST_F(BootFixture, GoToAddrSetsFlagsAndRequestsReset) {
  const auto r = serve(Bytes{cmd::kGoToAddr, 0xAA, 0x55});
  EXPECT_EQ(r.reply, (Bytes{0x79, cmd::kGoToAddr}));
  EXPECT_TRUE(r.reset_requested);
  EXPECT_EQ(nv::read_flag(regs_, FlagRegister::ApplicationEnter), BootFlag::Enter);
  EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), BootFlag::NotEnter);
}

TEST_F(BootFixture, UnknownCodeIsShortNack) {
  EXPECT_EQ(serve(Bytes{0x42}).reply, (Bytes{0x1F, 0x42}));
  EXPECT_EQ(serve(Bytes{cmd::kStatus}).reply, (Bytes{0x79, cmd::kStatus, 2}));
}

TEST_F(BootFixture, DeltaCommitAppliesPackage) {
  const auto old_app = random_bytes(40960, 4);
  install_app(old_app);
  unlock_session();
  const auto new_app = canfota::testing::mutate_blocks(old_app, {3, 7}, 1);
  const auto pkg = delta::encode_package(delta::build_delta(old_app, new_app));
  for (std::size_t at = 0; at < pkg.size(); at += 1000) {
    Bytes c{cmd::kDeltaData};
    put_le32(c, static_cast<std::uint32_t>(at));
    c.insert(c.end(), pkg.begin() + static_cast<long>(at),
             pkg.begin() + static_cast<long>(std::min(pkg.size(), at + 1000)));
    ASSERT_EQ(serve(c).reply, (Bytes{0x79, cmd::kDeltaData}));
  }
  Bytes commit{cmd::kDeltaCommit};
  put_le32(commit, static_cast<std::uint32_t>(pkg.size()));
  const auto r = serve(commit);
  EXPECT_EQ(r.reply, (Bytes{0x79, cmd::kDeltaCommit, 1, 1, 2, 0}));
  EXPECT_EQ(read_application(device_), new_app);
}

TEST_F(BootFixture, DeltaForWrongBaseIsRejectedWithoutFlashing) {
  install_app(random_bytes(40960, 5));
  unlock_session();
  const auto other = random_bytes(40960, 6);
  const auto pkg = delta::encode_package(delta::build_delta(other, canfota::testing::mutate_blocks(other, {1}, 2)));
  Bytes data{cmd::kDeltaData};
  put_le32(data, 0);
  data.insert(data.end(), pkg.begin(), pkg.end());
  ASSERT_EQ(serve(data).reply, (Bytes{0x79, cmd::kDeltaData}));
  const auto before = Bytes(device_.contents().begin(), device_.contents().end());
  Bytes commit{cmd::kDeltaCommit};
  put_le32(commit, static_cast<std::uint32_t>(pkg.size()));
  const auto r = serve(commit);
  ASSERT_EQ(r.reply.size(), 3u);
  EXPECT_EQ(r.reply[0], 0x1F);
  EXPECT_TRUE(r.reply[2] == 0x04 || r.reply[2] == 0x07);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), device_.contents().begin()));
}

// Random command streams, with and without security, never touch the boot
// manager region.
TEST_F(BootFixture, FuzzNeverMutatesBootManager) {
  Bytes boot_manager = random_bytes(65536, 7);
  {
    Bytes cells(device_.contents().begin(), device_.contents().end());
    std::copy(boot_manager.begin(), boot_manager.end(), cells.begin());
    device_.load_snapshot(cells);
  }
  install_app(random_bytes(20000, 8));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 5000; ++i) {
    if (i == 2500) unlock_session();
    Bytes c;
    switch (rng() % 5) {
      case 0: c = {cmd::kFlashErase, static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng() % 9)}; break;
      case 1: {
        const auto addr = static_cast<std::uint32_t>(rng() % (600 * 1024));
        c = mem_write(addr, random_bytes(1 + rng() % 64, rng()));
        break;
      }
      case 2: c = {cmd::kGoToAddr, static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng())}; break;
      case 3: c = random_bytes(1 + rng() % 16, rng()); break;
      default: {
        c = {cmd::kDeltaData};
        put_le32(c, static_cast<std::uint32_t>(rng() % 64));
        const auto junk = random_bytes(1 + rng() % 32, rng());
        c.insert(c.end(), junk.begin(), junk.end());
      }
    }
    serve(c);
    ASSERT_EQ(region(0, 65536), boot_manager) << "after command " << i;
  }
}

TEST_F(BootFixture, UpdaterServeCommands) {
  const Version v{2, 3, 4};
  EXPECT_EQ(updater_serve(ctx_, Bytes{cmd::kGetVersion}, v).reply, (Bytes{0x79, 2, 3, 4}));
  EXPECT_TRUE(updater_serve(ctx_, Bytes{0xEE}, v).reply.empty());
  EXPECT_TRUE(updater_serve(ctx_, Bytes{}, v).reply.empty());

  install_bootloader(random_bytes(1000, 10));
  EXPECT_EQ(updater_serve(ctx_, Bytes{cmd::kMemEraseBootloader}, v).reply, (Bytes{0x79, cmd::kMemEraseBootloader}));
  EXPECT_EQ(region(kBootloader, 65536), Bytes(65536, 0xFF));

  Bytes w{cmd::kMemWriteBootloader};
  put_le32(w, kBootloader);
  put_le16(w, 3);
  w.insert(w.end(), {7, 8, 9});
  EXPECT_EQ(updater_serve(ctx_, w, v).reply, (Bytes{0x79, cmd::kMemWriteBootloader}));
  EXPECT_EQ(region(kBootloader, 3), (Bytes{7, 8, 9}));

  Bytes outside{cmd::kMemWriteBootloader};
  put_le32(outside, kApp);
  put_le16(outside, 1);
  outside.push_back(0);
  EXPECT_EQ(updater_serve(ctx_, outside, v).reply, (Bytes{0x1F, cmd::kMemWriteBootloader, 0x01}));

  set_flags(BootFlag::Enter, BootFlag::Enter);
  const auto leave = updater_serve(ctx_, Bytes{cmd::kLeaveToBootManager}, v);
  EXPECT_TRUE(leave.reset_requested);
  EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), BootFlag::NotEnter);
  EXPECT_EQ(boot_decide(device_, regs_), BootDecision::JumpBootloader);
}

TEST_F(BootFixture, SilentUpdaterInstallsImage) {
  install_bootloader(random_bytes(30000, 11));
  const auto image = random_bytes(40000, 12);
  set_flags(BootFlag::NotEnter, BootFlag::Enter);
  const auto out = updater_silent(ctx_, image);
  EXPECT_TRUE(out.success);
  EXPECT_FALSE(out.rolled_back);
  EXPECT_EQ(region(kBootloader, image.size()), image);
  EXPECT_EQ(region(kBootloader + image.size(), 65536 - image.size()), Bytes(65536 - image.size(), 0xFF));
  EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), BootFlag::NotEnter);
  EXPECT_EQ(nv::read_flag(regs_, FlagRegister::ApplicationEnter), BootFlag::NotEnter);
}

TEST_F(BootFixture, SilentUpdaterRejectsOversizedImageBeforeErase) {
  const auto old_bl = random_bytes(30000, 13);
  install_bootloader(old_bl);
  const auto erases = device_.counters().sector_erases;
  const auto out = updater_silent(ctx_, random_bytes(65537, 14));
  EXPECT_FALSE(out.success);
  EXPECT_EQ(device_.counters().sector_erases, erases);
  EXPECT_EQ(region(kBootloader, old_bl.size()), old_bl);
}

// Failure at every step boundary, and at every flash operation, leaves the
// bootloader region holding exactly the old or exactly the new image.
TEST_F(BootFixture, RollbackNeverLeavesABlend) {
  const auto old_bl = random_bytes(50000, 15);
  const auto new_bl = random_bytes(45000, 16);
  Bytes old_region(65536, 0xFF);
  std::copy(old_bl.begin(), old_bl.end(), old_region.begin());
  Bytes new_region(65536, 0xFF);
  std::copy(new_bl.begin(), new_bl.end(), new_region.begin());

  auto check = [&](const UpdaterOutcome& out, const std::string& label) {
    const auto now = region(kBootloader, 65536);
    EXPECT_TRUE(now == old_region || now == new_region) << label;
    if (!out.success) {
      EXPECT_EQ(now, old_region) << label;
      EXPECT_TRUE(out.rolled_back) << label;
    }
  };

  for (auto step : {UpdaterStep::Backup, UpdaterStep::CapacityCheck, UpdaterStep::Erase, UpdaterStep::Program,
                    UpdaterStep::Verify, UpdaterStep::Finalize}) {
    install_bootloader(old_bl);
    set_flags(BootFlag::NotEnter, BootFlag::Enter);
    const auto out = updater_silent(ctx_, new_bl, step);
    EXPECT_FALSE(out.success);
    check(out, to_string(step));
    EXPECT_EQ(nv::read_flag(regs_, FlagRegister::BootloaderUpdaterEnter), BootFlag::NotEnter);
  }
  for (std::size_t ops = 0; ops < 3; ++ops) {
    install_bootloader(old_bl);
    device_.fail_after_ops(ops);
    check(updater_silent(ctx_, new_bl), "flash op " + std::to_string(ops));
    device_.clear_faults();
  }
  for (std::size_t bytes : {0u, 1u, 4096u, 44999u}) {
    install_bootloader(old_bl);
    device_.power_loss_after_bytes(bytes);
    check(updater_silent(ctx_, new_bl), "power loss after " + std::to_string(bytes));
    device_.clear_faults();
  }
}

}  // namespace
}  // namespace canfota::boot
