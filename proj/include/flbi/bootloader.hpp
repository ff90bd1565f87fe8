#pragma once

// Firmware selection at meter boot.
//
// This is the meter's trusted path and may only use crypto and sigchain.
// tests/test_device.cpp checks the include list of this header and of
// src/bootloader.cpp.

#include "flbi/bytes.hpp"
#include "flbi/crypto.hpp"
#include "flbi/sigchain.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace flbi::bootloader {

enum class Outcome
{
  booted_new,      // partition2 accepted; copy it over partition1
  booted_current,  // partition1 booted
  halted,
};

const char *to_string(Outcome outcome);

struct Decision
{
  Outcome outcome{Outcome::halted};
  std::uint64_t version{0};
  crypto::PublicKey consortium_key;  // final key of the booted bundle's chain
  // Why partition2 was not taken ("no-update", "same-version",
  // "older-version", "stale-chain", "malformed-bundle", "bad-chain",
  // "bad-binary-signature"), or "no-valid-firmware" when halted.
  std::string reason;
  // Set when partition1 held bytes that did not verify.
  std::string current_failure;
};

/// Partitions hold raw bundle bytes as written to flash. Everything is
/// decoded and verified against `root` on every call; nothing is cached.
///
/// partition2 is considered only when it differs from partition1. It must
/// verify, carry a higher version than a verifying partition1, and its chain
/// must contain partition1's final key. Otherwise partition1 is booted if it
/// verifies.
Decision decide(const crypto::PublicKey &root, const std::optional<Bytes> &partition1,
                const std::optional<Bytes> &partition2);

}  // namespace flbi::bootloader
