#pragma once

// Smart meter model and the bottom-node relay that stores its readings.

#include "flbi/bootloader.hpp"
#include "flbi/consensus.hpp"
#include "flbi/contracts.hpp"
#include "flbi/crypto.hpp"
#include "flbi/rng.hpp"

#include <array>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace flbi::device {

using contracts::Reading;
using crypto::PublicKey;
using crypto::Signature;
using simnet::SimTime;

class DeviceError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Raw sensor values in thousandths of W, V and Hz.
struct SensorInput
{
  std::int64_t power{0};
  std::int64_t voltage{0};
  std::int64_t frequency{0};
};

/// Honest sensor: nominal values plus uniform noise of the given half-width.
struct SensorModel
{
  std::int64_t power{1'500'000};
  std::int64_t power_noise{50'000};
  std::int64_t voltage{230'000};
  std::int64_t voltage_noise{500};
  std::int64_t frequency{50'000};
  std::int64_t frequency_noise{20};

  SensorInput sample(Rng &rng) const;
};

/// What the running firmware does to a reading before the TPM signs it.
/// A tampered build scales every value by scale_permille / 1000.
struct FirmwareBehavior
{
  bool tampered{false};
  std::int64_t scale_permille{1000};

  static FirmwareBehavior honest() { return {}; }
  static FirmwareBehavior scaled(std::int64_t permille) { return {true, permille}; }
};

struct Rom
{
  std::string bootloader_tag;
  PublicKey root_public_key;
};

class Meter
{
public:
  /// Boots immediately. Without a factory bundle the meter starts halted.
  Meter(std::string id, crypto::KeyPair tpm, Rom rom, std::optional<Bytes> factory_bundle = std::nullopt);

  const std::string &id() const { return id_; }
  const Rom &rom() const { return rom_; }
  const PublicKey &tpm_public_key() const { return tpm_.public_key; }

  bool running() const { return running_; }
  std::optional<std::uint64_t> active_version() const;
  const std::optional<PublicKey> &current_consortium_key() const { return consortium_key_; }
  const std::optional<Bytes> &partition1() const { return partition1_; }
  const std::optional<Bytes> &partition2() const { return partition2_; }
  bool reboot_pending() const { return reboot_pending_; }
  const bootloader::Decision &last_boot() const { return last_boot_; }
  std::size_t boot_count() const { return boot_count_; }

  const FirmwareBehavior &firmware_behavior() const { return behavior_; }
  void set_firmware_behavior(FirmwareBehavior behavior) { behavior_ = behavior; }

  // Physical flash write that bypasses the update path.
  void overwrite_partition1(std::optional<Bytes> raw) { partition1_ = std::move(raw); }

  /// Throws DeviceError when halted.
  std::pair<Reading, Signature> sense_and_sign(const SensorInput &input, SimTime now,
                                               const std::string &supplier_id, Bytes metadata = {}) const;

  /// Writes the bundle to partition2 as given and queues a reboot.
  /// Throws DeviceError when halted.
  void receive_firmware(ByteView bundle);

  bootloader::Decision boot();

private:
  const std::string id_;
  const crypto::KeyPair tpm_;
  const Rom rom_;
  std::optional<Bytes> partition1_;
  std::optional<Bytes> partition2_;
  std::optional<PublicKey> consortium_key_;
  bool running_{false};
  bool reboot_pending_{false};
  std::size_t boot_count_{0};
  bootloader::Decision last_boot_;
  FirmwareBehavior behavior_;
};

// ---------------------------------------------------------------------------
// Anomaly hook

struct AnomalyConfig
{
  std::size_t window{32};
  std::size_t min_history{16};
  double k{4.0};
  double std_floor{1e-6};  // in W, V, Hz
};

enum class AnomalyVerdict
{
  pass,
  flag,
};

/// z-score test per channel against the trailing `window` readings of
/// `history` (oldest first). Flags if any channel deviates by more than k
/// standard deviations. Passes while history is shorter than min_history.
AnomalyVerdict anomaly_hook(std::span<const Reading> history, const Reading &reading,
                            const AnomalyConfig &config = {});

// ---------------------------------------------------------------------------
// Relay

/// A reading and its TPM signature as they travel from meter to node.
struct SignedReading
{
  Reading reading;
  Signature signature;

  // blob reading | signature (65)
  Bytes encode() const;
  static std::optional<SignedReading> decode(ByteView data);
};

enum class RelayStatus
{
  submitted,
  bad_signature,
  unknown_meter,
  not_admitted,
};

const char *to_string(RelayStatus status);

struct RelayOutcome
{
  RelayStatus status{RelayStatus::submitted};
  consensus::SubmitStatus submit{consensus::SubmitStatus::accepted};
  crypto::Digest tx_id;
};

struct RelayEvent
{
  std::string kind;  // "bad-signature" or "unknown-meter"
  std::string meter;
  std::string node;
};

/// Client side of one bottom-layer node: checks a meter's signature against
/// the meter key registered in that node's contract state and submits a
/// putMeasurement transaction.
class MeasurementRelay
{
public:
  MeasurementRelay(consensus::Chain &chain, std::size_t node_index, crypto::KeyPair node_keys,
                   std::array<std::uint8_t, 32> storage_key,
                   std::shared_ptr<crypto::VerificationCache> verifier = nullptr);

  RelayOutcome relay(const SignedReading &signed_reading);

  // Compromised node: alters the reading after its own check.
  void set_tamper(std::function<void(Reading &)> tamper) { tamper_ = std::move(tamper); }
  void set_event_sink(std::function<void(const RelayEvent &)> sink) { sink_ = std::move(sink); }

  const std::string &node_name() const;
  std::uint64_t submitted() const { return nonce_; }

private:
  consensus::Chain &chain_;
  std::size_t node_index_;
  crypto::KeyPair keys_;
  std::array<std::uint8_t, 32> storage_key_;
  std::shared_ptr<crypto::VerificationCache> verifier_;
  std::function<void(Reading &)> tamper_;
  std::function<void(const RelayEvent &)> sink_;
  std::uint64_t nonce_{0};
};

}  // namespace flbi::device
