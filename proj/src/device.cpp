#include "flbi/device.hpp"

#include <cmath>

namespace flbi::device {

SensorInput SensorModel::sample(Rng &rng) const
{
  return {rng.between(power - power_noise, power + power_noise),
          rng.between(voltage - voltage_noise, voltage + voltage_noise),
          rng.between(frequency - frequency_noise, frequency + frequency_noise)};
}

// ---------------------------------------------------------------------------

Meter::Meter(std::string id, crypto::KeyPair tpm, Rom rom, std::optional<Bytes> factory_bundle)
    : id_(std::move(id)), tpm_(std::move(tpm)), rom_(std::move(rom)), partition1_(std::move(factory_bundle))
{
  boot();
}

std::optional<std::uint64_t> Meter::active_version() const
{
  if (!running_) return std::nullopt;
  return last_boot_.version;
}

std::pair<Reading, Signature> Meter::sense_and_sign(const SensorInput &input, SimTime now,
                                                    const std::string &supplier_id, Bytes metadata) const
{
  if (!running_) throw DeviceError("meter " + id_ + " is not running");
  SensorInput x = input;
  if (behavior_.tampered)
  {
    x.power = x.power * behavior_.scale_permille / 1000;
    x.voltage = x.voltage * behavior_.scale_permille / 1000;
    x.frequency = x.frequency * behavior_.scale_permille / 1000;
  }
  Reading r{id_, supplier_id, std::move(metadata), x.power, x.voltage, x.frequency, now};
  Signature sig = crypto::sign(tpm_.secret_key, r.encode());
  return {std::move(r), sig};
}

void Meter::receive_firmware(ByteView bundle)
{
  if (!running_) throw DeviceError("meter " + id_ + " is not running");
  partition2_ = Bytes(bundle.begin(), bundle.end());
  reboot_pending_ = true;
}

bootloader::Decision Meter::boot()
{
  reboot_pending_ = false;
  ++boot_count_;
  last_boot_ = bootloader::decide(rom_.root_public_key, partition1_, partition2_);
  switch (last_boot_.outcome)
  {
  case bootloader::Outcome::booted_new:
    partition1_ = partition2_;
    [[fallthrough]];
  case bootloader::Outcome::booted_current:
    running_ = true;
    consortium_key_ = last_boot_.consortium_key;
    break;
  case bootloader::Outcome::halted:
    running_ = false;
    break;
  }
  return last_boot_;
}

// ---------------------------------------------------------------------------

namespace {

bool deviates(std::span<const Reading> window, const Reading &reading, std::int64_t Reading::*field,
              const AnomalyConfig &config)
{
  double sum = 0;
  for (const auto &r : window) sum += static_cast<double>(r.*field) / 1000.0;
  const double n = static_cast<double>(window.size());
  const double mean = sum / n;
  double var = 0;
  for (const auto &r : window)
  {
    const double d = static_cast<double>(r.*field) / 1000.0 - mean;
    var += d * d;
  }
  const double sd = std::max(std::sqrt(var / n), config.std_floor);
  const double z = std::abs(static_cast<double>(reading.*field) / 1000.0 - mean) / sd;
  return z > config.k;
}

}  // namespace

AnomalyVerdict anomaly_hook(std::span<const Reading> history, const Reading &reading, const AnomalyConfig &config)
{
  if (history.empty() || history.size() < config.min_history) return AnomalyVerdict::pass;
  const std::size_t w = std::min(config.window, history.size());
  auto window = history.subspan(history.size() - w);
  for (auto field : {&Reading::power, &Reading::voltage, &Reading::frequency})
    if (deviates(window, reading, field, config)) return AnomalyVerdict::flag;
  return AnomalyVerdict::pass;
}

// ---------------------------------------------------------------------------

Bytes SignedReading::encode() const
{
  ByteWriter w;
  w.blob(reading.encode()).raw(signature.encode());
  return std::move(w).take();
}

std::optional<SignedReading> SignedReading::decode(ByteView data)
{
  try
  {
    ByteReader r(data);
    auto reading = Reading::decode(r.blob(4096));
    auto sig = Signature::decode(r.raw(65));
    r.expect_done();
    if (!reading || !sig) return std::nullopt;
    return SignedReading{std::move(*reading), *sig};
  }
  catch (const DecodeError &)
  {
    return std::nullopt;
  }
}

const char *to_string(RelayStatus status)
{
  switch (status)
  {
  case RelayStatus::submitted: return "submitted";
  case RelayStatus::bad_signature: return "bad-signature";
  case RelayStatus::unknown_meter: return "unknown-meter";
  case RelayStatus::not_admitted: return "not-admitted";
  }
  return "?";
}

MeasurementRelay::MeasurementRelay(consensus::Chain &chain, std::size_t node_index, crypto::KeyPair node_keys,
                                   std::array<std::uint8_t, 32> storage_key,
                                   std::shared_ptr<crypto::VerificationCache> verifier)
    : chain_(chain), node_index_(node_index), keys_(std::move(node_keys)), storage_key_(storage_key),
      verifier_(std::move(verifier))
{
}

const std::string &MeasurementRelay::node_name() const { return chain_.node(node_index_).name(); }

RelayOutcome MeasurementRelay::relay(const SignedReading &in)
{
  RelayOutcome out;
  const auto &state = dynamic_cast<const contracts::BottomLayerContract &>(chain_.node(node_index_).state());
  auto it = state.meters().find(in.reading.meter_id);
  if (it == state.meters().end())
  {
    out.status = RelayStatus::unknown_meter;
    if (sink_) sink_({"unknown-meter", in.reading.meter_id, node_name()});
    return out;
  }
  const Bytes encoded = in.reading.encode();
  const bool ok = verifier_ ? verifier_->verify(it->second, encoded, in.signature)
                            : crypto::verify(it->second, encoded, in.signature);
  if (!ok)
  {
    out.status = RelayStatus::bad_signature;
    if (sink_) sink_({"bad-signature", in.reading.meter_id, node_name()});
    return out;
  }

  Reading reading = in.reading;
  if (tamper_) tamper_(reading);
  contracts::MeasurementRecord rec;
  rec.reading = std::move(reading);
  const Bytes payload = rec.reading.encode();
  rec.payload_digest = crypto::hash(payload);
  rec.tpm_signature = in.signature;
  rec.encrypted_payload = contracts::keyed_transform(storage_key_, rec.payload_digest, payload);

  auto tx = consensus::Transaction::create(node_name(), nonce_++, contracts::calls::put_measurement(rec),
                                           keys_.secret_key);
  out.tx_id = tx.id();
  out.submit = chain_.submit(node_index_, tx);
  if (out.submit != consensus::SubmitStatus::accepted) out.status = RelayStatus::not_admitted;
  return out;
}

}  // namespace flbi::device
