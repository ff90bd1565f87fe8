#include "flbi/bootloader.hpp"

#include "flbi/crypto.hpp"
#include "flbi/sigchain.hpp"

namespace flbi::bootloader {

const char *to_string(Outcome outcome)
{
  switch (outcome)
  {
  case Outcome::booted_new: return "booted-new";
  case Outcome::booted_current: return "booted-current";
  case Outcome::halted: return "halted";
  }
  return "?";
}

namespace {

struct Checked
{
  std::optional<sigchain::FirmwareBundle> bundle;
  sigchain::BundleVerdict verdict;
  const char *failure{nullptr};
};

Checked check(const crypto::PublicKey &root, const Bytes &raw)
{
  Checked c;
  c.bundle = sigchain::decode_bundle(raw);
  if (!c.bundle)
  {
    c.failure = "malformed-bundle";
    return c;
  }
  c.verdict = sigchain::verify_firmware_bundle(root, *c.bundle);
  if (c.verdict.status == sigchain::BundleStatus::bad_chain)
    c.failure = "bad-chain";
  else if (c.verdict.status == sigchain::BundleStatus::bad_binary_signature)
    c.failure = "bad-binary-signature";
  return c;
}

}  // namespace

Decision decide(const crypto::PublicKey &root, const std::optional<Bytes> &partition1,
                const std::optional<Bytes> &partition2)
{
  Decision d;
  std::optional<Checked> current;
  if (partition1)
  {
    current = check(root, *partition1);
    if (current->failure)
    {
      d.current_failure = current->failure;
      current.reset();
    }
  }

  d.reason = "no-update";
  if (partition2 && (!partition1 || *partition2 != *partition1))
  {
    Checked incoming = check(root, *partition2);
    if (incoming.failure)
      d.reason = incoming.failure;
    else if (current && incoming.bundle->version == current->bundle->version)
      d.reason = "same-version";
    else if (current && incoming.bundle->version < current->bundle->version)
      d.reason = "older-version";
    else if (current && !incoming.bundle->chain.contains(current->verdict.final_key))
      d.reason = "stale-chain";
    else
    {
      d.outcome = Outcome::booted_new;
      d.version = incoming.bundle->version;
      d.consortium_key = incoming.verdict.final_key;
      d.reason.clear();
      return d;
    }
  }

  if (!current)
  {
    d.outcome = Outcome::halted;
    d.reason = "no-valid-firmware";
    return d;
  }
  d.outcome = Outcome::booted_current;
  d.version = current->bundle->version;
  d.consortium_key = current->verdict.final_key;
  return d;
}

}  // namespace flbi::bootloader
