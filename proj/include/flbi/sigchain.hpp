#pragma once

// Consortium key/signature chain and the firmware bundle that carries it.
//
// A chain (pk_0, s_1, pk_1, ..., s_k, pk_k) lets a device that trusts only
// pk_0 learn the current consortium key: s_i is a threshold signature by
// the epoch i-1 consortium over the canonical encoding of pk_i.
//
// Chain file layout (all integers big-endian):
//   "FLSC" | u8 format (=1) | root key (33) | u32 link count
//   | repeated { u32 len | key (33) | u32 len | signature (65) }
//
// Bundle file layout:
//   chain file | u64 version | u32 len | binary | signature (65)
//
// The verification half of this module (verify_chain,
// verify_firmware_bundle, decode_*) reports failures as values and is what
// the bootloader links against.

#include "flbi/bytes.hpp"
#include "flbi/crypto.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flbi::sigchain {

using crypto::KeyShare;
using crypto::PublicKey;
using crypto::Signature;

inline constexpr std::size_t kDefaultMaxLinks = 64;
inline constexpr std::uint8_t kChainFormat = 1;

struct ChainLink
{
  PublicKey next_public_key;
  Signature signature;

  bool operator==(const ChainLink &) const = default;
};

struct SignatureChain
{
  PublicKey root_public_key;
  std::vector<ChainLink> links;

  const PublicKey &final_key() const { return links.empty() ? root_public_key : links.back().next_public_key; }
  bool contains(const PublicKey &key) const;

  bool operator==(const SignatureChain &) const = default;
};

struct FirmwareBundle
{
  Bytes binary;
  Signature binary_signature;
  SignatureChain chain;
  std::uint64_t version{0};

  bool operator==(const FirmwareBundle &) const = default;
};

enum class ChainErrc
{
  insufficient_shares,
  wrong_epoch,
  duplicate_key,
  too_long,
};

class ChainError : public std::runtime_error
{
public:
  ChainError(ChainErrc code, const std::string &what) : std::runtime_error(what), code_(code) {}
  ChainErrc code() const { return code_; }

private:
  ChainErrc code_;
};

// Bytes a link signature covers.
Bytes link_message(const PublicKey &next_public_key);
// Bytes a firmware signature covers: the encoded digest of the binary.
Bytes firmware_message(ByteView binary);

/// Appends pk_next signed by the shares of the epoch that owns the chain's
/// final key. Throws ChainError.
SignatureChain extend_chain(const SignatureChain &chain, const PublicKey &next_public_key,
                            std::span<const KeyShare> signing_shares,
                            std::size_t max_links = kDefaultMaxLinks);

struct ChainVerdict
{
  bool ok{false};
  PublicKey final_key;  // meaningful when ok
  // 1-based index of the first link that fails; 0 means the chain's root
  // is not the trusted root.
  std::size_t failed_index{0};
};

ChainVerdict verify_chain(const PublicKey &root_public_key, const SignatureChain &chain);

enum class BundleStatus
{
  accept,
  bad_chain,
  bad_binary_signature,
};

const char *to_string(BundleStatus status);

struct BundleVerdict
{
  BundleStatus status{BundleStatus::bad_chain};
  std::size_t failed_index{0};  // for bad_chain
  PublicKey final_key;          // chain's final key when the chain verified
};

BundleVerdict verify_firmware_bundle(const PublicKey &root_public_key, const FirmwareBundle &bundle);

Bytes encode_chain(const SignatureChain &chain);
std::optional<SignatureChain> decode_chain(ByteView data, std::string *error = nullptr,
                                           std::size_t max_links = kDefaultMaxLinks);

Bytes encode_bundle(const FirmwareBundle &bundle);
std::optional<FirmwareBundle> decode_bundle(ByteView data, std::string *error = nullptr,
                                            std::size_t max_links = kDefaultMaxLinks);

}  // namespace flbi::sigchain
