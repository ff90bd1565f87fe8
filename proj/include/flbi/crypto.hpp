#pragma once

/// Signatures, hash commitments and t-of-n threshold signing.
///
/// All signatures are Schnorr signatures over the ristretto255 group. A
/// threshold signature is produced by Lagrange-weighted aggregation of
/// partial signatures and is byte-for-byte the same kind of object as a
/// single-signer signature, so there is exactly one `verify`.
///
/// Canonical encodings (scheme byte followed by a fixed payload):
///   PublicKey  33 bytes  0x01 | compressed ristretto255 point
///   Signature  65 bytes  0x01 | R (32) | s (32, little-endian scalar)
///   Digest     33 bytes  0x10 | SHA-256 output

#include "flbi/bytes.hpp"
#include "flbi/rng.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace flbi::crypto {

inline constexpr std::uint8_t kSchnorrRistretto255 = 0x01;
inline constexpr std::uint8_t kSha256 = 0x10;

inline constexpr std::size_t kPublicKeySize = 33;
inline constexpr std::size_t kSignatureSize = 65;
inline constexpr std::size_t kDigestSize = 33;

// Supported values of the `security_param` argument of keygen.
inline constexpr unsigned kSecurityBits = 128;

enum class CryptoErrc
{
  unsupported_security_parameter,
  malformed_key,
  invalid_threshold,
  insufficient_shares,
  mixed_material,
  duplicate_share,
  dealer_spent,
};

const char *to_string(CryptoErrc code);

class CryptoError : public std::runtime_error
{
public:
  CryptoError(CryptoErrc code, const std::string &what) : std::runtime_error(what), code_(code) {}
  CryptoErrc code() const { return code_; }

private:
  CryptoErrc code_;
};

/// How a key came to exist. Not part of any encoding: verifiers never see it.
enum class KeyOrigin : std::uint8_t
{
  standard = 0,
  threshold_shared = 1,
};

struct Digest
{
  std::array<std::uint8_t, 32> bytes{};

  Bytes encode() const;
  static std::optional<Digest> decode(ByteView data);
  std::string hex() const;
  bool is_zero() const;

  auto operator<=>(const Digest &) const = default;
};

struct PublicKey
{
  std::array<std::uint8_t, 32> point{};

  Bytes encode() const;
  // nullopt on wrong length, unknown scheme byte or an invalid point.
  static std::optional<PublicKey> decode(ByteView data);
  std::string hex() const;

  auto operator<=>(const PublicKey &) const = default;
};

class SecretKey
{
public:
  // Throws CryptoError(malformed_key) for a zero or non-canonical scalar.
  explicit SecretKey(const std::array<std::uint8_t, 32> &scalar);
  SecretKey(const SecretKey &) = default;
  SecretKey &operator=(const SecretKey &) = default;
  ~SecretKey();

  const std::array<std::uint8_t, 32> &scalar() const { return scalar_; }
  const PublicKey &public_key() const { return public_; }

private:
  std::array<std::uint8_t, 32> scalar_{};
  PublicKey public_;
};

struct KeyPair
{
  SecretKey secret_key;
  PublicKey public_key;
  KeyOrigin scheme_id{KeyOrigin::standard};
};

struct Signature
{
  std::array<std::uint8_t, 64> bytes{};

  Bytes encode() const;
  static std::optional<Signature> decode(ByteView data);

  auto operator<=>(const Signature &) const = default;
};

enum class SignMode
{
  deterministic,
  randomized,
};

KeyPair keygen(unsigned security_param = kSecurityBits);
KeyPair keygen(unsigned security_param, Rng &rng);

Signature sign(const SecretKey &secret_key, ByteView message, SignMode mode = SignMode::deterministic);

bool verify(const PublicKey &public_key, ByteView message, const Signature &sig);
// Encoded-form overload; malformed signature bytes simply fail.
bool verify(const PublicKey &public_key, ByteView message, ByteView encoded_sig);

Digest hash(ByteView data);
inline Digest hash(std::string_view s)
{
  return hash(ByteView(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Threshold signatures

struct KeyShare
{
  std::uint32_t index{0};  // evaluation point, 1..n
  std::array<std::uint8_t, 32> scalar{};
  PublicKey verification_share;  // scalar * G
  PublicKey group_key;
  std::uint32_t threshold{0};
};

struct ThresholdKeyMaterial
{
  PublicKey shared_public_key;
  std::vector<KeyShare> shares;
  std::uint32_t threshold_t{0};
  std::uint32_t member_count_n{0};
};

/// Trusted dealer for one sharing. The polynomial lives only inside
/// `deal()` and is wiped before it returns; afterwards the dealer is spent.
class ThresholdDealer
{
public:
  ThresholdDealer(std::uint32_t n, std::uint32_t t, Rng &rng);

  ThresholdKeyMaterial deal();
  bool spent() const { return spent_; }

private:
  std::uint32_t n_;
  std::uint32_t t_;
  Rng *rng_;
  bool spent_{false};
};

ThresholdKeyMaterial threshold_keygen(std::uint32_t n, std::uint32_t t);
ThresholdKeyMaterial threshold_keygen(std::uint32_t n, std::uint32_t t, Rng &rng);

/// Aggregates partial Schnorr signatures from `shares`. Any set of at least
/// `threshold` distinct shares of one sharing yields a signature that
/// `verify` accepts under the group key.
Signature threshold_sign(std::span<const KeyShare> shares, ByteView message);

// ---------------------------------------------------------------------------

/// Remembers (key, message, signature) triples that already verified.
/// Only successes are stored, so a cache hit can never turn a bad signature
/// into a good one. Used by simulated node groups that share one process.
class VerificationCache
{
public:
  explicit VerificationCache(std::size_t capacity = 1u << 20) : capacity_(capacity) {}

  bool verify(const PublicKey &public_key, ByteView message, const Signature &sig);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

private:
  std::size_t capacity_;
  std::unordered_set<std::string> verified_;
  std::size_t hits_{0};
  std::size_t misses_{0};
};

}  // namespace flbi::crypto
