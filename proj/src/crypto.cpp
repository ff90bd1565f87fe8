#include "flbi/crypto.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>

namespace flbi::crypto {

namespace {

using Scalar = std::array<std::uint8_t, 32>;
using Point = std::array<std::uint8_t, 32>;

void ensure_sodium()
{
  static const bool ready = [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
    return true;
  }();
  (void)ready;
}

bool scalar_is_canonical(const Scalar &s)
{
  std::uint8_t wide[64] = {};
  std::memcpy(wide, s.data(), 32);
  Scalar reduced;
  crypto_core_ristretto255_scalar_reduce(reduced.data(), wide);
  return sodium_memcmp(reduced.data(), s.data(), 32) == 0;
}

bool scalar_is_zero(const Scalar &s) { return sodium_is_zero(s.data(), s.size()) == 1; }

Scalar reduce_wide(const std::uint8_t (&wide)[64])
{
  Scalar out;
  crypto_core_ristretto255_scalar_reduce(out.data(), wide);
  return out;
}

Scalar scalar_from_u32(std::uint32_t v)
{
  Scalar out{};
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return out;
}

Scalar scalar_add(const Scalar &a, const Scalar &b)
{
  Scalar out;
  crypto_core_ristretto255_scalar_add(out.data(), a.data(), b.data());
  return out;
}

Scalar scalar_sub(const Scalar &a, const Scalar &b)
{
  Scalar out;
  crypto_core_ristretto255_scalar_sub(out.data(), a.data(), b.data());
  return out;
}

Scalar scalar_mul(const Scalar &a, const Scalar &b)
{
  Scalar out;
  crypto_core_ristretto255_scalar_mul(out.data(), a.data(), b.data());
  return out;
}

Scalar scalar_invert(const Scalar &a)
{
  Scalar out;
  if (crypto_core_ristretto255_scalar_invert(out.data(), a.data()) != 0)
    throw std::logic_error("inverse of zero scalar");
  return out;
}

// Nonzero scalar drawn from the keystream.
Scalar random_scalar(Rng &rng)
{
  for (;;)
  {
    std::uint8_t wide[64];
    rng.fill(wide);
    auto s = reduce_wide(wide);
    sodium_memzero(wide, sizeof(wide));
    if (!scalar_is_zero(s)) return s;
  }
}

Scalar os_random_scalar()
{
  for (;;)
  {
    Scalar s;
    crypto_core_ristretto255_scalar_random(s.data());
    if (!scalar_is_zero(s)) return s;
  }
}

Point base_mul(const Scalar &s)
{
  Point out;
  if (crypto_scalarmult_ristretto255_base(out.data(), s.data()) != 0)
    throw std::logic_error("base multiplication produced the identity");
  return out;
}

Scalar hash_to_scalar(std::initializer_list<ByteView> parts)
{
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  for (auto p : parts) crypto_hash_sha512_update(&st, p.data(), p.size());
  std::uint8_t wide[64];
  crypto_hash_sha512_final(&st, wide);
  auto out = reduce_wide(wide);
  sodium_memzero(wide, sizeof(wide));
  return out;
}

constexpr std::uint8_t kChallengeTag[] = {'F', 'L', 'B', 'I', '-', 'c', 'h', 'a', 'l'};
constexpr std::uint8_t kNonceTag[] = {'F', 'L', 'B', 'I', '-', 'n', 'o', 'n', 'c', 'e'};
constexpr std::uint8_t kShareNonceTag[] = {'F', 'L', 'B', 'I', '-', 't', 'n', 'o', 'n', 'c', 'e'};

Scalar challenge(const Point &r, const PublicKey &pk, ByteView message)
{
  return hash_to_scalar({ByteView(kChallengeTag), ByteView(r), ByteView(pk.point), message});
}

Signature assemble(const Point &r, const Scalar &s)
{
  Signature sig;
  std::copy(r.begin(), r.end(), sig.bytes.begin());
  std::copy(s.begin(), s.end(), sig.bytes.begin() + 32);
  return sig;
}

// Lagrange coefficient at zero for `index` over `set`.
Scalar lagrange_at_zero(std::uint32_t index, std::span<const std::uint32_t> set)
{
  Scalar num = scalar_from_u32(1);
  Scalar den = scalar_from_u32(1);
  const Scalar xi = scalar_from_u32(index);
  for (auto j : set)
  {
    if (j == index) continue;
    const Scalar xj = scalar_from_u32(j);
    num = scalar_mul(num, xj);
    den = scalar_mul(den, scalar_sub(xj, xi));
  }
  return scalar_mul(num, scalar_invert(den));
}

}  // namespace

const char *to_string(CryptoErrc code)
{
  switch (code)
  {
  case CryptoErrc::unsupported_security_parameter: return "unsupported-security-parameter";
  case CryptoErrc::malformed_key: return "malformed-key";
  case CryptoErrc::invalid_threshold: return "invalid-threshold";
  case CryptoErrc::insufficient_shares: return "insufficient-shares";
  case CryptoErrc::mixed_material: return "mixed-material";
  case CryptoErrc::duplicate_share: return "duplicate-share";
  case CryptoErrc::dealer_spent: return "dealer-spent";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

Bytes Digest::encode() const
{
  Bytes out;
  out.reserve(kDigestSize);
  out.push_back(kSha256);
  out.insert(out.end(), bytes.begin(), bytes.end());
  return out;
}

std::optional<Digest> Digest::decode(ByteView data)
{
  if (data.size() != kDigestSize || data[0] != kSha256) return std::nullopt;
  Digest d;
  std::copy(data.begin() + 1, data.end(), d.bytes.begin());
  return d;
}

std::string Digest::hex() const { return to_hex(bytes); }

bool Digest::is_zero() const
{
  return std::all_of(bytes.begin(), bytes.end(), [](auto b) { return b == 0; });
}

Bytes PublicKey::encode() const
{
  Bytes out;
  out.reserve(kPublicKeySize);
  out.push_back(kSchnorrRistretto255);
  out.insert(out.end(), point.begin(), point.end());
  return out;
}

std::optional<PublicKey> PublicKey::decode(ByteView data)
{
  ensure_sodium();
  if (data.size() != kPublicKeySize || data[0] != kSchnorrRistretto255) return std::nullopt;
  PublicKey pk;
  std::copy(data.begin() + 1, data.end(), pk.point.begin());
  if (crypto_core_ristretto255_is_valid_point(pk.point.data()) != 1) return std::nullopt;
  return pk;
}

std::string PublicKey::hex() const { return to_hex(point); }

SecretKey::SecretKey(const std::array<std::uint8_t, 32> &scalar) : scalar_(scalar)
{
  ensure_sodium();
  if (scalar_is_zero(scalar_) || !scalar_is_canonical(scalar_))
    throw CryptoError(CryptoErrc::malformed_key, "secret key is not a nonzero canonical scalar");
  public_.point = base_mul(scalar_);
}

SecretKey::~SecretKey() { sodium_memzero(scalar_.data(), scalar_.size()); }

Bytes Signature::encode() const
{
  Bytes out;
  out.reserve(kSignatureSize);
  out.push_back(kSchnorrRistretto255);
  out.insert(out.end(), bytes.begin(), bytes.end());
  return out;
}

std::optional<Signature> Signature::decode(ByteView data)
{
  if (data.size() != kSignatureSize || data[0] != kSchnorrRistretto255) return std::nullopt;
  Signature sig;
  std::copy(data.begin() + 1, data.end(), sig.bytes.begin());
  return sig;
}

// ---------------------------------------------------------------------------

namespace {

KeyPair make_keypair(const Scalar &s, KeyOrigin origin)
{
  SecretKey sk(s);
  auto pk = sk.public_key();
  return KeyPair{std::move(sk), pk, origin};
}

void check_security_param(unsigned security_param)
{
  if (security_param != kSecurityBits)
    throw CryptoError(CryptoErrc::unsupported_security_parameter,
                      "unsupported security parameter " + std::to_string(security_param));
}

}  // namespace

KeyPair keygen(unsigned security_param)
{
  ensure_sodium();
  check_security_param(security_param);
  auto s = os_random_scalar();
  auto kp = make_keypair(s, KeyOrigin::standard);
  sodium_memzero(s.data(), s.size());
  return kp;
}

KeyPair keygen(unsigned security_param, Rng &rng)
{
  ensure_sodium();
  check_security_param(security_param);
  auto s = random_scalar(rng);
  auto kp = make_keypair(s, KeyOrigin::standard);
  sodium_memzero(s.data(), s.size());
  return kp;
}

Signature sign(const SecretKey &secret_key, ByteView message, SignMode mode)
{
  ensure_sodium();
  Scalar k;
  if (mode == SignMode::deterministic)
    k = hash_to_scalar({ByteView(kNonceTag), ByteView(secret_key.scalar()), message});
  else
    k = os_random_scalar();
  if (scalar_is_zero(k)) k = scalar_from_u32(1);

  const Point r = base_mul(k);
  const Scalar e = challenge(r, secret_key.public_key(), message);
  const Scalar s = scalar_add(k, scalar_mul(e, secret_key.scalar()));
  sodium_memzero(k.data(), k.size());
  return assemble(r, s);
}

bool verify(const PublicKey &public_key, ByteView message, const Signature &sig)
{
  ensure_sodium();
  Point r;
  Scalar s;
  std::copy(sig.bytes.begin(), sig.bytes.begin() + 32, r.begin());
  std::copy(sig.bytes.begin() + 32, sig.bytes.end(), s.begin());

  if (crypto_core_ristretto255_is_valid_point(public_key.point.data()) != 1) return false;
  if (crypto_core_ristretto255_is_valid_point(r.data()) != 1) return false;
  if (!scalar_is_canonical(s) || scalar_is_zero(s)) return false;

  const Scalar e = challenge(r, public_key, message);
  Point lhs;
  if (crypto_scalarmult_ristretto255_base(lhs.data(), s.data()) != 0) return false;
  Point ea;
  if (crypto_scalarmult_ristretto255(ea.data(), e.data(), public_key.point.data()) != 0) return false;
  Point rhs;
  crypto_core_ristretto255_add(rhs.data(), r.data(), ea.data());
  return sodium_memcmp(lhs.data(), rhs.data(), 32) == 0;
}

bool verify(const PublicKey &public_key, ByteView message, ByteView encoded_sig)
{
  auto sig = Signature::decode(encoded_sig);
  return sig && verify(public_key, message, *sig);
}

Digest hash(ByteView data)
{
  ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

// ---------------------------------------------------------------------------

ThresholdDealer::ThresholdDealer(std::uint32_t n, std::uint32_t t, Rng &rng) : n_(n), t_(t), rng_(&rng)
{
  if (n == 0) throw CryptoError(CryptoErrc::invalid_threshold, "member count must be positive");
  if (t == 0 || t > n)
    throw CryptoError(CryptoErrc::invalid_threshold,
                      "threshold " + std::to_string(t) + " outside [1, " + std::to_string(n) + "]");
}

ThresholdKeyMaterial ThresholdDealer::deal()
{
  ensure_sodium();
  if (spent_) throw CryptoError(CryptoErrc::dealer_spent, "dealer already issued its shares");

  std::vector<Scalar> coeffs(t_);
  for (auto &c : coeffs) c = random_scalar(*rng_);

  ThresholdKeyMaterial material;
  material.threshold_t = t_;
  material.member_count_n = n_;
  material.shared_public_key.point = base_mul(coeffs[0]);

  material.shares.reserve(n_);
  for (std::uint32_t i = 1; i <= n_; ++i)
  {
    // Horner evaluation of the sharing polynomial at x = i.
    const Scalar x = scalar_from_u32(i);
    Scalar y = coeffs.back();
    for (std::size_t k = coeffs.size() - 1; k-- > 0;) y = scalar_add(scalar_mul(y, x), coeffs[k]);

    KeyShare share;
    share.index = i;
    share.scalar = y;
    share.verification_share.point = base_mul(y);
    share.group_key = material.shared_public_key;
    share.threshold = t_;
    material.shares.push_back(share);
    sodium_memzero(y.data(), y.size());
  }

  for (auto &c : coeffs) sodium_memzero(c.data(), c.size());
  coeffs.clear();
  spent_ = true;
  return material;
}

ThresholdKeyMaterial threshold_keygen(std::uint32_t n, std::uint32_t t, Rng &rng)
{
  ThresholdDealer dealer(n, t, rng);
  return dealer.deal();
}

ThresholdKeyMaterial threshold_keygen(std::uint32_t n, std::uint32_t t)
{
  ensure_sodium();
  std::array<std::uint8_t, 32> seed;
  randombytes_buf(seed.data(), seed.size());
  Rng rng(seed);
  sodium_memzero(seed.data(), seed.size());
  return threshold_keygen(n, t, rng);
}

Signature threshold_sign(std::span<const KeyShare> shares, ByteView message)
{
  ensure_sodium();
  if (shares.empty()) throw CryptoError(CryptoErrc::insufficient_shares, "no shares supplied");

  const auto &group = shares.front().group_key;
  const auto threshold = shares.front().threshold;
  std::vector<std::uint32_t> indices;
  indices.reserve(shares.size());
  for (const auto &s : shares)
  {
    if (s.group_key != group || s.threshold != threshold)
      throw CryptoError(CryptoErrc::mixed_material, "shares come from different key material");
    if (std::find(indices.begin(), indices.end(), s.index) != indices.end())
      throw CryptoError(CryptoErrc::duplicate_share, "share " + std::to_string(s.index) + " supplied twice");
    if (s.index == 0) throw CryptoError(CryptoErrc::malformed_key, "share index 0 is reserved");
    indices.push_back(s.index);
  }
  if (shares.size() < threshold)
    throw CryptoError(CryptoErrc::insufficient_shares, std::to_string(shares.size()) + " shares supplied, " +
                                                           std::to_string(threshold) + " required");

  std::vector<std::uint32_t> sorted = indices;
  std::sort(sorted.begin(), sorted.end());
  ByteWriter set_encoding;
  for (auto i : sorted) set_encoding.u32(i);

  // Round one: every signer commits to a nonce. Round two: partial
  // responses. Both rounds are local here; the aggregate is a plain
  // Schnorr signature under the group key.
  std::vector<Scalar> nonces;
  nonces.reserve(shares.size());
  Point r{};
  bool have_r = false;
  for (const auto &s : shares)
  {
    auto k = hash_to_scalar({ByteView(kShareNonceTag), ByteView(s.scalar), message, set_encoding.bytes()});
    if (scalar_is_zero(k)) k = scalar_from_u32(1);
    const Point ri = base_mul(k);
    if (!have_r)
    {
      r = ri;
      have_r = true;
    }
    else
    {
      Point sum;
      crypto_core_ristretto255_add(sum.data(), r.data(), ri.data());
      r = sum;
    }
    nonces.push_back(k);
  }

  const Scalar e = challenge(r, group, message);
  Scalar s_total{};
  for (std::size_t i = 0; i < shares.size(); ++i)
  {
    const Scalar lambda = lagrange_at_zero(shares[i].index, sorted);
    const Scalar partial = scalar_add(nonces[i], scalar_mul(e, scalar_mul(lambda, shares[i].scalar)));
    s_total = scalar_add(s_total, partial);
    sodium_memzero(nonces[i].data(), 32);
  }
  return assemble(r, s_total);
}

// ---------------------------------------------------------------------------

bool VerificationCache::verify(const PublicKey &public_key, ByteView message, const Signature &sig)
{
  ensure_sodium();
  std::string key(32, '\0');
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  crypto_hash_sha256_update(&st, public_key.point.data(), 32);
  crypto_hash_sha256_update(&st, sig.bytes.data(), sig.bytes.size());
  crypto_hash_sha256_update(&st, message.data(), message.size());
  crypto_hash_sha256_final(&st, reinterpret_cast<unsigned char *>(key.data()));

  if (verified_.count(key))
  {
    ++hits_;
    return true;
  }
  ++misses_;
  if (!crypto::verify(public_key, message, sig)) return false;
  if (verified_.size() >= capacity_) verified_.clear();
  verified_.insert(std::move(key));
  return true;
}

}  // namespace flbi::crypto
