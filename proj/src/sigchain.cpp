#include "flbi/sigchain.hpp"

#include <algorithm>

namespace flbi::sigchain {

namespace {

constexpr std::uint8_t kMagic[] = {'F', 'L', 'S', 'C'};
constexpr std::size_t kMaxBinary = 64u << 20;

void write_chain(ByteWriter &w, const SignatureChain &chain)
{
  w.raw(kMagic).u8(kChainFormat).raw(chain.root_public_key.encode());
  w.u32(static_cast<std::uint32_t>(chain.links.size()));
  for (const auto &link : chain.links)
  {
    w.blob(link.next_public_key.encode());
    w.blob(link.signature.encode());
  }
}

SignatureChain read_chain(ByteReader &r, std::size_t max_links)
{
  auto magic = r.raw(sizeof(kMagic));
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw DecodeError("bad chain magic");
  if (r.u8() != kChainFormat) throw DecodeError("unsupported chain format");

  SignatureChain chain;
  auto root = crypto::PublicKey::decode(r.raw(crypto::kPublicKeySize));
  if (!root) throw DecodeError("root key has unknown scheme or invalid encoding");
  chain.root_public_key = *root;

  auto count = r.u32();
  if (count > max_links) throw DecodeError("chain has " + std::to_string(count) + " links, limit " + std::to_string(max_links));
  chain.links.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i)
  {
    auto key = crypto::PublicKey::decode(r.blob(crypto::kPublicKeySize));
    if (!key) throw DecodeError("link key has unknown scheme or invalid encoding");
    auto sig = crypto::Signature::decode(r.blob(crypto::kSignatureSize));
    if (!sig) throw DecodeError("link signature has unknown scheme or wrong length");
    chain.links.push_back({*key, *sig});
  }
  return chain;
}

}  // namespace

bool SignatureChain::contains(const PublicKey &key) const
{
  if (root_public_key == key) return true;
  return std::any_of(links.begin(), links.end(), [&](const auto &l) { return l.next_public_key == key; });
}

Bytes link_message(const PublicKey &next_public_key) { return next_public_key.encode(); }

Bytes firmware_message(ByteView binary) { return crypto::hash(binary).encode(); }

SignatureChain extend_chain(const SignatureChain &chain, const PublicKey &next_public_key,
                            std::span<const KeyShare> signing_shares, std::size_t max_links)
{
  if (chain.links.size() >= max_links) throw ChainError(ChainErrc::too_long, "chain is at its length limit");
  if (signing_shares.empty()) throw ChainError(ChainErrc::insufficient_shares, "no signing shares");
  for (const auto &share : signing_shares)
    if (share.group_key != chain.final_key())
      throw ChainError(ChainErrc::wrong_epoch, "signing share does not belong to the chain's current epoch");
  if (chain.contains(next_public_key))
    throw ChainError(ChainErrc::duplicate_key, "key already appears in the chain");

  crypto::Signature sig;
  try
  {
    sig = crypto::threshold_sign(signing_shares, link_message(next_public_key));
  }
  catch (const crypto::CryptoError &e)
  {
    if (e.code() == crypto::CryptoErrc::insufficient_shares) throw ChainError(ChainErrc::insufficient_shares, e.what());
    throw;
  }

  SignatureChain out = chain;
  out.links.push_back({next_public_key, sig});
  return out;
}

ChainVerdict verify_chain(const PublicKey &root_public_key, const SignatureChain &chain)
{
  ChainVerdict verdict;
  if (chain.root_public_key != root_public_key) return verdict;

  const PublicKey *current = &chain.root_public_key;
  for (std::size_t i = 0; i < chain.links.size(); ++i)
  {
    const auto &link = chain.links[i];
    bool repeated = link.next_public_key == chain.root_public_key;
    for (std::size_t j = 0; j < i && !repeated; ++j) repeated = chain.links[j].next_public_key == link.next_public_key;
    if (repeated || !crypto::verify(*current, link_message(link.next_public_key), link.signature))
    {
      verdict.failed_index = i + 1;
      return verdict;
    }
    current = &link.next_public_key;
  }
  verdict.ok = true;
  verdict.final_key = *current;
  return verdict;
}

const char *to_string(BundleStatus status)
{
  switch (status)
  {
  case BundleStatus::accept: return "accept";
  case BundleStatus::bad_chain: return "bad-chain";
  case BundleStatus::bad_binary_signature: return "bad-binary-signature";
  }
  return "unknown";
}

BundleVerdict verify_firmware_bundle(const PublicKey &root_public_key, const FirmwareBundle &bundle)
{
  BundleVerdict verdict;
  auto chain = verify_chain(root_public_key, bundle.chain);
  if (!chain.ok)
  {
    verdict.status = BundleStatus::bad_chain;
    verdict.failed_index = chain.failed_index;
    return verdict;
  }
  verdict.final_key = chain.final_key;
  verdict.status = crypto::verify(chain.final_key, firmware_message(bundle.binary), bundle.binary_signature)
                       ? BundleStatus::accept
                       : BundleStatus::bad_binary_signature;
  return verdict;
}

Bytes encode_chain(const SignatureChain &chain)
{
  ByteWriter w;
  write_chain(w, chain);
  return std::move(w).take();
}

std::optional<SignatureChain> decode_chain(ByteView data, std::string *error, std::size_t max_links)
{
  try
  {
    ByteReader r(data);
    auto chain = read_chain(r, max_links);
    r.expect_done();
    return chain;
  }
  catch (const DecodeError &e)
  {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

Bytes encode_bundle(const FirmwareBundle &bundle)
{
  ByteWriter w;
  write_chain(w, bundle.chain);
  w.u64(bundle.version);
  w.blob(bundle.binary);
  w.raw(bundle.binary_signature.encode());
  return std::move(w).take();
}

std::optional<FirmwareBundle> decode_bundle(ByteView data, std::string *error, std::size_t max_links)
{
  try
  {
    ByteReader r(data);
    FirmwareBundle bundle;
    bundle.chain = read_chain(r, max_links);
    bundle.version = r.u64();
    auto bin = r.blob(kMaxBinary);
    bundle.binary.assign(bin.begin(), bin.end());
    auto sig = crypto::Signature::decode(r.raw(crypto::kSignatureSize));
    if (!sig) throw DecodeError("binary signature has unknown scheme");
    bundle.binary_signature = *sig;
    r.expect_done();
    return bundle;
  }
  catch (const DecodeError &e)
  {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

}  // namespace flbi::sigchain
