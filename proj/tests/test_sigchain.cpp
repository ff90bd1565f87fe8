#include "flbi/sigchain.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace flbi;
using namespace flbi::sigchain;
using flbi::crypto::ThresholdKeyMaterial;

namespace {

struct Epochs
{
  std::vector<ThresholdKeyMaterial> materials;
  SignatureChain chain;
};

// Sequential construction oracle: epoch i+1 is signed by the first t
// shares of epoch i.
Epochs build(std::size_t links, std::uint64_t seed, std::uint32_t n = 4, std::uint32_t t = 3)
{
  Rng rng(seed);
  Epochs e;
  e.materials.push_back(crypto::threshold_keygen(n, t, rng));
  e.chain.root_public_key = e.materials[0].shared_public_key;
  for (std::size_t i = 0; i < links; ++i)
  {
    auto next = crypto::threshold_keygen(n, t, rng);
    const auto &prev = e.materials.back();
    std::vector<crypto::KeyShare> signers(prev.shares.begin(), prev.shares.begin() + t);
    e.chain = extend_chain(e.chain, next.shared_public_key, signers);
    e.materials.push_back(std::move(next));
  }
  return e;
}

FirmwareBundle make_bundle(const Epochs &e, std::size_t epoch, Bytes binary, std::uint64_t version)
{
  FirmwareBundle b;
  b.binary = std::move(binary);
  const auto &m = e.materials[epoch];
  std::vector<crypto::KeyShare> signers(m.shares.begin(), m.shares.begin() + m.threshold_t);
  b.binary_signature = crypto::threshold_sign(signers, firmware_message(b.binary));
  b.chain = e.chain;
  b.version = version;
  return b;
}

}  // namespace

TEST_CASE("empty chain verifies to the root")
{
  auto e = build(0, 1);
  auto v = verify_chain(e.chain.root_public_key, e.chain);
  CHECK(v.ok);
  CHECK(v.final_key == e.chain.root_public_key);
}

TEST_CASE("first link signed by 11 of 16 epoch-0 shares")
{
  auto e = build(1, 2, 16, 11);
  CHECK(e.chain.links.size() == 1);
  auto v = verify_chain(e.chain.root_public_key, e.chain);
  REQUIRE(v.ok);
  CHECK(v.final_key == e.materials[1].shared_public_key);
}

TEST_CASE("five sequential extensions verify to the fifth key")
{
  auto e = build(5, 3);
  auto v = verify_chain(e.chain.root_public_key, e.chain);
  REQUIRE(v.ok);
  CHECK(v.final_key == e.materials[5].shared_public_key);
}

TEST_CASE("extend_chain error paths")
{
  Rng rng(404);
  auto e = build(2, 4);
  auto next = crypto::threshold_keygen(4, 3, rng);

  SUBCASE("shares of a stale epoch")
  {
    std::vector<crypto::KeyShare> stale(e.materials[0].shares.begin(), e.materials[0].shares.begin() + 3);
    try
    {
      extend_chain(e.chain, next.shared_public_key, stale);
      FAIL("expected wrong epoch");
    }
    catch (const ChainError &err)
    {
      CHECK(err.code() == ChainErrc::wrong_epoch);
    }
  }
  SUBCASE("too few shares")
  {
    std::vector<crypto::KeyShare> two(e.materials[2].shares.begin(), e.materials[2].shares.begin() + 2);
    try
    {
      extend_chain(e.chain, next.shared_public_key, two);
      FAIL("expected insufficient shares");
    }
    catch (const ChainError &err)
    {
      CHECK(err.code() == ChainErrc::insufficient_shares);
    }
  }
  SUBCASE("reused key")
  {
    std::vector<crypto::KeyShare> ok(e.materials[2].shares.begin(), e.materials[2].shares.begin() + 3);
    try
    {
      extend_chain(e.chain, e.materials[1].shared_public_key, ok);
      FAIL("expected duplicate key");
    }
    catch (const ChainError &err)
    {
      CHECK(err.code() == ChainErrc::duplicate_key);
    }
  }
}

TEST_CASE("bit flip in the second signature is reported at index 2")
{
  auto e = build(3, 5);
  auto bad = e.chain;
  bad.links[1].signature.bytes[10] ^= 0x01;
  auto v = verify_chain(e.chain.root_public_key, bad);
  CHECK_FALSE(v.ok);
  CHECK(v.failed_index == 2);
}

TEST_CASE("foreign root is reported at index 0")
{
  auto e = build(2, 6);
  auto other = build(0, 7);
  auto v = verify_chain(other.chain.root_public_key, e.chain);
  CHECK_FALSE(v.ok);
  CHECK(v.failed_index == 0);
}

TEST_CASE("prefix monotonicity")
{
  auto e = build(6, 8);
  for (std::size_t k = 0; k <= e.chain.links.size(); ++k)
  {
    SignatureChain prefix{e.chain.root_public_key, {e.chain.links.begin(), e.chain.links.begin() + k}};
    auto v = verify_chain(e.chain.root_public_key, prefix);
    REQUIRE(v.ok);
    CHECK(v.final_key == e.materials[k].shared_public_key);
  }
}

TEST_CASE("every single-byte mutation of an encoded 2-link chain is rejected")
{
  auto e = build(2, 9);
  auto enc = encode_chain(e.chain);
  const auto root = e.chain.root_public_key;
  std::size_t rejected = 0, total = 0;
  for (std::size_t i = 0; i < enc.size(); ++i)
    for (std::uint8_t delta : {std::uint8_t{0x01}, std::uint8_t{0x80}, std::uint8_t{0xff}})
    {
      auto m = enc;
      m[i] ^= delta;
      ++total;
      auto chain = decode_chain(m);
      if (!chain || !verify_chain(root, *chain).ok || verify_chain(root, *chain).final_key != e.materials[2].shared_public_key)
        ++rejected;
    }
  CHECK(rejected == total);
}

TEST_CASE("firmware bundle verification")
{
  auto e = build(2, 10);
  auto bundle = make_bundle(e, 2, to_bytes("firmware v2"), 2);
  const auto root = e.chain.root_public_key;

  SUBCASE("happy path")
  {
    auto v = verify_firmware_bundle(root, bundle);
    CHECK(v.status == BundleStatus::accept);
    CHECK(v.final_key == e.materials[2].shared_public_key);
  }
  SUBCASE("binary signed by a pre-update consortium key")
  {
    auto stale = make_bundle(e, 1, to_bytes("firmware v2"), 2);
    CHECK(verify_firmware_bundle(root, stale).status == BundleStatus::bad_binary_signature);
  }
  SUBCASE("binary mutated after signing")
  {
    for (std::size_t i = 0; i < bundle.binary.size(); ++i)
    {
      auto m = bundle;
      m.binary[i] ^= 0x20;
      CHECK(verify_firmware_bundle(root, m).status == BundleStatus::bad_binary_signature);
    }
    auto longer = bundle;
    longer.binary.push_back(0);
    CHECK(verify_firmware_bundle(root, longer).status == BundleStatus::bad_binary_signature);
  }
  SUBCASE("broken chain")
  {
    auto m = bundle;
    m.chain.links[0].signature.bytes[33] ^= 4;
    auto v = verify_firmware_bundle(root, m);
    CHECK(v.status == BundleStatus::bad_chain);
    CHECK(v.failed_index == 1);
  }
}

TEST_CASE("recovery without recall: pk_0 alone accepts firmware of any later epoch")
{
  auto e = build(4, 11);
  const auto rom_root = e.chain.root_public_key;
  // Epoch 2 is declared compromised; the consortium moves on from epoch 4,
  // the latest valid one. The device root never changes.
  for (std::size_t epoch = 1; epoch <= 4; ++epoch)
  {
    auto sub = e;
    sub.chain.links.resize(epoch);
    auto bundle = make_bundle(sub, epoch, to_bytes("fw-epoch-" + std::to_string(epoch)), epoch + 1);
    CHECK(verify_firmware_bundle(rom_root, bundle).status == BundleStatus::accept);
  }
  // The compromised epoch cannot sign on behalf of a later chain position.
  auto bundle = make_bundle(e, 2, to_bytes("evil"), 99);
  CHECK(verify_firmware_bundle(rom_root, bundle).status == BundleStatus::bad_binary_signature);
  CHECK(rom_root == e.materials[0].shared_public_key);
}

TEST_CASE("chain encoding round-trip, truncation and trailing bytes")
{
  auto e = build(4, 12);
  auto enc = encode_chain(e.chain);
  auto dec = decode_chain(enc);
  REQUIRE(dec);
  CHECK(*dec == e.chain);

  std::string err;
  auto truncated = enc;
  truncated.pop_back();
  CHECK_FALSE(decode_chain(truncated, &err));
  CHECK_FALSE(err.empty());

  auto trailing = enc;
  trailing.push_back(0);
  CHECK_FALSE(decode_chain(trailing));

  auto bad_scheme = enc;
  bad_scheme[5] = 0x42;  // root key scheme byte
  CHECK_FALSE(decode_chain(bad_scheme));
}

TEST_CASE("decode enforces the link limit")
{
  auto e = build(5, 13);
  auto enc = encode_chain(e.chain);
  CHECK(decode_chain(enc, nullptr, 5));
  CHECK_FALSE(decode_chain(enc, nullptr, 4));
  CHECK_THROWS_AS(extend_chain(e.chain, e.materials[0].shared_public_key, e.materials[5].shares, 5), ChainError);
}

TEST_CASE("bundle encoding round-trip")
{
  auto e = build(3, 14);
  auto bundle = make_bundle(e, 3, to_bytes("binary"), 7);
  auto enc = encode_bundle(bundle);
  auto dec = decode_bundle(enc);
  REQUIRE(dec);
  CHECK(*dec == bundle);
  enc.pop_back();
  CHECK_FALSE(decode_bundle(enc));
}

TEST_CASE("golden chain fixture")
{
  std::ifstream in(FLBI_SOURCE_DIR "/tests/fixtures/chain_seed42_3links.hex");
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  auto hex = ss.str();
  while (!hex.empty() && (hex.back() == '\n' || hex.back() == ' ')) hex.pop_back();

  auto expected = build(3, 42);
  auto decoded = decode_chain(from_hex(hex));
  REQUIRE(decoded);
  CHECK(*decoded == expected.chain);
  CHECK(verify_chain(decoded->root_public_key, *decoded).final_key == expected.materials[3].shared_public_key);
}
