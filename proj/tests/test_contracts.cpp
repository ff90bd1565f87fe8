#include "flbi/contracts.hpp"

#include <doctest.h>

using namespace flbi;
using namespace flbi::contracts;

namespace {

struct Actor
{
  std::string id;
  crypto::KeyPair keys;
  std::uint64_t nonce{0};

  Transaction tx(Call call) { return Transaction::create(id, nonce++, std::move(call), keys.secret_key); }
};

BlockContext at(std::uint64_t height) { return {"top", height, static_cast<simnet::SimTime>(height) * 5000}; }

struct Consortium
{
  std::vector<Actor> members;
  std::vector<crypto::ThresholdKeyMaterial> epochs;
  std::unique_ptr<TopLayerContract> top;
  Rng rng;

  explicit Consortium(std::size_t n, std::uint64_t seed = 1) : rng(seed)
  {
    std::vector<RosterEntry> roster;
    for (std::size_t i = 0; i < n; ++i)
    {
      members.push_back({"m" + std::to_string(i), crypto::keygen(128, rng)});
      roster.push_back({members.back().id, members.back().keys.public_key, i == 0});
    }
    epochs.push_back(crypto::threshold_keygen(n, consensus::quorum(n), rng));
    top = std::make_unique<TopLayerContract>(roster, epochs[0].shared_public_key);
  }

  Receipt run(Actor &a, Call call, std::uint64_t h) { return top->apply(a.tx(std::move(call)), at(h)); }

  std::vector<RosterEntry> roster() const
  {
    std::vector<RosterEntry> r;
    for (std::size_t i = 0; i < members.size(); ++i) r.push_back({members[i].id, members[i].keys.public_key, i == 0});
    return r;
  }
};

MeasurementRecord signed_reading(const std::string &meter, const crypto::SecretKey &tpm, std::int64_t power,
                                 simnet::SimTime t)
{
  MeasurementRecord m;
  m.reading = {meter, "supplier-1", to_bytes("meta"), power, 230'000, 50'000, t};
  auto enc = m.reading.encode();
  m.payload_digest = crypto::hash(enc);
  m.tpm_signature = crypto::sign(tpm, enc);
  std::array<std::uint8_t, 32> key{};
  m.encrypted_payload = keyed_transform(key, m.payload_digest, enc);
  return m;
}

}  // namespace

TEST_CASE("putFirmware")
{
  Consortium c(4);
  auto &oem = c.members[0];
  auto d2 = crypto::hash("firmware v2");

  auto r = c.run(oem, calls::put_firmware(2, d2, 10), 7);
  REQUIRE(r.ok);
  const auto &rec = c.top->firmware(1);
  CHECK(rec.proposal_height == 7);
  CHECK(rec.cooldown_T == 10);
  CHECK(c.top->check_firmware(1, 7) == FirmwareStatus::pending);

  Rng rng(9);
  Actor outsider{"outsider", crypto::keygen(128, rng)};
  CHECK(c.run(outsider, calls::put_firmware(3, crypto::hash("x"), 10), 8).error == "unauthorized");
  CHECK(c.run(c.members[1], calls::put_firmware(3, crypto::hash("x"), 10), 8).error == "unauthorized");
  CHECK(c.run(oem, calls::put_firmware(1, crypto::hash("v1"), 10), 8).error == "stale-version");
  CHECK(c.run(oem, calls::put_firmware(2, d2, 10), 8).error == "duplicate");
  CHECK(c.run(oem, calls::put_firmware(3, crypto::hash("v3"), 10), 9).ok);
  CHECK(c.top->firmware_log().size() == 2);
}

TEST_CASE("vetoFirmware window boundary")
{
  for (std::uint64_t offset : {std::uint64_t{0}, std::uint64_t{9}, std::uint64_t{10}, std::uint64_t{25}})
  {
    Consortium c(4);
    REQUIRE(c.run(c.members[0], calls::put_firmware(2, crypto::hash("fw"), 10), 100).ok);
    auto r = c.run(c.members[2], calls::veto_firmware(1), 100 + offset);
    if (offset < 10)
    {
      CHECK(r.ok);
      CHECK(c.top->check_firmware(1, 1000) == FirmwareStatus::vetoed);
      CHECK(c.top->firmware(1).vetoes == std::set<std::string>{"m2"});
    }
    else
    {
      CHECK(r.error == "too-late");
      CHECK(c.top->check_firmware(1, 110) == FirmwareStatus::valid);
    }
  }
  Consortium c(4);
  CHECK(c.run(c.members[1], calls::veto_firmware(5), 1).error == "unknown-record");
  REQUIRE(c.run(c.members[0], calls::put_firmware(2, crypto::hash("fw"), 10), 1).ok);
  REQUIRE(c.run(c.members[1], calls::veto_firmware(1), 2).ok);
  CHECK(c.run(c.members[2], calls::veto_firmware(1), 3).error == "not-pending");
}

TEST_CASE("checkFirmware reads")
{
  Consortium c(4);
  REQUIRE(c.run(c.members[0], calls::put_firmware(2, crypto::hash("a"), 5), 10).ok);
  CHECK(c.top->check_firmware(1, 10) == FirmwareStatus::pending);
  CHECK(c.top->check_firmware(1, 14) == FirmwareStatus::pending);
  CHECK(c.top->check_firmware(1, 15) == FirmwareStatus::valid);
  CHECK_THROWS_AS(c.top->check_firmware(2, 15), ContractError);
  CHECK(c.run(c.members[1], calls::check_firmware(1), 11).ok);
  CHECK(c.run(c.members[1], calls::check_firmware(9), 11).error == "unknown-record");
}

TEST_CASE("firmware validity is monotone in vetoes")
{
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial)
  {
    Consortium base(4, 5);
    const std::uint64_t T = rng.between(1, 20);
    REQUIRE(base.run(base.members[0], calls::put_firmware(2, crypto::hash("fw"), T), 50).ok);
    const std::uint64_t veto_at = 50 + rng.between(0, 2 * T);
    const std::uint64_t probe = 50 + rng.between(0, 3 * T);
    const auto before = base.top->check_firmware(1, probe);
    base.run(base.members[1 + rng.below(3)], calls::veto_firmware(1), veto_at);
    const auto after = base.top->check_firmware(1, probe);
    if (after != before) CHECK(after == FirmwareStatus::vetoed);
    CHECK_FALSE((before == FirmwareStatus::vetoed && after != FirmwareStatus::vetoed));
  }
}

TEST_CASE("updateAdminKey")
{
  Consortium c(4);
  auto &m = c.members[1];
  Rng rng(12);
  auto fresh = crypto::keygen(128, rng);

  SUBCASE("valid rotation; old key stream rejected afterwards")
  {
    auto proof = crypto::sign(m.keys.secret_key, admin_rotation_message(m.id, fresh.public_key));
    REQUIRE(c.run(m, calls::update_admin_key(fresh.public_key, proof), 1).ok);
    CHECK(c.top->members().at(m.id).admin_key == fresh.public_key);
    REQUIRE(c.run(c.members[0], calls::put_firmware(2, crypto::hash("fw"), 50), 2).ok);
    const auto before = c.top->state_digest();
    for (int i = 0; i < 20; ++i) CHECK(c.run(m, calls::veto_firmware(1), 3).error == "bad-signature");
    CHECK(c.top->state_digest() == before);
    Actor rotated{m.id, fresh, 1000};
    CHECK(c.run(rotated, calls::veto_firmware(1), 3).ok);
  }
  SUBCASE("proof signed by another member")
  {
    auto proof = crypto::sign(c.members[2].keys.secret_key, admin_rotation_message(m.id, fresh.public_key));
    CHECK(c.run(m, calls::update_admin_key(fresh.public_key, proof), 1).error == "bad-proof");
  }
}

TEST_CASE("key proposals: quorum arithmetic for 16 members")
{
  Consortium c(16);
  Rng rng(13);
  auto tpm = crypto::keygen(128, rng);
  ProposalSpec spec{ProposalKind::add_meter, "meter-1", tpm.public_key};

  REQUIRE(c.run(c.members[3], calls::propose_pub_key(spec), 1).ok);
  CHECK(c.top->proposals().get(1).status == ProposalStatus::open);
  CHECK(c.run(c.members[4], calls::propose_pub_key(spec), 1).error == "duplicate");

  SUBCASE("11 supports approve")
  {
    for (int i = 4; i < 13; ++i) REQUIRE(c.run(c.members[i], calls::vote_pub_key_proposal(1, true), 2).ok);
    CHECK(c.top->proposals().get(1).supports() == 10);
    CHECK(c.top->proposals().get(1).status == ProposalStatus::open);
    CHECK_FALSE(c.top->meters().count("meter-1"));
    REQUIRE(c.run(c.members[13], calls::vote_pub_key_proposal(1, true), 2).ok);
    CHECK(c.top->proposals().get(1).status == ProposalStatus::approved);
    CHECK(c.top->meters().at("meter-1") == tpm.public_key);
    CHECK(c.run(c.members[14], calls::vote_pub_key_proposal(1, true), 3).error == "closed");
  }
  SUBCASE("10 supports then 6 rejects")
  {
    for (int i = 4; i < 13; ++i) REQUIRE(c.run(c.members[i], calls::vote_pub_key_proposal(1, true), 2).ok);
    for (int i = 13; i < 16; ++i) REQUIRE(c.run(c.members[i], calls::vote_pub_key_proposal(1, false), 2).ok);
    for (int i = 0; i < 3; ++i) REQUIRE(c.run(c.members[i], calls::vote_pub_key_proposal(1, false), 2).ok);
    CHECK(c.top->proposals().get(1).rejects() == 6);
    CHECK(c.top->proposals().get(1).status == ProposalStatus::rejected);
    CHECK_FALSE(c.top->meters().count("meter-1"));
  }
  SUBCASE("double vote")
  {
    REQUIRE(c.run(c.members[5], calls::vote_pub_key_proposal(1, true), 2).ok);
    CHECK(c.run(c.members[5], calls::vote_pub_key_proposal(1, false), 2).error == "double-vote");
    CHECK(c.run(c.members[3], calls::vote_pub_key_proposal(1, true), 2).error == "double-vote");
  }
}

TEST_CASE("proposal call encoding round-trip")
{
  Rng rng(14);
  ProposalSpec s;
  s.kind = ProposalKind::consortium_key_update;
  s.subject = "epoch-1";
  s.subject_key = crypto::keygen(128, rng).public_key;
  s.link_signature = crypto::sign(crypto::keygen(128, rng).secret_key, to_bytes("x"));
  s.roster = {{"a", crypto::keygen(128, rng).public_key, true}, {"b", crypto::keygen(128, rng).public_key, false}};
  s.owner = "a";
  s.chain_id = "bottom-3";
  auto call = calls::propose_pub_key(s);
  auto back = decode_proposal(call);
  REQUIRE(back);
  CHECK(*back == s);
  CHECK(consensus::classify(calls::propose_pub_key({ProposalKind::remove_node, "n1"})) == consensus::Priority::high);
  CHECK(consensus::classify(calls::propose_pub_key({ProposalKind::remove_meter, "m1"})) == consensus::Priority::high);
  CHECK(consensus::classify(calls::propose_pub_key(s)) == consensus::Priority::normal);
  CHECK(consensus::classify(calls::veto_firmware(1)) == consensus::Priority::high);
}

TEST_CASE("consortium key updates keep the contract and the signature chain in step")
{
  Consortium c(4, 21);
  const std::size_t k = 3;
  for (std::size_t i = 0; i < k; ++i)
  {
    auto next = crypto::threshold_keygen(4, 3, c.rng);
    const auto &cur = c.epochs.back();
    std::vector<crypto::KeyShare> signers(cur.shares.begin(), cur.shares.begin() + 3);
    ProposalSpec s;
    s.kind = ProposalKind::consortium_key_update;
    s.subject = "epoch-" + std::to_string(i + 1);
    s.subject_key = next.shared_public_key;
    s.link_signature = crypto::threshold_sign(signers, sigchain::link_message(next.shared_public_key));
    s.roster = c.roster();
    REQUIRE(c.run(c.members[0], calls::propose_pub_key(s), 10 + i).ok);
    const auto id = c.top->proposals().all().rbegin()->first;
    REQUIRE(c.run(c.members[1], calls::vote_pub_key_proposal(id, true), 10 + i).ok);
    CHECK(c.top->epochs().size() == i + 1);
    REQUIRE(c.run(c.members[2], calls::vote_pub_key_proposal(id, true), 10 + i).ok);
    CHECK(c.top->epochs().size() == i + 2);
    c.epochs.push_back(std::move(next));
  }
  auto v = sigchain::verify_chain(c.epochs[0].shared_public_key, c.top->canonical_chain());
  REQUIRE(v.ok);
  CHECK(v.final_key == c.top->latest_key());
  CHECK(v.final_key == c.epochs[k].shared_public_key);
  for (std::size_t i = 0; i <= k; ++i) CHECK(c.top->epochs()[i].shared_key == c.epochs[i].shared_public_key);

  SUBCASE("link signed by a stale epoch is rejected")
  {
    auto next = crypto::threshold_keygen(4, 3, c.rng);
    std::vector<crypto::KeyShare> stale(c.epochs[1].shares.begin(), c.epochs[1].shares.begin() + 3);
    ProposalSpec s{ProposalKind::consortium_key_update, "epoch-x", next.shared_public_key};
    s.link_signature = crypto::threshold_sign(stale, sigchain::link_message(next.shared_public_key));
    s.roster = c.roster();
    CHECK(c.run(c.members[0], calls::propose_pub_key(s), 30).error == "bad-link");
  }
  SUBCASE("reusing an old key is rejected")
  {
    std::vector<crypto::KeyShare> cur(c.epochs[k].shares.begin(), c.epochs[k].shares.begin() + 3);
    ProposalSpec s{ProposalKind::consortium_key_update, "epoch-y", c.epochs[1].shared_public_key};
    s.link_signature = crypto::threshold_sign(cur, sigchain::link_message(c.epochs[1].shared_public_key));
    s.roster = c.roster();
    CHECK(c.run(c.members[0], calls::propose_pub_key(s), 30).error == "duplicate");
  }
}

TEST_CASE("putMeasurement")
{
  Rng rng(30);
  auto node = crypto::keygen(128, rng);
  auto tpm1 = crypto::keygen(128, rng);
  auto tpm2 = crypto::keygen(128, rng);
  BottomLayerContract b("bottom-0", {{"node-0", node.public_key}}, {{"meter-1", tpm1.public_key}, {"meter-2", tpm2.public_key}});
  std::vector<ContractEvent> events;
  b.set_event_sink([&](const ContractEvent &e) { events.push_back(e); });
  Actor n0{"node-0", node};
  BlockContext ctx{"bottom-0", 3, 15000};

  auto good = signed_reading("meter-1", tpm1.secret_key, 1500, 1000);
  CHECK(b.apply(n0.tx(calls::put_measurement(good)), ctx).ok);
  REQUIRE(b.measurements().size() == 1);
  CHECK(b.measurements()[0] == good);

  auto forged = signed_reading("meter-1", tpm2.secret_key, 1600, 2000);
  CHECK(b.apply(n0.tx(calls::put_measurement(forged)), ctx).error == "bad-signature");
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == "bad-tpm-signature");
  CHECK(events[0].subject == "meter-1");

  CHECK(b.apply(n0.tx(calls::put_measurement(good)), ctx).error == "duplicate");
  CHECK(b.apply(n0.tx(calls::put_measurement(signed_reading("meter-9", tpm1.secret_key, 1, 1))), ctx).error ==
        "unknown-meter");

  auto tampered = good;
  tampered.reading.power = 1;
  CHECK_FALSE(b.apply(n0.tx(calls::put_measurement(tampered)), ctx).ok);

  Actor stranger{"node-x", crypto::keygen(128, rng)};
  CHECK(b.apply(stranger.tx(calls::put_measurement(signed_reading("meter-2", tpm2.secret_key, 5, 5))), ctx).error ==
        "unauthorized");
  CHECK(b.measurements().size() == 1);

  std::array<std::uint8_t, 32> key{};
  CHECK(keyed_transform(key, good.payload_digest, good.encrypted_payload) == good.reading.encode());
  CHECK(good.encrypted_payload != good.reading.encode());
}

TEST_CASE("bottom-layer membership uses 2f+1 of the chain's nodes")
{
  Rng rng(31);
  std::map<std::string, PublicKey> keys;
  std::vector<Actor> nodes;
  for (int i = 0; i < 4; ++i)
  {
    nodes.push_back({"node-" + std::to_string(i), crypto::keygen(128, rng)});
    keys[nodes.back().id] = nodes.back().keys.public_key;
  }
  BottomLayerContract b("bottom-0", keys, {});
  BlockContext ctx{"bottom-0", 1, 0};
  auto tpm = crypto::keygen(128, rng);
  REQUIRE(b.apply(nodes[0].tx(calls::propose_pub_key({ProposalKind::add_meter, "meter-7", tpm.public_key})), ctx).ok);
  REQUIRE(b.apply(nodes[1].tx(calls::vote_pub_key_proposal(1, true)), ctx).ok);
  CHECK_FALSE(b.meters().count("meter-7"));
  REQUIRE(b.apply(nodes[2].tx(calls::vote_pub_key_proposal(1, true)), ctx).ok);
  CHECK(b.meters().count("meter-7"));
  ProposalSpec up{ProposalKind::consortium_key_update, "e1", tpm.public_key};
  CHECK(b.apply(nodes[0].tx(calls::propose_pub_key(up)), ctx).error == "unsupported");
}

TEST_CASE("replaying a committed sequence reproduces the state digest")
{
  Consortium c(4, 40);
  std::vector<std::pair<Transaction, std::uint64_t>> log;
  auto record = [&](Actor &a, Call call, std::uint64_t h) {
    auto tx = a.tx(std::move(call));
    c.top->apply(tx, at(h));
    log.emplace_back(tx, h);
  };
  record(c.members[0], calls::put_firmware(2, crypto::hash("a"), 5), 1);
  record(c.members[1], calls::veto_firmware(1), 2);
  record(c.members[0], calls::put_firmware(3, crypto::hash("b"), 5), 3);
  record(c.members[2], calls::propose_pub_key({ProposalKind::add_meter, "m", c.members[2].keys.public_key}), 4);
  record(c.members[3], calls::vote_pub_key_proposal(1, true), 5);
  record(c.members[1], calls::vote_pub_key_proposal(1, false), 5);

  Consortium fresh(4, 40);
  for (const auto &[tx, h] : log) fresh.top->apply(tx, at(h));
  CHECK(fresh.top->state_digest() == c.top->state_digest());
  auto cloned = c.top->clone();
  CHECK(cloned->state_digest() == c.top->state_digest());
}

TEST_CASE("10^4 fuzzed invalid transactions never change state")
{
  Consortium c(4, 50);
  REQUIRE(c.run(c.members[0], calls::put_firmware(2, crypto::hash("fw"), 100), 1).ok);
  const auto before = c.top->state_digest();
  Rng rng(51);
  std::size_t rejected = 0;
  const std::vector<Call> templates = {calls::veto_firmware(1), calls::put_firmware(9, crypto::hash("evil"), 0),
                                       calls::propose_pub_key({ProposalKind::add_meter, "m", c.members[0].keys.public_key})};
  for (int i = 0; i < 10'000; ++i)
  {
    auto &m = c.members[rng.below(4)];
    const auto &call = templates[rng.below(templates.size())];
    crypto::Signature sig;
    switch (rng.below(3))
    {
    case 0: rng.fill(sig.bytes); break;
    case 1: sig = crypto::sign(c.members[rng.below(4)].keys.secret_key, to_bytes("other")); break;
    default:
    {
      auto good = Transaction::create(m.id, i, call, m.keys.secret_key);
      sig = good.sender_signature();
      sig.bytes[rng.below(64)] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    }
    }
    Transaction tx(m.id, i, call, sig);
    if (!c.top->apply(tx, at(2)).ok) ++rejected;
  }
  CHECK(rejected == 10'000);
  CHECK(c.top->state_digest() == before);
}
