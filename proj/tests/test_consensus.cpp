#include "flbi/consensus.hpp"

#include <doctest.h>

#include <cmath>

using namespace flbi;
using namespace flbi::consensus;
using simnet::kSecond;
using simnet::Network;

namespace {

// Registry of sender keys; counts applied transactions.
class Registry : public StateMachine
{
public:
  std::map<std::string, PublicKey> keys;
  std::uint64_t applied{0};

  std::optional<PublicKey> sender_key(const std::string &sender) const override
  {
    auto it = keys.find(sender);
    if (it == keys.end()) return std::nullopt;
    return it->second;
  }
  Receipt apply(const Transaction &, const BlockContext &) override
  {
    ++applied;
    return {0, true, {}};
  }
  Digest state_digest() const override { return crypto::hash(std::to_string(applied)); }
  std::unique_ptr<StateMachine> clone() const override { return std::make_unique<Registry>(*this); }
};

struct Client
{
  std::string name;
  crypto::KeyPair keys;
  std::uint64_t nonce{0};

  Transaction tx(std::string function = "putMeasurement", std::vector<Bytes> args = {})
  {
    return Transaction::create(name, nonce++, Call{std::move(function), std::move(args)}, keys.secret_key);
  }
};

struct Fixture
{
  Network net;
  Registry genesis;
  std::vector<Client> clients;
  std::unique_ptr<Chain> chain;

  Fixture(std::uint64_t seed, std::vector<Behavior> behaviors, ChainConfig cfg = {}, std::size_t n_clients = 4)
      : net(seed)
  {
    Rng rng(seed);
    for (std::size_t i = 0; i < n_clients; ++i)
    {
      clients.push_back({"client" + std::to_string(i), crypto::keygen(128, rng)});
      genesis.keys[clients.back().name] = clients.back().keys.public_key;
    }
    std::vector<NodeSpec> specs;
    for (std::size_t i = 0; i < behaviors.size(); ++i)
      specs.push_back({"n" + std::to_string(i), crypto::keygen(128, rng), behaviors[i]});
    if (cfg.chain_id == "chain") cfg.chain_id = "test";
    chain = std::make_unique<Chain>(net, cfg, std::move(specs), genesis);
  }

  void run_blocks(std::uint64_t height, SimTime limit = 3600 * kSecond)
  {
    net.run_while_not([&] { return chain->honest_min_height() >= height; }, net.now() + limit);
  }
};

std::vector<Behavior> mix(std::size_t n, std::initializer_list<std::pair<std::size_t, Behavior>> byz)
{
  std::vector<Behavior> b(n, Behavior::honest);
  for (auto [i, beh] : byz) b[i] = beh;
  return b;
}

std::vector<Behavior> spread(std::size_t n, std::size_t f, Behavior beh)
{
  std::vector<Behavior> b(n, Behavior::honest);
  for (std::size_t k = 0; k < f; ++k) b[k * n / f] = beh;
  return b;
}

// First height at which any two honest transcripts disagree, checked
// independently of Chain::safety_violation.
std::optional<std::uint64_t> divergence(const Chain &c)
{
  std::map<std::uint64_t, std::set<std::string>> seen;
  for (auto i : c.honest_nodes())
    for (const auto &b : c.node(i).ledger()) seen[b.height].insert(b.digest().hex());
  for (const auto &[h, ds] : seen)
    if (ds.size() > 1) return h;
  return std::nullopt;
}

}  // namespace

TEST_CASE("fault bound and quorum")
{
  CHECK(fault_bound(16) == 5);
  CHECK(quorum(16) == 11);
  CHECK(fault_bound(4) == 1);
  CHECK(quorum(4) == 3);
  CHECK(fault_bound(3) == 0);
  for (std::uint32_t n = 1; n < 100; ++n)
  {
    auto f = fault_bound(n);
    CHECK(n >= 3 * f + 1);
    CHECK(n < 3 * (f + 1) + 1);
  }
}

TEST_CASE("transaction encoding and priority")
{
  Rng rng(1);
  Client c{"alice", crypto::keygen(128, rng)};
  auto tx = c.tx("putMeasurement", {to_bytes("m1"), to_bytes("payload")});
  auto dec = Transaction::decode(tx.encode());
  REQUIRE(dec);
  CHECK(dec->id() == tx.id());
  CHECK(dec->call() == tx.call());
  CHECK(crypto::verify(c.keys.public_key, dec->payload(), dec->sender_signature()));
  CHECK(tx.priority() == Priority::normal);

  CHECK(c.tx("vetoFirmware").priority() == Priority::high);
  CHECK(c.tx("proposePubKey", {to_bytes("remove-node")}).priority() == Priority::high);
  CHECK(c.tx("proposePubKey", {to_bytes("add-node")}).priority() == Priority::normal);
  CHECK(c.tx("putFirmware").priority() == Priority::normal);

  auto enc = tx.encode();
  enc.pop_back();
  CHECK_FALSE(Transaction::decode(enc));
  enc = tx.encode();
  enc.push_back(0);
  CHECK_FALSE(Transaction::decode(enc));
}

TEST_CASE("veto submitted after a 10,000-transaction flood is selected first")
{
  Rng rng(2);
  Client spammer{"spam", crypto::keygen(128, rng)};
  Client member{"member", crypto::keygen(128, rng)};
  Mempool pool;
  for (int i = 0; i < 10'000; ++i)
    pool.add(Transaction(spammer.name, i, Call{"putMeasurement", {}}, crypto::Signature{}));
  auto veto = member.tx("vetoFirmware", {to_bytes("1")});
  pool.add(veto);
  REQUIRE(pool.size() == 10'001);

  auto picked = pool.select(512);
  REQUIRE(picked.size() == 512);
  CHECK(picked.front().id() == veto.id());
  // Oracle: the rest is the spam in arrival order.
  for (std::size_t i = 1; i < picked.size(); ++i) CHECK(picked[i].nonce() == i - 1);
}

TEST_CASE("admission errors")
{
  Fixture fx(3, std::vector<Behavior>(4, Behavior::honest));
  auto &c = fx.clients[0];
  auto &node = fx.chain->node(0);

  auto ok = c.tx();
  CHECK(node.admit(ok) == SubmitStatus::accepted);
  CHECK(node.mempool().contains(ok.id()));
  CHECK(node.admit(ok) == SubmitStatus::duplicate);

  auto forged = Transaction(c.name, 99, Call{"putMeasurement", {}}, fx.clients[1].tx().sender_signature());
  CHECK(node.admit(forged) == SubmitStatus::bad_signature);

  Rng rng(33);
  Client stranger{"stranger", crypto::keygen(128, rng)};
  CHECK(node.admit(stranger.tx()) == SubmitStatus::unknown_sender);
}

TEST_CASE("high-priority rate limit per sender per n-block window")
{
  Fixture fx(4, std::vector<Behavior>(4, Behavior::honest));
  auto &c = fx.clients[0];
  auto &node = fx.chain->node(0);
  for (int i = 0; i < 4; ++i) CHECK(node.admit(c.tx("vetoFirmware")) == SubmitStatus::accepted);
  CHECK(node.admit(c.tx("vetoFirmware")) == SubmitStatus::rate_limited);
  CHECK(node.admit(fx.clients[1].tx("vetoFirmware")) == SubmitStatus::accepted);
  CHECK(node.admit(c.tx()) == SubmitStatus::accepted);

  fx.chain->start();
  fx.run_blocks(4);
  CHECK(fx.chain->node(0).tip_height() >= 4);
  CHECK(node.admit(c.tx("vetoFirmware")) == SubmitStatus::accepted);
}

TEST_CASE("16 honest nodes: every proposal commits, leaders rotate, ledgers agree")
{
  Fixture fx(5, std::vector<Behavior>(16, Behavior::honest));
  fx.chain->start();
  for (int i = 0; i < 20; ++i) fx.chain->submit(i % 16, fx.clients[i % 4].tx());
  fx.run_blocks(32);
  REQUIRE(fx.chain->honest_min_height() >= 32);
  const auto &ref = fx.chain->node(0).ledger();
  for (std::uint64_t h = 1; h <= 32; ++h)
  {
    CHECK(ref[h].round == 0);
    CHECK(ref[h].proposer == h % 16);
    CHECK(ref[h].commit_certificate.size() >= 11);
  }
  CHECK_FALSE(divergence(*fx.chain));
  CHECK_FALSE(fx.chain->safety_violation());
  for (std::size_t i = 0; i < 16; ++i)
    CHECK_FALSE(validate_ledger(fx.chain->node(i).ledger(), "test", fx.chain->node_keys()));
  std::size_t committed = 0;
  for (std::uint64_t h = 1; h <= 32; ++h) committed += ref[h].transactions.size();
  CHECK(committed == 20);
}

TEST_CASE("honest leader with 5 pending transactions and capacity 100 includes all 5")
{
  ChainConfig cfg;
  cfg.block_capacity = 100;
  Fixture fx(6, std::vector<Behavior>(4, Behavior::honest), cfg);
  for (int i = 0; i < 5; ++i) fx.chain->node(1).admit(fx.clients[0].tx());
  auto b = fx.chain->node(1).build_proposal(0, 0);
  CHECK(b.transactions.size() == 5);
  CHECK(fx.chain->node(1).validate_block(b));
}

TEST_CASE("empty-spam leader proposes empty blocks immediately")
{
  Fixture fx(7, mix(4, {{1, Behavior::empty_spam}}));
  for (int i = 0; i < 3; ++i) fx.chain->submit(0, fx.clients[0].tx());
  auto b = fx.chain->node(1).build_proposal(0, 0);
  CHECK(b.transactions.empty());

  fx.chain->start();
  fx.run_blocks(8);
  const auto &ledger = fx.chain->node(0).ledger();
  for (std::uint64_t h = 1; h <= 8; ++h)
  {
    if (ledger[h].proposer == 1)
    {
      CHECK(ledger[h].transactions.empty());
      // Commit lands within a few network hops of the previous block.
      CHECK(ledger[h].timestamp - ledger[h - 1].timestamp < 100);
    }
  }
}

TEST_CASE("censoring leaders delay a veto by at most n-1 heights")
{
  for (std::uint64_t seed = 10; seed < 15; ++seed)
  {
    ChainConfig cfg;
    cfg.censored = [](const Transaction &tx) { return tx.call().function == fn::veto_firmware; };
    Fixture fx(seed, spread(16, 5, Behavior::censor), cfg);
    fx.chain->start();
    fx.run_blocks(3);
    auto veto = fx.clients[0].tx("vetoFirmware");
    const auto submitted_at = fx.chain->node(5).tip_height();
    REQUIRE(fx.chain->submit(5, veto) == SubmitStatus::accepted);
    fx.run_blocks(submitted_at + 16);
    auto r = fx.chain->node(fx.chain->reference_node()).receipt(veto.id());
    REQUIRE(r);
    CHECK(r->height <= submitted_at + 16);
    CHECK(fx.chain->node(r->height % 16).honest());
    CHECK_FALSE(divergence(*fx.chain));
  }
}

TEST_CASE("5 vote-withholders of 16: commits continue with 11 honest votes")
{
  Fixture fx(20, spread(16, 5, Behavior::vote_withhold));
  fx.chain->start();
  fx.run_blocks(20);
  CHECK(fx.chain->honest_min_height() >= 20);
  const auto &ledger = fx.chain->node(fx.chain->reference_node()).ledger();
  for (std::uint64_t h = 1; h <= 20; ++h)
    for (const auto &v : ledger[h].commit_certificate) CHECK(fx.chain->node(v.voter).honest());
  CHECK_FALSE(divergence(*fx.chain));
}

TEST_CASE("6 vote-withholders of 16: liveness lost, safety kept")
{
  Fixture fx(21, spread(16, 6, Behavior::vote_withhold));
  fx.chain->start();
  fx.net.run_until(5 * simnet::kMinute);
  CHECK(fx.chain->honest_max_height() == 0);
  CHECK_FALSE(divergence(*fx.chain));
  CHECK_FALSE(fx.chain->safety_violation());
}

TEST_CASE("equivocating byzantine nodes cannot split honest ledgers")
{
  for (std::uint64_t seed = 30; seed < 34; ++seed)
  {
    ChainConfig cfg;
    cfg.latency = {3, 12};
    Fixture fx(seed, spread(16, 5, Behavior::equivocate), cfg);
    fx.chain->start();
    for (int i = 0; i < 40; ++i) fx.chain->submit(i % 16, fx.clients[i % 4].tx());
    fx.run_blocks(24);
    CHECK(fx.chain->honest_min_height() >= 24);
    CHECK_FALSE(divergence(*fx.chain));
    CHECK_FALSE(fx.chain->safety_violation());
  }
}

TEST_CASE("mutating a committed block fails validation at that height")
{
  Fixture fx(40, std::vector<Behavior>(4, Behavior::honest));
  fx.chain->start();
  for (int i = 0; i < 12; ++i) fx.chain->submit(0, fx.clients[i % 4].tx());
  fx.run_blocks(8);
  const auto ledger = fx.chain->node(0).ledger();
  REQUIRE_FALSE(validate_ledger(ledger, "test", fx.chain->node_keys()));
  for (std::uint64_t h = 1; h < ledger.size(); ++h)
  {
    auto a = ledger;
    a[h].timestamp += 1;
    CHECK(validate_ledger(a, "test", fx.chain->node_keys()) == h);
    auto b = ledger;
    b[h].commit_certificate.pop_back();
    b[h].commit_certificate.pop_back();
    CHECK(validate_ledger(b, "test", fx.chain->node_keys()) == h);
    if (!ledger[h].transactions.empty())
    {
      auto c = ledger;
      c[h].transactions.pop_back();
      CHECK(validate_ledger(c, "test", fx.chain->node_keys()) == h);
    }
  }
  CHECK_FALSE(validate_ledger(ledger, "other-chain", fx.chain->node_keys()) == std::nullopt);
}

TEST_CASE("same seed gives a byte-identical transcript")
{
  auto run = [](std::uint64_t seed) {
    ChainConfig cfg;
    cfg.latency = {5, 20};
    Fixture fx(seed, spread(7, 2, Behavior::equivocate), cfg);
    fx.chain->start();
    for (int i = 0; i < 30; ++i) fx.chain->submit(i % 7, fx.clients[i % 4].tx());
    fx.run_blocks(15);
    return transcript(fx.chain->node(fx.chain->reference_node()).ledger());
  };
  auto a = run(50);
  CHECK(a == run(50));
  CHECK(std::count(a.begin(), a.end(), '\n') >= 16);
}

TEST_CASE("cooldown_elapsed boundary")
{
  CHECK_FALSE(cooldown_elapsed(14, 10, 5));
  CHECK(cooldown_elapsed(15, 10, 5));
  std::vector<Block> ledger(16);
  CHECK(cooldown_elapsed(ledger, 10, 5));
  ledger.pop_back();
  CHECK_FALSE(cooldown_elapsed(ledger, 10, 5));
}

TEST_CASE("partition without quorum stalls, heals, and catches up")
{
  Fixture fx(60, std::vector<Behavior>(8, Behavior::honest));
  fx.chain->start();
  fx.run_blocks(3);
  const auto h0 = fx.chain->honest_max_height();
  simnet::LinkPolicy cut;
  cut.drop_mode = simnet::DropMode::partition;
  cut.from = fx.net.now();
  cut.until = fx.net.now() + 2 * simnet::kMinute;
  for (std::size_t i = 0; i < 4; ++i) cut.actors.insert(fx.chain->node(i).actor());
  for (std::size_t i = 4; i < 8; ++i) cut.peers.insert(fx.chain->node(i).actor());
  fx.net.add_policy(cut);
  fx.net.run_until(cut.until - kSecond);
  CHECK(fx.chain->honest_max_height() <= h0 + 1);
  fx.run_blocks(h0 + 10, 10 * simnet::kMinute);
  CHECK(fx.chain->honest_min_height() >= h0 + 10);
  CHECK_FALSE(divergence(*fx.chain));
}

TEST_CASE("isolated minority catches up through sync")
{
  Fixture fx(61, std::vector<Behavior>(4, Behavior::honest));
  fx.chain->start();
  simnet::LinkPolicy cut;
  cut.drop_mode = simnet::DropMode::partition;
  cut.until = simnet::kMinute;
  cut.actors = {fx.chain->node(3).actor()};
  for (std::size_t i = 0; i < 3; ++i) cut.peers.insert(fx.chain->node(i).actor());
  fx.net.add_policy(cut);
  fx.net.run_until(simnet::kMinute);
  CHECK(fx.chain->node(3).tip_height() == 0);
  CHECK(fx.chain->node(0).tip_height() >= 3);
  fx.run_blocks(fx.chain->honest_max_height() + 2, 5 * simnet::kMinute);
  CHECK(fx.chain->node(3).tip_height() >= fx.chain->node(0).tip_height() - 1);
  CHECK_FALSE(divergence(*fx.chain));
}

TEST_CASE("cooldown under empty-spam approaches (n-f)/n of tau")
{
  ChainConfig cfg;
  cfg.latency = {1, 0};
  const SimTime delta = cfg.block_interval;
  Fixture fx(70, spread(16, 5, Behavior::empty_spam), cfg);
  fx.chain->start();
  const SimTime tau = 10 * simnet::kMinute;
  const std::uint64_t T = static_cast<std::uint64_t>(std::ceil(double(tau) / delta));
  fx.run_blocks(T + 1);
  const auto &times = fx.chain->commit_times();
  const SimTime measured = times.at(T + 1) - times.at(1);
  const double analytic = 11.0 / 16.0 * tau;
  CHECK(measured >= analytic - delta);
  CHECK(std::abs(measured - analytic) <= delta);
}
