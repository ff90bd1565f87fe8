#pragma once

// BFT replicated ledger: round-robin leaders, prioritized mempool, and a
// two-phase (prepare / commit) 2f+1 quorum commit rule.
//
// Height h, view v is led by node (h + v) mod n. A leader that does not get
// its block committed within the view timeout is skipped. Nodes lock on a
// block once they see 2f+1 prepares for it and only prepare a different
// block at a later view if the proposal carries 2f+1 prepares from a view
// newer than their lock; this keeps commits unique per height across
// leader skips.

#include "flbi/bytes.hpp"
#include "flbi/crypto.hpp"
#include "flbi/simnet.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace flbi::consensus {

using crypto::Digest;
using crypto::PublicKey;
using crypto::Signature;
using simnet::SimTime;

struct DigestHash
{
  std::size_t operator()(const Digest &d) const noexcept
  {
    std::size_t h = 0;
    for (int i = 0; i < 8; ++i) h = h << 8 | d.bytes[i];
    return h;
  }
};

// Largest f with n >= 3f + 1.
inline std::uint32_t fault_bound(std::uint32_t n) { return n == 0 ? 0 : (n - 1) / 3; }
inline std::uint32_t quorum(std::uint32_t n) { return 2 * fault_bound(n) + 1; }

// ---------------------------------------------------------------------------
// Transactions

enum class Priority : std::uint8_t
{
  normal = 0,
  high = 1,
};

namespace fn {
inline constexpr std::string_view put_firmware = "putFirmware";
inline constexpr std::string_view veto_firmware = "vetoFirmware";
inline constexpr std::string_view check_firmware = "checkFirmware";
inline constexpr std::string_view update_admin_key = "updateAdminKey";
inline constexpr std::string_view propose_pub_key = "proposePubKey";
inline constexpr std::string_view vote_pub_key_proposal = "votePubKeyProposal";
inline constexpr std::string_view put_measurement = "putMeasurement";
}  // namespace fn

struct Call
{
  std::string function;
  std::vector<Bytes> args;

  bool operator==(const Call &) const = default;
};

// Vetoes and key revocations (removal proposals) jump the queue.
Priority classify(const Call &call);

/// Immutable signed contract call. The payload encoding is
///   "FLTX" | u8 1 | str sender | u64 nonce | str function | u32 argc | blob*
/// and the id is SHA-256 of it. Wire form is payload | signature (65).
class Transaction
{
public:
  Transaction(std::string sender, std::uint64_t nonce, Call call, Signature sender_signature);

  static Transaction create(std::string sender, std::uint64_t nonce, Call call, const crypto::SecretKey &key);
  static Bytes payload_for(const std::string &sender, std::uint64_t nonce, const Call &call);
  static std::optional<Transaction> decode(ByteView data);

  const std::string &sender() const { return sender_; }
  std::uint64_t nonce() const { return nonce_; }
  const Call &call() const { return call_; }
  const Signature &sender_signature() const { return signature_; }
  Priority priority() const { return priority_; }
  const Digest &id() const { return id_; }
  const Bytes &payload() const { return payload_; }
  Bytes encode() const;
  void write(ByteWriter &w) const;

private:
  std::string sender_;
  std::uint64_t nonce_;
  Call call_;
  Signature signature_;
  Bytes payload_;
  Digest id_;
  Priority priority_;
};

// ---------------------------------------------------------------------------
// Contract hook

struct BlockContext
{
  std::string chain_id;
  std::uint64_t height{0};
  SimTime timestamp{0};
};

struct Receipt
{
  std::uint64_t height{0};
  bool ok{false};
  std::string error;
};

class StateMachine
{
public:
  virtual ~StateMachine() = default;

  // Registered verification key of a transaction sender, if any.
  virtual std::optional<PublicKey> sender_key(const std::string &sender) const = 0;
  // Applies one committed transaction. Must be deterministic and must not
  // mutate state when it reports failure.
  virtual Receipt apply(const Transaction &tx, const BlockContext &ctx) = 0;
  virtual Digest state_digest() const = 0;
  virtual std::unique_ptr<StateMachine> clone() const = 0;
};

// ---------------------------------------------------------------------------
// Blocks and votes

enum class Phase : std::uint8_t
{
  prepare = 1,
  commit = 2,
};

struct Vote
{
  Phase phase{Phase::prepare};
  std::uint64_t height{0};
  std::uint32_t view{0};
  Digest block;
  std::uint32_t voter{0};
  Signature signature;

  static Bytes signing_message(const std::string &chain_id, Phase phase, std::uint64_t height, std::uint32_t view,
                               const Digest &block, std::uint32_t voter);
  void write(ByteWriter &w) const;
  static Vote read(ByteReader &r);
};

struct Block
{
  std::uint64_t height{0};
  Digest previous_hash;
  std::uint32_t proposer{0};
  std::uint32_t round{0};
  SimTime timestamp{0};
  std::vector<Transaction> transactions;
  std::vector<Vote> commit_certificate;  // not covered by the digest

  Digest tx_root() const;
  Bytes header_bytes() const;
  Digest digest() const;

  void write(ByteWriter &w) const;
  static Block read(ByteReader &r);
};

// Height 0, all-zero previous hash, no transactions.
Block make_genesis();

// ---------------------------------------------------------------------------
// Mempool

enum class SubmitStatus
{
  accepted,
  bad_signature,
  unknown_sender,
  rate_limited,
  duplicate,
};

const char *to_string(SubmitStatus status);

/// Pending transactions in two FIFO classes; high priority always drains
/// first. Arrival order breaks ties, then transaction id.
class Mempool
{
public:
  bool contains(const Digest &id) const { return index_.count(id) > 0; }
  void add(const Transaction &tx);
  void remove(const Digest &id);
  std::size_t size() const { return index_.size(); }
  std::size_t high_size() const { return high_.size(); }

  std::vector<Transaction> select(std::size_t capacity,
                                  const std::function<bool(const Transaction &)> &exclude = {}) const;

private:
  struct Key
  {
    std::uint64_t arrival;
    Digest id;
    auto operator<=>(const Key &) const = default;
  };
  std::map<Key, Transaction> high_;
  std::map<Key, Transaction> normal_;
  std::unordered_map<Digest, std::pair<Priority, Key>, DigestHash> index_;
  std::uint64_t next_arrival_{0};
};

// ---------------------------------------------------------------------------
// Nodes and chains

enum class Behavior
{
  honest,
  empty_spam,     // proposes empty blocks with no delay
  censor,         // omits censored transactions and will not vote for blocks carrying them
  vote_withhold,  // never votes
  equivocate,     // proposes conflicting blocks; votes for everything it sees
};

const char *to_string(Behavior behavior);
std::optional<Behavior> behavior_from_string(std::string_view s);

struct NodeSpec
{
  std::string name;
  crypto::KeyPair keys;
  Behavior behavior{Behavior::honest};
};

struct ChainConfig
{
  std::string chain_id{"chain"};
  SimTime block_interval{5 * simnet::kSecond};
  SimTime view_timeout{0};  // 0 -> 2 * block_interval + 1 s
  std::size_t block_capacity{512};
  std::size_t high_priority_limit{4};  // per sender per n-block window
  simnet::LatencyModel latency{5, 2};
  std::function<bool(const Transaction &)> censored;  // used by censor nodes
};

class Chain;

class Node
{
public:
  Node(Chain &chain, std::uint32_t index, NodeSpec spec, std::unique_ptr<StateMachine> state);

  std::uint32_t index() const { return index_; }
  const std::string &name() const { return spec_.name; }
  Behavior behavior() const { return spec_.behavior; }
  bool honest() const { return spec_.behavior == Behavior::honest; }
  const PublicKey &public_key() const { return spec_.keys.public_key; }
  simnet::ActorId actor() const { return actor_; }

  const std::vector<Block> &ledger() const { return ledger_; }
  std::vector<Block> &mutable_ledger() { return ledger_; }
  std::uint64_t tip_height() const { return ledger_.size() - 1; }
  const Mempool &mempool() const { return mempool_; }
  const StateMachine &state() const { return *state_; }
  StateMachine &mutable_state() { return *state_; }
  std::optional<Receipt> receipt(const Digest &tx_id) const;
  bool committed(const Digest &tx_id) const { return receipts_.count(tx_id) > 0; }
  std::uint32_t view() const { return view_; }

  // Admission checks and mempool insert. Does not gossip.
  SubmitStatus admit(const Transaction &tx);

  // What this node would propose as leader for the next height.
  Block build_proposal(SimTime now, std::uint32_t round) const;
  // Honest validity check of a proposed block against the local tip.
  bool validate_block(const Block &block, std::string *why = nullptr) const;

private:
  friend class Chain;

  struct PolkaRecord
  {
    std::uint32_t view{0};
    Digest digest;
    std::vector<Vote> votes;
  };
  struct TallyKey
  {
    std::uint32_t view;
    Phase phase;
    Digest digest;
    auto operator<=>(const TallyKey &) const = default;
  };

  void on_message(const simnet::Envelope &env);
  void defer(const simnet::Envelope &env);
  void replay_deferred();
  void on_transaction(const Transaction &tx);
  void on_proposal(const simnet::Envelope &env);
  void on_vote(const simnet::Envelope &env);
  void on_sync_request(std::uint64_t from_height, simnet::ActorId from);
  void on_sync_response(ByteReader &r);

  void enter_height(SimTime now);
  void start_view(std::uint32_t view, SimTime now, bool first);
  void propose(std::uint64_t height, std::uint32_t view);
  void consider_proposal(const Block &block, std::uint32_t view, const std::optional<PolkaRecord> &justification);
  void cast(Phase phase, std::uint32_t view, const Digest &digest);
  void check_quorums(std::uint32_t view, const Digest &digest);
  void commit(const Block &block, std::vector<Vote> certificate);
  bool valid_certificate(const Block &block, const std::vector<Vote> &votes, Phase phase) const;
  bool signed_by_voter(const Vote &v) const;
  void request_sync(simnet::ActorId peer);
  bool tx_valid(const Transaction &tx) const;
  std::uint64_t working_height() const { return ledger_.size(); }
  bool censors(const Block &block) const;

  Chain &chain_;
  std::uint32_t index_;
  NodeSpec spec_;
  std::unique_ptr<StateMachine> state_;
  simnet::ActorId actor_{0};

  std::vector<Block> ledger_;
  Mempool mempool_;
  std::unordered_map<Digest, Receipt, DigestHash> receipts_;
  std::unordered_map<std::string, std::deque<std::uint64_t>> high_priority_log_;

  // Per-height round state.
  std::uint32_t view_{0};
  std::map<Digest, Block> known_blocks_;
  std::set<std::uint32_t> prepared_views_;
  std::set<std::uint32_t> committed_views_;
  std::map<TallyKey, std::map<std::uint32_t, Vote>> tallies_;
  std::optional<PolkaRecord> lock_;
  std::optional<PolkaRecord> valid_;
  std::map<std::uint32_t, std::set<std::uint32_t>> view_voters_;
  std::vector<simnet::Envelope> deferred_;  // next-height or future-view messages
  SimTime last_sync_request_time_{-1'000'000};
};

struct CommitEvent
{
  std::uint32_t node;
  const Block *block;
  SimTime time;
};

/// One replicated ledger: n nodes wired into a shared simulated network.
class Chain
{
public:
  Chain(simnet::Network &network, ChainConfig config, std::vector<NodeSpec> nodes, const StateMachine &genesis_state);
  Chain(const Chain &) = delete;
  Chain &operator=(const Chain &) = delete;

  const ChainConfig &config() const { return config_; }
  const std::string &id() const { return config_.chain_id; }
  std::uint32_t size() const { return static_cast<std::uint32_t>(nodes_.size()); }
  std::uint32_t f() const { return fault_bound(size()); }
  std::uint32_t quorum() const { return consensus::quorum(size()); }
  std::uint32_t leader(std::uint64_t height, std::uint32_t view) const
  {
    return static_cast<std::uint32_t>((height + view) % size());
  }

  Node &node(std::size_t i) { return *nodes_.at(i); }
  const Node &node(std::size_t i) const { return *nodes_.at(i); }
  std::optional<std::size_t> find_node(std::string_view name) const;
  std::vector<std::size_t> honest_nodes() const;
  // Lowest-index honest node; its ledger is the canonical transcript.
  std::size_t reference_node() const;
  const std::vector<PublicKey> &node_keys() const { return keys_; }

  // Starts round-robin block production at the network's current time.
  void start();
  // Admit at `node` and gossip to every peer.
  SubmitStatus submit(std::size_t node, const Transaction &tx);

  void on_commit(std::function<void(const CommitEvent &)> observer) { observers_.push_back(std::move(observer)); }

  simnet::Network &network() { return network_; }
  crypto::VerificationCache &verifier() { return verifier_; }

  // First commit time of each height among honest nodes.
  const std::map<std::uint64_t, SimTime> &commit_times() const { return commit_times_; }
  // Highest height every honest node has committed.
  std::uint64_t honest_min_height() const;
  std::uint64_t honest_max_height() const;

  // Same-height divergence among honest ledgers: first height found, if any.
  std::optional<std::uint64_t> safety_violation() const;

private:
  friend class Node;

  void broadcast(const Node &from, simnet::MessageKind kind, const std::shared_ptr<const Bytes> &payload);
  void notify_commit(const Node &node, const Block &block);

  simnet::Network &network_;
  ChainConfig config_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<PublicKey> keys_;
  std::unordered_map<simnet::ActorId, std::uint32_t> actor_to_index_;
  std::vector<std::function<void(const CommitEvent &)>> observers_;
  std::map<std::uint64_t, SimTime> commit_times_;
  crypto::VerificationCache verifier_;
};

// True once the committed height has reached proposal_height + T.
bool cooldown_elapsed(const std::vector<Block> &ledger, std::uint64_t proposal_height, std::uint64_t cooldown_blocks);
bool cooldown_elapsed(std::uint64_t tip_height, std::uint64_t proposal_height, std::uint64_t cooldown_blocks);

/// Hash-link and certificate check of a ledger copy. Returns the first
/// height that fails, or nullopt when the copy is intact.
std::optional<std::uint64_t> validate_ledger(const std::vector<Block> &ledger, const std::string &chain_id,
                                             const std::vector<PublicKey> &node_keys);

/// One line per block: height, digest, proposer, tx count, comma-joined ids.
std::string transcript(const std::vector<Block> &ledger);

}  // namespace flbi::consensus
