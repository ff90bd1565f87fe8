#include "flbi/consensus.hpp"

#include <algorithm>
#include <sstream>

namespace flbi::consensus {

namespace {

constexpr std::size_t kMaxSyncBlocks = 64;
constexpr std::size_t kMaxDeferred = 1 << 14;
constexpr SimTime kSyncBackoff = simnet::kSecond;

void write_digest(ByteWriter &w, const Digest &d) { w.raw(d.bytes); }

Digest read_digest(ByteReader &r)
{
  Digest d;
  auto b = r.raw(32);
  std::copy(b.begin(), b.end(), d.bytes.begin());
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transactions

Priority classify(const Call &call)
{
  if (call.function == fn::veto_firmware) return Priority::high;
  if (call.function == fn::propose_pub_key && !call.args.empty())
  {
    std::string_view kind(reinterpret_cast<const char *>(call.args[0].data()), call.args[0].size());
    if (kind.starts_with("remove")) return Priority::high;
  }
  return Priority::normal;
}

Bytes Transaction::payload_for(const std::string &sender, std::uint64_t nonce, const Call &call)
{
  ByteWriter w;
  w.raw(to_bytes("FLTX")).u8(1).str(sender).u64(nonce).str(call.function);
  w.u32(static_cast<std::uint32_t>(call.args.size()));
  for (const auto &a : call.args) w.blob(a);
  return std::move(w).take();
}

Transaction::Transaction(std::string sender, std::uint64_t nonce, Call call, Signature sender_signature)
    : sender_(std::move(sender)), nonce_(nonce), call_(std::move(call)), signature_(sender_signature)
{
  payload_ = payload_for(sender_, nonce_, call_);
  id_ = crypto::hash(payload_);
  priority_ = classify(call_);
}

Transaction Transaction::create(std::string sender, std::uint64_t nonce, Call call, const crypto::SecretKey &key)
{
  auto sig = crypto::sign(key, payload_for(sender, nonce, call));
  return Transaction(std::move(sender), nonce, std::move(call), sig);
}

Bytes Transaction::encode() const
{
  Bytes out = payload_;
  auto sig = signature_.encode();
  out.insert(out.end(), sig.begin(), sig.end());
  return out;
}

void Transaction::write(ByteWriter &w) const { w.blob(encode()); }

std::optional<Transaction> Transaction::decode(ByteView data)
{
  try
  {
    ByteReader r(data);
    auto magic = r.raw(4);
    if (!std::equal(magic.begin(), magic.end(), "FLTX") || r.u8() != 1) return std::nullopt;
    std::string sender = r.str(256);
    std::uint64_t nonce = r.u64();
    Call call;
    call.function = r.str(64);
    std::uint32_t argc = r.u32();
    if (argc > 64) return std::nullopt;
    for (std::uint32_t i = 0; i < argc; ++i) {
      auto a = r.blob(1 << 20);
      call.args.emplace_back(a.begin(), a.end());
    }
    auto sig = Signature::decode(r.raw(crypto::kSignatureSize));
    r.expect_done();
    if (!sig) return std::nullopt;
    return Transaction(std::move(sender), nonce, std::move(call), *sig);
  }
  catch (const DecodeError &)
  {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Blocks and votes

Bytes Vote::signing_message(const std::string &chain_id, Phase phase, std::uint64_t height, std::uint32_t view,
                            const Digest &block, std::uint32_t voter)
{
  ByteWriter w;
  w.raw(to_bytes("FLVOTE")).str(chain_id).u8(static_cast<std::uint8_t>(phase)).u64(height).u32(view);
  write_digest(w, block);
  w.u32(voter);
  return std::move(w).take();
}

void Vote::write(ByteWriter &w) const
{
  w.u8(static_cast<std::uint8_t>(phase)).u64(height).u32(view);
  write_digest(w, block);
  w.u32(voter);
  w.raw(signature.bytes);
}

Vote Vote::read(ByteReader &r)
{
  Vote v;
  auto phase = r.u8();
  if (phase != 1 && phase != 2) throw DecodeError("bad vote phase");
  v.phase = static_cast<Phase>(phase);
  v.height = r.u64();
  v.view = r.u32();
  v.block = read_digest(r);
  v.voter = r.u32();
  auto sig = r.raw(64);
  std::copy(sig.begin(), sig.end(), v.signature.bytes.begin());
  return v;
}

Digest Block::tx_root() const
{
  ByteWriter w;
  for (const auto &tx : transactions) write_digest(w, tx.id());
  return crypto::hash(w.bytes());
}

Bytes Block::header_bytes() const
{
  ByteWriter w;
  w.raw(to_bytes("FLBK")).u64(height);
  write_digest(w, previous_hash);
  w.u32(proposer).u32(round).i64(timestamp);
  write_digest(w, tx_root());
  w.u32(static_cast<std::uint32_t>(transactions.size()));
  return std::move(w).take();
}

Digest Block::digest() const { return crypto::hash(header_bytes()); }

void Block::write(ByteWriter &w) const
{
  w.u64(height);
  write_digest(w, previous_hash);
  w.u32(proposer).u32(round).i64(timestamp);
  w.u32(static_cast<std::uint32_t>(transactions.size()));
  for (const auto &tx : transactions) tx.write(w);
  w.u32(static_cast<std::uint32_t>(commit_certificate.size()));
  for (const auto &v : commit_certificate) v.write(w);
}

Block Block::read(ByteReader &r)
{
  Block b;
  b.height = r.u64();
  b.previous_hash = read_digest(r);
  b.proposer = r.u32();
  b.round = r.u32();
  b.timestamp = r.i64();
  auto ntx = r.u32();
  if (ntx > (1u << 16)) throw DecodeError("too many transactions");
  b.transactions.reserve(ntx);
  for (std::uint32_t i = 0; i < ntx; ++i)
  {
    auto tx = Transaction::decode(r.blob(1 << 22));
    if (!tx) throw DecodeError("bad transaction");
    b.transactions.push_back(std::move(*tx));
  }
  auto ncert = r.u32();
  if (ncert > 1024) throw DecodeError("certificate too large");
  for (std::uint32_t i = 0; i < ncert; ++i) b.commit_certificate.push_back(Vote::read(r));
  return b;
}

Block make_genesis() { return Block{}; }

// ---------------------------------------------------------------------------
// Mempool

const char *to_string(SubmitStatus status)
{
  switch (status)
  {
  case SubmitStatus::accepted: return "accepted";
  case SubmitStatus::bad_signature: return "bad-signature";
  case SubmitStatus::unknown_sender: return "unknown-sender";
  case SubmitStatus::rate_limited: return "rate-limit-exceeded";
  case SubmitStatus::duplicate: return "duplicate-id";
  }
  return "unknown";
}

void Mempool::add(const Transaction &tx)
{
  if (contains(tx.id())) return;
  Key key{next_arrival_++, tx.id()};
  (tx.priority() == Priority::high ? high_ : normal_).emplace(key, tx);
  index_.emplace(tx.id(), std::pair{tx.priority(), key});
}

void Mempool::remove(const Digest &id)
{
  auto it = index_.find(id);
  if (it == index_.end()) return;
  (it->second.first == Priority::high ? high_ : normal_).erase(it->second.second);
  index_.erase(it);
}

std::vector<Transaction> Mempool::select(std::size_t capacity,
                                         const std::function<bool(const Transaction &)> &exclude) const
{
  std::vector<Transaction> out;
  for (const auto *queue : {&high_, &normal_})
    for (const auto &[key, tx] : *queue)
    {
      if (out.size() >= capacity) return out;
      if (exclude && exclude(tx)) continue;
      out.push_back(tx);
    }
  return out;
}

// ---------------------------------------------------------------------------

const char *to_string(Behavior behavior)
{
  switch (behavior)
  {
  case Behavior::honest: return "honest";
  case Behavior::empty_spam: return "empty-spam";
  case Behavior::censor: return "censor";
  case Behavior::vote_withhold: return "vote-withhold";
  case Behavior::equivocate: return "equivocate";
  }
  return "unknown";
}

std::optional<Behavior> behavior_from_string(std::string_view s)
{
  for (auto b : {Behavior::honest, Behavior::empty_spam, Behavior::censor, Behavior::vote_withhold,
                 Behavior::equivocate})
    if (s == to_string(b)) return b;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Node

Node::Node(Chain &chain, std::uint32_t index, NodeSpec spec, std::unique_ptr<StateMachine> state)
    : chain_(chain), index_(index), spec_(std::move(spec)), state_(std::move(state))
{
  ledger_.push_back(make_genesis());
}

std::optional<Receipt> Node::receipt(const Digest &tx_id) const
{
  auto it = receipts_.find(tx_id);
  if (it == receipts_.end()) return std::nullopt;
  return it->second;
}

bool Node::tx_valid(const Transaction &tx) const
{
  auto key = state_->sender_key(tx.sender());
  return key && chain_.verifier().verify(*key, tx.payload(), tx.sender_signature());
}

SubmitStatus Node::admit(const Transaction &tx)
{
  if (committed(tx.id()) || mempool_.contains(tx.id())) return SubmitStatus::duplicate;
  auto key = state_->sender_key(tx.sender());
  if (!key) return SubmitStatus::unknown_sender;
  if (!chain_.verifier().verify(*key, tx.payload(), tx.sender_signature())) return SubmitStatus::bad_signature;

  if (tx.priority() == Priority::high)
  {
    auto &log = high_priority_log_[tx.sender()];
    const std::uint64_t tip = tip_height();
    const std::uint64_t window = chain_.size();
    while (!log.empty() && log.front() + window <= tip) log.pop_front();
    if (log.size() >= chain_.config().high_priority_limit) return SubmitStatus::rate_limited;
    log.push_back(tip);
  }
  mempool_.add(tx);
  return SubmitStatus::accepted;
}

Block Node::build_proposal(SimTime now, std::uint32_t round) const
{
  const Block &tip = ledger_.back();
  Block b;
  b.height = working_height();
  b.previous_hash = tip.digest();
  b.proposer = index_;
  b.round = round;
  b.timestamp = std::max(now, tip.timestamp);
  if (spec_.behavior == Behavior::empty_spam) return b;

  const bool censoring = spec_.behavior == Behavior::censor && chain_.config().censored;
  b.transactions = mempool_.select(chain_.config().block_capacity, [&](const Transaction &tx) {
    return (censoring && chain_.config().censored(tx)) || committed(tx.id()) || !tx_valid(tx);
  });
  return b;
}

bool Node::validate_block(const Block &block, std::string *why) const
{
  auto fail = [&](const char *reason) {
    if (why) *why = reason;
    return false;
  };
  const Block &tip = ledger_.back();
  if (block.height != working_height()) return fail("wrong height");
  if (block.previous_hash != tip.digest()) return fail("previous hash mismatch");
  if (block.proposer != chain_.leader(block.height, block.round)) return fail("proposer is not the leader");
  if (block.timestamp < tip.timestamp) return fail("timestamp before tip");
  if (block.transactions.size() > chain_.config().block_capacity) return fail("over capacity");
  std::unordered_set<Digest, DigestHash> seen;
  for (const auto &tx : block.transactions)
  {
    if (!seen.insert(tx.id()).second) return fail("duplicate transaction");
    if (committed(tx.id())) return fail("transaction already committed");
    if (!tx_valid(tx)) return fail("invalid transaction signature");
  }
  return true;
}

bool Node::signed_by_voter(const Vote &v) const
{
  if (v.voter >= chain_.size()) return false;
  auto msg = Vote::signing_message(chain_.id(), v.phase, v.height, v.view, v.block, v.voter);
  return chain_.verifier().verify(chain_.node_keys()[v.voter], msg, v.signature);
}

bool Node::valid_certificate(const Block &block, const std::vector<Vote> &votes, Phase phase) const
{
  if (votes.empty()) return false;
  const auto digest = block.digest();
  const auto view = votes.front().view;
  std::set<std::uint32_t> voters;
  for (const auto &v : votes)
  {
    if (v.phase != phase || v.height != block.height || v.view != view || v.block != digest) return false;
    if (!signed_by_voter(v)) return false;
    voters.insert(v.voter);
  }
  return voters.size() >= chain_.quorum();
}

bool Node::censors(const Block &block) const
{
  const auto &pred = chain_.config().censored;
  if (!pred) return false;
  return std::any_of(block.transactions.begin(), block.transactions.end(), pred);
}

void Node::defer(const simnet::Envelope &env)
{
  if (deferred_.size() < kMaxDeferred) deferred_.push_back(env);
}

void Node::replay_deferred()
{
  auto pending = std::move(deferred_);
  deferred_.clear();
  for (const auto &env : pending) on_message(env);
}

void Node::request_sync(simnet::ActorId peer)
{
  auto &net = chain_.network();
  if (net.now() - last_sync_request_time_ < kSyncBackoff) return;
  last_sync_request_time_ = net.now();
  ByteWriter w;
  w.u64(working_height());
  net.send(actor_, peer, simnet::MessageKind::sync_request, std::move(w).take());
}

void Node::on_message(const simnet::Envelope &env)
{
  try
  {
    switch (env.kind)
    {
    case simnet::MessageKind::transaction:
      if (auto tx = Transaction::decode(*env.payload)) on_transaction(*tx);
      break;
    case simnet::MessageKind::proposal: on_proposal(env); break;
    case simnet::MessageKind::vote: on_vote(env); break;
    case simnet::MessageKind::sync_request:
    {
      ByteReader r(*env.payload);
      auto from = r.u64();
      r.expect_done();
      on_sync_request(from, env.source);
      break;
    }
    case simnet::MessageKind::sync_response:
    {
      ByteReader r(*env.payload);
      on_sync_response(r);
      break;
    }
    default: break;
    }
  }
  catch (const DecodeError &)
  {
    // Malformed or mutated message: drop it.
  }
}

void Node::on_transaction(const Transaction &tx) { admit(tx); }

void Node::on_proposal(const simnet::Envelope &env)
{
  ByteReader r(*env.payload);
  const auto view = r.u32();
  Block block = Block::read(r);
  std::optional<PolkaRecord> just;
  if (r.u8())
  {
    PolkaRecord p;
    p.view = r.u32();
    p.digest = read_digest(r);
    auto count = r.u32();
    if (count > 1024) throw DecodeError("justification too large");
    for (std::uint32_t i = 0; i < count; ++i) p.votes.push_back(Vote::read(r));
    just = std::move(p);
  }
  r.expect_done();

  const auto h = working_height();
  if (block.height < h) return;
  if (block.height > h)
  {
    if (block.height == h + 1)
      defer(env);
    else
      request_sync(env.source);
    return;
  }
  auto sender = chain_.actor_to_index_.find(env.source);
  if (sender == chain_.actor_to_index_.end() || sender->second != chain_.leader(h, view)) return;
  if (view > view_)
  {
    if (view <= view_ + chain_.size()) defer(env);
    return;
  }
  consider_proposal(block, view, just);
}

void Node::consider_proposal(const Block &block, std::uint32_t view, const std::optional<PolkaRecord> &just)
{
  if (block.round > view) return;
  const auto digest = block.digest();

  bool justified = false;
  if (just && just->digest == digest && just->view < view && just->view >= block.round)
  {
    justified = valid_certificate(block, just->votes, Phase::prepare) &&
                std::all_of(just->votes.begin(), just->votes.end(),
                            [&](const Vote &v) { return v.view == just->view; });
  }
  if (block.round < view && !justified) return;
  if (!known_blocks_.count(digest))
  {
    if (!validate_block(block)) return;
    known_blocks_.emplace(digest, block);
  }
  if (justified && (!valid_ || valid_->view < just->view)) valid_ = *just;

  bool vote = view == view_;
  switch (spec_.behavior)
  {
  case Behavior::vote_withhold: vote = false; break;
  case Behavior::equivocate: break;
  case Behavior::censor: vote = vote && !censors(block); [[fallthrough]];
  case Behavior::honest:
  case Behavior::empty_spam:
    vote = vote && !prepared_views_.count(view) &&
           (!lock_ || lock_->digest == digest || (justified && just->view > lock_->view));
    break;
  }
  if (vote) cast(Phase::prepare, view, digest);
  check_quorums(view, digest);
}

void Node::cast(Phase phase, std::uint32_t view, const Digest &digest)
{
  Vote v;
  v.phase = phase;
  v.height = working_height();
  v.view = view;
  v.block = digest;
  v.voter = index_;
  v.signature = crypto::sign(spec_.keys.secret_key, Vote::signing_message(chain_.id(), phase, v.height, view, digest, index_));
  (phase == Phase::prepare ? prepared_views_ : committed_views_).insert(view);
  ByteWriter w;
  v.write(w);
  chain_.broadcast(*this, simnet::MessageKind::vote, std::make_shared<const Bytes>(std::move(w).take()));
}

void Node::on_vote(const simnet::Envelope &env)
{
  ByteReader r(*env.payload);
  Vote v = Vote::read(r);
  r.expect_done();

  const auto h = working_height();
  if (v.height < h) return;
  if (v.height > h)
  {
    if (v.height == h + 1)
      defer(env);
    else
      request_sync(env.source);
    return;
  }
  auto sender = chain_.actor_to_index_.find(env.source);
  if (sender == chain_.actor_to_index_.end() || sender->second != v.voter) return;
  if (!signed_by_voter(v)) return;

  tallies_[TallyKey{v.view, v.phase, v.block}][v.voter] = v;
  auto &voters = view_voters_[v.view];
  voters.insert(v.voter);
  // f+1 voters in a later view include an honest node that already timed out.
  if (v.view > view_ && voters.size() >= chain_.f() + 1) start_view(v.view, chain_.network().now(), false);
  if (working_height() == h) check_quorums(v.view, v.block);
}

void Node::check_quorums(std::uint32_t view, const Digest &digest)
{
  auto known = known_blocks_.find(digest);
  if (known == known_blocks_.end()) return;
  const auto q = chain_.quorum();

  auto collect = [&](Phase phase) {
    std::vector<Vote> votes;
    auto it = tallies_.find(TallyKey{view, phase, digest});
    if (it != tallies_.end())
      for (const auto &[voter, vote] : it->second) votes.push_back(vote);
    return votes;
  };

  auto prepares = collect(Phase::prepare);
  if (prepares.size() >= q)
  {
    if (!valid_ || valid_->view < view) valid_ = PolkaRecord{view, digest, prepares};

    bool vote = false;
    switch (spec_.behavior)
    {
    case Behavior::vote_withhold: break;
    case Behavior::equivocate: vote = !committed_views_.count(view); break;
    case Behavior::censor:
    case Behavior::honest:
    case Behavior::empty_spam:
      vote = !committed_views_.count(view) && (!lock_ || lock_->view <= view) &&
             !(spec_.behavior == Behavior::censor && censors(known->second));
      break;
    }
    if (vote)
    {
      lock_ = PolkaRecord{view, digest, prepares};
      cast(Phase::commit, view, digest);
    }
  }

  auto commits = collect(Phase::commit);
  if (commits.size() >= q) commit(known->second, std::move(commits));
}

void Node::commit(const Block &proposed, std::vector<Vote> certificate)
{
  std::sort(certificate.begin(), certificate.end(),
            [](const Vote &a, const Vote &b) { return a.voter < b.voter; });
  Block block = proposed;
  block.commit_certificate = std::move(certificate);
  ledger_.push_back(std::move(block));
  const Block &b = ledger_.back();

  BlockContext ctx{chain_.id(), b.height, b.timestamp};
  for (const auto &tx : b.transactions)
  {
    auto r = state_->apply(tx, ctx);
    r.height = b.height;
    receipts_[tx.id()] = std::move(r);
    mempool_.remove(tx.id());
  }
  chain_.notify_commit(*this, b);
  enter_height(chain_.network().now());
}

void Node::enter_height(SimTime now)
{
  known_blocks_.clear();
  prepared_views_.clear();
  committed_views_.clear();
  tallies_.clear();
  view_voters_.clear();
  lock_.reset();
  valid_.reset();
  start_view(0, now, true);
  replay_deferred();
}

void Node::start_view(std::uint32_t view, SimTime now, bool first)
{
  view_ = view;
  const auto h = working_height();
  auto &net = chain_.network();
  const auto &cfg = chain_.config();

  if (chain_.leader(h, view) == index_)
  {
    SimTime delay = 0;
    if (view == 0 && spec_.behavior != Behavior::empty_spam) delay = cfg.block_interval;
    net.at(now + delay, actor_, [this, h, view] {
      if (working_height() == h && view_ == view) propose(h, view);
    });
  }
  net.at(now + cfg.view_timeout, actor_, [this, h, view] {
    if (working_height() != h || view_ != view) return;
    for (const auto &env : deferred_)
    {
      request_sync(env.source);
      break;
    }
    start_view(view + 1, chain_.network().now(), false);
  });
  if (!first) replay_deferred();
}

void Node::propose(std::uint64_t, std::uint32_t view)
{
  auto &net = chain_.network();
  Block block;
  std::optional<PolkaRecord> just;
  if (valid_ && known_blocks_.count(valid_->digest))
  {
    block = known_blocks_.at(valid_->digest);
    just = valid_;
  }
  else
  {
    block = build_proposal(net.now(), view);
  }

  auto encode = [&](const Block &b) {
    ByteWriter w;
    w.u32(view);
    b.write(w);
    w.u8(just ? 1 : 0);
    if (just)
    {
      w.u32(just->view);
      write_digest(w, just->digest);
      w.u32(static_cast<std::uint32_t>(just->votes.size()));
      for (const auto &v : just->votes) v.write(w);
    }
    return std::make_shared<const Bytes>(std::move(w).take());
  };

  if (spec_.behavior != Behavior::equivocate || just)
  {
    chain_.broadcast(*this, simnet::MessageKind::proposal, encode(block));
    return;
  }

  // Two conflicting blocks for one height: honest nodes are split between
  // them, colluding nodes get both.
  Block twin = block;
  twin.timestamp += 1;
  auto a = encode(block), b = encode(twin);
  std::size_t honest_seen = 0;
  for (std::size_t i = 0; i < chain_.size(); ++i)
  {
    const Node &peer = chain_.node(i);
    if (!peer.honest())
    {
      net.send(actor_, peer.actor(), simnet::MessageKind::proposal, a);
      net.send(actor_, peer.actor(), simnet::MessageKind::proposal, b);
    }
    else
    {
      net.send(actor_, peer.actor(), simnet::MessageKind::proposal, honest_seen++ % 2 == 0 ? a : b);
    }
  }
}

void Node::on_sync_request(std::uint64_t from_height, simnet::ActorId from)
{
  if (from_height == 0 || from_height > tip_height()) return;
  const auto last = std::min<std::uint64_t>(tip_height(), from_height + kMaxSyncBlocks - 1);
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(last - from_height + 1));
  for (auto h = from_height; h <= last; ++h) ledger_[h].write(w);
  chain_.network().send(actor_, from, simnet::MessageKind::sync_response, std::move(w).take());
}

void Node::on_sync_response(ByteReader &r)
{
  auto count = r.u32();
  if (count > kMaxSyncBlocks) return;
  std::vector<Block> blocks;
  for (std::uint32_t i = 0; i < count; ++i) blocks.push_back(Block::read(r));
  r.expect_done();
  for (auto &b : blocks)
  {
    if (b.height < working_height()) continue;
    if (b.height != working_height() || b.previous_hash != ledger_.back().digest()) break;
    if (!valid_certificate(b, b.commit_certificate, Phase::commit)) break;
    auto cert = b.commit_certificate;
    commit(b, std::move(cert));
  }
}

// ---------------------------------------------------------------------------
// Chain

Chain::Chain(simnet::Network &network, ChainConfig config, std::vector<NodeSpec> nodes,
             const StateMachine &genesis_state)
    : network_(network), config_(std::move(config))
{
  if (nodes.empty()) throw std::invalid_argument("chain needs at least one node");
  if (config_.view_timeout <= 0) config_.view_timeout = 2 * config_.block_interval + simnet::kSecond;
  for (std::uint32_t i = 0; i < nodes.size(); ++i)
  {
    keys_.push_back(nodes[i].keys.public_key);
    auto name = nodes[i].name;
    nodes_.push_back(std::make_unique<Node>(*this, i, std::move(nodes[i]), genesis_state.clone()));
    Node *node = nodes_.back().get();
    node->actor_ = network_.add_actor(config_.chain_id + "/" + name,
                                      [node](const simnet::Envelope &env) { node->on_message(env); });
    network_.set_latency(node->actor_, config_.latency);
    actor_to_index_[node->actor_] = i;
  }
}

std::optional<std::size_t> Chain::find_node(std::string_view name) const
{
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i]->name() == name) return i;
  return std::nullopt;
}

std::vector<std::size_t> Chain::honest_nodes() const
{
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i]->honest()) out.push_back(i);
  return out;
}

std::size_t Chain::reference_node() const
{
  auto h = honest_nodes();
  return h.empty() ? 0 : h.front();
}

void Chain::start()
{
  for (auto &n : nodes_) n->enter_height(network_.now());
}

SubmitStatus Chain::submit(std::size_t index, const Transaction &tx)
{
  Node &origin = node(index);
  auto status = origin.admit(tx);
  if (status != SubmitStatus::accepted) return status;
  auto payload = std::make_shared<const Bytes>(tx.encode());
  for (auto &n : nodes_)
    if (n.get() != &origin) network_.send(origin.actor(), n->actor(), simnet::MessageKind::transaction, payload);
  return status;
}

void Chain::broadcast(const Node &from, simnet::MessageKind kind, const std::shared_ptr<const Bytes> &payload)
{
  for (auto &n : nodes_) network_.send(from.actor(), n->actor(), kind, payload);
}

void Chain::notify_commit(const Node &node, const Block &block)
{
  if (node.honest()) commit_times_.emplace(block.height, network_.now());
  CommitEvent ev{node.index(), &block, network_.now()};
  for (auto &obs : observers_) obs(ev);
}

std::uint64_t Chain::honest_min_height() const
{
  std::uint64_t h = UINT64_MAX;
  for (auto i : honest_nodes()) h = std::min(h, nodes_[i]->tip_height());
  return h == UINT64_MAX ? 0 : h;
}

std::uint64_t Chain::honest_max_height() const
{
  std::uint64_t h = 0;
  for (auto i : honest_nodes()) h = std::max(h, nodes_[i]->tip_height());
  return h;
}

std::optional<std::uint64_t> Chain::safety_violation() const
{
  auto honest = honest_nodes();
  const auto top = honest_max_height();
  for (std::uint64_t h = 1; h <= top; ++h)
  {
    std::optional<Digest> seen;
    for (auto i : honest)
    {
      const auto &ledger = nodes_[i]->ledger();
      if (h >= ledger.size()) continue;
      auto d = ledger[h].digest();
      if (seen && *seen != d) return h;
      seen = d;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

bool cooldown_elapsed(std::uint64_t tip_height, std::uint64_t proposal_height, std::uint64_t cooldown_blocks)
{
  return tip_height >= proposal_height + cooldown_blocks;
}

bool cooldown_elapsed(const std::vector<Block> &ledger, std::uint64_t proposal_height, std::uint64_t cooldown_blocks)
{
  if (ledger.empty()) return false;
  return cooldown_elapsed(ledger.size() - 1, proposal_height, cooldown_blocks);
}

std::optional<std::uint64_t> validate_ledger(const std::vector<Block> &ledger, const std::string &chain_id,
                                             const std::vector<PublicKey> &node_keys)
{
  if (ledger.empty()) return 0;
  const auto &g = ledger[0];
  if (g.height != 0 || !g.previous_hash.is_zero() || !g.transactions.empty()) return 0;
  const auto n = static_cast<std::uint32_t>(node_keys.size());
  for (std::uint64_t h = 1; h < ledger.size(); ++h)
  {
    const auto &b = ledger[h];
    if (b.height != h || b.previous_hash != ledger[h - 1].digest()) return h;
    if (n == 0 || b.proposer != (h + b.round) % n) return h;
    const auto &cert = b.commit_certificate;
    if (cert.empty()) return h;
    const auto digest = b.digest();
    std::set<std::uint32_t> voters;
    for (const auto &v : cert)
    {
      if (v.phase != Phase::commit || v.height != h || v.view != cert.front().view || v.block != digest ||
          v.voter >= n)
        return h;
      if (!crypto::verify(node_keys[v.voter], Vote::signing_message(chain_id, v.phase, h, v.view, digest, v.voter),
                          v.signature))
        return h;
      voters.insert(v.voter);
    }
    if (voters.size() < quorum(n)) return h;
  }
  return std::nullopt;
}

std::string transcript(const std::vector<Block> &ledger)
{
  std::ostringstream out;
  for (const auto &b : ledger)
  {
    out << b.height << '\t' << b.digest().hex() << '\t' << b.proposer << '\t' << b.transactions.size() << '\t';
    for (std::size_t i = 0; i < b.transactions.size(); ++i) out << (i ? "," : "") << b.transactions[i].id().hex();
    out << '\n';
  }
  return out.str();
}

}  // namespace flbi::consensus
