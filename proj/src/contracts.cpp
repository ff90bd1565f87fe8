#include "flbi/contracts.hpp"

#include <sodium.h>

#include <algorithm>

namespace flbi::contracts {

namespace {

Bytes u64_arg(std::uint64_t v)
{
  ByteWriter w;
  w.u64(v);
  return std::move(w).take();
}

std::uint64_t as_u64(const Bytes &b)
{
  if (b.size() != 8) throw ContractError(ContractErrc::malformed_call, "expected u64");
  ByteReader r(b);
  return r.u64();
}

std::string as_str(const Bytes &b) { return std::string(b.begin(), b.end()); }

const Bytes &arg(const Call &call, std::size_t i, std::size_t expected)
{
  if (call.args.size() != expected) throw ContractError(ContractErrc::malformed_call, "wrong argument count");
  return call.args[i];
}

PublicKey as_key(const Bytes &b)
{
  auto k = PublicKey::decode(b);
  if (!k) throw ContractError(ContractErrc::malformed_call, "bad public key");
  return *k;
}

Signature as_sig(const Bytes &b)
{
  auto s = Signature::decode(b);
  if (!s) throw ContractError(ContractErrc::malformed_call, "bad signature encoding");
  return *s;
}

void write_key(ByteWriter &w, const PublicKey &k) { w.raw(k.point); }
void write_digest(ByteWriter &w, const Digest &d) { w.raw(d.bytes); }

Receipt ok(const BlockContext &ctx) { return {ctx.height, true, {}}; }
Receipt failed(const BlockContext &ctx, const ContractError &e) { return {ctx.height, false, to_string(e.code())}; }

}  // namespace

const char *to_string(ContractErrc code)
{
  switch (code)
  {
  case ContractErrc::unauthorized: return "unauthorized";
  case ContractErrc::unknown_function: return "unknown-function";
  case ContractErrc::malformed_call: return "malformed-call";
  case ContractErrc::bad_signature: return "bad-signature";
  case ContractErrc::stale_version: return "stale-version";
  case ContractErrc::duplicate: return "duplicate";
  case ContractErrc::unknown_record: return "unknown-record";
  case ContractErrc::not_pending: return "not-pending";
  case ContractErrc::too_late: return "too-late";
  case ContractErrc::bad_proof: return "bad-proof";
  case ContractErrc::unknown_member: return "unknown-member";
  case ContractErrc::unknown_proposal: return "unknown-proposal";
  case ContractErrc::closed: return "closed";
  case ContractErrc::double_vote: return "double-vote";
  case ContractErrc::unknown_meter: return "unknown-meter";
  case ContractErrc::bad_link: return "bad-link";
  case ContractErrc::unsupported: return "unsupported";
  }
  return "unknown";
}

const char *to_string(FirmwareStatus status)
{
  switch (status)
  {
  case FirmwareStatus::pending: return "pending";
  case FirmwareStatus::valid: return "valid";
  case FirmwareStatus::vetoed: return "vetoed";
  }
  return "unknown";
}

const char *to_string(ProposalKind kind)
{
  switch (kind)
  {
  case ProposalKind::add_node: return "add-node";
  case ProposalKind::remove_node: return "remove-node";
  case ProposalKind::add_meter: return "add-meter";
  case ProposalKind::remove_meter: return "remove-meter";
  case ProposalKind::consortium_key_update: return "consortium-key-update";
  }
  return "unknown";
}

std::optional<ProposalKind> proposal_kind_from_string(std::string_view s)
{
  for (auto k : {ProposalKind::add_node, ProposalKind::remove_node, ProposalKind::add_meter,
                 ProposalKind::remove_meter, ProposalKind::consortium_key_update})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

const char *to_string(ProposalStatus status)
{
  switch (status)
  {
  case ProposalStatus::open: return "open";
  case ProposalStatus::approved: return "approved";
  case ProposalStatus::rejected: return "rejected";
  }
  return "unknown";
}

FirmwareStatus FirmwareRecord::status_at(std::uint64_t height) const
{
  if (vetoed) return FirmwareStatus::vetoed;
  return consensus::cooldown_elapsed(height, proposal_height, cooldown_T) ? FirmwareStatus::valid
                                                                            : FirmwareStatus::pending;
}

// ---------------------------------------------------------------------------
// Readings and measurement records

Bytes Reading::encode() const
{
  ByteWriter w;
  w.raw(to_bytes("FLRD")).u8(1).str(meter_id).str(supplier_id).blob(metadata);
  w.i64(power).i64(voltage).i64(frequency).i64(timestamp);
  return std::move(w).take();
}

std::optional<Reading> Reading::decode(ByteView data)
{
  try
  {
    ByteReader r(data);
    auto magic = r.raw(4);
    if (!std::equal(magic.begin(), magic.end(), "FLRD") || r.u8() != 1) return std::nullopt;
    Reading x;
    x.meter_id = r.str(256);
    x.supplier_id = r.str(256);
    auto meta = r.blob(1 << 16);
    x.metadata.assign(meta.begin(), meta.end());
    x.power = r.i64();
    x.voltage = r.i64();
    x.frequency = r.i64();
    x.timestamp = r.i64();
    r.expect_done();
    return x;
  }
  catch (const DecodeError &)
  {
    return std::nullopt;
  }
}

Bytes MeasurementRecord::encode() const
{
  ByteWriter w;
  w.blob(reading.encode()).raw(payload_digest.encode()).raw(tpm_signature.encode()).blob(encrypted_payload);
  return std::move(w).take();
}

std::optional<MeasurementRecord> MeasurementRecord::decode(ByteView data)
{
  try
  {
    ByteReader r(data);
    MeasurementRecord m;
    auto reading = Reading::decode(r.blob(1 << 20));
    auto digest = Digest::decode(r.raw(crypto::kDigestSize));
    auto sig = Signature::decode(r.raw(crypto::kSignatureSize));
    auto enc = r.blob(1 << 20);
    r.expect_done();
    if (!reading || !digest || !sig) return std::nullopt;
    m.reading = std::move(*reading);
    m.payload_digest = *digest;
    m.tpm_signature = *sig;
    m.encrypted_payload.assign(enc.begin(), enc.end());
    return m;
  }
  catch (const DecodeError &)
  {
    return std::nullopt;
  }
}

Bytes keyed_transform(const std::array<std::uint8_t, 32> &key, const Digest &nonce_src, ByteView data)
{
  Bytes out(data.size());
  if (!data.empty())
    crypto_stream_chacha20_xor(out.data(), data.data(), data.size(), nonce_src.bytes.data(), key.data());
  return out;
}

// ---------------------------------------------------------------------------
// Calls

namespace calls {

Call put_firmware(std::uint64_t version, const Digest &binary_digest, std::uint64_t cooldown_T)
{
  return Call{std::string(consensus::fn::put_firmware), {u64_arg(version), binary_digest.encode(), u64_arg(cooldown_T)}};
}

Call veto_firmware(std::uint64_t record_id)
{
  return Call{std::string(consensus::fn::veto_firmware), {u64_arg(record_id)}};
}

Call check_firmware(std::uint64_t record_id)
{
  return Call{std::string(consensus::fn::check_firmware), {u64_arg(record_id)}};
}

Call update_admin_key(const PublicKey &new_key, const Signature &proof)
{
  return Call{std::string(consensus::fn::update_admin_key), {new_key.encode(), proof.encode()}};
}

Call propose_pub_key(const ProposalSpec &spec)
{
  ByteWriter extra;
  extra.str(spec.owner).u8(static_cast<std::uint8_t>(spec.layer)).str(spec.chain_id);
  extra.u8(spec.link_signature ? 1 : 0);
  if (spec.link_signature) extra.raw(spec.link_signature->encode());
  extra.u32(static_cast<std::uint32_t>(spec.roster.size()));
  for (const auto &r : spec.roster) extra.str(r.member).raw(r.admin_key.encode()).u8(r.oem ? 1 : 0);
  return Call{std::string(consensus::fn::propose_pub_key),
              {to_bytes(to_string(spec.kind)), to_bytes(spec.subject),
               spec.subject_key ? spec.subject_key->encode() : Bytes{}, std::move(extra).take()}};
}

Call vote_pub_key_proposal(std::uint64_t proposal_id, bool support)
{
  return Call{std::string(consensus::fn::vote_pub_key_proposal), {u64_arg(proposal_id), Bytes{support ? std::uint8_t{1} : std::uint8_t{0}}}};
}

Call put_measurement(const MeasurementRecord &record)
{
  return Call{std::string(consensus::fn::put_measurement), {record.encode()}};
}

}  // namespace calls

Bytes admin_rotation_message(const std::string &member, const PublicKey &new_key)
{
  ByteWriter w;
  w.raw(to_bytes("FLBI-admin-rotate")).str(member).raw(new_key.encode());
  return std::move(w).take();
}

std::optional<ProposalSpec> decode_proposal(const Call &call)
{
  if (call.function != consensus::fn::propose_pub_key || call.args.size() != 4) return std::nullopt;
  try
  {
    ProposalSpec s;
    auto kind = proposal_kind_from_string(as_str(call.args[0]));
    if (!kind) return std::nullopt;
    s.kind = *kind;
    s.subject = as_str(call.args[1]);
    if (!call.args[2].empty())
    {
      auto k = PublicKey::decode(call.args[2]);
      if (!k) return std::nullopt;
      s.subject_key = *k;
    }
    ByteReader r(call.args[3]);
    s.owner = r.str(256);
    auto layer = r.u8();
    if (layer > 1) return std::nullopt;
    s.layer = static_cast<Layer>(layer);
    s.chain_id = r.str(256);
    if (r.u8())
    {
      auto sig = Signature::decode(r.raw(crypto::kSignatureSize));
      if (!sig) return std::nullopt;
      s.link_signature = *sig;
    }
    auto count = r.u32();
    if (count > 4096) return std::nullopt;
    for (std::uint32_t i = 0; i < count; ++i)
    {
      RosterEntry e;
      e.member = r.str(256);
      auto k = PublicKey::decode(r.raw(crypto::kPublicKeySize));
      if (!k) return std::nullopt;
      e.admin_key = *k;
      e.oem = r.u8() != 0;
      s.roster.push_back(std::move(e));
    }
    r.expect_done();
    return s;
  }
  catch (const DecodeError &)
  {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// ProposalBook

std::size_t KeyProposal::supports() const
{
  return std::count_if(votes.begin(), votes.end(), [](const auto &v) { return v.second.first; });
}

std::size_t KeyProposal::rejects() const { return votes.size() - supports(); }

std::uint64_t ProposalBook::open(const ProposalSpec &spec, const std::string &proposer, std::uint64_t height,
                                 const Signature &sig)
{
  if (find_open(spec.kind, spec.subject)) throw ContractError(ContractErrc::duplicate, "open proposal for subject");
  KeyProposal p;
  p.id = next_id_++;
  p.spec = spec;
  p.proposer = proposer;
  p.height = height;
  p.votes[proposer] = {true, sig};
  proposals_.emplace(p.id, std::move(p));
  return next_id_ - 1;
}

ProposalStatus ProposalBook::vote(std::uint64_t id, const std::string &voter, bool support, const Signature &sig,
                                  std::size_t population)
{
  auto it = proposals_.find(id);
  if (it == proposals_.end()) throw ContractError(ContractErrc::unknown_proposal);
  auto &p = it->second;
  if (p.status != ProposalStatus::open) throw ContractError(ContractErrc::closed);
  if (!voter.empty())
  {
    if (p.votes.count(voter)) throw ContractError(ContractErrc::double_vote);
    p.votes[voter] = {support, sig};
  }
  const auto n = static_cast<std::uint32_t>(population);
  const auto f = consensus::fault_bound(n);
  if (p.supports() >= consensus::quorum(n))
    p.status = ProposalStatus::approved;
  else if (p.rejects() >= f + 1)
    p.status = ProposalStatus::rejected;
  return p.status;
}

const KeyProposal &ProposalBook::get(std::uint64_t id) const
{
  auto it = proposals_.find(id);
  if (it == proposals_.end()) throw ContractError(ContractErrc::unknown_proposal);
  return it->second;
}

std::optional<std::uint64_t> ProposalBook::find_open(ProposalKind kind, const std::string &subject) const
{
  for (const auto &[id, p] : proposals_)
    if (p.status == ProposalStatus::open && p.spec.kind == kind && p.spec.subject == subject) return id;
  return std::nullopt;
}

void ProposalBook::write(ByteWriter &w) const
{
  w.u64(next_id_).u32(static_cast<std::uint32_t>(proposals_.size()));
  for (const auto &[id, p] : proposals_)
  {
    auto call = calls::propose_pub_key(p.spec);
    w.u64(id).str(p.proposer).u64(p.height).u8(static_cast<std::uint8_t>(p.status));
    for (const auto &a : call.args) w.blob(a);
    w.u32(static_cast<std::uint32_t>(p.votes.size()));
    for (const auto &[voter, v] : p.votes) w.str(voter).u8(v.first ? 1 : 0).raw(v.second.bytes);
  }
}

// ---------------------------------------------------------------------------
// Top layer

TopLayerContract::TopLayerContract(const std::vector<RosterEntry> &roster, const PublicKey &root_key)
{
  Epoch e0;
  e0.shared_key = root_key;
  for (const auto &r : roster)
  {
    members_[r.member] = {r.admin_key, r.oem};
    e0.members.insert(r.member);
  }
  epochs_.push_back(std::move(e0));
  chain_.root_public_key = root_key;
}

std::optional<PublicKey> TopLayerContract::sender_key(const std::string &sender) const
{
  auto it = members_.find(sender);
  if (it == members_.end()) return std::nullopt;
  return it->second.admin_key;
}

std::unique_ptr<consensus::StateMachine> TopLayerContract::clone() const
{
  auto c = std::make_unique<TopLayerContract>(*this);
  c->sink_ = nullptr;
  return c;
}

Receipt TopLayerContract::apply(const Transaction &tx, const BlockContext &ctx)
{
  try
  {
    auto key = sender_key(tx.sender());
    if (!key) throw ContractError(ContractErrc::unauthorized);
    if (!crypto::verify(*key, tx.payload(), tx.sender_signature())) throw ContractError(ContractErrc::bad_signature);

    const auto &f = tx.call().function;
    if (f == consensus::fn::put_firmware)
      do_put_firmware(tx, ctx);
    else if (f == consensus::fn::veto_firmware)
      do_veto(tx, ctx);
    else if (f == consensus::fn::check_firmware)
      firmware(as_u64(arg(tx.call(), 0, 1)));
    else if (f == consensus::fn::update_admin_key)
      do_update_admin_key(tx);
    else if (f == consensus::fn::propose_pub_key)
      do_propose(tx, ctx);
    else if (f == consensus::fn::vote_pub_key_proposal)
      do_vote(tx);
    else
      throw ContractError(ContractErrc::unknown_function, f);
    return ok(ctx);
  }
  catch (const ContractError &e)
  {
    return failed(ctx, e);
  }
}

void TopLayerContract::do_put_firmware(const Transaction &tx, const BlockContext &ctx)
{
  const auto &call = tx.call();
  auto version = as_u64(arg(call, 0, 3));
  auto digest = Digest::decode(call.args[1]);
  if (!digest) throw ContractError(ContractErrc::malformed_call, "bad digest");
  auto cooldown = as_u64(call.args[2]);
  if (!members_.at(tx.sender()).oem) throw ContractError(ContractErrc::unauthorized, "not an OEM member");
  if (!firmware_log_.empty())
  {
    const auto &last = firmware_log_.back();
    if (version == last.version && *digest == last.binary_digest) throw ContractError(ContractErrc::duplicate);
    if (version <= last.version) throw ContractError(ContractErrc::stale_version);
  }
  FirmwareRecord r;
  r.id = firmware_log_.size() + 1;
  r.version = version;
  r.binary_digest = *digest;
  r.proposer = tx.sender();
  r.proposal_height = ctx.height;
  r.cooldown_T = cooldown;
  firmware_log_.push_back(std::move(r));
}

void TopLayerContract::do_veto(const Transaction &tx, const BlockContext &ctx)
{
  auto id = as_u64(arg(tx.call(), 0, 1));
  if (id == 0 || id > firmware_log_.size()) throw ContractError(ContractErrc::unknown_record);
  auto &r = firmware_log_[id - 1];
  if (r.vetoed) throw ContractError(ContractErrc::not_pending);
  if (consensus::cooldown_elapsed(ctx.height, r.proposal_height, r.cooldown_T))
    throw ContractError(ContractErrc::too_late);
  r.vetoes.insert(tx.sender());
  r.vetoed = true;
}

void TopLayerContract::do_update_admin_key(const Transaction &tx)
{
  const auto &call = tx.call();
  auto new_key = as_key(arg(call, 0, 2));
  auto proof = as_sig(call.args[1]);
  auto it = members_.find(tx.sender());
  if (it == members_.end()) throw ContractError(ContractErrc::unknown_member);
  if (!crypto::verify(it->second.admin_key, admin_rotation_message(tx.sender(), new_key), proof))
    throw ContractError(ContractErrc::bad_proof);
  it->second.admin_key = new_key;
}

void TopLayerContract::validate_spec(const ProposalSpec &s) const
{
  switch (s.kind)
  {
  case ProposalKind::add_node:
    if (s.subject.empty() || !s.subject_key || s.chain_id.empty())
      throw ContractError(ContractErrc::malformed_call, "add-node needs id, key and target chain");
    if (!members_.count(s.owner)) throw ContractError(ContractErrc::unknown_member, s.owner);
    if (nodes_.count(s.subject)) throw ContractError(ContractErrc::duplicate, s.subject);
    break;
  case ProposalKind::remove_node:
    if (!nodes_.count(s.subject)) throw ContractError(ContractErrc::unknown_record, s.subject);
    break;
  case ProposalKind::add_meter:
    if (s.subject.empty() || !s.subject_key) throw ContractError(ContractErrc::malformed_call, "add-meter needs key");
    if (meters_.count(s.subject)) throw ContractError(ContractErrc::duplicate, s.subject);
    break;
  case ProposalKind::remove_meter:
    if (!meters_.count(s.subject)) throw ContractError(ContractErrc::unknown_meter, s.subject);
    break;
  case ProposalKind::consortium_key_update:
    if (!s.subject_key || !s.link_signature || s.roster.empty())
      throw ContractError(ContractErrc::malformed_call, "key update needs key, link signature and roster");
    if (chain_.contains(*s.subject_key)) throw ContractError(ContractErrc::duplicate, "key already used");
    if (!crypto::verify(latest_key(), sigchain::link_message(*s.subject_key), *s.link_signature))
      throw ContractError(ContractErrc::bad_link);
    break;
  }
}

void TopLayerContract::do_propose(const Transaction &tx, const BlockContext &ctx)
{
  auto spec = decode_proposal(tx.call());
  if (!spec) throw ContractError(ContractErrc::malformed_call, "bad proposal");
  validate_spec(*spec);
  auto id = proposals_.open(*spec, tx.sender(), ctx.height, tx.sender_signature());
  if (proposals_.vote(id, {}, true, {}, members_.size()) == ProposalStatus::approved) enact(proposals_.get(id));
}

void TopLayerContract::do_vote(const Transaction &tx)
{
  const auto &call = tx.call();
  auto id = as_u64(arg(call, 0, 2));
  if (call.args[1].size() != 1) throw ContractError(ContractErrc::malformed_call);
  auto status = proposals_.vote(id, tx.sender(), call.args[1][0] != 0, tx.sender_signature(), members_.size());
  if (status == ProposalStatus::approved) enact(proposals_.get(id));
}

void TopLayerContract::enact(const KeyProposal &p)
{
  const auto &s = p.spec;
  switch (s.kind)
  {
  case ProposalKind::add_node: nodes_[s.subject] = {s.owner, s.layer, s.chain_id, *s.subject_key}; break;
  case ProposalKind::remove_node: nodes_.erase(s.subject); break;
  case ProposalKind::add_meter: meters_[s.subject] = *s.subject_key; break;
  case ProposalKind::remove_meter: meters_.erase(s.subject); break;
  case ProposalKind::consortium_key_update:
  {
    // The link was checked against the key current at proposal time; if
    // another update won in between, this one no longer extends the chain.
    if (!crypto::verify(latest_key(), sigchain::link_message(*s.subject_key), *s.link_signature) ||
        chain_.contains(*s.subject_key))
      return;
    Epoch e;
    e.index = epochs_.size();
    e.shared_key = *s.subject_key;
    std::map<std::string, MemberInfo> next;
    for (const auto &r : s.roster)
    {
      auto it = members_.find(r.member);
      next[r.member] = it != members_.end() ? MemberInfo{it->second.admin_key, r.oem} : MemberInfo{r.admin_key, r.oem};
      e.members.insert(r.member);
    }
    members_ = std::move(next);
    epochs_.push_back(std::move(e));
    chain_.links.push_back({*s.subject_key, *s.link_signature});
    break;
  }
  }
}

FirmwareStatus TopLayerContract::check_firmware(std::uint64_t record_id, std::uint64_t at_height) const
{
  return firmware(record_id).status_at(at_height);
}

const FirmwareRecord &TopLayerContract::firmware(std::uint64_t record_id) const
{
  if (record_id == 0 || record_id > firmware_log_.size()) throw ContractError(ContractErrc::unknown_record);
  return firmware_log_[record_id - 1];
}

std::optional<std::uint64_t> TopLayerContract::find_firmware(const Digest &binary_digest) const
{
  for (const auto &r : firmware_log_)
    if (r.binary_digest == binary_digest) return r.id;
  return std::nullopt;
}

Digest TopLayerContract::state_digest() const
{
  ByteWriter w;
  w.raw(to_bytes("FLTOP"));
  w.u32(static_cast<std::uint32_t>(members_.size()));
  for (const auto &[id, m] : members_)
  {
    w.str(id);
    write_key(w, m.admin_key);
    w.u8(m.oem ? 1 : 0);
  }
  w.u32(static_cast<std::uint32_t>(nodes_.size()));
  for (const auto &[id, n] : nodes_)
  {
    w.str(id).str(n.owner).u8(static_cast<std::uint8_t>(n.layer)).str(n.chain_id);
    write_key(w, n.key);
  }
  w.u32(static_cast<std::uint32_t>(meters_.size()));
  for (const auto &[id, k] : meters_)
  {
    w.str(id);
    write_key(w, k);
  }
  w.u32(static_cast<std::uint32_t>(firmware_log_.size()));
  for (const auto &r : firmware_log_)
  {
    w.u64(r.id).u64(r.version);
    write_digest(w, r.binary_digest);
    w.str(r.proposer).u64(r.proposal_height).u64(r.cooldown_T).u8(r.vetoed ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(r.vetoes.size()));
    for (const auto &v : r.vetoes) w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(epochs_.size()));
  for (const auto &e : epochs_)
  {
    w.u64(e.index);
    write_key(w, e.shared_key);
    w.u32(static_cast<std::uint32_t>(e.members.size()));
    for (const auto &m : e.members) w.str(m);
  }
  w.blob(sigchain::encode_chain(chain_));
  proposals_.write(w);
  return crypto::hash(w.bytes());
}

// ---------------------------------------------------------------------------
// Bottom layer

BottomLayerContract::BottomLayerContract(std::string chain_id, const std::map<std::string, PublicKey> &nodes,
                                         const std::map<std::string, PublicKey> &meters,
                                         std::shared_ptr<crypto::VerificationCache> verifier)
    : chain_id_(std::move(chain_id)), nodes_(nodes), meters_(meters), verifier_(std::move(verifier))
{
}

std::optional<PublicKey> BottomLayerContract::sender_key(const std::string &sender) const
{
  auto it = nodes_.find(sender);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

std::unique_ptr<consensus::StateMachine> BottomLayerContract::clone() const
{
  auto c = std::make_unique<BottomLayerContract>(*this);
  c->sink_ = nullptr;
  return c;
}

bool BottomLayerContract::check(const PublicKey &key, ByteView msg, const Signature &sig) const
{
  return verifier_ ? verifier_->verify(key, msg, sig) : crypto::verify(key, msg, sig);
}

Receipt BottomLayerContract::apply(const Transaction &tx, const BlockContext &ctx)
{
  try
  {
    auto key = sender_key(tx.sender());
    if (!key) throw ContractError(ContractErrc::unauthorized);
    if (!check(*key, tx.payload(), tx.sender_signature())) throw ContractError(ContractErrc::bad_signature);

    const auto &f = tx.call().function;
    if (f == consensus::fn::put_measurement)
      do_put_measurement(tx, ctx);
    else if (f == consensus::fn::propose_pub_key)
      do_propose(tx, ctx);
    else if (f == consensus::fn::vote_pub_key_proposal)
      do_vote(tx);
    else
      throw ContractError(ContractErrc::unknown_function, f);
    return ok(ctx);
  }
  catch (const ContractError &e)
  {
    return failed(ctx, e);
  }
}

void BottomLayerContract::do_put_measurement(const Transaction &tx, const BlockContext &ctx)
{
  auto rec = MeasurementRecord::decode(arg(tx.call(), 0, 1));
  if (!rec) throw ContractError(ContractErrc::malformed_call, "bad measurement record");
  const auto &meter = rec->reading.meter_id;
  auto emit = [&](const char *kind) {
    if (sink_) sink_(ContractEvent{kind, meter, tx.sender(), ctx.height, tx.id()});
  };

  auto it = meters_.find(meter);
  if (it == meters_.end())
  {
    emit("unknown-meter");
    throw ContractError(ContractErrc::unknown_meter, meter);
  }
  auto encoded = rec->reading.encode();
  if (crypto::hash(encoded) != rec->payload_digest)
  {
    emit("digest-mismatch");
    throw ContractError(ContractErrc::malformed_call, "payload digest mismatch");
  }
  if (!check(it->second, encoded, rec->tpm_signature))
  {
    emit("bad-tpm-signature");
    throw ContractError(ContractErrc::bad_signature, meter);
  }
  if (seen_.count({meter, rec->payload_digest})) throw ContractError(ContractErrc::duplicate);

  seen_.insert({meter, rec->payload_digest});
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  crypto_hash_sha256_update(&st, log_hash_.data(), log_hash_.size());
  crypto_hash_sha256_update(&st, rec->payload_digest.bytes.data(), rec->payload_digest.bytes.size());
  crypto_hash_sha256_final(&st, log_hash_.data());
  log_.push_back(std::move(*rec));
}

void BottomLayerContract::do_propose(const Transaction &tx, const BlockContext &ctx)
{
  auto spec = decode_proposal(tx.call());
  if (!spec) throw ContractError(ContractErrc::malformed_call, "bad proposal");
  switch (spec->kind)
  {
  case ProposalKind::add_node:
    if (spec->subject.empty() || !spec->subject_key) throw ContractError(ContractErrc::malformed_call);
    if (!spec->chain_id.empty() && spec->chain_id != chain_id_) throw ContractError(ContractErrc::unsupported, "other chain");
    if (nodes_.count(spec->subject)) throw ContractError(ContractErrc::duplicate, spec->subject);
    break;
  case ProposalKind::remove_node:
    if (!nodes_.count(spec->subject)) throw ContractError(ContractErrc::unknown_record, spec->subject);
    break;
  case ProposalKind::add_meter:
    if (spec->subject.empty() || !spec->subject_key) throw ContractError(ContractErrc::malformed_call);
    if (meters_.count(spec->subject)) throw ContractError(ContractErrc::duplicate, spec->subject);
    break;
  case ProposalKind::remove_meter:
    if (!meters_.count(spec->subject)) throw ContractError(ContractErrc::unknown_meter, spec->subject);
    break;
  case ProposalKind::consortium_key_update: throw ContractError(ContractErrc::unsupported, "top layer only");
  }
  auto id = proposals_.open(*spec, tx.sender(), ctx.height, tx.sender_signature());
  if (proposals_.vote(id, {}, true, {}, nodes_.size()) == ProposalStatus::approved) enact(proposals_.get(id));
}

void BottomLayerContract::do_vote(const Transaction &tx)
{
  const auto &call = tx.call();
  auto id = as_u64(arg(call, 0, 2));
  if (call.args[1].size() != 1) throw ContractError(ContractErrc::malformed_call);
  auto status = proposals_.vote(id, tx.sender(), call.args[1][0] != 0, tx.sender_signature(), nodes_.size());
  if (status == ProposalStatus::approved) enact(proposals_.get(id));
}

void BottomLayerContract::enact(const KeyProposal &p)
{
  const auto &s = p.spec;
  switch (s.kind)
  {
  case ProposalKind::add_node: nodes_[s.subject] = *s.subject_key; break;
  case ProposalKind::remove_node: nodes_.erase(s.subject); break;
  case ProposalKind::add_meter: meters_[s.subject] = *s.subject_key; break;
  case ProposalKind::remove_meter: meters_.erase(s.subject); break;
  case ProposalKind::consortium_key_update: break;
  }
}

std::vector<const MeasurementRecord *> BottomLayerContract::measurements_of(const std::string &meter) const
{
  std::vector<const MeasurementRecord *> out;
  for (const auto &m : log_)
    if (m.reading.meter_id == meter) out.push_back(&m);
  return out;
}

Digest BottomLayerContract::state_digest() const
{
  ByteWriter w;
  w.raw(to_bytes("FLBOT")).str(chain_id_);
  w.u32(static_cast<std::uint32_t>(nodes_.size()));
  for (const auto &[id, k] : nodes_)
  {
    w.str(id);
    write_key(w, k);
  }
  w.u32(static_cast<std::uint32_t>(meters_.size()));
  for (const auto &[id, k] : meters_)
  {
    w.str(id);
    write_key(w, k);
  }
  w.u64(log_.size()).raw(log_hash_);
  proposals_.write(w);
  return crypto::hash(w.bytes());
}

}  // namespace flbi::contracts
