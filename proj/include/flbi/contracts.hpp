#pragma once

// Top-layer and bottom-layer contract state machines.
//
// Every call arrives as a committed consensus::Transaction. Arguments are
// positional byte strings; the builders in `calls` produce them and the
// contracts parse them back. A failed call leaves state untouched and
// reports the error in its receipt.

#include "flbi/consensus.hpp"
#include "flbi/crypto.hpp"
#include "flbi/sigchain.hpp"

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace flbi::contracts {

using consensus::BlockContext;
using consensus::Call;
using consensus::Receipt;
using consensus::Transaction;
using crypto::Digest;
using crypto::PublicKey;
using crypto::Signature;

enum class ContractErrc
{
  unauthorized,
  unknown_function,
  malformed_call,
  bad_signature,
  stale_version,
  duplicate,
  unknown_record,
  not_pending,
  too_late,
  bad_proof,
  unknown_member,
  unknown_proposal,
  closed,
  double_vote,
  unknown_meter,
  bad_link,
  unsupported,
};

const char *to_string(ContractErrc code);

class ContractError : public std::runtime_error
{
public:
  explicit ContractError(ContractErrc code, const std::string &detail = {})
      : std::runtime_error(detail.empty() ? to_string(code) : std::string(to_string(code)) + ": " + detail),
        code_(code)
  {
  }
  ContractErrc code() const { return code_; }

private:
  ContractErrc code_;
};

// ---------------------------------------------------------------------------
// Records

enum class FirmwareStatus
{
  pending,
  valid,
  vetoed,
};

const char *to_string(FirmwareStatus status);

struct FirmwareRecord
{
  std::uint64_t id{0};
  std::uint64_t version{0};
  Digest binary_digest;
  std::string proposer;
  std::uint64_t proposal_height{0};
  std::uint64_t cooldown_T{0};
  std::set<std::string> vetoes;
  bool vetoed{false};

  FirmwareStatus status_at(std::uint64_t height) const;
};

enum class ProposalKind : std::uint8_t
{
  add_node,
  remove_node,
  add_meter,
  remove_meter,
  consortium_key_update,
};

const char *to_string(ProposalKind kind);
std::optional<ProposalKind> proposal_kind_from_string(std::string_view s);

enum class ProposalStatus
{
  open,
  approved,
  rejected,
};

const char *to_string(ProposalStatus status);

enum class Layer : std::uint8_t
{
  top = 0,
  bottom = 1,
};

struct RosterEntry
{
  std::string member;
  PublicKey admin_key;
  bool oem{false};

  bool operator==(const RosterEntry &) const = default;
};

/// What a proposePubKey call asks for. Fields beyond kind/subject are used
/// by specific kinds only:
///   add-node               owner, layer, chain_id, subject_key
///   add-meter              subject_key (TPM key)
///   consortium-key-update  subject_key (pk_{i+1}), link_signature, roster
struct ProposalSpec
{
  ProposalKind kind{ProposalKind::add_node};
  std::string subject;
  std::optional<PublicKey> subject_key;
  std::string owner;
  Layer layer{Layer::bottom};
  std::string chain_id;
  std::optional<Signature> link_signature;
  std::vector<RosterEntry> roster;

  bool operator==(const ProposalSpec &) const = default;
};

struct KeyProposal
{
  std::uint64_t id{0};
  ProposalSpec spec;
  std::string proposer;
  std::uint64_t height{0};
  std::map<std::string, std::pair<bool, Signature>> votes;  // voter -> (support, tx signature)
  ProposalStatus status{ProposalStatus::open};

  std::size_t supports() const;
  std::size_t rejects() const;
};

struct NodeRecord
{
  std::string owner;
  Layer layer{Layer::bottom};
  std::string chain_id;
  PublicKey key;
};

struct Epoch
{
  std::uint64_t index{0};
  PublicKey shared_key;
  std::set<std::string> members;
};

/// One meter reading. Values are fixed-point thousandths (W, V, Hz).
struct Reading
{
  std::string meter_id;
  std::string supplier_id;
  Bytes metadata;
  std::int64_t power{0};
  std::int64_t voltage{0};
  std::int64_t frequency{0};
  simnet::SimTime timestamp{0};

  // "FLRD" | u8 1 | str meter | str supplier | blob metadata | i64 x4
  Bytes encode() const;
  static std::optional<Reading> decode(ByteView data);
  bool operator==(const Reading &) const = default;
};

struct MeasurementRecord
{
  Reading reading;
  Digest payload_digest;  // hash of reading.encode()
  Signature tpm_signature;
  Bytes encrypted_payload;

  Bytes encode() const;
  static std::optional<MeasurementRecord> decode(ByteView data);
  bool operator==(const MeasurementRecord &) const = default;
};

// Symmetric keyed transform (ChaCha20 keystream XOR, nonce from `nonce_src`).
Bytes keyed_transform(const std::array<std::uint8_t, 32> &key, const Digest &nonce_src, ByteView data);

struct ContractEvent
{
  std::string kind;  // "bad-tpm-signature", "unknown-meter", ...
  std::string subject;
  std::string sender;
  std::uint64_t height{0};
  Digest tx_id;
};

using EventSink = std::function<void(const ContractEvent &)>;

// ---------------------------------------------------------------------------
// Call builders

namespace calls {
Call put_firmware(std::uint64_t version, const Digest &binary_digest, std::uint64_t cooldown_T);
Call veto_firmware(std::uint64_t record_id);
Call check_firmware(std::uint64_t record_id);
Call update_admin_key(const PublicKey &new_key, const Signature &proof);
Call propose_pub_key(const ProposalSpec &spec);
Call vote_pub_key_proposal(std::uint64_t proposal_id, bool support);
Call put_measurement(const MeasurementRecord &record);
}  // namespace calls

// What the caller signs to prove control of its current admin key.
Bytes admin_rotation_message(const std::string &member, const PublicKey &new_key);

std::optional<ProposalSpec> decode_proposal(const Call &call);

// ---------------------------------------------------------------------------
// Proposal voting shared by both layers

class ProposalBook
{
public:
  std::uint64_t open(const ProposalSpec &spec, const std::string &proposer, std::uint64_t height,
                     const Signature &sig);
  // Records a vote and settles the proposal against a voter population of
  // size n: approved at 2f+1 supports, rejected at f+1 rejects. An empty
  // voter only re-evaluates the tally.
  ProposalStatus vote(std::uint64_t id, const std::string &voter, bool support, const Signature &sig,
                      std::size_t population);
  const KeyProposal &get(std::uint64_t id) const;
  const std::map<std::uint64_t, KeyProposal> &all() const { return proposals_; }
  std::optional<std::uint64_t> find_open(ProposalKind kind, const std::string &subject) const;
  void write(ByteWriter &w) const;

private:
  std::map<std::uint64_t, KeyProposal> proposals_;
  std::uint64_t next_id_{1};
};

// ---------------------------------------------------------------------------

struct MemberInfo
{
  PublicKey admin_key;
  bool oem{false};
};

class TopLayerContract : public consensus::StateMachine
{
public:
  // Epoch 0: the initial roster and its shared key pk_0.
  TopLayerContract(const std::vector<RosterEntry> &roster, const PublicKey &root_key);

  std::optional<PublicKey> sender_key(const std::string &sender) const override;
  Receipt apply(const Transaction &tx, const BlockContext &ctx) override;
  Digest state_digest() const override;
  std::unique_ptr<consensus::StateMachine> clone() const override;

  // Pure read. Throws ContractError(unknown_record).
  FirmwareStatus check_firmware(std::uint64_t record_id, std::uint64_t at_height) const;
  const FirmwareRecord &firmware(std::uint64_t record_id) const;
  const std::vector<FirmwareRecord> &firmware_log() const { return firmware_log_; }
  std::optional<std::uint64_t> find_firmware(const Digest &binary_digest) const;

  const std::map<std::string, MemberInfo> &members() const { return members_; }
  const std::map<std::string, NodeRecord> &nodes() const { return nodes_; }
  const std::map<std::string, PublicKey> &meters() const { return meters_; }
  const std::vector<Epoch> &epochs() const { return epochs_; }
  const PublicKey &latest_key() const { return epochs_.back().shared_key; }
  const sigchain::SignatureChain &canonical_chain() const { return chain_; }
  const ProposalBook &proposals() const { return proposals_; }

  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }

private:
  void do_put_firmware(const Transaction &tx, const BlockContext &ctx);
  void do_veto(const Transaction &tx, const BlockContext &ctx);
  void do_update_admin_key(const Transaction &tx);
  void do_propose(const Transaction &tx, const BlockContext &ctx);
  void do_vote(const Transaction &tx);
  void enact(const KeyProposal &p);
  void validate_spec(const ProposalSpec &spec) const;

  std::map<std::string, MemberInfo> members_;
  std::map<std::string, NodeRecord> nodes_;
  std::map<std::string, PublicKey> meters_;
  std::vector<FirmwareRecord> firmware_log_;
  std::vector<Epoch> epochs_;
  sigchain::SignatureChain chain_;
  ProposalBook proposals_;
  EventSink sink_;
};

class BottomLayerContract : public consensus::StateMachine
{
public:
  BottomLayerContract(std::string chain_id, const std::map<std::string, PublicKey> &nodes,
                      const std::map<std::string, PublicKey> &meters,
                      std::shared_ptr<crypto::VerificationCache> verifier = nullptr);

  std::optional<PublicKey> sender_key(const std::string &sender) const override;
  Receipt apply(const Transaction &tx, const BlockContext &ctx) override;
  Digest state_digest() const override;
  std::unique_ptr<consensus::StateMachine> clone() const override;

  const std::string &chain_id() const { return chain_id_; }
  const std::map<std::string, PublicKey> &nodes() const { return nodes_; }
  const std::map<std::string, PublicKey> &meters() const { return meters_; }
  const std::vector<MeasurementRecord> &measurements() const { return log_; }
  const ProposalBook &proposals() const { return proposals_; }
  // Stored records of one meter, in log order.
  std::vector<const MeasurementRecord *> measurements_of(const std::string &meter) const;

  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }

private:
  void do_put_measurement(const Transaction &tx, const BlockContext &ctx);
  void do_propose(const Transaction &tx, const BlockContext &ctx);
  void do_vote(const Transaction &tx);
  void enact(const KeyProposal &p);
  bool check(const PublicKey &key, ByteView msg, const Signature &sig) const;

  std::string chain_id_;
  std::map<std::string, PublicKey> nodes_;
  std::map<std::string, PublicKey> meters_;
  std::vector<MeasurementRecord> log_;
  std::set<std::pair<std::string, Digest>> seen_;
  std::array<std::uint8_t, 32> log_hash_{};
  ProposalBook proposals_;
  std::shared_ptr<crypto::VerificationCache> verifier_;
  EventSink sink_;
};

}  // namespace flbi::contracts
