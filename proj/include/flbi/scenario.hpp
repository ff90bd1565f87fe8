#pragma once

// Scenario files, the simulated deployment they describe, and report output.
//
// A World is one top-layer chain (a node per consortium member), a set of
// bottom-layer chains whose nodes sit at DCUs, meters attached to those
// DCUs, an OEM firmware server and an MDMS with an off-chain mirror of the
// firmware log. Everything runs on one simnet::Network.

#include "flbi/adversary.hpp"
#include "flbi/consensus.hpp"
#include "flbi/contracts.hpp"
#include "flbi/device.hpp"
#include "flbi/placement.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace flbi::scenario {

using adversary::AttackScript;
using adversary::DetectionEvent;
using simnet::SimTime;

inline constexpr std::string_view kSchema = "flbi-scenario/1";

class ScenarioError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct MemberSpec
{
  std::string name;
  bool oem{false};
};

struct FirmwareUpdate
{
  SimTime at{0};
  std::uint64_t version{2};
  std::size_t membership_updates{0};
};

struct PolicySpec
{
  enum class Type
  {
    partition,
    jam,
  };
  Type type{Type::partition};
  std::string chain;                // partition: chain id
  std::size_t split{0};             // partition: nodes [0, split) vs the rest
  std::vector<std::string> actors;  // jam: actor names
  bool drop{false};                 // jam: drop instead of holding
  SimTime from{0};
  SimTime until{0};
};

struct Assertions
{
  bool safety{true};
  std::optional<double> min_commit_fraction;
  std::optional<bool> malicious_firmware_vetoed;
  std::optional<std::uint64_t> meters_on_version;
  bool detection_matrix{false};
  std::string quiet_chain;  // chain for the two checks below
  std::optional<std::pair<SimTime, SimTime>> no_commits_between;
  std::optional<SimTime> commits_after;
  std::optional<std::uint64_t> veto_within_blocks;
};

struct ScenarioConfig
{
  std::string name{"scenario"};
  std::uint64_t seed{1};
  SimTime duration{30 * simnet::kMinute};

  std::vector<MemberSpec> members;
  std::optional<std::uint32_t> declared_f;
  SimTime top_block_interval{5 * simnet::kSecond};

  std::size_t bottom_chains{1};
  std::size_t nodes_per_chain{4};
  std::optional<std::uint32_t> declared_bottom_f;
  std::vector<std::string> owners;  // per bottom node, chain-major; empty -> placement rule
  SimTime bottom_block_interval{5 * simnet::kSecond};
  std::size_t block_capacity{512};

  std::size_t meters{0};
  SimTime reading_interval{60 * simnet::kSecond};

  simnet::LatencyModel latency{5, 2};

  SimTime cooldown{10 * simnet::kMinute};
  std::uint64_t initial_version{1};
  bool veto_actor{true};
  std::vector<FirmwareUpdate> updates;

  // Node name -> behavior; byz-* attacks add to this when the world is built.
  std::map<std::string, consensus::Behavior> behaviors;

  std::vector<PolicySpec> policies;
  std::vector<AttackScript> attacks;
  Assertions assertions;

  // T = ceil(cooldown / top block interval).
  std::uint64_t cooldown_blocks() const;
  // Throws ScenarioError.
  void validate() const;
};

/// Parses and validates a scenario document. Parse errors carry the byte
/// position; unknown keys are an error when `strict`.
ScenarioConfig parse_scenario(const std::string &text, bool strict = false);
ScenarioConfig load_scenario(const std::filesystem::path &path, bool strict = false);

std::string bottom_chain_id(std::size_t index);

// ---------------------------------------------------------------------------

struct MeterStats
{
  std::uint64_t sent{0};
  std::uint64_t committed{0};
  SimTime last_commit{-1};
  SimTime max_gap{0};
  std::vector<contracts::Reading> history;  // accepted by the anomaly hook
};

struct Release
{
  FirmwareUpdate spec;
  Bytes binary;
  crypto::Digest digest;
  bool malicious{false};
  std::size_t membership_left{0};
  std::optional<crypto::PublicKey> pending_key;
  bool votes_cast{false};
  bool posted{false};
  bool signed_and_sent{false};
  bool vetoed{false};
};

struct Report;

class World
{
public:
  struct Member
  {
    std::string name;
    bool oem{false};
    crypto::KeyPair admin;
    std::uint64_t nonce{0};
  };

  struct BottomChain
  {
    std::unique_ptr<consensus::Chain> chain;
    std::vector<crypto::KeyPair> node_keys;
    std::vector<std::string> owners;
    std::vector<simnet::ActorId> dcu;  // one relay actor per node
    std::vector<std::unique_ptr<device::MeasurementRelay>> relays;
    std::vector<std::vector<std::size_t>> meters_at;  // node -> meter indices
    std::shared_ptr<crypto::VerificationCache> cache;
    std::vector<std::function<bool(Bytes &)>> firmware_tamper;  // per DCU
  };

  struct MeterSlot
  {
    std::unique_ptr<device::Meter> meter;
    simnet::ActorId actor{0};
    std::size_t chain{0};
    std::size_t node{0};
    Rng rng{0};
    device::SensorModel model;
    std::function<void(device::SensorInput &)> distort;  // physical input tampering
    // The manufacturer's copy of the TPM key, reachable only by an OEM leak.
    std::optional<crypto::KeyPair> factory_tpm;
    MeterStats stats;
  };

  explicit World(ScenarioConfig config);
  World(const World &) = delete;
  World &operator=(const World &) = delete;

  const ScenarioConfig &config() const { return config_; }
  simnet::Network &network() { return *net_; }

  // Installs attacks and policies, then runs to the configured duration.
  void run();
  // Runs until `done` holds or `limit`; requires start() first.
  bool run_until(const std::function<bool()> &done, SimTime limit);
  void start();

  // --- topology
  consensus::Chain &top() { return *top_; }
  const contracts::TopLayerContract &top_state() const;
  std::vector<Member> &members() { return members_; }
  Member &member(const std::string &name);
  const Member &oem() const;
  std::size_t bottom_count() const { return bottoms_.size(); }
  BottomChain &bottom(std::size_t i) { return bottoms_.at(i); }
  const contracts::BottomLayerContract &bottom_state(std::size_t i) const;
  // (chain index, node index) of a bottom node by name.
  std::optional<std::pair<std::size_t, std::size_t>> find_bottom_node(const std::string &name) const;
  std::vector<MeterSlot> &meters() { return meters_; }
  MeterSlot &meter(const std::string &id);
  simnet::ActorId oem_actor() const { return oem_actor_; }
  simnet::ActorId mdms_actor() const { return mdms_actor_; }
  const placement::PlacementTable &placement() const { return placement_; }
  const std::vector<crypto::ThresholdKeyMaterial> &epochs() const { return epochs_; }

  // --- flows used by attacks
  // Submits a top-chain transaction signed with `key` under `sender`.
  consensus::SubmitStatus submit_top(const std::string &sender, const crypto::SecretKey &key, std::uint64_t nonce,
                                     consensus::Call call);
  // Adds a release to the consortium's signing queue and posts its record
  // with `poster`'s admin key.
  void post_release(Release release, const std::string &poster, const crypto::SecretKey &key, std::uint64_t nonce);
  // Sends a bundle from the OEM server through the meter's DCU.
  void deliver_firmware(const std::string &meter, const Bytes &bundle, simnet::ActorId from);
  void reboot_meter(std::size_t meter);
  std::vector<std::pair<crypto::Digest, std::uint64_t>> &mdms_firmware_log() { return mdms_firmware_log_; }
  const std::vector<Release> &releases() const { return releases_; }

  // --- detection
  void detect(adversary::Detector detector, const std::string &data_type, const std::string &subject,
              const std::string &detail);
  // Ground truth for scoring: `attack` tampered with `subject`'s data of
  // `data_type` during [from, until].
  void mark(adversary::AttackId attack, const std::string &data_type, const std::string &subject, SimTime from,
            SimTime until);
  const std::vector<DetectionEvent> &detections() const { return detections_; }
  void audit();

  // Timestamped steps of firmware and membership flows.
  const std::vector<std::string> &transcript() const { return transcript_; }
  void note(const std::string &line);

  // Nodes whose stored ledger an attack rewrote; they are not compared as
  // replicas by safety_violation.
  void compromise_storage(const std::string &node) { compromised_storage_.insert(node); }
  std::optional<std::uint64_t> safety_violation() const;

private:
  struct Truth
  {
    adversary::AttackId attack;
    std::string data_type;
    std::string subject;
    SimTime from;
    SimTime until;
  };

  std::map<std::string, consensus::Behavior> behaviors_for(const std::string &chain_id,
                                                          const std::vector<std::string> &names) const;
  std::function<bool(const consensus::Transaction &)> censor_rule(const std::string &chain_id) const;
  void build_top();
  void build_bottoms();
  void build_meters();
  void install_policies();
  void schedule_readings(std::size_t meter);
  void reading_tick(std::size_t meter);
  void on_reading(std::size_t chain, std::size_t node, const simnet::Envelope &env);
  void on_dcu_firmware(std::size_t chain, std::size_t node, const simnet::Envelope &env);
  void on_meter_message(std::size_t meter, const simnet::Envelope &env);
  void on_top_commit(const consensus::CommitEvent &e);
  void on_bottom_commit(std::size_t chain, const consensus::CommitEvent &e);
  void start_release(std::size_t index);
  void begin_membership_update(Release &r);
  void advance_releases();
  void watch_vetoes();
  Bytes make_bundle(const Bytes &binary, std::uint64_t version, std::size_t epoch,
                    const sigchain::SignatureChain &chain) const;
  bool receipt_ok_elsewhere(const BottomChain &b, std::size_t audited, std::uint64_t height,
                            std::size_t index) const;

  ScenarioConfig config_;
  Rng rng_;
  std::unique_ptr<simnet::Network> net_;
  std::vector<Member> members_;
  std::vector<crypto::ThresholdKeyMaterial> epochs_;
  std::unique_ptr<consensus::Chain> top_;
  std::vector<BottomChain> bottoms_;
  std::vector<MeterSlot> meters_;
  std::map<std::string, std::size_t> meter_index_;
  placement::PlacementTable placement_;
  simnet::ActorId oem_actor_{0};
  simnet::ActorId mdms_actor_{0};
  std::array<std::uint8_t, 32> storage_key_{};

  std::vector<Release> releases_;
  std::set<crypto::Digest> oem_digests_;
  std::set<std::uint64_t> vetoes_sent_;
  std::set<std::uint64_t> vetoes_seen_;
  std::map<std::uint64_t, std::uint64_t> veto_commit_height_;  // record id -> height vetoed
  std::vector<std::pair<crypto::Digest, std::uint64_t>> mdms_firmware_log_;
  std::size_t mdms_seen_records_{0};

  std::optional<crypto::ThresholdKeyMaterial> pending_epoch_;
  std::vector<std::vector<SimTime>> latencies_;  // per bottom chain: capture -> commit
  std::vector<std::uint64_t> committed_;         // per bottom chain

  std::vector<DetectionEvent> detections_;
  std::set<std::tuple<int, std::string, std::string, std::string>> detection_keys_;
  std::vector<Truth> truth_;
  std::vector<std::string> transcript_;
  std::set<std::string> compromised_storage_;
  bool started_{false};

  friend Report build_report(World &world);
};

// ---------------------------------------------------------------------------

Report build_report(World &world);

struct AssertionResult
{
  std::string name;
  bool ok{false};
  std::string detail;
};

struct Report
{
  std::string name;
  std::uint64_t seed{0};
  SimTime final_time{0};
  std::vector<std::string> metrics;  // JSON lines
  std::map<std::string, std::string> ledgers;  // chain id -> transcript
  adversary::DetectionMatrix matrix;
  std::vector<AssertionResult> assertions;
  std::string summary;
  std::uint64_t committed_measurements{0};

  bool passed() const;
  // metrics.jsonl, ledger-<chain>.tsv, detection_matrix.txt, summary.txt
  void write(const std::filesystem::path &dir) const;
};

Report build_report(World &world);

/// Loads, runs and reports. `seed` overrides the file's seed.
Report run(const ScenarioConfig &config);

struct DemoOptions
{
  std::size_t membership_updates{0};
  std::uint64_t version{2};
  std::uint64_t seed{1};
  std::optional<std::size_t> corrupt_link;  // 1-based link corrupted in transit
};

struct DemoResult
{
  bool booted_new{false};
  std::uint64_t meter_version{0};
  std::size_t chain_links{0};
  std::vector<std::string> transcript;
};

DemoResult demo_firmware_update(const DemoOptions &options);

struct CapacityReport
{
  std::uint64_t meters_per_chain{0};
  std::uint64_t chains{1};
  std::uint64_t total_meters{0};
};

/// meters per chain = throughput x reading interval. Throws on zero inputs.
CapacityReport capacity_report(std::uint64_t throughput_tx_per_s, std::uint64_t reading_interval_s,
                               std::uint64_t chains = 1);

}  // namespace flbi::scenario
