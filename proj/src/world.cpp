#include "flbi/scenario.hpp"

#include <algorithm>
#include <limits>

namespace flbi::scenario {

using adversary::AttackId;
using adversary::Detector;
using consensus::Behavior;
using simnet::kSecond;

namespace {

constexpr SimTime kRebootDelay = 2 * kSecond;
constexpr SimTime kAuditInterval = 5 * simnet::kMinute;
constexpr std::size_t kHistoryCap = 64;

const std::set<std::string> kRejections = {"malformed-bundle", "bad-chain", "bad-binary-signature", "stale-chain",
                                           "older-version"};

Bytes firmware_binary(std::uint64_t version, bool malicious)
{
  return to_bytes((malicious ? "implant build " : "firmware build ") + std::to_string(version));
}

// Targeted delivery through a DCU: str meter | blob bundle.
Bytes targeted(const std::string &meter, const Bytes &bundle)
{
  ByteWriter w;
  w.str(meter).blob(bundle);
  return std::move(w).take();
}

}  // namespace

std::string bottom_chain_id(std::size_t index) { return "bottom-" + std::to_string(index); }

World::World(ScenarioConfig config) : config_(std::move(config)), rng_(config_.seed)
{
  config_.validate();
  net_ = std::make_unique<simnet::Network>(config_.seed, config_.latency);
  rng_.fill(storage_key_);
  oem_actor_ = net_->add_actor("oem");
  mdms_actor_ = net_->add_actor("mdms");
  build_top();
  build_meters();
  build_bottoms();
}

std::map<std::string, Behavior> World::behaviors_for(const std::string &chain_id,
                                                     const std::vector<std::string> &names) const
{
  std::map<std::string, Behavior> out;
  for (const auto &name : names)
    if (auto it = config_.behaviors.find(name); it != config_.behaviors.end()) out[name] = it->second;

  for (const auto &a : config_.attacks)
  {
    Behavior b;
    switch (a.id)
    {
    case AttackId::byz_empty_spam: b = Behavior::empty_spam; break;
    case AttackId::byz_censor: b = Behavior::censor; break;
    case AttackId::byz_vote_withhold: b = Behavior::vote_withhold; break;
    default: continue;
    }
    if (a.param("chain", "top") != chain_id) continue;
    const std::size_t n = names.size();
    if (!a.targets.empty())
    {
      for (const auto &t : a.targets)
        if (std::find(names.begin(), names.end(), t) != names.end()) out[t] = b;
      continue;
    }
    const auto count = static_cast<std::size_t>(a.param_number("count", consensus::fault_bound(n)));
    for (std::size_t k = 0; k < count; ++k) out[names[k * n / count]] = b;
  }
  return out;
}

std::function<bool(const consensus::Transaction &)> World::censor_rule(const std::string &chain_id) const
{
  for (const auto &a : config_.attacks)
  {
    if (a.id != AttackId::byz_censor || a.param("chain", "top") != chain_id) continue;
    const std::string fn =
        a.param("function", chain_id == "top" ? std::string(consensus::fn::veto_firmware)
                                              : std::string(consensus::fn::put_measurement));
    return [fn](const consensus::Transaction &tx) { return tx.call().function == fn; };
  }
  return {};
}

void World::build_top()
{
  Rng keys = rng_.fork("members");
  std::vector<contracts::RosterEntry> roster;
  for (const auto &m : config_.members)
  {
    members_.push_back({m.name, m.oem, crypto::keygen(128, keys), 0});
    roster.push_back({m.name, members_.back().admin.public_key, m.oem});
  }
  const auto n = static_cast<std::uint32_t>(members_.size());
  Rng dealer = rng_.fork("epoch-0");
  epochs_.push_back(crypto::threshold_keygen(n, consensus::quorum(n), dealer));
  contracts::TopLayerContract genesis(roster, epochs_[0].shared_public_key);

  std::vector<std::string> names;
  for (const auto &m : members_) names.push_back("top-" + m.name);
  auto behaviors = behaviors_for("top", names);

  consensus::ChainConfig cfg;
  cfg.chain_id = "top";
  cfg.block_interval = config_.top_block_interval;
  cfg.block_capacity = config_.block_capacity;
  cfg.latency = config_.latency;
  cfg.censored = censor_rule("top");

  Rng node_keys = rng_.fork("top-nodes");
  std::vector<consensus::NodeSpec> specs;
  for (const auto &name : names)
  {
    auto it = behaviors.find(name);
    specs.push_back({name, crypto::keygen(128, node_keys), it == behaviors.end() ? Behavior::honest : it->second});
  }
  top_ = std::make_unique<consensus::Chain>(*net_, cfg, std::move(specs), genesis);
  top_->on_commit([this](const consensus::CommitEvent &e) { on_top_commit(e); });
}

void World::build_meters()
{
  Rng tpm_keys = rng_.fork("tpm");
  const sigchain::SignatureChain root_chain{epochs_[0].shared_public_key, {}};
  const Bytes factory = make_bundle(firmware_binary(config_.initial_version, false), config_.initial_version, 0,
                                    root_chain);
  const std::size_t L = config_.bottom_chains;
  for (std::size_t j = 0; j < config_.meters; ++j)
  {
    MeterSlot slot;
    const std::string id = "meter-" + std::to_string(j);
    slot.factory_tpm = crypto::keygen(128, tpm_keys);
    slot.meter = std::make_unique<device::Meter>(id, *slot.factory_tpm,
                                                 device::Rom{"flbi-boot-1", epochs_[0].shared_public_key}, factory);
    slot.chain = j % L;
    slot.node = (j / L) % config_.nodes_per_chain;
    slot.rng = rng_.fork(id);
    slot.actor = net_->add_actor(id, [this, j](const simnet::Envelope &env) { on_meter_message(j, env); });
    meter_index_[id] = j;
    meters_.push_back(std::move(slot));
  }
}

void World::build_bottoms()
{
  std::vector<std::string> chain_ids;
  for (std::size_t l = 0; l < config_.bottom_chains; ++l) chain_ids.push_back(bottom_chain_id(l));
  placement_ = placement::PlacementTable(chain_ids);

  // Owners: explicit, or members take turns and each takes a slot on a
  // chain the placement rule admits for it.
  std::vector<std::vector<std::string>> owners(config_.bottom_chains);
  if (!config_.owners.empty())
  {
    for (std::size_t k = 0; k < config_.owners.size(); ++k)
      owners[k / config_.nodes_per_chain].push_back(config_.owners[k]);
  }
  else
  {
    std::vector<std::size_t> open(config_.bottom_chains, config_.nodes_per_chain);
    std::size_t turn = 0;
    for (std::size_t placed = 0; placed < config_.bottom_chains * config_.nodes_per_chain; ++placed)
    {
      const std::string &member = members_[turn++ % members_.size()].name;
      std::optional<std::size_t> pick;
      for (const auto &c : placement::admissible_chains(placement_, member))
      {
        const auto l = static_cast<std::size_t>(std::find(chain_ids.begin(), chain_ids.end(), c) - chain_ids.begin());
        if (open[l] > 0)
        {
          pick = l;
          break;
        }
      }
      if (!pick)
        for (std::size_t l = 0; l < open.size() && !pick; ++l)
          if (open[l] > 0) pick = l;
      --open[*pick];
      owners[*pick].push_back(member);
      placement_.add_node(member, chain_ids[*pick]);
    }
  }
  if (!config_.owners.empty())
    for (std::size_t l = 0; l < owners.size(); ++l)
      for (const auto &o : owners[l]) placement_.add_node(o, chain_ids[l]);

  Rng node_keys = rng_.fork("bottom-nodes");
  bottoms_.resize(config_.bottom_chains);
  latencies_.resize(config_.bottom_chains);
  committed_.assign(config_.bottom_chains, 0);
  for (std::size_t l = 0; l < config_.bottom_chains; ++l)
  {
    BottomChain &b = bottoms_[l];
    b.owners = owners[l];
    b.cache = std::make_shared<crypto::VerificationCache>();
    b.meters_at.resize(config_.nodes_per_chain);
    b.firmware_tamper.resize(config_.nodes_per_chain);

    std::vector<std::string> names;
    for (std::size_t i = 0; i < config_.nodes_per_chain; ++i)
      names.push_back("node-" + std::to_string(l) + "-" + std::to_string(i));
    auto behaviors = behaviors_for(chain_ids[l], names);

    std::vector<consensus::NodeSpec> specs;
    std::map<std::string, crypto::PublicKey> node_map;
    for (const auto &name : names)
    {
      b.node_keys.push_back(crypto::keygen(128, node_keys));
      auto it = behaviors.find(name);
      specs.push_back({name, b.node_keys.back(), it == behaviors.end() ? Behavior::honest : it->second});
      node_map[name] = b.node_keys.back().public_key;
    }
    std::map<std::string, crypto::PublicKey> meter_map;
    for (std::size_t j = 0; j < meters_.size(); ++j)
      if (meters_[j].chain == l)
      {
        meter_map[meters_[j].meter->id()] = meters_[j].meter->tpm_public_key();
        b.meters_at[meters_[j].node].push_back(j);
      }

    contracts::BottomLayerContract genesis(chain_ids[l], node_map, meter_map, b.cache);
    consensus::ChainConfig cfg;
    cfg.chain_id = chain_ids[l];
    cfg.block_interval = config_.bottom_block_interval;
    cfg.block_capacity = config_.block_capacity;
    cfg.latency = config_.latency;
    cfg.censored = censor_rule(chain_ids[l]);
    b.chain = std::make_unique<consensus::Chain>(*net_, cfg, std::move(specs), genesis);

    auto &ref = dynamic_cast<contracts::BottomLayerContract &>(
        b.chain->node(b.chain->reference_node()).mutable_state());
    ref.set_event_sink([this](const contracts::ContractEvent &e) {
      if (e.kind == "bad-tpm-signature" || e.kind == "digest-mismatch")
        detect(Detector::signature_check, "x(new)", e.subject, e.kind + " from " + e.sender);
    });
    b.chain->on_commit([this, l](const consensus::CommitEvent &e) { on_bottom_commit(l, e); });

    for (std::size_t i = 0; i < config_.nodes_per_chain; ++i)
    {
      b.relays.push_back(std::make_unique<device::MeasurementRelay>(*b.chain, i, b.node_keys[i], storage_key_, b.cache));
      b.relays.back()->set_event_sink([this](const device::RelayEvent &e) {
        detect(Detector::signature_check, "x(new)", e.meter, e.kind + " at " + e.node);
      });
      b.dcu.push_back(net_->add_actor("dcu-" + std::to_string(l) + "-" + std::to_string(i),
                                      [this, l, i](const simnet::Envelope &env) {
                                        if (env.kind == simnet::MessageKind::reading)
                                          on_reading(l, i, env);
                                        else
                                          on_dcu_firmware(l, i, env);
                                      }));
    }
  }
}

// ---------------------------------------------------------------------------
// Accessors

const contracts::TopLayerContract &World::top_state() const
{
  return dynamic_cast<const contracts::TopLayerContract &>(top_->node(top_->reference_node()).state());
}

const contracts::BottomLayerContract &World::bottom_state(std::size_t i) const
{
  const auto &c = *bottoms_.at(i).chain;
  return dynamic_cast<const contracts::BottomLayerContract &>(c.node(c.reference_node()).state());
}

World::Member &World::member(const std::string &name)
{
  for (auto &m : members_)
    if (m.name == name) return m;
  throw ScenarioError("unknown member " + name);
}

const World::Member &World::oem() const
{
  for (const auto &m : members_)
    if (m.oem) return m;
  return members_.front();
}

std::optional<std::pair<std::size_t, std::size_t>> World::find_bottom_node(const std::string &name) const
{
  for (std::size_t l = 0; l < bottoms_.size(); ++l)
    if (auto i = bottoms_[l].chain->find_node(name)) return std::make_pair(l, *i);
  return std::nullopt;
}

World::MeterSlot &World::meter(const std::string &id)
{
  auto it = meter_index_.find(id);
  if (it == meter_index_.end()) throw ScenarioError("unknown meter " + id);
  return meters_[it->second];
}

std::optional<std::uint64_t> World::safety_violation() const
{
  if (compromised_storage_.empty())
  {
    if (auto h = top_->safety_violation()) return h;
    for (const auto &b : bottoms_)
      if (auto h = b.chain->safety_violation()) return h;
    return std::nullopt;
  }
  auto check = [this](const consensus::Chain &chain) -> std::optional<std::uint64_t> {
    std::vector<const consensus::Node *> nodes;
    for (auto i : chain.honest_nodes())
      if (!compromised_storage_.count(chain.node(i).name())) nodes.push_back(&chain.node(i));
    std::size_t top = 0;
    for (const auto *n : nodes) top = std::max(top, n->ledger().size());
    for (std::size_t h = 1; h < top; ++h)
    {
      std::optional<crypto::Digest> seen;
      for (const auto *n : nodes)
      {
        if (h >= n->ledger().size()) continue;
        auto d = n->ledger()[h].digest();
        if (seen && *seen != d) return h;
        seen = d;
      }
    }
    return std::nullopt;
  };
  if (auto h = check(*top_)) return h;
  for (const auto &b : bottoms_)
    if (auto h = check(*b.chain)) return h;
  return std::nullopt;
}

void World::note(const std::string &line)
{
  transcript_.push_back("t=" + std::to_string(net_->now()) + " " + line);
}

// ---------------------------------------------------------------------------
// Running

void World::start()
{
  if (started_) return;
  started_ = true;
  for (const auto &a : config_.attacks) adversary::apply_attack(a, *this);
  install_policies();
  top_->start();
  for (auto &b : bottoms_) b.chain->start();
  for (std::size_t j = 0; j < meters_.size(); ++j) schedule_readings(j);
  for (std::size_t u = 0; u < config_.updates.size(); ++u)
    net_->at(config_.updates[u].at, oem_actor_, [this, u] { start_release(u); });
  for (SimTime t = kAuditInterval; t < config_.duration; t += kAuditInterval)
    net_->at(t, mdms_actor_, [this] { audit(); });
}

void World::run()
{
  start();
  net_->run_until(config_.duration);
  audit();
}

bool World::run_until(const std::function<bool()> &done, SimTime limit)
{
  start();
  return net_->run_while_not(done, limit);
}

void World::install_policies()
{
  std::map<std::string, simnet::ActorId> by_name;
  for (simnet::ActorId a = 0; a < net_->actor_count(); ++a) by_name[net_->name(a)] = a;

  for (const auto &p : config_.policies)
  {
    simnet::LinkPolicy lp;
    lp.from = p.from;
    lp.until = p.until;
    if (p.type == PolicySpec::Type::partition)
    {
      consensus::Chain *chain = nullptr;
      if (p.chain == "top")
        chain = top_.get();
      else
        for (auto &b : bottoms_)
          if (b.chain->id() == p.chain) chain = b.chain.get();
      if (!chain) throw ScenarioError("partition: unknown chain " + p.chain);
      lp.label = "partition " + p.chain;
      lp.drop_mode = simnet::DropMode::partition;
      for (std::uint32_t i = 0; i < chain->size(); ++i)
        (i < p.split ? lp.actors : lp.peers).insert(chain->node(i).actor());
    }
    else
    {
      lp.label = "jam";
      lp.drop_mode = simnet::DropMode::jam_until;
      lp.drop = p.drop;
      for (const auto &name : p.actors)
      {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ScenarioError("jam: unknown actor " + name);
        lp.actors.insert(it->second);
      }
    }
    net_->add_policy(std::move(lp));
  }
}

void World::schedule_readings(std::size_t j)
{
  const auto count = static_cast<SimTime>(std::max<std::size_t>(meters_.size(), 1));
  const SimTime offset = kSecond + static_cast<SimTime>(j) * config_.reading_interval / count;
  net_->at(offset, meters_[j].actor, [this, j] { reading_tick(j); });
}

void World::reading_tick(std::size_t j)
{
  MeterSlot &m = meters_[j];
  if (m.meter->running())
  {
    device::SensorInput x = m.model.sample(m.rng);
    if (m.distort) m.distort(x);
    auto [reading, sig] = m.meter->sense_and_sign(x, net_->now(), "utility-" + std::to_string(m.chain));
    ++m.stats.sent;
    net_->send(m.actor, bottoms_[m.chain].dcu[m.node], simnet::MessageKind::reading,
               device::SignedReading{reading, sig}.encode());
  }
  if (net_->now() + config_.reading_interval < config_.duration)
    net_->after(config_.reading_interval, m.actor, [this, j] { reading_tick(j); });
}

void World::on_reading(std::size_t l, std::size_t i, const simnet::Envelope &env)
{
  auto sr = device::SignedReading::decode(*env.payload);
  if (!sr)
  {
    detect(Detector::signature_check, "x(new)", net_->name(env.source), "undecodable reading");
    return;
  }
  bottoms_[l].relays[i]->relay(*sr);
}

void World::on_dcu_firmware(std::size_t l, std::size_t i, const simnet::Envelope &env)
{
  BottomChain &b = bottoms_[l];
  std::vector<std::size_t> targets;
  Bytes bundle;
  if (env.kind == simnet::MessageKind::control)
  {
    try
    {
      ByteReader r(*env.payload);
      const std::string meter = r.str(256);
      auto blob = r.blob(1u << 24);
      bundle.assign(blob.begin(), blob.end());
      auto it = meter_index_.find(meter);
      if (it != meter_index_.end()) targets.push_back(it->second);
    }
    catch (const DecodeError &)
    {
      return;
    }
  }
  else
  {
    bundle = *env.payload;
    targets = b.meters_at[i];
  }
  if (b.firmware_tamper[i]) b.firmware_tamper[i](bundle);
  for (auto j : targets)
    net_->send(b.dcu[i], meters_[j].actor, simnet::MessageKind::firmware_bundle, bundle);
}

void World::on_meter_message(std::size_t j, const simnet::Envelope &env)
{
  if (env.kind != simnet::MessageKind::firmware_bundle) return;
  MeterSlot &m = meters_[j];
  if (!m.meter->running()) return;
  m.meter->receive_firmware(*env.payload);
  net_->after(kRebootDelay, m.actor, [this, j] { reboot_meter(j); });
}

void World::reboot_meter(std::size_t j)
{
  MeterSlot &m = meters_[j];
  const auto d = m.meter->boot();
  std::string line = m.meter->id() + " boot " + bootloader::to_string(d.outcome);
  if (d.outcome != bootloader::Outcome::halted) line += " version " + std::to_string(d.version);
  if (!d.reason.empty()) line += " (" + d.reason + ")";
  note(line);
  if (!d.current_failure.empty()) detect(Detector::signature_check, "b(curr)", m.meter->id(), d.current_failure);
  if (kRejections.count(d.reason)) detect(Detector::signature_check, "b(new)", m.meter->id(), d.reason);
}

// ---------------------------------------------------------------------------
// Top-layer flows

consensus::SubmitStatus World::submit_top(const std::string &sender, const crypto::SecretKey &key,
                                          std::uint64_t nonce, consensus::Call call)
{
  std::size_t node = top_->reference_node();
  if (auto i = top_->find_node("top-" + sender)) node = *i;
  return top_->submit(node, consensus::Transaction::create(sender, nonce, std::move(call), key));
}

Bytes World::make_bundle(const Bytes &binary, std::uint64_t version, std::size_t epoch,
                         const sigchain::SignatureChain &chain) const
{
  const auto &material = epochs_.at(epoch);
  sigchain::FirmwareBundle b;
  b.binary = binary;
  b.binary_signature = crypto::threshold_sign(std::span(material.shares).first(material.threshold_t),
                                              sigchain::firmware_message(binary));
  b.chain = chain;
  b.version = version;
  return sigchain::encode_bundle(b);
}

void World::start_release(std::size_t u)
{
  Release r;
  r.spec = config_.updates[u];
  r.binary = firmware_binary(r.spec.version, false);
  r.digest = crypto::hash(r.binary);
  r.membership_left = r.spec.membership_updates;
  note("release v" + std::to_string(r.spec.version) + " started with " + std::to_string(r.membership_left) +
       " membership updates");
  releases_.push_back(std::move(r));
  Release &added = releases_.back();
  if (added.membership_left > 0)
    begin_membership_update(added);
  else
  {
    const Member &o = oem();
    oem_digests_.insert(added.digest);
    added.posted = true;
    submit_top(o.name, o.admin.secret_key, member(o.name).nonce++,
               contracts::calls::put_firmware(added.spec.version, added.digest, config_.cooldown_blocks()));
    note("putFirmware v" + std::to_string(added.spec.version) + " submitted by " + o.name);
  }
}

void World::post_release(Release release, const std::string &poster, const crypto::SecretKey &key,
                         std::uint64_t nonce)
{
  release.posted = true;
  submit_top(poster, key, nonce,
             contracts::calls::put_firmware(release.spec.version, release.digest, config_.cooldown_blocks()));
  note("putFirmware v" + std::to_string(release.spec.version) + " submitted under " + poster);
  releases_.push_back(std::move(release));
}

void World::begin_membership_update(Release &r)
{
  const auto n = static_cast<std::uint32_t>(members_.size());
  Rng dealer = rng_.fork("epoch-" + std::to_string(epochs_.size()));
  pending_epoch_ = crypto::threshold_keygen(n, consensus::quorum(n), dealer);
  const auto &current = epochs_.back();
  const auto link = crypto::threshold_sign(std::span(current.shares).first(current.threshold_t),
                                           sigchain::link_message(pending_epoch_->shared_public_key));
  contracts::ProposalSpec spec;
  spec.kind = contracts::ProposalKind::consortium_key_update;
  spec.subject = "epoch-" + std::to_string(epochs_.size());
  spec.subject_key = pending_epoch_->shared_public_key;
  spec.link_signature = link;
  for (const auto &[name, info] : top_state().members()) spec.roster.push_back({name, info.admin_key, info.oem});
  r.pending_key = pending_epoch_->shared_public_key;
  r.votes_cast = false;
  Member &proposer = members_.front();
  submit_top(proposer.name, proposer.admin.secret_key, proposer.nonce++, contracts::calls::propose_pub_key(spec));
  note("consortium key update " + spec.subject + " proposed by " + proposer.name);
}

void World::on_top_commit(const consensus::CommitEvent &e)
{
  if (e.node != top_->reference_node()) return;
  const auto &state = top_state();
  while (mdms_seen_records_ < state.firmware_log().size())
  {
    const auto &rec = state.firmware_log()[mdms_seen_records_++];
    mdms_firmware_log_.push_back({rec.binary_digest, rec.version});
  }
  watch_vetoes();
  advance_releases();
}

void World::watch_vetoes()
{
  const auto &state = top_state();
  const std::uint64_t tip = top_->node(top_->reference_node()).tip_height();
  for (const auto &rec : state.firmware_log())
  {
    if (config_.veto_actor && !oem_digests_.count(rec.binary_digest) && !rec.vetoed &&
        rec.status_at(tip) == contracts::FirmwareStatus::pending && !vetoes_sent_.count(rec.id))
    {
      vetoes_sent_.insert(rec.id);
      Member &o = member(oem().name);
      submit_top(o.name, o.admin.secret_key, o.nonce++, contracts::calls::veto_firmware(rec.id));
      note("vetoFirmware record " + std::to_string(rec.id) + " submitted by " + o.name);
    }
    if (rec.vetoed && !vetoes_seen_.count(rec.id))
    {
      vetoes_seen_.insert(rec.id);
      veto_commit_height_[rec.id] = tip;
      note("record " + std::to_string(rec.id) + " vetoed at height " + std::to_string(tip) + " (proposed at " +
           std::to_string(rec.proposal_height) + ")");
      detect(Detector::cooldown_veto, "b(new)", rec.binary_digest.hex(), "record " + std::to_string(rec.id));
    }
  }
}

void World::advance_releases()
{
  const auto &state = top_state();
  const std::uint64_t tip = top_->node(top_->reference_node()).tip_height();
  for (auto &r : releases_)
  {
    if (r.pending_key)
    {
      if (state.latest_key() == *r.pending_key)
      {
        epochs_.push_back(std::move(*pending_epoch_));
        pending_epoch_.reset();
        r.pending_key.reset();
        --r.membership_left;
        note("epoch " + std::to_string(epochs_.size() - 1) + " enacted at height " + std::to_string(tip));
        if (r.membership_left > 0)
          begin_membership_update(r);
        else
        {
          const Member &o = oem();
          oem_digests_.insert(r.digest);
          r.posted = true;
          submit_top(o.name, o.admin.secret_key, member(o.name).nonce++,
                     contracts::calls::put_firmware(r.spec.version, r.digest, config_.cooldown_blocks()));
          note("putFirmware v" + std::to_string(r.spec.version) + " submitted by " + o.name);
        }
      }
      else if (!r.votes_cast)
      {
        auto id = state.proposals().find_open(contracts::ProposalKind::consortium_key_update,
                                              "epoch-" + std::to_string(epochs_.size()));
        if (id)
        {
          r.votes_cast = true;
          for (std::size_t k = 1; k < members_.size(); ++k)
          {
            Member &m = members_[k];
            submit_top(m.name, m.admin.secret_key, m.nonce++, contracts::calls::vote_pub_key_proposal(*id, true));
          }
        }
      }
      continue;
    }
    if (!r.posted || r.signed_and_sent || r.vetoed) continue;
    auto id = state.find_firmware(r.digest);
    if (!id) continue;
    const auto status = state.check_firmware(*id, tip);
    if (status == contracts::FirmwareStatus::vetoed)
    {
      r.vetoed = true;
      continue;
    }
    if (status != contracts::FirmwareStatus::valid) continue;
    r.signed_and_sent = true;
    const Bytes bundle = make_bundle(r.binary, r.spec.version, epochs_.size() - 1, state.canonical_chain());
    note("record " + std::to_string(*id) + " valid at height " + std::to_string(tip) + "; v" +
         std::to_string(r.spec.version) + " signed with a " + std::to_string(state.canonical_chain().links.size()) +
         "-link chain");
    for (auto &b : bottoms_)
      for (auto dcu : b.dcu) net_->send(oem_actor_, dcu, simnet::MessageKind::firmware_bundle, bundle);
  }
}

void World::deliver_firmware(const std::string &meter_id, const Bytes &bundle, simnet::ActorId from)
{
  const MeterSlot &m = meter(meter_id);
  net_->send(from, bottoms_[m.chain].dcu[m.node], simnet::MessageKind::control, targeted(meter_id, bundle));
}

// ---------------------------------------------------------------------------
// Bottom-layer flows

void World::on_bottom_commit(std::size_t l, const consensus::CommitEvent &e)
{
  BottomChain &b = bottoms_[l];
  if (e.node != b.chain->reference_node()) return;
  const auto &node = b.chain->node(e.node);
  for (const auto &tx : e.block->transactions)
  {
    if (tx.call().function != consensus::fn::put_measurement) continue;
    auto receipt = node.receipt(tx.id());
    if (!receipt || !receipt->ok) continue;
    auto rec = contracts::MeasurementRecord::decode(tx.call().args.at(0));
    if (!rec) continue;
    ++committed_[l];
    latencies_[l].push_back(e.time - rec->reading.timestamp);
    auto it = meter_index_.find(rec->reading.meter_id);
    if (it == meter_index_.end()) continue;
    MeterStats &s = meters_[it->second].stats;
    ++s.committed;
    if (s.last_commit >= 0) s.max_gap = std::max(s.max_gap, e.time - s.last_commit);
    s.last_commit = e.time;
    if (device::anomaly_hook(s.history, rec->reading) == device::AnomalyVerdict::flag)
    {
      detect(Detector::anomaly_hook, "x(new)", rec->reading.meter_id, "reading outside the meter's usual range");
      continue;
    }
    s.history.push_back(rec->reading);
    if (s.history.size() > kHistoryCap) s.history.erase(s.history.begin());
  }
}

// ---------------------------------------------------------------------------
// Detection

void World::mark(AttackId attack, const std::string &data_type, const std::string &subject, SimTime from,
                 SimTime until)
{
  truth_.push_back({attack, data_type, subject, from, until});
}

void World::detect(Detector detector, const std::string &data_type, const std::string &subject,
                   const std::string &detail)
{
  auto key = std::make_tuple(static_cast<int>(detector), data_type, subject, detail);
  if (!detection_keys_.insert(key).second) return;
  DetectionEvent e{net_->now(), detector, data_type, subject, detail, {}};
  for (const auto &t : truth_)
    if (t.data_type == data_type && t.subject == subject && t.from <= e.time && e.time <= t.until)
    {
      e.attribution = adversary::to_string(t.attack);
      break;
    }
  detections_.push_back(std::move(e));
}

bool World::receipt_ok_elsewhere(const BottomChain &b, std::size_t audited, std::uint64_t height,
                                 std::size_t index) const
{
  for (std::uint32_t k = 0; k < b.chain->size(); ++k)
  {
    if (k == audited || !b.chain->node(k).honest()) continue;
    const auto &ledger = b.chain->node(k).ledger();
    if (ledger.size() <= height || ledger[height].transactions.size() <= index) continue;
    auto r = b.chain->node(k).receipt(ledger[height].transactions[index].id());
    return r && r->ok;
  }
  return false;
}

void World::audit()
{
  auto check_ledgers = [&](consensus::Chain &chain, const char *data_type) {
    for (std::uint32_t i = 0; i < chain.size(); ++i)
    {
      const auto &node = chain.node(i);
      if (auto bad = consensus::validate_ledger(node.ledger(), chain.id(), chain.node_keys()))
        detect(Detector::chain_verify, data_type, node.name(), "ledger copy fails at height " + std::to_string(*bad));
    }
  };
  check_ledgers(*top_, "b(log)");

  for (std::size_t l = 0; l < bottoms_.size(); ++l)
  {
    BottomChain &b = bottoms_[l];
    check_ledgers(*b.chain, "x(log)");
    const auto &meters = bottom_state(l).meters();
    for (std::uint32_t i = 0; i < b.chain->size(); ++i)
    {
      const auto &ledger = b.chain->node(i).ledger();
      for (std::uint64_t h = 1; h < ledger.size(); ++h)
        for (std::size_t k = 0; k < ledger[h].transactions.size(); ++k)
        {
          const auto &tx = ledger[h].transactions[k];
          if (tx.call().function != consensus::fn::put_measurement || tx.call().args.empty()) continue;
          if (!receipt_ok_elsewhere(b, i, h, k)) continue;
          auto rec = contracts::MeasurementRecord::decode(tx.call().args[0]);
          bool ok = false;
          if (rec)
          {
            auto key = meters.find(rec->reading.meter_id);
            const Bytes enc = rec->reading.encode();
            ok = key != meters.end() && crypto::hash(enc) == rec->payload_digest &&
                 b.cache->verify(key->second, enc, rec->tpm_signature);
          }
          if (!ok)
            detect(Detector::log_audit, "x(log)", b.chain->node(i).name(),
                   "stored measurement at height " + std::to_string(h) + " fails its TPM signature");
        }
    }
  }

  const auto &log = top_state().firmware_log();
  if (mdms_firmware_log_.size() > log.size())
    detect(Detector::chain_verify, "b(log)", "mdms-mirror", "mirror lists records the chain does not have");
  for (std::size_t k = 0; k < mdms_firmware_log_.size() && k < log.size(); ++k)
    if (mdms_firmware_log_[k].first != log[k].binary_digest || mdms_firmware_log_[k].second != log[k].version)
      detect(Detector::chain_verify, "b(log)", "mdms-mirror",
             "mirror entry " + std::to_string(k + 1) + " differs from the on-chain firmware log");
}

}  // namespace flbi::scenario
