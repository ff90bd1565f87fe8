#include "flbi/adversary.hpp"

#include "flbi/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace flbi::adversary {

using scenario::World;
using simnet::kMinute;
using simnet::kSecond;

namespace {

// Detections of a tampered value may trail the attack window by a commit
// or a reboot.
constexpr SimTime kGrace = 2 * kMinute;
constexpr SimTime kForever = std::numeric_limits<SimTime>::max();

const std::pair<AttackId, const char *> kAttackNames[] = {
    {AttackId::A1, "A1"},
    {AttackId::A2, "A2"},
    {AttackId::A3, "A3"},
    {AttackId::A4, "A4"},
    {AttackId::A5, "A5"},
    {AttackId::A6, "A6"},
    {AttackId::A7, "A7"},
    {AttackId::byz_empty_spam, "byz-empty-spam"},
    {AttackId::byz_censor, "byz-censor"},
    {AttackId::byz_vote_withhold, "byz-vote-withhold"},
    {AttackId::mempool_flood, "mempool-flood"},
};

std::vector<std::string> split_list(const std::string &s)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

bool active(World &w, const AttackScript &a)
{
  const SimTime now = w.network().now();
  return now >= a.start && now < a.end;
}

std::vector<std::string> meter_targets(World &w, const AttackScript &a)
{
  std::vector<std::string> out = a.targets;
  if (out.empty() && !w.meters().empty()) out.push_back(w.meters().front().meter->id());
  for (const auto &t : out) w.meter(t);  // throws for unknown meters
  return out;
}

std::pair<std::size_t, std::size_t> bottom_target(World &w, const std::string &name, AttackId id)
{
  auto found = w.find_bottom_node(name);
  if (!found) throw AttackError(std::string(to_string(id)) + ": " + name + " is not a bottom-layer node");
  return *found;
}

// The running bundle with its binary altered; the signature is left as is.
// `bump` raises the version so the bootloader gets as far as the signature.
std::optional<Bytes> tampered_copy(const std::optional<Bytes> &raw, bool bump)
{
  if (!raw) return std::nullopt;
  auto b = sigchain::decode_bundle(*raw);
  if (!b) return std::nullopt;
  b->binary.push_back(0x90);
  if (bump) ++b->version;
  return sigchain::encode_bundle(*b);
}

bool flip_binary(Bytes &payload)
{
  auto b = sigchain::decode_bundle(payload);
  if (!b || b->binary.empty()) return false;
  b->binary[0] ^= 0x01;
  payload = sigchain::encode_bundle(*b);
  return true;
}

bool flip_reading(Bytes &payload)
{
  auto sr = device::SignedReading::decode(payload);
  if (!sr) return false;
  sr->reading.power ^= 0x10;
  payload = sr->encode();
  return true;
}

std::uint64_t next_version(const World &w)
{
  std::uint64_t v = w.config().initial_version;
  for (const auto &u : w.config().updates) v = std::max(v, u.version);
  return v + 1;
}

void a1(const AttackScript &a, World &w)
{
  const double scale = a.param_number("scale", 0.5);
  for (const auto &id : meter_targets(w, a))
  {
    w.meter(id).distort = [&w, a, scale](device::SensorInput &x) {
      if (active(w, a)) x.power = std::llround(static_cast<double>(x.power) * scale);
    };
    w.mark(AttackId::A1, "x(new)", id, a.start, a.end + kGrace);
  }
}

void a2(const AttackScript &a, World &w)
{
  const auto modes = split_list(a.param("mode", "firmware"));
  const auto permille = std::llround(a.param_number("scale", 0.5) * 1000);
  const bool firmware = std::count(modes.begin(), modes.end(), "firmware") > 0;
  const bool flash_new = std::count(modes.begin(), modes.end(), "flash-new") > 0;
  const bool flash_current = std::count(modes.begin(), modes.end(), "flash-current") > 0;
  // With several modes the window is shared: altered firmware first, then
  // the new partition, then the running one.
  const SimTime mid = firmware ? a.start + (a.end - a.start) / 2 : a.start;
  for (const auto &id : meter_targets(w, a))
  {
    auto &slot = w.meter(id);
    auto actor = slot.actor;
    if (firmware)
    {
      w.network().at(a.start, actor, [&w, id, permille] {
        w.meter(id).meter->set_firmware_behavior(device::FirmwareBehavior::scaled(permille));
      });
      w.network().at(mid, actor, [&w, id] {
        w.meter(id).meter->set_firmware_behavior(device::FirmwareBehavior::honest());
      });
      w.mark(AttackId::A2, "x(new)", id, a.start, mid + kGrace);
    }
    if (flash_new)
    {
      w.network().at(mid, actor, [&w, id] {
        auto &m = *w.meter(id).meter;
        if (!m.running()) return;
        if (auto bad = tampered_copy(m.partition1(), true))
        {
          m.receive_firmware(*bad);
          w.reboot_meter(static_cast<std::size_t>(&w.meter(id) - w.meters().data()));
        }
      });
      w.mark(AttackId::A2, "b(new)", id, mid, mid + kGrace);
    }
    if (flash_current)
    {
      const SimTime when = flash_new ? a.end : mid;
      w.network().at(when, actor, [&w, id] {
        auto &m = *w.meter(id).meter;
        if (auto bad = tampered_copy(m.partition1(), false))
        {
          m.overwrite_partition1(*bad);
          w.reboot_meter(static_cast<std::size_t>(&w.meter(id) - w.meters().data()));
        }
      });
      w.mark(AttackId::A2, "b(curr)", id, when, when + kGrace);
    }
  }
}

void a3(const AttackScript &a, World &w)
{
  const auto forge = static_cast<int>(a.param_number("forge", 3));
  for (const auto &id : meter_targets(w, a))
  {
    // Altered copies of readings the MDMS already holds, pushed back in
    // through the DCU with their original TPM signatures.
    w.network().at(a.start, w.mdms_actor(), [&w, id, forge] {
      auto &slot = w.meter(id);
      const auto &state = w.bottom_state(slot.chain);
      auto stored = state.measurements_of(id);
      for (int k = 0; k < forge && k < static_cast<int>(stored.size()); ++k)
      {
        const auto *rec = stored[stored.size() - 1 - k];
        device::SignedReading sr{rec->reading, rec->tpm_signature};
        sr.reading.power = sr.reading.power * 3;
        w.network().send(w.mdms_actor(), w.bottom(slot.chain).dcu[slot.node], simnet::MessageKind::reading,
                         sr.encode());
      }
      if (auto bad = tampered_copy(slot.meter->partition1(), true)) w.deliver_firmware(id, *bad, w.mdms_actor());
    });
    w.mark(AttackId::A3, "x(new)", id, a.start, a.start + kGrace);
    w.mark(AttackId::A3, "b(new)", id, a.start, a.start + kGrace);
  }
  w.network().at(a.start, w.mdms_actor(), [&w] {
    auto &mirror = w.mdms_firmware_log();
    if (mirror.empty())
      mirror.push_back({crypto::hash("rewritten firmware history"), 99});
    else
      mirror.back().first = crypto::hash("rewritten firmware history");
  });
  w.mark(AttackId::A3, "b(log)", "mdms-mirror", a.start, kForever);
}

void a4(const AttackScript &a, World &w)
{
  if (a.targets.empty()) throw AttackError("A4: needs a bottom-layer node target");
  for (const auto &name : a.targets)
  {
    auto [l, i] = bottom_target(w, name, AttackId::A4);
    w.compromise_storage(name);
    w.network().at(a.start, w.mdms_actor(), [&w, name, l = l, i = i] {
      auto &node = w.bottom(l).chain->node(i);
      auto &ledger = node.mutable_ledger();
      // Leave the newest block alone so the node keeps extending its copy.
      for (std::size_t h = 1; h + 1 < ledger.size(); ++h)
        for (auto &tx : ledger[h].transactions)
        {
          if (tx.call().function != consensus::fn::put_measurement || !node.receipt(tx.id()) ||
              !node.receipt(tx.id())->ok)
            continue;
          auto rec = contracts::MeasurementRecord::decode(tx.call().args.at(0));
          if (!rec) continue;
          rec->reading.power += 250'000;
          rec->payload_digest = crypto::hash(rec->reading.encode());
          tx = consensus::Transaction(tx.sender(), tx.nonce(), contracts::calls::put_measurement(*rec),
                                      tx.sender_signature());
          w.note("A4 rewrote a stored measurement of " + rec->reading.meter_id + " at " + name + " height " +
                 std::to_string(h));
          return;
        }
      w.note("A4 found no stored measurement at " + name);
    });
    w.mark(AttackId::A4, "x(log)", name, a.start, kForever);
  }
}

void a5(const AttackScript &a, World &w)
{
  const auto leaks = split_list(a.param("leak", "admin-key,threshold-share"));
  auto leaked = [&](const char *what) { return std::count(leaks.begin(), leaks.end(), what) > 0; };
  const std::uint64_t version = next_version(w);
  const Bytes implant = to_bytes("implant build " + std::to_string(version));

  if (leaked("admin-key"))
  {
    w.network().at(a.start, w.oem_actor(), [&w, implant, version] {
      scenario::Release r;
      r.spec.version = version;
      r.binary = implant;
      r.digest = crypto::hash(implant);
      r.malicious = true;
      const auto &oem = w.oem();
      w.post_release(std::move(r), oem.name, oem.admin.secret_key, 1'000'000'000ull + version);
    });
    w.mark(AttackId::A5, "b(new)", crypto::hash(implant).hex(), a.start, kForever);
  }
  if (leaked("threshold-share"))
  {
    const auto targets = meter_targets(w, a);
    w.network().at(a.start + kSecond, w.oem_actor(), [&w, implant, version, targets] {
      const auto &share = w.epochs().back().shares.front();
      sigchain::FirmwareBundle b;
      b.binary = implant;
      b.binary_signature = crypto::sign(crypto::SecretKey(share.scalar), sigchain::firmware_message(implant));
      b.chain = w.top_state().canonical_chain();
      b.version = version;
      const Bytes raw = sigchain::encode_bundle(b);
      for (const auto &id : targets) w.deliver_firmware(id, raw, w.oem_actor());
    });
    for (const auto &id : targets) w.mark(AttackId::A5, "b(new)", id, a.start, a.start + kGrace);
  }
  if (leaked("tpm-key"))
  {
    const auto targets = meter_targets(w, a);
    for (const auto &id : targets)
    {
      // Plausible values signed with the manufacturer's copy of the key.
      w.network().at(a.start, w.mdms_actor(), [&w, id] {
        auto &slot = w.meter(id);
        const auto &tpm = *slot.factory_tpm;
        contracts::Reading r{id,
                             "utility-" + std::to_string(slot.chain),
                             {},
                             slot.model.power - slot.model.power_noise / 2,
                             slot.model.voltage,
                             slot.model.frequency,
                             w.network().now()};
        device::SignedReading sr{r, crypto::sign(tpm.secret_key, r.encode())};
        w.network().send(w.mdms_actor(), w.bottom(slot.chain).dcu[slot.node], simnet::MessageKind::reading,
                         sr.encode());
      });
      w.mark(AttackId::A5, "x(new)", id, a.start, a.end + kGrace);
    }
  }
}

void a6(const AttackScript &a, World &w)
{
  if (a.targets.empty()) throw AttackError("A6: needs a bottom-layer node target");
  const auto modes = a.param("mode", "both");
  for (const auto &name : a.targets)
  {
    auto [l, i] = bottom_target(w, name, AttackId::A6);
    auto &b = w.bottom(l);
    if (modes == "both" || modes == "readings")
    {
      b.relays[i]->set_tamper([&w, a](contracts::Reading &r) {
        if (active(w, a)) r.power *= 2;
      });
      for (auto j : b.meters_at[i]) w.mark(AttackId::A6, "x(new)", w.meters()[j].meter->id(), a.start, a.end + kGrace);
    }
    if (modes == "both" || modes == "firmware")
    {
      b.firmware_tamper[i] = [&w, a](Bytes &bundle) { return active(w, a) && flip_binary(bundle); };
      for (auto j : b.meters_at[i]) w.mark(AttackId::A6, "b(new)", w.meters()[j].meter->id(), a.start, a.end + kGrace);
    }
  }
}

void a7(const AttackScript &a, World &w)
{
  const auto kinds = split_list(a.param("kinds", "reading,firmware"));
  const auto targets = meter_targets(w, a);
  std::set<simnet::ActorId> actors;
  for (const auto &id : targets) actors.insert(w.meter(id).actor);

  if (std::count(kinds.begin(), kinds.end(), "reading"))
  {
    simnet::LinkPolicy p;
    p.label = "A7 readings";
    p.from = a.start;
    p.until = a.end;
    p.actors = actors;
    p.kinds = {simnet::MessageKind::reading};
    p.mutate = flip_reading;
    w.network().add_policy(std::move(p));
    for (const auto &id : targets) w.mark(AttackId::A7, "x(new)", id, a.start, a.end + kGrace);
  }
  if (std::count(kinds.begin(), kinds.end(), "firmware"))
  {
    simnet::LinkPolicy p;
    p.label = "A7 firmware";
    p.from = a.start;
    p.until = a.end;
    p.peers = actors;
    p.kinds = {simnet::MessageKind::firmware_bundle};
    p.mutate = flip_binary;
    w.network().add_policy(std::move(p));
    for (const auto &id : targets) w.mark(AttackId::A7, "b(new)", id, a.start, a.end + kGrace);
  }
}

void flood(const AttackScript &a, World &w)
{
  const std::string who = a.targets.empty() ? w.members().back().name : a.targets.front();
  w.member(who);
  const double rate = a.param_number("rate", 20);
  if (rate <= 0) throw AttackError("mempool-flood: rate must be positive");
  const auto step = std::max<SimTime>(1, static_cast<SimTime>(1000.0 / rate));
  for (SimTime t = a.start; t < a.end; t += step)
    w.network().at(t, w.mdms_actor(), [&w, who] {
      auto &m = w.member(who);
      w.submit_top(m.name, m.admin.secret_key, m.nonce++, contracts::calls::veto_firmware(1'000'000));
    });
}

}  // namespace

const char *to_string(AttackId id)
{
  for (const auto &[k, name] : kAttackNames)
    if (k == id) return name;
  return "?";
}

std::optional<AttackId> attack_from_string(std::string_view s)
{
  for (const auto &[k, name] : kAttackNames)
    if (s == name) return k;
  return std::nullopt;
}

const char *to_string(Detector d)
{
  switch (d)
  {
  case Detector::signature_check: return "signature-check";
  case Detector::chain_verify: return "chain-verify";
  case Detector::cooldown_veto: return "cooldown-veto";
  case Detector::anomaly_hook: return "anomaly-hook";
  case Detector::log_audit: return "log-audit";
  }
  return "?";
}

const char *to_string(Expectation e) { return e == Expectation::detected ? "detected" : "missed"; }

std::string AttackScript::param(const std::string &key, const std::string &fallback) const
{
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

double AttackScript::param_number(const std::string &key, double fallback) const
{
  auto it = params.find(key);
  if (it == params.end()) return fallback;
  try
  {
    return std::stod(it->second);
  }
  catch (const std::exception &)
  {
    throw AttackError(std::string(to_string(id)) + ": parameter " + key + " is not a number");
  }
}

void apply_attack(const AttackScript &script, World &world)
{
  switch (script.id)
  {
  case AttackId::A1: a1(script, world); break;
  case AttackId::A2: a2(script, world); break;
  case AttackId::A3: a3(script, world); break;
  case AttackId::A4: a4(script, world); break;
  case AttackId::A5: a5(script, world); break;
  case AttackId::A6: a6(script, world); break;
  case AttackId::A7: a7(script, world); break;
  case AttackId::mempool_flood: flood(script, world); break;
  case AttackId::byz_empty_spam:
  case AttackId::byz_censor:
  case AttackId::byz_vote_withhold:
  {
    const std::string chain = script.param("chain", "top");
    bool known = chain == "top";
    for (std::size_t l = 0; l < world.bottom_count(); ++l) known |= world.bottom(l).chain->id() == chain;
    if (!known) throw AttackError(std::string(to_string(script.id)) + ": unknown chain " + chain);
    break;
  }
  }
}

// ---------------------------------------------------------------------------
// Scoring

const std::vector<MatrixCell> &expected_matrix()
{
  using A = AttackId;
  using D = Detector;
  constexpr auto det = Expectation::detected;
  constexpr auto miss = Expectation::missed;
  static const std::vector<MatrixCell> cells = {
      {A::A1, "x(new)", D::signature_check, miss},
      {A::A1, "x(new)", D::chain_verify, miss},
      {A::A1, "x(new)", D::cooldown_veto, miss},
      {A::A1, "x(new)", D::anomaly_hook, det},
      {A::A1, "x(new)", D::log_audit, miss},
      {A::A2, "x(new)", D::signature_check, miss},
      {A::A2, "x(new)", D::anomaly_hook, det},
      {A::A2, "b(curr)", D::signature_check, det},
      {A::A2, "b(new)", D::signature_check, det},
      {A::A3, "x(new)", D::signature_check, det},
      {A::A3, "b(new)", D::signature_check, det},
      {A::A3, "b(log)", D::chain_verify, det},
      {A::A4, "x(log)", D::log_audit, det},
      {A::A4, "x(log)", D::chain_verify, det},
      {A::A5, "b(new)", D::cooldown_veto, det},
      {A::A5, "b(new)", D::signature_check, det},
      {A::A5, "sigma_x(new)", D::signature_check, miss},
      {A::A5, "sigma_x(new)", D::anomaly_hook, miss},
      {A::A6, "x(new)", D::signature_check, det},
      {A::A6, "b(new)", D::signature_check, det},
      {A::A7, "x(new)", D::signature_check, det},
      {A::A7, "b(new)", D::signature_check, det},
  };
  return cells;
}

namespace {

// A forged signature over a forged value surfaces as a reading event.
bool same_data(const std::string &cell, const std::string &event)
{
  return cell == event || (cell == "sigma_x(new)" && event == "x(new)");
}

}  // namespace

bool DetectionMatrix::all_match() const
{
  return std::all_of(cells.begin(), cells.end(), [](const auto &c) { return c.matches(); });
}

std::string DetectionMatrix::table() const
{
  std::ostringstream os;
  os << "attack  data type     detector         expected  observed  events  match\n";
  for (const auto &c : cells)
  {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-6s  %-12s  %-15s  %-8s  %-8s  %6zu  %s\n", to_string(c.cell.attack),
                  c.cell.data_type.c_str(), to_string(c.cell.detector), to_string(c.cell.expected),
                  to_string(c.observed), c.events, c.matches() ? "yes" : "NO");
    os << buf;
  }
  if (!unexpected.empty())
  {
    os << "\nattributed events outside the expected cells:\n";
    for (const auto &e : unexpected)
      os << "  " << e.attribution << " " << to_string(e.detector) << " " << e.data_type << " " << e.subject << " ("
         << e.detail << ")\n";
  }
  return os.str();
}

DetectionMatrix score_detection(const std::vector<DetectionEvent> &events, const std::vector<AttackScript> &attacks)
{
  std::set<std::string> present;
  for (const auto &a : attacks) present.insert(to_string(a.id));

  DetectionMatrix m;
  for (const auto &cell : expected_matrix())
  {
    if (!present.count(to_string(cell.attack))) continue;
    ScoredCell s{cell, Expectation::missed, 0};
    for (const auto &e : events)
      if (e.attribution == to_string(cell.attack) && e.detector == cell.detector && same_data(cell.data_type, e.data_type))
        ++s.events;
    if (s.events > 0) s.observed = Expectation::detected;
    m.cells.push_back(std::move(s));
  }
  for (const auto &e : events)
  {
    if (e.attribution.empty()) continue;
    const bool covered = std::any_of(expected_matrix().begin(), expected_matrix().end(), [&](const MatrixCell &c) {
      return to_string(c.attack) == e.attribution && c.detector == e.detector && same_data(c.data_type, e.data_type);
    });
    if (!covered) m.unexpected.push_back(e);
  }
  return m;
}

}  // namespace flbi::adversary
