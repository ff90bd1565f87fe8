#include "flbi/scenario.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace flbi;
using namespace flbi::adversary;
using flbi::scenario::ScenarioConfig;
using flbi::scenario::World;
using simnet::kMinute;
using simnet::kSecond;

namespace {

ScenarioConfig base(std::size_t meters, SimTime duration)
{
  ScenarioConfig c;
  c.name = "adversary";
  c.seed = 17;
  c.members = {{"oem", true}, {"a", false}, {"b", false}, {"c", false}};
  c.meters = meters;
  c.duration = duration;
  c.reading_interval = 30 * kSecond;
  c.cooldown = 2 * kMinute;
  return c;
}

AttackScript attack(AttackId id, std::vector<std::string> targets, SimTime start, SimTime end,
                    std::map<std::string, std::string> params = {})
{
  AttackScript a;
  a.id = id;
  a.targets = std::move(targets);
  a.start = start;
  a.end = end;
  a.params = std::move(params);
  return a;
}

std::size_t count(const std::vector<DetectionEvent> &events, Detector d, const std::string &attribution)
{
  return std::count_if(events.begin(), events.end(),
                       [&](const auto &e) { return e.detector == d && e.attribution == attribution; });
}

}  // namespace

TEST_CASE("attack and detector names round-trip")
{
  for (auto id : {AttackId::A1, AttackId::A2, AttackId::A3, AttackId::A4, AttackId::A5, AttackId::A6, AttackId::A7,
                  AttackId::byz_empty_spam, AttackId::byz_censor, AttackId::byz_vote_withhold,
                  AttackId::mempool_flood})
    CHECK(attack_from_string(to_string(id)) == id);
  CHECK_FALSE(attack_from_string("A8"));
  CHECK(std::string(to_string(Detector::cooldown_veto)) == "cooldown-veto");
}

TEST_CASE("reviewed fixture equals the expected matrix in code")
{
  std::ifstream in(std::string(FLBI_SOURCE_DIR) + "/tests/fixtures/expected_detection_matrix.tsv");
  REQUIRE(in);
  std::vector<std::string> fixture;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') fixture.push_back(line);
  std::vector<std::string> code;
  for (const auto &c : expected_matrix())
    code.push_back(std::string(to_string(c.attack)) + "\t" + c.data_type + "\t" + to_string(c.detector) + "\t" +
                   to_string(c.expected));
  CHECK(fixture == code);
}

TEST_CASE("score_detection")
{
  std::vector<AttackScript> attacks = {attack(AttackId::A1, {}, 0, 1), attack(AttackId::A5, {}, 0, 1)};
  std::vector<DetectionEvent> events = {
      {10, Detector::anomaly_hook, "x(new)", "meter-0", "power z=9", "A1"},
      {11, Detector::signature_check, "b(new)", "meter-1", "bad-binary-signature", "A5"},
      {12, Detector::cooldown_veto, "b(new)", "abcd", "vetoed", "A5"},
      {13, Detector::log_audit, "x(log)", "node-0-0", "stray", "A1"},
      {14, Detector::signature_check, "x(new)", "meter-9", "honest noise", ""},
  };
  auto m = score_detection(events, attacks);
  // Only the two attacks present are scored.
  CHECK(m.cells.size() == 9);
  CHECK(m.all_match());
  REQUIRE(m.unexpected.size() == 1);
  CHECK(m.unexpected[0].detector == Detector::log_audit);

  // A signature-check hit on a forged reading counts against the TPM-key cell.
  events.push_back({15, Detector::signature_check, "x(new)", "meter-2", "bad-tpm-signature", "A5"});
  auto m2 = score_detection(events, attacks);
  CHECK_FALSE(m2.all_match());
  CHECK(m2.table().find("NO") != std::string::npos);
}

TEST_CASE("attack parameters")
{
  auto a = attack(AttackId::A1, {}, 0, 1, {{"scale", "0.25"}, {"bad", "x"}});
  CHECK(a.param_number("scale", 1) == doctest::Approx(0.25));
  CHECK(a.param_number("missing", 3) == 3);
  CHECK(a.param("missing", "d") == "d");
  CHECK_THROWS_AS(a.param_number("bad", 1), AttackError);
}

TEST_CASE("target mismatch is an error")
{
  auto c = base(4, kMinute);
  c.attacks.push_back(attack(AttackId::A4, {"meter-0"}, 0, kMinute));
  World w(c);
  CHECK_THROWS_AS(w.start(), AttackError);

  auto c2 = base(4, kMinute);
  c2.attacks.push_back(attack(AttackId::A6, {"top-oem"}, 0, kMinute));
  World w2(c2);
  CHECK_THROWS_AS(w2.start(), AttackError);
}

TEST_CASE("A1: input distortion is flagged only by the anomaly hook")
{
  auto c = base(4, 20 * kMinute);
  c.attacks.push_back(attack(AttackId::A1, {"meter-1"}, 12 * kMinute, 15 * kMinute));
  World w(c);
  w.run();
  const auto &ev = w.detections();
  CHECK(count(ev, Detector::anomaly_hook, "A1") >= 1);
  for (auto d : kDetectors)
    if (d != Detector::anomaly_hook) CHECK(count(ev, d, "A1") == 0);
  // The distorted readings carry valid signatures and are committed.
  CHECK(w.meter("meter-1").stats.committed == w.meter("meter-1").stats.sent);
  for (const auto &e : ev) CHECK(e.attribution == "A1");
}

TEST_CASE("A4: a node's chain validation fails at the mutated height")
{
  auto c = base(8, 6 * kMinute);
  c.attacks.push_back(attack(AttackId::A4, {"node-0-2"}, 3 * kMinute, 6 * kMinute));
  World w(c);
  w.run();
  std::optional<std::uint64_t> mutated;
  for (const auto &line : w.transcript())
    if (auto at = line.find("height "); line.find("A4 rewrote") != std::string::npos)
      mutated = std::stoull(line.substr(at + 7));
  REQUIRE(mutated);
  auto &b = w.bottom(0);
  CHECK(consensus::validate_ledger(b.chain->node(2).ledger(), "bottom-0", b.chain->node_keys()) == mutated);
  CHECK_FALSE(consensus::validate_ledger(b.chain->node(0).ledger(), "bottom-0", b.chain->node_keys()));
  CHECK(count(w.detections(), Detector::chain_verify, "A4") >= 1);
  CHECK(count(w.detections(), Detector::log_audit, "A4") >= 1);
  // Other replicas still agree.
  CHECK_FALSE(w.safety_violation());
}

TEST_CASE("signed data tampered in transit or at rest is always caught by a cryptographic detector")
{
  struct Case
  {
    AttackScript script;
    std::vector<std::string> expect_types;
  };
  const SimTime s = 4 * kMinute, e = 9 * kMinute;
  std::vector<Case> cases = {
      {attack(AttackId::A3, {"meter-1"}, s, e), {"x(new)", "b(new)", "b(log)"}},
      {attack(AttackId::A4, {"node-0-1"}, s, e), {"x(log)"}},
      {attack(AttackId::A6, {"node-0-3"}, s, e), {"x(new)", "b(new)"}},
      {attack(AttackId::A7, {"meter-2"}, s, e), {"x(new)", "b(new)"}},
  };
  for (auto &tc : cases)
  {
    INFO(to_string(tc.script.id));
    auto c = base(8, 14 * kMinute);
    c.cooldown = kMinute;
    c.updates.push_back({s, 2, 0});  // an honest release inside the window
    c.attacks.push_back(tc.script);
    World w(c);
    w.run();
    for (const auto &type : tc.expect_types)
    {
      INFO(type);
      auto hit = std::any_of(w.detections().begin(), w.detections().end(), [&](const DetectionEvent &d) {
        return d.attribution == to_string(tc.script.id) && d.data_type == type &&
               (d.detector == Detector::signature_check || d.detector == Detector::chain_verify ||
                d.detector == Detector::log_audit);
      });
      CHECK(hit);
    }
  }
}

TEST_CASE("A5 containment depends on the veto actor")
{
  for (bool veto : {true, false})
  {
    INFO("veto actor " << veto);
    auto c = base(4, 8 * kMinute);
    c.veto_actor = veto;
    c.attacks.push_back(attack(AttackId::A5, {}, kMinute, 8 * kMinute, {{"leak", "admin-key"}}));
    World w(c);
    w.run();
    REQUIRE(w.releases().size() == 1);
    const auto &rel = w.releases()[0];
    CHECK(rel.malicious);
    auto id = w.top_state().find_firmware(rel.digest);
    REQUIRE(id);
    const auto &rec = w.top_state().firmware(*id);
    const auto tip = w.top().node(w.top().reference_node()).tip_height();
    CHECK(rec.vetoed == veto);
    CHECK((rec.status_at(tip) == contracts::FirmwareStatus::valid) == !veto);
    // Unvetoed, the record is signed like any valid release and meters take it.
    for (auto &m : w.meters())
      CHECK(m.meter->active_version() == (veto ? rel.spec.version - 1 : rel.spec.version));
  }
}

TEST_CASE("A5 with a leaked TPM key is an acknowledged miss")
{
  auto c = base(4, 10 * kMinute);
  c.attacks.push_back(attack(AttackId::A5, {"meter-3"}, 6 * kMinute, 7 * kMinute, {{"leak", "tpm-key"}}));
  World w(c);
  w.run();
  auto m = score_detection(w.detections(), c.attacks);
  for (const auto &cell : m.cells)
    if (cell.cell.data_type == "sigma_x(new)") CHECK(cell.observed == Expectation::missed);
  // The forged reading was accepted on chain.
  CHECK(w.bottom_state(0).measurements_of("meter-3").size() > w.meter("meter-3").stats.sent);
}

TEST_CASE("A5 with nothing leaked does nothing")
{
  auto c = base(4, 4 * kMinute);
  c.attacks.push_back(attack(AttackId::A5, {}, kMinute, 4 * kMinute, {{"leak", ""}}));
  World w(c);
  w.run();
  CHECK(w.releases().empty());
  CHECK(w.detections().empty());
  CHECK(w.top_state().firmware_log().empty());
}

TEST_CASE("A2 partition tampering is caught at boot")
{
  auto c = base(4, 10 * kMinute);
  c.attacks.push_back(attack(AttackId::A2, {"meter-0"}, 2 * kMinute, 6 * kMinute, {{"mode", "flash-new,flash-current"}}));
  World w(c);
  w.run();
  std::set<std::string> types;
  for (const auto &e : w.detections())
    if (e.attribution == "A2" && e.detector == Detector::signature_check) types.insert(e.data_type);
  CHECK(types == std::set<std::string>{"b(curr)", "b(new)"});
  // Both partitions unusable: the meter halts rather than run altered code.
  CHECK_FALSE(w.meter("meter-0").meter->running());
}

TEST_CASE("mempool flood does not stop a veto")
{
  auto c = base(4, 8 * kMinute);
  c.block_capacity = 64;
  c.attacks.push_back(attack(AttackId::mempool_flood, {"c"}, 0, 8 * kMinute, {{"rate", "50"}}));
  c.attacks.push_back(attack(AttackId::A5, {}, kMinute, 8 * kMinute, {{"leak", "admin-key"}}));
  World w(c);
  w.run();
  REQUIRE(w.releases().size() == 1);
  auto id = w.top_state().find_firmware(w.releases()[0].digest);
  REQUIRE(id);
  CHECK(w.top_state().firmware(*id).vetoed);
}
