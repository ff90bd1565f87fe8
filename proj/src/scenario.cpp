#include "flbi/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flbi::scenario {

using nlohmann::json;
using nlohmann::ordered_json;
using simnet::kMinute;
using simnet::kSecond;

std::uint64_t ScenarioConfig::cooldown_blocks() const
{
  return static_cast<std::uint64_t>((cooldown + top_block_interval - 1) / top_block_interval);
}

void ScenarioConfig::validate() const
{
  auto fail = [](const std::string &msg) { throw ScenarioError(msg); };
  if (members.empty()) fail("consortium has no members");
  const auto n = static_cast<std::uint32_t>(members.size());
  if (declared_f && n < 3 * *declared_f + 1)
    fail("consortium of " + std::to_string(n) + " cannot tolerate f = " + std::to_string(*declared_f) +
         " (needs n >= 3f+1)");
  if (n < 4) fail("consortium needs at least 4 members to tolerate one fault");
  std::set<std::string> names;
  for (const auto &m : members)
    if (m.name.empty() || !names.insert(m.name).second) fail("member names must be unique and non-empty");
  if (bottom_chains == 0 && meters > 0) fail("meters need a bottom-layer chain");
  if (declared_bottom_f && nodes_per_chain < 3 * *declared_bottom_f + 1)
    fail("bottom chains of " + std::to_string(nodes_per_chain) + " nodes cannot tolerate f = " +
         std::to_string(*declared_bottom_f) + " (needs n >= 3f+1)");
  if (bottom_chains > 0 && nodes_per_chain < 4) fail("bottom chains need at least 4 nodes");
  if (!owners.empty())
  {
    if (owners.size() != bottom_chains * nodes_per_chain) fail("owners must list every bottom node");
    for (const auto &o : owners)
      if (!names.count(o)) fail("node owner " + o + " is not a consortium member");
  }
  if (reading_interval <= 0) fail("reading interval must be positive");
  if (top_block_interval <= 0 || bottom_block_interval <= 0) fail("block intervals must be positive");
  if (cooldown < 0) fail("cooldown must not be negative");
  if (duration <= 0) fail("duration must be positive");
  for (const auto &u : updates)
    if (u.version <= initial_version) fail("firmware updates must raise the version");
  for (const auto &a : attacks)
    if (a.end < a.start) fail(std::string("attack ") + adversary::to_string(a.id) + " window ends before it starts");
  for (const auto &p : policies)
    if (p.until < p.from) fail("link policy ends before it starts");
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

SimTime seconds(const json &v) { return static_cast<SimTime>(std::llround(v.get<double>() * 1000.0)); }

void check_keys(const json &obj, std::initializer_list<const char *> allowed, const std::string &where, bool strict)
{
  if (!obj.is_object()) throw ScenarioError(where + " must be an object");
  if (!strict) return;
  for (const auto &[key, _] : obj.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return key == a; }))
      throw ScenarioError("unknown key '" + key + "' in " + where);
}

std::map<std::string, consensus::Behavior> parse_behaviors(const json &obj)
{
  std::map<std::string, consensus::Behavior> out;
  for (const auto &[node, value] : obj.items())
  {
    auto b = consensus::behavior_from_string(value.get<std::string>());
    if (!b) throw ScenarioError("unknown behavior '" + value.get<std::string>() + "' for " + node);
    out[node] = *b;
  }
  return out;
}

ScenarioConfig from_json(const json &doc, bool strict)
{
  ScenarioConfig c;
  check_keys(doc,
             {"schema", "name", "description", "seed", "duration_s", "consortium", "bottom", "meters", "network",
              "firmware", "link_policies", "attacks", "assertions"},
             "scenario", strict);
  if (doc.value("schema", "") != kSchema)
    throw ScenarioError("schema must be \"" + std::string(kSchema) + "\"");
  c.name = doc.value("name", c.name);
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("duration_s")) c.duration = seconds(doc["duration_s"]);

  const json &cons = doc.at("consortium");
  check_keys(cons, {"members", "f", "block_interval_s", "behaviors"}, "consortium", strict);
  for (const auto &m : cons.at("members"))
  {
    check_keys(m, {"name", "oem"}, "member", strict);
    c.members.push_back({m.at("name").get<std::string>(), m.value("oem", false)});
  }
  if (cons.contains("f")) c.declared_f = cons["f"].get<std::uint32_t>();
  if (cons.contains("block_interval_s")) c.top_block_interval = seconds(cons["block_interval_s"]);
  if (cons.contains("behaviors")) c.behaviors = parse_behaviors(cons["behaviors"]);

  if (doc.contains("bottom"))
  {
    const json &b = doc["bottom"];
    check_keys(b, {"chains", "nodes_per_chain", "f", "owners", "block_interval_s", "block_capacity", "behaviors"},
               "bottom", strict);
    c.bottom_chains = b.value("chains", c.bottom_chains);
    c.nodes_per_chain = b.value("nodes_per_chain", c.nodes_per_chain);
    if (b.contains("f")) c.declared_bottom_f = b["f"].get<std::uint32_t>();
    if (b.contains("owners")) c.owners = b["owners"].get<std::vector<std::string>>();
    if (b.contains("block_interval_s")) c.bottom_block_interval = seconds(b["block_interval_s"]);
    c.block_capacity = b.value("block_capacity", c.block_capacity);
    if (b.contains("behaviors"))
      for (const auto &[k, v] : parse_behaviors(b["behaviors"])) c.behaviors[k] = v;
  }
  if (doc.contains("meters"))
  {
    const json &m = doc["meters"];
    check_keys(m, {"count", "reading_interval_s"}, "meters", strict);
    c.meters = m.value("count", c.meters);
    if (m.contains("reading_interval_s")) c.reading_interval = seconds(m["reading_interval_s"]);
  }
  if (doc.contains("network"))
  {
    const json &n = doc["network"];
    check_keys(n, {"latency_ms", "jitter_ms"}, "network", strict);
    c.latency.base = n.value("latency_ms", c.latency.base);
    c.latency.jitter = n.value("jitter_ms", c.latency.jitter);
  }
  if (doc.contains("firmware"))
  {
    const json &f = doc["firmware"];
    check_keys(f, {"cooldown_min", "initial_version", "veto_actor", "updates"}, "firmware", strict);
    if (f.contains("cooldown_min"))
      c.cooldown = static_cast<SimTime>(std::llround(f["cooldown_min"].get<double>() * kMinute));
    c.initial_version = f.value("initial_version", c.initial_version);
    c.veto_actor = f.value("veto_actor", c.veto_actor);
    for (const auto &u : f.value("updates", json::array()))
    {
      check_keys(u, {"at_s", "version", "membership_updates"}, "firmware update", strict);
      c.updates.push_back({seconds(u.at("at_s")), u.at("version").get<std::uint64_t>(),
                           u.value("membership_updates", std::size_t{0})});
    }
  }
  for (const auto &p : doc.value("link_policies", json::array()))
  {
    check_keys(p, {"type", "chain", "split", "actors", "drop", "from_s", "until_s"}, "link policy", strict);
    PolicySpec s;
    const std::string type = p.at("type").get<std::string>();
    if (type == "partition")
    {
      s.type = PolicySpec::Type::partition;
      s.chain = p.at("chain").get<std::string>();
      s.split = p.at("split").get<std::size_t>();
    }
    else if (type == "jam")
    {
      s.type = PolicySpec::Type::jam;
      s.actors = p.at("actors").get<std::vector<std::string>>();
      s.drop = p.value("drop", false);
    }
    else
      throw ScenarioError("unknown link policy type '" + type + "'");
    s.from = seconds(p.at("from_s"));
    s.until = seconds(p.at("until_s"));
    c.policies.push_back(std::move(s));
  }
  for (const auto &a : doc.value("attacks", json::array()))
  {
    check_keys(a, {"id", "targets", "params", "window_s"}, "attack", strict);
    AttackScript s;
    const std::string id = a.at("id").get<std::string>();
    auto parsed = adversary::attack_from_string(id);
    if (!parsed) throw ScenarioError("unknown attack id '" + id + "'");
    s.id = *parsed;
    s.targets = a.value("targets", std::vector<std::string>{});
    const json params = a.value("params", json::object());
    for (const auto &[k, v] : params.items())
      s.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
    if (a.contains("window_s"))
    {
      s.start = seconds(a["window_s"].at(0));
      s.end = seconds(a["window_s"].at(1));
    }
    else
    {
      s.start = 0;
      s.end = c.duration;
    }
    c.attacks.push_back(std::move(s));
  }
  if (doc.contains("assertions"))
  {
    const json &x = doc["assertions"];
    check_keys(x,
               {"safety", "min_commit_fraction", "malicious_firmware_vetoed", "meters_on_version", "detection_matrix",
                "chain", "no_commits_between_s", "commits_after_s", "veto_within_blocks"},
               "assertions", strict);
    Assertions &as = c.assertions;
    as.safety = x.value("safety", true);
    if (x.contains("min_commit_fraction")) as.min_commit_fraction = x["min_commit_fraction"].get<double>();
    if (x.contains("malicious_firmware_vetoed")) as.malicious_firmware_vetoed = x["malicious_firmware_vetoed"].get<bool>();
    if (x.contains("meters_on_version")) as.meters_on_version = x["meters_on_version"].get<std::uint64_t>();
    as.detection_matrix = x.value("detection_matrix", false);
    as.quiet_chain = x.value("chain", std::string{});
    if (x.contains("no_commits_between_s"))
      as.no_commits_between = {seconds(x["no_commits_between_s"].at(0)), seconds(x["no_commits_between_s"].at(1))};
    if (x.contains("commits_after_s")) as.commits_after = seconds(x["commits_after_s"]);
    if (x.contains("veto_within_blocks")) as.veto_within_blocks = x["veto_within_blocks"].get<std::uint64_t>();
  }
  c.validate();
  return c;
}

}  // namespace

ScenarioConfig parse_scenario(const std::string &text, bool strict)
{
  json doc;
  try
  {
    doc = json::parse(text);
  }
  catch (const json::parse_error &e)
  {
    throw ScenarioError(std::string("parse error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  try
  {
    return from_json(doc, strict);
  }
  catch (const json::exception &e)
  {
    throw ScenarioError(std::string("invalid scenario: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path &path, bool strict)
{
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try
  {
    return parse_scenario(ss.str(), strict);
  }
  catch (const ScenarioError &e)
  {
    throw ScenarioError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

namespace {

SimTime percentile(std::vector<SimTime> v, double p)
{
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()))) - 1;
  return v[std::min(k, v.size() - 1)];
}

SimTime max_commit_gap(const std::map<std::uint64_t, SimTime> &times)
{
  SimTime gap = 0, last = 0;
  for (const auto &[h, t] : times)
  {
    gap = std::max(gap, t - last);
    last = t;
  }
  return gap;
}

std::string fixed3(double v)
{
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

bool Report::passed() const
{
  return std::all_of(assertions.begin(), assertions.end(), [](const auto &a) { return a.ok; });
}

void Report::write(const std::filesystem::path &dir) const
{
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.jsonl");
    for (const auto &line : metrics) out << line << '\n';
  }
  for (const auto &[chain, text] : ledgers)
  {
    std::ofstream out(dir / ("ledger-" + chain + ".tsv"));
    out << text;
  }
  {
    std::ofstream out(dir / "detection_matrix.txt");
    out << matrix.table();
  }
  {
    std::ofstream out(dir / "summary.txt");
    out << summary;
  }
}

Report build_report(World &w)
{
  Report r;
  const ScenarioConfig &cfg = w.config();
  r.name = cfg.name;
  r.seed = cfg.seed;
  r.final_time = w.network().now();
  const double seconds_run = static_cast<double>(r.final_time) / 1000.0;

  auto emit = [&](const ordered_json &j) { r.metrics.push_back(j.dump()); };
  emit({{"type", "run"}, {"scenario", cfg.name}, {"seed", cfg.seed}, {"sim_time_ms", r.final_time},
        {"cooldown_blocks", cfg.cooldown_blocks()}, {"messages", w.network().stats().messages_delivered},
        {"dropped", w.network().stats().messages_dropped}, {"trace", w.network().trace_digest().hex()}});

  std::ostringstream summary;
  summary << "scenario " << cfg.name << " (seed " << cfg.seed << ")\n";
  summary << "simulated time " << r.final_time / 1000 << " s\n\n";
  summary << "chain        nodes  height  txs      tx/sim-s  max-gap-ms  safety\n";

  auto chain_line = [&](consensus::Chain &chain, std::uint64_t measurements, const std::vector<SimTime> *lat) {
    const auto &ref = chain.node(chain.reference_node());
    std::uint64_t txs = 0;
    for (const auto &b : ref.ledger()) txs += b.transactions.size();
    const auto violation = chain.safety_violation();
    ordered_json j = {{"type", "chain"},
                      {"chain", chain.id()},
                      {"nodes", chain.size()},
                      {"height", ref.tip_height()},
                      {"committed_txs", txs},
                      {"committed_measurements", measurements},
                      {"throughput_tx_per_sim_s", fixed3(seconds_run > 0 ? txs / seconds_run : 0.0)},
                      {"liveness_gap_ms", max_commit_gap(chain.commit_times())},
                      {"safety", violation ? "violated at height " + std::to_string(*violation) : "ok"}};
    if (lat)
      j["commit_latency_ms"] = {{"p50", percentile(*lat, 0.5)}, {"p90", percentile(*lat, 0.9)},
                                {"max", percentile(*lat, 1.0)}};
    std::vector<std::string> behaviors;
    for (std::uint32_t i = 0; i < chain.size(); ++i)
      if (!chain.node(i).honest())
        behaviors.push_back(chain.node(i).name() + ":" + consensus::to_string(chain.node(i).behavior()));
    j["byzantine"] = behaviors;
    emit(j);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %5u  %6llu  %-7llu  %8s  %10lld  %s\n", chain.id().c_str(), chain.size(),
                  static_cast<unsigned long long>(ref.tip_height()), static_cast<unsigned long long>(txs),
                  fixed3(seconds_run > 0 ? txs / seconds_run : 0.0).c_str(),
                  static_cast<long long>(max_commit_gap(chain.commit_times())), violation ? "VIOLATED" : "ok");
    summary << buf;
    r.ledgers[chain.id()] = consensus::transcript(ref.ledger());
  };
  chain_line(w.top(), 0, nullptr);
  for (std::size_t l = 0; l < w.bottom_count(); ++l)
  {
    chain_line(*w.bottom(l).chain, w.committed_[l], &w.latencies_[l]);
    r.committed_measurements += w.committed_[l];
  }

  for (const auto &chain : w.placement().chains())
  {
    ordered_json counts = ordered_json::object();
    for (const auto &m : w.placement().members()) counts[m] = w.placement().count(m, chain);
    emit({{"type", "placement"}, {"chain", chain}, {"nodes_by_member", counts}});
  }
  emit({{"type", "placement_max_fraction"}, {"value", placement::max_fraction(w.placement()).str()}});

  std::uint64_t sent = 0, committed = 0;
  for (auto &m : w.meters())
  {
    sent += m.stats.sent;
    committed += m.stats.committed;
    const auto v = m.meter->active_version();
    emit({{"type", "meter"},
          {"meter", m.meter->id()},
          {"running", m.meter->running()},
          {"version", v ? ordered_json(*v) : ordered_json(nullptr)},
          {"readings_sent", m.stats.sent},
          {"readings_committed", m.stats.committed},
          {"max_gap_ms", m.stats.max_gap}});
  }

  const auto &top_state = w.top_state();
  for (const auto &rec : top_state.firmware_log())
  {
    const std::uint64_t tip = w.top().node(w.top().reference_node()).tip_height();
    emit({{"type", "firmware"},
          {"record", rec.id},
          {"version", rec.version},
          {"digest", rec.binary_digest.hex()},
          {"proposal_height", rec.proposal_height},
          {"cooldown_blocks", rec.cooldown_T},
          {"status", contracts::to_string(rec.status_at(tip))},
          {"vetoes", std::vector<std::string>(rec.vetoes.begin(), rec.vetoes.end())}});
  }
  emit({{"type", "epochs"}, {"count", top_state.epochs().size()},
        {"chain_links", top_state.canonical_chain().links.size()}});

  for (const auto &e : w.detections())
    emit({{"type", "detection"},
          {"time_ms", e.time},
          {"detector", adversary::to_string(e.detector)},
          {"data_type", e.data_type},
          {"subject", e.subject},
          {"detail", e.detail},
          {"attribution", e.attribution}});

  r.matrix = adversary::score_detection(w.detections(), cfg.attacks);

  // Assertions.
  const Assertions &as = cfg.assertions;
  auto check = [&](std::string name, bool ok, std::string detail) {
    r.assertions.push_back({std::move(name), ok, std::move(detail)});
  };
  if (as.safety)
  {
    auto v = w.safety_violation();
    check("safety", !v, v ? "divergent commits at height " + std::to_string(*v) : "no divergent commits");
  }
  if (as.min_commit_fraction)
  {
    const double frac = sent ? static_cast<double>(committed) / static_cast<double>(sent) : 1.0;
    check("min_commit_fraction", frac >= *as.min_commit_fraction,
          std::to_string(committed) + "/" + std::to_string(sent) + " readings committed");
  }
  if (as.malicious_firmware_vetoed)
  {
    bool any = false, all_vetoed = true;
    for (const auto &rel : w.releases())
      if (rel.malicious)
      {
        any = true;
        auto id = top_state.find_firmware(rel.digest);
        const bool vetoed = id && top_state.firmware(*id).vetoed;
        all_vetoed = all_vetoed && vetoed;
      }
    const bool ok = any && all_vetoed == *as.malicious_firmware_vetoed;
    check("malicious_firmware_vetoed", ok,
          !any ? "no malicious release was posted" : all_vetoed ? "malicious record vetoed" : "malicious record not vetoed");
  }
  if (as.meters_on_version)
  {
    std::size_t off = 0;
    for (auto &m : w.meters())
      if (m.meter->active_version() != *as.meters_on_version) ++off;
    check("meters_on_version", off == 0,
          std::to_string(off) + " meters not running version " + std::to_string(*as.meters_on_version));
  }
  if (as.detection_matrix)
  {
    std::size_t mismatched = 0;
    for (const auto &c : r.matrix.cells) mismatched += !c.matches();
    check("detection_matrix", mismatched == 0 && !r.matrix.cells.empty(),
          std::to_string(r.matrix.cells.size() - mismatched) + "/" + std::to_string(r.matrix.cells.size()) +
              " cells match");
  }
  consensus::Chain *quiet = nullptr;
  if (as.quiet_chain == "top")
    quiet = &w.top();
  else
    for (std::size_t l = 0; l < w.bottom_count(); ++l)
      if (w.bottom(l).chain->id() == as.quiet_chain) quiet = w.bottom(l).chain.get();
  if (as.no_commits_between)
  {
    std::size_t n = 0;
    if (quiet)
      for (const auto &[h, t] : quiet->commit_times())
        n += t > as.no_commits_between->first && t <= as.no_commits_between->second;
    check("no_commits_between", quiet && n == 0, std::to_string(n) + " commits inside the window");
  }
  if (as.commits_after)
  {
    std::size_t n = 0;
    if (quiet)
      for (const auto &[h, t] : quiet->commit_times()) n += t > *as.commits_after;
    check("commits_after", quiet && n > 0, std::to_string(n) + " commits after the window");
  }
  if (as.veto_within_blocks)
  {
    bool any = false, ok = true;
    std::string detail;
    for (const auto &rec : top_state.firmware_log())
    {
      if (!rec.vetoed) continue;
      any = true;
      auto it = w.veto_commit_height_.find(rec.id);
      const std::uint64_t blocks = it == w.veto_commit_height_.end() ? ~0ull : it->second - rec.proposal_height;
      ok = ok && blocks <= *as.veto_within_blocks;
      detail += "record " + std::to_string(rec.id) + " vetoed " + std::to_string(blocks) + " blocks after proposal; ";
    }
    check("veto_within_blocks", any && ok, any ? detail : "no vetoed record");
  }

  for (const auto &a : r.assertions)
    emit({{"type", "assertion"}, {"name", a.name}, {"ok", a.ok}, {"detail", a.detail}});

  summary << "\nreadings committed " << committed << " of " << sent << " sent\n";
  summary << "detections " << w.detections().size() << "\n";
  summary << "firmware records " << top_state.firmware_log().size() << ", consortium epochs "
          << top_state.epochs().size() << "\n\n";
  for (const auto &a : r.assertions)
    summary << (a.ok ? "PASS " : "FAIL ") << a.name << ": " << a.detail << "\n";
  summary << "\nresult " << (r.passed() ? "PASS" : "FAIL") << "\n";
  r.summary = summary.str();
  return r;
}

Report run(const ScenarioConfig &config)
{
  World world(config);
  world.run();
  return build_report(world);
}

// ---------------------------------------------------------------------------

DemoResult demo_firmware_update(const DemoOptions &options)
{
  ScenarioConfig c;
  c.name = "demo-firmware";
  c.seed = options.seed;
  c.members = {{"oem", true}, {"utility-a", false}, {"utility-b", false}, {"utility-c", false}};
  c.bottom_chains = 1;
  c.nodes_per_chain = 4;
  c.meters = 1;
  c.reading_interval = 10 * kMinute;
  c.cooldown = kMinute;
  c.duration = 4 * simnet::kMinute * 60;
  c.updates = {{10 * kSecond, options.version, options.membership_updates}};

  World world(c);
  if (options.corrupt_link)
  {
    const std::size_t link = *options.corrupt_link;
    simnet::LinkPolicy p;
    p.label = "corrupt chain link";
    p.until = c.duration;
    p.kinds = {simnet::MessageKind::firmware_bundle};
    p.peers = {world.meters()[0].actor};
    p.mutate = [link](Bytes &payload) {
      auto b = sigchain::decode_bundle(payload);
      if (!b || b->chain.links.size() < link) return false;
      b->chain.links[link - 1].signature.bytes[40] ^= 0x01;
      payload = sigchain::encode_bundle(*b);
      return true;
    };
    world.network().add_policy(std::move(p));
  }

  DemoResult r;
  auto &meter = *world.meters()[0].meter;
  world.run_until(
      [&] {
        if (meter.boot_count() > 1 && !meter.reboot_pending()) return true;
        return false;
      },
      c.duration);
  r.booted_new = meter.last_boot().outcome == bootloader::Outcome::booted_new;
  r.meter_version = meter.active_version().value_or(0);
  r.chain_links = world.top_state().canonical_chain().links.size();
  r.transcript = world.transcript();
  return r;
}

CapacityReport capacity_report(std::uint64_t throughput, std::uint64_t interval_s, std::uint64_t chains)
{
  if (throughput == 0 || interval_s == 0 || chains == 0)
    throw std::invalid_argument("capacity inputs must be positive");
  CapacityReport r;
  r.meters_per_chain = throughput * interval_s;
  r.chains = chains;
  r.total_meters = r.meters_per_chain * chains;
  return r;
}

}  // namespace flbi::scenario
