#pragma once

// Deterministic discrete-event network.
//
// Events are totally ordered by (delivery time, sequence number); the
// sequence number is assigned at scheduling time, so two runs that schedule
// the same events in the same order deliver them identically. Message
// payloads are serialized bytes: link policies (jams, partitions, mutation
// hooks) only ever see and rewrite those bytes.

#include "flbi/bytes.hpp"
#include "flbi/crypto.hpp"
#include "flbi/rng.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace flbi::simnet {

using SimTime = std::int64_t;  // milliseconds
using ActorId = std::uint32_t;

inline constexpr SimTime kSecond = 1000;
inline constexpr SimTime kMinute = 60 * kSecond;

enum class MessageKind : std::uint8_t
{
  transaction,
  proposal,
  vote,
  sync_request,
  sync_response,
  firmware_bundle,
  reading,
  control,
};

const char *to_string(MessageKind kind);

struct Envelope
{
  SimTime sent{0};
  SimTime delivery{0};
  std::uint64_t seq{0};
  ActorId source{0};
  ActorId destination{0};
  MessageKind kind{MessageKind::control};
  std::shared_ptr<const Bytes> payload;
};

using Handler = std::function<void(const Envelope &)>;
using TimerFn = std::function<void()>;

struct LatencyModel
{
  SimTime base{5};
  SimTime jitter{0};  // uniform extra delay in [0, jitter]
};

enum class DropMode
{
  none,
  jam_until,
  partition,
};

/// One rule applied to every message sent while it is active.
///   jam_until: traffic from or to `actors` is held until `until` (or
///              dropped when `drop` is set).
///   partition: traffic between `actors` and `peers` (both directions)
///              is dropped until `until`.
///   mutate:    when set, applied to payloads from `actors` (any source
///              when empty) to `peers` (any destination when empty) whose
///              kind is in `kinds` (any when empty).
struct LinkPolicy
{
  std::string label;
  SimTime from{0};
  SimTime until{0};
  DropMode drop_mode{DropMode::none};
  bool drop{false};
  std::set<ActorId> actors;
  std::set<ActorId> peers;
  std::vector<MessageKind> kinds;
  std::function<bool(Bytes &)> mutate;
};

class SimulationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct RunReport
{
  SimTime final_time{0};
  std::uint64_t events_processed{0};
  std::uint64_t messages_sent{0};
  std::uint64_t messages_delivered{0};
  std::uint64_t messages_dropped{0};
  std::uint64_t messages_mutated{0};
  bool quiescent{false};
};

class Network
{
public:
  explicit Network(std::uint64_t seed, LatencyModel default_latency = {});

  ActorId add_actor(std::string name, Handler handler = {});
  void set_handler(ActorId actor, Handler handler);
  const std::string &name(ActorId actor) const;
  std::size_t actor_count() const { return actors_.size(); }

  // Egress latency for messages sent by `actor`.
  void set_latency(ActorId actor, LatencyModel latency);
  void add_policy(LinkPolicy policy);

  SimTime now() const { return now_; }

  // Policy-aware send. Returns false when the message was dropped.
  bool send(ActorId source, ActorId destination, MessageKind kind, std::shared_ptr<const Bytes> payload);
  bool send(ActorId source, ActorId destination, MessageKind kind, Bytes payload)
  {
    return send(source, destination, kind, std::make_shared<const Bytes>(std::move(payload)));
  }

  // Raw scheduling, bypassing policies. Throws for times in the past.
  void schedule(Envelope envelope);
  void at(SimTime when, ActorId actor, TimerFn fn);
  void after(SimTime delay, ActorId actor, TimerFn fn) { at(now_ + delay, actor, std::move(fn)); }

  // Processes every event with delivery time <= limit, then sets now = limit.
  RunReport run_until(SimTime limit);
  // Processes events until the queue is empty or `limit` is reached.
  RunReport run_until_quiescent(SimTime limit);
  // Processes events until `done()` holds, the queue empties, or `limit`.
  // Returns whether `done()` held.
  bool run_while_not(const std::function<bool()> &done, SimTime limit);

  bool idle() const { return queue_.empty(); }
  const RunReport &stats() const { return stats_; }
  crypto::Digest trace_digest() const;

  // Events at one timestamp beyond this count abort the run.
  void set_livelock_budget(std::uint64_t budget) { livelock_budget_ = budget; }

private:
  struct Timer
  {
    ActorId actor;
    TimerFn fn;
  };
  struct Queued
  {
    SimTime time;
    std::uint64_t seq;
    std::variant<Envelope, Timer> item;
    bool operator>(const Queued &o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };
  struct Actor
  {
    std::string name;
    Handler handler;
    LatencyModel latency;
    bool custom_latency{false};
  };

  void step();
  void record_trace(const Envelope &e);

  std::vector<Actor> actors_;
  std::vector<LinkPolicy> policies_;
  std::priority_queue<Queued, std::vector<Queued>, std::greater<>> queue_;
  LatencyModel default_latency_;
  Rng rng_;
  SimTime now_{0};
  std::uint64_t next_seq_{0};
  std::uint64_t same_time_events_{0};
  std::uint64_t livelock_budget_{50'000'000};
  RunReport stats_;
  std::array<std::uint8_t, 32> trace_{};
};

}  // namespace flbi::simnet
