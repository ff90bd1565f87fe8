#include "flbi/simnet.hpp"

#include <sodium.h>

#include <algorithm>

namespace flbi::simnet {

const char *to_string(MessageKind kind)
{
  switch (kind)
  {
  case MessageKind::transaction: return "transaction";
  case MessageKind::proposal: return "proposal";
  case MessageKind::vote: return "vote";
  case MessageKind::sync_request: return "sync-request";
  case MessageKind::sync_response: return "sync-response";
  case MessageKind::firmware_bundle: return "firmware-bundle";
  case MessageKind::reading: return "reading";
  case MessageKind::control: return "control";
  }
  return "unknown";
}

Network::Network(std::uint64_t seed, LatencyModel default_latency)
    : default_latency_(default_latency), rng_(Rng(seed).fork("simnet"))
{
}

ActorId Network::add_actor(std::string name, Handler handler)
{
  actors_.push_back({std::move(name), std::move(handler), default_latency_, false});
  return static_cast<ActorId>(actors_.size() - 1);
}

void Network::set_handler(ActorId actor, Handler handler) { actors_.at(actor).handler = std::move(handler); }

const std::string &Network::name(ActorId actor) const { return actors_.at(actor).name; }

void Network::set_latency(ActorId actor, LatencyModel latency)
{
  auto &a = actors_.at(actor);
  a.latency = latency;
  a.custom_latency = true;
}

void Network::add_policy(LinkPolicy policy) { policies_.push_back(std::move(policy)); }

bool Network::send(ActorId source, ActorId destination, MessageKind kind, std::shared_ptr<const Bytes> payload)
{
  if (destination >= actors_.size() || source >= actors_.size()) throw SimulationError("send to unknown actor");
  ++stats_.messages_sent;

  const auto &lat = actors_[source].latency;
  SimTime delay = source == destination ? 0 : lat.base;
  if (source != destination && lat.jitter > 0) delay += rng_.between(0, lat.jitter);
  SimTime delivery = now_ + delay;

  for (const auto &p : policies_)
  {
    if (now_ < p.from) continue;
    auto in = [](const std::set<ActorId> &s, ActorId a) { return s.count(a) > 0; };

    if (p.drop_mode == DropMode::jam_until && now_ < p.until &&
        (in(p.actors, source) || in(p.actors, destination)))
    {
      if (p.drop)
      {
        ++stats_.messages_dropped;
        return false;
      }
      delivery = std::max(delivery, p.until + delay);
    }
    if (p.drop_mode == DropMode::partition && now_ < p.until &&
        ((in(p.actors, source) && in(p.peers, destination)) || (in(p.peers, source) && in(p.actors, destination))))
    {
      ++stats_.messages_dropped;
      return false;
    }
    if (p.mutate && (p.until == 0 || now_ < p.until) && (p.actors.empty() || in(p.actors, source)) &&
        (p.peers.empty() || in(p.peers, destination)) &&
        (p.kinds.empty() || std::find(p.kinds.begin(), p.kinds.end(), kind) != p.kinds.end()))
    {
      Bytes copy = *payload;
      if (p.mutate(copy))
      {
        ++stats_.messages_mutated;
        payload = std::make_shared<const Bytes>(std::move(copy));
      }
    }
  }

  Envelope e;
  e.sent = now_;
  e.delivery = delivery;
  e.source = source;
  e.destination = destination;
  e.kind = kind;
  e.payload = std::move(payload);
  schedule(std::move(e));
  return true;
}

void Network::schedule(Envelope envelope)
{
  if (envelope.delivery < now_) throw SimulationError("event scheduled in the past");
  envelope.seq = next_seq_++;
  const auto t = envelope.delivery;
  const auto s = envelope.seq;
  queue_.push(Queued{t, s, std::move(envelope)});
}

void Network::at(SimTime when, ActorId actor, TimerFn fn)
{
  if (when < now_) throw SimulationError("timer scheduled in the past");
  queue_.push(Queued{when, next_seq_++, Timer{actor, std::move(fn)}});
}

void Network::record_trace(const Envelope &e)
{
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  crypto_hash_sha256_update(&st, trace_.data(), trace_.size());
  ByteWriter w;
  w.i64(e.delivery).u64(e.seq).u32(e.source).u32(e.destination).u8(static_cast<std::uint8_t>(e.kind));
  w.u32(static_cast<std::uint32_t>(e.payload ? e.payload->size() : 0));
  crypto_hash_sha256_update(&st, w.bytes().data(), w.bytes().size());
  if (e.payload) crypto_hash_sha256_update(&st, e.payload->data(), e.payload->size());
  crypto_hash_sha256_final(&st, trace_.data());
}

void Network::step()
{
  // priority_queue::top is const; the item is moved out via const_cast
  // and popped immediately.
  auto &top = const_cast<Queued &>(queue_.top());
  const SimTime t = top.time;
  auto item = std::move(top.item);
  queue_.pop();

  if (t == now_)
  {
    if (++same_time_events_ > livelock_budget_)
      throw SimulationError("livelock: " + std::to_string(same_time_events_) + " events at t=" + std::to_string(now_) +
                            " without time advancing");
  }
  else
  {
    same_time_events_ = 0;
  }
  now_ = t;
  ++stats_.events_processed;

  if (auto *env = std::get_if<Envelope>(&item))
  {
    ++stats_.messages_delivered;
    record_trace(*env);
    auto &h = actors_[env->destination].handler;
    if (h) h(*env);
  }
  else
  {
    auto &timer = std::get<Timer>(item);
    timer.fn();
  }
}

RunReport Network::run_until(SimTime limit)
{
  while (!queue_.empty() && queue_.top().time <= limit) step();
  now_ = std::max(now_, limit);
  stats_.final_time = now_;
  stats_.quiescent = queue_.empty();
  return stats_;
}

RunReport Network::run_until_quiescent(SimTime limit)
{
  while (!queue_.empty() && queue_.top().time <= limit) step();
  stats_.final_time = now_;
  stats_.quiescent = queue_.empty();
  return stats_;
}

bool Network::run_while_not(const std::function<bool()> &done, SimTime limit)
{
  while (!done())
  {
    if (queue_.empty() || queue_.top().time > limit)
    {
      stats_.final_time = now_;
      return done();
    }
    step();
  }
  stats_.final_time = now_;
  return true;
}

crypto::Digest Network::trace_digest() const
{
  crypto::Digest d;
  d.bytes = trace_;
  return d;
}

}  // namespace flbi::simnet
