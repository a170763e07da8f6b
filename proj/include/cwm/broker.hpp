#pragma once

// In-memory message layer between the execution engine and controllers.
// Every controller owns a normal/priority queue pair; consumption is
// priority-first, FIFO within each class, with unacked redelivery after a
// visibility timeout and dead-lettering after bounded attempts.
//
// All operations are linearizable under one broker mutex. The interface is
// the seam an external AMQP-style broker could be substituted behind.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cwm/cwdl.hpp"
#include "cwm/report.hpp"

namespace cwm {

enum class Priority { normal, priority };

inline const char* to_string(Priority p) {
  return p == Priority::priority ? "priority" : "normal";
}

struct Envelope {
  std::string message_id;    // unique per broker lifetime; stamped on publish if empty
  std::string execution_id;
  std::string node_id;
  std::string reply_queue;
  Priority priority = Priority::normal;
  std::string content_type;
  std::string payload;
  int attempt = 0;           // completed failed deliveries so far
  std::map<std::string, std::string> param_overrides;
};

struct QueuePair {
  std::string normal;
  std::string priority;
};

struct Delivery {
  Envelope envelope;
  std::uint64_t tag = 0;
};

struct BrokerConfig {
  std::chrono::milliseconds visibility_timeout{5000};
  int max_attempts = 3;
  std::size_t max_payload_bytes = 64ull * 1024 * 1024;
  // Injectable for clock-driven tests; defaults to the steady clock.
  std::function<std::chrono::steady_clock::time_point()> clock;
};

struct QueueStats {
  std::uint64_t published = 0;
  std::uint64_t delivered = 0;
  std::uint64_t acked = 0;
  std::uint64_t dead_lettered = 0;
  std::uint64_t redelivered = 0;
  std::size_t depth = 0;
};

struct BrokerStats {
  std::uint64_t published = 0;
  std::uint64_t acked = 0;
  std::uint64_t dead_lettered = 0;
  std::uint64_t redelivered = 0;
  std::size_t queued = 0;
  std::size_t unacked = 0;
};

struct UnknownQueueError : Error {
  using Error::Error;
};
struct PriorityMismatchError : Error {
  using Error::Error;
};
struct ConflictError : Error {
  using Error::Error;
};
struct UnknownTagError : Error {
  using Error::Error;
};
struct PayloadTooLargeError : Error {
  using Error::Error;
};

class Broker {
 public:
  explicit Broker(BrokerConfig config = {}) : config_(std::move(config)) {
    if (!config_.clock) config_.clock = [] { return std::chrono::steady_clock::now(); };
  }

  const BrokerConfig& config() const { return config_; }

  std::string next_message_id() {
    std::lock_guard lock(mu_);
    return "m-" + std::to_string(++next_message_);
  }

  // Declares a queue pair for its owner. Redeclaration by the same owner is
  // idempotent; queue names are globally unique across owners.
  QueuePair declare_queue_pair(const std::string& owner, const std::string& normal,
                               const std::string& priority) {
    if (normal.empty() || priority.empty() || normal == priority)
      throw ConflictError("queue pair for " + owner + " must name two distinct queues");
    std::lock_guard lock(mu_);
    declare_locked(owner, normal, Priority::normal);
    declare_locked(owner, priority, Priority::priority);
    return {normal, priority};
  }

  QueuePair declare_queues(const cwdl::ControllerSpec& spec) {
    return declare_queue_pair(spec.controller_id, spec.queues.input_normal,
                              spec.queues.input_priority);
  }

  void publish(const std::string& queue, Envelope env) {
    std::lock_guard lock(mu_);
    Queue* q = find_queue(queue);
    if (!q || q->dead_letter) throw UnknownQueueError("unknown queue '" + queue + "'");
    if (env.priority != q->role)
      throw PriorityMismatchError("queue '" + queue + "' accepts " +
                                  std::string(to_string(q->role)) + " envelopes, got " +
                                  to_string(env.priority));
    if (env.payload.size() > config_.max_payload_bytes)
      throw PayloadTooLargeError("payload of " + std::to_string(env.payload.size()) +
                                 " bytes exceeds limit of " +
                                 std::to_string(config_.max_payload_bytes));
    if (env.message_id.empty()) env.message_id = "m-" + std::to_string(++next_message_);
    q->stats.published++;
    q->entries.push_back(std::move(env));
    cv_.notify_all();
  }

  // Head of the priority queue when non-empty, else head of the normal
  // queue, else nullopt. The delivery becomes invisible to other consumers
  // until acked, nacked, or its visibility timeout expires.
  std::optional<Delivery> consume_next(const QueuePair& pair) {
    std::lock_guard lock(mu_);
    return consume_locked(pair);
  }

  // Poll-with-timeout variant; waits until a message is available or the
  // deadline passes. Callers never busy-spin.
  std::optional<Delivery> consume_next(const QueuePair& pair, std::chrono::milliseconds wait) {
    std::unique_lock lock(mu_);
    auto deadline = std::chrono::steady_clock::now() + wait;
    while (true) {
      if (auto d = consume_locked(pair)) return d;
      // Short slices so expired unacked deliveries are swept even while
      // parked (an injected test clock does not drive this cv).
      auto slice = std::min<std::chrono::steady_clock::duration>(
          deadline - std::chrono::steady_clock::now(), std::chrono::milliseconds(20));
      if (slice <= std::chrono::steady_clock::duration::zero()) return std::nullopt;
      cv_.wait_for(lock, slice);
    }
  }

  void ack(std::uint64_t tag) {
    std::lock_guard lock(mu_);
    auto it = unacked_.find(tag);
    if (it == unacked_.end()) throw UnknownTagError("unknown delivery tag " + std::to_string(tag));
    queues_.at(it->second.queue).stats.acked++;
    unacked_.erase(it);
    cv_.notify_all();
  }

  // requeue=true: back to the head of its queue with attempt+1 (dead-letter
  // once max_attempts is exhausted); requeue=false: straight to the queue's
  // dead-letter queue.
  void nack(std::uint64_t tag, bool requeue) {
    std::lock_guard lock(mu_);
    auto it = unacked_.find(tag);
    if (it == unacked_.end()) throw UnknownTagError("unknown delivery tag " + std::to_string(tag));
    Unacked u = std::move(it->second);
    unacked_.erase(it);
    u.envelope.attempt++;
    if (!requeue || u.envelope.attempt >= config_.max_attempts) {
      dead_letter_locked(u.queue, std::move(u.envelope));
    } else {
      Queue& q = queues_.at(u.queue);
      q.stats.redelivered++;
      q.entries.push_front(std::move(u.envelope));
    }
    cv_.notify_all();
  }

  std::size_t depth(const std::string& queue) const {
    std::lock_guard lock(mu_);
    auto it = queues_.find(queue);
    if (it == queues_.end()) throw UnknownQueueError("unknown queue '" + queue + "'");
    return it->second.entries.size();
  }

  QueueStats queue_stats(const std::string& queue) const {
    std::lock_guard lock(mu_);
    auto it = queues_.find(queue);
    if (it == queues_.end()) throw UnknownQueueError("unknown queue '" + queue + "'");
    QueueStats s = it->second.stats;
    s.depth = it->second.entries.size();
    return s;
  }

  // Copies of the dead-lettered envelopes of `queue`.
  std::vector<Envelope> dead_letters(const std::string& queue) const {
    std::lock_guard lock(mu_);
    auto it = queues_.find(queue + ".dlq");
    if (it == queues_.end()) throw UnknownQueueError("unknown queue '" + queue + "'");
    return {it->second.entries.begin(), it->second.entries.end()};
  }

  BrokerStats stats() {
    std::lock_guard lock(mu_);
    sweep_expired_locked();
    BrokerStats s;
    for (const auto& [name, q] : queues_) {
      if (q.dead_letter) continue;
      s.published += q.stats.published;
      s.acked += q.stats.acked;
      s.dead_lettered += q.stats.dead_lettered;
      s.redelivered += q.stats.redelivered;
      s.queued += q.entries.size();
    }
    s.unacked = unacked_.size();
    return s;
  }

 private:
  struct Queue {
    Priority role = Priority::normal;
    std::string owner;
    bool dead_letter = false;
    std::deque<Envelope> entries;
    QueueStats stats;
  };

  struct Unacked {
    Envelope envelope;
    std::string queue;
    std::chrono::steady_clock::time_point deadline;
  };

  void declare_locked(const std::string& owner, const std::string& name, Priority role) {
    auto it = queues_.find(name);
    if (it != queues_.end()) {
      if (it->second.owner != owner || it->second.role != role)
        throw ConflictError("queue '" + name + "' is already owned by " + it->second.owner);
      return;
    }
    queues_[name] = Queue{role, owner, false, {}, {}};
    queues_[name + ".dlq"] = Queue{role, owner, true, {}, {}};
  }

  Queue* find_queue(const std::string& name) {
    auto it = queues_.find(name);
    return it == queues_.end() ? nullptr : &it->second;
  }

  void dead_letter_locked(const std::string& origin, Envelope env) {
    queues_.at(origin).stats.dead_lettered++;
    queues_.at(origin + ".dlq").entries.push_back(std::move(env));
  }

  // Returns expired unacked deliveries to their queue heads (or dead-letters
  // them once attempts are exhausted).
  void sweep_expired_locked() {
    auto now = config_.clock();
    for (auto it = unacked_.begin(); it != unacked_.end();) {
      if (it->second.deadline > now) {
        ++it;
        continue;
      }
      Unacked u = std::move(it->second);
      it = unacked_.erase(it);
      u.envelope.attempt++;
      if (u.envelope.attempt >= config_.max_attempts) {
        dead_letter_locked(u.queue, std::move(u.envelope));
      } else {
        Queue& q = queues_.at(u.queue);
        q.stats.redelivered++;
        q.entries.push_front(std::move(u.envelope));
      }
    }
  }

  std::optional<Delivery> consume_locked(const QueuePair& pair) {
    sweep_expired_locked();
    Queue* prio = find_queue(pair.priority);
    Queue* norm = find_queue(pair.normal);
    if (!prio || !norm)
      throw UnknownQueueError("undeclared queue pair (" + pair.normal + ", " + pair.priority + ")");
    Queue* source = !prio->entries.empty() ? prio : (!norm->entries.empty() ? norm : nullptr);
    if (!source) return std::nullopt;
    std::string queue_name = source == prio ? pair.priority : pair.normal;

    Delivery d;
    d.envelope = std::move(source->entries.front());
    source->entries.pop_front();
    source->stats.delivered++;
    d.tag = ++next_tag_;
    unacked_[d.tag] = Unacked{d.envelope, queue_name, config_.clock() + config_.visibility_timeout};
    return d;
  }

  BrokerConfig config_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Queue> queues_;
  std::map<std::uint64_t, Unacked> unacked_;
  std::uint64_t next_tag_ = 0;
  std::uint64_t next_message_ = 0;
};

}  // namespace cwm
