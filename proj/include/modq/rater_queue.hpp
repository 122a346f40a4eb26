#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "modq/router.hpp"

namespace modq {

enum class EventType {
  Enqueue,
  LlmVerdict,
  RoutingDecision,
  Lease,
  HumanVerdict,
  ExtraRatingsRequested,
  FinalVerdict,
};

std::string_view event_type_name(EventType type) noexcept;
std::optional<EventType> parse_event_type(std::string_view name) noexcept;

struct Event {
  std::uint64_t seq = 0;  // assigned by the log, 1-based
  EventType type = EventType::Enqueue;
  std::int64_t time_ms = 0;
  std::string item_id;
  nlohmann::json payload;
};

nlohmann::json event_to_json(const Event& e);
Event event_from_json(const nlohmann::json& j);

/// Append-only event store. With a path, every append is written as one JSON
/// line and flushed; events already in the file are loaded on open. Not
/// thread-safe on its own; RaterQueue serializes access.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& path);

  const Event& append(Event event);
  const std::vector<Event>& events() const noexcept { return events_; }
  const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

  /// Throws CorpusError naming the bad line.
  static std::vector<Event> read(const std::filesystem::path& path);

 private:
  std::vector<Event> events_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
};

struct QueueStats {
  std::uint64_t enqueued = 0;
  std::uint64_t depth = 0;  // enqueued - (completed + automated)
  std::uint64_t auto_dequeued = 0;
  std::uint64_t auto_escalated = 0;
  std::uint64_t awaiting_human = 0;
  std::uint64_t completed = 0;

  /// (auto_dequeued + auto_escalated) / enqueued; 0 when nothing was enqueued.
  double automation_fraction() const noexcept;

  friend bool operator==(const QueueStats&, const QueueStats&) = default;
};

nlohmann::json queue_stats_to_json(const QueueStats& s);

enum class ItemState { Automated, AwaitingHuman, Completed };

struct QueueItem {
  ContentItem item;
  RoutingPolicy policy;
  RoutingDecision decision;
  std::uint64_t order = 0;
  ItemState state = ItemState::AwaitingHuman;
  std::vector<HumanVerdict> votes;
  std::size_t votes_required = 1;
  std::optional<std::string> lease_holder;
  std::int64_t lease_expires_ms = 0;
  std::optional<FinalVerdict> final;
};

/// Rater queue whose state is a fold over its event log. Every mutation is
/// appended to the log before it is applied, so replaying the log rebuilds
/// the same state. All members are thread-safe.
class RaterQueue {
 public:
  using Clock = std::function<std::int64_t()>;  // milliseconds

  static constexpr std::int64_t kDefaultLeaseMs = 10 * 60 * 1000;

  static std::int64_t system_clock_ms();

  /// Restores state from the log's existing events. log may be null.
  explicit RaterQueue(EventLog* log = nullptr, Clock clock = system_clock_ms,
                      std::int64_t lease_ms = kDefaultLeaseMs);

  RaterQueue(const RaterQueue&) = delete;
  RaterQueue& operator=(const RaterQueue&) = delete;

  /// State reconstructed from events alone, without a log attached.
  static std::unique_ptr<RaterQueue> replay(std::span<const Event> events);

  struct AdmitResult {
    RoutingDecision decision;
    bool created = false;
  };

  /// Records the item and its routing decision. Re-admitting the same id with
  /// the same text returns the stored decision (created=false); a different
  /// text throws DuplicateItem.
  AdmitResult admit(ContentItem item, const RoutingPolicy& policy, RoutingDecision decision);

  std::optional<QueueItem> find(std::string_view id) const;

  /// Leases the oldest human-bound item that is not leased to someone else
  /// and that this rater has not voted on yet.
  std::optional<QueueItem> lease_next(const std::string& rater_id);

  /// Leases a specific item. Throws UnknownItem, or LeaseNotHeld when the
  /// item is not awaiting this rater.
  QueueItem lease(std::string_view item_id, const std::string& rater_id);

  struct SubmitResult {
    std::optional<FinalVerdict> final;
    bool extra_ratings_requested = false;
    std::size_t votes_needed = 0;
  };

  /// Records a verdict from the lease holder, runs the validation check on
  /// the first vote and finalizes once the vote quota is met. Throws
  /// UnknownItem or LeaseNotHeld.
  SubmitResult submit(std::string_view item_id, HumanVerdict verdict);

  QueueStats stats() const;
  std::size_t size() const;
  /// Copy of the attached log's events with seq > after; empty without a log.
  std::vector<Event> events(std::uint64_t after = 0) const;
  /// Human-finalized items of one policy that carry an LLM probability score.
  std::vector<QueueItem> scored_items(std::string_view policy) const;

 private:
  void record(Event event);
  void apply(const Event& event);
  QueueItem& lease_locked(QueueItem& item, const std::string& rater_id, std::int64_t now);
  bool available_to(const QueueItem& item, const std::string& rater_id, std::int64_t now) const;

  mutable std::mutex mutex_;
  EventLog* log_;
  Clock clock_;
  std::int64_t lease_ms_;
  std::unordered_map<std::string, QueueItem> items_;
  std::map<std::uint64_t, std::string> pending_;  // order -> id, human-bound and unfinished
  std::uint64_t next_order_ = 0;
  QueueStats stats_;
};

/// Stats recomputed by replaying events into a fresh queue.
QueueStats replay_stats(std::span<const Event> events);

}  // namespace modq
