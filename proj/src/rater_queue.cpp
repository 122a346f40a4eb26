#include "modq/rater_queue.hpp"

#include <algorithm>
#include <array>
#include <chrono>

#include "modq/error.hpp"

namespace modq {
namespace {

constexpr std::array<std::string_view, 7> kEventNames = {
    "enqueue", "llm_verdict", "routing_decision", "lease",
    "human_verdict", "extra_ratings_requested", "final_verdict"};

}  // namespace

std::string_view event_type_name(EventType type) noexcept {
  return kEventNames[static_cast<std::size_t>(type)];
}

std::optional<EventType> parse_event_type(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == name) return static_cast<EventType>(i);
  }
  return std::nullopt;
}

nlohmann::json event_to_json(const Event& e) {
  return {{"seq", e.seq},
          {"type", event_type_name(e.type)},
          {"time_ms", e.time_ms},
          {"item_id", e.item_id},
          {"payload", e.payload}};
}

Event event_from_json(const nlohmann::json& j) {
  Event e;
  e.seq = j.at("seq").get<std::uint64_t>();
  const auto name = j.at("type").get<std::string>();
  const auto type = parse_event_type(name);
  if (!type) throw Error(Errc::CorpusError, "unknown event type '" + name + "'");
  e.type = *type;
  e.time_ms = j.value("time_ms", std::int64_t{0});
  e.item_id = j.at("item_id").get<std::string>();
  e.payload = j.value("payload", nlohmann::json::object());
  return e;
}

EventLog::EventLog(const std::filesystem::path& path) : path_(path) {
  if (std::filesystem::exists(path)) events_ = read(path);
  out_.open(path, std::ios::app);
  if (!out_) throw Error(Errc::ConfigError, "cannot open event log " + path.string());
}

const Event& EventLog::append(Event event) {
  event.seq = events_.size() + 1;
  if (path_) {
    out_ << event_to_json(event).dump() << '\n';
    out_.flush();
    if (!out_) throw Error(Errc::ConfigError, "write to event log failed");
  }
  events_.push_back(std::move(event));
  return events_.back();
}

std::vector<Event> EventLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::CorpusError, "cannot open event log " + path.string());
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(Errc::CorpusError, "event log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return events;
}

double QueueStats::automation_fraction() const noexcept {
  if (enqueued == 0) return 0.0;
  return static_cast<double>(auto_dequeued + auto_escalated) / static_cast<double>(enqueued);
}

nlohmann::json queue_stats_to_json(const QueueStats& s) {
  return {{"enqueued", s.enqueued},
          {"depth", s.depth},
          {"auto_dequeued", s.auto_dequeued},
          {"auto_escalated", s.auto_escalated},
          {"awaiting_human", s.awaiting_human},
          {"completed", s.completed},
          {"automation_fraction", s.automation_fraction()}};
}

std::int64_t RaterQueue::system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

RaterQueue::RaterQueue(EventLog* log, Clock clock, std::int64_t lease_ms)
    : log_(log), clock_(std::move(clock)), lease_ms_(lease_ms) {
  if (lease_ms_ <= 0) throw Error(Errc::InvalidArgument, "lease timeout must be positive");
  if (log_) {
    for (const auto& e : log_->events()) apply(e);
  }
}

std::unique_ptr<RaterQueue> RaterQueue::replay(std::span<const Event> events) {
  auto q = std::make_unique<RaterQueue>();
  for (const auto& e : events) q->apply(e);
  return q;
}

QueueStats replay_stats(std::span<const Event> events) { return RaterQueue::replay(events)->stats(); }

void RaterQueue::record(Event event) {
  if (log_) {
    apply(log_->append(std::move(event)));
  } else {
    apply(event);
  }
}

void RaterQueue::apply(const Event& e) {
  switch (e.type) {
    case EventType::Enqueue: {
      QueueItem qi;
      qi.item = content_item_from_json(e.payload.at("item"));
      qi.policy = routing_policy_from_json(e.payload.at("routing_policy"));
      qi.order = next_order_++;
      if (!items_.emplace(e.item_id, std::move(qi)).second) {
        throw Error(Errc::CorpusError, "event " + std::to_string(e.seq) + " re-enqueues '" +
                                           e.item_id + "'");
      }
      ++stats_.enqueued;
      ++stats_.depth;
      return;
    }
    default:
      break;
  }
  auto it = items_.find(e.item_id);
  if (it == items_.end()) {
    throw Error(Errc::CorpusError, "event " + std::to_string(e.seq) + " names unknown item '" +
                                       e.item_id + "'");
  }
  QueueItem& qi = it->second;
  switch (e.type) {
    case EventType::Enqueue:
      break;
    case EventType::LlmVerdict:
      qi.decision.llm_verdict = verdict_from_json(e.payload.at("verdict"));
      break;
    case EventType::RoutingDecision: {
      auto verdict = std::move(qi.decision.llm_verdict);
      qi.decision = routing_decision_from_json(e.payload);
      qi.decision.llm_verdict = std::move(verdict);
      if (is_automated(qi.decision.outcome)) {
        qi.state = ItemState::Automated;
        --stats_.depth;
        ++(qi.decision.outcome == Outcome::AutoViolative ? stats_.auto_escalated
                                                         : stats_.auto_dequeued);
      } else {
        qi.state = ItemState::AwaitingHuman;
        ++stats_.awaiting_human;
        pending_.emplace(qi.order, e.item_id);
      }
      break;
    }
    case EventType::Lease:
      qi.lease_holder = e.payload.at("rater_id").get<std::string>();
      qi.lease_expires_ms = e.payload.at("expires_ms").get<std::int64_t>();
      break;
    case EventType::HumanVerdict:
      qi.votes.push_back(human_verdict_from_json(e.payload));
      qi.lease_holder.reset();
      qi.lease_expires_ms = 0;
      break;
    case EventType::ExtraRatingsRequested:
      qi.votes_required = qi.votes.size() + e.payload.at("count").get<std::size_t>();
      break;
    case EventType::FinalVerdict: {
      qi.final = final_verdict_from_json(e.payload);
      if (qi.state == ItemState::AwaitingHuman) {
        qi.state = ItemState::Completed;
        --stats_.awaiting_human;
        --stats_.depth;
        ++stats_.completed;
        pending_.erase(qi.order);
      }
      break;
    }
  }
}

RaterQueue::AdmitResult RaterQueue::admit(ContentItem item, const RoutingPolicy& policy,
                                          RoutingDecision decision) {
  std::lock_guard lock(mutex_);
  if (auto it = items_.find(item.id); it != items_.end()) {
    if (it->second.item.text != item.text) {
      throw Error(Errc::DuplicateItem, "item '" + item.id + "' already exists with different text");
    }
    return {it->second.decision, false};
  }
  const auto now = clock_();
  if (item.enqueue_time_ms == 0) item.enqueue_time_ms = now;
  const std::string id = item.id;
  record({0, EventType::Enqueue, now, id,
          {{"item", content_item_to_json(item)}, {"routing_policy", routing_policy_to_json(policy)}}});
  if (decision.llm_verdict) {
    record({0, EventType::LlmVerdict, now, id, {{"verdict", verdict_to_json(*decision.llm_verdict)}}});
  }
  nlohmann::json routed = {{"outcome", outcome_name(decision.outcome)}, {"reason", decision.reason}};
  record({0, EventType::RoutingDecision, now, id, routed});
  if (is_automated(decision.outcome)) {
    record({0, EventType::FinalVerdict, now, id, final_verdict_to_json(llm_final(decision))});
  }
  return {items_.at(id).decision, true};
}

std::optional<QueueItem> RaterQueue::find(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = items_.find(std::string(id));
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

bool RaterQueue::available_to(const QueueItem& qi, const std::string& rater_id,
                              std::int64_t now) const {
  if (qi.state != ItemState::AwaitingHuman) return false;
  if (qi.lease_holder && *qi.lease_holder != rater_id && now < qi.lease_expires_ms) return false;
  return std::none_of(qi.votes.begin(), qi.votes.end(),
                      [&](const HumanVerdict& v) { return v.rater_id == rater_id; });
}

QueueItem& RaterQueue::lease_locked(QueueItem& qi, const std::string& rater_id, std::int64_t now) {
  record({0, EventType::Lease, now, qi.item.id,
          {{"rater_id", rater_id}, {"expires_ms", now + lease_ms_}}});
  return qi;
}

std::optional<QueueItem> RaterQueue::lease_next(const std::string& rater_id) {
  std::lock_guard lock(mutex_);
  const auto now = clock_();
  for (const auto& [order, id] : pending_) {
    auto& qi = items_.at(id);
    if (available_to(qi, rater_id, now)) return lease_locked(qi, rater_id, now);
  }
  return std::nullopt;
}

QueueItem RaterQueue::lease(std::string_view item_id, const std::string& rater_id) {
  std::lock_guard lock(mutex_);
  auto it = items_.find(std::string(item_id));
  if (it == items_.end()) throw Error(Errc::UnknownItem, "no item '" + std::string(item_id) + "'");
  const auto now = clock_();
  if (!available_to(it->second, rater_id, now)) {
    throw Error(Errc::LeaseNotHeld, "item '" + std::string(item_id) + "' is not available to " + rater_id);
  }
  return lease_locked(it->second, rater_id, now);
}

RaterQueue::SubmitResult RaterQueue::submit(std::string_view item_id, HumanVerdict verdict) {
  std::lock_guard lock(mutex_);
  auto it = items_.find(std::string(item_id));
  if (it == items_.end()) throw Error(Errc::UnknownItem, "no item '" + std::string(item_id) + "'");
  QueueItem& qi = it->second;
  const auto now = clock_();
  if (qi.state != ItemState::AwaitingHuman || !qi.lease_holder ||
      *qi.lease_holder != verdict.rater_id || now >= qi.lease_expires_ms) {
    throw Error(Errc::LeaseNotHeld,
                verdict.rater_id + " does not hold a live lease on '" + qi.item.id + "'");
  }
  if (verdict.label != 0 && verdict.label != 1) {
    throw Error(Errc::InvalidArgument, "label must be 0 or 1");
  }
  record({0, EventType::HumanVerdict, now, qi.item.id, human_verdict_to_json(verdict)});

  SubmitResult result;
  if (qi.votes.size() == 1 && qi.policy.mode == RoutingMode::Validation && qi.decision.llm_verdict) {
    const auto check = validation_check(qi.item, *qi.decision.llm_verdict, qi.votes.front(), qi.policy);
    if (check.request_extra) {
      record({0, EventType::ExtraRatingsRequested, now, qi.item.id, {{"count", check.extra_count}}});
      result.extra_ratings_requested = true;
      result.votes_needed = static_cast<std::size_t>(check.extra_count);
      return result;
    }
  }
  if (qi.votes.size() < qi.votes_required) {
    result.votes_needed = qi.votes_required - qi.votes.size();
    return result;
  }
  auto final = aggregate_majority(qi.votes);
  if (final.source == VerdictSource::Majority && qi.decision.llm_verdict) {
    final.tiebreak_note =
        tiebreak_outcome(qi.votes.front().label, qi.decision.llm_verdict->label, final.label);
  }
  record({0, EventType::FinalVerdict, now, qi.item.id, final_verdict_to_json(final)});
  result.final = std::move(final);
  return result;
}

QueueStats RaterQueue::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::size_t RaterQueue::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

std::vector<Event> RaterQueue::events(std::uint64_t after) const {
  std::lock_guard lock(mutex_);
  if (!log_) return {};
  const auto& all = log_->events();
  const auto skip = std::min<std::size_t>(after, all.size());
  return {all.begin() + static_cast<std::ptrdiff_t>(skip), all.end()};
}

std::vector<QueueItem> RaterQueue::scored_items(std::string_view policy) const {
  std::lock_guard lock(mutex_);
  std::vector<QueueItem> out;
  for (const auto& [id, qi] : items_) {
    if (qi.item.policy != policy || qi.state != ItemState::Completed || !qi.decision.llm_verdict) continue;
    if (!qi.decision.llm_verdict->score_from_probabilities) continue;
    out.push_back(qi);
  }
  std::sort(out.begin(), out.end(),
            [](const QueueItem& a, const QueueItem& b) { return a.order < b.order; });
  return out;
}

}  // namespace modq
