#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "modq/rater.hpp"

namespace modq {

struct ContentItem {
  std::string id;
  std::string text;
  std::string policy;
  std::optional<int> ground_truth;  // simulation only
  std::int64_t enqueue_time_ms = 0;
  // Appeals of LLM verdicts always go to a human.
  bool appeal = false;
};

nlohmann::json content_item_to_json(const ContentItem& item);
ContentItem content_item_from_json(const nlohmann::json& j);

enum class RoutingMode { PreFilter, RapidEscalation, Autonomous, Validation, Assistance, Layered };

std::string_view routing_mode_name(RoutingMode mode) noexcept;
std::optional<RoutingMode> parse_routing_mode(std::string_view name) noexcept;

struct RoutingPolicy {
  RoutingMode mode = RoutingMode::PreFilter;
  std::optional<double> prefilter_t;
  std::optional<double> escalate_t;
  std::optional<double> autonomous_t;  // defaults to 0.5
  std::optional<double> validation_confidence;
  int extra_raters_on_disagreement = 2;

  /// Throws MissingThreshold when the mode's thresholds are absent,
  /// InvalidArgument on out-of-range values or prefilter_t > escalate_t.
  void validate() const;
};

nlohmann::json routing_policy_to_json(const RoutingPolicy& p);
RoutingPolicy routing_policy_from_json(const nlohmann::json& j);

/// Per-policy-name routing configuration; "*" is the fallback entry.
using RoutingTable = std::map<std::string, RoutingPolicy, std::less<>>;

RoutingTable routing_table_from_json(const nlohmann::json& j);
nlohmann::json routing_table_to_json(const RoutingTable& table);
const RoutingPolicy* find_routing_policy(const RoutingTable& table, std::string_view policy);

enum class Outcome { AutoNonViolative, AutoViolative, ToHuman, ToHumanWithAssist };

std::string_view outcome_name(Outcome outcome) noexcept;
std::optional<Outcome> parse_outcome(std::string_view name) noexcept;

inline bool is_automated(Outcome o) noexcept {
  return o == Outcome::AutoNonViolative || o == Outcome::AutoViolative;
}

struct RoutingDecision {
  Outcome outcome = Outcome::ToHuman;
  std::string reason;
  std::optional<Verdict> llm_verdict;  // absent when the item was parked on a backend failure
};

nlohmann::json routing_decision_to_json(const RoutingDecision& d);
RoutingDecision routing_decision_from_json(const nlohmann::json& j);

/// Applies the policy's strategy to one scored item. Threshold modes need a
/// probability score (MissingScore otherwise).
RoutingDecision route_item(const ContentItem& item, const Verdict& verdict,
                           const RoutingPolicy& policy);

/// Decision for an item the LLM could not rate.
RoutingDecision park_for_human(std::string reason);

struct HumanVerdict {
  std::string rater_id;
  int label = 0;
  Seconds latency{0.0};
  bool assisted = false;
};

nlohmann::json human_verdict_to_json(const HumanVerdict& v);
HumanVerdict human_verdict_from_json(const nlohmann::json& j);

/// max(score, 1 - score).
double llm_confidence(const Verdict& verdict) noexcept;

struct ValidationDecision {
  bool request_extra = false;
  int extra_count = 0;

  static ValidationDecision accept() { return {}; }
};

/// Extra ratings iff the labels disagree and the LLM confidence reaches the
/// policy's validation_confidence.
ValidationDecision validation_check(const ContentItem& item, const Verdict& llm_verdict,
                                    const HumanVerdict& first_human, const RoutingPolicy& policy);

enum class VerdictSource { LLM, Human, Majority };
enum class TiebreakNote { HumanCorrect, LLMCorrect, MissingContext };

std::string_view verdict_source_name(VerdictSource s) noexcept;
std::string_view tiebreak_note_name(TiebreakNote n) noexcept;

struct FinalVerdict {
  int label = 0;
  VerdictSource source = VerdictSource::Human;
  std::vector<HumanVerdict> votes;
  std::optional<TiebreakNote> tiebreak_note;
};

nlohmann::json final_verdict_to_json(const FinalVerdict& f);
FinalVerdict final_verdict_from_json(const nlohmann::json& j);

/// Strict majority over an odd, non-empty vote set. Throws EvenVoteCount.
FinalVerdict aggregate_majority(std::span<const HumanVerdict> votes);

/// Whether the majority sided with the first human or with the LLM.
TiebreakNote tiebreak_outcome(int first_human_label, int llm_label, int final_label) noexcept;

/// Final verdict for an automated outcome.
FinalVerdict llm_final(const RoutingDecision& decision);

struct Span {
  std::size_t start = 0;  // byte offsets, half-open
  std::size_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
};

/// Case-insensitive (ASCII folding), non-overlapping occurrences of every
/// keyword, sorted, with spans that overlap across keywords merged.
std::vector<Span> build_assist_payload(std::string_view text,
                                       std::span<const std::string> keywords);

nlohmann::json spans_to_json(std::span<const Span> spans);

}  // namespace modq
