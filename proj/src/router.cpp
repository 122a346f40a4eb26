#include "modq/router.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "modq/error.hpp"

namespace modq {
namespace {

constexpr std::array<std::string_view, 6> kModeNames = {
    "prefilter", "rapid_escalation", "autonomous", "validation", "assistance", "layered"};
constexpr std::array<std::string_view, 4> kOutcomeNames = {
    "auto_non_violative", "auto_violative", "to_human", "to_human_with_assist"};

void check_unit(const std::optional<double>& v, const char* name) {
  if (v && !(*v >= 0.0 && *v <= 1.0)) {
    throw Error(Errc::InvalidArgument, std::string(name) + " must lie in [0, 1]");
  }
}

double require_score(const Verdict& v) {
  if (!v.score_from_probabilities || !std::isfinite(v.score)) {
    throw Error(Errc::MissingScore, "threshold routing needs a token probability score");
  }
  return v.score;
}

RoutingDecision decide(Outcome outcome, std::string reason, const Verdict& v) {
  return {outcome, std::move(reason), v};
}

}  // namespace

nlohmann::json content_item_to_json(const ContentItem& item) {
  nlohmann::json j = {{"id", item.id},
                      {"text", item.text},
                      {"policy", item.policy},
                      {"enqueue_time_ms", item.enqueue_time_ms}};
  if (item.ground_truth) j["ground_truth"] = *item.ground_truth;
  if (item.appeal) j["appeal"] = true;
  return j;
}

ContentItem content_item_from_json(const nlohmann::json& j) {
  ContentItem item;
  item.id = j.at("id").get<std::string>();
  item.text = j.at("text").get<std::string>();
  item.policy = j.at("policy").get<std::string>();
  item.enqueue_time_ms = j.value("enqueue_time_ms", std::int64_t{0});
  if (j.contains("ground_truth") && !j["ground_truth"].is_null()) {
    item.ground_truth = j["ground_truth"].get<int>();
  }
  item.appeal = j.value("appeal", false);
  return item;
}

std::string_view routing_mode_name(RoutingMode mode) noexcept {
  return kModeNames[static_cast<std::size_t>(mode)];
}

std::optional<RoutingMode> parse_routing_mode(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kModeNames.size(); ++i) {
    if (kModeNames[i] == name) return static_cast<RoutingMode>(i);
  }
  return std::nullopt;
}

void RoutingPolicy::validate() const {
  check_unit(prefilter_t, "prefilter_t");
  check_unit(escalate_t, "escalate_t");
  check_unit(autonomous_t, "autonomous_t");
  check_unit(validation_confidence, "validation_confidence");
  switch (mode) {
    case RoutingMode::PreFilter:
      if (!prefilter_t) throw Error(Errc::MissingThreshold, "prefilter mode needs prefilter_t");
      break;
    case RoutingMode::RapidEscalation:
      if (!escalate_t) throw Error(Errc::MissingThreshold, "rapid escalation needs escalate_t");
      break;
    case RoutingMode::Layered:
      if (!prefilter_t || !escalate_t) {
        throw Error(Errc::MissingThreshold, "layered mode needs prefilter_t and escalate_t");
      }
      if (*prefilter_t > *escalate_t) {
        throw Error(Errc::InvalidArgument, "prefilter_t must not exceed escalate_t");
      }
      break;
    case RoutingMode::Validation:
      if (!validation_confidence) {
        throw Error(Errc::MissingThreshold, "validation mode needs validation_confidence");
      }
      if (extra_raters_on_disagreement < 0 || extra_raters_on_disagreement % 2 != 0) {
        throw Error(Errc::InvalidArgument,
                    "extra_raters_on_disagreement must be even and >= 0 so the vote count is odd");
      }
      break;
    case RoutingMode::Autonomous:
    case RoutingMode::Assistance:
      break;
  }
}

nlohmann::json routing_policy_to_json(const RoutingPolicy& p) {
  nlohmann::json j = {{"mode", routing_mode_name(p.mode)},
                      {"extra_raters_on_disagreement", p.extra_raters_on_disagreement}};
  if (p.prefilter_t) j["prefilter_t"] = *p.prefilter_t;
  if (p.escalate_t) j["escalate_t"] = *p.escalate_t;
  if (p.autonomous_t) j["autonomous_t"] = *p.autonomous_t;
  if (p.validation_confidence) j["validation_confidence"] = *p.validation_confidence;
  return j;
}

RoutingPolicy routing_policy_from_json(const nlohmann::json& j) {
  RoutingPolicy p;
  const auto mode = j.at("mode").get<std::string>();
  const auto parsed = parse_routing_mode(mode);
  if (!parsed) throw Error(Errc::ConfigError, "unknown routing mode '" + mode + "'");
  p.mode = *parsed;
  auto opt = [&](const char* key, std::optional<double>& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<double>();
  };
  opt("prefilter_t", p.prefilter_t);
  opt("escalate_t", p.escalate_t);
  opt("autonomous_t", p.autonomous_t);
  opt("validation_confidence", p.validation_confidence);
  p.extra_raters_on_disagreement =
      j.value("extra_raters_on_disagreement", p.extra_raters_on_disagreement);
  p.validate();
  return p;
}

RoutingTable routing_table_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "routing table must be an object");
  RoutingTable table;
  for (const auto& [name, value] : j.items()) table.emplace(name, routing_policy_from_json(value));
  return table;
}

nlohmann::json routing_table_to_json(const RoutingTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, p] : table) j[name] = routing_policy_to_json(p);
  return j;
}

const RoutingPolicy* find_routing_policy(const RoutingTable& table, std::string_view policy) {
  if (auto it = table.find(policy); it != table.end()) return &it->second;
  if (auto it = table.find("*"); it != table.end()) return &it->second;
  return nullptr;
}

std::string_view outcome_name(Outcome outcome) noexcept {
  return kOutcomeNames[static_cast<std::size_t>(outcome)];
}

std::optional<Outcome> parse_outcome(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kOutcomeNames.size(); ++i) {
    if (kOutcomeNames[i] == name) return static_cast<Outcome>(i);
  }
  return std::nullopt;
}

nlohmann::json routing_decision_to_json(const RoutingDecision& d) {
  nlohmann::json j = {{"outcome", outcome_name(d.outcome)}, {"reason", d.reason}};
  if (d.llm_verdict) j["llm_verdict"] = verdict_to_json(*d.llm_verdict);
  return j;
}

RoutingDecision routing_decision_from_json(const nlohmann::json& j) {
  RoutingDecision d;
  const auto name = j.at("outcome").get<std::string>();
  const auto outcome = parse_outcome(name);
  if (!outcome) throw Error(Errc::InvalidArgument, "unknown outcome '" + name + "'");
  d.outcome = *outcome;
  d.reason = j.value("reason", std::string{});
  if (j.contains("llm_verdict")) d.llm_verdict = verdict_from_json(j["llm_verdict"]);
  return d;
}

RoutingDecision route_item(const ContentItem& item, const Verdict& verdict,
                           const RoutingPolicy& policy) {
  policy.validate();
  if (item.appeal) return decide(Outcome::ToHuman, "appeal", verdict);

  switch (policy.mode) {
    case RoutingMode::PreFilter: {
      const double s = require_score(verdict);
      if (s < *policy.prefilter_t) return decide(Outcome::AutoNonViolative, "below prefilter_t", verdict);
      return decide(Outcome::ToHuman, "at or above prefilter_t", verdict);
    }
    case RoutingMode::RapidEscalation: {
      const double s = require_score(verdict);
      if (s >= *policy.escalate_t) return decide(Outcome::AutoViolative, "at or above escalate_t", verdict);
      return decide(Outcome::ToHuman, "below escalate_t", verdict);
    }
    case RoutingMode::Autonomous: {
      double s = verdict.score;
      if (policy.autonomous_t) s = require_score(verdict);
      if (!std::isfinite(s)) throw Error(Errc::MissingScore, "verdict has no usable score");
      if (s >= policy.autonomous_t.value_or(0.5)) {
        return decide(Outcome::AutoViolative, "autonomous", verdict);
      }
      return decide(Outcome::AutoNonViolative, "autonomous", verdict);
    }
    case RoutingMode::Validation:
      return decide(Outcome::ToHuman, "validation after human rating", verdict);
    case RoutingMode::Assistance:
      return decide(Outcome::ToHumanWithAssist, "assistance", verdict);
    case RoutingMode::Layered: {
      const double s = require_score(verdict);
      if (s >= *policy.escalate_t) return decide(Outcome::AutoViolative, "at or above escalate_t", verdict);
      if (s < *policy.prefilter_t) return decide(Outcome::AutoNonViolative, "below prefilter_t", verdict);
      return decide(Outcome::ToHuman, "between thresholds", verdict);
    }
  }
  throw Error(Errc::InvalidArgument, "unknown routing mode");
}

RoutingDecision park_for_human(std::string reason) {
  RoutingDecision d;
  d.outcome = Outcome::ToHuman;
  d.reason = std::move(reason);
  return d;
}

nlohmann::json human_verdict_to_json(const HumanVerdict& v) {
  return {{"rater_id", v.rater_id},
          {"label", v.label},
          {"latency_s", v.latency.count()},
          {"assisted", v.assisted}};
}

HumanVerdict human_verdict_from_json(const nlohmann::json& j) {
  HumanVerdict v;
  v.rater_id = j.at("rater_id").get<std::string>();
  v.label = j.at("label").get<int>();
  v.latency = Seconds(j.value("latency_s", 0.0));
  v.assisted = j.value("assisted", false);
  return v;
}

double llm_confidence(const Verdict& verdict) noexcept {
  return std::max(verdict.score, 1.0 - verdict.score);
}

ValidationDecision validation_check(const ContentItem& /*item*/, const Verdict& llm_verdict,
                                    const HumanVerdict& first_human, const RoutingPolicy& policy) {
  if (policy.mode != RoutingMode::Validation) {
    throw Error(Errc::InvalidArgument, "validation_check outside validation mode");
  }
  policy.validate();
  if (first_human.label == llm_verdict.label) return ValidationDecision::accept();
  if (llm_confidence(llm_verdict) < *policy.validation_confidence) {
    return ValidationDecision::accept();
  }
  return {policy.extra_raters_on_disagreement > 0, policy.extra_raters_on_disagreement};
}

std::string_view verdict_source_name(VerdictSource s) noexcept {
  switch (s) {
    case VerdictSource::LLM: return "llm";
    case VerdictSource::Human: return "human";
    case VerdictSource::Majority: return "majority";
  }
  return "?";
}

std::string_view tiebreak_note_name(TiebreakNote n) noexcept {
  switch (n) {
    case TiebreakNote::HumanCorrect: return "human_correct";
    case TiebreakNote::LLMCorrect: return "llm_correct";
    case TiebreakNote::MissingContext: return "missing_context";
  }
  return "?";
}

nlohmann::json final_verdict_to_json(const FinalVerdict& f) {
  auto votes = nlohmann::json::array();
  for (const auto& v : f.votes) votes.push_back(human_verdict_to_json(v));
  nlohmann::json j = {{"label", f.label}, {"source", verdict_source_name(f.source)}, {"votes", votes}};
  if (f.tiebreak_note) j["tiebreak_note"] = tiebreak_note_name(*f.tiebreak_note);
  return j;
}

FinalVerdict final_verdict_from_json(const nlohmann::json& j) {
  FinalVerdict f;
  f.label = j.at("label").get<int>();
  const auto source = j.at("source").get<std::string>();
  if (source == "llm") {
    f.source = VerdictSource::LLM;
  } else if (source == "human") {
    f.source = VerdictSource::Human;
  } else if (source == "majority") {
    f.source = VerdictSource::Majority;
  } else {
    throw Error(Errc::InvalidArgument, "unknown verdict source '" + source + "'");
  }
  for (const auto& v : j.value("votes", nlohmann::json::array())) {
    f.votes.push_back(human_verdict_from_json(v));
  }
  if (j.contains("tiebreak_note")) {
    const auto note = j["tiebreak_note"].get<std::string>();
    if (note == "human_correct") {
      f.tiebreak_note = TiebreakNote::HumanCorrect;
    } else if (note == "llm_correct") {
      f.tiebreak_note = TiebreakNote::LLMCorrect;
    } else if (note == "missing_context") {
      f.tiebreak_note = TiebreakNote::MissingContext;
    } else {
      throw Error(Errc::InvalidArgument, "unknown tiebreak note '" + note + "'");
    }
  }
  return f;
}

FinalVerdict aggregate_majority(std::span<const HumanVerdict> votes) {
  if (votes.empty() || votes.size() % 2 == 0) {
    throw Error(Errc::EvenVoteCount,
                "majority needs an odd number of votes, got " + std::to_string(votes.size()));
  }
  std::size_t yes = 0;
  for (const auto& v : votes) yes += v.label == 1 ? 1 : 0;
  FinalVerdict f;
  f.label = 2 * yes > votes.size() ? 1 : 0;
  f.source = votes.size() == 1 ? VerdictSource::Human : VerdictSource::Majority;
  f.votes.assign(votes.begin(), votes.end());
  return f;
}

TiebreakNote tiebreak_outcome(int first_human_label, int llm_label, int final_label) noexcept {
  if (final_label == llm_label && final_label != first_human_label) return TiebreakNote::LLMCorrect;
  return TiebreakNote::HumanCorrect;
}

FinalVerdict llm_final(const RoutingDecision& decision) {
  if (!is_automated(decision.outcome)) {
    throw Error(Errc::InvalidArgument, "item was routed to a human");
  }
  FinalVerdict f;
  f.label = decision.outcome == Outcome::AutoViolative ? 1 : 0;
  f.source = VerdictSource::LLM;
  return f;
}

std::vector<Span> build_assist_payload(std::string_view text,
                                       std::span<const std::string> keywords) {
  auto fold = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  std::string haystack(text.size(), '\0');
  std::transform(text.begin(), text.end(), haystack.begin(), fold);

  std::vector<Span> spans;
  for (const auto& keyword : keywords) {
    if (keyword.empty()) continue;
    std::string needle(keyword.size(), '\0');
    std::transform(keyword.begin(), keyword.end(), needle.begin(), fold);
    for (auto pos = haystack.find(needle); pos != std::string::npos;
         pos = haystack.find(needle, pos + needle.size())) {
      spans.push_back({pos, pos + needle.size()});
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.start != b.start ? a.start < b.start : a.end < b.end; });
  std::vector<Span> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.start < merged.back().end) {
      merged.back().end = std::max(merged.back().end, s.end);
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

nlohmann::json spans_to_json(std::span<const Span> spans) {
  auto out = nlohmann::json::array();
  for (const auto& s : spans) out.push_back({s.start, s.end});
  return out;
}

}  // namespace modq
