#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "modq/error.hpp"
#include "modq/random.hpp"
#include "modq/router.hpp"
#include "oracles.hpp"

using namespace modq;

namespace {

Verdict scored(double s) {
  Verdict v;
  v.score = s;
  v.label = s >= 0.5 ? 1 : 0;
  v.score_from_probabilities = true;
  return v;
}

ContentItem item(const std::string& id = "i1", const std::string& text = "hello") {
  return {id, text, "hate", std::nullopt, 0, false};
}

RoutingPolicy policy_for(RoutingMode mode) {
  RoutingPolicy p;
  p.mode = mode;
  p.prefilter_t = 0.3;
  p.escalate_t = 0.9;
  p.validation_confidence = 0.8;
  return p;
}

HumanVerdict vote(int label, const std::string& rater = "r") { return {rater, label, Seconds(1.0), false}; }

const std::vector<RoutingMode> kModes = {RoutingMode::PreFilter,  RoutingMode::RapidEscalation,
                                         RoutingMode::Autonomous, RoutingMode::Validation,
                                         RoutingMode::Assistance, RoutingMode::Layered};

}  // namespace

TEST(Route, PreFilterBelowThreshold) {
  RoutingPolicy p;
  p.mode = RoutingMode::PreFilter;
  p.prefilter_t = 0.3;
  EXPECT_EQ(route_item(item(), scored(0.2), p).outcome, Outcome::AutoNonViolative);
  EXPECT_EQ(route_item(item(), scored(0.3), p).outcome, Outcome::ToHuman);
}

TEST(Route, LayeredBetweenThresholds) {
  RoutingPolicy p;
  p.mode = RoutingMode::Layered;
  p.prefilter_t = 0.2;
  p.escalate_t = 0.95;
  EXPECT_EQ(route_item(item(), scored(0.5), p).outcome, Outcome::ToHuman);
  EXPECT_EQ(route_item(item(), scored(0.1), p).outcome, Outcome::AutoNonViolative);
  EXPECT_EQ(route_item(item(), scored(0.95), p).outcome, Outcome::AutoViolative);
}

TEST(Route, RapidEscalationAndAutonomous) {
  RoutingPolicy esc;
  esc.mode = RoutingMode::RapidEscalation;
  esc.escalate_t = 0.9;
  EXPECT_EQ(route_item(item(), scored(0.91), esc).outcome, Outcome::AutoViolative);
  EXPECT_EQ(route_item(item(), scored(0.89), esc).outcome, Outcome::ToHuman);

  RoutingPolicy aut;
  aut.mode = RoutingMode::Autonomous;
  EXPECT_EQ(route_item(item(), scored(0.5), aut).outcome, Outcome::AutoViolative);
  EXPECT_EQ(route_item(item(), scored(0.49), aut).outcome, Outcome::AutoNonViolative);

  Verdict label_only;
  label_only.label = 1;
  label_only.score = 1.0;
  EXPECT_EQ(route_item(item(), label_only, aut).outcome, Outcome::AutoViolative);
}

TEST(Route, AppealsGoToHumans) {
  auto appealed = item();
  appealed.appeal = true;
  for (auto mode : kModes) {
    EXPECT_EQ(route_item(appealed, scored(0.99), policy_for(mode)).outcome, Outcome::ToHuman);
  }
}

TEST(Route, MissingThresholdAndScore) {
  RoutingPolicy p;
  p.mode = RoutingMode::PreFilter;
  try {
    route_item(item(), scored(0.5), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingThreshold);
  }
  Verdict label_only;
  label_only.label = 1;
  label_only.score = 1.0;
  try {
    route_item(item(), label_only, policy_for(RoutingMode::PreFilter));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingScore);
  }
  auto inverted = policy_for(RoutingMode::Layered);
  inverted.prefilter_t = 0.95;
  inverted.escalate_t = 0.2;
  EXPECT_THROW(inverted.validate(), Error);
}

TEST(Route, MatchesReferenceLoopOnTenThousandItems) {
  SplitMix64 rng(1);
  for (auto mode : kModes) {
    auto p = policy_for(mode);
    std::vector<int> got(4, 0), expected(4, 0);
    for (int i = 0; i < 10000; ++i) {
      const double s = rng.uniform();
      auto it = item("i" + std::to_string(i));
      it.appeal = rng.bernoulli(0.02);
      const auto d = route_item(it, scored(s), p);
      ++got[static_cast<int>(d.outcome)];
      ++expected[static_cast<int>(oracle::route(p, s, it.appeal))];
      ASSERT_TRUE(d.llm_verdict.has_value());
    }
    EXPECT_EQ(got, expected) << routing_mode_name(mode);
  }
}

TEST(Route, PolicyJsonRoundTrip) {
  auto p = policy_for(RoutingMode::Validation);
  p.extra_raters_on_disagreement = 4;
  const auto back = routing_policy_from_json(routing_policy_to_json(p));
  EXPECT_EQ(back.mode, p.mode);
  EXPECT_EQ(back.validation_confidence, p.validation_confidence);
  EXPECT_EQ(back.extra_raters_on_disagreement, 4);
  for (auto mode : kModes) EXPECT_EQ(parse_routing_mode(routing_mode_name(mode)), mode);
}

TEST(RoutingTable, FallbackEntry) {
  const auto table = routing_table_from_json(nlohmann::json::parse(
      R"({"hate":{"mode":"prefilter","prefilter_t":0.3},"*":{"mode":"assistance"}})"));
  ASSERT_NE(find_routing_policy(table, "hate"), nullptr);
  EXPECT_EQ(find_routing_policy(table, "hate")->mode, RoutingMode::PreFilter);
  EXPECT_EQ(find_routing_policy(table, "other")->mode, RoutingMode::Assistance);
  const RoutingTable empty;
  EXPECT_EQ(find_routing_policy(empty, "x"), nullptr);
}

TEST(Validation, ContractExamples) {
  RoutingPolicy p;
  p.mode = RoutingMode::Validation;
  p.validation_confidence = 0.9;
  const auto disagree = validation_check(item(), scored(0.97), vote(0), p);
  EXPECT_TRUE(disagree.request_extra);
  EXPECT_EQ(disagree.extra_count, 2);
  EXPECT_FALSE(validation_check(item(), scored(0.97), vote(1), p).request_extra);
  EXPECT_FALSE(validation_check(item(), scored(0.6), vote(0), p).request_extra);
  EXPECT_THROW(validation_check(item(), scored(0.6), vote(0), policy_for(RoutingMode::PreFilter)), Error);
}

TEST(Validation, FiresIffDisagreementAndConfidence) {
  SplitMix64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    RoutingPolicy p;
    p.mode = RoutingMode::Validation;
    p.validation_confidence = 0.5 + 0.5 * rng.uniform();
    const auto v = scored(rng.uniform());
    const int human = rng.bernoulli(0.5);
    const bool expected = human != v.label && std::max(v.score, 1 - v.score) >= *p.validation_confidence;
    EXPECT_EQ(validation_check(item(), v, vote(human), p).request_extra, expected);
  }
}

TEST(Validation, OddVoteTotalRequired) {
  auto p = policy_for(RoutingMode::Validation);
  p.extra_raters_on_disagreement = 3;
  EXPECT_THROW(p.validate(), Error);
  p.extra_raters_on_disagreement = 0;
  EXPECT_NO_THROW(p.validate());
}

TEST(Majority, ContractExamples) {
  const std::vector<HumanVerdict> one = {vote(1)};
  const auto single = aggregate_majority(one);
  EXPECT_EQ(single.label, 1);
  EXPECT_EQ(single.source, VerdictSource::Human);
  const std::vector<HumanVerdict> three = {vote(1), vote(0), vote(1)};
  const auto m = aggregate_majority(three);
  EXPECT_EQ(m.label, 1);
  EXPECT_EQ(m.source, VerdictSource::Majority);
  EXPECT_EQ(m.votes.size(), 3u);
  const std::vector<HumanVerdict> two = {vote(1), vote(0)};
  try {
    aggregate_majority(two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EvenVoteCount);
  }
  const std::vector<HumanVerdict> none;
  EXPECT_THROW(aggregate_majority(none), Error);
}

TEST(Majority, MatchesCountingOracle) {
  SplitMix64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto n = 2 * rng.below(5) + 1;
    std::vector<HumanVerdict> votes;
    std::vector<int> labels;
    for (std::uint64_t k = 0; k < n; ++k) {
      labels.push_back(rng.bernoulli(0.5));
      votes.push_back(vote(labels.back()));
    }
    EXPECT_EQ(aggregate_majority(votes).label, oracle::majority(labels));
  }
}

TEST(Tiebreak, Notes) {
  EXPECT_EQ(tiebreak_outcome(0, 1, 1), TiebreakNote::LLMCorrect);
  EXPECT_EQ(tiebreak_outcome(0, 1, 0), TiebreakNote::HumanCorrect);
  EXPECT_EQ(tiebreak_outcome(1, 1, 1), TiebreakNote::HumanCorrect);
}

TEST(LlmFinal, OnlyForAutomatedOutcomes) {
  RoutingDecision d;
  d.outcome = Outcome::AutoViolative;
  const auto f = llm_final(d);
  EXPECT_EQ(f.label, 1);
  EXPECT_EQ(f.source, VerdictSource::LLM);
  d.outcome = Outcome::ToHuman;
  EXPECT_THROW(llm_final(d), Error);
}

TEST(Assist, HandIndexedSpans) {
  const std::vector<std::string> kws = {"steal", "election"};
  EXPECT_EQ(build_assist_payload("Steal the election", kws), (std::vector<Span>{{0, 5}, {10, 18}}));
  const std::vector<std::string> absent = {"ballot"};
  EXPECT_TRUE(build_assist_payload("Steal the election", absent).empty());
  const std::vector<std::string> overlap = {"vote", "voter"};
  EXPECT_EQ(build_assist_payload("voter", overlap), (std::vector<Span>{{0, 5}}));
}

TEST(Assist, MatchesCoverageOracle) {
  SplitMix64 rng(4);
  const std::string alphabet = "abAB ";
  for (int trial = 0; trial < 5000; ++trial) {
    std::string text;
    for (auto n = rng.below(30); n > 0; --n) text += alphabet[rng.below(alphabet.size())];
    std::vector<std::string> kws;
    for (auto n = rng.below(4); n > 0; --n) {
      std::string k;
      for (auto m = 1 + rng.below(3); m > 0; --m) k += alphabet[rng.below(4)];
      kws.push_back(k);
    }
    EXPECT_EQ(build_assist_payload(text, kws), oracle::assist_spans(text, kws))
        << '"' << text << '"';
  }
}

TEST(Assist, SpansJson) {
  const std::vector<Span> spans = {{0, 5}, {10, 18}};
  EXPECT_EQ(spans_to_json(spans).dump(), "[[0,5],[10,18]]");
}

TEST(Serialization, DecisionAndFinalRoundTrip) {
  const auto d = route_item(item(), scored(0.1), policy_for(RoutingMode::PreFilter));
  const auto back = routing_decision_from_json(routing_decision_to_json(d));
  EXPECT_EQ(back.outcome, d.outcome);
  EXPECT_EQ(back.reason, d.reason);
  ASSERT_TRUE(back.llm_verdict);
  EXPECT_EQ(back.llm_verdict->score, 0.1);

  const std::vector<HumanVerdict> three = {vote(1, "a"), vote(0, "b"), vote(1, "c")};
  auto f = aggregate_majority(three);
  f.tiebreak_note = TiebreakNote::LLMCorrect;
  const auto fb = final_verdict_from_json(final_verdict_to_json(f));
  EXPECT_EQ(fb.label, 1);
  EXPECT_EQ(fb.source, VerdictSource::Majority);
  EXPECT_EQ(fb.votes.size(), 3u);
  EXPECT_EQ(fb.tiebreak_note, TiebreakNote::LLMCorrect);

  auto ci = item("x", "text");
  ci.ground_truth = 1;
  const auto cb = content_item_from_json(content_item_to_json(ci));
  EXPECT_EQ(cb.id, "x");
  EXPECT_EQ(cb.ground_truth, 1);
}
