#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "modq/calibration.hpp"
#include "modq/error.hpp"
#include "modq/random.hpp"
#include "oracles.hpp"

using namespace modq;

namespace {

std::vector<ScoredItem> separable() {
  std::vector<ScoredItem> out;
  for (int i = 0; i < 50; ++i) out.push_back({0.9, 1});
  for (int i = 0; i < 50; ++i) out.push_back({0.1, 0});
  return out;
}

// Every score level holds nine violative items and one non-violative item,
// so precision is 0.9 at every threshold that selects anything.
std::vector<ScoredItem> capped_precision() {
  std::vector<ScoredItem> out;
  for (int level = 1; level <= 20; ++level) {
    const double s = level / 21.0;
    for (int i = 0; i < 9; ++i) out.push_back({s, 1});
    out.push_back({s, 0});
  }
  return out;
}

}  // namespace

TEST(Confusion, Boundaries) {
  SplitMix64 rng(1);
  const auto items = oracle::random_scored(rng, 500, false);
  const auto all = confusion_at(items, 0.0);
  EXPECT_EQ(all.tn + all.fn, 0u);
  EXPECT_EQ(all.tp, all.positives());
  EXPECT_EQ(all.fp, all.negatives());
  const auto none = confusion_at(items, 1.5);
  EXPECT_EQ(none.tp + none.fp, 0u);
  EXPECT_FALSE(none.precision().has_value());
}

TEST(Confusion, MatchesPerItemLoop) {
  SplitMix64 rng(2);
  const auto items = oracle::random_scored(rng, 1000, true);
  for (double t : {0.0, 0.1, 0.33, 0.5, 0.72, 0.98, 1.0}) {
    EXPECT_TRUE(oracle::same(oracle::count_at(items, t), confusion_at(items, t))) << t;
  }
}

TEST(Confusion, Errors) {
  const std::vector<ScoredItem> none;
  try {
    confusion_at(none, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyDataset);
  }
  const std::vector<ScoredItem> bad_label = {{0.5, 2}};
  EXPECT_THROW(confusion_at(bad_label, 0.5), Error);
  const std::vector<ScoredItem> bad_score = {{1.5, 1}};
  EXPECT_THROW(confusion_at(bad_score, 0.5), Error);
}

TEST(PrCurve, SeparableHasPerfectPoint) {
  const auto curve = pr_curve(separable());
  bool perfect = false;
  for (const auto& p : curve.points) {
    perfect |= p.precision() == 1.0 && p.recall() == 1.0;
  }
  EXPECT_TRUE(perfect);
}

TEST(PrCurve, IdenticalScoresGiveThreePoints) {
  const std::vector<ScoredItem> items = {{0.4, 1}, {0.4, 0}, {0.4, 1}};
  const auto curve = pr_curve(items);
  ASSERT_EQ(curve.points.size(), 3u);
  EXPECT_EQ(curve.points[0].threshold, kAboveAllScores);
  EXPECT_EQ(curve.points[1].threshold, 0.4);
  EXPECT_EQ(curve.points[2].threshold, 0.0);
}

TEST(PrCurve, DegenerateDataset) {
  const std::vector<ScoredItem> one_class = {{0.4, 1}, {0.6, 1}};
  try {
    pr_curve(one_class);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateDataset);
  }
}

TEST(PrCurve, MatchesBruteForceAtEveryCandidate) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto items = oracle::random_scored(rng, 2000, trial % 2 == 0);
    const auto curve = pr_curve(items);
    const auto candidates = oracle::candidate_thresholds(items);
    ASSERT_EQ(curve.points.size(), candidates.size());
    double prev_recall = -1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      EXPECT_EQ(curve.points[i].threshold, candidates[i]);
      EXPECT_TRUE(oracle::same(oracle::count_at(items, candidates[i]), curve.points[i].counts));
      EXPECT_GE(curve.points[i].recall(), prev_recall);
      prev_recall = curve.points[i].recall();
    }
  }
}

TEST(Thresholds, RecallMatchesExhaustiveScan) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto items = oracle::random_scored(rng, 3000, trial % 3 == 0);
    for (double target : {0.5, 0.9, 0.95, 0.99, 1.0}) {
      const auto choice = threshold_for_recall(items, target);
      const auto expected = oracle::recall_threshold(items, target);
      ASSERT_TRUE(expected);
      EXPECT_TRUE(choice.attainable);
      EXPECT_EQ(choice.threshold, *expected);
      EXPECT_GE(choice.achieved.recall(), target);
    }
  }
}

TEST(Thresholds, PrecisionMatchesExhaustiveScan) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto items = oracle::random_scored(rng, 3000, trial % 3 == 0);
    for (double target : {0.5, 0.8, 0.9, 0.95, 0.99}) {
      const auto choice = threshold_for_precision(items, target);
      const auto expected = oracle::precision_threshold(items, target);
      EXPECT_EQ(choice.attainable, expected.has_value());
      if (expected) {
        EXPECT_EQ(choice.threshold, *expected);
      }
    }
  }
}

TEST(Thresholds, SeparableData) {
  const auto items = separable();
  const auto r = threshold_for_recall(items, 0.95);
  EXPECT_EQ(r.prefilter_rate(), 1.0);
  const auto p = threshold_for_precision(items, 0.99);
  EXPECT_TRUE(p.attainable);
  EXPECT_EQ(p.achieved.recall(), 1.0);
}

TEST(Thresholds, UnattainablePrecision) {
  const auto items = capped_precision();
  double best = 0;
  for (double t : oracle::candidate_thresholds(items)) {
    best = std::max(best, oracle::precision_of(oracle::count_at(items, t)).value_or(0.0));
  }
  EXPECT_NEAR(best, 0.9, 1e-12);
  const auto choice = threshold_for_precision(items, 0.99);
  EXPECT_FALSE(choice.attainable);
  EXPECT_TRUE(threshold_for_precision(items, 0.9).attainable);
  EXPECT_TRUE(threshold_choice_to_json(choice)["threshold"].is_null());
}

TEST(Thresholds, ParseTargets) {
  const auto r = parse_calibration_target("recall=0.95");
  EXPECT_EQ(r.kind, TargetKind::MinRecall);
  EXPECT_DOUBLE_EQ(r.value, 0.95);
  EXPECT_EQ(parse_calibration_target("precision=0.99").kind, TargetKind::MinPrecision);
  EXPECT_THROW(parse_calibration_target("f1=0.5"), Error);
  EXPECT_THROW(parse_calibration_target("recall=1.5"), Error);
  EXPECT_THROW(parse_calibration_target("recall"), Error);
}

TEST(McNemar, HandArithmetic) {
  const auto r = mcnemar_from_counts(15, 5);
  EXPECT_DOUBLE_EQ(r.statistic, 4.05);
  EXPECT_TRUE(r.exact);
  const auto exact = mcnemar_from_counts(3, 0);
  EXPECT_DOUBLE_EQ(exact.p_value, 0.25);
  const auto big = mcnemar_from_counts(20, 5);
  EXPECT_DOUBLE_EQ(big.statistic, 7.84);
  EXPECT_FALSE(big.exact);
  EXPECT_NEAR(big.p_value, std::erfc(std::sqrt(7.84 / 2)), 1e-15);
}

TEST(McNemar, NoDiscordantPairs) {
  const auto r = mcnemar_from_counts(0, 0);
  EXPECT_TRUE(r.no_discordant_pairs);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(McNemar, BalancedDisagreement) {
  for (std::uint64_t b = 1; b < 200; ++b) {
    const auto r = mcnemar_from_counts(b, b);
    EXPECT_LE(r.statistic, 0.05 * double(2 * b));
    EXPECT_GE(r.p_value, 0.5);
  }
}

TEST(McNemar, SymmetricAndMatchesOracle) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = 1 + rng.below(300);
    const double pa = rng.uniform();
    const double pb = rng.uniform();
    std::vector<std::pair<bool, bool>> pairs, swapped;
    for (std::uint64_t i = 0; i < n; ++i) {
      pairs.emplace_back(rng.bernoulli(pa), rng.bernoulli(pb));
      swapped.emplace_back(pairs.back().second, pairs.back().first);
    }
    const auto r = mcnemar(pairs);
    const auto s = mcnemar(swapped);
    EXPECT_EQ(r.b, s.c);
    EXPECT_EQ(r.c, s.b);
    EXPECT_EQ(r.statistic, s.statistic);
    EXPECT_EQ(r.p_value, s.p_value);
    const auto o = oracle::mcnemar(pairs);
    EXPECT_EQ(r.b, o.b);
    EXPECT_EQ(r.c, o.c);
    EXPECT_NEAR(r.statistic, o.statistic, 1e-12);
    EXPECT_NEAR(r.p_value, o.p_value, 1e-9);
  }
  const std::vector<std::pair<bool, bool>> none;
  EXPECT_THROW(mcnemar(none), Error);
}

TEST(ChiSquare, KnownQuantiles) {
  EXPECT_NEAR(chi_square1_sf(3.841458820694124), 0.05, 1e-12);
  EXPECT_NEAR(chi_square1_sf(6.634896601021214), 0.01, 1e-12);
  EXPECT_EQ(chi_square1_sf(0.0), 1.0);
}

TEST(LengthAccuracy, DefaultBuckets) {
  const auto buckets = default_length_buckets();
  ASSERT_EQ(buckets.size(), 11u);
  EXPECT_EQ(buckets[0].label(), "0-9");
  EXPECT_EQ(buckets[9].label(), "90-99");
  EXPECT_EQ(buckets[10].label(), "100+");
  EXPECT_FALSE(buckets[10].hi.has_value());
}

TEST(LengthAccuracy, AllCorrectHasZeroWidth) {
  std::vector<LengthSample> samples;
  for (std::size_t i = 0; i < 500; ++i) samples.push_back({i % 150, true});
  const auto buckets = default_length_buckets();
  for (const auto& b : accuracy_by_length(samples, buckets)) {
    EXPECT_EQ(b.accuracy, 1.0);
    EXPECT_EQ(b.ci_half_width, 0.0);
  }
}

TEST(LengthAccuracy, MatchesNaiveRecount) {
  SplitMix64 rng(7);
  std::vector<LengthSample> samples;
  for (int i = 0; i < 5000; ++i) samples.push_back({rng.below(180), rng.bernoulli(0.8)});
  const auto buckets = default_length_buckets();
  const auto got = accuracy_by_length(samples, buckets);
  std::size_t idx = 0;
  for (const auto& bucket : buckets) {
    std::size_t n = 0, ok = 0;
    for (const auto& s : samples) {
      const bool in = s.length >= bucket.lo && (!bucket.hi || s.length <= *bucket.hi);
      n += in;
      ok += in && s.correct;
    }
    if (n == 0) continue;
    ASSERT_LT(idx, got.size());
    EXPECT_EQ(got[idx].n, n);
    EXPECT_EQ(got[idx].correct, ok);
    const double acc = double(ok) / double(n);
    EXPECT_DOUBLE_EQ(got[idx].accuracy, acc);
    EXPECT_NEAR(got[idx].ci_half_width, 1.96 * std::sqrt(acc * (1 - acc) / n), 1e-12);
    ++idx;
  }
  EXPECT_EQ(idx, got.size());
}

TEST(LengthAccuracy, RejectsGappedBuckets) {
  const std::vector<LengthBucket> gapped = {{0, 9}, {11, std::nullopt}};
  const std::vector<LengthSample> samples = {{3, true}};
  EXPECT_THROW(accuracy_by_length(samples, gapped), Error);
}

TEST(Cost, SpotValuesAndLinearity) {
  EXPECT_DOUBLE_EQ(cost_estimate(1000, 0, 0.0005, 0.0005), 0.0005);
  EXPECT_EQ(cost_estimate(0, 0), 0.0);
  EXPECT_THROW(cost_estimate(1, 1, -1.0, 0.0), Error);
  SplitMix64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    const auto a = rng.below(100000), b = rng.below(100000), c = rng.below(1000), d = rng.below(1000);
    const double k = 1 + rng.below(9);
    EXPECT_NEAR(cost_estimate(a + b, c + d), cost_estimate(a, c) + cost_estimate(b, d), 1e-12);
    EXPECT_NEAR(cost_estimate(a, c, 0.001 * k, 0.002 * k), k * cost_estimate(a, c, 0.001, 0.002), 1e-12);
  }
}

TEST(Cost, QueueMatchesDirectSummation) {
  SplitMix64 rng(9);
  std::vector<std::uint64_t> lengths;
  for (int i = 0; i < 50000; ++i) lengths.push_back(300 + rng.below(4000));
  long double oracle = 0;
  for (auto len : lengths) oracle += (static_cast<long double>(len) * 0.0005L + 1 * 0.0005L) / 1000.0L;
  EXPECT_NEAR(queue_cost(lengths, 1), static_cast<double>(oracle), 1e-9);
}

TEST(Latency, Means) {
  const std::vector<double> human = {30, 60, 90};
  const std::vector<double> llm = {1, 2, 3};
  const auto s = latency_stats(human, llm);
  EXPECT_DOUBLE_EQ(s.mean_human_s, 60);
  EXPECT_DOUBLE_EQ(s.mean_llm_s, 2);
  EXPECT_DOUBLE_EQ(s.delta_s, 58);
  const std::vector<double> short_llm = {1};
  EXPECT_THROW(latency_stats(human, short_llm), Error);
}

TEST(Report, JsonAndCsv) {
  const auto items = capped_precision();
  const std::vector<CalibrationTarget> targets = {{TargetKind::MinRecall, 0.95},
                                                  {TargetKind::MinPrecision, 0.99}};
  const auto report = calibrate("hate", items, targets);
  const auto j = calibration_report_to_json(report);
  EXPECT_EQ(j["policy"], "hate");
  ASSERT_EQ(j["choices"].size(), 2u);
  EXPECT_TRUE(j["choices"][1]["threshold"].is_null());
  EXPECT_FALSE(j["choices"][1]["attainable"].get<bool>());
  const auto csv = pr_curve_csv(report.curve);
  EXPECT_EQ(csv.rfind("threshold,tp,fp,tn,fn,precision,recall,specificity,accuracy\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')),
            report.curve.points.size() + 1);
}
