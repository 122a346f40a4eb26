#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace modq {

struct ScoredItem {
  double score = 0.0;  // p = Score("Yes") in [0, 1]
  int label = 0;       // ground truth, 1 violative
};

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t positives() const noexcept { return tp + fn; }
  std::uint64_t negatives() const noexcept { return tn + fp; }
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }

  // Absent when the denominator is zero.
  std::optional<double> precision() const noexcept;
  std::optional<double> recall() const noexcept;
  std::optional<double> specificity() const noexcept;
  std::optional<double> accuracy() const noexcept;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

nlohmann::json confusion_to_json(const ConfusionMatrix& m);

/// Counts with score >= threshold predicted violative. Throws EmptyDataset,
/// InvalidArgument on labels outside {0,1} or scores outside [0,1].
ConfusionMatrix confusion_at(std::span<const ScoredItem> scored, double threshold);

/// Threshold strictly above every valid score.
inline constexpr double kAboveAllScores = 0x1.0000000000001p0;  // nextafter(1.0, 2.0)

struct PrPoint {
  double threshold = 0.0;
  ConfusionMatrix counts;

  std::optional<double> precision() const noexcept { return counts.precision(); }
  double recall() const noexcept { return counts.recall().value_or(0.0); }
  double specificity() const noexcept { return counts.specificity().value_or(0.0); }
  double accuracy() const noexcept { return counts.accuracy().value_or(0.0); }
};

struct PrCurve {
  std::vector<PrPoint> points;  // thresholds strictly descending
};

/// One point per distinct score plus the sentinels kAboveAllScores and 0.
/// Throws DegenerateDataset unless both classes are present.
PrCurve pr_curve(std::span<const ScoredItem> scored);

enum class TargetKind { MinRecall, MinPrecision };

std::string_view target_kind_name(TargetKind kind) noexcept;

struct CalibrationTarget {
  TargetKind kind = TargetKind::MinRecall;
  double value = 0.95;  // in (0, 1]
};

/// Parses "recall=0.95" / "precision=0.99". Throws InvalidArgument.
CalibrationTarget parse_calibration_target(std::string_view text);

struct ThresholdChoice {
  CalibrationTarget target;
  double threshold = kAboveAllScores;
  PrPoint achieved;
  bool attainable = false;

  /// Specificity at the threshold: the share of non-violative items a
  /// pre-filter removes from the queue.
  double prefilter_rate() const noexcept { return achieved.specificity(); }
};

/// Largest candidate threshold whose recall reaches `target`.
ThresholdChoice threshold_for_recall(std::span<const ScoredItem> scored, double target);
ThresholdChoice threshold_for_recall(const PrCurve& curve, double target);

/// Among candidate thresholds with precision >= target, the one with the
/// highest recall (ties: the larger threshold). attainable=false when none.
ThresholdChoice threshold_for_precision(std::span<const ScoredItem> scored, double target);
ThresholdChoice threshold_for_precision(const PrCurve& curve, double target);

ThresholdChoice choose_threshold(const PrCurve& curve, const CalibrationTarget& target);

struct McNemarResult {
  std::uint64_t b = 0;  // a correct, b wrong
  std::uint64_t c = 0;  // a wrong, b correct
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;                // exact binomial test used (b + c < 25)
  bool no_discordant_pairs = false;  // b + c == 0
};

/// Paired comparison. Each pair is (classifier a correct, classifier b correct).
/// Throws EmptyDataset.
McNemarResult mcnemar(std::span<const std::pair<bool, bool>> paired);
McNemarResult mcnemar_from_counts(std::uint64_t b, std::uint64_t c);

/// Upper tail of the chi-square distribution with one degree of freedom.
double chi_square1_sf(double statistic) noexcept;

/// Inclusive character range; hi absent means unbounded.
struct LengthBucket {
  std::size_t lo = 0;
  std::optional<std::size_t> hi;

  bool contains(std::size_t length) const noexcept {
    return length >= lo && (!hi || length <= *hi);
  }
  std::string label() const;
};

/// 0-9, 10-19, ..., 90-99, 100+.
std::vector<LengthBucket> default_length_buckets();

struct LengthSample {
  std::size_t length = 0;  // characters (UTF-8 code points)
  bool correct = false;
};

struct BucketAccuracy {
  LengthBucket bucket;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double ci_half_width = 0.0;  // 95% normal approximation
};

/// Results for non-empty buckets only, in bucket order. Buckets must be
/// sorted, contiguous from 0 and end unbounded (InvalidArgument otherwise).
std::vector<BucketAccuracy> accuracy_by_length(std::span<const LengthSample> samples,
                                               std::span<const LengthBucket> buckets);

nlohmann::json bucket_accuracy_to_json(std::span<const BucketAccuracy> buckets);

struct CostRates {
  double input_per_1k = 0.0005;
  double output_per_1k = 0.0005;
};

double cost_estimate(std::uint64_t input_chars, std::uint64_t output_chars, double rate_in,
                     double rate_out);
double cost_estimate(std::uint64_t input_chars, std::uint64_t output_chars,
                     const CostRates& rates = {});

/// Sum over a queue of prompts, each producing `output_chars_each` characters.
double queue_cost(std::span<const std::uint64_t> prompt_chars, std::uint64_t output_chars_each,
                  const CostRates& rates = {});

CostRates cost_rates_from_json(const nlohmann::json& j);

struct LatencyStats {
  double mean_human_s = 0.0;
  double mean_llm_s = 0.0;
  double delta_s = 0.0;  // mean_human_s - mean_llm_s
};

/// Means over paired observations. Throws MisalignedCorpora on a length
/// mismatch; empty inputs give zeros.
LatencyStats latency_stats(std::span<const double> human_s, std::span<const double> llm_s);

nlohmann::json latency_stats_to_json(const LatencyStats& s);

struct CalibrationReport {
  std::string policy;
  PrCurve curve;
  std::vector<ThresholdChoice> choices;
};

CalibrationReport calibrate(std::string policy, std::span<const ScoredItem> scored,
                            std::span<const CalibrationTarget> targets);

nlohmann::json pr_point_to_json(const PrPoint& p);
nlohmann::json threshold_choice_to_json(const ThresholdChoice& c);
nlohmann::json calibration_report_to_json(const CalibrationReport& r);
nlohmann::json mcnemar_to_json(const McNemarResult& r);

/// `threshold,tp,fp,tn,fn,precision,recall,specificity,accuracy`; an absent
/// precision is an empty field.
std::string pr_curve_csv(const PrCurve& curve);

}  // namespace modq
