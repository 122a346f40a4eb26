#include "modq/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "modq/error.hpp"

namespace modq {
namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) noexcept {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void validate_scored(std::span<const ScoredItem> scored) {
  if (scored.empty()) throw Error(Errc::EmptyDataset, "no scored items");
  for (const auto& item : scored) {
    if (item.label != 0 && item.label != 1) {
      throw Error(Errc::InvalidArgument, "label must be 0 or 1");
    }
    if (!(item.score >= 0.0 && item.score <= 1.0)) {
      throw Error(Errc::InvalidArgument, "score outside [0,1]");
    }
  }
}

void validate_target(double target) {
  if (!(target > 0.0 && target <= 1.0)) {
    throw Error(Errc::InvalidArgument, "target must lie in (0, 1]");
  }
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::optional<double> ConfusionMatrix::precision() const noexcept { return ratio(tp, tp + fp); }
std::optional<double> ConfusionMatrix::recall() const noexcept { return ratio(tp, positives()); }
std::optional<double> ConfusionMatrix::specificity() const noexcept {
  return ratio(tn, negatives());
}
std::optional<double> ConfusionMatrix::accuracy() const noexcept { return ratio(tp + tn, total()); }

nlohmann::json confusion_to_json(const ConfusionMatrix& m) {
  nlohmann::json j = {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
  // Absent, never NaN.
  if (auto p = m.precision()) j["precision"] = *p;
  if (auto r = m.recall()) j["recall"] = *r;
  if (auto s = m.specificity()) j["specificity"] = *s;
  if (auto a = m.accuracy()) j["accuracy"] = *a;
  return j;
}

ConfusionMatrix confusion_at(std::span<const ScoredItem> scored, double threshold) {
  validate_scored(scored);
  ConfusionMatrix m;
  for (const auto& item : scored) {
    const bool predicted = item.score >= threshold;
    if (item.label == 1) {
      predicted ? ++m.tp : ++m.fn;
    } else {
      predicted ? ++m.fp : ++m.tn;
    }
  }
  return m;
}

PrCurve pr_curve(std::span<const ScoredItem> scored) {
  validate_scored(scored);
  std::vector<ScoredItem> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });

  ConfusionMatrix m;
  for (const auto& item : sorted) item.label == 1 ? ++m.fn : ++m.tn;
  if (m.positives() == 0 || m.negatives() == 0) {
    throw Error(Errc::DegenerateDataset, "pr curve needs both violative and non-violative items");
  }

  PrCurve curve;
  curve.points.push_back({kAboveAllScores, m});
  for (std::size_t i = 0; i < sorted.size();) {
    const double s = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == s; ++i) {
      if (sorted[i].label == 1) {
        ++m.tp;
        --m.fn;
      } else {
        ++m.fp;
        --m.tn;
      }
    }
    curve.points.push_back({s, m});
  }
  if (curve.points.back().threshold > 0.0) curve.points.push_back({0.0, m});
  return curve;
}

std::string_view target_kind_name(TargetKind kind) noexcept {
  return kind == TargetKind::MinRecall ? "recall" : "precision";
}

CalibrationTarget parse_calibration_target(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw Error(Errc::InvalidArgument, "expected recall=<v> or precision=<v>");
  }
  CalibrationTarget t;
  const auto key = text.substr(0, eq);
  if (key == "recall") {
    t.kind = TargetKind::MinRecall;
  } else if (key == "precision") {
    t.kind = TargetKind::MinPrecision;
  } else {
    throw Error(Errc::InvalidArgument, "unknown target kind '" + std::string(key) + "'");
  }
  const auto value = text.substr(eq + 1);
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), t.value);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error(Errc::InvalidArgument, "bad target value '" + std::string(value) + "'");
  }
  validate_target(t.value);
  return t;
}

ThresholdChoice threshold_for_recall(const PrCurve& curve, double target) {
  validate_target(target);
  ThresholdChoice choice;
  choice.target = {TargetKind::MinRecall, target};
  for (const auto& p : curve.points) {
    if (p.recall() >= target) {
      choice.threshold = p.threshold;
      choice.achieved = p;
      choice.attainable = true;
      return choice;
    }
  }
  if (!curve.points.empty()) choice.achieved = curve.points.back();
  return choice;
}

ThresholdChoice threshold_for_recall(std::span<const ScoredItem> scored, double target) {
  validate_target(target);
  return threshold_for_recall(pr_curve(scored), target);
}

ThresholdChoice threshold_for_precision(const PrCurve& curve, double target) {
  validate_target(target);
  ThresholdChoice choice;
  choice.target = {TargetKind::MinPrecision, target};
  const PrPoint* best = nullptr;
  for (const auto& p : curve.points) {
    const auto precision = p.precision();
    if (!precision || *precision < target) continue;
    // Descending thresholds: strict > keeps the larger threshold on ties.
    if (!best || p.recall() > best->recall()) best = &p;
  }
  if (best) {
    choice.threshold = best->threshold;
    choice.achieved = *best;
    choice.attainable = true;
  } else if (!curve.points.empty()) {
    choice.achieved = curve.points.front();
  }
  return choice;
}

ThresholdChoice threshold_for_precision(std::span<const ScoredItem> scored, double target) {
  validate_target(target);
  return threshold_for_precision(pr_curve(scored), target);
}

ThresholdChoice choose_threshold(const PrCurve& curve, const CalibrationTarget& target) {
  return target.kind == TargetKind::MinRecall ? threshold_for_recall(curve, target.value)
                                              : threshold_for_precision(curve, target.value);
}

double chi_square1_sf(double statistic) noexcept {
  if (statistic <= 0.0) return 1.0;
  return std::erfc(std::sqrt(statistic / 2.0));
}

McNemarResult mcnemar_from_counts(std::uint64_t b, std::uint64_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  const std::uint64_t n = b + c;
  if (n == 0) {
    r.no_discordant_pairs = true;
    return r;
  }
  const double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  r.statistic = diff > 0.0 ? diff * diff / static_cast<double>(n) : 0.0;
  if (n >= 25) {
    r.p_value = chi_square1_sf(r.statistic);
    return r;
  }
  r.exact = true;
  const std::uint64_t k = std::min(b, c);
  double binom = 1.0;  // C(n, i)
  double tail = 0.0;
  for (std::uint64_t i = 0; i <= k; ++i) {
    tail += binom;
    binom = binom * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
  return r;
}

McNemarResult mcnemar(std::span<const std::pair<bool, bool>> paired) {
  if (paired.empty()) throw Error(Errc::EmptyDataset, "no paired outcomes");
  std::uint64_t b = 0;
  std::uint64_t c = 0;
  for (const auto& [a_ok, b_ok] : paired) {
    if (a_ok && !b_ok) ++b;
    if (!a_ok && b_ok) ++c;
  }
  return mcnemar_from_counts(b, c);
}

std::string LengthBucket::label() const {
  return hi ? std::to_string(lo) + "-" + std::to_string(*hi) : std::to_string(lo) + "+";
}

std::vector<LengthBucket> default_length_buckets() {
  std::vector<LengthBucket> out;
  for (std::size_t lo = 0; lo < 100; lo += 10) out.push_back({lo, lo + 9});
  out.push_back({100, std::nullopt});
  return out;
}

std::vector<BucketAccuracy> accuracy_by_length(std::span<const LengthSample> samples,
                                               std::span<const LengthBucket> buckets) {
  if (buckets.empty() || buckets.front().lo != 0 || buckets.back().hi) {
    throw Error(Errc::InvalidArgument, "buckets must start at 0 and end unbounded");
  }
  for (std::size_t i = 0; i + 1 < buckets.size(); ++i) {
    if (!buckets[i].hi || *buckets[i].hi < buckets[i].lo || buckets[i + 1].lo != *buckets[i].hi + 1) {
      throw Error(Errc::InvalidArgument, "buckets must be contiguous and disjoint");
    }
  }
  std::vector<BucketAccuracy> acc(buckets.size());
  for (std::size_t i = 0; i < buckets.size(); ++i) acc[i].bucket = buckets[i];
  for (const auto& s : samples) {
    auto it = std::upper_bound(buckets.begin(), buckets.end(), s.length,
                               [](std::size_t len, const LengthBucket& b) { return len < b.lo; });
    auto& slot = acc[static_cast<std::size_t>(it - buckets.begin()) - 1];
    ++slot.n;
    if (s.correct) ++slot.correct;
  }
  std::vector<BucketAccuracy> out;
  for (auto& b : acc) {
    if (b.n == 0) continue;
    b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.n);
    b.ci_half_width = 1.96 * std::sqrt(b.accuracy * (1.0 - b.accuracy) / static_cast<double>(b.n));
    out.push_back(b);
  }
  return out;
}

nlohmann::json bucket_accuracy_to_json(std::span<const BucketAccuracy> buckets) {
  auto out = nlohmann::json::array();
  for (const auto& b : buckets) {
    out.push_back({{"bucket", b.bucket.label()},
                   {"n", b.n},
                   {"correct", b.correct},
                   {"accuracy", b.accuracy},
                   {"ci_half_width", b.ci_half_width}});
  }
  return out;
}

double cost_estimate(std::uint64_t input_chars, std::uint64_t output_chars, double rate_in,
                     double rate_out) {
  if (!(rate_in >= 0.0) || !(rate_out >= 0.0)) {
    throw Error(Errc::InvalidArgument, "rates must be non-negative");
  }
  return rate_in * static_cast<double>(input_chars) / 1000.0 +
         rate_out * static_cast<double>(output_chars) / 1000.0;
}

double cost_estimate(std::uint64_t input_chars, std::uint64_t output_chars,
                     const CostRates& rates) {
  return cost_estimate(input_chars, output_chars, rates.input_per_1k, rates.output_per_1k);
}

double queue_cost(std::span<const std::uint64_t> prompt_chars, std::uint64_t output_chars_each,
                  const CostRates& rates) {
  std::uint64_t in = 0;
  for (auto c : prompt_chars) in += c;
  return cost_estimate(in, output_chars_each * prompt_chars.size(), rates);
}

CostRates cost_rates_from_json(const nlohmann::json& j) {
  CostRates r;
  r.input_per_1k = j.value("input_per_1k", r.input_per_1k);
  r.output_per_1k = j.value("output_per_1k", r.output_per_1k);
  cost_estimate(0, 0, r);
  return r;
}

LatencyStats latency_stats(std::span<const double> human_s, std::span<const double> llm_s) {
  if (human_s.size() != llm_s.size()) {
    throw Error(Errc::MisalignedCorpora, "latency series differ in length");
  }
  LatencyStats s;
  if (human_s.empty()) return s;
  for (std::size_t i = 0; i < human_s.size(); ++i) {
    s.mean_human_s += human_s[i];
    s.mean_llm_s += llm_s[i];
  }
  s.mean_human_s /= static_cast<double>(human_s.size());
  s.mean_llm_s /= static_cast<double>(llm_s.size());
  s.delta_s = s.mean_human_s - s.mean_llm_s;
  return s;
}

nlohmann::json latency_stats_to_json(const LatencyStats& s) {
  return {{"mean_human_s", s.mean_human_s}, {"mean_llm_s", s.mean_llm_s}, {"delta_s", s.delta_s}};
}

CalibrationReport calibrate(std::string policy, std::span<const ScoredItem> scored,
                            std::span<const CalibrationTarget> targets) {
  CalibrationReport r;
  r.policy = std::move(policy);
  r.curve = pr_curve(scored);
  for (const auto& t : targets) r.choices.push_back(choose_threshold(r.curve, t));
  return r;
}

nlohmann::json pr_point_to_json(const PrPoint& p) {
  return {{"threshold", p.threshold},
          {"counts", confusion_to_json(p.counts)},
          {"precision", optional_number(p.precision())},
          {"recall", p.recall()},
          {"specificity", p.specificity()},
          {"accuracy", p.accuracy()}};
}

nlohmann::json threshold_choice_to_json(const ThresholdChoice& c) {
  nlohmann::json j = {{"target", {{"kind", target_kind_name(c.target.kind)}, {"value", c.target.value}}},
                      {"attainable", c.attainable}};
  if (c.attainable) {
    j["threshold"] = c.threshold;
    j["achieved"] = pr_point_to_json(c.achieved);
    j["prefilter_rate"] = c.prefilter_rate();
  } else {
    j["threshold"] = nullptr;
  }
  return j;
}

nlohmann::json calibration_report_to_json(const CalibrationReport& r) {
  auto points = nlohmann::json::array();
  for (const auto& p : r.curve.points) points.push_back(pr_point_to_json(p));
  auto choices = nlohmann::json::array();
  for (const auto& c : r.choices) choices.push_back(threshold_choice_to_json(c));
  return {{"policy", r.policy}, {"curve", points}, {"choices", choices}};
}

nlohmann::json mcnemar_to_json(const McNemarResult& r) {
  return {{"b", r.b},
          {"c", r.c},
          {"statistic", r.statistic},
          {"p_value", r.p_value},
          {"exact", r.exact},
          {"no_discordant_pairs", r.no_discordant_pairs}};
}

std::string pr_curve_csv(const PrCurve& curve) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "threshold,tp,fp,tn,fn,precision,recall,specificity,accuracy\n";
  for (const auto& p : curve.points) {
    out << p.threshold << ',' << p.counts.tp << ',' << p.counts.fp << ',' << p.counts.tn << ','
        << p.counts.fn << ',';
    if (auto prec = p.precision()) out << *prec;
    out << ',' << p.recall() << ',' << p.specificity() << ',' << p.accuracy() << '\n';
  }
  return out.str();
}

}  // namespace modq
