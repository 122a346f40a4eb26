#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modq/calibration.hpp"
#include "modq/corpus.hpp"
#include "modq/prompt.hpp"
#include "modq/random.hpp"
#include "modq/rater.hpp"
#include "modq/rater_queue.hpp"
#include "modq/router.hpp"

namespace modq {

/// Standard normal via Box-Muller.
double sample_normal(SplitMix64& rng) noexcept;
/// Marsaglia-Tsang; shape > 0.
double sample_gamma(SplitMix64& rng, double shape);
double sample_beta(SplitMix64& rng, double alpha, double beta);

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Class-conditional score distributions for synthetic LLM scores.
struct ScoreModel {
  BetaParams violative{5.0, 2.0};
  BetaParams nonviolative{2.0, 5.0};
};

struct SyntheticCorpusSpec {
  std::size_t count = 1000;
  double violative_fraction = 0.5;
  std::string policy = "hate_speech";
  ScoreModel scores;
  std::string id_prefix = "item-";
};

/// Labeled items with Beta-distributed scores and filler text of varied
/// length. Exactly round(count * violative_fraction) items are violative;
/// their positions are shuffled by the seed.
std::vector<CorpusRecord> generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                                    std::uint64_t seed);

/// Parses "a:b" into a / (a + b). Throws ConfigError.
double parse_mix(std::string_view mix);

struct SimRater {
  std::string rater_id;
  double accuracy = 0.9;
  double latency_median_s = 30.0;
  double latency_sigma = 0.5;
  std::uint64_t seed = 0;
};

nlohmann::json sim_rater_to_json(const SimRater& r);
SimRater sim_rater_from_json(const nlohmann::json& j);

/// Agrees with the ground truth with probability `accuracy`; latency is
/// lognormal. Deterministic in (rater.seed, rater_id, item.id). Throws
/// MissingGroundTruth.
HumanVerdict simulate_human_verdict(const SimRater& rater, const ContentItem& item);

enum class ScoreSource {
  Corpus,   // the record's "score" field
  Beta,     // drawn from the score model per item
  Oracle,   // correct with probability oracle_accuracy
  Backend,  // whatever the configured backend answers
};

std::string_view score_source_name(ScoreSource s) noexcept;

struct SimConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> corpus_path;
  SyntheticCorpusSpec synthetic;  // used without corpus_path
  RoutingPolicy routing;
  std::vector<SimRater> raters;
  BackendDescriptor backend;
  RaterConfig rater_config;
  ScoreSource score_source = ScoreSource::Beta;
  double oracle_accuracy = 0.95;
  double llm_latency_s = 1.0;
  CostRates cost_rates;
  std::map<std::string, std::filesystem::path, std::less<>> policy_files;
  std::optional<std::filesystem::path> event_log_path;
  bool include_items = true;
};

/// Relative paths in the file resolve against `base_dir`.
SimConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SimConfig load_sim_config(const std::filesystem::path& path);

struct ItemOutcome {
  std::string id;
  int ground_truth = 0;
  Outcome outcome = Outcome::ToHuman;
  std::optional<double> llm_score;
  int final_label = 0;
  VerdictSource source = VerdictSource::Human;
  int baseline_label = 0;
  std::size_t length = 0;
  std::size_t votes = 0;

  bool correct() const noexcept { return final_label == ground_truth; }
  bool baseline_correct() const noexcept { return baseline_label == ground_truth; }
};

struct ErrorDelta {
  std::uint64_t pipeline = 0;
  std::uint64_t baseline = 0;  // human-only, first-assigned rater
  std::int64_t reduction() const noexcept {
    return static_cast<std::int64_t>(baseline) - static_cast<std::int64_t>(pipeline);
  }
};

struct ClassRouting {
  std::uint64_t auto_non_violative = 0;
  std::uint64_t auto_violative = 0;
  std::uint64_t to_human = 0;
  std::uint64_t total() const noexcept { return auto_non_violative + auto_violative + to_human; }
};

struct MetricsReport {
  std::size_t total = 0;
  double m1_automated_fraction = 0.0;
  double human_routed_fraction = 0.0;
  LatencyStats m2_latency;
  ErrorDelta m3_false_negatives;
  ErrorDelta m4_false_positives;
  ConfusionMatrix confusion;
  ConfusionMatrix baseline_confusion;
  std::vector<BucketAccuracy> per_length_accuracy;
  std::uint64_t extra_rating_count = 0;  // additional human ratings gathered
  std::uint64_t validation_triggers = 0;
  std::uint64_t backend_failures = 0;
  ClassRouting violative_routing;
  ClassRouting nonviolative_routing;
  QueueStats queue;
  double llm_cost = 0.0;
  std::vector<ItemOutcome> items;

  double accuracy() const noexcept { return confusion.accuracy().value_or(0.0); }
  double baseline_accuracy() const noexcept { return baseline_confusion.accuracy().value_or(0.0); }
};

nlohmann::json metrics_report_to_json(const MetricsReport& r, bool include_items = true);
/// Reads the items array back; aggregate fields are restored where present.
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Routes every item through LLM scoring, the routing policy, the rater queue
/// and simulated humans, and compares against the human-only baseline.
/// Throws CorpusError (missing labels, single class, missing scores),
/// ConfigError (rater pool too small for the mode).
MetricsReport run_simulation(const SimConfig& config);

/// Same as above on an explicit item list.
MetricsReport run_simulation(const SimConfig& config, const std::vector<CorpusRecord>& corpus);

/// McNemar over per-item correctness. Throws MisalignedCorpora unless both
/// reports list the same item ids in the same order.
McNemarResult compare_pipelines(const MetricsReport& a, const MetricsReport& b);

}  // namespace modq
