#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "modq/error.hpp"
#include "modq/prompt.hpp"

namespace modq {

using Seconds = std::chrono::duration<double>;

struct RaterConfig {
  double temperature = 0.0;
  int max_output_tokens = 1;
  bool top_token_scores = true;
  int top_logprobs = 5;
  std::chrono::milliseconds request_timeout{30'000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{250};
  std::size_t parallelism_limit = 8;

  /// Throws InvalidArgument unless temperature is 0 and max_output_tokens >= 1.
  void validate() const;

  /// Room for an answer token plus a keyword line.
  static RaterConfig with_keywords();
};

nlohmann::json rater_config_to_json(const RaterConfig& config);
RaterConfig rater_config_from_json(const nlohmann::json& j);

struct Verdict {
  int label = 0;       // 1 violative, 0 non-violative
  double score = 0.0;  // P("Yes"); equals label when the backend gives no probabilities
  bool score_from_probabilities = false;
  std::optional<std::vector<std::string>> keywords;
  Seconds latency{0.0};
  std::string raw_text;
};

nlohmann::json verdict_to_json(const Verdict& verdict);
Verdict verdict_from_json(const nlohmann::json& j);

enum class BackendKind { RemoteCompletion, Mock };
enum class WireShape { Generic, OpenAI };

struct BackendDescriptor {
  BackendKind kind = BackendKind::Mock;
  std::optional<std::string> endpoint_url;  // required for RemoteCompletion
  std::string model_name = "mock";
  std::string auth_token_env_var = "MODQ_API_TOKEN";
  WireShape wire_shape = WireShape::Generic;
  // Mock only.
  std::optional<std::filesystem::path> mock_scores_path;
  std::uint64_t mock_seed = 0;

  void validate() const;
};

nlohmann::json backend_descriptor_to_json(const BackendDescriptor& d);
BackendDescriptor backend_descriptor_from_json(const nlohmann::json& j);

struct CompletionRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 1;
  int logprobs = 0;  // top-k token scores to request; 0 for none
  // Not sent over the wire; lets mock backends key scores by item.
  std::optional<std::string> item_id;
};

struct CompletionResponse {
  std::string text;
  std::optional<double> yes_probability;
  // Set by simulated backends so latency is reproducible.
  std::optional<Seconds> simulated_latency;
};

/// Failure raised by a backend. Retryable failures are retried by classify().
class BackendError : public Error {
 public:
  BackendError(Errc code, const std::string& what, bool retryable)
      : Error(code, what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  /// Thread-safe. Throws BackendError.
  virtual CompletionResponse complete(const CompletionRequest& request,
                                      std::chrono::milliseconds timeout) = 0;
};

nlohmann::json encode_completion_request(const CompletionRequest& request, WireShape shape);
/// Throws UnparseableResponse on a payload that does not match the shape.
CompletionResponse decode_completion_response(const nlohmann::json& body, WireShape shape);

/// JSON-over-HTTP completion client. Bearer token read from the descriptor's
/// environment variable at construction.
class HttpCompletionBackend final : public CompletionBackend {
 public:
  explicit HttpCompletionBackend(BackendDescriptor descriptor);
  CompletionResponse complete(const CompletionRequest& request,
                              std::chrono::milliseconds timeout) override;

 private:
  BackendDescriptor descriptor_;
  std::string scheme_host_port_;
  std::string path_;
  std::optional<std::string> token_;
};

using ScoreTable = std::unordered_map<std::string, double>;

/// CSV `id,score`, optional header row.
ScoreTable load_score_table(const std::filesystem::path& path);
ScoreTable parse_score_table(std::string_view csv);

/// Deterministic pseudo-score in [0, 1) for ids absent from a score table.
double pseudo_score(std::string_view item_id, std::uint64_t seed) noexcept;

/// Tabled score (or pseudo-score) with label = score >= 0.5.
Verdict mock_score(std::string_view item_id, const ScoreTable& table, std::uint64_t seed = 0);

/// Offline backend answering from a score table. Prompts without an item id
/// are keyed by a hash of the prompt text.
class MockBackend final : public CompletionBackend {
 public:
  explicit MockBackend(ScoreTable scores = {}, std::uint64_t seed = 0);

  CompletionResponse complete(const CompletionRequest& request,
                              std::chrono::milliseconds timeout) override;

  void set_score(const std::string& item_id, double score);
  void set_keywords(const std::string& item_id, std::vector<std::string> keywords);
  void set_latency(Seconds latency) { latency_ = latency; }
  /// Simulates an outage; complete() throws a retryable BackendUnavailable.
  void set_available(bool available) { available_ = available; }
  /// Holds each call open for `delay` of wall time (concurrency tests).
  void set_call_delay(std::chrono::milliseconds delay) { call_delay_ = delay; }

  std::size_t request_count() const noexcept { return requests_; }
  std::size_t max_in_flight() const noexcept { return max_in_flight_; }

 private:
  mutable std::mutex mutex_;
  ScoreTable scores_;
  std::unordered_map<std::string, std::vector<std::string>> keywords_;
  std::uint64_t seed_;
  Seconds latency_{0.0};
  std::atomic<bool> available_{true};
  std::chrono::milliseconds call_delay_{0};
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
};

std::unique_ptr<CompletionBackend> make_backend(const BackendDescriptor& descriptor);

/// Leading answer token of a completion: 1 for "Yes", 0 for "No" (trimmed,
/// case-insensitive, optional "Answer:" prefix). Throws UnparseableResponse.
int parse_answer(std::string_view text);

/// Items of the first "Keywords:" line split on '|', trimmed, empties dropped.
/// Empty when there is no such line.
std::vector<std::string> parse_keywords(std::string_view text);

/// Sends the prompt at temperature 0 and parses the verdict. Retries
/// retryable failures with exponential backoff; after max_retries throws
/// Timeout when the last failure was a timeout, else BackendUnavailable.
Verdict classify(const RenderedPrompt& prompt, const RaterConfig& config,
                 CompletionBackend& backend, std::optional<std::string> item_id = std::nullopt,
                 const BackendDescriptor& descriptor = {});

/// classify() plus keyword extraction; a missing keyword line yields [].
Verdict classify_with_keywords(const RenderedPrompt& prompt, const RaterConfig& config,
                               CompletionBackend& backend,
                               std::optional<std::string> item_id = std::nullopt,
                               const BackendDescriptor& descriptor = {});

struct BatchItem {
  const RenderedPrompt* prompt = nullptr;
  std::optional<std::string> item_id;
};

using BatchResult = std::variant<Verdict, Error>;

/// Classifies items with at most config.parallelism_limit requests in flight.
/// Results are positionally aligned with `items`.
std::vector<BatchResult> classify_batch(std::span<const BatchItem> items, const RaterConfig& config,
                                        CompletionBackend& backend, bool with_keywords = false,
                                        const BackendDescriptor& descriptor = {});

}  // namespace modq
