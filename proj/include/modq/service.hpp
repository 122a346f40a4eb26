#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "modq/calibration.hpp"
#include "modq/example_selector.hpp"
#include "modq/prompt.hpp"
#include "modq/rater.hpp"
#include "modq/rater_queue.hpp"
#include "modq/router.hpp"

namespace modq {

struct RaterProfile {
  std::string id;
  bool assist_enabled = false;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::map<std::string, Policy, std::less<>> policies;  // keyed by the item's policy field
  RoutingTable routing;
  std::vector<RaterProfile> raters;
  BackendDescriptor backend;
  RaterConfig rater_config;
  std::optional<std::filesystem::path> event_log_path;
  std::int64_t lease_ms = RaterQueue::kDefaultLeaseMs;
  // Scored, labeled JSONL used for GET /calibration; live human-finalized
  // items are used for policies it does not cover.
  std::optional<std::filesystem::path> calibration_corpus;
  std::vector<CalibrationTarget> calibration_targets = {
      {TargetKind::MinRecall, 0.95}, {TargetKind::MinRecall, 0.99},
      {TargetKind::MinPrecision, 0.95}, {TargetKind::MinPrecision, 0.99}};
  // Labeled examples for dynamic few-shot prompts; zero-shot without.
  std::optional<std::filesystem::path> examples_corpus;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  ForestParams forest;
};

/// Relative paths resolve against base_dir.
ServiceConfig service_config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir = {});
ServiceConfig load_service_config(const std::filesystem::path& path);

struct HttpResponse {
  int status = 200;
  nlohmann::json body;  // null for 204
};

/// Transport-independent request handlers over one rater queue.
class ModerationService {
 public:
  /// backend defaults to make_backend(config.backend).
  explicit ModerationService(ServiceConfig config,
                             std::unique_ptr<CompletionBackend> backend = nullptr,
                             RaterQueue::Clock clock = RaterQueue::system_clock_ms);
  ~ModerationService();

  HttpResponse post_item(std::string_view body);
  HttpResponse next_item(std::string_view rater_id);
  HttpResponse post_verdict(std::string_view body);
  HttpResponse stats() const;
  HttpResponse calibration(std::string_view policy) const;
  HttpResponse set_assist(std::string_view rater_id, std::string_view body);
  HttpResponse raters() const;
  HttpResponse policies() const;
  HttpResponse events(std::uint64_t after) const;

  const RaterQueue& queue() const noexcept { return *queue_; }
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  RenderedPrompt build_prompt(const ContentItem& item, const Policy& policy, bool with_keywords) const;
  std::optional<bool> assist_flag(std::string_view rater_id) const;

  ServiceConfig config_;
  std::unique_ptr<CompletionBackend> backend_;
  std::unique_ptr<EventLog> log_;
  std::unique_ptr<RaterQueue> queue_;
  std::map<std::string, CalibrationReport, std::less<>> fixed_calibration_;
  std::optional<ExampleStore> examples_;
  std::optional<HashingEmbedder> embedder_;
  mutable std::mutex raters_mutex_;
  std::map<std::string, bool, std::less<>> assist_;
};

/// httplib front end. Routes:
///   POST /items, GET /queue/next?rater_id=, POST /verdicts, GET /stats,
///   GET /calibration/{policy}, GET /raters, POST /raters/{id}/assist,
///   GET /policies, GET /events?after=
class HttpFrontend {
 public:
  explicit HttpFrontend(ModerationService& service);
  ~HttpFrontend();

  /// Binds to port (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  bool serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace modq
