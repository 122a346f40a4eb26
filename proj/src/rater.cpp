#include "modq/rater.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "modq/random.hpp"

namespace modq {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && lower(s.substr(0, prefix.size())) == lower(prefix);
}

/// Sums the probability of every candidate whose trimmed token is "yes".
std::optional<double> yes_probability_from_top(const nlohmann::json& top) {
  if (!top.is_object()) return std::nullopt;
  double p = 0.0;
  bool any = false;
  for (const auto& [token, logprob] : top.items()) {
    if (!logprob.is_number()) continue;
    if (lower(trim(token)) == "yes") {
      p += std::exp(logprob.get<double>());
      any = true;
    }
  }
  if (!any) return 0.0;
  return std::min(p, 1.0);
}

}  // namespace

void RaterConfig::validate() const {
  if (temperature != 0.0) {
    throw Error(Errc::InvalidArgument, "classification requires temperature 0");
  }
  if (max_output_tokens < 1) throw Error(Errc::InvalidArgument, "max_output_tokens must be >= 1");
  if (max_retries < 0) throw Error(Errc::InvalidArgument, "max_retries must be >= 0");
  if (parallelism_limit == 0) throw Error(Errc::InvalidArgument, "parallelism_limit must be >= 1");
}

RaterConfig RaterConfig::with_keywords() {
  RaterConfig config;
  config.max_output_tokens = 64;
  return config;
}

nlohmann::json rater_config_to_json(const RaterConfig& c) {
  return {{"temperature", c.temperature},
          {"max_output_tokens", c.max_output_tokens},
          {"top_token_scores", c.top_token_scores},
          {"top_logprobs", c.top_logprobs},
          {"request_timeout_ms", c.request_timeout.count()},
          {"max_retries", c.max_retries},
          {"initial_backoff_ms", c.initial_backoff.count()},
          {"parallelism_limit", c.parallelism_limit}};
}

RaterConfig rater_config_from_json(const nlohmann::json& j) {
  RaterConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.top_token_scores = j.value("top_token_scores", c.top_token_scores);
  c.top_logprobs = j.value("top_logprobs", c.top_logprobs);
  c.request_timeout = std::chrono::milliseconds(
      j.value("request_timeout_ms", static_cast<std::int64_t>(c.request_timeout.count())));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.initial_backoff = std::chrono::milliseconds(
      j.value("initial_backoff_ms", static_cast<std::int64_t>(c.initial_backoff.count())));
  c.parallelism_limit = j.value("parallelism_limit", c.parallelism_limit);
  c.validate();
  return c;
}

nlohmann::json verdict_to_json(const Verdict& v) {
  nlohmann::json j = {{"label", v.label},
                      {"score", v.score},
                      {"score_from_probabilities", v.score_from_probabilities},
                      {"latency_s", v.latency.count()},
                      {"raw_text", v.raw_text}};
  if (v.keywords) j["keywords"] = *v.keywords;
  return j;
}

Verdict verdict_from_json(const nlohmann::json& j) {
  Verdict v;
  v.label = j.at("label").get<int>();
  v.score = j.at("score").get<double>();
  v.score_from_probabilities = j.value("score_from_probabilities", false);
  v.latency = Seconds(j.value("latency_s", 0.0));
  v.raw_text = j.value("raw_text", std::string{});
  if (j.contains("keywords")) v.keywords = j["keywords"].get<std::vector<std::string>>();
  return v;
}

void BackendDescriptor::validate() const {
  if (kind == BackendKind::RemoteCompletion && (!endpoint_url || endpoint_url->empty())) {
    throw Error(Errc::ConfigError, "remote backend requires endpoint_url");
  }
}

nlohmann::json backend_descriptor_to_json(const BackendDescriptor& d) {
  nlohmann::json j = {{"kind", d.kind == BackendKind::Mock ? "mock" : "remote"},
                      {"model_name", d.model_name},
                      {"auth_token_env_var", d.auth_token_env_var},
                      {"wire_shape", d.wire_shape == WireShape::OpenAI ? "openai" : "generic"},
                      {"mock_seed", d.mock_seed}};
  if (d.endpoint_url) j["endpoint_url"] = *d.endpoint_url;
  if (d.mock_scores_path) j["mock_scores_path"] = d.mock_scores_path->string();
  return j;
}

BackendDescriptor backend_descriptor_from_json(const nlohmann::json& j) {
  BackendDescriptor d;
  const auto kind = j.value("kind", std::string("mock"));
  if (kind == "mock") {
    d.kind = BackendKind::Mock;
  } else if (kind == "remote") {
    d.kind = BackendKind::RemoteCompletion;
  } else {
    throw Error(Errc::ConfigError, "unknown backend kind '" + kind + "'");
  }
  if (j.contains("endpoint_url")) d.endpoint_url = j["endpoint_url"].get<std::string>();
  d.model_name = j.value("model_name", d.model_name);
  d.auth_token_env_var = j.value("auth_token_env_var", d.auth_token_env_var);
  const auto shape = j.value("wire_shape", std::string("generic"));
  if (shape == "generic") {
    d.wire_shape = WireShape::Generic;
  } else if (shape == "openai") {
    d.wire_shape = WireShape::OpenAI;
  } else {
    throw Error(Errc::ConfigError, "unknown wire_shape '" + shape + "'");
  }
  if (j.contains("mock_scores_path")) d.mock_scores_path = j["mock_scores_path"].get<std::string>();
  d.mock_seed = j.value("mock_seed", d.mock_seed);
  d.validate();
  return d;
}

nlohmann::json encode_completion_request(const CompletionRequest& r, WireShape shape) {
  nlohmann::json j = {{"model", r.model},
                      {"prompt", r.prompt},
                      {"temperature", r.temperature},
                      {"max_tokens", r.max_tokens}};
  if (shape == WireShape::OpenAI) {
    if (r.logprobs > 0) j["logprobs"] = r.logprobs;
  } else {
    j["logprobs"] = r.logprobs;
  }
  return j;
}

CompletionResponse decode_completion_response(const nlohmann::json& body, WireShape shape) {
  CompletionResponse out;
  try {
    if (shape == WireShape::Generic) {
      out.text = body.at("text").get<std::string>();
      if (body.contains("token_logprobs") && body["token_logprobs"].is_array() &&
          !body["token_logprobs"].empty()) {
        out.yes_probability = yes_probability_from_top(body["token_logprobs"][0]);
      }
    } else {
      const auto& choice = body.at("choices").at(0);
      out.text = choice.at("text").get<std::string>();
      if (choice.contains("logprobs") && choice["logprobs"].is_object()) {
        const auto& lp = choice["logprobs"];
        if (lp.contains("top_logprobs") && lp["top_logprobs"].is_array() &&
            !lp["top_logprobs"].empty()) {
          out.yes_probability = yes_probability_from_top(lp["top_logprobs"][0]);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(Errc::UnparseableResponse, std::string("completion payload: ") + e.what(),
                       false);
  }
  return out;
}

HttpCompletionBackend::HttpCompletionBackend(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
  const std::string& url = *descriptor_.endpoint_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::ConfigError, "endpoint_url must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (const char* token = std::getenv(descriptor_.auth_token_env_var.c_str())) {
    token_ = token;
  }
}

CompletionResponse HttpCompletionBackend::complete(const CompletionRequest& request,
                                                   std::chrono::milliseconds timeout) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (token_) headers.emplace("Authorization", "Bearer " + *token_);
  const auto body = encode_completion_request(request, descriptor_.wire_shape).dump();
  auto result = client.Post(path_, headers, body, "application/json");
  if (!result) {
    const auto err = result.error();
    const bool timed_out = err == httplib::Error::Read || err == httplib::Error::Write ||
                           err == httplib::Error::ConnectionTimeout;
    throw BackendError(timed_out ? Errc::Timeout : Errc::BackendUnavailable,
                       "request to " + scheme_host_port_ + path_ + " failed: " +
                           httplib::to_string(err),
                       true);
  }
  const int status = result->status;
  if (status < 200 || status >= 300) {
    const bool retryable = status == 408 || status == 429 || status >= 500;
    throw BackendError(status == 408 ? Errc::Timeout : Errc::BackendUnavailable,
                       "backend returned HTTP " + std::to_string(status), retryable);
  }
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(Errc::UnparseableResponse, std::string("response body: ") + e.what(),
                       false);
  }
  return decode_completion_response(parsed, descriptor_.wire_shape);
}

ScoreTable parse_score_table(std::string_view csv) {
  ScoreTable table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto end = csv.find('\n', pos);
    const auto raw = csv.substr(pos, end == std::string_view::npos ? csv.size() - pos : end - pos);
    pos = end == std::string_view::npos ? csv.size() + 1 : end + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string_view::npos) {
      throw Error(Errc::CorpusError, "score table line " + std::to_string(line_no) + " has no comma");
    }
    auto id = trim(line.substr(0, comma));
    if (id.size() >= 2 && id.front() == '"' && id.back() == '"') id = id.substr(1, id.size() - 2);
    const auto value = trim(line.substr(comma + 1));
    double score = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), score);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      if (line_no == 1 && lower(value) == "score") continue;  // header
      throw Error(Errc::CorpusError,
                  "score table line " + std::to_string(line_no) + ": bad score '" +
                      std::string(value) + "'");
    }
    if (!(score >= 0.0 && score <= 1.0)) {
      throw Error(Errc::CorpusError,
                  "score table line " + std::to_string(line_no) + ": score outside [0,1]");
    }
    table[std::string(id)] = score;
  }
  return table;
}

ScoreTable load_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::CorpusError, "cannot open score table " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_score_table(buffer.str());
}

double pseudo_score(std::string_view item_id, std::uint64_t seed) noexcept {
  SplitMix64 rng(derive_seed(seed, item_id));
  return rng.uniform();
}

Verdict mock_score(std::string_view item_id, const ScoreTable& table, std::uint64_t seed) {
  Verdict v;
  const auto it = table.find(std::string(item_id));
  v.score = it != table.end() ? it->second : pseudo_score(item_id, seed);
  v.label = v.score >= 0.5 ? 1 : 0;
  v.score_from_probabilities = true;
  v.raw_text = v.label ? "Yes" : "No";
  return v;
}

MockBackend::MockBackend(ScoreTable scores, std::uint64_t seed)
    : scores_(std::move(scores)), seed_(seed) {}

void MockBackend::set_score(const std::string& item_id, double score) {
  std::lock_guard lock(mutex_);
  scores_[item_id] = score;
}

void MockBackend::set_keywords(const std::string& item_id, std::vector<std::string> keywords) {
  std::lock_guard lock(mutex_);
  keywords_[item_id] = std::move(keywords);
}

CompletionResponse MockBackend::complete(const CompletionRequest& request,
                                         std::chrono::milliseconds /*timeout*/) {
  ++requests_;
  const auto now = ++in_flight_;
  auto prev = max_in_flight_.load();
  while (prev < now && !max_in_flight_.compare_exchange_weak(prev, now)) {
  }
  struct Release {
    std::atomic<std::size_t>& counter;
    ~Release() { --counter; }
  } release{in_flight_};

  if (call_delay_.count() > 0) std::this_thread::sleep_for(call_delay_);
  if (!available_) throw BackendError(Errc::BackendUnavailable, "mock backend is down", true);

  std::string key;
  if (request.item_id) {
    key = *request.item_id;
  } else {
    std::ostringstream hex;
    hex << std::hex << fnv1a64(request.prompt);
    key = hex.str();
  }

  Verdict v;
  std::optional<std::vector<std::string>> keywords;
  {
    std::lock_guard lock(mutex_);
    v = mock_score(key, scores_, seed_);
    if (auto it = keywords_.find(key); it != keywords_.end()) keywords = it->second;
  }
  CompletionResponse out;
  out.text = v.label ? "Yes" : "No";
  if (request.max_tokens > 1 && keywords && !keywords->empty()) {
    out.text += "\nKeywords: ";
    for (std::size_t i = 0; i < keywords->size(); ++i) {
      if (i > 0) out.text += " | ";
      out.text += (*keywords)[i];
    }
  }
  if (request.logprobs > 0) out.yes_probability = v.score;
  out.simulated_latency = latency_;
  return out;
}

std::unique_ptr<CompletionBackend> make_backend(const BackendDescriptor& descriptor) {
  descriptor.validate();
  if (descriptor.kind == BackendKind::RemoteCompletion) {
    return std::make_unique<HttpCompletionBackend>(descriptor);
  }
  ScoreTable table;
  if (descriptor.mock_scores_path) table = load_score_table(*descriptor.mock_scores_path);
  return std::make_unique<MockBackend>(std::move(table), descriptor.mock_seed);
}

int parse_answer(std::string_view text) {
  auto line = trim(text.substr(0, text.find('\n')));
  if (starts_with_ci(line, "answer:")) line = trim(line.substr(7));
  std::size_t n = 0;
  while (n < line.size() && std::isalpha(static_cast<unsigned char>(line[n]))) ++n;
  const auto token = lower(line.substr(0, n));
  if (token == "yes") return 1;
  if (token == "no") return 0;
  throw Error(Errc::UnparseableResponse,
              "expected Yes or No, got '" + std::string(text.substr(0, 40)) + "'");
}

std::vector<std::string> parse_keywords(std::string_view text) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto line =
        trim(text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos));
    if (starts_with_ci(line, "keywords:")) {
      std::vector<std::string> out;
      auto rest = line.substr(9);
      std::size_t start = 0;
      while (start <= rest.size()) {
        const auto bar = rest.find('|', start);
        const auto item =
            trim(rest.substr(start, bar == std::string_view::npos ? rest.size() - start : bar - start));
        if (!item.empty()) out.emplace_back(item);
        if (bar == std::string_view::npos) break;
        start = bar + 1;
      }
      return out;
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return {};
}

namespace {

Verdict classify_impl(const RenderedPrompt& prompt, const RaterConfig& config,
                      CompletionBackend& backend, std::optional<std::string> item_id,
                      const BackendDescriptor& descriptor, bool with_keywords) {
  config.validate();
  if (prompt.text.empty()) throw Error(Errc::InvalidArgument, "prompt is empty");
  if (with_keywords && config.max_output_tokens < 2) {
    throw Error(Errc::InvalidArgument, "keyword extraction needs max_output_tokens > 1");
  }

  CompletionRequest request;
  request.model = descriptor.model_name;
  request.prompt = prompt.text;
  request.temperature = config.temperature;
  request.max_tokens = config.max_output_tokens;
  request.logprobs = config.top_token_scores ? std::max(1, config.top_logprobs) : 0;
  request.item_id = std::move(item_id);

  const auto started = std::chrono::steady_clock::now();
  CompletionResponse response;
  for (int attempt = 0;; ++attempt) {
    try {
      response = backend.complete(request, config.request_timeout);
      break;
    } catch (const BackendError& e) {
      if (!e.retryable()) throw;
      if (attempt >= config.max_retries) {
        throw Error(e.code() == Errc::Timeout ? Errc::Timeout : Errc::BackendUnavailable,
                    "giving up after " + std::to_string(attempt + 1) + " attempts: " + e.what());
      }
      std::this_thread::sleep_for(config.initial_backoff * (1 << std::min(attempt, 16)));
    }
  }
  const auto elapsed = std::chrono::steady_clock::now() - started;

  Verdict v;
  v.raw_text = response.text;
  v.label = parse_answer(response.text);
  if (config.top_token_scores && response.yes_probability) {
    v.score = std::clamp(*response.yes_probability, 0.0, 1.0);
    v.score_from_probabilities = true;
  } else {
    v.score = static_cast<double>(v.label);
  }
  if (with_keywords) v.keywords = parse_keywords(response.text);
  v.latency = response.simulated_latency ? *response.simulated_latency
                                         : std::chrono::duration_cast<Seconds>(elapsed);
  return v;
}

}  // namespace

Verdict classify(const RenderedPrompt& prompt, const RaterConfig& config,
                 CompletionBackend& backend, std::optional<std::string> item_id,
                 const BackendDescriptor& descriptor) {
  return classify_impl(prompt, config, backend, std::move(item_id), descriptor, false);
}

Verdict classify_with_keywords(const RenderedPrompt& prompt, const RaterConfig& config,
                               CompletionBackend& backend, std::optional<std::string> item_id,
                               const BackendDescriptor& descriptor) {
  return classify_impl(prompt, config, backend, std::move(item_id), descriptor, true);
}

std::vector<BatchResult> classify_batch(std::span<const BatchItem> items, const RaterConfig& config,
                                        CompletionBackend& backend, bool with_keywords,
                                        const BackendDescriptor& descriptor) {
  config.validate();
  std::vector<BatchResult> results(items.size(), Error(Errc::InvalidArgument, "not run"));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        results[i] = classify_impl(*items[i].prompt, config, backend, items[i].item_id,
                                   descriptor, with_keywords);
      } catch (const Error& e) {
        results[i] = e;
      }
    }
  };
  const std::size_t workers = std::min(config.parallelism_limit, items.size());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace modq
