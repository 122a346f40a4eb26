#include "modq/service.hpp"

#include <algorithm>
#include <fstream>

#include <httplib.h>

#include "modq/corpus.hpp"
#include "modq/error.hpp"

namespace modq {
namespace {

HttpResponse error_response(int status, std::string_view code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

HttpResponse error_response(int status, const Error& e) {
  return error_response(status, errc_name(e.code()), e.what());
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

std::optional<nlohmann::json> parse_object(std::string_view body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::optional<std::string> string_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
  return j[key].get<std::string>();
}

}  // namespace

ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "service config must be a JSON object");
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    const auto policies = j.value("policies", nlohmann::json::object());
    for (const auto& [name, path] : policies.items()) {
      c.policies.emplace(name, load_policy(resolve(base_dir, path.get<std::string>())));
    }
    if (j.contains("routing")) c.routing = routing_table_from_json(j["routing"]);
    for (const auto& r : j.value("raters", nlohmann::json::array())) {
      c.raters.push_back({r.at("id").get<std::string>(), r.value("assist", false)});
    }
    if (j.contains("backend")) {
      auto backend = j["backend"];
      if (backend.contains("mock_scores_path")) {
        backend["mock_scores_path"] =
            resolve(base_dir, backend["mock_scores_path"].get<std::string>()).string();
      }
      c.backend = backend_descriptor_from_json(backend);
    }
    if (j.contains("rater_config")) c.rater_config = rater_config_from_json(j["rater_config"]);
    if (j.contains("event_log")) c.event_log_path = resolve(base_dir, j["event_log"].get<std::string>());
    c.lease_ms = j.value("lease_ms", c.lease_ms);
    if (j.contains("calibration")) {
      const auto& cal = j["calibration"];
      if (cal.contains("corpus")) c.calibration_corpus = resolve(base_dir, cal["corpus"].get<std::string>());
      if (cal.contains("targets")) {
        c.calibration_targets.clear();
        for (const auto& t : cal["targets"]) {
          c.calibration_targets.push_back(parse_calibration_target(t.get<std::string>()));
        }
      }
    }
    if (j.contains("examples")) {
      const auto& ex = j["examples"];
      c.examples_corpus = resolve(base_dir, ex.at("corpus").get<std::string>());
      c.embedding_dim = ex.value("embedding_dim", c.embedding_dim);
      c.forest.tree_count = ex.value("tree_count", c.forest.tree_count);
      c.forest.leaf_size = ex.value("leaf_size", c.forest.leaf_size);
      c.forest.seed = ex.value("seed", c.forest.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  for (const auto& [name, policy] : c.policies) {
    if (!find_routing_policy(c.routing, name)) {
      throw Error(Errc::ConfigError, "policy '" + name + "' has no routing entry");
    }
  }
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return service_config_from_json(j, path.parent_path());
}

ModerationService::ModerationService(ServiceConfig config, std::unique_ptr<CompletionBackend> backend,
                                     RaterQueue::Clock clock)
    : config_(std::move(config)), backend_(std::move(backend)) {
  config_.rater_config.validate();
  if (!backend_) backend_ = make_backend(config_.backend);
  log_ = config_.event_log_path ? std::make_unique<EventLog>(*config_.event_log_path)
                                : std::make_unique<EventLog>();
  queue_ = std::make_unique<RaterQueue>(log_.get(), std::move(clock), config_.lease_ms);
  for (const auto& r : config_.raters) assist_[r.id] = r.assist_enabled;

  if (config_.calibration_corpus) {
    std::map<std::string, std::vector<ScoredItem>, std::less<>> by_policy;
    for (const auto& r : load_corpus(*config_.calibration_corpus)) {
      if (r.label && r.score) by_policy[r.policy].push_back({*r.score, *r.label});
    }
    for (const auto& [policy, scored] : by_policy) {
      try {
        fixed_calibration_.emplace(policy, calibrate(policy, scored, config_.calibration_targets));
      } catch (const Error& e) {
        if (e.code() != Errc::DegenerateDataset) throw;
      }
    }
  }
  if (config_.examples_corpus) {
    embedder_.emplace(config_.embedding_dim, config_.forest.seed);
    examples_ = ExampleStore::from_corpus(load_corpus(*config_.examples_corpus), *embedder_,
                                          config_.forest);
  }
}

ModerationService::~ModerationService() = default;

RenderedPrompt ModerationService::build_prompt(const ContentItem& item, const Policy& policy,
                                               bool with_keywords) const {
  if (examples_) {
    if (const auto* pair = examples_->find(item.policy)) {
      try {
        const auto query = embedder_->embed(item.text);
        const auto shots = select_few_shot(pair->violative, pair->nonviolative, query, item.id);
        const bool keywords_ready =
            with_keywords && std::all_of(shots.begin(), shots.end(), [](const FewShotExample& e) {
              return !e.violative || (e.keywords && !e.keywords->empty());
            });
        return render_few_shot(policy, shots, item.text, keywords_ready);
      } catch (const Error& e) {
        if (e.code() != Errc::InsufficientExamples) throw;
      }
    }
  }
  return render_zero_shot(policy, item.text);
}

std::optional<bool> ModerationService::assist_flag(std::string_view rater_id) const {
  std::lock_guard lock(raters_mutex_);
  auto it = assist_.find(rater_id);
  if (it == assist_.end()) return std::nullopt;
  return it->second;
}

HttpResponse ModerationService::post_item(std::string_view body) {
  const auto j = parse_object(body);
  if (!j) return error_response(400, "Malformed", "body must be a JSON object");
  const auto id = string_field(*j, "id");
  const auto text = string_field(*j, "text");
  const auto policy_name = string_field(*j, "policy");
  if (!id || id->empty() || !text || !policy_name) {
    return error_response(400, "Malformed", "id, text and policy are required strings");
  }
  if (text->empty()) return error_response(400, errc_name(Errc::EmptyComment), "text is empty");
  const auto policy_it = config_.policies.find(*policy_name);
  const auto* routing = find_routing_policy(config_.routing, *policy_name);
  if (policy_it == config_.policies.end() || !routing) {
    return error_response(400, errc_name(Errc::UnknownPolicy), "unknown policy '" + *policy_name + "'");
  }

  if (auto existing = queue_->find(*id)) {
    if (existing->item.text != *text) {
      return error_response(409, errc_name(Errc::DuplicateItem),
                            "item '" + *id + "' exists with different text");
    }
    return {200, {{"item_id", *id}, {"routing", routing_decision_to_json(existing->decision)}}};
  }

  ContentItem item;
  item.id = *id;
  item.text = *text;
  item.policy = *policy_name;
  item.appeal = j->value("appeal", false);

  const bool with_keywords = routing->mode == RoutingMode::Assistance;
  RaterConfig rc = config_.rater_config;
  if (with_keywords) rc.max_output_tokens = std::max(rc.max_output_tokens, 64);

  RoutingDecision decision;
  int status = 200;
  std::optional<Error> failure;
  try {
    const auto prompt = build_prompt(item, policy_it->second, with_keywords);
    const auto verdict = with_keywords
                             ? classify_with_keywords(prompt, rc, *backend_, item.id, config_.backend)
                             : classify(prompt, rc, *backend_, item.id, config_.backend);
    try {
      decision = route_item(item, verdict, *routing);
    } catch (const Error& e) {
      if (e.code() != Errc::MissingScore) throw;
      decision = park_for_human("no probability score");
      decision.llm_verdict = verdict;
    }
  } catch (const Error& e) {
    switch (e.code()) {
      case Errc::BackendUnavailable:
      case Errc::Timeout:
        status = 503;
        break;
      case Errc::UnparseableResponse:
        status = 502;
        break;
      default:
        return error_response(400, e);
    }
    failure = e;
    decision = park_for_human(std::string("llm rater failed: ") + e.what());
  }

  try {
    const auto admitted = queue_->admit(item, *routing, decision);
    nlohmann::json out = {{"item_id", item.id}, {"routing", routing_decision_to_json(admitted.decision)}};
    if (failure && admitted.created) {
      out["error"] = errc_name(failure->code());
      out["message"] = failure->what();
      return {status, out};
    }
    return {200, out};
  } catch (const Error& e) {
    if (e.code() == Errc::DuplicateItem) return error_response(409, e);
    throw;
  }
}

HttpResponse ModerationService::next_item(std::string_view rater_id) {
  if (rater_id.empty()) return error_response(400, "Malformed", "rater_id is required");
  const auto assist = assist_flag(rater_id);
  if (!assist) {
    return error_response(404, errc_name(Errc::UnknownRater), "unknown rater '" + std::string(rater_id) + "'");
  }
  const auto leased = queue_->lease_next(std::string(rater_id));
  if (!leased) return {204, nullptr};

  nlohmann::json out = {{"item", content_item_to_json(leased->item)},
                        {"routing", routing_decision_to_json(leased->decision)},
                        {"assist_enabled", *assist},
                        {"lease_expires_ms", leased->lease_expires_ms},
                        {"votes_so_far", leased->votes.size()}};
  if (auto p = config_.policies.find(leased->item.policy); p != config_.policies.end()) {
    auto clauses = nlohmann::json::array();
    for (const auto& c : p->second.clauses) clauses.push_back(c.text);
    out["policy"] = {{"key", p->first}, {"name", p->second.name}, {"clauses", clauses}};
  }
  if (*assist) {
    std::vector<std::string> keywords;
    if (leased->decision.llm_verdict && leased->decision.llm_verdict->keywords) {
      keywords = *leased->decision.llm_verdict->keywords;
    }
    const auto spans = build_assist_payload(leased->item.text, keywords);
    out["assist"] = {{"keywords", keywords}, {"spans", spans_to_json(spans)}};
  }
  return {200, out};
}

HttpResponse ModerationService::post_verdict(std::string_view body) {
  const auto j = parse_object(body);
  if (!j) return error_response(400, "Malformed", "body must be a JSON object");
  const auto item_id = string_field(*j, "item_id");
  const auto rater_id = string_field(*j, "rater_id");
  if (!item_id || !rater_id || !j->contains("label")) {
    return error_response(400, "Malformed", "item_id, rater_id and label are required");
  }
  int label = -1;
  const auto& raw = (*j)["label"];
  if (raw.is_boolean()) {
    label = raw.get<bool>() ? 1 : 0;
  } else if (raw.is_number_integer()) {
    label = raw.get<int>();
  }
  if (label != 0 && label != 1) return error_response(400, "Malformed", "label must be 0 or 1");
  const auto assist = assist_flag(*rater_id);
  if (!assist) return error_response(404, errc_name(Errc::UnknownRater), "unknown rater '" + *rater_id + "'");

  HumanVerdict v;
  v.rater_id = *rater_id;
  v.label = label;
  v.latency = Seconds(j->value("latency_s", 0.0));
  v.assisted = *assist;
  try {
    const auto result = queue_->submit(*item_id, v);
    return {200,
            {{"final", result.final ? final_verdict_to_json(*result.final) : nlohmann::json(nullptr)},
             {"extra_ratings_requested", result.extra_ratings_requested},
             {"votes_needed", result.votes_needed}}};
  } catch (const Error& e) {
    if (e.code() == Errc::UnknownItem) return error_response(400, e);
    if (e.code() == Errc::LeaseNotHeld) return error_response(409, e);
    throw;
  }
}

HttpResponse ModerationService::stats() const { return {200, queue_stats_to_json(queue_->stats())}; }

HttpResponse ModerationService::calibration(std::string_view policy) const {
  if (auto it = fixed_calibration_.find(policy); it != fixed_calibration_.end()) {
    auto out = calibration_report_to_json(it->second);
    out["source"] = "corpus";
    return {200, out};
  }
  if (!config_.policies.contains(policy)) {
    return error_response(404, errc_name(Errc::UnknownPolicy), "unknown policy '" + std::string(policy) + "'");
  }
  std::vector<ScoredItem> scored;
  for (const auto& qi : queue_->scored_items(policy)) {
    scored.push_back({qi.decision.llm_verdict->score, qi.final->label});
  }
  try {
    auto out = calibration_report_to_json(calibrate(std::string(policy), scored, config_.calibration_targets));
    out["source"] = "live";
    return {200, out};
  } catch (const Error& e) {
    return error_response(404, e);
  }
}

HttpResponse ModerationService::set_assist(std::string_view rater_id, std::string_view body) {
  const auto j = parse_object(body);
  if (!j || !j->contains("enabled") || !(*j)["enabled"].is_boolean()) {
    return error_response(400, "Malformed", "expected {\"enabled\": bool}");
  }
  std::lock_guard lock(raters_mutex_);
  auto it = assist_.find(rater_id);
  if (it == assist_.end()) {
    return error_response(404, errc_name(Errc::UnknownRater), "unknown rater '" + std::string(rater_id) + "'");
  }
  it->second = (*j)["enabled"].get<bool>();
  return {200, {{"id", it->first}, {"assist_enabled", it->second}}};
}

HttpResponse ModerationService::raters() const {
  std::lock_guard lock(raters_mutex_);
  auto out = nlohmann::json::array();
  for (const auto& [id, assist] : assist_) out.push_back({{"id", id}, {"assist_enabled", assist}});
  return {200, out};
}

HttpResponse ModerationService::policies() const {
  auto out = nlohmann::json::object();
  for (const auto& [key, p] : config_.policies) {
    auto j = policy_to_json(p);
    if (const auto* r = find_routing_policy(config_.routing, key)) j["routing"] = routing_policy_to_json(*r);
    out[key] = j;
  }
  return {200, out};
}

HttpResponse ModerationService::events(std::uint64_t after) const {
  auto out = nlohmann::json::array();
  for (const auto& e : queue_->events(after)) out.push_back(event_to_json(e));
  return {200, out};
}

struct HttpFrontend::Impl {
  explicit Impl(ModerationService& s) : service(s) {}
  ModerationService& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const HttpResponse& out) {
  res.status = out.status;
  if (out.status != 204) res.set_content(out.body.dump(), "application/json");
}

}  // namespace

HttpFrontend::HttpFrontend(ModerationService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Post("/items", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.post_item(req.body));
  });
  srv.Get("/queue/next", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.next_item(req.get_param_value("rater_id")));
  });
  srv.Post("/verdicts", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.post_verdict(req.body));
  });
  srv.Get("/stats", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.stats()); });
  srv.Get(R"(/calibration/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.calibration(req.matches[1].str()));
  });
  srv.Get("/raters", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.raters()); });
  srv.Post(R"(/raters/([^/]+)/assist)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.set_assist(req.matches[1].str(), req.body));
  });
  srv.Get("/policies", [&svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc.policies());
  });
  srv.Get("/events", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t after = 0;
    if (req.has_param("after")) {
      try {
        after = std::stoull(req.get_param_value("after"));
      } catch (const std::exception&) {
        send(res, error_response(400, "Malformed", "after must be an integer"));
        return;
      }
    }
    send(res, svc.events(after));
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, error_response(500, "Internal", message));
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpFrontend::serve() { return impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpFrontend::running() const { return impl_->server.is_running(); }

}  // namespace modq
