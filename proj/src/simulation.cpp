#include "modq/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "modq/error.hpp"

namespace modq {
namespace {

constexpr std::array<std::string_view, 24> kFiller = {
    "the",    "vote",   "thread", "people", "really", "think",  "about",  "this",
    "post",   "never",  "again",  "county", "result", "video",  "friend", "group",
    "online", "report", "agree",  "wrong",  "today",  "please", "stop",   "news"};

SplitMix64 item_rng(std::uint64_t seed, std::string_view salt, std::string_view id) {
  return SplitMix64(derive_seed(derive_seed(seed, salt), id));
}

std::string filler_text(SplitMix64& rng) {
  const std::size_t target = 3 + static_cast<std::size_t>(rng.below(218));
  std::string text;
  while (text.size() < target) {
    if (!text.empty()) text += ' ';
    text += kFiller[static_cast<std::size_t>(rng.below(kFiller.size()))];
  }
  text.resize(target);
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

double draw_score(SplitMix64& rng, const ScoreModel& model, int label) {
  const auto& p = label == 1 ? model.violative : model.nonviolative;
  return sample_beta(rng, p.alpha, p.beta);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

BetaParams beta_from_json(const nlohmann::json& j, BetaParams fallback) {
  fallback.alpha = get_or(j, "alpha", fallback.alpha);
  fallback.beta = get_or(j, "beta", fallback.beta);
  if (!(fallback.alpha > 0.0) || !(fallback.beta > 0.0)) {
    throw Error(Errc::ConfigError, "beta parameters must be positive");
  }
  return fallback;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

nlohmann::json class_routing_to_json(const ClassRouting& c) {
  return {{"auto_non_violative", c.auto_non_violative},
          {"auto_violative", c.auto_violative},
          {"to_human", c.to_human}};
}

ClassRouting class_routing_from_json(const nlohmann::json& j) {
  ClassRouting c;
  c.auto_non_violative = get_or<std::uint64_t>(j, "auto_non_violative", 0);
  c.auto_violative = get_or<std::uint64_t>(j, "auto_violative", 0);
  c.to_human = get_or<std::uint64_t>(j, "to_human", 0);
  return c;
}

nlohmann::json error_delta_to_json(const ErrorDelta& d) {
  return {{"pipeline", d.pipeline}, {"baseline", d.baseline}, {"reduction", d.reduction()}};
}

ErrorDelta error_delta_from_json(const nlohmann::json& j) {
  return {get_or<std::uint64_t>(j, "pipeline", 0), get_or<std::uint64_t>(j, "baseline", 0)};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  return {get_or<std::uint64_t>(j, "tp", 0), get_or<std::uint64_t>(j, "fp", 0),
          get_or<std::uint64_t>(j, "tn", 0), get_or<std::uint64_t>(j, "fn", 0)};
}

void tally(ConfusionMatrix& m, int truth, int predicted) {
  if (truth == 1) {
    predicted == 1 ? ++m.tp : ++m.fn;
  } else {
    predicted == 1 ? ++m.fp : ++m.tn;
  }
}

}  // namespace

double sample_normal(SplitMix64& rng) noexcept {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double sample_gamma(SplitMix64& rng, double shape) {
  if (!(shape > 0.0)) throw Error(Errc::InvalidArgument, "gamma shape must be positive");
  if (shape < 1.0) {
    const double u = 1.0 - rng.uniform();
    return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(SplitMix64& rng, double alpha, double beta) {
  const double x = sample_gamma(rng, alpha);
  const double y = sample_gamma(rng, beta);
  return x / (x + y);
}

std::vector<CorpusRecord> generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                                    std::uint64_t seed) {
  if (!(spec.violative_fraction >= 0.0 && spec.violative_fraction <= 1.0)) {
    throw Error(Errc::ConfigError, "violative_fraction must lie in [0, 1]");
  }
  const auto violative =
      static_cast<std::size_t>(std::llround(spec.violative_fraction * static_cast<double>(spec.count)));
  std::vector<int> labels(spec.count, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(violative), 1);
  SplitMix64 shuffle(derive_seed(seed, "shuffle"));
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::swap(labels[i - 1], labels[static_cast<std::size_t>(shuffle.below(i))]);
  }

  const std::size_t width = std::max<std::size_t>(6, std::to_string(spec.count).size());
  std::vector<CorpusRecord> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    auto number = std::to_string(i + 1);
    CorpusRecord r;
    r.id = spec.id_prefix + std::string(width - number.size(), '0') + number;
    r.policy = spec.policy;
    r.label = labels[i];
    auto text_rng = item_rng(seed, "text", r.id);
    r.text = filler_text(text_rng);
    auto score_rng = item_rng(seed, "score", r.id);
    r.score = draw_score(score_rng, spec.scores, labels[i]);
    out.push_back(std::move(r));
  }
  return out;
}

double parse_mix(std::string_view mix) {
  const auto colon = mix.find(':');
  try {
    if (colon == std::string_view::npos) throw std::invalid_argument("no colon");
    const double a = std::stod(std::string(mix.substr(0, colon)));
    const double b = std::stod(std::string(mix.substr(colon + 1)));
    if (!(a >= 0.0) || !(b >= 0.0) || a + b <= 0.0) throw std::invalid_argument("range");
    return a / (a + b);
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "mix must look like 'violative:non_violative', got '" +
                                       std::string(mix) + "'");
  }
}

nlohmann::json sim_rater_to_json(const SimRater& r) {
  return {{"id", r.rater_id},
          {"accuracy", r.accuracy},
          {"latency_median_s", r.latency_median_s},
          {"latency_sigma", r.latency_sigma},
          {"seed", r.seed}};
}

SimRater sim_rater_from_json(const nlohmann::json& j) {
  SimRater r;
  r.rater_id = j.at("id").get<std::string>();
  r.accuracy = get_or(j, "accuracy", r.accuracy);
  r.latency_median_s = get_or(j, "latency_median_s", r.latency_median_s);
  r.latency_sigma = get_or(j, "latency_sigma", r.latency_sigma);
  r.seed = get_or(j, "seed", r.seed);
  if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) {
    throw Error(Errc::ConfigError, "rater accuracy must lie in [0, 1]");
  }
  if (!(r.latency_median_s > 0.0) || !(r.latency_sigma >= 0.0)) {
    throw Error(Errc::ConfigError, "rater latency parameters out of range");
  }
  return r;
}

HumanVerdict simulate_human_verdict(const SimRater& rater, const ContentItem& item) {
  if (!item.ground_truth) {
    throw Error(Errc::MissingGroundTruth, "item '" + item.id + "' has no ground truth");
  }
  auto rng = item_rng(derive_seed(rater.seed, rater.rater_id), "human", item.id);
  HumanVerdict v;
  v.rater_id = rater.rater_id;
  const bool agree = rng.uniform() < rater.accuracy;
  v.label = agree ? *item.ground_truth : 1 - *item.ground_truth;
  v.latency = Seconds(rater.latency_median_s * std::exp(rater.latency_sigma * sample_normal(rng)));
  return v;
}

std::string_view score_source_name(ScoreSource s) noexcept {
  switch (s) {
    case ScoreSource::Corpus: return "corpus";
    case ScoreSource::Beta: return "beta";
    case ScoreSource::Oracle: return "oracle";
    case ScoreSource::Backend: return "backend";
  }
  return "?";
}

SimConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> kKeys = {
      "seed",     "corpus",  "synthetic",   "score_source", "oracle_accuracy", "llm_latency_s",
      "routing",  "raters",  "backend",     "rater_config", "cost_rates",      "policies",
      "event_log", "include_items"};
  if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.contains(key)) throw Error(Errc::ConfigError, "unknown config key '" + key + "'");
  }
  SimConfig c;
  try {
    c.seed = get_or(j, "seed", c.seed);
    if (j.contains("corpus")) c.corpus_path = resolve(base_dir, j["corpus"].get<std::string>());
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      c.synthetic.count = get_or(s, "count", c.synthetic.count);
      c.synthetic.violative_fraction = get_or(s, "violative_fraction", c.synthetic.violative_fraction);
      if (s.contains("mix")) c.synthetic.violative_fraction = parse_mix(s["mix"].get<std::string>());
      c.synthetic.policy = get_or(s, "policy", c.synthetic.policy);
      c.synthetic.id_prefix = get_or(s, "id_prefix", c.synthetic.id_prefix);
      if (s.contains("score_model")) {
        const auto& m = s["score_model"];
        if (m.contains("violative")) {
          c.synthetic.scores.violative = beta_from_json(m["violative"], c.synthetic.scores.violative);
        }
        if (m.contains("non_violative")) {
          c.synthetic.scores.nonviolative =
              beta_from_json(m["non_violative"], c.synthetic.scores.nonviolative);
        }
      }
    }
    const auto source = get_or<std::string>(j, "score_source", c.corpus_path ? "corpus" : "beta");
    if (source == "corpus") {
      c.score_source = ScoreSource::Corpus;
    } else if (source == "beta") {
      c.score_source = ScoreSource::Beta;
    } else if (source == "oracle") {
      c.score_source = ScoreSource::Oracle;
    } else if (source == "backend") {
      c.score_source = ScoreSource::Backend;
    } else {
      throw Error(Errc::ConfigError, "unknown score_source '" + source + "'");
    }
    c.oracle_accuracy = get_or(j, "oracle_accuracy", c.oracle_accuracy);
    if (!(c.oracle_accuracy >= 0.0 && c.oracle_accuracy <= 1.0)) {
      throw Error(Errc::ConfigError, "oracle_accuracy must lie in [0, 1]");
    }
    c.llm_latency_s = get_or(j, "llm_latency_s", c.llm_latency_s);
    if (!j.contains("routing")) throw Error(Errc::ConfigError, "config needs a routing policy");
    c.routing = routing_policy_from_json(j["routing"]);
    for (const auto& r : j.value("raters", nlohmann::json::array())) {
      c.raters.push_back(sim_rater_from_json(r));
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
    if (j.contains("cost_rates")) c.cost_rates = cost_rates_from_json(j["cost_rates"]);
    const auto policies = j.value("policies", nlohmann::json::object());
    for (const auto& [name, path] : policies.items()) {
      c.policy_files.emplace(name, resolve(base_dir, path.get<std::string>()));
    }
    if (j.contains("event_log")) c.event_log_path = resolve(base_dir, j["event_log"].get<std::string>());
    c.include_items = get_or(j, "include_items", c.include_items);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    throw Error(Errc::ConfigError, e.what());
  }
  return c;
}

SimConfig load_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return sim_config_from_json(j, path.parent_path());
}

nlohmann::json metrics_report_to_json(const MetricsReport& r, bool include_items) {
  nlohmann::json j = {
      {"total", r.total},
      {"m1_automated_fraction", r.m1_automated_fraction},
      {"human_routed_fraction", r.human_routed_fraction},
      {"m2_latency", latency_stats_to_json(r.m2_latency)},
      {"m3_false_negatives", error_delta_to_json(r.m3_false_negatives)},
      {"m4_false_positives", error_delta_to_json(r.m4_false_positives)},
      {"confusion", confusion_to_json(r.confusion)},
      {"baseline_confusion", confusion_to_json(r.baseline_confusion)},
      {"accuracy", r.accuracy()},
      {"baseline_accuracy", r.baseline_accuracy()},
      {"per_length_accuracy", bucket_accuracy_to_json(r.per_length_accuracy)},
      {"extra_rating_count", r.extra_rating_count},
      {"validation_triggers", r.validation_triggers},
      {"backend_failures", r.backend_failures},
      {"routing_by_class",
       {{"violative", class_routing_to_json(r.violative_routing)},
        {"non_violative", class_routing_to_json(r.nonviolative_routing)}}},
      {"queue", queue_stats_to_json(r.queue)},
      {"llm_cost", r.llm_cost}};
  if (include_items) {
    auto items = nlohmann::json::array();
    for (const auto& o : r.items) {
      nlohmann::json item = {{"id", o.id},
                             {"ground_truth", o.ground_truth},
                             {"outcome", outcome_name(o.outcome)},
                             {"final_label", o.final_label},
                             {"source", verdict_source_name(o.source)},
                             {"baseline_label", o.baseline_label},
                             {"length", o.length},
                             {"votes", o.votes}};
      if (o.llm_score) item["llm_score"] = *o.llm_score;
      items.push_back(std::move(item));
    }
    j["items"] = std::move(items);
  }
  return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.total = get_or<std::size_t>(j, "total", 0);
    r.m1_automated_fraction = get_or(j, "m1_automated_fraction", 0.0);
    r.human_routed_fraction = get_or(j, "human_routed_fraction", 0.0);
    if (j.contains("m3_false_negatives")) r.m3_false_negatives = error_delta_from_json(j["m3_false_negatives"]);
    if (j.contains("m4_false_positives")) r.m4_false_positives = error_delta_from_json(j["m4_false_positives"]);
    if (j.contains("confusion")) r.confusion = confusion_from_json(j["confusion"]);
    if (j.contains("baseline_confusion")) r.baseline_confusion = confusion_from_json(j["baseline_confusion"]);
    if (j.contains("routing_by_class")) {
      const auto& c = j["routing_by_class"];
      if (c.contains("violative")) r.violative_routing = class_routing_from_json(c["violative"]);
      if (c.contains("non_violative")) r.nonviolative_routing = class_routing_from_json(c["non_violative"]);
    }
    r.extra_rating_count = get_or<std::uint64_t>(j, "extra_rating_count", 0);
    r.validation_triggers = get_or<std::uint64_t>(j, "validation_triggers", 0);
    for (const auto& item : j.value("items", nlohmann::json::array())) {
      ItemOutcome o;
      o.id = item.at("id").get<std::string>();
      o.ground_truth = item.at("ground_truth").get<int>();
      const auto outcome = parse_outcome(item.value("outcome", std::string("to_human")));
      if (!outcome) throw Error(Errc::CorpusError, "unknown outcome in report");
      o.outcome = *outcome;
      o.final_label = item.at("final_label").get<int>();
      const auto source = item.value("source", std::string("human"));
      o.source = source == "llm" ? VerdictSource::LLM
                 : source == "majority" ? VerdictSource::Majority
                                        : VerdictSource::Human;
      o.baseline_label = item.value("baseline_label", o.final_label);
      o.length = item.value("length", std::size_t{0});
      o.votes = item.value("votes", std::size_t{0});
      if (item.contains("llm_score")) o.llm_score = item["llm_score"].get<double>();
      r.items.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorpusError, std::string("report: ") + e.what());
  }
  return r;
}

MetricsReport run_simulation(const SimConfig& config) {
  const auto corpus = config.corpus_path ? load_corpus(*config.corpus_path)
                                         : generate_synthetic_corpus(config.synthetic, config.seed);
  return run_simulation(config, corpus);
}

MetricsReport run_simulation(const SimConfig& config, const std::vector<CorpusRecord>& corpus) {
  config.routing.validate();
  if (corpus.empty()) throw Error(Errc::CorpusError, "corpus is empty");
  bool has_pos = false;
  bool has_neg = false;
  for (const auto& r : corpus) {
    if (!r.label) throw Error(Errc::CorpusError, "record '" + r.id + "' has no label");
    (*r.label == 1 ? has_pos : has_neg) = true;
    if (config.score_source == ScoreSource::Corpus && !r.score) {
      throw Error(Errc::CorpusError, "record '" + r.id + "' has no score");
    }
  }
  if (!has_pos || !has_neg) throw Error(Errc::CorpusError, "corpus needs both classes");
  if (config.raters.empty()) throw Error(Errc::ConfigError, "rater pool is empty");
  const std::size_t votes_on_disagreement =
      1 + static_cast<std::size_t>(config.routing.extra_raters_on_disagreement);
  if (config.routing.mode == RoutingMode::Validation && config.raters.size() < votes_on_disagreement) {
    throw Error(Errc::ConfigError, "validation needs at least " +
                                       std::to_string(votes_on_disagreement) + " raters");
  }

  // LLM stage.
  std::unique_ptr<CompletionBackend> backend;
  if (config.score_source == ScoreSource::Backend) {
    backend = make_backend(config.backend);
  } else {
    ScoreTable table;
    table.reserve(corpus.size());
    for (const auto& r : corpus) {
      double score = 0.0;
      switch (config.score_source) {
        case ScoreSource::Corpus:
          score = *r.score;
          break;
        case ScoreSource::Beta: {
          auto rng = item_rng(config.seed, "llm-score", r.id);
          score = draw_score(rng, config.synthetic.scores, *r.label);
          break;
        }
        case ScoreSource::Oracle: {
          auto rng = item_rng(config.seed, "oracle", r.id);
          const bool correct = rng.uniform() < config.oracle_accuracy;
          const int predicted = correct ? *r.label : 1 - *r.label;
          const double u = rng.uniform();
          score = predicted == 1 ? 0.5 + 0.5 * u : 0.5 * u;
          break;
        }
        case ScoreSource::Backend:
          break;
      }
      table.emplace(r.id, score);
    }
    auto mock = std::make_unique<MockBackend>(std::move(table), config.backend.mock_seed);
    mock->set_latency(Seconds(config.llm_latency_s));
    backend = std::move(mock);
  }

  std::map<std::string, Policy, std::less<>> policies;
  auto policy_for = [&](const std::string& name) -> const Policy& {
    auto it = policies.find(name);
    if (it != policies.end()) return it->second;
    Policy p;
    if (auto f = config.policy_files.find(name); f != config.policy_files.end()) {
      p = load_policy(f->second);
    } else {
      p = Policy::from_clauses(name, {"Comments should not violate the " + name + " policy."});
    }
    return policies.emplace(name, std::move(p)).first->second;
  };

  const bool with_keywords = config.routing.mode == RoutingMode::Assistance;
  RaterConfig rater_config = config.rater_config;
  if (with_keywords) rater_config.max_output_tokens = std::max(rater_config.max_output_tokens, 64);

  std::vector<std::optional<Verdict>> verdicts(corpus.size());
  std::uint64_t prompt_chars = 0;
  std::uint64_t output_chars = 0;
  MetricsReport report;
  constexpr std::size_t kChunk = 1024;
  for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
    const std::size_t end = std::min(corpus.size(), start + kChunk);
    std::vector<RenderedPrompt> prompts;
    prompts.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      prompts.push_back(render_zero_shot(policy_for(corpus[i].policy), corpus[i].text));
      prompt_chars += prompts.back().char_count;
    }
    std::vector<BatchItem> batch;
    batch.reserve(prompts.size());
    for (std::size_t i = start; i < end; ++i) batch.push_back({&prompts[i - start], corpus[i].id});
    auto results = classify_batch(batch, rater_config, *backend, with_keywords, config.backend);
    for (std::size_t i = start; i < end; ++i) {
      if (auto* v = std::get_if<Verdict>(&results[i - start])) {
        output_chars += utf8_length(v->raw_text);
        verdicts[i] = std::move(*v);
      } else {
        ++report.backend_failures;
      }
    }
  }
  report.llm_cost = cost_estimate(prompt_chars, output_chars, config.cost_rates);

  // Queue stage.
  std::unique_ptr<EventLog> log;
  if (config.event_log_path) {
    std::filesystem::remove(*config.event_log_path);
    log = std::make_unique<EventLog>(*config.event_log_path);
  } else {
    log = std::make_unique<EventLog>();
  }
  std::int64_t tick = 0;
  RaterQueue queue(log.get(), [&tick] { return ++tick; });

  std::vector<double> human_latency;
  std::vector<double> llm_latency;
  std::vector<LengthSample> lengths;
  lengths.reserve(corpus.size());
  report.items.reserve(corpus.size());

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus[i];
    ContentItem item{r.id, r.text, r.policy, r.label, 0, false};
    const auto decision = verdicts[i] ? route_item(item, *verdicts[i], config.routing)
                                      : park_for_human("backend unavailable");
    queue.admit(item, config.routing, decision);

    const std::size_t first = static_cast<std::size_t>(
        derive_seed(derive_seed(config.seed, "assign"), r.id) % config.raters.size());
    auto first_vote = simulate_human_verdict(config.raters[first], item);
    first_vote.assisted = decision.outcome == Outcome::ToHumanWithAssist;

    ItemOutcome o;
    o.id = r.id;
    o.ground_truth = *r.label;
    o.outcome = decision.outcome;
    if (verdicts[i] && verdicts[i]->score_from_probabilities) o.llm_score = verdicts[i]->score;
    o.baseline_label = first_vote.label;
    o.length = utf8_length(r.text);

    if (is_automated(decision.outcome)) {
      const auto final = llm_final(decision);
      o.final_label = final.label;
      o.source = final.source;
    } else {
      queue.lease(r.id, first_vote.rater_id);
      auto result = queue.submit(r.id, first_vote);
      if (result.extra_ratings_requested) ++report.validation_triggers;
      for (std::size_t k = 1; !result.final; ++k) {
        const auto& extra = config.raters[(first + k) % config.raters.size()];
        queue.lease(r.id, extra.rater_id);
        result = queue.submit(r.id, simulate_human_verdict(extra, item));
        ++report.extra_rating_count;
      }
      o.final_label = result.final->label;
      o.source = result.final->source;
      o.votes = result.final->votes.size();
    }

    auto& routing = *r.label == 1 ? report.violative_routing : report.nonviolative_routing;
    switch (decision.outcome) {
      case Outcome::AutoNonViolative: ++routing.auto_non_violative; break;
      case Outcome::AutoViolative: ++routing.auto_violative; break;
      default: ++routing.to_human; break;
    }
    tally(report.confusion, o.ground_truth, o.final_label);
    tally(report.baseline_confusion, o.ground_truth, o.baseline_label);
    if (verdicts[i]) {
      human_latency.push_back(first_vote.latency.count());
      llm_latency.push_back(verdicts[i]->latency.count());
    }
    lengths.push_back({o.length, o.correct()});
    report.items.push_back(std::move(o));
  }

  report.total = corpus.size();
  report.queue = queue.stats();
  const auto automated = report.queue.auto_dequeued + report.queue.auto_escalated;
  report.m1_automated_fraction = static_cast<double>(automated) / static_cast<double>(report.total);
  report.human_routed_fraction =
      static_cast<double>(report.total - automated) / static_cast<double>(report.total);
  report.m2_latency = latency_stats(human_latency, llm_latency);
  report.m3_false_negatives = {report.confusion.fn, report.baseline_confusion.fn};
  report.m4_false_positives = {report.confusion.fp, report.baseline_confusion.fp};
  const auto buckets = default_length_buckets();
  report.per_length_accuracy = accuracy_by_length(lengths, buckets);
  if (!config.include_items) report.items.clear();
  return report;
}

McNemarResult compare_pipelines(const MetricsReport& a, const MetricsReport& b) {
  if (a.items.empty() || b.items.empty()) {
    throw Error(Errc::MisalignedCorpora, "report has no per-item outcomes (written with include_items off)");
  }
  if (a.items.size() != b.items.size()) {
    throw Error(Errc::MisalignedCorpora, "reports cover different item counts");
  }
  std::vector<std::pair<bool, bool>> paired;
  paired.reserve(a.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    if (a.items[i].id != b.items[i].id || a.items[i].ground_truth != b.items[i].ground_truth) {
      throw Error(Errc::MisalignedCorpora, "item " + std::to_string(i) + " differs: '" +
                                               a.items[i].id + "' vs '" + b.items[i].id + "'");
    }
    paired.emplace_back(a.items[i].correct(), b.items[i].correct());
  }
  return mcnemar(paired);
}

}  // namespace modq
