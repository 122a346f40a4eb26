// modq: command line front end for the moderation queue toolkit.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "modq/calibration.hpp"
#include "modq/corpus.hpp"
#include "modq/error.hpp"
#include "modq/example_selector.hpp"
#include "modq/forest.hpp"
#include "modq/prompt.hpp"
#include "modq/service.hpp"
#include "modq/simulation.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw modq::Error(modq::Errc::ConfigError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw modq::Error(modq::Errc::ConfigError, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw modq::Error(modq::Errc::ConfigError, "cannot write " + path);
  out << text;
}

modq::HttpFrontend* g_frontend = nullptr;

void on_signal(int) {
  if (g_frontend) g_frontend->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moderation queue toolkit: prompts, calibration, simulation and the rater service"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run a simulation config and write a metrics report");
  std::string sim_config;
  std::string sim_out = "-";
  bool sim_no_items = false;
  simulate->add_option("--config", sim_config, "Simulation config (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_out, "Report path, - for stdout");
  simulate->add_flag("--no-items", sim_no_items, "Omit per-item outcomes from the report");

  // calibrate
  auto* calibrate_cmd = app.add_subcommand("calibrate", "PR curve and operating thresholds for a scored corpus");
  std::string cal_corpus;
  std::vector<std::string> cal_targets;
  std::string cal_policy;
  std::string cal_out = "-";
  std::string cal_csv;
  calibrate_cmd->add_option("--corpus", cal_corpus, "JSONL with label and score fields")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--target", cal_targets, "recall=<v> or precision=<v> (repeatable)")
      ->default_val(std::vector<std::string>{"recall=0.95"});
  calibrate_cmd->add_option("--policy", cal_policy, "Only records with this policy");
  calibrate_cmd->add_option("--out", cal_out, "Report path, - for stdout");
  calibrate_cmd->add_option("--csv", cal_csv, "Also write PR points as CSV");

  // compare
  auto* compare = app.add_subcommand("compare", "McNemar test between two simulation reports");
  std::string cmp_a;
  std::string cmp_b;
  compare->add_option("--a", cmp_a, "First report")->required()->check(CLI::ExistingFile);
  compare->add_option("--b", cmp_b, "Second report")->required()->check(CLI::ExistingFile);

  // render
  auto* render_cmd = app.add_subcommand("render", "Render a classification prompt");
  std::vector<std::string> rnd_policies;
  std::string rnd_comment;
  std::string rnd_kind = "zero_shot";
  std::string rnd_examples;
  render_cmd->add_option("--policy", rnd_policies, "Policy JSON (repeat for multi_policy)")
      ->required()
      ->check(CLI::ExistingFile);
  render_cmd->add_option("--comment", rnd_comment, "Comment under evaluation")->required();
  render_cmd->add_option("--kind", rnd_kind, "zero_shot | few_shot | few_shot_keywords | multi_policy");
  render_cmd->add_option("--examples", rnd_examples, "JSONL of five examples for few-shot kinds")
      ->check(CLI::ExistingFile);

  // generate
  auto* generate = app.add_subcommand("generate", "Write a synthetic scored corpus");
  modq::SyntheticCorpusSpec gen_spec;
  std::string gen_mix = "1:1";
  std::uint64_t gen_seed = 0;
  std::string gen_out = "-";
  std::vector<double> gen_viol{5.0, 2.0};
  std::vector<double> gen_nonviol{2.0, 5.0};
  generate->add_option("--count", gen_spec.count, "Number of items");
  generate->add_option("--mix", gen_mix, "violative:non_violative ratio");
  generate->add_option("--policy", gen_spec.policy, "Policy field for every record");
  generate->add_option("--seed", gen_seed, "Seed");
  generate->add_option("--violative-beta", gen_viol, "alpha beta for violative scores")->expected(2);
  generate->add_option("--non-violative-beta", gen_nonviol, "alpha beta for non-violative scores")->expected(2);
  generate->add_option("--out", gen_out, "JSONL path, - for stdout");

  // build-index
  auto* build_index = app.add_subcommand("build-index", "Build a projection forest over a corpus");
  std::string idx_corpus;
  std::string idx_out;
  modq::ForestParams idx_params;
  std::size_t idx_dim = modq::kDefaultEmbeddingDim;
  build_index->add_option("--corpus", idx_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
  build_index->add_option("--out", idx_out, "Forest file")->required();
  build_index->add_option("--trees", idx_params.tree_count, "Tree count");
  build_index->add_option("--leaf-size", idx_params.leaf_size, "Maximum ids per leaf");
  build_index->add_option("--seed", idx_params.seed, "Seed");
  build_index->add_option("--dim", idx_dim, "Hashing embedder dimension for records without embeddings");

  // query-index
  auto* query_index = app.add_subcommand("query-index", "Nearest neighbours of a text in a forest file");
  std::string q_index;
  std::string q_text;
  std::size_t q_k = 5;
  std::uint64_t q_embed_seed = 0;
  query_index->add_option("--index", q_index, "Forest file")->required()->check(CLI::ExistingFile);
  query_index->add_option("--text", q_text, "Query text")->required();
  query_index->add_option("-k", q_k, "Neighbours to return");
  query_index->add_option("--embed-seed", q_embed_seed, "Hashing embedder seed used at build time");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP rater service");
  std::string srv_config;
  int srv_port = -1;
  serve->add_option("--config", srv_config, "Service config (JSON)")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", srv_port, "Override the configured port (0 picks a free port)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      auto config = modq::load_sim_config(sim_config);
      if (sim_no_items) config.include_items = false;
      const auto report = modq::run_simulation(config);
      write_text(sim_out, modq::metrics_report_to_json(report, config.include_items).dump(2) + "\n");
    } else if (*calibrate_cmd) {
      std::vector<modq::ScoredItem> scored;
      for (const auto& r : modq::load_corpus(cal_corpus)) {
        if (!cal_policy.empty() && r.policy != cal_policy) continue;
        if (!r.label) throw modq::Error(modq::Errc::CorpusError, "record '" + r.id + "' has no label");
        if (!r.score) throw modq::Error(modq::Errc::CorpusError, "record '" + r.id + "' has no score");
        scored.push_back({*r.score, *r.label});
      }
      std::vector<modq::CalibrationTarget> targets;
      for (const auto& t : cal_targets) targets.push_back(modq::parse_calibration_target(t));
      const auto report = modq::calibrate(cal_policy, scored, targets);
      write_text(cal_out, modq::calibration_report_to_json(report).dump(2) + "\n");
      if (!cal_csv.empty()) write_text(cal_csv, modq::pr_curve_csv(report.curve));
      for (const auto& c : report.choices) {
        std::cerr << modq::target_kind_name(c.target.kind) << ">=" << c.target.value << ": ";
        if (c.attainable) {
          std::cerr << "T=" << c.threshold << " recall=" << c.achieved.recall()
                    << " specificity=" << c.achieved.specificity();
          if (auto p = c.achieved.precision()) std::cerr << " precision=" << *p;
          std::cerr << '\n';
        } else {
          std::cerr << "not attainable\n";
        }
      }
    } else if (*compare) {
      const auto a = modq::metrics_report_from_json(read_json(cmp_a));
      const auto b = modq::metrics_report_from_json(read_json(cmp_b));
      const auto result = modq::compare_pipelines(a, b);
      auto out = modq::mcnemar_to_json(result);
      out["accuracy_a"] = a.accuracy();
      out["accuracy_b"] = b.accuracy();
      std::cout << out.dump(2) << '\n';
    } else if (*render_cmd) {
      std::vector<modq::Policy> policies;
      for (const auto& p : rnd_policies) policies.push_back(modq::load_policy(p));
      const auto kind = modq::parse_prompt_kind(rnd_kind);
      if (!kind) throw modq::Error(modq::Errc::InvalidArgument, "unknown prompt kind '" + rnd_kind + "'");
      modq::PromptVariant variant{*kind, {}};
      if (!rnd_examples.empty()) {
        for (const auto& r : modq::load_corpus(rnd_examples)) {
          if (!r.label) throw modq::Error(modq::Errc::CorpusError, "example '" + r.id + "' has no label");
          variant.examples.push_back({r.text, *r.label == 1, r.keywords});
        }
      }
      const auto prompt = modq::render(variant, policies, rnd_comment);
      std::cout << prompt.text << '\n';
      for (const auto& w : prompt.warnings) std::cerr << "warning: " << w << '\n';
    } else if (*generate) {
      gen_spec.violative_fraction = modq::parse_mix(gen_mix);
      gen_spec.scores.violative = {gen_viol[0], gen_viol[1]};
      gen_spec.scores.nonviolative = {gen_nonviol[0], gen_nonviol[1]};
      std::ostringstream out;
      modq::write_corpus_jsonl(out, modq::generate_synthetic_corpus(gen_spec, gen_seed));
      write_text(gen_out, out.str());
    } else if (*build_index) {
      const modq::HashingEmbedder embedder(idx_dim, idx_params.seed);
      std::vector<std::string> ids;
      std::vector<std::vector<float>> vectors;
      for (const auto& r : modq::load_corpus(idx_corpus)) {
        ids.push_back(r.id);
        vectors.push_back(r.embedding ? *r.embedding : embedder.embed(r.text));
      }
      const auto forest = modq::ProjectionForest::build(std::move(ids), vectors, idx_params);
      forest.save(idx_out);
      std::cerr << "indexed " << forest.size() << " records, " << forest.trees().size() << " trees\n";
    } else if (*query_index) {
      const auto forest = modq::ProjectionForest::load(q_index);
      const modq::HashingEmbedder embedder(forest.dimension(), q_embed_seed);
      auto out = nlohmann::json::array();
      for (const auto& n : forest.query(embedder.embed(q_text), q_k)) {
        out.push_back({{"id", n.id}, {"distance", n.distance}});
      }
      std::cout << out.dump(2) << '\n';
    } else if (*serve) {
      auto config = modq::load_service_config(srv_config);
      if (srv_port >= 0) config.port = srv_port;
      modq::ModerationService service(config);
      modq::HttpFrontend frontend(service);
      const int port = frontend.bind(config.host, config.port);
      if (port < 0) {
        std::cerr << "cannot bind " << config.host << ':' << config.port << '\n';
        return 1;
      }
      std::cerr << "listening on http://" << config.host << ':' << port << '\n';
      g_frontend = &frontend;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      frontend.serve();
      g_frontend = nullptr;
    }
  } catch (const modq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
