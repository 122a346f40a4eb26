#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace modq {

/// One line of a JSONL corpus: {"id","text","policy","label"} plus optional
/// "embedding", "keywords" and "score" fields.
struct CorpusRecord {
  std::string id;
  std::string text;
  std::string policy;
  std::optional<int> label;  // 1 violative, 0 non-violative
  std::optional<std::vector<float>> embedding;
  std::optional<std::vector<std::string>> keywords;
  std::optional<double> score;
};

CorpusRecord corpus_record_from_json(const nlohmann::json& j);
nlohmann::json corpus_record_to_json(const CorpusRecord& record);

/// Throws CorpusError naming the offending line. Blank lines are skipped and
/// ids must be unique.
std::vector<CorpusRecord> read_corpus_jsonl(std::istream& in);
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path);
void write_corpus_jsonl(std::ostream& out, const std::vector<CorpusRecord>& records);

}  // namespace modq
