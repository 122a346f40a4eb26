#include "modq/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "modq/error.hpp"

namespace modq {

CorpusRecord corpus_record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::CorpusError, "record is not a JSON object");
  CorpusRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.text = j.value("text", std::string{});
    r.policy = j.value("policy", std::string{});
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& label = j["label"];
      const int value = label.is_boolean() ? (label.get<bool>() ? 1 : 0) : label.get<int>();
      if (value != 0 && value != 1) throw Error(Errc::CorpusError, "label must be 0 or 1");
      r.label = value;
    }
    if (j.contains("embedding")) r.embedding = j["embedding"].get<std::vector<float>>();
    if (j.contains("keywords")) r.keywords = j["keywords"].get<std::vector<std::string>>();
    if (j.contains("score") && !j["score"].is_null()) r.score = j["score"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorpusError, e.what());
  }
  if (r.id.empty()) throw Error(Errc::CorpusError, "record id is empty");
  return r;
}

nlohmann::json corpus_record_to_json(const CorpusRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"text", r.text}, {"policy", r.policy}};
  if (r.label) j["label"] = *r.label;
  if (r.score) j["score"] = *r.score;
  if (r.keywords) j["keywords"] = *r.keywords;
  if (r.embedding) j["embedding"] = *r.embedding;
  return j;
}

std::vector<CorpusRecord> read_corpus_jsonl(std::istream& in) {
  std::vector<CorpusRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record = corpus_record_from_json(nlohmann::json::parse(line));
      if (!seen.insert(record.id).second) {
        throw Error(Errc::CorpusError, "duplicate id '" + record.id + "'");
      }
      records.push_back(std::move(record));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::CorpusError, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::CorpusError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::CorpusError, "cannot open corpus " + path.string());
  return read_corpus_jsonl(in);
}

void write_corpus_jsonl(std::ostream& out, const std::vector<CorpusRecord>& records) {
  for (const auto& r : records) out << corpus_record_to_json(r).dump() << '\n';
}

}  // namespace modq
