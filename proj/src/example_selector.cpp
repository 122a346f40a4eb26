#include "modq/example_selector.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include "modq/error.hpp"
#include "modq/random.hpp"

namespace modq {

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw Error(Errc::InvalidArgument, "embedding dimension must be positive");
}

std::vector<float> HashingEmbedder::embed(std::string_view text) const {
  // \x02 / \x03 pad the ends so short texts still produce trigrams.
  std::string padded = "\x02\x02";
  padded.reserve(text.size() + 3);
  for (char c : text) padded += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  padded += '\x03';

  std::unordered_map<std::uint64_t, int> counts;
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    ++counts[fnv1a64(std::string_view(padded).substr(i, 3))];
  }
  std::vector<std::pair<std::uint64_t, int>> grams(counts.begin(), counts.end());
  std::sort(grams.begin(), grams.end());

  std::vector<double> acc(dimension_, 0.0);
  for (const auto& [hash, count] : grams) {
    SplitMix64 rng(derive_seed(seed_, hash));
    std::uint64_t bits = 0;
    for (std::size_t d = 0; d < dimension_; ++d) {
      if (d % 64 == 0) bits = rng();
      acc[d] += (bits & 1u) ? count : -count;
      bits >>= 1;
    }
  }
  std::vector<float> out(acc.begin(), acc.end());
  return l2_normalized(out);
}

ProjectionForest build_index(std::span<const ExampleRecord> records, std::size_t tree_count,
                             std::size_t leaf_size, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<std::vector<float>> vectors;
  ids.reserve(records.size());
  vectors.reserve(records.size());
  for (const auto& r : records) {
    ids.push_back(r.id);
    vectors.push_back(r.embedding);
  }
  return ProjectionForest::build(std::move(ids), vectors, {tree_count, leaf_size, seed});
}

std::vector<Neighbor> query_neighbors(const ProjectionForest& forest, std::span<const float> query,
                                      std::size_t k, std::optional<std::string_view> exclude_id,
                                      std::optional<std::size_t> search_k) {
  return forest.query(query, k, exclude_id, search_k);
}

ExampleIndex ExampleIndex::build(std::vector<ExampleRecord> records, const ForestParams& params) {
  auto forest = build_index(records, params.tree_count, params.leaf_size, params.seed);
  return ExampleIndex(std::move(forest), std::move(records));
}

const ExampleRecord& ExampleIndex::record(std::string_view id) const {
  const auto pos = forest_.position(id);
  if (!pos) throw Error(Errc::InvalidArgument, "unknown example id '" + std::string(id) + "'");
  return records_[*pos];
}

namespace {

void take_nearest(const ExampleIndex& index, std::span<const float> query, std::string_view query_id,
                  std::size_t count, std::optional<std::size_t> search_k, bool violative,
                  std::vector<FewShotExample>& out) {
  const auto neighbors = index.forest().query(query, count, query_id, search_k);
  if (neighbors.size() < count) {
    throw Error(Errc::InsufficientExamples,
                std::string(violative ? "violative" : "non-violative") + " index supplied " +
                    std::to_string(neighbors.size()) + " of " + std::to_string(count) +
                    " examples");
  }
  for (const auto& n : neighbors) {
    const auto& r = index.record(n.id);
    out.push_back({r.text, violative, violative ? r.keywords : std::nullopt});
  }
}

}  // namespace

std::vector<FewShotExample> select_few_shot(const ExampleIndex& violative,
                                            const ExampleIndex& nonviolative,
                                            std::span<const float> query,
                                            std::string_view query_id,
                                            std::optional<std::size_t> search_k) {
  std::vector<FewShotExample> out;
  out.reserve(kFewShotSize);
  take_nearest(violative, query, query_id, kFewShotViolative, search_k, true, out);
  take_nearest(nonviolative, query, query_id, kFewShotNonViolative, search_k, false, out);
  return out;
}

std::vector<FewShotExample> inject_label_noise(std::span<const FewShotExample> examples,
                                               std::uint64_t seed) {
  if (examples.empty()) throw Error(Errc::EmptyList, "no examples to perturb");
  std::vector<FewShotExample> out(examples.begin(), examples.end());
  SplitMix64 rng(seed);
  auto& victim = out[static_cast<std::size_t>(rng.below(out.size()))];
  victim.violative = !victim.violative;
  return out;
}

ExampleStore ExampleStore::from_corpus(const std::vector<CorpusRecord>& corpus,
                                       const HashingEmbedder& embedder,
                                       const ForestParams& params) {
  std::map<std::string, std::vector<ExampleRecord>, std::less<>> violative;
  std::map<std::string, std::vector<ExampleRecord>, std::less<>> nonviolative;
  std::vector<ExampleRecord> shared;

  for (const auto& c : corpus) {
    if (!c.label) continue;
    ExampleRecord r;
    r.id = c.id;
    r.text = c.text;
    r.violative = *c.label == 1;
    r.policy = c.policy;
    r.embedding = c.embedding ? *c.embedding : embedder.embed(c.text);
    r.keywords = c.keywords;
    if (r.violative) {
      if (r.policy.empty() || r.policy == "*") {
        throw Error(Errc::CorpusError, "violative record '" + r.id + "' has no policy");
      }
      violative[r.policy].push_back(std::move(r));
    } else if (r.policy.empty() || r.policy == "*") {
      shared.push_back(std::move(r));
    } else {
      nonviolative[r.policy].push_back(std::move(r));
    }
  }

  ExampleStore store;
  for (auto& [policy, records] : violative) {
    auto negatives = std::move(nonviolative[policy]);
    negatives.insert(negatives.end(), shared.begin(), shared.end());
    if (negatives.empty()) continue;
    store.pairs_.emplace(policy, Pair{ExampleIndex::build(std::move(records), params),
                                      ExampleIndex::build(std::move(negatives), params)});
  }
  return store;
}

const ExampleStore::Pair* ExampleStore::find(std::string_view policy) const {
  auto it = pairs_.find(policy);
  return it == pairs_.end() ? nullptr : &it->second;
}

std::vector<std::string> ExampleStore::policies() const {
  std::vector<std::string> out;
  for (const auto& [name, pair] : pairs_) out.push_back(name);
  return out;
}

}  // namespace modq
