#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modq/corpus.hpp"
#include "modq/forest.hpp"
#include "modq/prompt.hpp"

namespace modq {

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

/// Deterministic stand-in for a sentence embedding model: character trigrams
/// of the lowercased text projected through seeded random +/-1 vectors, then
/// L2-normalized.
class HashingEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = kDefaultEmbeddingDim, std::uint64_t seed = 0);

  std::vector<float> embed(std::string_view text) const;
  std::size_t dimension() const noexcept { return dimension_; }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

struct ExampleRecord {
  std::string id;
  std::string text;
  bool violative = false;
  std::string policy;
  std::vector<float> embedding;
  std::optional<std::vector<std::string>> keywords;
};

/// Builds the forest over the records' embeddings.
ProjectionForest build_index(std::span<const ExampleRecord> records, std::size_t tree_count,
                             std::size_t leaf_size, std::uint64_t seed);

std::vector<Neighbor> query_neighbors(const ProjectionForest& forest, std::span<const float> query,
                                      std::size_t k,
                                      std::optional<std::string_view> exclude_id = std::nullopt,
                                      std::optional<std::size_t> search_k = std::nullopt);

/// A forest plus the records it was built from.
class ExampleIndex {
 public:
  static ExampleIndex build(std::vector<ExampleRecord> records, const ForestParams& params);

  const ProjectionForest& forest() const noexcept { return forest_; }
  std::size_t size() const noexcept { return records_.size(); }
  const ExampleRecord& record(std::string_view id) const;

 private:
  ExampleIndex(ProjectionForest forest, std::vector<ExampleRecord> records)
      : forest_(std::move(forest)), records_(std::move(records)) {}

  ProjectionForest forest_;
  std::vector<ExampleRecord> records_;  // aligned with forest positions
};

/// Three nearest violative then two nearest non-violative examples, each group
/// ascending by distance, never including query_id. Throws
/// InsufficientExamples when either index cannot supply its share.
std::vector<FewShotExample> select_few_shot(const ExampleIndex& violative,
                                            const ExampleIndex& nonviolative,
                                            std::span<const float> query,
                                            std::string_view query_id,
                                            std::optional<std::size_t> search_k = std::nullopt);

/// Flips exactly one answer, chosen uniformly from the seed.
std::vector<FewShotExample> inject_label_noise(std::span<const FewShotExample> examples,
                                               std::uint64_t seed);

/// Per-policy violative / non-violative index pairs.
class ExampleStore {
 public:
  struct Pair {
    ExampleIndex violative;
    ExampleIndex nonviolative;
  };

  /// Labeled records are grouped by policy. Non-violative records with an
  /// empty policy or "*" join every policy's non-violative index. Records
  /// without an inline embedding are embedded with `embedder`.
  static ExampleStore from_corpus(const std::vector<CorpusRecord>& corpus,
                                  const HashingEmbedder& embedder, const ForestParams& params);

  const Pair* find(std::string_view policy) const;
  std::vector<std::string> policies() const;

 private:
  std::map<std::string, Pair, std::less<>> pairs_;
};

}  // namespace modq
