#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace modq {

/// Unit-length copy of `values`. Throws InvalidArgument on a non-finite value
/// or a zero norm.
std::vector<float> l2_normalized(std::span<const float> values);

/// sqrt(2 - 2 cos(u, v)). Always in [0, 2].
double angular_distance(std::span<const float> u, std::span<const float> v);

struct Neighbor {
  std::string id;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct ForestParams {
  std::size_t tree_count = 200;
  std::size_t leaf_size = 16;
  std::uint64_t seed = 0;
};

struct ForestNode {
  bool leaf = false;
  // Internal nodes: unit normal (all zero for a random fallback split) and
  // offset; points with normal.x + offset > 0 go left.
  std::vector<float> normal;
  float offset = 0.0f;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  // Leaves: record positions.
  std::vector<std::uint32_t> items;

  friend bool operator==(const ForestNode&, const ForestNode&) = default;
};

struct ProjectionTree {
  std::vector<ForestNode> nodes;  // nodes[0] is the root

  friend bool operator==(const ProjectionTree&, const ProjectionTree&) = default;
};

/// Random-projection forest over L2-normalized vectors with angular distance.
/// Immutable after build; queries are safe from many threads.
class ProjectionForest {
 public:
  static constexpr std::uint32_t kFileVersion = 1;

  /// Vectors are normalized on ingest. Throws EmptyCorpus, DimensionMismatch,
  /// or InvalidArgument (duplicate id, bad params, non-finite values).
  static ProjectionForest build(std::vector<std::string> ids,
                                std::span<const std::vector<float>> vectors,
                                const ForestParams& params);

  /// Approximate top-k by angular distance, ascending with ties broken by id.
  /// search_k defaults to tree_count * k.
  std::vector<Neighbor> query(std::span<const float> query, std::size_t k,
                              std::optional<std::string_view> exclude_id = std::nullopt,
                              std::optional<std::size_t> search_k = std::nullopt) const;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dimension() const noexcept { return dim_; }
  const ForestParams& params() const noexcept { return params_; }
  const std::vector<ProjectionTree>& trees() const noexcept { return trees_; }
  const std::string& id(std::size_t pos) const { return ids_.at(pos); }
  std::span<const float> vector(std::size_t pos) const {
    return {data_.data() + pos * dim_, dim_};
  }
  std::optional<std::size_t> position(std::string_view id) const;

  void save(const std::filesystem::path& path) const;
  static ProjectionForest load(const std::filesystem::path& path);

  friend bool operator==(const ProjectionForest& a, const ProjectionForest& b) {
    return a.dim_ == b.dim_ && a.params_.tree_count == b.params_.tree_count &&
           a.params_.leaf_size == b.params_.leaf_size && a.params_.seed == b.params_.seed &&
           a.ids_ == b.ids_ && a.data_ == b.data_ && a.trees_ == b.trees_;
  }

 private:
  ProjectionForest() = default;
  void index_ids();

  std::size_t dim_ = 0;
  ForestParams params_;
  std::vector<std::string> ids_;
  std::vector<float> data_;  // row-major, size() x dim_
  std::vector<ProjectionTree> trees_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace modq
