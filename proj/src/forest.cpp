#include "modq/forest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>

#include "modq/error.hpp"
#include "modq/random.hpp"

namespace modq {
namespace {

constexpr char kMagic[8] = {'M', 'O', 'D', 'Q', 'R', 'P', 'F', '\0'};
constexpr int kSplitAttempts = 8;

static_assert(std::endian::native == std::endian::little,
              "forest files are written in host byte order");

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return std::tie(a.distance, a.id) < std::tie(b.distance, b.id);
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<float>& data, std::size_t dim, std::size_t leaf_size,
              std::uint64_t seed)
      : data_(data), dim_(dim), leaf_size_(leaf_size), rng_(seed) {}

  ProjectionTree build(std::size_t count) {
    std::vector<std::uint32_t> all(count);
    std::iota(all.begin(), all.end(), 0u);
    tree_.nodes.clear();
    tree_.nodes.emplace_back();
    // (node slot, items) pending expansion; processed depth-first so node
    // numbering is a pure function of the seed.
    std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> stack;
    stack.emplace_back(0u, std::move(all));
    while (!stack.empty()) {
      auto [slot, items] = std::move(stack.back());
      stack.pop_back();
      if (items.size() <= leaf_size_) {
        ForestNode& leaf = tree_.nodes[slot];
        leaf.leaf = true;
        leaf.items = std::move(items);
        continue;
      }
      std::vector<std::uint32_t> left;
      std::vector<std::uint32_t> right;
      ForestNode split = make_split(items, left, right);
      split.left = static_cast<std::uint32_t>(tree_.nodes.size());
      split.right = split.left + 1;
      tree_.nodes[slot] = std::move(split);
      tree_.nodes.emplace_back();
      tree_.nodes.emplace_back();
      const std::uint32_t left_slot = tree_.nodes[slot].left;
      const std::uint32_t right_slot = tree_.nodes[slot].right;
      stack.emplace_back(right_slot, std::move(right));
      stack.emplace_back(left_slot, std::move(left));
    }
    return std::move(tree_);
  }

 private:
  std::span<const float> row(std::uint32_t i) const { return {data_.data() + i * dim_, dim_}; }

  ForestNode make_split(const std::vector<std::uint32_t>& items, std::vector<std::uint32_t>& left,
                        std::vector<std::uint32_t>& right) {
    ForestNode node;
    node.normal.assign(dim_, 0.0f);
    std::vector<double> normal(dim_);
    for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
      const auto a = static_cast<std::size_t>(rng_.below(items.size()));
      auto b = static_cast<std::size_t>(rng_.below(items.size() - 1));
      if (b >= a) ++b;
      const auto pa = row(items[a]);
      const auto pb = row(items[b]);
      double norm2 = 0.0;
      double offset = 0.0;
      for (std::size_t d = 0; d < dim_; ++d) {
        normal[d] = static_cast<double>(pa[d]) - static_cast<double>(pb[d]);
        norm2 += normal[d] * normal[d];
        offset -= normal[d] * 0.5 * (static_cast<double>(pa[d]) + static_cast<double>(pb[d]));
      }
      if (norm2 <= 0.0) continue;  // duplicate points
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t d = 0; d < dim_; ++d) node.normal[d] = static_cast<float>(normal[d] * inv);
      node.offset = static_cast<float>(offset * inv);

      left.clear();
      right.clear();
      for (std::uint32_t item : items) {
        (margin(node, row(item)) > 0.0 ? left : right).push_back(item);
      }
      if (!left.empty() && !right.empty()) return node;
    }
    // No separating pair found (e.g. many duplicates): split a shuffled copy in
    // half under a zero hyperplane so both children are always explored.
    std::fill(node.normal.begin(), node.normal.end(), 0.0f);
    node.offset = 0.0f;
    std::vector<std::uint32_t> shuffled = items;
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
      std::swap(shuffled[i], shuffled[static_cast<std::size_t>(rng_.below(i + 1))]);
    }
    const auto half = static_cast<std::ptrdiff_t>(shuffled.size() / 2);
    left.assign(shuffled.begin(), shuffled.begin() + half);
    right.assign(shuffled.begin() + half, shuffled.end());
    return node;
  }

  static double margin(const ForestNode& node, std::span<const float> x) {
    return dot(node.normal, x) + static_cast<double>(node.offset);
  }

  const std::vector<float>& data_;
  std::size_t dim_;
  std::size_t leaf_size_;
  SplitMix64 rng_;
  ProjectionTree tree_;
};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(Errc::CorruptIndex, "truncated forest file");
  return value;
}

}  // namespace

std::vector<float> l2_normalized(std::span<const float> values) {
  double norm2 = 0.0;
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "embedding has a non-finite value");
    norm2 += static_cast<double>(v) * static_cast<double>(v);
  }
  if (norm2 <= 0.0) throw Error(Errc::InvalidArgument, "embedding has zero norm");
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(values[i]) * inv);
  }
  return out;
}

double angular_distance(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw Error(Errc::DimensionMismatch, "vectors differ in dimension");
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu <= 0.0 || vv <= 0.0) return std::sqrt(2.0);
  const double cos = std::clamp(dot(u, v) / std::sqrt(uu * vv), -1.0, 1.0);
  return std::sqrt(std::max(0.0, 2.0 - 2.0 * cos));
}

ProjectionForest ProjectionForest::build(std::vector<std::string> ids,
                                         std::span<const std::vector<float>> vectors,
                                         const ForestParams& params) {
  if (vectors.empty()) throw Error(Errc::EmptyCorpus, "cannot index zero records");
  if (ids.size() != vectors.size()) {
    throw Error(Errc::InvalidArgument, "id count differs from vector count");
  }
  if (params.tree_count == 0 || params.leaf_size == 0) {
    throw Error(Errc::InvalidArgument, "tree_count and leaf_size must be positive");
  }
  if (vectors.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::InvalidArgument, "too many records");
  }
  ProjectionForest forest;
  forest.dim_ = vectors.front().size();
  if (forest.dim_ == 0) throw Error(Errc::DimensionMismatch, "zero-dimensional embedding");
  forest.params_ = params;
  forest.data_.reserve(vectors.size() * forest.dim_);
  for (const auto& v : vectors) {
    if (v.size() != forest.dim_) {
      throw Error(Errc::DimensionMismatch, "expected dimension " + std::to_string(forest.dim_) +
                                               ", got " + std::to_string(v.size()));
    }
    const auto unit = l2_normalized(v);
    forest.data_.insert(forest.data_.end(), unit.begin(), unit.end());
  }
  forest.ids_ = std::move(ids);
  forest.index_ids();

  forest.trees_.reserve(params.tree_count);
  for (std::size_t t = 0; t < params.tree_count; ++t) {
    TreeBuilder builder(forest.data_, forest.dim_, params.leaf_size, derive_seed(params.seed, t));
    forest.trees_.push_back(builder.build(forest.size()));
  }
  return forest;
}

void ProjectionForest::index_ids() {
  by_id_.clear();
  by_id_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!by_id_.emplace(ids_[i], i).second) {
      throw Error(Errc::InvalidArgument, "duplicate record id '" + ids_[i] + "'");
    }
  }
}

std::optional<std::size_t> ProjectionForest::position(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<Neighbor> ProjectionForest::query(std::span<const float> query, std::size_t k,
                                              std::optional<std::string_view> exclude_id,
                                              std::optional<std::size_t> search_k) const {
  if (query.size() != dim_) {
    throw Error(Errc::DimensionMismatch, "query has dimension " + std::to_string(query.size()) +
                                             ", index has " + std::to_string(dim_));
  }
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be at least 1");
  std::optional<std::size_t> excluded;
  if (exclude_id) excluded = position(*exclude_id);
  // One extra slot so dropping the excluded record still leaves the budget.
  const std::size_t budget =
      std::min(search_k.value_or(params_.tree_count * k) + (excluded ? 1 : 0), ids_.size());

  struct Pending {
    double priority;
    std::uint32_t tree;
    std::uint32_t node;
    bool operator<(const Pending& o) const {
      return std::tie(priority, o.tree, o.node) < std::tie(o.priority, tree, node);
    }
  };
  std::priority_queue<Pending> frontier;
  for (std::uint32_t t = 0; t < trees_.size(); ++t) {
    frontier.push({std::numeric_limits<double>::infinity(), t, 0});
  }

  // The budget counts distinct records, so search_k >= size() visits every
  // record and the answer is exact.
  std::vector<std::uint32_t> candidates;
  std::vector<bool> seen(ids_.size(), false);
  candidates.reserve(budget);
  while (candidates.size() < budget && !frontier.empty()) {
    const Pending top = frontier.top();
    frontier.pop();
    const ForestNode& node = trees_[top.tree].nodes[top.node];
    if (node.leaf) {
      for (std::uint32_t item : node.items) {
        if (!seen[item]) {
          seen[item] = true;
          candidates.push_back(item);
        }
      }
      continue;
    }
    const double m = dot(node.normal, query) + static_cast<double>(node.offset);
    frontier.push({std::min(top.priority, m), top.tree, node.left});
    frontier.push({std::min(top.priority, -m), top.tree, node.right});
  }

  std::vector<Neighbor> out;
  out.reserve(candidates.size());
  for (std::uint32_t c : candidates) {
    if (excluded && *excluded == c) continue;
    out.push_back({ids_[c], angular_distance(query, vector(c))});
  }
  const std::size_t keep = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    neighbor_less);
  out.resize(keep);
  return out;
}

void ProjectionForest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::InvalidArgument, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFileVersion);
  write_pod(out, static_cast<std::uint32_t>(dim_));
  write_pod(out, static_cast<std::uint32_t>(params_.tree_count));
  write_pod(out, static_cast<std::uint32_t>(params_.leaf_size));
  write_pod(out, static_cast<std::uint64_t>(params_.seed));
  write_pod(out, static_cast<std::uint64_t>(ids_.size()));
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    write_pod(out, static_cast<std::uint32_t>(ids_[i].size()));
    out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
    out.write(reinterpret_cast<const char*>(data_.data() + i * dim_),
              static_cast<std::streamsize>(dim_ * sizeof(float)));
  }
  for (const auto& tree : trees_) {
    write_pod(out, static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& node : tree.nodes) {
      write_pod(out, static_cast<std::uint8_t>(node.leaf ? 1 : 0));
      if (node.leaf) {
        write_pod(out, static_cast<std::uint32_t>(node.items.size()));
        out.write(reinterpret_cast<const char*>(node.items.data()),
                  static_cast<std::streamsize>(node.items.size() * sizeof(std::uint32_t)));
      } else {
        out.write(reinterpret_cast<const char*>(node.normal.data()),
                  static_cast<std::streamsize>(dim_ * sizeof(float)));
        write_pod(out, node.offset);
        write_pod(out, node.left);
        write_pod(out, node.right);
      }
    }
  }
  if (!out) throw Error(Errc::InvalidArgument, "write to " + path.string() + " failed");
}

ProjectionForest ProjectionForest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::CorruptIndex, "cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(Errc::CorruptIndex, path.string() + " is not a forest file");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFileVersion) {
    throw Error(Errc::CorruptIndex, "unsupported forest version " + std::to_string(version));
  }
  ProjectionForest forest;
  forest.dim_ = read_pod<std::uint32_t>(in);
  forest.params_.tree_count = read_pod<std::uint32_t>(in);
  forest.params_.leaf_size = read_pod<std::uint32_t>(in);
  forest.params_.seed = read_pod<std::uint64_t>(in);
  const auto count = read_pod<std::uint64_t>(in);
  if (forest.dim_ == 0 || count == 0 || count > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::CorruptIndex, "bad forest header");
  }
  forest.ids_.resize(count);
  forest.data_.resize(count * forest.dim_);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(in);
    forest.ids_[i].resize(len);
    in.read(forest.ids_[i].data(), len);
    in.read(reinterpret_cast<char*>(forest.data_.data() + i * forest.dim_),
            static_cast<std::streamsize>(forest.dim_ * sizeof(float)));
    if (!in) throw Error(Errc::CorruptIndex, "truncated record section");
  }
  forest.index_ids();
  forest.trees_.resize(forest.params_.tree_count);
  for (auto& tree : forest.trees_) {
    const auto nodes = read_pod<std::uint32_t>(in);
    tree.nodes.resize(nodes);
    for (auto& node : tree.nodes) {
      node.leaf = read_pod<std::uint8_t>(in) != 0;
      if (node.leaf) {
        const auto n = read_pod<std::uint32_t>(in);
        node.items.resize(n);
        in.read(reinterpret_cast<char*>(node.items.data()),
                static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
        for (auto item : node.items) {
          if (item >= count) throw Error(Errc::CorruptIndex, "leaf references unknown record");
        }
      } else {
        node.normal.resize(forest.dim_);
        in.read(reinterpret_cast<char*>(node.normal.data()),
                static_cast<std::streamsize>(forest.dim_ * sizeof(float)));
        node.offset = read_pod<float>(in);
        node.left = read_pod<std::uint32_t>(in);
        node.right = read_pod<std::uint32_t>(in);
        if (node.left >= nodes || node.right >= nodes) {
          throw Error(Errc::CorruptIndex, "child index out of range");
        }
      }
      if (!in) throw Error(Errc::CorruptIndex, "truncated tree section");
    }
  }
  return forest;
}

}  // namespace modq
