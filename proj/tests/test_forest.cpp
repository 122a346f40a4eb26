#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "modq/error.hpp"
#include "modq/forest.hpp"
#include "modq/random.hpp"
#include "test_util.hpp"

using namespace modq;

namespace {

std::vector<std::vector<float>> random_vectors(std::size_t n, std::size_t dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<float>> out(n, std::vector<float>(dim));
  for (auto& v : out) {
    for (auto& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  }
  return out;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("v" + std::to_string(i));
  return ids;
}

// Exact top-k by linear scan; ascending distance, ties by id.
std::vector<std::string> brute_force(const std::vector<std::vector<float>>& vectors,
                                     const std::vector<std::string>& ids,
                                     const std::vector<float>& query, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double dot = 0, nq = 0, nv = 0;
    for (std::size_t d = 0; d < query.size(); ++d) {
      dot += double(query[d]) * vectors[i][d];
      nq += double(query[d]) * query[d];
      nv += double(vectors[i][d]) * vectors[i][d];
    }
    const double cosine = dot / std::sqrt(nq * nv);
    all.emplace_back(std::sqrt(std::max(0.0, 2.0 - 2.0 * cosine)), ids[i]);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k && i < all.size(); ++i) out.push_back(all[i].second);
  return out;
}

void walk_leaves(const ProjectionTree& tree, std::uint32_t node, std::vector<std::uint32_t>& seen,
                 std::size_t leaf_size, bool& leaves_ok) {
  const auto& n = tree.nodes.at(node);
  if (n.leaf) {
    if (n.items.size() > leaf_size) leaves_ok = false;
    seen.insert(seen.end(), n.items.begin(), n.items.end());
    return;
  }
  walk_leaves(tree, n.left, seen, leaf_size, leaves_ok);
  walk_leaves(tree, n.right, seen, leaf_size, leaves_ok);
}

}  // namespace

TEST(Distance, AngularDistanceRange) {
  const std::vector<float> a = {1, 0};
  const std::vector<float> b = {0, 1};
  const std::vector<float> c = {-1, 0};
  EXPECT_NEAR(angular_distance(a, a), 0.0, 1e-12);
  EXPECT_NEAR(angular_distance(a, b), std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(angular_distance(a, c), 2.0, 1e-9);
}

TEST(Distance, NormalizeRejectsZeroAndNonFinite) {
  const std::vector<float> zero = {0, 0, 0};
  EXPECT_THROW(l2_normalized(zero), Error);
  const std::vector<float> bad = {1, NAN};
  EXPECT_THROW(l2_normalized(bad), Error);
  const std::vector<float> v = {3, 4};
  const auto n = l2_normalized(v);
  EXPECT_NEAR(n[0], 0.6, 1e-6);
  EXPECT_NEAR(n[1], 0.8, 1e-6);
}

TEST(Forest, SingleRecordGivesSingleLeafTrees) {
  const std::vector<std::vector<float>> vectors = {{1, 2, 3}};
  const auto forest = ProjectionForest::build({"only"}, vectors, {.tree_count = 7, .leaf_size = 4, .seed = 1});
  ASSERT_EQ(forest.trees().size(), 7u);
  for (const auto& tree : forest.trees()) {
    ASSERT_EQ(tree.nodes.size(), 1u);
    EXPECT_TRUE(tree.nodes[0].leaf);
    EXPECT_EQ(tree.nodes[0].items, std::vector<std::uint32_t>{0});
  }
}

TEST(Forest, LeavesBoundedAndPartitionIds) {
  const std::size_t n = 10000;
  const auto vectors = random_vectors(n, 32, 11);
  const auto forest = ProjectionForest::build(make_ids(n), vectors, {.tree_count = 10, .leaf_size = 16, .seed = 3});
  for (const auto& tree : forest.trees()) {
    std::vector<std::uint32_t> seen;
    bool leaves_ok = true;
    walk_leaves(tree, 0, seen, 16, leaves_ok);
    EXPECT_TRUE(leaves_ok);
    std::sort(seen.begin(), seen.end());
    ASSERT_EQ(seen.size(), n);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(seen[i], i);
  }
}

TEST(Forest, DuplicateVectorsStillSplit) {
  const std::vector<std::vector<float>> vectors(100, std::vector<float>{1, 1});
  const auto forest = ProjectionForest::build(make_ids(100), vectors, {.tree_count = 3, .leaf_size = 8, .seed = 0});
  for (const auto& tree : forest.trees()) {
    std::vector<std::uint32_t> seen;
    bool leaves_ok = true;
    walk_leaves(tree, 0, seen, 8, leaves_ok);
    EXPECT_TRUE(leaves_ok);
    EXPECT_EQ(seen.size(), 100u);
  }
}

TEST(Forest, DeterministicForSameSeed) {
  const auto vectors = random_vectors(500, 16, 5);
  const ForestParams params{.tree_count = 8, .leaf_size = 10, .seed = 42};
  const auto a = ProjectionForest::build(make_ids(500), vectors, params);
  const auto b = ProjectionForest::build(make_ids(500), vectors, params);
  EXPECT_TRUE(a == b);
  auto other = params;
  other.seed = 43;
  const auto c = ProjectionForest::build(make_ids(500), vectors, other);
  EXPECT_FALSE(a == c);
}

TEST(Forest, BuildErrors) {
  const std::vector<std::vector<float>> none;
  try {
    ProjectionForest::build({}, none, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyCorpus);
  }
  const std::vector<std::vector<float>> ragged = {{1, 2}, {1, 2, 3}};
  try {
    ProjectionForest::build({"a", "b"}, ragged, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
  const std::vector<std::vector<float>> two = {{1, 2}, {2, 1}};
  EXPECT_THROW(ProjectionForest::build({"a", "a"}, two, {}), Error);
}

TEST(Forest, QueryDimensionMismatch) {
  const auto vectors = random_vectors(10, 4, 1);
  const auto forest = ProjectionForest::build(make_ids(10), vectors, {.tree_count = 2, .leaf_size = 4, .seed = 0});
  const std::vector<float> q = {1, 2, 3};
  try {
    forest.query(q, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(Forest, IndexedVectorIsItsOwnNearestUnlessExcluded) {
  const auto vectors = random_vectors(1000, 24, 9);
  const auto ids = make_ids(1000);
  const auto forest = ProjectionForest::build(ids, vectors, {.tree_count = 20, .leaf_size = 16, .seed = 2});
  for (std::size_t i = 0; i < 1000; i += 97) {
    const auto hits = forest.query(vectors[i], 5);
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits[0].id, ids[i]);
    EXPECT_NEAR(hits[0].distance, 0.0, 1e-6);

    const auto excluded = forest.query(vectors[i], 5, ids[i]);
    EXPECT_EQ(excluded.size(), 5u);
    for (const auto& h : excluded) EXPECT_NE(h.id, ids[i]);
  }
}

TEST(Forest, ResultsSortedAndBoundedByK) {
  const auto vectors = random_vectors(300, 8, 4);
  const auto forest = ProjectionForest::build(make_ids(300), vectors, {.tree_count = 10, .leaf_size = 16, .seed = 1});
  const auto q = random_vectors(1, 8, 99)[0];
  const auto hits = forest.query(q, 12);
  ASSERT_EQ(hits.size(), 12u);
  for (std::size_t i = 1; i < hits.size(); ++i) {
    EXPECT_TRUE(hits[i - 1].distance < hits[i].distance ||
                (hits[i - 1].distance == hits[i].distance && hits[i - 1].id < hits[i].id));
  }
  EXPECT_EQ(forest.query(q, 1000).size(), 300u);
}

TEST(Forest, RecallAgainstBruteForceOnThousandVectors) {
  const std::size_t n = 1000;
  const std::size_t dim = 32;
  const auto vectors = random_vectors(n, dim, 123);
  const auto ids = make_ids(n);
  const auto forest = ProjectionForest::build(ids, vectors, {.tree_count = 200, .leaf_size = 16, .seed = 7});
  const auto queries = random_vectors(100, dim, 456);
  double overlap = 0;
  for (const auto& q : queries) {
    const auto exact = brute_force(vectors, ids, q, 5);
    const std::set<std::string> truth(exact.begin(), exact.end());
    std::size_t hit = 0;
    for (const auto& nb : forest.query(q, 5)) hit += truth.count(nb.id);
    overlap += hit / 5.0;
  }
  EXPECT_GE(overlap / queries.size(), 0.95);
}

TEST(Forest, ExhaustiveSearchKIsExact) {
  const std::size_t n = 2000;
  const auto vectors = random_vectors(n, 64, 31);
  const auto ids = make_ids(n);
  const auto forest = ProjectionForest::build(ids, vectors, {.tree_count = 10, .leaf_size = 16, .seed = 8});
  for (const auto& q : random_vectors(20, 64, 77)) {
    const auto exact = brute_force(vectors, ids, q, 5);
    std::vector<std::string> got;
    for (const auto& nb : forest.query(q, 5, std::nullopt, n)) got.push_back(nb.id);
    EXPECT_EQ(got, exact);
  }
}

TEST(Forest, SaveLoadRoundTrip) {
  modq::testing::TempDir dir("forest");
  const auto vectors = random_vectors(200, 12, 2);
  const auto forest = ProjectionForest::build(make_ids(200), vectors, {.tree_count = 5, .leaf_size = 8, .seed = 3});
  forest.save(dir / "f.bin");
  const auto loaded = ProjectionForest::load(dir / "f.bin");
  EXPECT_TRUE(forest == loaded);
  const auto q = random_vectors(1, 12, 5)[0];
  EXPECT_EQ(forest.query(q, 5), loaded.query(q, 5));
}

TEST(Forest, LoadRejectsCorruptFile) {
  modq::testing::TempDir dir("forest-bad");
  modq::testing::write_file(dir / "bad.bin", "not a forest");
  try {
    ProjectionForest::load(dir / "bad.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptIndex);
  }
  const auto vectors = random_vectors(50, 4, 2);
  const auto forest = ProjectionForest::build(make_ids(50), vectors, {.tree_count = 2, .leaf_size = 8, .seed = 3});
  forest.save(dir / "f.bin");
  auto bytes = modq::testing::read_file(dir / "f.bin");
  modq::testing::write_file(dir / "trunc.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(ProjectionForest::load(dir / "trunc.bin"), Error);
}
