#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "modq/error.hpp"
#include "modq/example_selector.hpp"
#include "modq/random.hpp"

using namespace modq;

namespace {

std::vector<float> random_vector(SplitMix64& rng, std::size_t dim) {
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return v;
}

std::vector<ExampleRecord> random_records(std::size_t n, std::size_t dim, bool violative,
                                          const std::string& prefix, SplitMix64& rng) {
  std::vector<ExampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ExampleRecord r;
    r.id = prefix + std::to_string(i);
    r.text = "text " + r.id;
    r.violative = violative;
    r.policy = "p";
    r.embedding = random_vector(rng, dim);
    if (violative) r.keywords = std::vector<std::string>{"kw" + std::to_string(i)};
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> exact_nearest(const std::vector<ExampleRecord>& records,
                                       const std::vector<float>& query, std::size_t k,
                                       const std::string& exclude) {
  std::vector<std::pair<double, std::string>> all;
  for (const auto& r : records) {
    if (r.id == exclude) continue;
    all.emplace_back(angular_distance(query, r.embedding), r.id);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k && i < all.size(); ++i) out.push_back(all[i].second);
  return out;
}

std::vector<std::string> texts_of(const std::vector<FewShotExample>& examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) out.push_back(e.comment_text);
  return out;
}

}  // namespace

TEST(Embedder, DeterministicUnitVectors) {
  const HashingEmbedder e(64, 3);
  const auto a = e.embed("Steal the election");
  const auto b = e.embed("steal THE election");
  ASSERT_EQ(a.size(), 64u);
  EXPECT_EQ(a, b);
  double norm = 0;
  for (float x : a) norm += double(x) * x;
  EXPECT_NEAR(norm, 1.0, 1e-5);
  EXPECT_NE(e.embed("something else"), a);
  EXPECT_NO_THROW(e.embed(""));
}

TEST(Embedder, SimilarTextsAreCloser) {
  const HashingEmbedder e(256, 0);
  const auto base = e.embed("the election was stolen from us");
  const auto near = e.embed("the election was stolen from them");
  const auto far = e.embed("my cat enjoys sunny windowsills");
  EXPECT_LT(angular_distance(base, near), angular_distance(base, far));
}

TEST(Selector, ReturnsThreeViolativeThenTwoNonViolative) {
  SplitMix64 rng(1);
  auto pos = random_records(40, 16, true, "v", rng);
  auto neg = random_records(40, 16, false, "n", rng);
  const auto vi = ExampleIndex::build(pos, {.tree_count = 10, .leaf_size = 8, .seed = 1});
  const auto ni = ExampleIndex::build(neg, {.tree_count = 10, .leaf_size = 8, .seed = 2});
  const auto q = random_vector(rng, 16);
  const auto picked = select_few_shot(vi, ni, q, "none");
  ASSERT_EQ(picked.size(), kFewShotSize);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    EXPECT_EQ(picked[i].violative, i < kFewShotViolative);
    EXPECT_EQ(picked[i].keywords.has_value(), i < kFewShotViolative);
  }
}

TEST(Selector, ExactCorporaOfThreeAndTwo) {
  SplitMix64 rng(2);
  auto pos = random_records(3, 8, true, "v", rng);
  auto neg = random_records(2, 8, false, "n", rng);
  const auto vi = ExampleIndex::build(pos, {.tree_count = 4, .leaf_size = 2, .seed = 0});
  const auto ni = ExampleIndex::build(neg, {.tree_count = 4, .leaf_size = 2, .seed = 0});
  const auto picked = select_few_shot(vi, ni, random_vector(rng, 8), "q");
  std::set<std::string> got;
  for (const auto& e : picked) got.insert(e.comment_text);
  EXPECT_EQ(got, (std::set<std::string>{"text v0", "text v1", "text v2", "text n0", "text n1"}));
}

TEST(Selector, QueryIdNeverSelected) {
  SplitMix64 rng(3);
  auto pos = random_records(50, 12, true, "v", rng);
  auto neg = random_records(50, 12, false, "n", rng);
  const auto vi = ExampleIndex::build(pos, {.tree_count = 10, .leaf_size = 8, .seed = 1});
  const auto ni = ExampleIndex::build(neg, {.tree_count = 10, .leaf_size = 8, .seed = 2});
  for (const auto& r : pos) {
    const auto picked = select_few_shot(vi, ni, r.embedding, r.id);
    for (const auto& e : picked) EXPECT_NE(e.comment_text, r.text);
  }
}

TEST(Selector, InsufficientExamples) {
  SplitMix64 rng(4);
  auto pos = random_records(3, 8, true, "v", rng);
  auto neg = random_records(2, 8, false, "n", rng);
  const auto vi = ExampleIndex::build(pos, {.tree_count = 2, .leaf_size = 2, .seed = 0});
  const auto ni = ExampleIndex::build(neg, {.tree_count = 2, .leaf_size = 2, .seed = 0});
  try {
    select_few_shot(vi, ni, pos[0].embedding, pos[0].id);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientExamples);
  }
}

TEST(Selector, MatchesExactSearchOracle) {
  SplitMix64 rng(5);
  for (int corpus = 0; corpus < 5; ++corpus) {
    const std::size_t n_pos = 100 + rng.below(300);
    auto pos = random_records(n_pos, 32, true, "v", rng);
    auto neg = random_records(400 - n_pos / 2, 32, false, "n", rng);
    const auto vi = ExampleIndex::build(pos, {.tree_count = 200, .leaf_size = 16, .seed = rng()});
    const auto ni = ExampleIndex::build(neg, {.tree_count = 200, .leaf_size = 16, .seed = rng()});
    for (int t = 0; t < 100; ++t) {
      const bool from_pos = rng.bernoulli(0.5);
      const auto& src = from_pos ? pos : neg;
      const auto& q = src[rng.below(src.size())];
      std::vector<std::string> expected;
      for (const auto& id : exact_nearest(pos, q.embedding, 3, q.id)) expected.push_back("text " + id);
      for (const auto& id : exact_nearest(neg, q.embedding, 2, q.id)) expected.push_back("text " + id);
      EXPECT_EQ(texts_of(select_few_shot(vi, ni, q.embedding, q.id)), expected);
    }
  }
}

TEST(LabelNoise, FlipsExactlyOne) {
  std::vector<FewShotExample> examples = {
      {"a", true, {}}, {"b", true, {}}, {"c", true, {}}, {"d", false, {}}, {"e", false, {}}};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto noisy = inject_label_noise(examples, seed);
    ASSERT_EQ(noisy.size(), examples.size());
    int diffs = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      EXPECT_EQ(noisy[i].comment_text, examples[i].comment_text);
      diffs += noisy[i].violative != examples[i].violative;
    }
    EXPECT_EQ(diffs, 1);
  }
  EXPECT_EQ(inject_label_noise(examples, 9), inject_label_noise(examples, 9));
}

TEST(LabelNoise, SingleExampleFlipped) {
  const std::vector<FewShotExample> one = {{"a", false, {}}};
  EXPECT_TRUE(inject_label_noise(one, 77)[0].violative);
  const std::vector<FewShotExample> none;
  EXPECT_THROW(inject_label_noise(none, 0), Error);
}

TEST(LabelNoise, PositionsFlippedUniformly) {
  const std::vector<FewShotExample> examples = {
      {"a", true, {}}, {"b", true, {}}, {"c", true, {}}, {"d", false, {}}, {"e", false, {}}};
  std::vector<int> counts(5, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto noisy = inject_label_noise(examples, seed);
    for (std::size_t i = 0; i < 5; ++i) counts[i] += noisy[i].violative != examples[i].violative;
  }
  for (int c : counts) {
    EXPECT_GE(c, 1800);
    EXPECT_LE(c, 2200);
  }
}

TEST(Store, GroupsByPolicyWithSharedNegatives) {
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < 4; ++i) {
    corpus.push_back({"h" + std::to_string(i), "hate text " + std::to_string(i), "hate", 1, {}, {}, {}});
    corpus.push_back({"e" + std::to_string(i), "election text " + std::to_string(i), "election", 1, {}, {}, {}});
  }
  corpus.push_back({"n0", "benign one", "*", 0, {}, {}, {}});
  corpus.push_back({"n1", "benign two", "", 0, {}, {}, {}});
  corpus.push_back({"u", "unlabeled", "hate", std::nullopt, {}, {}, {}});
  const auto store = ExampleStore::from_corpus(corpus, HashingEmbedder(32, 0), {.tree_count = 3, .leaf_size = 4, .seed = 0});
  EXPECT_EQ(store.policies(), (std::vector<std::string>{"election", "hate"}));
  const auto* hate = store.find("hate");
  ASSERT_NE(hate, nullptr);
  EXPECT_EQ(hate->violative.size(), 4u);
  EXPECT_EQ(hate->nonviolative.size(), 2u);
  EXPECT_EQ(store.find("nope"), nullptr);
}
