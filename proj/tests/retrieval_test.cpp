#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "icl/error.hpp"
#include "icl/retrieval.hpp"
#include "icl/text.hpp"

namespace icl {
namespace {

using Tokens = std::vector<std::string>;

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("List files."), (Tokens{"list", "files"}));
  EXPECT_EQ(tokenize(""), Tokens{});
  EXPECT_EQ(tokenize("A  a\tA"), (Tokens{"a", "a", "a"}));
  EXPECT_EQ(tokenize("(hello), \"world\"!"), (Tokens{"hello", "world"}));
  EXPECT_EQ(tokenize("ls -a"), (Tokens{"ls", "a"}));
  EXPECT_EQ(tokenize("... ,,, !!"), Tokens{});
}

TEST(Tokenize, UnicodeWhitespaceAndCase) {
  EXPECT_EQ(tokenize("\xC3\x89T\xC3\x89\xE2\x80\x83Stra\xC3\x9F" "e"), (Tokens{"\xC3\xA9t\xC3\xA9", "stra\xC3\x9F" "e"}));
  EXPECT_EQ(tokenize("\xCE\x91\xCE\x92\xC2\xA0\xD0\x96"), (Tokens{"\xCE\xB1\xCE\xB2", "\xD0\xB6"}));
  EXPECT_EQ(utf8_length("\xC3\xA9t\xC3\xA9"), 3u);
}

// Independent evaluation of the scoring formula.
double bm25_hand(double tf, double df, double n, double dl, double avgdl) {
  const double k1 = 1.5, b = 0.75;
  const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
  return idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl));
}

TEST(Bm25, BuildCounts) {
  auto idx = bm25_build(testing::toy_bm25_corpus());
  EXPECT_EQ(idx.df.at("a"), 1u);
  EXPECT_EQ(idx.df.at("b"), 2u);
  EXPECT_EQ(idx.df.at("c"), 2u);
  EXPECT_DOUBLE_EQ(idx.avgdl, 2.0);
}

TEST(Bm25, ToyQueryHandValues) {
  auto idx = bm25_build(testing::toy_bm25_corpus());
  auto r = bm25_query(idx, "c", 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "d3");
  EXPECT_EQ(r[1].id, "d2");
  EXPECT_EQ(r[2].id, "d1");
  EXPECT_NEAR(r[0].score, 0.6716, 1e-3);
  EXPECT_NEAR(r[1].score, 0.4700, 1e-3);
  EXPECT_NEAR(r[0].score, bm25_hand(2, 2, 3, 2, 2), 1e-12);
  EXPECT_NEAR(r[1].score, bm25_hand(1, 2, 3, 2, 2), 1e-12);
  EXPECT_EQ(r[2].score, 0.0);
}

TEST(Bm25, AbsentTermFillsInIdOrder) {
  auto idx = bm25_build(testing::toy_bm25_corpus());
  auto r = bm25_query(idx, "z", 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "d1");
  EXPECT_EQ(r[1].id, "d2");
  EXPECT_EQ(r[2].id, "d3");
  for (const auto& e : r) EXPECT_EQ(e.score, 0.0);
  auto empty = bm25_query(idx, "", 2);
  EXPECT_EQ(empty.size(), 2u);
}

TEST(Bm25, KOneIsPrefix) {
  auto idx = bm25_build(testing::toy_bm25_corpus());
  auto r = bm25_query(idx, "c", 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].id, "d3");
  EXPECT_THROW(bm25_query(idx, "c", 0), ArgumentError);
}

TEST(Bm25, RepeatedQueryTermsCountEachTime) {
  auto idx = bm25_build(testing::toy_bm25_corpus());
  auto once = bm25_query(idx, "c", 1);
  auto twice = bm25_query(idx, "c c", 1);
  EXPECT_NEAR(twice[0].score, 2 * once[0].score, 1e-12);
}

TEST(Bm25, SingleDocAndEmptyOutputs) {
  auto one = parse_corpus(R"({"id":"x","input":"one two three","output":""})", TaskKind::kGeneration);
  EXPECT_DOUBLE_EQ(bm25_build(one).avgdl, 3.0);
  auto out = bm25_build(one, TextField::kOutput);
  EXPECT_EQ(out.doc_lens[0], 0u);
  EXPECT_EQ(bm25_query(out, "one", 1).size(), 1u);
  EXPECT_THROW(bm25_build(Corpus{}), DataError);
}

TEST(Bm25, MonotoneInTermFrequency) {
  // Same length for every document: tf copies of "t" padded with distinct fillers.
  std::string text;
  for (int tf = 0; tf <= 6; ++tf) {
    std::string doc;
    for (int i = 0; i < 6; ++i) doc += (i < tf ? "t " : "f" + std::to_string(tf) + "_" + std::to_string(i) + " ");
    text += "{\"id\":\"d" + std::to_string(tf) + "\",\"input\":\"" + doc + "\",\"output\":\"o\"}\n";
  }
  auto idx = bm25_build(parse_corpus(text, TaskKind::kGeneration));
  double prev = -1;
  for (std::size_t tf = 0; tf <= 6; ++tf) {
    const double s = idx.score(tf, {"t"});
    EXPECT_GE(s, prev);
    prev = s;
  }
  EXPECT_GT(prev, 0.0);
}

TEST(Bm25, JsonRoundTrip) {
  auto idx = bm25_build(testing::topic_generation_corpus(3));
  auto back = bm25_from_json(bm25_to_json(idx));
  auto a = bm25_query(idx, "how do i fix the archive", 10);
  auto b = bm25_query(back, "how do i fix the archive", 10);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].score, b[i].score);
  }
}

EmbeddingBank unit_bank() {
  return EmbeddingBank(1, 2, {"e1", "e2"}, {1, 0, 0, 1});
}

TEST(Dense, HandCases) {
  auto b = unit_bank();
  const float q1[] = {1, 0}, q2[] = {1, 1};
  auto r = dense_topk(b, 0, q1, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].id, "e1");
  EXPECT_NEAR(r[0].score, 1.0, 1e-12);

  auto tie = dense_topk(b, 0, q2, 2);
  ASSERT_EQ(tie.size(), 2u);
  EXPECT_EQ(tie[0].id, "e1");
  EXPECT_EQ(tie[1].id, "e2");
  EXPECT_NEAR(tie[0].score, 0.7071, 1e-4);
  EXPECT_NEAR(tie[1].score, 0.7071, 1e-4);

  auto ex = dense_topk(b, 0, q1, 1, {"e1"});
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].id, "e2");
  EXPECT_NEAR(ex[0].score, 0.0, 1e-12);
}

TEST(Dense, Errors) {
  auto b = unit_bank();
  const float q[] = {1, 0}, bad[] = {1, 0, 0};
  EXPECT_THROW(dense_topk(b, 0, q, 0), ArgumentError);
  EXPECT_THROW(dense_topk(b, 0, q, -3), ArgumentError);
  EXPECT_THROW(dense_topk(b, 1, q, 1), ArgumentError);
  EXPECT_THROW(dense_topk(b, 0, bad, 1), ArgumentError);
}

TEST(Dense, MatchesBruteForceForAllK) {
  auto bank = testing::random_bank(2, 300, 16, 5);
  for (std::uint64_t q = 0; q < 4; ++q) {
    auto qm = testing::random_matrix(1, 16, 70 + q);
    std::vector<float> qv(16);
    for (int d = 0; d < 16; ++d) qv[static_cast<std::size_t>(d)] = static_cast<float>(qm(0, d));
    const IdSet exclude = {bank.item_ids()[q], bank.item_ids()[q + 10]};
    auto full = testing::brute_force_rank(bank, 1, qv, exclude);
    for (std::int64_t k : {1, 2, 7, 50, 298, 400}) {
      auto got = dense_topk(bank, 1, qv, k, exclude);
      ASSERT_EQ(got.size(), std::min<std::size_t>(static_cast<std::size_t>(k), full.size()));
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].id, full[i].id);
        EXPECT_NEAR(got[i].score, full[i].score, 1e-6);
      }
    }
  }
}

TEST(RankedList, TopKUsesTotalOrder) {
  std::vector<RankedEntry> c = {{"b", 1.0}, {"a", 1.0}, {"c", 2.0}, {"d", 0.5}};
  auto r = top_k(c, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "c");
  EXPECT_EQ(r[1].id, "a");
  EXPECT_EQ(r[2].id, "b");
  auto back = ranked_from_json(ranked_to_json(r));
  EXPECT_EQ(back[1].id, "a");
  EXPECT_EQ(back[0].score, 2.0);
}

TEST(Random, SeededWithoutRepetition) {
  auto ids = testing::numbered_ids("x", 50);
  auto a = random_select(ids, 20, 4, {"x00003"});
  auto b = random_select(ids, 20, 4, {"x00003"});
  ASSERT_EQ(a.size(), 20u);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_NE(a[i].id, "x00003");
    seen.insert(a[i].id);
    if (i) EXPECT_GT(a[i - 1].score, a[i].score);
  }
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(random_select(ids, 200, 1).size(), 50u);
}

}  // namespace
}  // namespace icl
