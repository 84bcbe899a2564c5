#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "icl/corpus.hpp"
#include "icl/error.hpp"

namespace icl {
namespace {

using testing::TempDir;

TEST(Corpus, ParsesOneClassificationLine) {
  auto c = parse_corpus(R"({"id":"a","input":"hi","output":"yes","label":"yes"})", TaskKind::kClassification);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at("a").label, "yes");
  EXPECT_EQ(c.at("a").task_kind, TaskKind::kClassification);
}

TEST(Corpus, EmptyFileIsAnError) {
  try {
    parse_corpus("", TaskKind::kGeneration);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(Corpus, DuplicateIdIsNamed) {
  const std::string text = R"({"id":"a","input":"x","output":"y"}
{"id":"a","input":"z","output":"w"})";
  try {
    parse_corpus(text, TaskKind::kGeneration);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("\"a\""), std::string::npos) << e.what();
  }
}

TEST(Corpus, MalformedLineReportsLineNumber) {
  const std::string text = "{\"id\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{not json\n";
  try {
    parse_corpus(text, TaskKind::kGeneration);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Corpus, ClassificationNeedsLabel) {
  EXPECT_THROW(parse_corpus(R"({"id":"a","input":"x","output":"y"})", TaskKind::kClassification), DataError);
}

TEST(Corpus, BlankInputRejected) {
  EXPECT_THROW(parse_corpus(R"({"id":"a","input":"  \t","output":"y"})", TaskKind::kGeneration), DataError);
}

TEST(Corpus, NumericLabelsBecomeStrings) {
  auto c = parse_corpus(R"({"id":"a","input":"x","output":"1","label":1})", TaskKind::kClassification);
  EXPECT_EQ(c.at("a").label, "1");
}

TEST(Corpus, UnknownIdThrows) {
  auto c = testing::toy_bm25_corpus();
  EXPECT_TRUE(c.contains("d2"));
  EXPECT_FALSE(c.contains("d9"));
  EXPECT_THROW(c.at("d9"), DataError);
  EXPECT_EQ(c.index_of("d3"), 2u);
}

TEST(Corpus, RoundTripKeepsOrderAndFields) {
  const std::string text =
      R"({"id":"b","input":"second","output":"2","label":"two","meta":{"src":"x"}}
{"id":"a","input":"first","output":"1","label":"one"})";
  auto c = parse_corpus(text, TaskKind::kClassification, "t");
  TempDir dir;
  write_corpus(c, dir / "t.jsonl");
  auto back = load_corpus(dir / "t.jsonl", TaskKind::kClassification);
  EXPECT_EQ(back.task_name(), "t");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.records()[i].id, c.records()[i].id);
    EXPECT_EQ(back.records()[i].input, c.records()[i].input);
    EXPECT_EQ(back.records()[i].output, c.records()[i].output);
    EXPECT_EQ(back.records()[i].label, c.records()[i].label);
    EXPECT_EQ(back.records()[i].meta, c.records()[i].meta);
  }
  EXPECT_EQ(serialize_corpus(back), serialize_corpus(c));
}

Corpus corpus_of(std::size_t n) {
  std::vector<DemonstrationRecord> r;
  for (std::size_t i = 0; i < n; ++i) r.push_back({"r" + std::to_string(i), "in", "out", std::nullopt, TaskKind::kGeneration, {}});
  return Corpus(std::move(r), "c", TaskKind::kGeneration);
}

TEST(SampleSplit, SizesAndDisjointness) {
  const std::int64_t sizes[] = {3, 2};
  auto s = sample_split(corpus_of(10), sizes, 7);
  ASSERT_EQ(s.subsets.size(), 2u);
  EXPECT_EQ(s.subsets[0].size(), 3u);
  EXPECT_EQ(s.subsets[1].size(), 2u);
  EXPECT_FALSE(s.shrunk);
  std::set<std::string> all(s.subsets[0].begin(), s.subsets[0].end());
  all.insert(s.subsets[1].begin(), s.subsets[1].end());
  EXPECT_EQ(all.size(), 5u);
}

TEST(SampleSplit, ShrinksLastSubset) {
  const std::int64_t sizes[] = {3, 2};
  auto s = sample_split(corpus_of(4), sizes, 7);
  EXPECT_EQ(s.subsets[0].size(), 3u);
  EXPECT_EQ(s.subsets[1].size(), 1u);
  EXPECT_TRUE(s.shrunk);
}

TEST(SampleSplit, DeterministicForSeed) {
  const std::int64_t sizes[] = {4, 4, 1};
  auto c = corpus_of(30);
  EXPECT_EQ(sample_split(c, sizes, 99).subsets, sample_split(c, sizes, 99).subsets);
  EXPECT_NE(sample_split(c, sizes, 99).subsets, sample_split(c, sizes, 100).subsets);
}

TEST(SampleSplit, NegativeSizeRejected) {
  const std::int64_t sizes[] = {3, -1};
  EXPECT_THROW(sample_split(corpus_of(10), sizes, 1), ArgumentError);
}

TEST(SampleSplit, EveryIdResolves) {
  auto c = corpus_of(50);
  const std::int64_t sizes[] = {20, 20, 20};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& subset : sample_split(c, sizes, seed).subsets)
      for (const auto& id : subset) EXPECT_TRUE(c.contains(id));
  }
}

}  // namespace
}  // namespace icl
