#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "icl/corpus.hpp"
#include "icl/embedding_bank.hpp"
#include "icl/text.hpp"

namespace icl {

using IdSet = std::unordered_set<std::string>;

struct RankedEntry {
  std::string id;
  double score = 0.0;
};

/// Ranking in descending score order; equal scores ordered by ascending id.
using RankedList = std::vector<RankedEntry>;

/// Total order used by every ranking in the library.
inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

/// Keeps the k best entries of `candidates` under ranks_before.
RankedList top_k(std::vector<RankedEntry> candidates, std::size_t k);

nlohmann::json ranked_to_json(const RankedList& ranked);
RankedList ranked_from_json(const nlohmann::json& array);

enum class TextField { kInput, kOutput };
TextField parse_text_field(std::string_view text);

/// Okapi BM25 over one text field of a corpus.
struct Bm25Index {
  std::vector<std::string> doc_ids;
  std::vector<std::unordered_map<std::string, std::uint32_t>> doc_term_freqs;
  std::vector<std::uint32_t> doc_lens;
  std::unordered_map<std::string, std::uint32_t> df;
  double avgdl = 0.0;
  double k1 = 1.5;
  double b = 0.75;

  std::size_t size() const noexcept { return doc_ids.size(); }
  /// ln((N - df + 0.5) / (df + 0.5) + 1); never negative.
  double idf(const std::string& term) const;
  /// Summed per-term score of one document, counting repeated query terms each time.
  double score(std::size_t doc, const std::vector<std::string>& query_terms) const;
};

Bm25Index bm25_build(const Corpus& corpus, TextField field = TextField::kInput, double k1 = 1.5, double b = 0.75);

/// Top-k documents by BM25 score; zero-score documents fill the tail in id order.
/// Ids in `exclude` never appear.
RankedList bm25_query(const Bm25Index& index, std::string_view query, std::size_t k, const IdSet& exclude = {});

nlohmann::json bm25_to_json(const Bm25Index& index);
Bm25Index bm25_from_json(const nlohmann::json& j);

/// Exact cosine top-k over one bank layer.
RankedList dense_topk(const EmbeddingBank& bank, std::size_t layer, std::span<const float> query_vec, std::int64_t k,
                      const IdSet& exclude = {});

/// Seeded selection of k distinct items without repetition. Scores are
/// (k - rank) / k so the draw order is the ranking order.
RankedList random_select(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed,
                         const IdSet& exclude = {});

}  // namespace icl
