#include "icl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icl/error.hpp"

namespace icl {

RankedList top_k(std::vector<RankedEntry> candidates, std::size_t k) {
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                    ranks_before);
  candidates.resize(k);
  return candidates;
}

nlohmann::json ranked_to_json(const RankedList& ranked) {
  auto arr = nlohmann::json::array();
  for (const auto& e : ranked) arr.push_back({{"id", e.id}, {"score", e.score}});
  return arr;
}

RankedList ranked_from_json(const nlohmann::json& array) {
  RankedList out;
  for (const auto& e : array) out.push_back({e.at("id").get<std::string>(), e.at("score").get<double>()});
  return out;
}

TextField parse_text_field(std::string_view text) {
  if (text == "input") return TextField::kInput;
  if (text == "output") return TextField::kOutput;
  throw ArgumentError("unknown text field \"" + std::string(text) + "\"");
}

double Bm25Index::idf(const std::string& term) const {
  auto it = df.find(term);
  const double n_t = it == df.end() ? 0.0 : it->second;
  const double n = static_cast<double>(doc_ids.size());
  return std::log((n - n_t + 0.5) / (n_t + 0.5) + 1.0);
}

double Bm25Index::score(std::size_t doc, const std::vector<std::string>& query_terms) const {
  const auto& tf_map = doc_term_freqs[doc];
  const double norm = avgdl > 0.0 ? k1 * (1.0 - b + b * doc_lens[doc] / avgdl) : k1;
  double total = 0.0;
  for (const auto& term : query_terms) {
    auto it = tf_map.find(term);
    if (it == tf_map.end()) continue;
    const double tf = it->second;
    total += idf(term) * tf * (k1 + 1.0) / (tf + norm);
  }
  return total;
}

Bm25Index bm25_build(const Corpus& corpus, TextField field, double k1, double b) {
  if (corpus.empty()) throw DataError("cannot build a BM25 index over an empty corpus");
  Bm25Index index;
  index.k1 = k1;
  index.b = b;
  std::uint64_t total_len = 0;
  for (const auto& r : corpus.records()) {
    auto tokens = tokenize(field == TextField::kInput ? r.input : r.output);
    auto& tf = index.doc_term_freqs.emplace_back();
    for (auto& t : tokens) ++tf[t];
    for (const auto& [term, _] : tf) ++index.df[term];
    index.doc_ids.push_back(r.id);
    index.doc_lens.push_back(static_cast<std::uint32_t>(tokens.size()));
    total_len += tokens.size();
  }
  index.avgdl = static_cast<double>(total_len) / static_cast<double>(index.size());
  return index;
}

RankedList bm25_query(const Bm25Index& index, std::string_view query, std::size_t k, const IdSet& exclude) {
  if (k < 1) throw ArgumentError("bm25_query: k must be >= 1");
  const auto terms = tokenize(query);
  std::vector<RankedEntry> all;
  all.reserve(index.size());
  for (std::size_t d = 0; d < index.size(); ++d) {
    if (exclude.count(index.doc_ids[d])) continue;
    all.push_back({index.doc_ids[d], index.score(d, terms)});
  }
  return top_k(std::move(all), k);
}

nlohmann::json bm25_to_json(const Bm25Index& index) {
  nlohmann::json j;
  j["k1"] = index.k1;
  j["b"] = index.b;
  j["avgdl"] = index.avgdl;
  j["doc_ids"] = index.doc_ids;
  j["doc_lens"] = index.doc_lens;
  auto tfs = nlohmann::json::array();
  for (const auto& m : index.doc_term_freqs) tfs.push_back(m);
  j["doc_term_freqs"] = std::move(tfs);
  j["df"] = index.df;
  return j;
}

Bm25Index bm25_from_json(const nlohmann::json& j) {
  try {
    Bm25Index index;
    index.k1 = j.at("k1").get<double>();
    index.b = j.at("b").get<double>();
    index.avgdl = j.at("avgdl").get<double>();
    index.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
    index.doc_lens = j.at("doc_lens").get<std::vector<std::uint32_t>>();
    for (const auto& m : j.at("doc_term_freqs")) {
      index.doc_term_freqs.push_back(m.get<std::unordered_map<std::string, std::uint32_t>>());
    }
    index.df = j.at("df").get<std::unordered_map<std::string, std::uint32_t>>();
    if (index.doc_lens.size() != index.size() || index.doc_term_freqs.size() != index.size()) {
      throw DataError("BM25 index arrays have inconsistent lengths");
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed BM25 index: ") + e.what());
  }
}

RankedList dense_topk(const EmbeddingBank& bank, std::size_t layer, std::span<const float> query_vec, std::int64_t k,
                      const IdSet& exclude) {
  if (k <= 0) throw ArgumentError("dense_topk: k must be >= 1");
  if (query_vec.size() != bank.dim()) {
    throw ArgumentError("dense_topk: query has dim " + std::to_string(query_vec.size()) + ", bank has " +
                        std::to_string(bank.dim()));
  }
  const auto view = bank.layer(layer);
  std::vector<RankedEntry> all;
  all.reserve(view.rows());
  for (std::size_t i = 0; i < view.rows(); ++i) {
    const auto& id = bank.item_ids()[i];
    if (exclude.count(id)) continue;
    all.push_back({id, cosine(query_vec, view.row(i))});
  }
  return top_k(std::move(all), static_cast<std::size_t>(k));
}

RankedList random_select(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed,
                         const IdSet& exclude) {
  std::vector<std::string> pool;
  pool.reserve(ids.size());
  for (const auto& id : ids) {
    if (!exclude.count(id)) pool.push_back(id);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(k, pool.size()));
  // Rank-based scores keep the list strictly descending in draw order.
  RankedList out;
  const double n = static_cast<double>(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) out.push_back({std::move(pool[i]), (n - static_cast<double>(i)) / n});
  return out;
}

}  // namespace icl
