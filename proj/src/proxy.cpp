#include "icl/proxy.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <random>

#include "icl/error.hpp"
#include "icl/parallel.hpp"
#include "icl/prompt.hpp"
#include "icl/text.hpp"

namespace icl {

double token_f1(std::string_view a, std::string_view b) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string_view, std::size_t> counts;
  for (const auto& t : ta) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(ta.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(tb.size());
  return 2.0 * precision * recall / (precision + recall);
}

double output_similarity(const DemonstrationRecord& a, std::string_view b_output, TaskKind task_kind) {
  if (task_kind == TaskKind::kClassification) {
    const std::string_view mine = a.label ? std::string_view(*a.label) : std::string_view(a.output);
    return normalize_answer(mine) == normalize_answer(b_output) ? 1.0 : 0.0;
  }
  return token_f1(a.output, b_output);
}

double TokenF1Oracle::score(const DemonstrationRecord& candidate, std::string_view,
                            std::string_view gold_output) const {
  return token_f1(candidate.output, gold_output);
}

LlmScoringOracle::LlmScoringOracle(std::shared_ptr<const LlmClient> client, std::size_t max_tokens)
    : client_(std::move(client)), max_tokens_(max_tokens) {
  if (!client_) throw ArgumentError("LlmScoringOracle needs a client");
}

double LlmScoringOracle::score(const DemonstrationRecord& candidate, std::string_view test_input,
                               std::string_view gold_output) const {
  const PromptTemplate tmpl;
  const std::string prompt = tmpl.render_exemplar(candidate.input, candidate.output) + tmpl.joiner +
                             tmpl.render_query(test_input);
  const auto completion = client_->complete(prompt, max_tokens_, std::string("\n"));
  return token_f1(completion, gold_output);
}

CandidateSource parse_candidate_source(std::string_view text) {
  if (text == "bm25") return CandidateSource::kBm25;
  if (text == "dense") return CandidateSource::kDense;
  throw ArgumentError("unknown candidate source \"" + std::string(text) + "\"");
}

CandidateRetriever bm25_candidates(const Bm25Index& index) {
  return [&index](const DemonstrationRecord& anchor, std::size_t k) {
    return bm25_query(index, anchor.input, k, {anchor.id});
  };
}

CandidateRetriever dense_candidates(const EmbeddingBank& bank, std::size_t layer) {
  return [&bank, layer](const DemonstrationRecord& anchor, std::size_t k) {
    return dense_topk(bank, layer, bank.vector(layer, anchor.id), static_cast<std::int64_t>(k), {anchor.id});
  };
}

ProxyBuildResult build_proxy_pairs(const Corpus& corpus, const CandidateRetriever& candidates,
                                   const ScoringOracle& oracle, const ProxyConfig& config) {
  if (config.m_candidates < 2) throw ArgumentError("proxy: m_candidates must be >= 2");
  if (corpus.size() <= config.m_candidates) {
    throw ArgumentError("proxy: corpus of " + std::to_string(corpus.size()) + " records cannot supply " +
                        std::to_string(config.m_candidates) + " candidates per anchor");
  }
  const std::int64_t n_anchors = static_cast<std::int64_t>(std::min(config.max_anchors, corpus.size()));
  const auto anchors = sample_indices(corpus.size(), std::span<const std::int64_t>(&n_anchors, 1), config.seed)
                           .subsets.front();

  std::vector<std::optional<ProxyPair>> slots(anchors.size());
  std::vector<std::string> errors(anchors.size());
  parallel_for(anchors.size(), config.jobs, [&](std::size_t a) {
    const auto& anchor = corpus.records()[anchors[a]];
    try {
      auto cands = candidates(anchor, config.m_candidates);
      if (cands.size() < 2) throw DataError("fewer than 2 candidates");
      std::vector<RankedEntry> scored;
      scored.reserve(cands.size());
      for (const auto& c : cands) scored.push_back({c.id, oracle.score(corpus.at(c.id), anchor.input, anchor.output)});
      // Highest score, ties to the lower id.
      auto pos = std::min_element(scored.begin(), scored.end(), ranks_before);
      ProxyPair pair;
      pair.anchor_id = anchor.id;
      pair.positive_id = pos->id;
      pair.positive_score = pos->score;
      const RankedEntry* neg = nullptr;
      for (const auto& s : scored) {
        if (&s == &*pos) continue;
        if (!neg || s.score < neg->score || (s.score == neg->score && s.id < neg->id)) neg = &s;
      }
      pair.negative_id = neg->id;
      pair.negative_score = neg->score;
      slots[a] = std::move(pair);
    } catch (const std::exception& e) {
      errors[a] = "anchor \"" + anchor.id + "\": " + e.what();
    }
  });

  ProxyBuildResult result;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (slots[a]) {
      result.pairs.push_back(std::move(*slots[a]));
    } else {
      ++result.skipped_anchors;
      result.failures.push_back(std::move(errors[a]));
    }
  }
  return result;
}

ProxyBuildResult build_proxy_pairs(const Corpus& corpus, const Bm25Index& bm25, const ScoringOracle& oracle,
                                   const ProxyConfig& config) {
  return build_proxy_pairs(corpus, bm25_candidates(bm25), oracle, config);
}

SimilarityReport pair_similarity_report(const std::vector<ProxyPair>& pairs, const Corpus& corpus,
                                        TaskKind task_kind) {
  if (pairs.empty()) throw ArgumentError("pair_similarity_report: no pairs");
  SimilarityReport r;
  r.n_pairs = pairs.size();
  auto other_output = [&](const DemonstrationRecord& rec) -> std::string_view {
    if (task_kind == TaskKind::kClassification && rec.label) return *rec.label;
    return rec.output;
  };
  for (const auto& p : pairs) {
    const auto& anchor = corpus.at(p.anchor_id);
    const auto& pos = corpus.at(p.positive_id);
    const auto& neg = corpus.at(p.negative_id);
    r.positive_input += token_f1(anchor.input, pos.input);
    r.negative_input += token_f1(anchor.input, neg.input);
    r.positive_output += output_similarity(anchor, other_output(pos), task_kind);
    r.negative_output += output_similarity(anchor, other_output(neg), task_kind);
  }
  const auto n = static_cast<double>(pairs.size());
  r.positive_input /= n;
  r.negative_input /= n;
  r.positive_output /= n;
  r.negative_output /= n;
  return r;
}

nlohmann::json report_to_json(const SimilarityReport& r) {
  nlohmann::ordered_json j;
  j["n_pairs"] = r.n_pairs;
  j["positive_input_similarity"] = r.positive_input;
  j["negative_input_similarity"] = r.negative_input;
  j["input_gap"] = r.input_gap();
  j["positive_output_similarity"] = r.positive_output;
  j["negative_output_similarity"] = r.negative_output;
  j["output_gap"] = r.output_gap();
  return j;
}

double retrieval_output_similarity(const RankedList& ranked, const DemonstrationRecord& test, const Corpus& corpus,
                                   std::size_t k) {
  if (k == 0) throw ArgumentError("retrieval_output_similarity: k must be >= 1");
  if (k > ranked.size()) throw ArgumentError("retrieval_output_similarity: k exceeds the ranking length");
  const auto kind = corpus.task_kind();
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& ex = corpus.at(ranked[i].id);
    const std::string_view theirs = kind == TaskKind::kClassification && ex.label ? *ex.label : ex.output;
    total += output_similarity(test, theirs, kind);
  }
  return total / static_cast<double>(k);
}

nlohmann::json pair_to_json(const ProxyPair& p) {
  nlohmann::ordered_json j;
  j["anchor"] = p.anchor_id;
  j["positive"] = p.positive_id;
  j["negative"] = p.negative_id;
  j["pos_score"] = p.positive_score;
  j["neg_score"] = p.negative_score;
  return j;
}

ProxyPair pair_from_json(const nlohmann::json& j) {
  try {
    ProxyPair p;
    p.anchor_id = j.at("anchor").get<std::string>();
    p.positive_id = j.at("positive").get<std::string>();
    p.negative_id = j.at("negative").get<std::string>();
    p.positive_score = j.value("pos_score", 0.0);
    p.negative_score = j.value("neg_score", 0.0);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed proxy pair: ") + e.what());
  }
}

void write_pairs(const std::vector<ProxyPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write pairs file " + path.string());
  for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
  if (!out) throw DataError("I/O failure writing " + path.string());
}

std::vector<ProxyPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pairs file " + path.string());
  std::vector<ProxyPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      pairs.push_back(pair_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("pairs line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("pairs line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace icl
