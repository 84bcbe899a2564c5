#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "icl/corpus.hpp"
#include "icl/embedding_bank.hpp"
#include "icl/retrieval.hpp"

namespace icl {

class LlmClient;

/// Multiset-overlap F1 over tokenize() outputs. Both empty -> 1, one empty -> 0.
double token_f1(std::string_view a, std::string_view b);

/// Lowercased, trimmed label comparison for classification; token F1 of outputs otherwise.
double output_similarity(const DemonstrationRecord& a, std::string_view b_output, TaskKind task_kind);

/// Scores how useful `candidate` is as a demonstration for (test_input -> gold_output).
/// Higher is better. Implementations must be deterministic for identical
/// arguments and safe to call concurrently.
class ScoringOracle {
 public:
  virtual ~ScoringOracle() = default;
  virtual double score(const DemonstrationRecord& candidate, std::string_view test_input,
                       std::string_view gold_output) const = 0;
};

/// token_f1(candidate.output, gold_output); needs no model.
class TokenF1Oracle final : public ScoringOracle {
 public:
  double score(const DemonstrationRecord& candidate, std::string_view test_input,
               std::string_view gold_output) const override;
};

/// Prompts an LLM with the candidate as a one-shot demonstration and scores
/// the completion by token F1 against the gold output.
class LlmScoringOracle final : public ScoringOracle {
 public:
  LlmScoringOracle(std::shared_ptr<const LlmClient> client, std::size_t max_tokens = 64);
  double score(const DemonstrationRecord& candidate, std::string_view test_input,
               std::string_view gold_output) const override;

 private:
  std::shared_ptr<const LlmClient> client_;
  std::size_t max_tokens_;
};

struct ProxyPair {
  std::string anchor_id;
  std::string positive_id;
  std::string negative_id;
  double positive_score = 0.0;
  double negative_score = 0.0;
};

enum class CandidateSource { kBm25, kDense };
CandidateSource parse_candidate_source(std::string_view text);

struct ProxyConfig {
  std::size_t max_anchors = 4000;
  std::size_t m_candidates = 50;
  CandidateSource candidate_source = CandidateSource::kBm25;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Returns up to k candidate exemplars for an anchor, never the anchor itself.
using CandidateRetriever = std::function<RankedList(const DemonstrationRecord& anchor, std::size_t k)>;

CandidateRetriever bm25_candidates(const Bm25Index& index);
CandidateRetriever dense_candidates(const EmbeddingBank& bank, std::size_t layer);

struct ProxyBuildResult {
  std::vector<ProxyPair> pairs;
  /// Anchors dropped because the oracle failed on one of their candidates.
  std::size_t skipped_anchors = 0;
  std::vector<std::string> failures;
};

/// For each seeded anchor: score m candidates with the oracle, keep the best as
/// positive and the worst of the rest as negative (ties to the lower id).
/// Output order follows anchor order regardless of config.jobs.
ProxyBuildResult build_proxy_pairs(const Corpus& corpus, const CandidateRetriever& candidates,
                                   const ScoringOracle& oracle, const ProxyConfig& config);
ProxyBuildResult build_proxy_pairs(const Corpus& corpus, const Bm25Index& bm25, const ScoringOracle& oracle,
                                   const ProxyConfig& config);

struct SimilarityReport {
  std::size_t n_pairs = 0;
  double positive_input = 0.0;
  double negative_input = 0.0;
  double positive_output = 0.0;
  double negative_output = 0.0;
  double input_gap() const { return positive_input - negative_input; }
  double output_gap() const { return positive_output - negative_output; }
};

SimilarityReport pair_similarity_report(const std::vector<ProxyPair>& pairs, const Corpus& corpus,
                                        TaskKind task_kind);
nlohmann::json report_to_json(const SimilarityReport& r);

/// Mean output similarity of the top-k retrieved exemplars against the test record.
double retrieval_output_similarity(const RankedList& ranked, const DemonstrationRecord& test, const Corpus& corpus,
                                   std::size_t k);

nlohmann::json pair_to_json(const ProxyPair& p);
ProxyPair pair_from_json(const nlohmann::json& j);
void write_pairs(const std::vector<ProxyPair>& pairs, const std::filesystem::path& path);
std::vector<ProxyPair> read_pairs(const std::filesystem::path& path);

}  // namespace icl
