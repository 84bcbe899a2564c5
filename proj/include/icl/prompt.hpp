#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "icl/corpus.hpp"
#include "icl/retrieval.hpp"

namespace icl {

/// Rendering rules for demonstrations and the query.
struct PromptTemplate {
  std::string exemplar_pattern = "Input: {input}\nOutput: {output}";
  std::string query_pattern = "Input: {input}\nOutput:";
  std::string joiner = "\n\n";

  /// exemplar_pattern must hold {input} and {output} exactly once each,
  /// query_pattern {input} exactly once. Throws ArgumentError otherwise.
  void validate() const;
  std::string render_exemplar(std::string_view input, std::string_view output) const;
  std::string render_query(std::string_view input) const;
};

PromptTemplate template_from_json(const nlohmann::json& j);
nlohmann::json template_to_json(const PromptTemplate& t);
PromptTemplate load_template(const std::filesystem::path& path);

inline constexpr std::size_t kMaxShots = 20;
inline constexpr std::size_t kDefaultCharBudget = 8000;

struct PromptBundle {
  std::string prompt_text;
  /// Prompt order: least similar first, most similar adjacent to the query.
  std::vector<std::string> exemplar_ids;
  std::vector<double> exemplar_scores;
  std::string test_id;
  std::size_t shots = 0;
};

nlohmann::json bundle_to_json(const PromptBundle& b);
PromptBundle bundle_from_json(const nlohmann::json& j);

/// Builds a k-shot prompt from a descending ranking. If the text exceeds
/// char_budget code points, the least similar exemplars are dropped first.
PromptBundle assemble_prompt(const RankedList& ranked, const Corpus& corpus, const DemonstrationRecord& test,
                             const PromptTemplate& tmpl, std::size_t shots,
                             std::size_t char_budget = kDefaultCharBudget, std::size_t max_shots = kMaxShots);

/// True when the exemplar scores never decrease in prompt order and the shot cap holds.
bool satisfies_prompt_invariants(const PromptBundle& b, std::size_t max_shots = kMaxShots);

/// Trim, casefold, collapse whitespace runs, strip trailing periods.
std::string normalize_answer(std::string_view text);

/// Text-completion backend. Implementations must be safe to call concurrently.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Throws ClientError on failure.
  virtual std::string complete(const std::string& prompt, std::size_t max_tokens,
                               const std::optional<std::string>& stop) const = 0;
};

enum class MockRule { kEchoGold, kLastExemplarLabel, kConstant };

/// Deterministic stand-in clients:
///  - echo_gold answers with the gold output of the test case whose rendered
///    query ends the prompt;
///  - last_exemplar_label copies the output of the demonstration nearest the query;
///  - constant always answers `constant`.
std::shared_ptr<LlmClient> mock_llm(MockRule rule, const Corpus& corpus, const PromptTemplate& tmpl = {},
                                    std::string constant = {});

enum class Metric { kAccuracy, kExactMatch };
Metric parse_metric(std::string_view text);

struct EvalRow {
  std::string test_id;
  std::string prediction;
  std::string gold;
  bool correct = false;
  std::optional<std::string> error;
};

struct EvalReport {
  Metric metric = Metric::kAccuracy;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t errored = 0;
  /// correct / (n - errored); 0 when every case errored.
  double score = 0.0;
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  std::size_t max_tokens = 64;
  std::optional<std::string> stop = std::string("\n");
  std::size_t jobs = 1;
};

/// Scores each bundle's completion against the gold output of its test record
/// (normalized string equality). Rows follow bundle order.
EvalReport evaluate(const LlmClient& client, const std::vector<PromptBundle>& bundles, const Corpus& corpus,
                    Metric metric, const EvalOptions& options = {});

nlohmann::json eval_report_to_json(const EvalReport& r);

}  // namespace icl
