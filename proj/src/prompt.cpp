#include "icl/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "icl/error.hpp"
#include "icl/parallel.hpp"
#include "icl/text.hpp"

namespace icl {
namespace {

std::size_t count_of(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

/// Substitutes each slot once, in pattern order, without rescanning inserted text.
std::string render(std::string_view pattern, std::string_view input, std::optional<std::string_view> output) {
  std::string out;
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    const auto in_at = pattern.find("{input}", pos);
    const auto out_at = output ? pattern.find("{output}", pos) : std::string_view::npos;
    const auto next = std::min(in_at, out_at);
    if (next == std::string_view::npos) {
      out.append(pattern.substr(pos));
      break;
    }
    out.append(pattern.substr(pos, next - pos));
    if (next == in_at) {
      out.append(input);
      pos = next + 7;
    } else {
      out.append(*output);
      pos = next + 8;
    }
  }
  return out;
}

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

void PromptTemplate::validate() const {
  if (count_of(exemplar_pattern, "{input}") != 1 || count_of(exemplar_pattern, "{output}") != 1) {
    throw ArgumentError("exemplar_pattern must contain {input} and {output} exactly once each");
  }
  if (count_of(query_pattern, "{input}") != 1) throw ArgumentError("query_pattern must contain {input} exactly once");
}

std::string PromptTemplate::render_exemplar(std::string_view input, std::string_view output) const {
  return render(exemplar_pattern, input, output);
}

std::string PromptTemplate::render_query(std::string_view input) const {
  return render(query_pattern, input, std::nullopt);
}

PromptTemplate template_from_json(const nlohmann::json& j) {
  PromptTemplate t;
  try {
    t.exemplar_pattern = j.value("exemplar_pattern", t.exemplar_pattern);
    t.query_pattern = j.value("query_pattern", t.query_pattern);
    t.joiner = j.value("joiner", t.joiner);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed template: ") + e.what());
  }
  t.validate();
  return t;
}

nlohmann::json template_to_json(const PromptTemplate& t) {
  return {{"exemplar_pattern", t.exemplar_pattern}, {"query_pattern", t.query_pattern}, {"joiner", t.joiner}};
}

PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open template file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed template: ") + e.what());
  }
  return template_from_json(j);
}

nlohmann::json bundle_to_json(const PromptBundle& b) {
  nlohmann::ordered_json j;
  j["test_id"] = b.test_id;
  j["shots"] = b.shots;
  j["exemplar_ids"] = b.exemplar_ids;
  j["exemplar_scores"] = b.exemplar_scores;
  j["prompt"] = b.prompt_text;
  return j;
}

PromptBundle bundle_from_json(const nlohmann::json& j) {
  try {
    PromptBundle b;
    b.test_id = j.at("test_id").get<std::string>();
    b.shots = j.at("shots").get<std::size_t>();
    b.exemplar_ids = j.at("exemplar_ids").get<std::vector<std::string>>();
    b.exemplar_scores = j.value("exemplar_scores", std::vector<double>{});
    b.prompt_text = j.at("prompt").get<std::string>();
    if (b.shots != b.exemplar_ids.size()) throw DataError("bundle shots does not match exemplar_ids");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prompt bundle: ") + e.what());
  }
}

PromptBundle assemble_prompt(const RankedList& ranked, const Corpus& corpus, const DemonstrationRecord& test,
                             const PromptTemplate& tmpl, std::size_t shots, std::size_t char_budget,
                             std::size_t max_shots) {
  tmpl.validate();
  if (shots > max_shots) {
    throw ArgumentError("requested " + std::to_string(shots) + " shots, the cap is " + std::to_string(max_shots));
  }
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    if (ranked[i].score > ranked[i - 1].score) throw ArgumentError("assemble_prompt: ranking is not descending");
  }

  // Most similar last: reverse the top-`shots` prefix.
  std::vector<const RankedEntry*> chosen;
  for (std::size_t i = 0; i < std::min(shots, ranked.size()); ++i) chosen.push_back(&ranked[i]);
  std::reverse(chosen.begin(), chosen.end());

  std::vector<std::string> blocks;
  for (const auto* e : chosen) {
    const auto& r = corpus.at(e->id);
    blocks.push_back(tmpl.render_exemplar(r.input, r.output));
  }
  const std::string query = tmpl.render_query(test.input);
  const std::size_t joiner_len = utf8_length(tmpl.joiner);

  std::size_t total = utf8_length(query);
  for (const auto& b : blocks) total += utf8_length(b) + joiner_len;
  std::size_t first = 0;
  while (first < blocks.size() && total > char_budget) {
    total -= utf8_length(blocks[first]) + joiner_len;
    ++first;
  }

  PromptBundle bundle;
  bundle.test_id = test.id;
  for (std::size_t i = first; i < blocks.size(); ++i) {
    bundle.prompt_text += blocks[i];
    bundle.prompt_text += tmpl.joiner;
    bundle.exemplar_ids.push_back(chosen[i]->id);
    bundle.exemplar_scores.push_back(chosen[i]->score);
  }
  bundle.prompt_text += query;
  bundle.shots = bundle.exemplar_ids.size();
  return bundle;
}

bool satisfies_prompt_invariants(const PromptBundle& b, std::size_t max_shots) {
  if (b.shots != b.exemplar_ids.size() || b.shots > max_shots) return false;
  return std::is_sorted(b.exemplar_scores.begin(), b.exemplar_scores.end());
}

std::string normalize_answer(std::string_view text) {
  const std::string folded = casefold(text);
  std::string out;
  bool pending_space = false;
  for (char c : folded) {
    if (is_ws(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  while (!out.empty() && (out.back() == '.' || is_ws(out.back()))) out.pop_back();
  return out;
}

namespace {

class MockLlm final : public LlmClient {
 public:
  MockLlm(MockRule rule, const Corpus& corpus, PromptTemplate tmpl, std::string constant)
      : rule_(rule), tmpl_(std::move(tmpl)), constant_(std::move(constant)) {
    tmpl_.validate();
    if (rule_ == MockRule::kEchoGold) {
      for (const auto& r : corpus.records()) queries_.emplace_back(tmpl_.render_query(r.input), r.output);
    }
    const auto& pat = tmpl_.exemplar_pattern;
    const auto out_at = pat.find("{output}");
    const auto in_at = pat.find("{input}");
    if (rule_ == MockRule::kLastExemplarLabel && out_at < in_at) {
      throw ArgumentError("mock last_exemplar_label needs {input} before {output} in exemplar_pattern");
    }
    before_output_ = pat.substr(in_at + 7, out_at - in_at - 7);
    after_output_ = pat.substr(out_at + 8);
    const auto q_at = tmpl_.query_pattern.find("{input}");
    query_prefix_ = tmpl_.query_pattern.substr(0, q_at);
    query_suffix_ = tmpl_.query_pattern.substr(q_at + 7);
  }

  std::string complete(const std::string& prompt, std::size_t, const std::optional<std::string>&) const override {
    switch (rule_) {
      case MockRule::kConstant:
        return constant_;
      case MockRule::kEchoGold:
        return echo_gold(prompt);
      case MockRule::kLastExemplarLabel:
        return last_exemplar_output(prompt);
    }
    return {};
  }

 private:
  std::string echo_gold(const std::string& prompt) const {
    const std::pair<std::string, std::string>* best = nullptr;
    for (const auto& q : queries_) {
      if (prompt.size() >= q.first.size() && prompt.compare(prompt.size() - q.first.size(), q.first.size(), q.first) == 0) {
        if (!best || q.first.size() > best->first.size()) best = &q;
      }
    }
    if (!best) throw ClientError("mock echo_gold: prompt does not end with a known test query");
    return best->second;
  }

  std::string last_exemplar_output(const std::string& prompt) const {
    std::string_view p = prompt;
    const auto& j = tmpl_.joiner;
    if (j.empty()) throw ClientError("mock last_exemplar_label: template joiner is empty");
    for (auto pos = p.rfind(j); pos != std::string_view::npos; pos = pos == 0 ? std::string_view::npos : p.rfind(j, pos - 1)) {
      const auto tail = p.substr(pos + j.size());
      if (!tail.starts_with(query_prefix_) || !tail.ends_with(query_suffix_)) continue;
      auto head = p.substr(0, pos);
      if (!head.ends_with(after_output_)) continue;
      head.remove_suffix(after_output_.size());
      if (before_output_.empty()) break;
      const auto at = head.rfind(before_output_);
      if (at == std::string_view::npos) break;
      return std::string(head.substr(at + before_output_.size()));
    }
    throw ClientError("mock last_exemplar_label: cannot find a demonstration before the query");
  }

  MockRule rule_;
  PromptTemplate tmpl_;
  std::string constant_;
  std::vector<std::pair<std::string, std::string>> queries_;
  std::string before_output_;
  std::string after_output_;
  std::string query_prefix_;
  std::string query_suffix_;
};

}  // namespace

std::shared_ptr<LlmClient> mock_llm(MockRule rule, const Corpus& corpus, const PromptTemplate& tmpl,
                                    std::string constant) {
  return std::make_shared<MockLlm>(rule, corpus, tmpl, std::move(constant));
}

Metric parse_metric(std::string_view text) {
  if (text == "accuracy" || text == "acc") return Metric::kAccuracy;
  if (text == "em") return Metric::kExactMatch;
  throw ArgumentError("unknown metric \"" + std::string(text) + "\"");
}

EvalReport evaluate(const LlmClient& client, const std::vector<PromptBundle>& bundles, const Corpus& corpus,
                    Metric metric, const EvalOptions& options) {
  if (bundles.empty()) throw ArgumentError("evaluate: no prompt bundles");
  EvalReport report;
  report.metric = metric;
  report.n = bundles.size();
  report.rows.resize(bundles.size());
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    report.rows[i].test_id = bundles[i].test_id;
    report.rows[i].gold = corpus.at(bundles[i].test_id).output;
  }
  parallel_for(bundles.size(), options.jobs, [&](std::size_t i) {
    auto& row = report.rows[i];
    try {
      row.prediction = client.complete(bundles[i].prompt_text, options.max_tokens, options.stop);
      row.correct = normalize_answer(row.prediction) == normalize_answer(row.gold);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  for (const auto& row : report.rows) {
    if (row.error) {
      ++report.errored;
    } else if (row.correct) {
      ++report.correct;
    }
  }
  const auto scored = report.n - report.errored;
  report.score = scored == 0 ? 0.0 : static_cast<double>(report.correct) / static_cast<double>(scored);
  return report;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["metric"] = r.metric == Metric::kAccuracy ? "accuracy" : "em";
  j["n"] = r.n;
  j["correct"] = r.correct;
  j["errored"] = r.errored;
  j["score"] = r.score;
  auto rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json x;
    x["test_id"] = row.test_id;
    x["prediction"] = row.prediction;
    x["gold"] = row.gold;
    x["correct"] = row.correct;
    if (row.error) x["error"] = *row.error;
    rows.push_back(nlohmann::json(x));
  }
  j["rows"] = rows;
  return j;
}

}  // namespace icl
