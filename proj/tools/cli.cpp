#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "icl/cka.hpp"
#include "icl/corpus.hpp"
#include "icl/embedding_bank.hpp"
#include "icl/error.hpp"
#include "icl/http_client.hpp"
#include "icl/mlsm.hpp"
#include "icl/prompt.hpp"
#include "icl/proxy.hpp"
#include "icl/retrieval.hpp"
#include "icl/ttf.hpp"

namespace icl::cli {
namespace {

using nlohmann::json;

struct Options {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;

  std::string corpus;
  std::string test_corpus;
  std::string task_kind = "classification";
  std::string bank;
  std::string test_bank;
  std::string field = "input";

  // retrieve
  std::string method = "dense";
  std::int64_t k = 20;
  std::string query;
  std::vector<std::string> test_ids;
  std::optional<std::size_t> layer;
  std::vector<std::size_t> layers;
  std::string head;

  // cka / clustering
  std::size_t samples = 1000;
  std::size_t n_l = 3;
  std::size_t restarts = 10;
  std::string cka_report;
  std::string csv;
  bool normalized = false;

  // mlsm
  MlsmConfig mlsm;

  // ttf
  std::string head_kind = "linear";
  TtfTrainConfig ttf;

  // proxy
  std::string oracle = "mock";
  std::size_t m = 50;
  std::size_t max_anchors = 4000;
  std::string candidates = "bm25";
  std::string pairs;

  // diagnostics / prompts / evaluation
  std::string ranked;
  std::size_t shots = kMaxShots;
  std::string template_path;
  std::size_t char_budget = kDefaultCharBudget;
  std::string bundles;
  std::string client = "mock:echo_gold";
  std::string metric = "accuracy";
  std::size_t max_tokens = 64;
};

class Runner {
 public:
  Runner(const Options& o, std::ostream& out, std::ostream& err) : o_(o), out_(out), err_(err) {}

  void ingest();
  void index_bm25();
  void index_dense();
  void retrieve();
  void cka();
  void cluster();
  void layer_accuracy();
  void mlsm_fit();
  void ttf_train();
  void proxy_build();
  void diagnose_pairs();
  void diagnose_retrieval();
  void assemble();
  void evaluate_bundles();

 private:
  TaskKind kind() const { return parse_task_kind(o_.task_kind); }
  Corpus corpus() const { return require_path(o_.corpus, "--corpus"), load_corpus(o_.corpus, kind()); }
  Corpus test_corpus() const {
    return require_path(o_.test_corpus, "--test-corpus"), load_corpus(o_.test_corpus, kind());
  }
  EmbeddingBank bank() const { return require_path(o_.bank, "--bank"), read_bank(o_.bank); }

  static void require_path(const std::string& value, const char* flag) {
    if (value.empty()) throw ArgumentError(std::string(flag) + " is required for this command");
  }

  /// Writes one JSON document to --out or stdout.
  void emit(const json& j) const {
    if (o_.out.empty()) {
      out_ << j.dump(2) << '\n';
      return;
    }
    std::ofstream f(o_.out, std::ios::trunc);
    if (!f) throw DataError("cannot write " + o_.out);
    f << j.dump(2) << '\n';
  }

  /// Writes JSON lines to --out or stdout.
  void emit_lines(const std::vector<json>& lines) const {
    std::ofstream file;
    std::ostream* dst = &out_;
    if (!o_.out.empty()) {
      file.open(o_.out, std::ios::trunc);
      if (!file) throw DataError("cannot write " + o_.out);
      dst = &file;
    }
    for (const auto& l : lines) *dst << l.dump() << '\n';
  }

  std::vector<json> read_lines(const std::string& path) const {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<json> lines;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        lines.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw DataError(path + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    return lines;
  }

  std::size_t default_layer(const EmbeddingBank& b) const {
    if (o_.layer) return *o_.layer;
    if (b.n_layers() == 0) throw DataError("bank has no layers");
    return b.n_layers() - 1;
  }

  std::vector<std::size_t> expert_layers(const EmbeddingBank& b) const {
    if (!o_.layers.empty()) return o_.layers;
    auto ids = sample_cka_ids(b, o_.samples, o_.seed);
    auto s = layer_cka_matrix(b, ids, o_.jobs);
    auto sel = cluster_layers(s, std::min(o_.n_l, b.n_layers()), o_.seed, {.restarts = o_.restarts});
    err_ << "expert layers:";
    for (auto l : sel.layers) err_ << ' ' << l;
    err_ << '\n';
    return sel.layers;
  }

  /// Test cases to run: explicit ids, else every record of the test corpus.
  std::vector<std::string> test_ids(const Corpus& tests) const {
    if (!o_.test_ids.empty()) return o_.test_ids;
    std::vector<std::string> ids;
    for (const auto& r : tests.records()) ids.push_back(r.id);
    return ids;
  }

  std::vector<MlsmFit> fit_mlsm(const EmbeddingBank& demo, const EmbeddingBank& tests,
                                const std::vector<std::string>& ids, const std::vector<std::size_t>& layers) const;

  const Options& o_;
  std::ostream& out_;
  std::ostream& err_;
};

void Runner::ingest() {
  auto c = corpus();
  std::map<std::string, std::size_t> labels;
  for (const auto& r : c.records()) {
    if (r.label) ++labels[*r.label];
  }
  json j = {{"task_name", c.task_name()},
            {"task_kind", to_string(c.task_kind())},
            {"n_records", c.size()},
            {"label_counts", labels}};
  err_ << "corpus " << c.task_name() << ": " << c.size() << " records, " << labels.size() << " labels\n";
  emit(j);
}

void Runner::index_bm25() {
  auto c = corpus();
  auto index = bm25_build(c, parse_text_field(o_.field));
  err_ << "bm25 index: " << index.size() << " documents, " << index.df.size() << " terms, avgdl "
       << index.avgdl << '\n';
  emit(bm25_to_json(index));
}

void Runner::index_dense() {
  auto b = bank();
  json layers = json::array();
  for (std::size_t l = 0; l < b.n_layers(); ++l) {
    const auto view = b.layer(l);
    double total = 0.0;
    for (std::size_t i = 0; i < view.rows(); ++i) {
      double s = 0.0;
      for (float x : view.row(i)) s += static_cast<double>(x) * x;
      total += std::sqrt(s);
    }
    layers.push_back({{"layer", l}, {"mean_norm", view.rows() ? total / static_cast<double>(view.rows()) : 0.0}});
  }
  err_ << "dense bank: " << b.n_layers() << " layers x " << b.n_items() << " items x " << b.dim() << " dims\n";
  emit({{"n_layers", b.n_layers()},
        {"n_items", b.n_items()},
        {"dim", b.dim()},
        {"encoder_name", b.manifest().encoder_name},
        {"layers", layers}});
}

std::vector<MlsmFit> Runner::fit_mlsm(const EmbeddingBank& demo, const EmbeddingBank& tests,
                                      const std::vector<std::string>& ids,
                                      const std::vector<std::size_t>& layers) const {
  std::vector<MlsmFit> fits(ids.size());
  const auto batch = std::max<std::size_t>(1, o_.mlsm.batch_of_tests);
  for (std::size_t start = 0; start < ids.size(); start += batch) {
    const auto stop = std::min(ids.size(), start + batch);
    std::vector<LayerVectors> vecs;
    IdSet exclude;
    for (std::size_t i = start; i < stop; ++i) {
      vecs.push_back(layer_vectors(tests, layers, ids[i]));
      exclude.insert(ids[i]);
    }
    MlsmConfig cfg = o_.mlsm;
    cfg.seed = o_.seed + start;
    auto fit = fit_weights_batch(demo, layers, vecs, cfg, exclude);
    for (std::size_t i = start; i < stop; ++i) fits[i] = fit;
  }
  return fits;
}

void Runner::retrieve() {
  if (o_.k <= 0) throw ArgumentError("--k must be >= 1");
  const auto k = static_cast<std::size_t>(o_.k);
  auto demo = corpus();
  std::vector<json> lines;
  auto push = [&](const std::string& test_id, const RankedList& ranked) {
    lines.push_back({{"test_id", test_id}, {"method", o_.method}, {"ranked", ranked_to_json(ranked)}});
    err_ << test_id << ':';
    for (const auto& e : ranked) err_ << ' ' << e.id << '(' << e.score << ')';
    err_ << '\n';
  };

  if (o_.method == "bm25" && !o_.query.empty()) {
    auto index = bm25_build(demo, parse_text_field(o_.field));
    push("query", bm25_query(index, o_.query, k));
    emit_lines(lines);
    return;
  }

  auto tests = test_corpus();
  const auto ids = test_ids(tests);
  std::vector<std::string> demo_ids;
  for (const auto& r : demo.records()) demo_ids.push_back(r.id);

  if (o_.method == "random") {
    for (std::size_t i = 0; i < ids.size(); ++i) push(ids[i], random_select(demo_ids, k, o_.seed + i, {ids[i]}));
  } else if (o_.method == "bm25") {
    auto index = bm25_build(demo, parse_text_field(o_.field));
    for (const auto& id : ids) push(id, bm25_query(index, tests.at(id).input, k, {id}));
  } else if (o_.method == "dense" || o_.method == "mlsm" || o_.method == "ttf") {
    auto demo_bank = bank();
    std::optional<EmbeddingBank> own_test_bank;
    if (!o_.test_bank.empty()) own_test_bank = read_bank(o_.test_bank);
    const EmbeddingBank& test_bank = own_test_bank ? *own_test_bank : demo_bank;
    if (o_.method == "dense") {
      const auto layer = default_layer(demo_bank);
      for (const auto& id : ids) push(id, dense_topk(demo_bank, layer, test_bank.vector(layer, id), o_.k, {id}));
    } else if (o_.method == "mlsm") {
      const auto layers = expert_layers(demo_bank);
      const auto fits = fit_mlsm(demo_bank, test_bank, ids, layers);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        push(ids[i], mlsm_select(demo_bank, layers, fits[i].weights, layer_vectors(test_bank, layers, ids[i]), o_.k,
                                 {ids[i]}));
      }
    } else {
      require_path(o_.head, "--head");
      const auto head = load_head(o_.head);
      const auto layer = default_layer(demo_bank);
      for (const auto& id : ids) {
        push(id, ttf_retrieve(head, demo_bank, layer, test_bank.vector(layer, id), o_.k, {id}));
      }
    }
  } else {
    throw ArgumentError("unknown retrieval method \"" + o_.method + "\"");
  }
  emit_lines(lines);
}

void Runner::cka() {
  auto b = bank();
  auto ids = sample_cka_ids(b, o_.samples, o_.seed);
  auto m = layer_cka_matrix(b, ids, o_.jobs);
  auto shown = o_.normalized ? min_max_normalized(m) : m;
  if (!o_.csv.empty()) {
    std::ofstream f(o_.csv, std::ios::trunc);
    if (!f) throw DataError("cannot write " + o_.csv);
    f << cka_to_csv(shown);
  }
  err_ << "CKA over " << m.n_samples << " samples, " << m.n_layers() << " layers\n";
  emit(cka_to_json(shown));
}

void Runner::cluster() {
  CkaMatrix s;
  if (!o_.cka_report.empty()) {
    std::ifstream in(o_.cka_report);
    if (!in) throw DataError("cannot open " + o_.cka_report);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed CKA report: ") + e.what());
    }
    s = cka_from_json(j);
    if (s.normalized) throw DataError("clustering needs the raw (non-normalized) CKA matrix");
  } else {
    auto b = bank();
    s = layer_cka_matrix(b, sample_cka_ids(b, o_.samples, o_.seed), o_.jobs);
  }
  auto sel = cluster_layers(s, o_.n_l, o_.seed, {.restarts = o_.restarts});
  err_ << "selected layers:";
  for (auto l : sel.layers) err_ << ' ' << l;
  err_ << '\n';
  emit(selection_to_json(sel));
}

void Runner::layer_accuracy() {
  auto b = bank();
  require_path(o_.pairs, "--pairs");
  std::vector<QueryGold> qg;
  for (const auto& p : read_pairs(o_.pairs)) qg.push_back({p.anchor_id, p.positive_id});
  std::vector<std::size_t> layers;
  if (o_.layer) {
    layers.push_back(*o_.layer);
  } else {
    for (std::size_t l = 0; l < b.n_layers(); ++l) layers.push_back(l);
  }
  json acc = json::array();
  for (auto l : layers) {
    const double a = layer_retrieval_accuracy(b, qg, l, static_cast<std::size_t>(o_.k));
    acc.push_back({{"layer", l}, {"accuracy", a}});
    err_ << "layer " << l << ": top-" << o_.k << " accuracy " << a << '\n';
  }
  emit({{"k", o_.k}, {"n_pairs", qg.size()}, {"layers", acc}});
}

void Runner::mlsm_fit() {
  auto demo_bank = bank();
  std::optional<EmbeddingBank> own;
  if (!o_.test_bank.empty()) own = read_bank(o_.test_bank);
  const EmbeddingBank& test_bank = own ? *own : demo_bank;
  std::vector<std::string> ids = o_.test_ids;
  if (ids.empty()) {
    if (!o_.test_corpus.empty()) {
      ids = test_ids(test_corpus());
    } else {
      ids = test_bank.item_ids();
    }
  }
  const auto layers = expert_layers(demo_bank);
  const auto fits = fit_mlsm(demo_bank, test_bank, ids, layers);

  std::vector<json> lines;
  const auto n_l = layers.size();
  std::vector<double> mean(n_l, 0.0), sq(n_l, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    lines.push_back(weight_report_line(ids[i], fits[i]));
    for (std::size_t l = 0; l < n_l; ++l) {
      const double w = fits[i].weights.w[static_cast<Eigen::Index>(l)];
      mean[l] += w;
      sq[l] += w * w;
    }
  }
  for (std::size_t l = 0; l < n_l; ++l) {
    const double n = static_cast<double>(std::max<std::size_t>(1, ids.size()));
    const double m = mean[l] / n;
    err_ << "layer " << layers[l] << ": mean w " << m << ", std " << std::sqrt(std::max(0.0, sq[l] / n - m * m))
         << '\n';
  }
  emit_lines(lines);
}

void Runner::ttf_train() {
  if (kind() != TaskKind::kClassification) {
    throw ArgumentError("ttf-train supports classification tasks only; generation-task fine-tuning is not available");
  }
  auto c = corpus();
  auto b = bank();
  TtfTrainConfig cfg = o_.ttf;
  cfg.seed = o_.seed;
  auto result = train_head(b, default_layer(b), c, parse_head_kind(o_.head_kind), cfg);
  require_path(o_.head, "--head");
  save_head(result.head, o_.head);
  json trace = json::array();
  for (const auto& e : result.trace) {
    trace.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"holdout_loss", e.holdout_loss},
                     {"holdout_accuracy", e.holdout_accuracy}});
  }
  err_ << "trained " << o_.head_kind << " head: best epoch " << result.best_epoch << ", holdout accuracy "
       << result.holdout_accuracy << " -> " << o_.head << '\n';
  emit({{"head", o_.head},
        {"kind", o_.head_kind},
        {"layer", default_layer(b)},
        {"best_epoch", result.best_epoch},
        {"holdout_accuracy", result.holdout_accuracy},
        {"trace", trace}});
}

void Runner::proxy_build() {
  auto c = corpus();
  ProxyConfig cfg;
  cfg.max_anchors = o_.max_anchors;
  cfg.m_candidates = o_.m;
  cfg.candidate_source = parse_candidate_source(o_.candidates);
  cfg.seed = o_.seed;
  cfg.jobs = o_.jobs;

  std::unique_ptr<ScoringOracle> oracle;
  if (o_.oracle == "mock") {
    oracle = std::make_unique<TokenF1Oracle>();
  } else if (o_.oracle == "http") {
    oracle = std::make_unique<LlmScoringOracle>(http_client_from_env(), o_.max_tokens);
  } else {
    throw ArgumentError("unknown oracle \"" + o_.oracle + "\" (expected mock or http)");
  }

  ProxyBuildResult result;
  if (cfg.candidate_source == CandidateSource::kBm25) {
    auto index = bm25_build(c, parse_text_field(o_.field));
    result = build_proxy_pairs(c, index, *oracle, cfg);
  } else {
    auto b = bank();
    result = build_proxy_pairs(c, dense_candidates(b, default_layer(b)), *oracle, cfg);
  }
  for (const auto& f : result.failures) err_ << "skipped " << f << '\n';
  err_ << result.pairs.size() << " pairs, " << result.skipped_anchors << " anchors skipped\n";
  if (result.pairs.empty() && result.skipped_anchors > 0) throw ClientError("oracle failed on every anchor");
  std::vector<json> lines;
  for (const auto& p : result.pairs) lines.push_back(pair_to_json(p));
  emit_lines(lines);
}

void Runner::diagnose_pairs() {
  auto c = corpus();
  require_path(o_.pairs, "--pairs");
  auto report = pair_similarity_report(read_pairs(o_.pairs), c, c.task_kind());
  err_ << "positive vs negative: input " << report.positive_input << " / " << report.negative_input << ", output "
       << report.positive_output << " / " << report.negative_output << '\n';
  emit(report_to_json(report));
}

void Runner::diagnose_retrieval() {
  auto demo = corpus();
  auto tests = test_corpus();
  require_path(o_.ranked, "--ranked");
  json rows = json::array();
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& line : read_lines(o_.ranked)) {
    const auto id = line.at("test_id").get<std::string>();
    auto ranked = ranked_from_json(line.at("ranked"));
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(o_.k), ranked.size());
    const double s = retrieval_output_similarity(ranked, tests.at(id), demo, k);
    rows.push_back({{"test_id", id}, {"output_similarity", s}});
    total += s;
    ++n;
  }
  if (n == 0) throw DataError("ranked file is empty");
  err_ << "mean top-" << o_.k << " output similarity: " << total / static_cast<double>(n) << '\n';
  emit({{"k", o_.k}, {"n", n}, {"mean_output_similarity", total / static_cast<double>(n)}, {"rows", rows}});
}

void Runner::assemble() {
  auto demo = corpus();
  auto tests = test_corpus();
  require_path(o_.ranked, "--ranked");
  PromptTemplate tmpl = o_.template_path.empty() ? PromptTemplate{} : load_template(o_.template_path);
  std::vector<json> lines;
  for (const auto& line : read_lines(o_.ranked)) {
    const auto id = line.at("test_id").get<std::string>();
    auto bundle = assemble_prompt(ranked_from_json(line.at("ranked")), demo, tests.at(id), tmpl, o_.shots,
                                  o_.char_budget);
    lines.push_back(bundle_to_json(bundle));
  }
  err_ << lines.size() << " prompts assembled\n";
  emit_lines(lines);
}

void Runner::evaluate_bundles() {
  auto tests = test_corpus();
  require_path(o_.bundles, "--bundles");
  std::vector<PromptBundle> bundles;
  for (const auto& line : read_lines(o_.bundles)) bundles.push_back(bundle_from_json(line));
  PromptTemplate tmpl = o_.template_path.empty() ? PromptTemplate{} : load_template(o_.template_path);

  std::shared_ptr<LlmClient> client;
  if (o_.client == "mock:echo_gold") {
    client = mock_llm(MockRule::kEchoGold, tests, tmpl);
  } else if (o_.client == "mock:last_label") {
    client = mock_llm(MockRule::kLastExemplarLabel, tests, tmpl);
  } else if (o_.client.rfind("mock:constant=", 0) == 0) {
    client = mock_llm(MockRule::kConstant, tests, tmpl, o_.client.substr(14));
  } else if (o_.client == "http") {
    client = http_client_from_env();
  } else {
    throw ArgumentError("unknown client \"" + o_.client + "\"");
  }
  auto report = evaluate(*client, bundles, tests, parse_metric(o_.metric),
                         {.max_tokens = o_.max_tokens, .jobs = o_.jobs});
  err_ << o_.metric << ": " << report.score << " (" << report.correct << "/" << report.n - report.errored << ", "
       << report.errored << " errored)\n";
  emit(eval_report_to_json(report));
  if (report.errored == report.n) throw ClientError("every completion failed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Demonstration selection for in-context learning", "icl-select"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Maximum worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  auto corpus_opts = [&](CLI::App* c, bool with_bank) {
    c->add_option("--corpus", o.corpus, "Demonstration corpus (JSONL)");
    c->add_option("--task-kind", o.task_kind, "classification or generation")
        ->check(CLI::IsMember({"classification", "generation"}))
        ->capture_default_str();
    if (with_bank) c->add_option("--bank", o.bank, "Embedding bank (ELB1) for the demonstrations");
  };
  auto out_opt = [&](CLI::App* c) { c->add_option("--out", o.out, "Write the report here instead of stdout"); };

  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and summarize it");
  corpus_opts(ingest, false);
  out_opt(ingest);

  auto* index = app.add_subcommand("index", "Build or inspect an index");
  index->require_subcommand(1);
  auto* index_bm25 = index->add_subcommand("bm25", "Build a BM25 index and write it as JSON");
  corpus_opts(index_bm25, false);
  index_bm25->add_option("--field", o.field, "input or output")->capture_default_str();
  out_opt(index_bm25);
  auto* index_dense = index->add_subcommand("dense", "Validate an embedding bank and summarize it");
  index_dense->add_option("--bank", o.bank, "Embedding bank (ELB1)")->required();
  out_opt(index_dense);

  auto* retrieve = app.add_subcommand("retrieve", "Rank demonstrations for test cases");
  corpus_opts(retrieve, true);
  retrieve->add_option("--method", o.method, "random, bm25, dense, mlsm or ttf")
      ->check(CLI::IsMember({"random", "bm25", "dense", "mlsm", "ttf"}))
      ->capture_default_str();
  retrieve->add_option("--k", o.k, "Number of exemplars")->capture_default_str();
  retrieve->add_option("--query", o.query, "Free-text query (bm25 only)");
  retrieve->add_option("--test-corpus", o.test_corpus, "Test cases (JSONL)");
  retrieve->add_option("--test-bank", o.test_bank, "Embedding bank of the test cases");
  retrieve->add_option("--test-id", o.test_ids, "Restrict to these test ids");
  retrieve->add_option("--field", o.field, "BM25 text field")->capture_default_str();
  retrieve->add_option("--layer", o.layer, "Layer for dense/ttf (default: last)");
  retrieve->add_option("--layers", o.layers, "Expert layers for mlsm (default: CKA clustering)")->delimiter(',');
  retrieve->add_option("--n-l", o.n_l, "Number of expert layers when clustering")->capture_default_str();
  retrieve->add_option("--samples", o.samples, "CKA sample size when clustering")->capture_default_str();
  retrieve->add_option("--head", o.head, "TTF head checkpoint");
  out_opt(retrieve);

  auto mlsm_opts = [&](CLI::App* c) {
    c->add_option("--tau", o.mlsm.tau, "Softmax temperature")->capture_default_str();
    c->add_option("--n-p", o.mlsm.n_p, "Mini training set size")->capture_default_str();
    c->add_option("--n-v", o.mlsm.n_v, "Validation set size")->capture_default_str();
    c->add_option("--lr", o.mlsm.lr, "Adam learning rate")->capture_default_str();
    c->add_option("--minibatch", o.mlsm.minibatch, "Exemplars per minibatch")->capture_default_str();
    c->add_option("--max-epochs", o.mlsm.max_epochs)->capture_default_str();
    c->add_option("--patience", o.mlsm.patience)->capture_default_str();
    c->add_option("--batch", o.mlsm.batch_of_tests, "Test cases sharing one weight vector")->capture_default_str();
  };
  mlsm_opts(retrieve);

  auto* cka = app.add_subcommand("cka", "Layer-vs-layer CKA matrix");
  cka->add_option("--bank", o.bank, "Embedding bank (ELB1)")->required();
  cka->add_option("--samples", o.samples, "Number of sampled items")->capture_default_str();
  cka->add_flag("--normalized", o.normalized, "Min-max scale the report for display");
  cka->add_option("--csv", o.csv, "Also write the matrix as CSV");
  out_opt(cka);

  auto* cluster = app.add_subcommand("cluster-layers", "Pick representative layers by K-means over CKA rows");
  cluster->add_option("--bank", o.bank, "Embedding bank (ELB1)");
  cluster->add_option("--cka", o.cka_report, "Raw CKA report produced by `cka`");
  cluster->add_option("--n-l", o.n_l, "Number of clusters")->capture_default_str();
  cluster->add_option("--samples", o.samples, "CKA sample size")->capture_default_str();
  cluster->add_option("--restarts", o.restarts, "K-means restarts")->capture_default_str();
  out_opt(cluster);

  auto* accuracy = app.add_subcommand("layer-accuracy", "Top-k retrieval accuracy of proxy positives per layer");
  accuracy->add_option("--bank", o.bank, "Embedding bank (ELB1)")->required();
  accuracy->add_option("--pairs", o.pairs, "Proxy pairs (JSONL)")->required();
  accuracy->add_option("--k", o.k, "Cutoff")->capture_default_str();
  accuracy->add_option("--layer", o.layer, "Single layer (default: all)");
  out_opt(accuracy);

  auto* mlsm = app.add_subcommand("mlsm-fit", "Learn expert weights per test case (or per batch)");
  mlsm->add_option("--bank", o.bank, "Embedding bank of the demonstrations")->required();
  mlsm->add_option("--test-bank", o.test_bank, "Embedding bank of the test cases");
  mlsm->add_option("--test-corpus", o.test_corpus, "Test cases (JSONL)");
  mlsm->add_option("--task-kind", o.task_kind)->capture_default_str();
  mlsm->add_option("--test-id", o.test_ids, "Restrict to these test ids");
  mlsm->add_option("--layers", o.layers, "Expert layers (default: CKA clustering)")->delimiter(',');
  mlsm->add_option("--n-l", o.n_l)->capture_default_str();
  mlsm->add_option("--samples", o.samples)->capture_default_str();
  mlsm_opts(mlsm);
  out_opt(mlsm);

  auto* ttf = app.add_subcommand("ttf-train", "Train a classification head over frozen embeddings");
  corpus_opts(ttf, true);
  ttf->add_option("--layer", o.layer, "Embedding layer (default: last)");
  ttf->add_option("--head", o.head_kind, "linear or mlp")
      ->check(CLI::IsMember({"linear", "mlp"}))
      ->capture_default_str();
  ttf->add_option("--save", o.head, "Checkpoint path")->required();
  ttf->add_option("--lr", o.ttf.lr)->capture_default_str();
  ttf->add_option("--weight-decay", o.ttf.weight_decay)->capture_default_str();
  ttf->add_option("--batch", o.ttf.batch)->capture_default_str();
  ttf->add_option("--max-epochs", o.ttf.max_epochs)->capture_default_str();
  ttf->add_option("--holdout-frac", o.ttf.holdout_frac)->capture_default_str();
  ttf->add_option("--d-proj", o.ttf.d_proj)->capture_default_str();
  out_opt(ttf);

  auto* proxy = app.add_subcommand("proxy-build", "Label (anchor, positive, negative) triples with an oracle");
  corpus_opts(proxy, true);
  proxy->add_option("--oracle", o.oracle, "mock or http")->capture_default_str();
  proxy->add_option("--m", o.m, "Candidates per anchor")->capture_default_str();
  proxy->add_option("--max-anchors", o.max_anchors)->capture_default_str();
  proxy->add_option("--candidates", o.candidates, "bm25 or dense")->capture_default_str();
  proxy->add_option("--field", o.field, "BM25 text field")->capture_default_str();
  proxy->add_option("--layer", o.layer, "Layer for dense candidates (default: last)");
  out_opt(proxy);

  auto* diagnose = app.add_subcommand("diagnose", "Similarity diagnostics");
  diagnose->require_subcommand(1);
  auto* diag_pairs = diagnose->add_subcommand("pairs", "Input/output similarity of proxy positives vs negatives");
  corpus_opts(diag_pairs, false);
  diag_pairs->add_option("--pairs", o.pairs, "Proxy pairs (JSONL)")->required();
  out_opt(diag_pairs);
  auto* diag_ret = diagnose->add_subcommand("retrieval", "Output similarity of retrieved exemplars");
  corpus_opts(diag_ret, false);
  diag_ret->add_option("--test-corpus", o.test_corpus, "Test cases (JSONL)")->required();
  diag_ret->add_option("--ranked", o.ranked, "Ranked lists from `retrieve`")->required();
  diag_ret->add_option("--k", o.k)->capture_default_str();
  out_opt(diag_ret);

  auto* assemble = app.add_subcommand("assemble", "Render k-shot prompts from ranked lists");
  corpus_opts(assemble, false);
  assemble->add_option("--test-corpus", o.test_corpus, "Test cases (JSONL)")->required();
  assemble->add_option("--ranked", o.ranked, "Ranked lists from `retrieve`")->required();
  assemble->add_option("--shots", o.shots)->capture_default_str();
  assemble->add_option("--template", o.template_path, "Template JSON");
  assemble->add_option("--char-budget", o.char_budget)->capture_default_str();
  out_opt(assemble);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score prompt bundles with an LLM client");
  evaluate_cmd->add_option("--test-corpus", o.test_corpus, "Test cases (JSONL)")->required();
  evaluate_cmd->add_option("--task-kind", o.task_kind)->capture_default_str();
  evaluate_cmd->add_option("--bundles", o.bundles, "Bundles from `assemble`")->required();
  evaluate_cmd->add_option("--client", o.client, "mock:echo_gold, mock:last_label, mock:constant=TEXT or http")
      ->capture_default_str();
  evaluate_cmd->add_option("--metric", o.metric, "accuracy or em")->capture_default_str();
  evaluate_cmd->add_option("--template", o.template_path, "Template JSON used by the mock clients");
  evaluate_cmd->add_option("--max-tokens", o.max_tokens)->capture_default_str();
  out_opt(evaluate_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  // Globals plus the options of the invoked command path.
  std::string prefix;
  for (const CLI::App* c = &app; !c->get_subcommands().empty();) {
    c = c->get_subcommands().front();
    prefix += c->get_name() + ".";
  }
  std::istringstream config(app.config_to_str(true, false));
  for (std::string line; std::getline(config, line);) {
    const auto key = line.substr(0, line.find('='));
    if (!line.empty() && (key.find('.') == std::string::npos || key.rfind(prefix, 0) == 0)) err << "# " << line << '\n';
  }

  Runner runner(o, out, err);
  try {
    if (*ingest) runner.ingest();
    else if (*index_bm25) runner.index_bm25();
    else if (*index_dense) runner.index_dense();
    else if (*retrieve) runner.retrieve();
    else if (*cka) runner.cka();
    else if (*cluster) runner.cluster();
    else if (*accuracy) runner.layer_accuracy();
    else if (*mlsm) runner.mlsm_fit();
    else if (*ttf) runner.ttf_train();
    else if (*proxy) runner.proxy_build();
    else if (*diag_pairs) runner.diagnose_pairs();
    else if (*diag_ret) runner.diagnose_retrieval();
    else if (*assemble) runner.assemble();
    else if (*evaluate_cmd) runner.evaluate_bundles();
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ClientError& e) {
    err << "error: " << e.what() << '\n';
    return kExitClient;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace icl::cli
