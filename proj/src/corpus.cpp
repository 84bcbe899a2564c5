#include "icl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "icl/error.hpp"

namespace icl {
namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string label_from_json(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer() || value.is_boolean()) return value.dump();
  if (value.is_number()) return value.dump();
  throw DataError("label must be a string or a number");
}

std::string required_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::kClassification ? "classification" : "generation";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "classification") return TaskKind::kClassification;
  if (text == "generation") return TaskKind::kGeneration;
  throw ArgumentError("unknown task kind \"" + std::string(text) + "\"");
}

Corpus::Corpus(std::vector<DemonstrationRecord> records, std::string task_name, TaskKind task_kind)
    : records_(std::move(records)), task_name_(std::move(task_name)), task_kind_(task_kind) {
  by_id_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto& r = records_[i];
    if (r.task_kind != task_kind_) {
      throw DataError("record \"" + r.id + "\" has task kind " + std::string(to_string(r.task_kind)) +
                      " but the corpus is " + std::string(to_string(task_kind_)));
    }
    if (is_blank(r.input)) throw DataError("record \"" + r.id + "\" has an empty input");
    if (task_kind_ == TaskKind::kClassification && !r.label) {
      throw DataError("record \"" + r.id + "\" is missing a label on a classification task");
    }
    if (!by_id_.emplace(r.id, i).second) throw DataError("duplicate id \"" + r.id + "\"");
  }
}

bool Corpus::contains(std::string_view id) const { return by_id_.count(std::string(id)) != 0; }

std::size_t Corpus::index_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) throw DataError("unknown record id \"" + std::string(id) + "\"");
  return it->second;
}

const DemonstrationRecord& Corpus::at(std::string_view id) const { return records_[index_of(id)]; }

Corpus parse_corpus(std::string_view jsonl, TaskKind task_kind, std::string task_name) {
  std::vector<DemonstrationRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (is_blank(line)) continue;

    try {
      auto obj = nlohmann::json::parse(line);
      if (!obj.is_object()) throw DataError("expected a JSON object");
      DemonstrationRecord r;
      r.id = required_string(obj, "id");
      r.input = required_string(obj, "input");
      r.output = required_string(obj, "output");
      if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) r.label = label_from_json(*it);
      if (auto it = obj.find("meta"); it != obj.end()) r.meta = *it;
      r.task_kind = task_kind;
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw DataError("empty corpus");
  return Corpus(std::move(records), std::move(task_name), task_kind);
}

Corpus load_corpus(const std::filesystem::path& path, TaskKind task_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), task_kind, path.stem().string());
}

nlohmann::json record_to_json(const DemonstrationRecord& record) {
  nlohmann::json obj = {{"id", record.id}, {"input", record.input}, {"output", record.output}};
  if (record.label) obj["label"] = *record.label;
  if (!record.meta.is_null()) obj["meta"] = record.meta;
  return obj;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records()) {
    nlohmann::ordered_json obj;
    obj["id"] = r.id;
    obj["input"] = r.input;
    obj["output"] = r.output;
    if (r.label) obj["label"] = *r.label;
    if (!r.meta.is_null()) obj["meta"] = r.meta;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  out << serialize_corpus(corpus);
  if (!out) throw DataError("I/O failure writing " + path.string());
}

IndexSplit sample_indices(std::size_t n, std::span<const std::int64_t> sizes, std::uint64_t seed) {
  for (auto s : sizes) {
    if (s < 0) throw ArgumentError("split sizes must be non-negative");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  IndexSplit split;
  std::size_t cursor = 0;
  for (auto s : sizes) {
    auto want = static_cast<std::size_t>(s);
    auto take = std::min(want, n - cursor);
    if (take < want) split.shrunk = true;
    split.subsets.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                               order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;
  }
  return split;
}

Split sample_split(const Corpus& corpus, std::span<const std::int64_t> sizes, std::uint64_t seed) {
  auto idx = sample_indices(corpus.size(), sizes, seed);
  Split split;
  split.shrunk = idx.shrunk;
  for (const auto& subset : idx.subsets) {
    auto& ids = split.subsets.emplace_back();
    ids.reserve(subset.size());
    for (auto i : subset) ids.push_back(corpus.records()[i].id);
  }
  return split;
}

}  // namespace icl
