#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace icl {

enum class TaskKind { kClassification, kGeneration };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// One labeled input-output exemplar.
struct DemonstrationRecord {
  std::string id;
  std::string input;
  std::string output;
  std::optional<std::string> label;
  TaskKind task_kind = TaskKind::kGeneration;
  /// Optional "meta" object carried through unchanged.
  nlohmann::json meta;
};

/// An ordered, validated set of records sharing one task kind.
///
/// Immutable after construction; safe for concurrent readers.
class Corpus {
 public:
  Corpus() = default;
  /// Validates the record invariants (unique ids, non-blank inputs, labels
  /// present on classification tasks) and throws DataError on violation.
  Corpus(std::vector<DemonstrationRecord> records, std::string task_name, TaskKind task_kind);

  const std::vector<DemonstrationRecord>& records() const noexcept { return records_; }
  const std::string& task_name() const noexcept { return task_name_; }
  TaskKind task_kind() const noexcept { return task_kind_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  bool contains(std::string_view id) const;
  /// Throws DataError for unknown ids.
  const DemonstrationRecord& at(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

 private:
  std::vector<DemonstrationRecord> records_;
  std::string task_name_;
  TaskKind task_kind_ = TaskKind::kGeneration;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Parses one JSONL file. The task name defaults to the file stem.
Corpus load_corpus(const std::filesystem::path& path, TaskKind task_kind);
Corpus parse_corpus(std::string_view jsonl, TaskKind task_kind, std::string task_name = "corpus");

nlohmann::json record_to_json(const DemonstrationRecord& record);
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct Split {
  std::vector<std::vector<std::string>> subsets;
  /// Set when the corpus was too small and the trailing subsets were shrunk.
  bool shrunk = false;
};

/// Draws disjoint index subsets of [0, n) without replacement. Deterministic for a seed.
struct IndexSplit {
  std::vector<std::vector<std::size_t>> subsets;
  bool shrunk = false;
};
IndexSplit sample_indices(std::size_t n, std::span<const std::int64_t> sizes, std::uint64_t seed);

/// Disjoint id subsets of the requested sizes; shrinks from the back when the
/// corpus is smaller than the requested total.
Split sample_split(const Corpus& corpus, std::span<const std::int64_t> sizes, std::uint64_t seed);

}  // namespace icl
