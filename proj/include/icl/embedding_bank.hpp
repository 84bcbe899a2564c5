#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace icl {

struct BankManifest {
  std::string encoder_name = "unknown";
  std::string pooling = "mean";
  std::string created;
};

class LayerView;

/// Per-layer mean-pooled embeddings for a list of items.
///
/// Storage is layer-major, item-major, component-minor: the vector of item i at
/// layer l starts at ((l * n_items) + i) * dim.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;
  /// Validates shape and finiteness; throws DataError on violation.
  EmbeddingBank(std::size_t n_layers, std::size_t dim, std::vector<std::string> item_ids,
                std::vector<float> values, BankManifest manifest = {});

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t n_items() const noexcept { return item_ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
  const std::vector<float>& values() const noexcept { return values_; }
  const BankManifest& manifest() const noexcept { return manifest_; }

  bool contains(const std::string& id) const { return row_of_.count(id) != 0; }
  /// Row index of an item id; throws DataError when absent.
  std::size_t row(const std::string& id) const;

  LayerView layer(std::size_t layer_index) const;
  std::span<const float> vector(std::size_t layer_index, std::size_t row) const;
  std::span<const float> vector(std::size_t layer_index, const std::string& id) const;

 private:
  std::size_t n_layers_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::string> item_ids_;
  std::vector<float> values_;
  BankManifest manifest_;
  std::unordered_map<std::string, std::size_t> row_of_;
};

/// Read-only (n_items x dim) view of one layer.
class LayerView {
 public:
  LayerView(std::size_t layer_index, std::span<const float> data, std::size_t n_rows, std::size_t dim)
      : layer_index_(layer_index), data_(data), n_rows_(n_rows), dim_(dim) {}

  std::size_t layer_index() const noexcept { return layer_index_; }
  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(std::size_t i) const { return data_.subspan(i * dim_, dim_); }
  std::span<const float> data() const noexcept { return data_; }

 private:
  std::size_t layer_index_;
  std::span<const float> data_;
  std::size_t n_rows_;
  std::size_t dim_;
};

inline constexpr char kBankMagic[4] = {'E', 'L', 'B', '1'};
inline constexpr std::uint32_t kBankVersion = 1;
inline constexpr std::size_t kBankHeaderBytes = 24;

/// Writes the binary bank and its "<path>.manifest.json" sidecar.
void write_bank(const EmbeddingBank& bank, const std::filesystem::path& path);
EmbeddingBank read_bank(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& bank_path);

struct CosineResult {
  double value = 0.0;
  /// Both vectors were zero; the value is 0 by convention.
  bool degenerate = false;
};

/// Cosine similarity clamped to [-1, 1]. A zero vector yields 0 and sets the flag.
CosineResult cosine_checked(std::span<const float> u, std::span<const float> v);
double cosine(std::span<const float> u, std::span<const float> v);
double cosine(std::span<const double> u, std::span<const double> v);

}  // namespace icl
