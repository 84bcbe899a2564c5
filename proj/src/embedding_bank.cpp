#include "icl/embedding_bank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "icl/error.hpp"

namespace icl {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<char>& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

EmbeddingBank::EmbeddingBank(std::size_t n_layers, std::size_t dim, std::vector<std::string> item_ids,
                             std::vector<float> values, BankManifest manifest)
    : n_layers_(n_layers),
      dim_(dim),
      item_ids_(std::move(item_ids)),
      values_(std::move(values)),
      manifest_(std::move(manifest)) {
  if (values_.size() != n_layers_ * item_ids_.size() * dim_) {
    throw DataError("bank tensor has " + std::to_string(values_.size()) + " values, expected " +
                    std::to_string(n_layers_ * item_ids_.size() * dim_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DataError("bank contains a non-finite value at flat offset " + std::to_string(i));
    }
  }
  row_of_.reserve(item_ids_.size());
  for (std::size_t i = 0; i < item_ids_.size(); ++i) {
    if (!row_of_.emplace(item_ids_[i], i).second) throw DataError("duplicate bank item id \"" + item_ids_[i] + "\"");
  }
}

std::size_t EmbeddingBank::row(const std::string& id) const {
  auto it = row_of_.find(id);
  if (it == row_of_.end()) throw DataError("id \"" + id + "\" is not in the embedding bank");
  return it->second;
}

LayerView EmbeddingBank::layer(std::size_t layer_index) const {
  if (layer_index >= n_layers_) {
    throw ArgumentError("layer " + std::to_string(layer_index) + " out of range (bank has " +
                        std::to_string(n_layers_) + " layers)");
  }
  auto stride = n_items() * dim_;
  return LayerView(layer_index, std::span<const float>(values_).subspan(layer_index * stride, stride), n_items(),
                   dim_);
}

std::span<const float> EmbeddingBank::vector(std::size_t layer_index, std::size_t row) const {
  return layer(layer_index).row(row);
}

std::span<const float> EmbeddingBank::vector(std::size_t layer_index, const std::string& id) const {
  return layer(layer_index).row(row(id));
}

std::filesystem::path manifest_path(const std::filesystem::path& bank_path) {
  return std::filesystem::path(bank_path.string() + ".manifest.json");
}

void write_bank(const EmbeddingBank& bank, const std::filesystem::path& path) {
  std::vector<char> header;
  header.insert(header.end(), kBankMagic, kBankMagic + 4);
  put_le<std::uint32_t>(header, kBankVersion);
  put_le<std::uint32_t>(header, static_cast<std::uint32_t>(bank.n_layers()));
  put_le<std::uint64_t>(header, static_cast<std::uint64_t>(bank.n_items()));
  put_le<std::uint32_t>(header, static_cast<std::uint32_t>(bank.dim()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(bank.values().data()),
              static_cast<std::streamsize>(bank.values().size() * sizeof(float)));
  } else {
    std::vector<char> payload;
    payload.reserve(bank.values().size() * 4);
    for (float v : bank.values()) put_le<float>(payload, v);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw DataError("I/O failure writing " + path.string());

  nlohmann::ordered_json manifest;
  manifest["item_ids"] = bank.item_ids();
  manifest["encoder_name"] = bank.manifest().encoder_name;
  manifest["pooling"] = bank.manifest().pooling;
  manifest["n_layers"] = bank.n_layers();
  manifest["dim"] = bank.dim();
  if (!bank.manifest().created.empty()) manifest["created"] = bank.manifest().created;
  std::ofstream side(manifest_path(path), std::ios::trunc);
  if (!side) throw DataError("cannot open manifest for " + path.string());
  side << manifest.dump(1) << '\n';
  if (!side) throw DataError("I/O failure writing manifest for " + path.string());
}

EmbeddingBank read_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open bank file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kBankHeaderBytes) throw DataError("bank file truncated: header incomplete");
  if (std::memcmp(bytes.data(), kBankMagic, 4) != 0) throw DataError("bad magic: not an ELB1 bank file");
  auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kBankVersion) throw DataError("unsupported bank version " + std::to_string(version));
  auto n_layers = get_le<std::uint32_t>(bytes.data() + 8);
  auto n_items = get_le<std::uint64_t>(bytes.data() + 12);
  auto dim = get_le<std::uint32_t>(bytes.data() + 20);

  const std::uint64_t count = std::uint64_t{n_layers} * n_items * dim;
  const std::uint64_t payload = bytes.size() - kBankHeaderBytes;
  if (payload < count * 4) {
    throw DataError("bank payload truncated: header declares " + std::to_string(count) + " values, file holds " +
                    std::to_string(payload / 4));
  }
  if (payload != count * 4) throw DataError("bank payload has trailing bytes");

  std::vector<float> values(count);
  for (std::uint64_t i = 0; i < count; ++i) values[i] = get_le<float>(bytes.data() + kBankHeaderBytes + i * 4);

  std::ifstream side(manifest_path(path));
  if (!side) throw DataError("missing manifest sidecar " + manifest_path(path).string());
  nlohmann::json manifest;
  try {
    side >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  auto ids = manifest.value("item_ids", std::vector<std::string>{});
  if (ids.size() != n_items) {
    throw DataError("manifest lists " + std::to_string(ids.size()) + " item ids but the header declares " +
                    std::to_string(n_items));
  }
  if (manifest.contains("n_layers") && manifest["n_layers"].get<std::uint64_t>() != n_layers) {
    throw DataError("manifest n_layers disagrees with the header");
  }
  if (manifest.contains("dim") && manifest["dim"].get<std::uint64_t>() != dim) {
    throw DataError("manifest dim disagrees with the header");
  }
  BankManifest info;
  info.encoder_name = manifest.value("encoder_name", std::string("unknown"));
  info.pooling = manifest.value("pooling", std::string("mean"));
  info.created = manifest.value("created", std::string());
  return EmbeddingBank(n_layers, dim, std::move(ids), std::move(values), std::move(info));
}

namespace {

template <typename T>
CosineResult cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    throw ArgumentError("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                        std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i], b = v[i];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0), false};
}

}  // namespace

CosineResult cosine_checked(std::span<const float> u, std::span<const float> v) { return cosine_impl(u, v); }

double cosine(std::span<const float> u, std::span<const float> v) { return cosine_impl(u, v).value; }

double cosine(std::span<const double> u, std::span<const double> v) { return cosine_impl(u, v).value; }

}  // namespace icl
