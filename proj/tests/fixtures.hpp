#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icl/corpus.hpp"
#include "icl/embedding_bank.hpp"
#include "icl/retrieval.hpp"

namespace icl::testing {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);
Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::uint64_t seed);

std::vector<std::string> numbered_ids(std::string_view prefix, std::size_t n);

/// Bank whose layer l is layers[l] (n_items x dim each).
EmbeddingBank bank_from_layers(const std::vector<Eigen::MatrixXd>& layers, std::vector<std::string> ids);

/// Gaussian bank with independent layers.
EmbeddingBank random_bank(std::size_t n_layers, std::size_t n_items, std::size_t dim, std::uint64_t seed);

/// d1 "a b", d2 "b c", d3 "c c".
Corpus toy_bm25_corpus();

/// Two labeled classes ("pos"/"neg") in dim 16. Coordinate 0 carries the class
/// with a gap of 2 between classes; the rest is loud isotropic noise.
struct LabeledTask {
  Corpus demos;
  EmbeddingBank demo_bank;
  Corpus tests;
  EmbeddingBank test_bank;
};
LabeledTask blobs_task(std::size_t n_demos = 500, std::size_t n_tests = 200, std::uint64_t seed = 11);

/// Label = sign(x0 * x1) around four quadrant centers.
LabeledTask xor_task(std::size_t n_demos, std::uint64_t seed = 13);

/// Three experts over one item pool: layers 0 and 1 are identical, layer 2 holds
/// the layer-0 vectors shuffled across items. The test vector is shared by all layers.
struct ConsentingPair {
  EmbeddingBank bank;
  std::vector<std::vector<float>> test_vecs;
};
ConsentingPair consenting_pair(std::size_t n_items = 400, std::size_t dim = 8, std::uint64_t seed = 21);

/// Generation corpus of command-style outputs grouped by topic.
Corpus topic_generation_corpus(std::size_t per_topic = 20, std::uint64_t seed = 31);

/// Brute-force cosine ranking of every bank row, with the library's tie order.
RankedList brute_force_rank(const EmbeddingBank& bank, std::size_t layer, std::span<const float> q,
                            const IdSet& exclude = {});

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace icl::testing
