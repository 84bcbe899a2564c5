#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icl/embedding_bank.hpp"

namespace icl {

using Matrix = Eigen::MatrixXd;

/// (1/(n-1)^2) tr(Ka H Kb H) with H = I - J/n.
double hsic(const Matrix& ka, const Matrix& kb);

/// Linear-kernel CKA through explicit Gram matrices Ka = Xa Xa^T, Kb = Xb Xb^T.
/// Throws DegenerateRepresentationError when either centered kernel vanishes.
double cka(const Matrix& xa, const Matrix& xb);

/// Same quantity as cka() computed in feature space: with column-centered X,
/// HSIC(XX^T, YY^T) = ||X^T Y||_F^2 / (n-1)^2. Cost is O(n p^2) instead of O(n^2 p).
double cka_features(const Matrix& xa, const Matrix& xb);

struct CkaMatrix {
  Matrix values;
  std::size_t n_samples = 0;
  bool normalized = false;

  std::size_t n_layers() const noexcept { return static_cast<std::size_t>(values.rows()); }
};

/// Up to n_samples distinct bank ids drawn with the seed (all ids when the bank is smaller).
std::vector<std::string> sample_cka_ids(const EmbeddingBank& bank, std::size_t n_samples, std::uint64_t seed);

/// Layer-vs-layer CKA over the rows named by sample_ids. Upper triangle is
/// computed (in parallel when jobs > 1) and mirrored.
CkaMatrix layer_cka_matrix(const EmbeddingBank& bank, const std::vector<std::string>& sample_ids,
                           std::size_t jobs = 1);

/// Min-max scaling for display only: min entry -> 0, max entry -> 1.
CkaMatrix min_max_normalized(const CkaMatrix& m);

nlohmann::json cka_to_json(const CkaMatrix& m);
CkaMatrix cka_from_json(const nlohmann::json& j);
std::string cka_to_csv(const CkaMatrix& m);

struct LayerSelection {
  /// Medoid layer of each cluster, ascending.
  std::vector<std::size_t> layers;
  std::size_t n_l = 0;
  /// cluster_assignment[layer] = position in `layers` of that layer's medoid.
  std::vector<std::size_t> cluster_assignment;
  double inertia = 0.0;
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 100;
};

/// K-means over the rows of the raw CKA matrix, keeping the restart with the
/// lowest within-cluster sum of squares; each cluster is represented by the
/// member nearest its centroid (ties to the lower layer index).
LayerSelection cluster_layers(const CkaMatrix& s, std::size_t n_l, std::uint64_t seed, KMeansOptions options = {});

nlohmann::json selection_to_json(const LayerSelection& sel);

struct QueryGold {
  std::string query_id;
  std::string gold_id;
};

/// Fraction of pairs whose gold item is among the top-k cosine neighbours of
/// the query at `layer` (the query itself excluded).
double layer_retrieval_accuracy(const EmbeddingBank& bank, const std::vector<QueryGold>& pairs, std::size_t layer,
                                std::size_t k = 10);

}  // namespace icl
