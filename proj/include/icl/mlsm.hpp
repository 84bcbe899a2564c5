#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icl/embedding_bank.hpp"
#include "icl/retrieval.hpp"

namespace icl {

/// Multi-level similarity maximization: each selected encoder layer is an
/// expert ranking the exemplars; per test case we learn simplex weights over
/// the experts that maximize agreement between the ensemble and every expert.

struct MlsmConfig {
  double tau = 0.01;
  std::size_t n_p = 256;
  std::size_t n_v = 64;
  double lr = 0.1;
  std::size_t minibatch = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::size_t batch_of_tests = 1;
  std::uint64_t seed = 0;

  /// Throws ArgumentError when an invariant fails.
  void validate() const;
};

/// Per-layer test-case vectors, one per selected layer, in selection order.
using LayerVectors = std::vector<std::vector<float>>;

/// Vectors of item `id` at each of `layers`.
LayerVectors layer_vectors(const EmbeddingBank& bank, std::span<const std::size_t> layers, const std::string& id);

struct ExpertDistributions {
  /// r(i, j): cosine between the test case and exemplar j at expert i.
  Eigen::MatrixXd r;
  /// e(i, :) = softmax(r(i, :) / tau).
  Eigen::MatrixXd e;
  std::vector<std::string> item_ids;

  std::size_t n_experts() const noexcept { return static_cast<std::size_t>(r.rows()); }
  std::size_t n_items() const noexcept { return static_cast<std::size_t>(r.cols()); }
};

struct AggregationWeights {
  Eigen::VectorXd logits;
  Eigen::VectorXd w;

  static AggregationWeights uniform(std::size_t n_l);
  static AggregationWeights from_logits(Eigen::VectorXd logits);
};

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& x);

ExpertDistributions expert_distributions(const EmbeddingBank& bank, std::span<const std::size_t> layers,
                                         const LayerVectors& test_vecs, const std::vector<std::string>& exemplar_ids,
                                         double tau);
ExpertDistributions expert_distributions_from_similarities(Eigen::MatrixXd r, std::vector<std::string> item_ids,
                                                           double tau);

/// softmax(sum_i w_i r_i / tau) over the exemplars.
Eigen::VectorXd ensemble_distribution(const ExpertDistributions& ed, const AggregationWeights& w, double tau);

/// -sum_i ehat . e_i
double agreement_loss(const ExpertDistributions& ed, const Eigen::VectorXd& ehat);

struct LossGrad {
  double loss = 0.0;
  /// Gradient with respect to the weight logits.
  Eigen::VectorXd grad;
};

/// Agreement loss of one test case at the given logits, with its analytic gradient.
LossGrad agreement_loss_grad(const Eigen::MatrixXd& r, const Eigen::VectorXd& logits, double tau);

struct EpochTrace {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct MlsmFit {
  AggregationWeights weights;
  std::vector<EpochTrace> trace;
  std::size_t epochs_run = 0;
  double best_val_loss = 0.0;
  /// Validation loss at the uniform starting point.
  double initial_val_loss = 0.0;
  /// D_p / D_v had to shrink because the demonstration set was too small.
  bool shrunk = false;
  std::vector<std::size_t> layers;
};

/// Learns expert weights for one test case. D_p and D_v are drawn from the
/// bank (minus `exclude`) with config.seed.
MlsmFit fit_weights(const EmbeddingBank& bank, std::span<const std::size_t> layers, const LayerVectors& test_vecs,
                    const MlsmConfig& config, const IdSet& exclude = {});

/// One shared weight vector for a batch of test cases; the loss is the mean
/// of the per-case agreement losses.
MlsmFit fit_weights_batch(const EmbeddingBank& bank, std::span<const std::size_t> layers,
                          const std::vector<LayerVectors>& test_vecs, const MlsmConfig& config,
                          const IdSet& exclude = {});

/// Ranks every bank item (minus exclude) by sum_i w_i cos_i(test, item).
RankedList mlsm_select(const EmbeddingBank& bank, std::span<const std::size_t> layers, const AggregationWeights& w,
                       const LayerVectors& test_vecs, std::int64_t k, const IdSet& exclude = {});

/// One weight-report line: {test_id, layers, w, epochs_run, best_val_loss}.
nlohmann::json weight_report_line(const std::string& test_id, const MlsmFit& fit);

}  // namespace icl
