#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icl/corpus.hpp"
#include "icl/embedding_bank.hpp"
#include "icl/retrieval.hpp"

namespace icl {

enum class HeadKind { kLinear, kMlp };
std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

/// Classification head over frozen embeddings.
///
/// Linear: logits = W z + b. MLP: logits = W2 relu(W1 z + b1) + b2.
/// For the linear kind only `w` and `b` are used.
struct TtfHead {
  HeadKind kind = HeadKind::kLinear;
  std::size_t dim = 0;
  std::size_t d_proj = 256;
  std::vector<std::string> class_names;

  Eigen::MatrixXd w;   // linear: (classes x dim); mlp: hidden (d_proj x dim)
  Eigen::VectorXd b;
  Eigen::MatrixXd w2;  // mlp output (classes x d_proj)
  Eigen::VectorXd b2;

  std::size_t n_classes() const noexcept { return class_names.size(); }
  std::size_t n_params() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
};

/// Gaussian(0, init_std) weights, zero biases.
TtfHead init_head(HeadKind kind, std::size_t dim, std::vector<std::string> class_names, std::size_t d_proj,
                  std::uint64_t seed, double init_std = 0.02);

Eigen::VectorXd head_logits(const TtfHead& head, std::span<const float> z);
Eigen::VectorXd predict_proba(const TtfHead& head, std::span<const float> z);

/// Hidden activations (mlp) or class probabilities (linear).
Eigen::VectorXd ttf_representation(const TtfHead& head, std::span<const float> z);

struct CrossEntropy {
  double loss = 0.0;
  Eigen::VectorXd grad;  // same layout as TtfHead::parameters()
};

/// Mean cross-entropy over the rows of z with labels as class indices.
CrossEntropy cross_entropy_grad(const TtfHead& head, const Eigen::MatrixXd& z, std::span<const std::size_t> labels);

struct TtfTrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::size_t batch = 32;
  std::size_t max_epochs = 20;
  double holdout_frac = 0.1;
  std::size_t d_proj = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TtfEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
  double holdout_accuracy = 0.0;
};

struct TtfTrainResult {
  TtfHead head;
  std::vector<TtfEpoch> trace;
  std::size_t best_epoch = 0;
  double holdout_accuracy = 0.0;
  std::vector<std::string> holdout_ids;
};

/// Trains a head on the layer-`layer` embeddings of a labeled corpus and
/// returns the snapshot with the best holdout accuracy.
TtfTrainResult train_head(const EmbeddingBank& bank, std::size_t layer, const Corpus& corpus, HeadKind kind,
                          const TtfTrainConfig& config);

/// Ranks bank items by cosine between the head representation of the test
/// vector and of each item's layer embedding.
RankedList ttf_retrieve(const TtfHead& head, const EmbeddingBank& bank, std::size_t layer,
                        std::span<const float> test_vec, std::int64_t k, const IdSet& exclude = {});

nlohmann::json head_to_json(const TtfHead& head);
TtfHead head_from_json(const nlohmann::json& j);
void save_head(const TtfHead& head, const std::filesystem::path& path);
TtfHead load_head(const std::filesystem::path& path);

}  // namespace icl
