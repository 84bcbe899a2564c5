#include "icl/mlsm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "icl/adam.hpp"
#include "icl/corpus.hpp"
#include "icl/error.hpp"

namespace icl {
namespace {

// Sums over the expert axis are taken in sorted order so that results do not
// depend on the order in which experts are listed.
double order_free_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

// v0 + sum(vi - v0) / n: reproduces v0 exactly when all values are equal.
template <typename T>
T anchored_mean(const std::vector<T>& values) {
  T acc = values.front() - values.front();
  for (const auto& v : values) acc += v - values.front();
  return values.front() + acc / static_cast<double>(values.size());
}

Eigen::VectorXd weights_of(const Eigen::VectorXd& logits) {
  // Scalar exp: the vectorized one treats packet and tail lanes differently.
  const double mx = logits.maxCoeff();
  Eigen::VectorXd ex(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) ex[i] = std::exp(logits[i] - mx);
  std::vector<double> terms(ex.data(), ex.data() + ex.size());
  const double z = order_free_sum(terms);
  return ex / z;
}

// Plain left-to-right dot of row i with v; identical for every row position.
double row_dot(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) s += a(i, j) * v[j];
  return s;
}

Eigen::VectorXd weighted_rows(const Eigen::MatrixXd& r, const Eigen::VectorXd& w) {
  Eigen::VectorXd s(r.cols());
  std::vector<double> terms(static_cast<std::size_t>(r.rows()));
  for (Eigen::Index j = 0; j < r.cols(); ++j) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) terms[static_cast<std::size_t>(i)] = w[i] * r(i, j);
    s[j] = order_free_sum(terms);
  }
  return s;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& r, double tau) {
  Eigen::MatrixXd e(r.rows(), r.cols());
  for (Eigen::Index i = 0; i < r.rows(); ++i) e.row(i) = softmax(r.row(i).transpose() / tau).transpose();
  return e;
}

Eigen::MatrixXd similarity_rows(const EmbeddingBank& bank, std::span<const std::size_t> layers,
                                const LayerVectors& test_vecs, std::span<const std::size_t> rows) {
  Eigen::MatrixXd r(static_cast<Eigen::Index>(layers.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto view = bank.layer(layers[i]);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cosine(test_vecs[i], view.row(rows[j]));
    }
  }
  return r;
}

void check_test_vectors(const EmbeddingBank& bank, std::span<const std::size_t> layers, const LayerVectors& v) {
  if (v.size() != layers.size()) {
    throw ArgumentError("expected one test vector per selected layer (" + std::to_string(layers.size()) + "), got " +
                        std::to_string(v.size()));
  }
  for (const auto& x : v) {
    if (x.size() != bank.dim()) throw ArgumentError("test vector dimension does not match the bank");
  }
}

struct BatchLoss {
  double loss;
  Eigen::VectorXd grad;
};

BatchLoss mean_loss(const std::vector<Eigen::MatrixXd>& r_per_test, const Eigen::VectorXd& logits, double tau) {
  std::vector<double> losses;
  std::vector<Eigen::VectorXd> grads;
  for (const auto& r : r_per_test) {
    auto lg = agreement_loss_grad(r, logits, tau);
    losses.push_back(lg.loss);
    grads.push_back(std::move(lg.grad));
  }
  return {anchored_mean(losses), anchored_mean(grads)};
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& r, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(r.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = r.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

}  // namespace

void MlsmConfig::validate() const {
  if (!(tau > 0.0)) throw ArgumentError("mlsm: tau must be > 0");
  if (n_p < 1 || n_v < 1) throw ArgumentError("mlsm: n_p and n_v must be >= 1");
  if (minibatch < 1 || minibatch > n_p) throw ArgumentError("mlsm: minibatch must be in [1, n_p]");
  if (!(lr > 0.0)) throw ArgumentError("mlsm: lr must be > 0");
  if (batch_of_tests < 1) throw ArgumentError("mlsm: batch_of_tests must be >= 1");
}

LayerVectors layer_vectors(const EmbeddingBank& bank, std::span<const std::size_t> layers, const std::string& id) {
  LayerVectors out;
  const auto row = bank.row(id);
  for (auto l : layers) {
    auto v = bank.vector(l, row);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

AggregationWeights AggregationWeights::uniform(std::size_t n_l) {
  return from_logits(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_l)));
}

AggregationWeights AggregationWeights::from_logits(Eigen::VectorXd logits) {
  AggregationWeights a;
  a.w = weights_of(logits);
  a.logits = std::move(logits);
  return a;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  const double mx = x.maxCoeff();
  Eigen::VectorXd ex = (x.array() - mx).exp();
  return ex / ex.sum();
}

ExpertDistributions expert_distributions_from_similarities(Eigen::MatrixXd r, std::vector<std::string> item_ids,
                                                           double tau) {
  if (r.cols() == 0) throw ArgumentError("expert_distributions: empty exemplar list");
  if (!(tau > 0.0)) throw ArgumentError("expert_distributions: tau must be > 0");
  ExpertDistributions ed;
  ed.e = row_softmax(r, tau);
  ed.r = std::move(r);
  ed.item_ids = std::move(item_ids);
  return ed;
}

ExpertDistributions expert_distributions(const EmbeddingBank& bank, std::span<const std::size_t> layers,
                                         const LayerVectors& test_vecs, const std::vector<std::string>& exemplar_ids,
                                         double tau) {
  if (exemplar_ids.empty()) throw ArgumentError("expert_distributions: empty exemplar list");
  check_test_vectors(bank, layers, test_vecs);
  std::vector<std::size_t> rows;
  rows.reserve(exemplar_ids.size());
  for (const auto& id : exemplar_ids) rows.push_back(bank.row(id));
  return expert_distributions_from_similarities(similarity_rows(bank, layers, test_vecs, rows), exemplar_ids, tau);
}

Eigen::VectorXd ensemble_distribution(const ExpertDistributions& ed, const AggregationWeights& w, double tau) {
  if (static_cast<std::size_t>(w.w.size()) != ed.n_experts()) {
    throw ArgumentError("ensemble_distribution: weight count does not match expert count");
  }
  return softmax(weighted_rows(ed.r, w.w) / tau);
}

double agreement_loss(const ExpertDistributions& ed, const Eigen::VectorXd& ehat) {
  if (static_cast<std::size_t>(ehat.size()) != ed.n_items()) throw ArgumentError("agreement_loss: shape mismatch");
  std::vector<double> dots(ed.n_experts());
  for (std::size_t i = 0; i < dots.size(); ++i) dots[i] = row_dot(ed.e, static_cast<Eigen::Index>(i), ehat);
  return -order_free_sum(dots);
}

LossGrad agreement_loss_grad(const Eigen::MatrixXd& r, const Eigen::VectorXd& logits, double tau) {
  const auto n_l = r.rows();
  const auto m = r.cols();
  const Eigen::VectorXd w = weights_of(logits);
  const Eigen::MatrixXd e = row_softmax(r, tau);
  const Eigen::VectorXd ehat = softmax(weighted_rows(r, w) / tau);

  // e_sum(j) = sum_i e(i, j)
  Eigen::VectorXd e_sum(m);
  std::vector<double> terms(static_cast<std::size_t>(n_l));
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n_l; ++i) terms[static_cast<std::size_t>(i)] = e(i, j);
    e_sum[j] = order_free_sum(terms);
  }
  for (Eigen::Index i = 0; i < n_l; ++i) terms[static_cast<std::size_t>(i)] = row_dot(e, i, ehat);
  const double agreement = order_free_sum(terms);

  // L = -ehat . e_sum;  dL/ds = -(ehat * (e_sum - agreement)) / tau
  const Eigen::VectorXd d_s = -(ehat.array() * (e_sum.array() - agreement)).matrix() / tau;
  Eigen::VectorXd d_w(n_l);
  for (Eigen::Index i = 0; i < n_l; ++i) d_w[i] = row_dot(r, i, d_s);
  for (Eigen::Index i = 0; i < n_l; ++i) terms[static_cast<std::size_t>(i)] = w[i] * d_w[i];
  const double w_dot = order_free_sum(terms);

  LossGrad out;
  out.loss = -agreement;
  out.grad = (w.array() * (d_w.array() - w_dot)).matrix();
  return out;
}

MlsmFit fit_weights(const EmbeddingBank& bank, std::span<const std::size_t> layers, const LayerVectors& test_vecs,
                    const MlsmConfig& config, const IdSet& exclude) {
  return fit_weights_batch(bank, layers, std::vector<LayerVectors>{test_vecs}, config, exclude);
}

MlsmFit fit_weights_batch(const EmbeddingBank& bank, std::span<const std::size_t> layers,
                          const std::vector<LayerVectors>& test_vecs, const MlsmConfig& config, const IdSet& exclude) {
  config.validate();
  if (layers.empty()) throw ArgumentError("fit_weights: no expert layers selected");
  if (test_vecs.empty()) throw ArgumentError("fit_weights: empty batch of test cases");
  for (const auto& v : test_vecs) check_test_vectors(bank, layers, v);

  MlsmFit fit;
  fit.layers.assign(layers.begin(), layers.end());
  const auto n_l = layers.size();
  if (n_l == 1) {
    fit.weights = AggregationWeights::uniform(1);
    return fit;
  }

  std::vector<std::size_t> pool;
  pool.reserve(bank.n_items());
  for (std::size_t i = 0; i < bank.n_items(); ++i) {
    if (!exclude.count(bank.item_ids()[i])) pool.push_back(i);
  }
  const std::int64_t sizes[] = {static_cast<std::int64_t>(config.n_p), static_cast<std::int64_t>(config.n_v)};
  auto split = sample_indices(pool.size(), sizes, config.seed);
  fit.shrunk = split.shrunk;
  std::vector<std::size_t> train_rows, val_rows;
  for (auto i : split.subsets[0]) train_rows.push_back(pool[i]);
  for (auto i : split.subsets[1]) val_rows.push_back(pool[i]);
  if (train_rows.empty()) throw DataError("fit_weights: demonstration set is empty");
  if (val_rows.empty()) val_rows = train_rows;

  std::vector<Eigen::MatrixXd> r_train, r_val;
  for (const auto& v : test_vecs) {
    r_train.push_back(similarity_rows(bank, layers, v, train_rows));
    r_val.push_back(similarity_rows(bank, layers, v, val_rows));
  }

  Eigen::VectorXd logits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_l));
  auto val_loss = [&](const Eigen::VectorXd& at) { return mean_loss(r_val, at, config.tau).loss; };

  fit.initial_val_loss = val_loss(logits);
  fit.best_val_loss = fit.initial_val_loss;
  Eigen::VectorXd best_logits = logits;

  Adam adam(logits.size(), {.lr = config.lr});
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.minibatch) {
      const auto stop = std::min(order.size(), start + config.minibatch);
      std::span<const std::size_t> cols(order.data() + start, stop - start);
      std::vector<Eigen::MatrixXd> batch;
      batch.reserve(r_train.size());
      for (const auto& r : r_train) batch.push_back(gather_columns(r, cols));
      auto lg = mean_loss(batch, logits, config.tau);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        throw DataError("fit_weights: non-finite loss at epoch " + std::to_string(epoch) + ", minibatch starting at " +
                        std::to_string(start) + " (tau=" + std::to_string(config.tau) + ")");
      }
      adam.step(logits, lg.grad);
      train_sum += lg.loss;
      ++n_batches;
    }
    const double v = val_loss(logits);
    if (!std::isfinite(v)) throw DataError("fit_weights: non-finite validation loss at epoch " + std::to_string(epoch));
    fit.trace.push_back({epoch, train_sum / static_cast<double>(n_batches), v});
    fit.epochs_run = epoch;
    if (v < fit.best_val_loss) {
      fit.best_val_loss = v;
      best_logits = logits;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  fit.weights = AggregationWeights::from_logits(best_logits);
  return fit;
}

RankedList mlsm_select(const EmbeddingBank& bank, std::span<const std::size_t> layers, const AggregationWeights& w,
                       const LayerVectors& test_vecs, std::int64_t k, const IdSet& exclude) {
  if (k <= 0) throw ArgumentError("mlsm_select: k must be >= 1");
  check_test_vectors(bank, layers, test_vecs);
  if (static_cast<std::size_t>(w.w.size()) != layers.size()) {
    throw ArgumentError("mlsm_select: weight count does not match layer count");
  }
  std::vector<LayerView> views;
  for (auto l : layers) views.push_back(bank.layer(l));
  std::vector<RankedEntry> all;
  all.reserve(bank.n_items());
  std::vector<double> terms(layers.size());
  for (std::size_t j = 0; j < bank.n_items(); ++j) {
    const auto& id = bank.item_ids()[j];
    if (exclude.count(id)) continue;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      terms[i] = w.w[static_cast<Eigen::Index>(i)] * cosine(test_vecs[i], views[i].row(j));
    }
    all.push_back({id, order_free_sum(terms)});
  }
  return top_k(std::move(all), static_cast<std::size_t>(k));
}

nlohmann::json weight_report_line(const std::string& test_id, const MlsmFit& fit) {
  nlohmann::ordered_json j;
  j["test_id"] = test_id;
  j["layers"] = fit.layers;
  j["w"] = std::vector<double>(fit.weights.w.data(), fit.weights.w.data() + fit.weights.w.size());
  j["epochs_run"] = fit.epochs_run;
  j["best_val_loss"] = fit.best_val_loss;
  return j;
}

}  // namespace icl
