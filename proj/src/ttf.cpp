#include "icl/ttf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "icl/adam.hpp"
#include "icl/error.hpp"
#include "icl/mlsm.hpp"

namespace icl {
namespace {

Eigen::VectorXd to_vector(std::span<const float> z) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) v[static_cast<Eigen::Index>(i)] = z[i];
  return v;
}

void check_dim(const TtfHead& head, std::size_t got) {
  if (got != head.dim) {
    throw ArgumentError("head expects dimension " + std::to_string(head.dim) + ", got " + std::to_string(got));
  }
}

void fill_gaussian(Eigen::MatrixXd& m, std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> normal(0.0, std_dev);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal(rng);
  }
}

/// Row-wise softmax of a (batch x classes) logit matrix.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) p.row(i) = softmax(logits.row(i).transpose()).transpose();
  return p;
}

template <typename Mat>
void append(Eigen::VectorXd& flat, Eigen::Index& at, const Mat& m) {
  // Row-major flattening, matching the checkpoint layout.
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat[at++] = m(i, j);
  }
}

template <typename Mat>
void extract(const Eigen::VectorXd& flat, Eigen::Index& at, Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[at++];
  }
}

struct Forward {
  Eigen::MatrixXd pre;     // mlp hidden pre-activation (batch x d_proj)
  Eigen::MatrixXd hidden;  // relu(pre)
  Eigen::MatrixXd probs;   // (batch x classes)
};

Forward forward(const TtfHead& head, const Eigen::MatrixXd& z) {
  Forward f;
  Eigen::MatrixXd logits;
  if (head.kind == HeadKind::kLinear) {
    logits = (z * head.w.transpose()).rowwise() + head.b.transpose();
  } else {
    f.pre = (z * head.w.transpose()).rowwise() + head.b.transpose();
    f.hidden = f.pre.cwiseMax(0.0);
    logits = (f.hidden * head.w2.transpose()).rowwise() + head.b2.transpose();
  }
  f.probs = softmax_rows(logits);
  return f;
}

}  // namespace

std::string_view to_string(HeadKind kind) { return kind == HeadKind::kLinear ? "linear" : "mlp"; }

HeadKind parse_head_kind(std::string_view text) {
  if (text == "linear") return HeadKind::kLinear;
  if (text == "mlp") return HeadKind::kMlp;
  throw ArgumentError("unknown head kind \"" + std::string(text) + "\"");
}

std::size_t TtfHead::n_params() const {
  return static_cast<std::size_t>(w.size() + b.size() + w2.size() + b2.size());
}

Eigen::VectorXd TtfHead::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(n_params()));
  Eigen::Index at = 0;
  append(flat, at, w);
  append(flat, at, b);
  append(flat, at, w2);
  append(flat, at, b2);
  return flat;
}

void TtfHead::set_parameters(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != n_params()) throw ArgumentError("parameter vector has wrong length");
  Eigen::Index at = 0;
  extract(flat, at, w);
  extract(flat, at, b);
  extract(flat, at, w2);
  extract(flat, at, b2);
}

TtfHead init_head(HeadKind kind, std::size_t dim, std::vector<std::string> class_names, std::size_t d_proj,
                  std::uint64_t seed, double init_std) {
  if (class_names.size() < 2) throw DataError("a classification head needs at least 2 classes");
  TtfHead head;
  head.kind = kind;
  head.dim = dim;
  head.class_names = std::move(class_names);
  const auto c = static_cast<Eigen::Index>(head.n_classes());
  const auto d = static_cast<Eigen::Index>(dim);
  std::mt19937_64 rng(seed);
  if (kind == HeadKind::kLinear) {
    head.d_proj = 0;
    head.w.resize(c, d);
    fill_gaussian(head.w, rng, init_std);
    head.b = Eigen::VectorXd::Zero(c);
  } else {
    if (d_proj < 1) throw ArgumentError("mlp head needs d_proj >= 1");
    head.d_proj = d_proj;
    const auto h = static_cast<Eigen::Index>(d_proj);
    head.w.resize(h, d);
    fill_gaussian(head.w, rng, init_std);
    head.b = Eigen::VectorXd::Zero(h);
    head.w2.resize(c, h);
    fill_gaussian(head.w2, rng, init_std);
    head.b2 = Eigen::VectorXd::Zero(c);
  }
  return head;
}

Eigen::VectorXd head_logits(const TtfHead& head, std::span<const float> z) {
  check_dim(head, z.size());
  const Eigen::VectorXd x = to_vector(z);
  if (head.kind == HeadKind::kLinear) return head.w * x + head.b;
  const Eigen::VectorXd hidden = (head.w * x + head.b).cwiseMax(0.0);
  return head.w2 * hidden + head.b2;
}

Eigen::VectorXd predict_proba(const TtfHead& head, std::span<const float> z) {
  return softmax(head_logits(head, z));
}

Eigen::VectorXd ttf_representation(const TtfHead& head, std::span<const float> z) {
  check_dim(head, z.size());
  if (head.kind == HeadKind::kLinear) return predict_proba(head, z);
  return (head.w * to_vector(z) + head.b).cwiseMax(0.0);
}

CrossEntropy cross_entropy_grad(const TtfHead& head, const Eigen::MatrixXd& z, std::span<const std::size_t> labels) {
  check_dim(head, static_cast<std::size_t>(z.cols()));
  if (static_cast<std::size_t>(z.rows()) != labels.size() || labels.empty()) {
    throw ArgumentError("cross_entropy_grad: need one label per row");
  }
  const auto n = static_cast<double>(labels.size());
  const Forward f = forward(head, z);

  CrossEntropy out;
  Eigen::MatrixXd d_logits = f.probs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto y = static_cast<Eigen::Index>(labels[i]);
    out.loss -= std::log(std::max(f.probs(row, y), std::numeric_limits<double>::min()));
    d_logits(row, y) -= 1.0;
  }
  out.loss /= n;
  d_logits /= n;

  TtfHead g = head;
  if (head.kind == HeadKind::kLinear) {
    g.w = d_logits.transpose() * z;
    g.b = d_logits.colwise().sum().transpose();
  } else {
    g.w2 = d_logits.transpose() * f.hidden;
    g.b2 = d_logits.colwise().sum().transpose();
    Eigen::MatrixXd d_pre = d_logits * head.w2;
    d_pre = d_pre.cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
    g.w = d_pre.transpose() * z;
    g.b = d_pre.colwise().sum().transpose();
  }
  out.grad = g.parameters();
  return out;
}

void TtfTrainConfig::validate() const {
  if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) throw ArgumentError("ttf: holdout_frac must be in (0, 1)");
  if (batch < 1) throw ArgumentError("ttf: batch must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("ttf: lr must be > 0");
  if (weight_decay < 0.0) throw ArgumentError("ttf: weight_decay must be >= 0");
}

TtfTrainResult train_head(const EmbeddingBank& bank, std::size_t layer, const Corpus& corpus, HeadKind kind,
                          const TtfTrainConfig& config) {
  config.validate();
  if (corpus.task_kind() != TaskKind::kClassification) {
    throw ArgumentError("test task fine-tuning supports classification corpora only (generation heads are not built)");
  }
  const auto view = bank.layer(layer);

  std::map<std::string, std::size_t> class_index;
  for (const auto& r : corpus.records()) class_index.emplace(*r.label, 0);
  if (class_index.size() < 2) throw DataError("corpus has a single class; a classifier needs at least 2");
  std::vector<std::string> class_names;
  for (auto& [name, idx] : class_index) {
    idx = class_names.size();
    class_names.push_back(name);
  }

  const auto n = corpus.size();
  const auto dim = bank.dim();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = corpus.records()[i];
    if (!bank.contains(r.id)) throw DataError("record \"" + r.id + "\" has no embedding in the bank");
    auto v = view.row(bank.row(r.id));
    for (std::size_t d = 0; d < dim; ++d) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v[d];
    labels[i] = class_index.at(*r.label);
  }

  const auto n_hold = std::clamp<std::int64_t>(std::llround(config.holdout_frac * static_cast<double>(n)), 1,
                                               static_cast<std::int64_t>(n) - 1);
  const std::int64_t sizes[] = {n_hold, static_cast<std::int64_t>(n) - n_hold};
  auto split = sample_indices(n, sizes, config.seed);
  const auto& hold = split.subsets[0];
  const auto& train = split.subsets[1];

  auto gather = [&](std::span<const std::size_t> rows, Eigen::MatrixXd& zs, std::vector<std::size_t>& ys) {
    zs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    ys.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      zs.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(rows[i]));
      ys[i] = labels[rows[i]];
    }
  };
  Eigen::MatrixXd z_hold;
  std::vector<std::size_t> y_hold;
  gather(hold, z_hold, y_hold);

  auto evaluate_holdout = [&](const TtfHead& h) {
    const Forward f = forward(h, z_hold);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y_hold.size(); ++i) {
      Eigen::Index arg = 0;
      f.probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (static_cast<std::size_t>(arg) == y_hold[i]) ++correct;
      loss -= std::log(std::max(f.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y_hold[i])),
                                std::numeric_limits<double>::min()));
    }
    return std::pair{loss / static_cast<double>(y_hold.size()),
                     static_cast<double>(correct) / static_cast<double>(y_hold.size())};
  };

  TtfTrainResult result;
  result.head = init_head(kind, dim, class_names, config.d_proj, config.seed);
  for (auto i : hold) result.holdout_ids.push_back(corpus.records()[i].id);

  TtfHead head = result.head;
  Eigen::VectorXd params = head.parameters();
  Adam adam(params.size(), {.lr = config.lr, .weight_decay = config.weight_decay});
  std::mt19937_64 rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(train.begin(), train.end());

  auto [best_loss, best_acc] = evaluate_holdout(head);
  result.holdout_accuracy = best_acc;

  Eigen::MatrixXd zb;
  std::vector<std::size_t> yb;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const auto stop = std::min(order.size(), start + config.batch);
      gather(std::span<const std::size_t>(order.data() + start, stop - start), zb, yb);
      auto ce = cross_entropy_grad(head, zb, yb);
      if (!std::isfinite(ce.loss)) throw DataError("train_head: non-finite loss at epoch " + std::to_string(epoch));
      adam.step(params, ce.grad);
      head.set_parameters(params);
      train_sum += ce.loss;
      ++batches;
    }
    auto [loss, acc] = evaluate_holdout(head);
    result.trace.push_back({epoch, train_sum / static_cast<double>(batches), loss, acc});
    if (acc > best_acc || (acc == best_acc && loss < best_loss)) {
      best_acc = acc;
      best_loss = loss;
      result.head = head;
      result.best_epoch = epoch;
      result.holdout_accuracy = acc;
    }
  }
  return result;
}

RankedList ttf_retrieve(const TtfHead& head, const EmbeddingBank& bank, std::size_t layer,
                        std::span<const float> test_vec, std::int64_t k, const IdSet& exclude) {
  if (k <= 0) throw ArgumentError("ttf_retrieve: k must be >= 1");
  check_dim(head, bank.dim());
  const Eigen::VectorXd query = ttf_representation(head, test_vec);
  const auto view = bank.layer(layer);
  std::vector<RankedEntry> all;
  all.reserve(view.rows());
  for (std::size_t i = 0; i < view.rows(); ++i) {
    const auto& id = bank.item_ids()[i];
    if (exclude.count(id)) continue;
    const Eigen::VectorXd rep = ttf_representation(head, view.row(i));
    all.push_back({id, cosine(std::span<const double>(query.data(), static_cast<std::size_t>(query.size())),
                              std::span<const double>(rep.data(), static_cast<std::size_t>(rep.size())))});
  }
  return top_k(std::move(all), static_cast<std::size_t>(k));
}

namespace {

nlohmann::json flat_of(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  }
  return v;
}

Eigen::MatrixXd matrix_of(const nlohmann::json& shape, const nlohmann::json& flat) {
  const auto rows = shape.at(0).get<Eigen::Index>();
  const auto cols = shape.at(1).get<Eigen::Index>();
  auto v = flat.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw DataError("head checkpoint: parameter size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  }
  return m;
}

}  // namespace

nlohmann::json head_to_json(const TtfHead& head) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(head.kind);
  j["dim"] = head.dim;
  j["d_proj"] = head.d_proj;
  j["class_names"] = head.class_names;
  nlohmann::ordered_json shapes, params;
  auto put = [&](const char* name, const Eigen::MatrixXd& m) {
    shapes[name] = {m.rows(), m.cols()};
    params[name] = flat_of(m);
  };
  put("w", head.w);
  put("b", head.b);
  if (head.kind == HeadKind::kMlp) {
    put("w2", head.w2);
    put("b2", head.b2);
  }
  j["shapes"] = shapes;
  j["parameters"] = params;
  return j;
}

TtfHead head_from_json(const nlohmann::json& j) {
  try {
    TtfHead head;
    head.kind = parse_head_kind(j.at("kind").get<std::string>());
    head.dim = j.at("dim").get<std::size_t>();
    head.d_proj = j.at("d_proj").get<std::size_t>();
    head.class_names = j.at("class_names").get<std::vector<std::string>>();
    const auto& shapes = j.at("shapes");
    const auto& params = j.at("parameters");
    head.w = matrix_of(shapes.at("w"), params.at("w"));
    head.b = matrix_of(shapes.at("b"), params.at("b"));
    if (head.kind == HeadKind::kMlp) {
      head.w2 = matrix_of(shapes.at("w2"), params.at("w2"));
      head.b2 = matrix_of(shapes.at("b2"), params.at("b2"));
    }
    const auto c = static_cast<Eigen::Index>(head.n_classes());
    const auto out_rows = head.kind == HeadKind::kLinear ? head.w.rows() : head.w2.rows();
    if (head.n_classes() < 2 || out_rows != c || head.w.cols() != static_cast<Eigen::Index>(head.dim)) {
      throw DataError("head checkpoint: shapes are inconsistent with dim/class_names");
    }
    if (!head.parameters().allFinite()) throw DataError("head checkpoint: non-finite parameters");
    return head;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed head checkpoint: ") + e.what());
  }
}

void save_head(const TtfHead& head, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write head checkpoint " + path.string());
  out << head_to_json(head).dump() << '\n';
  if (!out) throw DataError("I/O failure writing " + path.string());
}

TtfHead load_head(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open head checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed head checkpoint: ") + e.what());
  }
  return head_from_json(j);
}

}  // namespace icl
