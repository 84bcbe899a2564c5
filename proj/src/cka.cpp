#include "icl/cka.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "icl/corpus.hpp"
#include "icl/error.hpp"
#include "icl/parallel.hpp"
#include "icl/retrieval.hpp"

namespace icl {
namespace {

constexpr double kDegenerateRatio = 1e-10;

/// H K H for symmetric K.
Matrix double_center(const Matrix& k) {
  const Eigen::VectorXd row_mean = k.rowwise().mean();
  const Eigen::RowVectorXd col_mean = k.colwise().mean();
  const double grand = k.mean();
  Matrix c = k;
  c.colwise() -= row_mean;
  c.rowwise() -= col_mean;
  c.array() += grand;
  return c;
}

Matrix center_columns(const Matrix& x) {
  Matrix c = x;
  c.rowwise() -= x.colwise().mean();
  return c;
}

void check_kernel(const Matrix& k, const char* name) {
  if (k.rows() != k.cols()) throw ArgumentError(std::string("hsic: ") + name + " is not square");
}

}  // namespace

double hsic(const Matrix& ka, const Matrix& kb) {
  check_kernel(ka, "Ka");
  check_kernel(kb, "Kb");
  if (ka.rows() != kb.rows()) throw ArgumentError("hsic: kernel sizes differ");
  const auto n = ka.rows();
  if (n < 2) throw ArgumentError("hsic: need at least 2 samples");
  // tr(Ka H Kb H) = tr((H Ka H) Kb) = sum_ij (H Ka H)_ij (Kb)_ji
  const Matrix ca = double_center(ka);
  const double tr = (ca.array() * kb.transpose().array()).sum();
  const double scale = static_cast<double>(n - 1);
  return tr / (scale * scale);
}

double cka(const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows()) throw ArgumentError("cka: sample counts differ");
  if (xa.rows() < 2) throw ArgumentError("cka: need at least 2 samples");
  const Matrix ka = xa * xa.transpose();
  const Matrix kb = xb * xb.transpose();
  const Matrix ca = double_center(ka);
  const Matrix cb = double_center(kb);
  if (ca.norm() <= kDegenerateRatio * ka.norm()) {
    throw DegenerateRepresentationError(-1, "cka: first representation is degenerate (centered kernel is zero)");
  }
  if (cb.norm() <= kDegenerateRatio * kb.norm()) {
    throw DegenerateRepresentationError(-1, "cka: second representation is degenerate (centered kernel is zero)");
  }
  const double ab = hsic(ka, kb);
  const double aa = hsic(ka, ka);
  const double bb = hsic(kb, kb);
  return std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
}

double cka_features(const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows()) throw ArgumentError("cka: sample counts differ");
  if (xa.rows() < 2) throw ArgumentError("cka: need at least 2 samples");
  const Matrix a = center_columns(xa);
  const Matrix b = center_columns(xb);
  const Matrix aa = a.transpose() * a;
  const Matrix bb = b.transpose() * b;
  if (aa.norm() <= kDegenerateRatio * (xa.transpose() * xa).norm()) {
    throw DegenerateRepresentationError(-1, "cka: first representation is degenerate (centered kernel is zero)");
  }
  if (bb.norm() <= kDegenerateRatio * (xb.transpose() * xb).norm()) {
    throw DegenerateRepresentationError(-1, "cka: second representation is degenerate (centered kernel is zero)");
  }
  const double cross = (a.transpose() * b).squaredNorm();
  return std::clamp(cross / (aa.norm() * bb.norm()), 0.0, 1.0);
}

std::vector<std::string> sample_cka_ids(const EmbeddingBank& bank, std::size_t n_samples, std::uint64_t seed) {
  const std::int64_t want = static_cast<std::int64_t>(std::min(n_samples, bank.n_items()));
  auto split = sample_indices(bank.n_items(), std::span<const std::int64_t>(&want, 1), seed);
  std::vector<std::string> ids;
  for (auto i : split.subsets.front()) ids.push_back(bank.item_ids()[i]);
  return ids;
}

CkaMatrix layer_cka_matrix(const EmbeddingBank& bank, const std::vector<std::string>& sample_ids, std::size_t jobs) {
  const auto n = sample_ids.size();
  if (n < 2) throw ArgumentError("layer_cka_matrix: need at least 2 samples");
  const auto n_layers = bank.n_layers();
  const auto dim = bank.dim();

  std::vector<std::size_t> rows;
  rows.reserve(n);
  for (const auto& id : sample_ids) rows.push_back(bank.row(id));

  // Either centered Gram matrices (n x n) or centered features (n x dim),
  // whichever is smaller; both give the same HSIC.
  const bool use_gram = n <= dim;
  std::vector<Matrix> reps(n_layers);
  std::vector<double> self_norm(n_layers);
  parallel_for(n_layers, jobs, [&](std::size_t l) {
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    const auto view = bank.layer(l);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = view.row(rows[i]);
      for (std::size_t d = 0; d < dim; ++d) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = r[d];
    }
    const Matrix xc = center_columns(x);
    const Matrix raw_gram = x.transpose() * x;
    const Matrix gram = xc.transpose() * xc;
    if (gram.norm() <= kDegenerateRatio * raw_gram.norm() || raw_gram.norm() == 0.0) {
      throw DegenerateRepresentationError(static_cast<int>(l), "layer " + std::to_string(l) +
                                                                   " is degenerate: its centered kernel is zero");
    }
    self_norm[l] = gram.norm();
    reps[l] = use_gram ? Matrix(xc * xc.transpose()) : xc;
  });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n_layers; ++i) {
    for (std::size_t j = i + 1; j < n_layers; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> cross(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    const double num = use_gram ? (reps[i].array() * reps[j].array()).sum()
                                : (reps[i].transpose() * reps[j]).squaredNorm();
    cross[p] = std::clamp(num / (self_norm[i] * self_norm[j]), 0.0, 1.0);
  });

  CkaMatrix out;
  out.n_samples = n;
  out.values = Matrix::Identity(static_cast<Eigen::Index>(n_layers), static_cast<Eigen::Index>(n_layers));
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cross[p];
    out.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = cross[p];
  }
  return out;
}

CkaMatrix min_max_normalized(const CkaMatrix& m) {
  CkaMatrix out = m;
  out.normalized = true;
  if (m.values.size() == 0) return out;
  const double lo = m.values.minCoeff();
  const double hi = m.values.maxCoeff();
  if (hi > lo) {
    out.values = (m.values.array() - lo) / (hi - lo);
  } else {
    out.values.setZero();
  }
  return out;
}

nlohmann::json cka_to_json(const CkaMatrix& m) {
  nlohmann::ordered_json j;
  j["n_layers"] = m.n_layers();
  j["n_samples"] = m.n_samples;
  j["normalized"] = m.normalized;
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < m.values.cols(); ++k) row.push_back(m.values(i, k));
    rows.push_back(row);
  }
  j["values"] = rows;
  return j;
}

CkaMatrix cka_from_json(const nlohmann::json& j) {
  try {
    CkaMatrix m;
    const auto n = j.at("n_layers").get<std::size_t>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.normalized = j.at("normalized").get<bool>();
    const auto& rows = j.at("values");
    if (rows.size() != n) throw DataError("CKA report: values has wrong row count");
    m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw DataError("CKA report: values is not square");
      for (std::size_t k = 0; k < n; ++k) {
        m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed CKA report: ") + e.what());
  }
}

std::string cka_to_csv(const CkaMatrix& m) {
  std::ostringstream out;
  out.precision(10);
  out << "layer";
  for (Eigen::Index k = 0; k < m.values.cols(); ++k) out << ",L" << k;
  out << '\n';
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    out << 'L' << i;
    for (Eigen::Index k = 0; k < m.values.cols(); ++k) out << ',' << m.values(i, k);
    out << '\n';
  }
  return out.str();
}

namespace {

using Points = std::vector<std::vector<double>>;

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct Clustering {
  std::vector<std::size_t> assignment;
  Points centroids;
  double inertia = 0.0;
};

Points kmeanspp_init(const Points& pts, std::size_t k, std::mt19937_64& rng) {
  const auto n = pts.size();
  std::vector<bool> chosen(n, false);
  Points centers;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  centers.push_back(pts[first]);
  chosen[first] = true;
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) d2[i] = std::min(d2[i], sq_dist(pts[i], c));
      if (chosen[i]) d2[i] = 0.0;
      total += d2[i];
    }
    std::size_t next = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        next = i;
        target -= d2[i];
        if (target <= 0.0) break;
      }
    } else {
      for (std::size_t i = 0; i < n && next == n; ++i) {
        if (!chosen[i]) next = i;
      }
    }
    chosen[next] = true;
    centers.push_back(pts[next]);
  }
  return centers;
}

void recompute_centroids(const Points& pts, Clustering& c, std::size_t k) {
  const auto dim = pts.front().size();
  Points sums(k, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++counts[c.assignment[i]];
    for (std::size_t d = 0; d < dim; ++d) sums[c.assignment[i]][d] += pts[i][d];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    for (auto& v : sums[j]) v /= static_cast<double>(counts[j]);
    c.centroids[j] = std::move(sums[j]);
  }
}

/// Moves the point farthest from its centroid (taken from a cluster with more
/// than one member) into each empty cluster.
void fill_empty_clusters(const Points& pts, Clustering& c, std::size_t k) {
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    for (auto a : c.assignment) ++counts[a];
    auto empty = std::find(counts.begin(), counts.end(), std::size_t{0});
    if (empty == counts.end()) return;
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (counts[c.assignment[i]] < 2) continue;
      const double d = sq_dist(pts[i], c.centroids[c.assignment[i]]);
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    const auto j = static_cast<std::size_t>(empty - counts.begin());
    c.assignment[best] = j;
    c.centroids[j] = pts[best];
    recompute_centroids(pts, c, k);
  }
}

Clustering lloyd(const Points& pts, std::size_t k, std::size_t max_iter, std::mt19937_64& rng) {
  Clustering c;
  c.centroids = kmeanspp_init(pts, k, rng);
  c.assignment.assign(pts.size(), k);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(pts[i], c.centroids[0]);
      for (std::size_t j = 1; j < k; ++j) {
        const double d = sq_dist(pts[i], c.centroids[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (c.assignment[i] != best) {
        c.assignment[i] = best;
        changed = true;
      }
    }
    fill_empty_clusters(pts, c, k);
    recompute_centroids(pts, c, k);
    if (!changed) break;
  }
  c.inertia = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) c.inertia += sq_dist(pts[i], c.centroids[c.assignment[i]]);
  return c;
}

}  // namespace

LayerSelection cluster_layers(const CkaMatrix& s, std::size_t n_l, std::uint64_t seed, KMeansOptions options) {
  const auto n_layers = s.n_layers();
  if (n_l < 1 || n_l > n_layers) {
    throw ArgumentError("cluster_layers: n_l must be in [1, " + std::to_string(n_layers) + "], got " +
                        std::to_string(n_l));
  }
  Points pts(n_layers, std::vector<double>(n_layers));
  for (std::size_t i = 0; i < n_layers; ++i) {
    for (std::size_t j = 0; j < n_layers; ++j) {
      pts[i][j] = s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }

  std::mt19937_64 rng(seed);
  Clustering best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, options.restarts); ++r) {
    auto c = lloyd(pts, n_l, options.max_iterations, rng);
    if (!have || c.inertia < best.inertia) {
      best = std::move(c);
      have = true;
    }
  }

  std::vector<std::size_t> medoid(n_l, n_layers);
  std::vector<double> medoid_d(n_l, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto j = best.assignment[i];
    const double d = sq_dist(pts[i], best.centroids[j]);
    if (d < medoid_d[j]) {
      medoid_d[j] = d;
      medoid[j] = i;
    }
  }

  LayerSelection sel;
  sel.n_l = n_l;
  sel.inertia = best.inertia;
  sel.layers = medoid;
  std::sort(sel.layers.begin(), sel.layers.end());
  sel.cluster_assignment.resize(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto m = medoid[best.assignment[i]];
    sel.cluster_assignment[i] =
        static_cast<std::size_t>(std::lower_bound(sel.layers.begin(), sel.layers.end(), m) - sel.layers.begin());
  }
  return sel;
}

nlohmann::json selection_to_json(const LayerSelection& sel) {
  nlohmann::ordered_json j;
  j["n_l"] = sel.n_l;
  j["layers"] = sel.layers;
  j["cluster_assignment"] = sel.cluster_assignment;
  j["inertia"] = sel.inertia;
  return j;
}

double layer_retrieval_accuracy(const EmbeddingBank& bank, const std::vector<QueryGold>& pairs, std::size_t layer,
                                std::size_t k) {
  if (pairs.empty()) throw ArgumentError("layer_retrieval_accuracy: empty pair list");
  if (k < 1) throw ArgumentError("layer_retrieval_accuracy: k must be >= 1");
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (!bank.contains(p.gold_id)) throw DataError("id \"" + p.gold_id + "\" is not in the embedding bank");
    auto ranked = dense_topk(bank, layer, bank.vector(layer, p.query_id), static_cast<std::int64_t>(k), {p.query_id});
    if (std::any_of(ranked.begin(), ranked.end(), [&](const RankedEntry& e) { return e.id == p.gold_id; })) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace icl
