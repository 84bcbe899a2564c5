#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "icl/error.hpp"
#include "icl/ttf.hpp"

namespace icl {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

TtfHead linear_head(MatrixXd w, VectorXd b) {
  TtfHead h;
  h.kind = HeadKind::kLinear;
  h.dim = static_cast<std::size_t>(w.cols());
  for (Eigen::Index c = 0; c < w.rows(); ++c) h.class_names.push_back("c" + std::to_string(c));
  h.w = std::move(w);
  h.b = std::move(b);
  return h;
}

TEST(Head, KindNames) {
  EXPECT_EQ(parse_head_kind("linear"), HeadKind::kLinear);
  EXPECT_EQ(parse_head_kind("mlp"), HeadKind::kMlp);
  EXPECT_EQ(to_string(HeadKind::kMlp), "mlp");
  EXPECT_THROW(parse_head_kind("svm"), ArgumentError);
}

TEST(Head, ProbabilityHandValues) {
  VectorXd b(2);
  b << 1, -1;
  auto h = linear_head(MatrixXd::Zero(2, 3), b);
  const float z[] = {0.5f, -2.f, 9.f};
  auto p = predict_proba(h, z);
  EXPECT_NEAR(p[0], 0.8808, 1e-4);
  EXPECT_NEAR(p[1], 0.1192, 1e-4);

  auto u = linear_head(testing::random_matrix(4, 3, 1), VectorXd::Zero(4));
  const float zero[] = {0, 0, 0};
  auto q = predict_proba(u, zero);
  for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(q[c], 0.25, 1e-12);
}

TEST(Head, ArgmaxIgnoresPositiveScaling) {
  auto h = linear_head(testing::random_matrix(5, 6, 2), VectorXd::Zero(5));
  auto zs = testing::random_matrix(30, 6, 3);
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    std::vector<float> z(6), sz(6);
    for (int d = 0; d < 6; ++d) {
      z[static_cast<std::size_t>(d)] = static_cast<float>(zs(i, d));
      sz[static_cast<std::size_t>(d)] = 4.0f * z[static_cast<std::size_t>(d)];
    }
    Eigen::Index a, b;
    predict_proba(h, z).maxCoeff(&a);
    predict_proba(h, sz).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

TEST(Head, DimensionChecked) {
  auto h = init_head(HeadKind::kLinear, 4, {"a", "b"}, 8, 0);
  const float z[] = {1, 2, 3};
  EXPECT_THROW(predict_proba(h, z), ArgumentError);
  EXPECT_THROW(init_head(HeadKind::kLinear, 4, {"a"}, 8, 0), DataError);
}

TEST(Head, ParameterFlatteningRoundTrips) {
  for (auto kind : {HeadKind::kLinear, HeadKind::kMlp}) {
    auto h = init_head(kind, 5, {"a", "b", "c"}, 7, 4);
    const auto p = h.parameters();
    ASSERT_EQ(static_cast<std::size_t>(p.size()), h.n_params());
    auto g = h;
    g.set_parameters(VectorXd::Zero(p.size()));
    g.set_parameters(p);
    EXPECT_EQ(g.parameters(), p);
    EXPECT_THROW(g.set_parameters(VectorXd::Zero(p.size() + 1)), ArgumentError);
  }
  EXPECT_EQ(init_head(HeadKind::kLinear, 5, {"a", "b", "c"}, 7, 4).n_params(), 3u * 5 + 3);
  EXPECT_EQ(init_head(HeadKind::kMlp, 5, {"a", "b", "c"}, 7, 4).n_params(), 7u * 5 + 7 + 3 * 7 + 3);
}

// Mean cross-entropy straight from the definition.
double ce_oracle(const TtfHead& h, const MatrixXd& z, const std::vector<std::size_t>& labels) {
  double total = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    std::vector<float> row(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index d = 0; d < z.cols(); ++d) row[static_cast<std::size_t>(d)] = static_cast<float>(z(i, d));
    const VectorXd lg = head_logits(h, row);
    double s = 0;
    for (Eigen::Index c = 0; c < lg.size(); ++c) s += std::exp(lg[c]);
    total += std::log(s) - lg[static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])];
  }
  return total / static_cast<double>(z.rows());
}

class Gradient : public ::testing::TestWithParam<HeadKind> {};

TEST_P(Gradient, MatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto head = init_head(GetParam(), 4, {"a", "b", "c"}, 5, seed, 0.7);
    // Inputs are float-exact so the oracle sees the same z.
    MatrixXd z = testing::random_matrix(6, 4, 10 + seed).cast<float>().cast<double>();
    std::vector<std::size_t> labels = {0, 1, 2, 2, 1, 0};
    auto ce = cross_entropy_grad(head, z, labels);
    EXPECT_NEAR(ce.loss, ce_oracle(head, z, labels), 1e-9);
    const VectorXd p = head.parameters();
    VectorXd fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      auto hp = head, hm = head;
      VectorXd a = p, b = p;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      hp.set_parameters(a);
      hm.set_parameters(b);
      fd[i] = (cross_entropy_grad(hp, z, labels).loss - cross_entropy_grad(hm, z, labels).loss) / 2e-6;
    }
    EXPECT_LE((ce.grad - fd).norm() / (ce.grad.norm() + fd.norm()), 1e-4) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, Gradient, ::testing::Values(HeadKind::kLinear, HeadKind::kMlp));

double accuracy_on(const TtfHead& head, const testing::LabeledTask& t) {
  std::size_t hit = 0;
  for (const auto& r : t.tests.records()) {
    Eigen::Index c;
    predict_proba(head, t.test_bank.vector(0, r.id)).maxCoeff(&c);
    hit += head.class_names[static_cast<std::size_t>(c)] == *r.label;
  }
  return static_cast<double>(hit) / static_cast<double>(t.tests.size());
}

TEST(Train, LinearSeparatesBlobs) {
  auto t = testing::blobs_task();
  auto res = train_head(t.demo_bank, 0, t.demos, HeadKind::kLinear, TtfTrainConfig{});
  EXPECT_GE(res.holdout_accuracy, 0.99);
  EXPECT_GE(accuracy_on(res.head, t), 0.95);
  EXPECT_EQ(res.trace.size(), 20u);
  EXPECT_EQ(res.holdout_ids.size(), 50u);
  EXPECT_EQ(res.trace[res.best_epoch - 1].holdout_accuracy, res.holdout_accuracy);
  for (const auto& e : res.trace) EXPECT_LE(e.holdout_accuracy, res.holdout_accuracy);
}

TEST(Train, XorNeedsTheHiddenLayer) {
  auto t = testing::xor_task(500);
  auto lin = train_head(t.demo_bank, 0, t.demos, HeadKind::kLinear, TtfTrainConfig{});
  auto mlp = train_head(t.demo_bank, 0, t.demos, HeadKind::kMlp, TtfTrainConfig{});
  EXPECT_GE(mlp.holdout_accuracy, 0.95);
  EXPECT_GE(accuracy_on(mlp.head, t), 0.95);
  EXPECT_LE(accuracy_on(lin.head, t), 0.8);
  EXPECT_GT(accuracy_on(mlp.head, t) - accuracy_on(lin.head, t), 0.15);
}

std::string labeled_line(const std::string& id, const std::string& label) {
  return "{\"id\":\"" + id + "\",\"input\":\"x " + id + "\",\"output\":\"" + label + "\",\"label\":\"" + label + "\"}\n";
}

TEST(Train, DataErrors) {
  auto bank = testing::random_bank(1, 6, 3, 1);
  std::string one_class, missing;
  for (const auto& id : bank.item_ids()) one_class += labeled_line(id, "yes");
  EXPECT_THROW(train_head(bank, 0, parse_corpus(one_class, TaskKind::kClassification), HeadKind::kLinear, {}),
               DataError);
  for (std::size_t i = 0; i < 6; ++i) missing += labeled_line(bank.item_ids()[i], i % 2 ? "a" : "b");
  missing += labeled_line("ghost", "a");
  EXPECT_THROW(train_head(bank, 0, parse_corpus(missing, TaskKind::kClassification), HeadKind::kLinear, {}),
               DataError);
  EXPECT_THROW(train_head(bank, 0, testing::topic_generation_corpus(2), HeadKind::kLinear, {}), ArgumentError);
  TtfTrainConfig bad;
  bad.holdout_frac = 1.0;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(Train, SeededRunsAreIdentical) {
  auto t = testing::blobs_task(200, 10, 3);
  TtfTrainConfig cfg;
  cfg.seed = 8;
  auto a = train_head(t.demo_bank, 0, t.demos, HeadKind::kMlp, cfg);
  auto b = train_head(t.demo_bank, 0, t.demos, HeadKind::kMlp, cfg);
  EXPECT_EQ(a.head.parameters(), b.head.parameters());
  EXPECT_EQ(a.holdout_ids, b.holdout_ids);
  cfg.seed = 9;
  auto c = train_head(t.demo_bank, 0, t.demos, HeadKind::kMlp, cfg);
  EXPECT_NE(a.head.parameters(), c.head.parameters());
}

TEST(Representation, HandMlp) {
  auto h = init_head(HeadKind::kMlp, 2, {"a", "b"}, 2, 0);
  h.w.resize(2, 2);
  h.w << 1, -1, 0, 2;
  h.b = VectorXd(2);
  h.b << 0, -1;
  const float z[] = {1, 2};
  auto r = ttf_representation(h, z);
  ASSERT_EQ(r.size(), 2);
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 3.0);
}

TEST(Representation, LinearIsAProbability) {
  auto h = init_head(HeadKind::kLinear, 6, {"a", "b", "c"}, 4, 3, 1.0);
  auto zs = testing::random_matrix(20, 6, 4);
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    std::vector<float> z(6);
    for (int d = 0; d < 6; ++d) z[static_cast<std::size_t>(d)] = static_cast<float>(zs(i, d));
    auto r = ttf_representation(h, z);
    EXPECT_NEAR(r.sum(), 1.0, 1e-12);
    EXPECT_GE(r.minCoeff(), 0.0);
    EXPECT_EQ(r, predict_proba(h, z));
  }
}

TEST(Retrieve, ZeroHeadFallsBackToIdOrder) {
  auto bank = testing::random_bank(1, 12, 4, 5);
  for (auto kind : {HeadKind::kLinear, HeadKind::kMlp}) {
    auto h = init_head(kind, 4, {"a", "b"}, 3, 0);
    h.set_parameters(VectorXd::Zero(static_cast<Eigen::Index>(h.n_params())));
    auto r = ttf_retrieve(h, bank, 0, bank.vector(0, std::size_t{0}), 12);
    ASSERT_EQ(r.size(), 12u);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].id, bank.item_ids()[i]);
  }
}

double cos_oracle(const VectorXd& a, const VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  return na == 0 || nb == 0 ? 0.0 : a.dot(b) / (na * nb);
}

TEST(Retrieve, MatchesBruteForce) {
  auto bank = testing::random_bank(2, 150, 6, 6);
  for (auto kind : {HeadKind::kLinear, HeadKind::kMlp}) {
    auto h = init_head(kind, 6, {"a", "b", "c"}, 5, 2, 0.8);
    const auto q = bank.vector(1, std::size_t{7});
    const VectorXd rq = ttf_representation(h, q);
    std::vector<RankedEntry> all;
    for (std::size_t j = 0; j < bank.n_items(); ++j) {
      if (j == 7) continue;
      all.push_back({bank.item_ids()[j], cos_oracle(rq, ttf_representation(h, bank.vector(1, j)))});
    }
    std::sort(all.begin(), all.end(), ranks_before);
    auto got = ttf_retrieve(h, bank, 1, q, 40, {bank.item_ids()[7]});
    ASSERT_EQ(got.size(), 40u);
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].id, all[i].id);
      EXPECT_NEAR(got[i].score, all[i].score, 1e-9);
    }
    EXPECT_THROW(ttf_retrieve(h, bank, 1, q, 0), ArgumentError);
  }
}

TEST(Retrieve, TopHitsShareThePredictedClass) {
  auto t = testing::blobs_task();
  auto res = train_head(t.demo_bank, 0, t.demos, HeadKind::kLinear, TtfTrainConfig{});
  std::size_t agree = 0, total = 0;
  for (const auto& r : t.tests.records()) {
    const auto q = t.test_bank.vector(0, r.id);
    Eigen::Index cq;
    predict_proba(res.head, q).maxCoeff(&cq);
    for (const auto& e : ttf_retrieve(res.head, t.demo_bank, 0, q, 5)) {
      Eigen::Index ce;
      predict_proba(res.head, t.demo_bank.vector(0, e.id)).maxCoeff(&ce);
      agree += cq == ce;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.95);
}

TEST(Checkpoint, RoundTripIsExact) {
  testing::TempDir dir;
  for (auto kind : {HeadKind::kLinear, HeadKind::kMlp}) {
    auto h = init_head(kind, 7, {"x", "y", "z"}, 6, 11, 0.3);
    save_head(h, dir / "h.json");
    auto back = load_head(dir / "h.json");
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(back.class_names, h.class_names);
    EXPECT_EQ(back.parameters(), h.parameters());
    const float z[] = {0.1f, 0.2f, -0.3f, 1.f, 2.f, 0.f, -1.f};
    EXPECT_EQ(predict_proba(back, z), predict_proba(h, z));
  }
  std::ofstream(dir / "bad.json") << "{\"kind\":\"linear\"}";
  EXPECT_THROW(load_head(dir / "bad.json"), DataError);
  EXPECT_THROW(load_head(dir / "none.json"), DataError);
}

}  // namespace
}  // namespace icl
