#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <unistd.h>

namespace icl::testing {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, seed));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

std::vector<std::string> numbered_ids(std::string_view prefix, std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu", i);
    ids.push_back(std::string(prefix) + buf);
  }
  return ids;
}

EmbeddingBank bank_from_layers(const std::vector<Eigen::MatrixXd>& layers, std::vector<std::string> ids) {
  const std::size_t n = ids.size();
  const std::size_t dim = layers.empty() ? 0 : static_cast<std::size_t>(layers.front().cols());
  std::vector<float> values;
  values.reserve(layers.size() * n * dim);
  for (const auto& m : layers)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d)
        values.push_back(static_cast<float>(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d))));
  return EmbeddingBank(layers.size(), dim, std::move(ids), std::move(values));
}

EmbeddingBank random_bank(std::size_t n_layers, std::size_t n_items, std::size_t dim, std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> layers;
  for (std::size_t l = 0; l < n_layers; ++l) {
    layers.push_back(random_matrix(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(dim), seed + 977 * l));
  }
  return bank_from_layers(layers, numbered_ids("item", n_items));
}

Corpus toy_bm25_corpus() {
  std::vector<DemonstrationRecord> r = {
      {"d1", "a b", "x", std::nullopt, TaskKind::kGeneration, {}},
      {"d2", "b c", "y", std::nullopt, TaskKind::kGeneration, {}},
      {"d3", "c c", "z", std::nullopt, TaskKind::kGeneration, {}},
  };
  return Corpus(std::move(r), "toy", TaskKind::kGeneration);
}

namespace {

constexpr std::size_t kBlobDim = 16;

/// Fills records and embedding rows for `n` labeled points drawn by `draw`.
template <typename Draw>
std::pair<Corpus, EmbeddingBank> labeled_split(std::string_view prefix, std::size_t n, std::size_t dim,
                                               std::mt19937_64& rng, Draw&& draw) {
  auto ids = numbered_ids(prefix, n);
  std::vector<DemonstrationRecord> records;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(dim));
    const bool positive = draw(rng, row);
    x.row(static_cast<Eigen::Index>(i)) = row.transpose();
    const std::string label = positive ? "pos" : "neg";
    records.push_back({ids[i], "point " + ids[i], label, label, TaskKind::kClassification, {}});
  }
  Corpus c(std::move(records), std::string(prefix), TaskKind::kClassification);
  return {std::move(c), bank_from_layers({x}, ids)};
}

}  // namespace

LabeledTask blobs_task(std::size_t n_demos, std::size_t n_tests, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto draw = [](std::mt19937_64& g, Eigen::VectorXd& row) {
    std::normal_distribution<double> nd;
    std::bernoulli_distribution coin(0.5);
    const bool positive = coin(g);
    const double y = positive ? 1.0 : -1.0;
    row[0] = y * (1.0 + std::abs(nd(g)));
    for (Eigen::Index d = 1; d < row.size(); ++d) row[d] = 3.0 * nd(g);
    return positive;
  };
  auto [demos, demo_bank] = labeled_split("demo", n_demos, kBlobDim, rng, draw);
  auto [tests, test_bank] = labeled_split("test", n_tests, kBlobDim, rng, draw);
  return {std::move(demos), std::move(demo_bank), std::move(tests), std::move(test_bank)};
}

LabeledTask xor_task(std::size_t n_demos, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto draw = [](std::mt19937_64& g, Eigen::VectorXd& row) {
    std::normal_distribution<double> nd;
    std::bernoulli_distribution coin(0.5);
    const double a = coin(g) ? 1.0 : -1.0;
    const double b = coin(g) ? 1.0 : -1.0;
    row[0] = 3.0 * a + 0.5 * nd(g);
    row[1] = 3.0 * b + 0.5 * nd(g);
    for (Eigen::Index d = 2; d < row.size(); ++d) row[d] = 0.5 * nd(g);
    return a * b > 0;
  };
  auto [demos, demo_bank] = labeled_split("xor", n_demos, kBlobDim, rng, draw);
  auto [tests, test_bank] = labeled_split("xort", 1, kBlobDim, rng, draw);
  return {std::move(demos), std::move(demo_bank), std::move(tests), std::move(test_bank)};
}

ConsentingPair consenting_pair(std::size_t n_items, std::size_t dim, std::uint64_t seed) {
  const auto base = random_matrix(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(dim), seed);
  std::vector<Eigen::Index> perm(n_items);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed + 1);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd shuffled(base.rows(), base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i) shuffled.row(i) = base.row(perm[static_cast<std::size_t>(i)]);

  ConsentingPair out;
  out.bank = bank_from_layers({base, base, shuffled}, numbered_ids("ex", n_items));
  const auto t = random_matrix(1, static_cast<Eigen::Index>(dim), seed + 2);
  std::vector<float> v(dim);
  for (std::size_t d = 0; d < dim; ++d) v[d] = static_cast<float>(t(0, static_cast<Eigen::Index>(d)));
  out.test_vecs = {v, v, v};
  return out;
}

Corpus topic_generation_corpus(std::size_t per_topic, std::uint64_t seed) {
  struct Topic {
    const char* noun;
    const char* command;
    std::vector<const char*> flags;
  };
  const std::vector<Topic> topics = {
      {"archive", "tar czf backup.tgz", {"--verbose", "--exclude cache", "-C src", "--gzip"}},
      {"directory", "mkdir -p build/out", {"-v", "--mode 755", "logs", "tmp"}},
      {"process", "kill -9 pid", {"-s TERM", "-l", "--signal HUP", "-q"}},
      {"package", "apt-get install nginx", {"-y", "--no-upgrade", "-q", "--reinstall"}},
      {"container", "docker run image", {"-d", "--rm", "-p 8080:80", "-it"}},
      {"branch", "git checkout main", {"-b feature", "--track", "-f", "--orphan"}},
      {"disk", "df -h mountpoint", {"-T", "--total", "-i", "-l"}},
      {"network", "ping host", {"-c 4", "-i 2", "-W 1", "-q"}},
      {"permission", "chmod 644 file", {"-R", "--verbose", "u+x", "--reference ref"}},
      {"service", "systemctl restart unit", {"--now", "--quiet", "enable", "status"}},
  };
  const std::vector<const char*> verbs = {"create", "show", "change", "remove", "list", "fix", "check", "update"};
  const std::vector<const char*> fillers = {"quickly", "on linux", "from the shell", "please", "today",
                                            "for my project", "safely", "again"};
  std::mt19937_64 rng(seed);
  std::vector<DemonstrationRecord> records;
  std::size_t n = 0;
  for (std::size_t i = 0; i < per_topic; ++i) {
    for (const auto& t : topics) {
      const char* verb = verbs[rng() % verbs.size()];
      const char* filler = fillers[rng() % fillers.size()];
      const char* flag = t.flags[rng() % t.flags.size()];
      DemonstrationRecord r;
      r.id = numbered_ids("g", n + 1).back();
      r.input = std::string("how do i ") + verb + " the " + t.noun + " " + filler;
      r.output = std::string(t.command) + " " + flag;
      r.task_kind = TaskKind::kGeneration;
      records.push_back(std::move(r));
      ++n;
    }
  }
  return Corpus(std::move(records), "shell", TaskKind::kGeneration);
}

RankedList brute_force_rank(const EmbeddingBank& bank, std::size_t layer, std::span<const float> q,
                            const IdSet& exclude) {
  RankedList all;
  const auto view = bank.layer(layer);
  for (std::size_t i = 0; i < bank.n_items(); ++i) {
    const auto& id = bank.item_ids()[i];
    if (exclude.count(id)) continue;
    double dot = 0, nq = 0, nr = 0;
    const auto row = view.row(i);
    for (std::size_t d = 0; d < q.size(); ++d) {
      dot += static_cast<double>(q[d]) * row[d];
      nq += static_cast<double>(q[d]) * q[d];
      nr += static_cast<double>(row[d]) * row[d];
    }
    const double s = (nq == 0 || nr == 0) ? 0.0 : dot / std::sqrt(nq * nr);
    all.push_back({id, s});
  }
  std::sort(all.begin(), all.end(), ranks_before);
  return all;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("icl_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace icl::testing
