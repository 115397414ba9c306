#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mvitime/contrastive.hpp"

using namespace mvitime::contrastive;
using mvitime::Rng;

namespace {

// Independent scalar implementation straight from the definition; no
// shared code with the library version.
double naive_cos(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double ntxent_oracle(const Eigen::MatrixXd& v, const std::vector<std::size_t>& pairing,
                     double tau) {
  const Eigen::Index m = v.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto p = static_cast<Eigen::Index>(pairing[static_cast<std::size_t>(i)]);
    const double num = std::exp(naive_cos(v.row(i), v.row(p)) / tau);
    double den = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) den += std::exp(naive_cos(v.row(i), v.row(j)) / tau);
    }
    total += -std::log(num / den);
  }
  return total / static_cast<double>(m);
}

EmbeddingBatch random_batch(int n_pairs, int d, std::uint64_t seed) {
  EmbeddingBatch b;
  b.vectors.resize(2 * n_pairs, d);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < b.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) b.vectors(i, j) = rng.normal();
  }
  for (int i = 0; i < n_pairs; ++i) {
    b.pairing.push_back(static_cast<std::size_t>(2 * i + 1));
    b.pairing.push_back(static_cast<std::size_t>(2 * i));
  }
  return b;
}

}  // namespace

TEST_CASE("cosine similarity hand values") {
  Eigen::VectorXd e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  CHECK(cosine_similarity(e1, e1) == doctest::Approx(1.0));
  CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));
  CHECK(cosine_similarity(e1, Eigen::VectorXd(-e1)) == doctest::Approx(-1.0));

  Eigen::VectorXd x(3), y(3);
  x << 1, 2, 3;
  y << 4, 5, 6;
  // 32 / sqrt(14 * 77)
  CHECK(cosine_similarity(x, y) == doctest::Approx(0.9746318461970762).epsilon(1e-12));
  // scale invariance
  CHECK(cosine_similarity(Eigen::VectorXd(3.0 * x), y) ==
        doctest::Approx(cosine_similarity(x, y)).epsilon(1e-12));
}

TEST_CASE("cosine similarity rejects zero vectors and mismatched sizes") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd x(3);
  x << 1, 2, 3;
  CHECK_THROWS_AS(cosine_similarity(z, x), ZeroNorm);
  CHECK_THROWS_AS(cosine_similarity(x, z), ZeroNorm);
  Eigen::VectorXd y(2);
  y << 1, 2;
  CHECK_THROWS_AS(cosine_similarity(x, y), std::invalid_argument);
}

TEST_CASE("similarity matrix is symmetric with unit diagonal") {
  auto b = random_batch(4, 6, 10);
  auto s = similarity_matrix(b);
  REQUIRE(s.rows() == 8);
  for (Eigen::Index i = 0; i < 8; ++i) {
    CHECK(s(i, i) == doctest::Approx(1.0).epsilon(1e-12));
    for (Eigen::Index j = 0; j < 8; ++j) {
      CHECK(s(i, j) == doctest::Approx(s(j, i)).epsilon(1e-12));
      CHECK(s(i, j) >= -1.0 - 1e-12);
      CHECK(s(i, j) <= 1.0 + 1e-12);
      CHECK(s(i, j) == doctest::Approx(naive_cos(b.vectors.row(i), b.vectors.row(j))).epsilon(1e-12));
    }
  }
}

TEST_CASE("positive target marks exactly the paired entries") {
  std::vector<std::size_t> pairing = {1, 0, 3, 2};
  auto g = positive_target(pairing);
  REQUIRE(g.rows() == 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(g.row(i).sum() == 1);
    CHECK(g.col(i).sum() == 1);
    CHECK(g(i, i) == 0);
  }
  CHECK(g(0, 1) == 1);
  CHECK(g(2, 3) == 1);
  CHECK(g == g.transpose().eval());
  CHECK_THROWS_AS(positive_target({0, 1}), InvalidPairing);
  CHECK_THROWS_AS(positive_target({1, 0, 1}), InvalidPairing);
}

TEST_CASE("batch validation rejects malformed pairings") {
  auto b = random_batch(2, 3, 3);
  SUBCASE("ok") { CHECK_NOTHROW(b.validate()); }
  SUBCASE("fixed point") {
    b.pairing = {0, 1, 3, 2};
    CHECK_THROWS_AS(b.validate(), InvalidPairing);
  }
  SUBCASE("not an involution") {
    b.pairing = {1, 2, 3, 0};
    CHECK_THROWS_AS(b.validate(), InvalidPairing);
  }
  SUBCASE("index out of range") {
    b.pairing = {1, 0, 3, 9};
    CHECK_THROWS_AS(b.validate(), InvalidPairing);
  }
  SUBCASE("size mismatch") {
    b.pairing = {1, 0};
    CHECK_THROWS_AS(b.validate(), InvalidPairing);
  }
  SUBCASE("non-finite entry") {
    b.vectors(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(b.validate(), InvalidPairing);
  }
  SUBCASE("dimension below 2") {
    EmbeddingBatch one;
    one.vectors = Eigen::MatrixXd::Ones(4, 1);
    one.pairing = {1, 0, 3, 2};
    CHECK_THROWS_AS(one.validate(), InvalidPairing);
  }
}

TEST_CASE("NT-Xent loss matches a brute-force oracle on random batches") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    auto b = random_batch(3 + static_cast<int>(seed), 5, seed);
    for (double tau : {0.1, 0.5, 1.0}) {
      auto r = nt_xent_loss(b, tau);
      CHECK(r.loss == doctest::Approx(ntxent_oracle(b.vectors, b.pairing, tau)).epsilon(1e-10));
    }
  }
}

TEST_CASE("NT-Xent gradient matches central finite differences") {
  auto b = random_batch(3, 4, 77);
  const double tau = 0.5;
  auto r = nt_xent_loss(b, tau);
  REQUIRE(r.grad.rows() == b.vectors.rows());
  REQUIRE(r.grad.cols() == b.vectors.cols());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < b.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.vectors.cols(); ++j) {
      const double x0 = b.vectors(i, j);
      b.vectors(i, j) = x0 + h;
      const double fp = ntxent_oracle(b.vectors, b.pairing, tau);
      b.vectors(i, j) = x0 - h;
      const double fm = ntxent_oracle(b.vectors, b.pairing, tau);
      b.vectors(i, j) = x0;
      const double fd = (fp - fm) / (2 * h);
      CHECK(helpers::rel_err(fd, r.grad(i, j)) < 1e-5);
    }
  }
}

TEST_CASE("degenerate batch with identical rows gives log(2n-1) and zero gradient") {
  EmbeddingBatch b;
  b.vectors = Eigen::MatrixXd::Ones(8, 3);
  b.pairing = {1, 0, 3, 2, 5, 4, 7, 6};
  auto r = nt_xent_loss(b, 0.5);
  CHECK(r.loss == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  CHECK(r.grad.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("aligned positives with orthogonal negatives beat the uniform loss") {
  // Pairs along distinct axes: positives at cos=1, negatives at cos=0.
  EmbeddingBatch b;
  b.vectors = Eigen::MatrixXd::Zero(8, 4);
  for (int p = 0; p < 4; ++p) {
    b.vectors(2 * p, p) = 1.0;
    b.vectors(2 * p + 1, p) = 2.0;  // same direction, different norm
    b.pairing.push_back(static_cast<std::size_t>(2 * p + 1));
    b.pairing.push_back(static_cast<std::size_t>(2 * p));
  }
  auto good = nt_xent_loss(b, 0.5);
  CHECK(good.loss < std::log(7.0));
}

TEST_CASE("NT-Xent parameter validation") {
  auto b = random_batch(3, 4, 5);
  CHECK_THROWS_AS(nt_xent_loss(b, 0.0), NonPositiveTemperature);
  CHECK_THROWS_AS(nt_xent_loss(b, -1.0), NonPositiveTemperature);
  auto tiny = random_batch(1, 4, 5);
  CHECK_THROWS_AS(nt_xent_loss(tiny, 0.5), InvalidPairing);
}

TEST_CASE("PCA matches an independent Jacobi eigensolver") {
  const int m = 24, p = 6, k = 4;
  Rng rng(31);
  Eigen::MatrixXd x(m, p);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal() * (j + 1) + j;

  auto basis = pca_fit(x, k);
  REQUIRE(basis.components.rows() == p);
  REQUIRE(basis.components.cols() == k);
  CHECK_FALSE(basis.rank_deficient);

  // Mean.
  for (int j = 0; j < p; ++j) CHECK(basis.mean(j) == doctest::Approx(x.col(j).mean()).epsilon(1e-12));

  // Covariance of centered data, eigen-decomposed by the oracle.
  Eigen::MatrixXd c = x.rowwise() - basis.mean.transpose();
  Eigen::MatrixXd cov = c.transpose() * c / double(m - 1);
  std::vector<std::vector<double>> a(p, std::vector<double>(p));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a[i][j] = cov(i, j);
  std::vector<double> evals;
  std::vector<std::vector<double>> evecs;
  helpers::jacobi_eigen(a, evals, evecs);
  std::vector<int> idx(p);
  for (int i = 0; i < p; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int u, int v) { return evals[u] > evals[v]; });

  for (int c2 = 0; c2 < k; ++c2) {
    CHECK(basis.explained_variance(c2) == doctest::Approx(evals[idx[c2]]).epsilon(1e-8));
    // Same direction up to sign.
    double dot = 0;
    for (int r2 = 0; r2 < p; ++r2) dot += basis.components(r2, c2) * evecs[r2][idx[c2]];
    CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-8));
  }
  // Non-increasing spectrum, orthonormal columns.
  for (int c2 = 1; c2 < k; ++c2) {
    CHECK(basis.explained_variance(c2) <= basis.explained_variance(c2 - 1) + 1e-12);
  }
  Eigen::MatrixXd gram = basis.components.transpose() * basis.components;
  CHECK((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("PCA flags rank deficiency and truncates") {
  // 10 rows living in a 2-D subspace of R^5.
  Rng rng(9);
  Eigen::MatrixXd basis2(2, 5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) basis2(i, j) = rng.normal();
  Eigen::MatrixXd coef(10, 2);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 2; ++j) coef(i, j) = rng.normal();
  Eigen::MatrixXd x = coef * basis2;

  auto b = pca_fit(x, 4);
  CHECK(b.rank_deficient);
  CHECK(b.components.cols() == 2);

  auto ok = pca_fit(x, 2);
  CHECK_FALSE(ok.rank_deficient);
}

TEST_CASE("PCA argument validation and identity basis") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 4);
  CHECK_THROWS_AS(pca_fit(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(pca_fit(x, 5), std::invalid_argument);
  CHECK_THROWS_AS(pca_fit(Eigen::MatrixXd::Random(1, 4), 1), std::invalid_argument);

  auto id = PcaBasis::identity(3);
  Eigen::VectorXd v(3);
  v << 4, -1, 2;
  CHECK((id.project(v) - v).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("PCA projection decorrelates along components") {
  Rng rng(12);
  Eigen::MatrixXd x(30, 3);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
  auto b = pca_fit(x, 3);
  Eigen::MatrixXd proj(30, 3);
  for (int i = 0; i < 30; ++i) proj.row(i) = b.project(x.row(i).transpose()).transpose();
  Eigen::MatrixXd cov = proj.transpose() * proj / 29.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(cov(i, i) == doctest::Approx(b.explained_variance(i)).epsilon(1e-8));
    for (int j = 0; j < 3; ++j) {
      if (i != j) CHECK(std::abs(cov(i, j)) < 1e-10);
    }
  }
}

TEST_CASE("subject feature concatenates stages in fixed order") {
  using mvitime::ingest::Epoch;
  using mvitime::ingest::SleepStage;
  std::map<SleepStage, Epoch> by_stage;
  const int L = 4;
  for (int s = 0; s < 5; ++s) {
    Epoch e;
    e.samples.assign(L, 10.0 * s);  // stage index baked into the value
    by_stage[static_cast<SleepStage>(s)] = e;
  }
  auto id = PcaBasis::identity(5 * L);
  auto f = subject_feature("SC401", by_stage, id);
  CHECK(f.subject_id == "SC401");
  REQUIRE(f.vector.size() == 5 * L);
  for (int s = 0; s < 5; ++s) {
    for (int i = 0; i < L; ++i) CHECK(f.vector(s * L + i) == doctest::Approx(10.0 * s));
  }

  by_stage.erase(SleepStage::S3);
  CHECK_THROWS_AS(subject_feature("SC401", by_stage, id), MissingStage);
}

TEST_CASE("cross-subject batch pairs the two views of each subject") {
  std::vector<SubjectFeature> feats;
  Rng init(3);
  for (int s = 0; s < 4; ++s) {
    SubjectFeature f;
    f.subject_id = "SC40" + std::to_string(s);
    f.vector.resize(64);
    for (int i = 0; i < 64; ++i) f.vector(i) = init.normal();
    feats.push_back(std::move(f));
  }
  mvitime::augment::AugmentConfig cfg;
  Rng rng(17);
  auto batch = build_cross_subject_batch(feats, cfg, rng);
  REQUIRE(batch.views.size() == 8);
  REQUIRE(batch.pairing.size() == 8);
  REQUIRE(batch.subject_ids.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(batch.pairing[batch.pairing[i]] == i);
    CHECK(batch.pairing[i] != i);
    CHECK(batch.views[i].size() == 64);
    CHECK(batch.subject_ids[i] == feats[i / 2].subject_id);
  }
  // Second view of each pair is a permutation of the raw feature.
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> raw(feats[s].vector.data(), feats[s].vector.data() + 64);
    auto b = batch.views[2 * s + 1];
    std::sort(raw.begin(), raw.end());
    std::sort(b.begin(), b.end());
    CHECK(raw == b);
  }
  CHECK_THROWS_AS(build_cross_subject_batch({feats[0]}, cfg, rng), std::invalid_argument);
}
