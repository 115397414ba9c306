#include "mvitime/contrastive.hpp"

#include <cmath>

namespace mvitime::contrastive {

void EmbeddingBatch::validate() const {
  const auto m = static_cast<std::size_t>(vectors.rows());
  if (pairing.size() != m) throw InvalidPairing("pairing size does not match row count");
  if (vectors.cols() < 2) throw InvalidPairing("embedding dimension must be >= 2");
  for (std::size_t i = 0; i < m; ++i) {
    if (pairing[i] >= m) throw InvalidPairing("pairing index out of range");
    if (pairing[i] == i) throw InvalidPairing("pairing has a fixed point");
    if (pairing[pairing[i]] != i) throw InvalidPairing("pairing is not an involution");
  }
  if (!vectors.allFinite()) throw InvalidPairing("non-finite embedding entries");
}

double cosine_similarity(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 1) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  }
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) throw ZeroNorm("cosine_similarity: zero-norm vector");
  return x.dot(y) / (nx * ny);
}

Eigen::MatrixXd similarity_matrix(const EmbeddingBatch& batch) {
  const Eigen::Index m = batch.vectors.rows();
  Eigen::VectorXd norms(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    norms(i) = batch.vectors.row(i).norm();
    if (norms(i) == 0.0) throw ZeroNorm("similarity_matrix: zero-norm row " + std::to_string(i));
  }
  Eigen::MatrixXd s(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      s(i, j) = batch.vectors.row(i).dot(batch.vectors.row(j)) / (norms(i) * norms(j));
    }
  }
  return s;
}

Eigen::MatrixXi positive_target(const std::vector<std::size_t>& pairing) {
  const auto m = static_cast<Eigen::Index>(pairing.size());
  for (std::size_t i = 0; i < pairing.size(); ++i) {
    if (pairing[i] >= pairing.size() || pairing[i] == i || pairing[pairing[i]] != i) {
      throw InvalidPairing("positive_target: invalid involution");
    }
  }
  Eigen::MatrixXi g = Eigen::MatrixXi::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) g(i, static_cast<Eigen::Index>(pairing[i])) = 1;
  return g;
}

NtXentResult nt_xent_loss(const EmbeddingBatch& batch, double temperature) {
  if (temperature <= 0.0) throw NonPositiveTemperature("temperature must be > 0");
  batch.validate();
  const Eigen::Index m = batch.vectors.rows();
  if (m < 4) throw InvalidPairing("nt_xent_loss: need at least 4 rows");

  const Eigen::MatrixXd s = similarity_matrix(batch);

  // dLoss/dS for each ordered (i, j), j != i:
  //   (softmax_i(j) - [j == p(i)]) / (m * tau)
  // with softmax over row i excluding the diagonal.
  Eigen::MatrixXd gs = Eigen::MatrixXd::Zero(m, m);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double row_max = -2.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) row_max = std::max(row_max, s(i, j));
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) z += std::exp((s(i, j) - row_max) / temperature);
    }
    const auto p = static_cast<Eigen::Index>(batch.pairing[static_cast<std::size_t>(i)]);
    loss += -((s(i, p) - row_max) / temperature - std::log(z));
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      const double soft = std::exp((s(i, j) - row_max) / temperature) / z;
      gs(i, j) = (soft - (j == p ? 1.0 : 0.0)) / (static_cast<double>(m) * temperature);
    }
  }
  loss /= static_cast<double>(m);

  // Backprop through the cosine: with x = row i, y = row j,
  //   d cos/dx = y/(|x||y|) - cos * x/|x|^2.
  Eigen::VectorXd norms(m);
  for (Eigen::Index i = 0; i < m; ++i) norms(i) = batch.vectors.row(i).norm();

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, batch.vectors.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      // cos(v_i, v_j) feeds both S[i][j] and S[j][i]; both sensitivities
      // flow into v_i here.
      const double g = gs(i, j) + gs(j, i);
      if (g == 0.0) continue;
      grad.row(i) += g * (batch.vectors.row(j) / (norms(i) * norms(j)) -
                          s(i, j) * batch.vectors.row(i) / (norms(i) * norms(i)));
    }
  }
  return {loss, grad};
}

PcaBasis PcaBasis::identity(Eigen::Index p) {
  PcaBasis b;
  b.mean = Eigen::VectorXd::Zero(p);
  b.components = Eigen::MatrixXd::Identity(p, p);
  b.explained_variance = Eigen::VectorXd::Zero(p);
  return b;
}

PcaBasis pca_fit(const Eigen::MatrixXd& X, Eigen::Index k) {
  const Eigen::Index m = X.rows();
  const Eigen::Index p = X.cols();
  if (m < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
  if (k < 1 || k > std::min(m, p)) throw std::invalid_argument("pca_fit: k out of range");

  PcaBasis basis;
  basis.mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - basis.mean.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();

  const double tol = sv.size() > 0 ? sv(0) * 1e-12 * static_cast<double>(std::max(m, p)) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) ++rank;
  }
  Eigen::Index keep = k;
  if (k > rank) {
    keep = std::max<Eigen::Index>(rank, 1);
    basis.rank_deficient = true;
  }
  basis.components = svd.matrixV().leftCols(keep);
  basis.explained_variance =
      sv.head(keep).array().square() / static_cast<double>(m - 1);
  return basis;
}

SubjectFeature subject_feature(const std::string& subject_id,
                               const std::map<ingest::SleepStage, ingest::Epoch>& epochs_by_stage,
                               const PcaBasis& basis) {
  std::vector<double> concat;
  for (int s = 0; s < ingest::kNumStages; ++s) {
    const auto stage = static_cast<ingest::SleepStage>(s);
    auto it = epochs_by_stage.find(stage);
    if (it == epochs_by_stage.end()) {
      throw MissingStage("subject " + subject_id + " lacks stage " +
                         ingest::kStageNames[static_cast<std::size_t>(s)]);
    }
    concat.insert(concat.end(), it->second.samples.begin(), it->second.samples.end());
  }
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(concat.data(),
                                                        static_cast<Eigen::Index>(concat.size()));
  if (basis.mean.size() != x.size()) {
    throw std::invalid_argument("subject_feature: basis dimension mismatch");
  }
  return {subject_id, basis.project(x)};
}

CrossSubjectBatch build_cross_subject_batch(const std::vector<SubjectFeature>& features,
                                            const augment::AugmentConfig& cfg, Rng& rng) {
  if (features.size() < 2) {
    throw std::invalid_argument("build_cross_subject_batch: need >= 2 subjects");
  }
  CrossSubjectBatch out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    std::vector<double> signal(f.vector.data(), f.vector.data() + f.vector.size());
    auto vp = augment::make_views(signal, static_cast<long>(i), cfg, rng);
    out.views.push_back(std::move(vp.view_a));
    out.views.push_back(std::move(vp.view_b));
    out.pairing.push_back(2 * i + 1);
    out.pairing.push_back(2 * i);
    out.subject_ids.push_back(f.subject_id);
    out.subject_ids.push_back(f.subject_id);
  }
  return out;
}

}  // namespace mvitime::contrastive
