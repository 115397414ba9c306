#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <vector>

#include "mvitime/augment.hpp"
#include "mvitime/ingest.hpp"
#include "mvitime/rng.hpp"

namespace mvitime::contrastive {

class ZeroNorm : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};
class InvalidPairing : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class NonPositiveTemperature : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class MissingStage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 2n embedding rows plus the involution that names each row's positive.
struct EmbeddingBatch {
  Eigen::MatrixXd vectors;            // 2n x d
  std::vector<std::size_t> pairing;   // pairing[i] = positive partner of row i

  void validate() const;
};

struct SubjectFeature {
  std::string subject_id;
  Eigen::VectorXd vector;
};

double cosine_similarity(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// S[i][j] = cos(row i, row j); symmetric with unit diagonal.
Eigen::MatrixXd similarity_matrix(const EmbeddingBatch& batch);

// Ground-truth indicator: G[i][j] = 1 iff j is i's positive partner.
Eigen::MatrixXi positive_target(const std::vector<std::size_t>& pairing);

struct NtXentResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // dLoss/dvectors, same shape as batch.vectors
};

// NT-Xent over cosine similarities, one positive per anchor, self-terms
// excluded from the denominator:
//   loss = -(1/2n) sum_i log( exp(S[i][p(i)]/tau) / sum_{j!=i} exp(S[i][j]/tau) )
NtXentResult nt_xent_loss(const EmbeddingBatch& batch, double temperature);

struct PcaBasis {
  Eigen::VectorXd mean;         // p
  Eigen::MatrixXd components;   // p x k, orthonormal columns
  Eigen::VectorXd explained_variance;  // non-increasing
  bool rank_deficient = false;  // requested k exceeded numerical rank

  static PcaBasis identity(Eigen::Index p);
  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    return components.transpose() * (x - mean);
  }
};

// Top-k principal components of the rows of X via SVD of the centered
// matrix. If k exceeds the numerical rank, the available components are
// returned and rank_deficient is set.
PcaBasis pca_fit(const Eigen::MatrixXd& X, Eigen::Index k);

// Concatenate one epoch per stage in fixed order (W, S1, S2, S3, REM) and
// project through the PCA basis.
SubjectFeature subject_feature(const std::string& subject_id,
                               const std::map<ingest::SleepStage, ingest::Epoch>& epochs_by_stage,
                               const PcaBasis& basis);

struct CrossSubjectBatch {
  std::vector<std::vector<double>> views;  // 2n signals, subject order, (crop, permute) per subject
  std::vector<std::size_t> pairing;        // 2i <-> 2i+1
  std::vector<std::string> subject_ids;    // per view
};

// Two augmented views per subject feature; positives pair the two views of
// one subject, everything else is a negative.
CrossSubjectBatch build_cross_subject_batch(const std::vector<SubjectFeature>& features,
                                            const augment::AugmentConfig& cfg, Rng& rng);

}  // namespace mvitime::contrastive
