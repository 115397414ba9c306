#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvitime/augment.hpp"
#include "mvitime/contrastive.hpp"
#include "mvitime/ingest.hpp"
#include "mvitime/nn/model.hpp"

namespace mvitime::train {

class StepOutOfRange : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};
class EmptyDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DimMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int pretrain_batch = 128;
  int finetune_batch = 512;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double base_lr = 0.1;
  long warmup_steps = -1;  // < 0 means 5% of total_steps
  long total_steps = 100;
  double temperature = 0.5;
  double combine_alpha = 0.5;
  int pca_dim = 0;  // 0 means the epoch length L
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only at the end
  std::string checkpoint_dir;

  long effective_warmup() const {
    return warmup_steps >= 0 ? warmup_steps : total_steps / 20;
  }
};

struct TrainReport {
  std::vector<double> losses;  // one per executed step
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;

  nlohmann::json to_json() const;
  void write_loss_csv(const std::string& path) const;
};

// Linear ramp 0 -> base_lr over warmup, then cosine decay to 0 at
// total_steps. Continuous at the junction.
double cosine_warmup_lr(long step, double base_lr, long warmup_steps, long total_steps);

inline double cosine_warmup_lr(long step, const TrainConfig& cfg) {
  return cosine_warmup_lr(step, cfg.base_lr, cfg.effective_warmup(), cfg.total_steps);
}

// v <- m*v + g + wd*theta; theta <- theta - lr*v
void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, double lr, double momentum, double weight_decay);

struct SgdState {
  std::map<std::string, nn::Tensor<float>> velocity;
};

void sgd_update(std::map<std::string, nn::Tensor<float>>& params,
                const std::map<std::string, nn::Tensor<float>>& grads, SgdState& state, double lr,
                double momentum, double weight_decay);

struct PretrainResult {
  nn::Checkpoint checkpoint;
  TrainReport report;
};

// Self-contrast pre-training: two augmented views per epoch, NT-Xent over
// the projection head.
PretrainResult pretrain_self(const std::vector<ingest::Epoch>& epochs,
                             const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                             const augment::AugmentConfig& aug);

// Cross-subject (inter-subject correlation) pre-training: one PCA-reduced
// stage-spanning feature per subject, positives pair the two views of a
// subject. Features are built once per run.
PretrainResult pretrain_cross_subject(const std::vector<ingest::Epoch>& epochs,
                                      const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                                      const augment::AugmentConfig& aug);

struct FinetuneResult {
  nn::Checkpoint checkpoint;
  TrainReport report;
  double final_train_accuracy = 0.0;
};

// Joint fine-tuning of the whole backbone plus classifier (no frozen
// linear-probe mode) with cross-entropy over the five stages.
FinetuneResult finetune(const nn::Checkpoint& start, const std::vector<ingest::Epoch>& epochs,
                        const TrainConfig& cfg);

enum class CombineMode { Features, Full };

// Weighted combination of the self-contrast and cross-subject backbones.
// Features mode: alpha*f_self + (1-alpha)*f_cross into a fresh classifier.
// Full mode: alpha*logits_self + (1-alpha)*logits_cross.
class CombinedModel {
 public:
  CombinedModel(const nn::Checkpoint& self_ckpt, const nn::Checkpoint& cross_ckpt, double alpha,
                CombineMode mode, std::uint64_t classifier_seed = 0);

  nn::Tensor<float> features(const nn::Tensor<float>& x) const;  // [B, F]
  nn::Tensor<float> logits(const nn::Tensor<float>& x) const;    // [B, 5]

  // Fine-tune every parameter of both branches (and the classifier).
  TrainReport finetune(const std::vector<ingest::Epoch>& epochs, const TrainConfig& cfg);

  const nn::MViTime<float>& self_branch() const { return self_; }
  const nn::MViTime<float>& cross_branch() const { return cross_; }
  double alpha() const { return alpha_; }
  CombineMode mode() const { return mode_; }
  int input_length() const { return self_.cfg.input_length; }

 private:
  struct Graph;
  Graph build(const nn::Tensor<float>& x) const;

  nn::MViTime<float> self_;
  nn::MViTime<float> cross_;
  double alpha_;
  CombineMode mode_;
  std::map<std::string, nn::Tensor<float>> cls_;  // fresh head, Features mode
};

}  // namespace mvitime::train
