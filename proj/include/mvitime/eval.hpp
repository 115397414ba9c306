#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvitime/ingest.hpp"
#include "mvitime/nn/model.hpp"
#include "mvitime/train.hpp"

namespace mvitime::eval {

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class EmptyMatrix : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class UnknownSubject : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// rows = reference stage, columns = predicted stage
struct ConfusionMatrix {
  std::array<std::array<long, ingest::kNumStages>, ingest::kNumStages> m{};

  long total() const;
  long trace() const;
  std::string to_csv() const;
};

ConfusionMatrix confusion_matrix(const std::vector<ingest::SleepStage>& predictions,
                                 const std::vector<ingest::SleepStage>& references);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  bool zero_support = false;  // no reference and no prediction of this class
};

struct MetricsReport {
  double accuracy = 0.0;
  std::array<ClassMetrics, ingest::kNumStages> per_class{};
  // Unweighted mean of per-class F1; classes with zero support are
  // excluded (and flagged) so absent classes neither reward nor punish.
  double macro_f1 = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

MetricsReport metrics(const ConfusionMatrix& cm);

struct LosoSplit {
  std::vector<ingest::Epoch> train;
  std::vector<ingest::Epoch> test;
};

// Partition by subject id; the held-out subject contributes nothing to
// training (callers must also keep it out of PCA fitting and pre-training,
// which follows from using only `train` downstream).
LosoSplit loso_split(const std::vector<ingest::Epoch>& epochs, const std::string& held_out_subject);

using Predictor = std::function<std::vector<ingest::SleepStage>(const std::vector<ingest::Epoch>&)>;

// argmax over logits, ties broken toward the lowest class index
std::vector<ingest::SleepStage> predict_stages(const nn::MViTime<float>& model,
                                               const std::vector<ingest::Epoch>& epochs);
std::vector<ingest::SleepStage> predict_stages(const train::CombinedModel& model,
                                               const std::vector<ingest::Epoch>& epochs);

struct Evaluation {
  ConfusionMatrix confusion;
  MetricsReport metrics;
};

Evaluation evaluate(const nn::MViTime<float>& model, const std::vector<ingest::Epoch>& epochs);
Evaluation evaluate(const train::CombinedModel& model, const std::vector<ingest::Epoch>& epochs);

}  // namespace mvitime::eval
