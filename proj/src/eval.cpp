#include "mvitime/eval.hpp"

#include <algorithm>
#include <sstream>

namespace mvitime::eval {

using ingest::kNumStages;
using ingest::kStageNames;
using ingest::SleepStage;

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : m)
    for (long v : row) t += v;
  return t;
}

long ConfusionMatrix::trace() const {
  long t = 0;
  for (int i = 0; i < kNumStages; ++i) t += m[i][i];
  return t;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream out;
  out << "ref\\pred";
  for (const char* n : kStageNames) out << "," << n;
  out << "\n";
  for (int r = 0; r < kNumStages; ++r) {
    out << kStageNames[r];
    for (int c = 0; c < kNumStages; ++c) out << "," << m[r][c];
    out << "\n";
  }
  return out.str();
}

ConfusionMatrix confusion_matrix(const std::vector<SleepStage>& predictions,
                                 const std::vector<SleepStage>& references) {
  if (predictions.size() != references.size() || predictions.empty()) {
    throw LengthMismatch("confusion_matrix: prediction/reference length mismatch");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    cm.m[static_cast<int>(references[i])][static_cast<int>(predictions[i])] += 1;
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total <= 0) throw EmptyMatrix("metrics: empty confusion matrix");

  MetricsReport r;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double f1_sum = 0.0;
  int f1_n = 0;
  for (int c = 0; c < kNumStages; ++c) {
    long row = 0, col = 0;
    for (int j = 0; j < kNumStages; ++j) {
      row += cm.m[c][j];
      col += cm.m[j][c];
    }
    ClassMetrics& cls = r.per_class[c];
    cls.support = row;
    cls.zero_support = (row == 0);
    const long tp = cm.m[c][c];
    cls.recall = row > 0 ? static_cast<double>(tp) / row : 0.0;
    cls.precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
    cls.f1 = (cls.precision + cls.recall) > 0.0
                 ? 2.0 * cls.precision * cls.recall / (cls.precision + cls.recall)
                 : 0.0;
    if (row > 0) {
      f1_sum += cls.f1;
      ++f1_n;
    }
  }
  r.macro_f1 = f1_n > 0 ? f1_sum / f1_n : 0.0;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (int c = 0; c < kNumStages; ++c) {
    per[kStageNames[c]] = {{"precision", per_class[c].precision},
                           {"recall", per_class[c].recall},
                           {"f1", per_class[c].f1},
                           {"support", per_class[c].support},
                           {"zero_support", per_class[c].zero_support}};
  }
  return {{"accuracy", accuracy}, {"macro_f1", macro_f1}, {"per_class", per}};
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "Acc " << accuracy << "  F1 " << macro_f1 << "  Per Class F1";
  for (int c = 0; c < kNumStages; ++c) {
    out << "  " << kStageNames[c] << " " << per_class[c].f1;
    if (per_class[c].zero_support) out << "(no support)";
  }
  return out.str();
}

LosoSplit loso_split(const std::vector<ingest::Epoch>& epochs,
                     const std::string& held_out_subject) {
  LosoSplit split;
  bool seen = false;
  for (const auto& e : epochs) {
    if (e.subject_id == held_out_subject) {
      seen = true;
      split.test.push_back(e);
    } else {
      split.train.push_back(e);
    }
  }
  if (!seen) throw UnknownSubject("loso_split: no epochs for subject " + held_out_subject);
  return split;
}

namespace {

template <typename LogitsFn>
std::vector<SleepStage> predict_impl(const std::vector<ingest::Epoch>& epochs, int input_length,
                                     LogitsFn&& logits_of) {
  std::vector<SleepStage> out;
  out.reserve(epochs.size());
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < epochs.size(); i += chunk) {
    const std::size_t end = std::min(epochs.size(), i + chunk);
    nn::Tensor<float> x({static_cast<int>(end - i), 1, input_length});
    for (std::size_t j = i; j < end; ++j) {
      if (static_cast<int>(epochs[j].samples.size()) != input_length) {
        throw train::ConfigMismatch("epoch length does not match model input length");
      }
      for (int s = 0; s < input_length; ++s) {
        x.at(static_cast<int>(j - i), 0, s) = static_cast<float>(epochs[j].samples[s]);
      }
    }
    const nn::Tensor<float> logits = logits_of(x);
    for (int b = 0; b < logits.dim(0); ++b) {
      int best = 0;
      for (int c = 1; c < logits.dim(1); ++c) {
        if (logits.at(b, c) > logits.at(b, best)) best = c;
      }
      out.push_back(static_cast<SleepStage>(best));
    }
  }
  return out;
}

}  // namespace

std::vector<SleepStage> predict_stages(const nn::MViTime<float>& model,
                                       const std::vector<ingest::Epoch>& epochs) {
  return predict_impl(epochs, model.cfg.input_length, [&](const nn::Tensor<float>& x) {
    return model.forward(x, false, true).logits->val;
  });
}

std::vector<SleepStage> predict_stages(const train::CombinedModel& model,
                                       const std::vector<ingest::Epoch>& epochs) {
  return predict_impl(epochs, model.input_length(),
                      [&](const nn::Tensor<float>& x) { return model.logits(x); });
}

namespace {

Evaluation evaluate_from(const std::vector<SleepStage>& preds,
                         const std::vector<ingest::Epoch>& epochs) {
  std::vector<SleepStage> refs;
  refs.reserve(epochs.size());
  for (const auto& e : epochs) refs.push_back(e.stage);
  Evaluation ev;
  ev.confusion = confusion_matrix(preds, refs);
  ev.metrics = metrics(ev.confusion);
  return ev;
}

}  // namespace

Evaluation evaluate(const nn::MViTime<float>& model, const std::vector<ingest::Epoch>& epochs) {
  return evaluate_from(predict_stages(model, epochs), epochs);
}

Evaluation evaluate(const train::CombinedModel& model, const std::vector<ingest::Epoch>& epochs) {
  return evaluate_from(predict_stages(model, epochs), epochs);
}

}  // namespace mvitime::eval
