#include "mvitime/ingest.hpp"

#include <algorithm>
#include <cmath>

namespace mvitime::ingest {

std::optional<SleepStage> map_stage(const std::string& raw_label) {
  // Sleep-EDF labels look like "Sleep stage W"; bare labels are accepted too.
  std::string key = raw_label;
  constexpr std::string_view prefix = "Sleep stage ";
  if (key.rfind(prefix, 0) == 0) key = key.substr(prefix.size());

  if (key == "W") return SleepStage::Wake;
  if (key == "1") return SleepStage::S1;
  if (key == "2") return SleepStage::S2;
  if (key == "3") return SleepStage::S3;
  if (key == "4") return SleepStage::S3;  // R&K stage 4 merges into S3
  if (key == "R") return SleepStage::REM;
  return std::nullopt;
}

SegmentResult segment_epochs(const edf::SignalRecord& signal,
                             const std::vector<edf::HypnogramEntry>& hypnogram) {
  const double ls = signal.sample_rate_hz * 30.0;
  const auto L = static_cast<std::size_t>(std::llround(ls));
  if (std::abs(ls - static_cast<double>(L)) > 1e-9 || L == 0) {
    throw IngestError("sample_rate_hz * 30 is not a positive integer");
  }

  SegmentResult result;
  for (const auto& entry : hypnogram) {
    if (entry.duration_s <= 0.0) continue;
    const auto first = static_cast<long>(std::llround(entry.onset_s / 30.0));
    const auto n_windows = static_cast<long>(std::llround(entry.duration_s / 30.0));
    const auto stage = map_stage(entry.raw_label);
    for (long w = 0; w < n_windows; ++w) {
      const double start_s = (first + w) * 30.0;
      const std::size_t begin = static_cast<std::size_t>(first + w) * L;
      if (begin + L > signal.samples.size()) {
        throw CoverageGap("hypnogram extends past signal end at t=" + std::to_string(start_s));
      }
      if (!stage) {
        ++result.excluded[entry.raw_label];
        continue;
      }
      Epoch e;
      e.subject_id = signal.subject_id;
      e.start_s = start_s;
      e.stage = *stage;
      e.samples.assign(signal.samples.begin() + static_cast<long>(begin),
                       signal.samples.begin() + static_cast<long>(begin + L));
      result.epochs.push_back(std::move(e));
    }
  }
  return result;
}

TrimResult trim_wake(const std::vector<Epoch>& epochs, int margin_min) {
  TrimResult r;
  auto is_sleep = [](const Epoch& e) { return e.stage != SleepStage::Wake; };
  const auto first = std::find_if(epochs.begin(), epochs.end(), is_sleep);
  if (first == epochs.end()) {
    r.epochs = epochs;
    r.all_wake = true;
    return r;
  }
  const auto last = std::find_if(epochs.rbegin(), epochs.rend(), is_sleep);
  const long first_i = first - epochs.begin();
  const long last_i = (epochs.rend() - last) - 1;
  const long margin_epochs = static_cast<long>(margin_min) * 2;  // 30-s epochs
  const long lo = std::max<long>(0, first_i - margin_epochs);
  const long hi = std::min<long>(static_cast<long>(epochs.size()) - 1, last_i + margin_epochs);
  r.epochs.assign(epochs.begin() + lo, epochs.begin() + hi + 1);
  return r;
}

std::map<SleepStage, StageCount> dataset_summary(const std::vector<Epoch>& epochs) {
  std::map<SleepStage, StageCount> out;
  for (int s = 0; s < kNumStages; ++s) out[static_cast<SleepStage>(s)] = {};
  for (const auto& e : epochs) ++out[e.stage].count;
  if (!epochs.empty()) {
    for (auto& [stage, c] : out) {
      c.fraction = static_cast<double>(c.count) / static_cast<double>(epochs.size());
    }
  }
  return out;
}

}  // namespace mvitime::ingest
