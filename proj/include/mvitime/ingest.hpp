#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvitime/edf.hpp"

namespace mvitime::ingest {

enum class SleepStage : int { Wake = 0, S1 = 1, S2 = 2, S3 = 3, REM = 4 };

inline constexpr int kNumStages = 5;
inline constexpr std::array<const char*, kNumStages> kStageNames = {"W", "S1", "S2", "S3", "REM"};

// One 30-second labeled window, the unit of classification.
struct Epoch {
  std::string subject_id;
  double start_s = 0.0;
  std::vector<double> samples;  // length = sample_rate_hz * 30
  SleepStage stage = SleepStage::Wake;
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CoverageGap : public IngestError {
 public:
  using IngestError::IngestError;
};

// R&K label -> five-class scheme. Stage 4 merges into S3; movement and
// unknown labels map to nullopt.
std::optional<SleepStage> map_stage(const std::string& raw_label);

struct SegmentResult {
  std::vector<Epoch> epochs;
  std::map<std::string, int> excluded;  // raw label -> count of dropped 30-s windows
};

// Cut the signal into aligned, contiguous 30-s windows labeled from the
// hypnogram. Windows whose label does not map to a stage are counted in
// `excluded` and not emitted.
SegmentResult segment_epochs(const edf::SignalRecord& signal,
                             const std::vector<edf::HypnogramEntry>& hypnogram);

struct TrimResult {
  std::vector<Epoch> epochs;
  bool all_wake = false;  // input had no sleep; returned unchanged
};

// Keep margin_min minutes of Wake on each side of the sleep period, drop
// the rest of the leading/trailing Wake.
TrimResult trim_wake(const std::vector<Epoch>& epochs, int margin_min);

struct StageCount {
  long count = 0;
  double fraction = 0.0;
};

std::map<SleepStage, StageCount> dataset_summary(const std::vector<Epoch>& epochs);

}  // namespace mvitime::ingest
