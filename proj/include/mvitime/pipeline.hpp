#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvitime/augment.hpp"
#include "mvitime/eval.hpp"
#include "mvitime/ingest.hpp"
#include "mvitime/train.hpp"

namespace mvitime::pipeline {

class SubjectOverlap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Subset { All, Edf20, Edf78, Custom };

struct IngestConfig {
  std::string data_dir;
  std::string channel = "EEG Fpz-Cz";
  int trim_min = 30;
  Subset subset = Subset::All;
  std::vector<std::string> custom_subjects;
};

struct IngestResult {
  std::vector<ingest::Epoch> epochs;  // recording order, temporal within a recording
  std::map<std::string, long> per_subject;
  std::map<std::string, long> exclusions;  // raw label -> dropped windows
  std::vector<std::string> skipped_files;  // unpaired or unreadable
};

// Sleep-EDF style subject key: SC4ssN... -> SC4ss (groups both nights).
std::string subject_key(const std::string& filename_stem);

// Scan a directory of Sleep-EDF style *-PSG.edf / *-Hypnogram.edf pairs.
IngestResult ingest_directory(const IngestConfig& cfg);

// Dataset manifest with per-subject counts, exclusions, class distribution
// and, for the EDF-20/EDF-78 subsets, a diff against the published counts.
nlohmann::json make_manifest(const IngestResult& result, const IngestConfig& cfg,
                             std::uint64_t seed);

struct AblationRow {
  std::string name;
  eval::MetricsReport metrics;
};

// Baseline / pretrain-on-train / pretrain-on-disjoint-extra comparison.
// Throws SubjectOverlap when the extra pre-training subjects intersect the
// evaluation subjects.
std::vector<AblationRow> run_ablation(const std::vector<ingest::Epoch>& train_epochs,
                                      const std::vector<ingest::Epoch>& test_epochs,
                                      const std::vector<ingest::Epoch>& pretrain_extra,
                                      const nn::ModelConfig& model_cfg,
                                      const train::TrainConfig& pretrain_cfg,
                                      const train::TrainConfig& finetune_cfg,
                                      const augment::AugmentConfig& aug);

struct LosoMethodResult {
  std::string method;  // MViTime, MViTime+, MViTime++
  eval::MetricsReport metrics;
};

struct LosoSubjectResult {
  std::string subject;
  std::vector<LosoMethodResult> methods;  // fixed order
};

// For each held-out subject: train the plain model plus the two combined
// variants on the remaining subjects and evaluate on the held-out night.
std::vector<LosoSubjectResult> run_loso_cross_subject(
    const std::vector<ingest::Epoch>& epochs, const std::vector<std::string>& held_out_subjects,
    const nn::ModelConfig& model_cfg, const train::TrainConfig& pretrain_cfg,
    const train::TrainConfig& finetune_cfg, const augment::AugmentConfig& aug);

nlohmann::json loso_report_json(const std::vector<LosoSubjectResult>& results);
std::string loso_report_table(const std::vector<LosoSubjectResult>& results);
nlohmann::json ablation_report_json(const std::vector<AblationRow>& rows);
std::string ablation_report_table(const std::vector<AblationRow>& rows);

// Confusion heatmap as a PPM image.
void write_confusion_ppm(const std::string& path, const eval::ConfusionMatrix& cm,
                         int cell_px = 48);

// Atomic write: tmp file + rename, so failures leave no partial artifact.
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace mvitime::pipeline
