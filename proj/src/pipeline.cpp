#include "mvitime/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mvitime::pipeline {

namespace fs = std::filesystem;
using ingest::kNumStages;
using ingest::kStageNames;

namespace {

// Published reference epoch counts for the two standard subsets.
struct SubsetReference {
  long total;
  std::array<long, kNumStages> per_stage;
};
const SubsetReference kEdf20Ref{42308, {8285, 2804, 17799, 5703, 7717}};
const SubsetReference kEdf78Ref{195479, {65951, 21522, 69132, 13039, 25835}};

std::optional<int> sc_subject_number(const std::string& stem) {
  if (stem.size() < 5 || stem.compare(0, 3, "SC4") != 0) return std::nullopt;
  if (!std::isdigit(static_cast<unsigned char>(stem[3])) ||
      !std::isdigit(static_cast<unsigned char>(stem[4]))) {
    return std::nullopt;
  }
  return (stem[3] - '0') * 10 + (stem[4] - '0');
}

bool subject_in_subset(const std::string& subject, const IngestConfig& cfg) {
  switch (cfg.subset) {
    case Subset::All:
      return true;
    case Subset::Edf20: {
      const auto n = sc_subject_number(subject);
      return n && *n < 20;
    }
    case Subset::Edf78:
      return sc_subject_number(subject).has_value();
    case Subset::Custom:
      return std::find(cfg.custom_subjects.begin(), cfg.custom_subjects.end(), subject) !=
             cfg.custom_subjects.end();
  }
  return false;
}

}  // namespace

std::string subject_key(const std::string& stem) {
  // SC4ssN / ST7ssN: drop the night digit and anything after it.
  if (stem.size() >= 6 && (stem.compare(0, 3, "SC4") == 0 || stem.compare(0, 3, "ST7") == 0)) {
    return stem.substr(0, 5);
  }
  const auto dash = stem.find('-');
  return dash == std::string::npos ? stem : stem.substr(0, dash);
}

IngestResult ingest_directory(const IngestConfig& cfg) {
  IngestResult result;
  std::vector<fs::path> psg_files;
  std::map<std::string, fs::path> hyp_by_prefix;
  for (const auto& entry : fs::directory_iterator(cfg.data_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.ends_with("-PSG.edf")) {
      psg_files.push_back(entry.path());
    } else if (name.ends_with("-Hypnogram.edf")) {
      // pair on the recording prefix (first 6 characters, SC4ssN)
      hyp_by_prefix[name.substr(0, 6)] = entry.path();
    }
  }
  std::sort(psg_files.begin(), psg_files.end());

  std::optional<double> sample_rate;
  for (const auto& psg : psg_files) {
    const std::string name = psg.filename().string();
    const std::string stem = name.substr(0, name.size() - std::string("-PSG.edf").size());
    const std::string subject = subject_key(stem);
    if (!subject_in_subset(subject, cfg)) continue;

    const auto hyp = hyp_by_prefix.find(name.substr(0, 6));
    if (hyp == hyp_by_prefix.end()) {
      result.skipped_files.push_back(name + " (no hypnogram)");
      continue;
    }
    try {
      auto file = edf::parse_edf(edf::read_file(psg.string()));
      auto hypnogram = edf::parse_hypnogram(edf::read_file(hyp->second.string()));

      edf::SignalRecord* channel = nullptr;
      for (auto& s : file.signals) {
        if (s.channel_label == cfg.channel) channel = &s;
      }
      if (!channel) {
        result.skipped_files.push_back(name + " (channel '" + cfg.channel + "' absent)");
        continue;
      }
      if (sample_rate && *sample_rate != channel->sample_rate_hz) {
        throw ingest::IngestError("sampling rate mismatch across recordings in " + name);
      }
      sample_rate = channel->sample_rate_hz;
      channel->subject_id = subject;

      auto segmented = ingest::segment_epochs(*channel, hypnogram);
      for (const auto& [label, count] : segmented.excluded) result.exclusions[label] += count;
      auto trimmed = ingest::trim_wake(segmented.epochs, cfg.trim_min);
      result.per_subject[subject] += static_cast<long>(trimmed.epochs.size());
      for (auto& e : trimmed.epochs) result.epochs.push_back(std::move(e));
    } catch (const edf::EdfError& err) {
      result.skipped_files.push_back(name + " (" + err.what() + ")");
    }
  }
  return result;
}

nlohmann::json make_manifest(const IngestResult& result, const IngestConfig& cfg,
                             std::uint64_t seed) {
  const auto summary = ingest::dataset_summary(result.epochs);
  nlohmann::json dist = nlohmann::json::object();
  std::array<long, kNumStages> counts{};
  for (const auto& [stage, c] : summary) {
    counts[static_cast<int>(stage)] = c.count;
    dist[kStageNames[static_cast<int>(stage)]] = {{"count", c.count}, {"fraction", c.fraction}};
  }

  nlohmann::json manifest = {
      {"seed", seed},
      {"channel", cfg.channel},
      {"trim_min", cfg.trim_min},
      {"total_epochs", result.epochs.size()},
      {"per_subject", result.per_subject},
      {"exclusions", result.exclusions},
      {"class_distribution", dist},
      {"skipped_files", result.skipped_files},
  };

  const SubsetReference* ref = nullptr;
  const char* subset_name = "custom";
  if (cfg.subset == Subset::Edf20) {
    ref = &kEdf20Ref;
    subset_name = "edf-20";
  } else if (cfg.subset == Subset::Edf78) {
    ref = &kEdf78Ref;
    subset_name = "edf-78";
  } else if (cfg.subset == Subset::All) {
    subset_name = "all";
  }
  manifest["subset"] = subset_name;
  if (ref) {
    nlohmann::json diff = {{"total", static_cast<long>(result.epochs.size()) - ref->total}};
    for (int s = 0; s < kNumStages; ++s) {
      diff[kStageNames[s]] = counts[s] - ref->per_stage[s];
    }
    manifest["published_count_diff"] = diff;
  }
  return manifest;
}

namespace {

std::set<std::string> subject_set(const std::vector<ingest::Epoch>& epochs) {
  std::set<std::string> s;
  for (const auto& e : epochs) s.insert(e.subject_id);
  return s;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<ingest::Epoch>& train_epochs,
                                      const std::vector<ingest::Epoch>& test_epochs,
                                      const std::vector<ingest::Epoch>& pretrain_extra,
                                      const nn::ModelConfig& model_cfg,
                                      const train::TrainConfig& pretrain_cfg,
                                      const train::TrainConfig& finetune_cfg,
                                      const augment::AugmentConfig& aug) {
  std::vector<AblationRow> rows;

  // Baseline: no pre-training, fresh init straight into fine-tuning.
  {
    nn::MViTime<float> fresh(model_cfg, finetune_cfg.seed);
    auto ft = train::finetune(nn::to_checkpoint(fresh), train_epochs, finetune_cfg);
    auto model = nn::from_checkpoint<float>(ft.checkpoint);
    rows.push_back({"Baseline", eval::evaluate(model, test_epochs).metrics});
  }
  // Baseline + CL: pre-train on the training subjects.
  {
    auto pre = train::pretrain_self(train_epochs, model_cfg, pretrain_cfg, aug);
    auto ft = train::finetune(pre.checkpoint, train_epochs, finetune_cfg);
    auto model = nn::from_checkpoint<float>(ft.checkpoint);
    rows.push_back({"Baseline + CL", eval::evaluate(model, test_epochs).metrics});
  }
  // Baseline + CL-Large: pre-train on disjoint extra subjects. Skipped
  // when no extra data is supplied.
  if (!pretrain_extra.empty()) {
    const auto eval_subjects = subject_set(train_epochs);
    auto test_subjects = subject_set(test_epochs);
    for (const auto& s : subject_set(pretrain_extra)) {
      if (eval_subjects.count(s) || test_subjects.count(s)) {
        throw SubjectOverlap("CL-Large pre-training subject " + s +
                             " overlaps the evaluation set");
      }
    }
    auto pre = train::pretrain_self(pretrain_extra, model_cfg, pretrain_cfg, aug);
    auto ft = train::finetune(pre.checkpoint, train_epochs, finetune_cfg);
    auto model = nn::from_checkpoint<float>(ft.checkpoint);
    rows.push_back({"Baseline + CL-Large", eval::evaluate(model, test_epochs).metrics});
  }
  return rows;
}

std::vector<LosoSubjectResult> run_loso_cross_subject(
    const std::vector<ingest::Epoch>& epochs, const std::vector<std::string>& held_out_subjects,
    const nn::ModelConfig& model_cfg, const train::TrainConfig& pretrain_cfg,
    const train::TrainConfig& finetune_cfg, const augment::AugmentConfig& aug) {
  std::vector<LosoSubjectResult> results;
  for (const auto& subject : held_out_subjects) {
    const auto split = eval::loso_split(epochs, subject);

    LosoSubjectResult res;
    res.subject = subject;

    auto pre_self = train::pretrain_self(split.train, model_cfg, pretrain_cfg, aug);
    auto pre_cross = train::pretrain_cross_subject(split.train, model_cfg, pretrain_cfg, aug);

    {
      auto ft = train::finetune(pre_self.checkpoint, split.train, finetune_cfg);
      auto model = nn::from_checkpoint<float>(ft.checkpoint);
      res.methods.push_back({"MViTime", eval::evaluate(model, split.test).metrics});
    }
    {
      train::CombinedModel combined(pre_self.checkpoint, pre_cross.checkpoint,
                                    finetune_cfg.combine_alpha, train::CombineMode::Features,
                                    finetune_cfg.seed);
      combined.finetune(split.train, finetune_cfg);
      res.methods.push_back({"MViTime+", eval::evaluate(combined, split.test).metrics});
    }
    {
      train::CombinedModel combined(pre_self.checkpoint, pre_cross.checkpoint,
                                    finetune_cfg.combine_alpha, train::CombineMode::Full,
                                    finetune_cfg.seed);
      combined.finetune(split.train, finetune_cfg);
      res.methods.push_back({"MViTime++", eval::evaluate(combined, split.test).metrics});
    }
    results.push_back(std::move(res));
  }
  return results;
}

nlohmann::json loso_report_json(const std::vector<LosoSubjectResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : r.methods) {
      methods.push_back({{"method", m.method}, {"metrics", m.metrics.to_json()}});
    }
    out.push_back({{"subject", r.subject}, {"methods", methods}});
  }
  return out;
}

std::string loso_report_table(const std::vector<LosoSubjectResult>& results) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "Subject    Method       W      S1     S2     S3     REM\n";
  for (const auto& r : results) {
    for (const auto& m : r.methods) {
      out << r.subject << "  " << m.method;
      for (std::size_t pad = m.method.size(); pad < 11; ++pad) out << ' ';
      for (int c = 0; c < kNumStages; ++c) out << "  " << m.metrics.per_class[c].f1;
      out << "\n";
    }
  }
  return out.str();
}

nlohmann::json ablation_report_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"method", r.name}, {"metrics", r.metrics.to_json()}});
  }
  return out;
}

std::string ablation_report_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "Method                 Acc    F1     W      S1     S2     S3     REM\n";
  for (const auto& r : rows) {
    out << r.name;
    for (std::size_t pad = r.name.size(); pad < 21; ++pad) out << ' ';
    out << "  " << r.metrics.accuracy << "  " << r.metrics.macro_f1;
    for (int c = 0; c < kNumStages; ++c) out << "  " << r.metrics.per_class[c].f1;
    out << "\n";
  }
  return out.str();
}

void write_confusion_ppm(const std::string& path, const eval::ConfusionMatrix& cm, int cell_px) {
  long mx = 1;
  for (const auto& row : cm.m)
    for (long v : row) mx = std::max(mx, v);

  const int w = kNumStages * cell_px;
  std::ostringstream img;
  img << "P6\n" << w << " " << w << "\n255\n";
  for (int y = 0; y < w; ++y) {
    for (int x = 0; x < w; ++x) {
      const long v = cm.m[y / cell_px][x / cell_px];
      const double t = static_cast<double>(v) / static_cast<double>(mx);
      // white -> blue ramp
      const auto r = static_cast<unsigned char>(255 * (1.0 - t));
      const auto g = static_cast<unsigned char>(255 * (1.0 - 0.75 * t));
      img << static_cast<char>(r) << static_cast<char>(g) << static_cast<char>(255);
    }
  }
  write_text_atomic(path, img.str());
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed for " + path);
  }
}

}  // namespace mvitime::pipeline
