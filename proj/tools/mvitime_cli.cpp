// Command-line front end: ingest -> pretrain / pretrain-isc -> finetune ->
// combine -> evaluate / loso / ablation -> report. One config file (or
// flags) drives a run; every artifact lands in a run directory named by
// the config digest and embeds the seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvitime/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mvitime;

namespace {

// exit code families
constexpr int kOk = 0;
constexpr int kUsageError = 2;
constexpr int kEdfError = 3;
constexpr int kIngestError = 4;
constexpr int kTrainError = 5;
constexpr int kEvalError = 6;
constexpr int kOverlapError = 7;

std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf).substr(0, 12);
}

struct Options {
  // data
  std::string data_dir;
  std::string pretrain_data_dir;
  std::string channel = "EEG Fpz-Cz";
  int trim_min = 30;
  std::string subset = "all";  // all | edf-20 | edf-78 | custom
  std::vector<std::string> subjects;

  // model
  std::string model = "xs";  // xs | tiny
  int input_length = 0;      // 0 = infer from data (tiny) / 3000 (xs)

  // augment
  augment::AugmentConfig aug;

  // train
  train::TrainConfig tr;
  double finetune_lr = 0.01;
  long finetune_steps = 300;

  // run
  std::string out_dir = "runs";
  bool deterministic = true;

  pipeline::IngestConfig ingest_config() const {
    pipeline::IngestConfig c;
    c.data_dir = data_dir;
    c.channel = channel;
    c.trim_min = trim_min;
    if (subset == "edf-20") {
      c.subset = pipeline::Subset::Edf20;
    } else if (subset == "edf-78") {
      c.subset = pipeline::Subset::Edf78;
    } else if (subset == "custom") {
      c.subset = pipeline::Subset::Custom;
      c.custom_subjects = subjects;
    } else {
      c.subset = pipeline::Subset::All;
    }
    return c;
  }

  nn::ModelConfig model_config(int data_len) const {
    nn::ModelConfig cfg;
    if (model == "tiny") {
      cfg = nn::ModelConfig::tiny(input_length > 0 ? input_length : data_len);
    } else {
      cfg = nn::ModelConfig::default_xs();
      if (input_length > 0) cfg.input_length = input_length;
    }
    return cfg;
  }

  std::string digest() const {
    nlohmann::json j = {{"data_dir", data_dir}, {"channel", channel},
                        {"trim_min", trim_min}, {"subset", subset},
                        {"model", model},       {"input_length", input_length},
                        {"seed", tr.seed},      {"steps", tr.total_steps},
                        {"batch", tr.pretrain_batch}};
    return fnv_hex(j.dump());
  }

  fs::path run_dir() const {
    fs::path dir = fs::path(out_dir) / digest();
    fs::create_directories(dir);
    return dir;
  }
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--data-dir", opt.data_dir, "Directory of *-PSG.edf / *-Hypnogram.edf pairs")
      ->envname("MVITIME_DATA_DIR");
  cmd->add_option("--channel", opt.channel, "Channel label to ingest");
  cmd->add_option("--trim-min", opt.trim_min, "Minutes of Wake kept on each side of sleep");
  cmd->add_option("--subset", opt.subset, "all | edf-20 | edf-78 | custom");
  cmd->add_option("--subjects", opt.subjects, "Subject ids for --subset custom or loso");
  cmd->add_option("--out-dir", opt.out_dir, "Base output directory")->envname("MVITIME_OUT_DIR");
  cmd->add_option("--seed", opt.tr.seed, "Root seed for all randomness");
  cmd->add_flag("--deterministic,!--no-deterministic", opt.deterministic,
                "Fixed-order reductions (single-threaded)");
}

void add_model(CLI::App* cmd, Options& opt) {
  cmd->add_option("--model", opt.model, "xs | tiny");
  cmd->add_option("--input-length", opt.input_length, "Override model input length");
}

void add_train(CLI::App* cmd, Options& opt) {
  cmd->add_option("--pretrain-batch", opt.tr.pretrain_batch);
  cmd->add_option("--finetune-batch", opt.tr.finetune_batch);
  cmd->add_option("--momentum", opt.tr.momentum);
  cmd->add_option("--weight-decay", opt.tr.weight_decay);
  cmd->add_option("--lr", opt.tr.base_lr, "Base learning rate (pre-training)");
  cmd->add_option("--finetune-lr", opt.finetune_lr);
  cmd->add_option("--warmup-steps", opt.tr.warmup_steps);
  cmd->add_option("--steps", opt.tr.total_steps, "Pre-training steps");
  cmd->add_option("--finetune-steps", opt.finetune_steps);
  cmd->add_option("--temperature", opt.tr.temperature, "contrastive.temperature");
  cmd->add_option("--alpha", opt.tr.combine_alpha, "Backbone combination weight");
  cmd->add_option("--pca-dim", opt.tr.pca_dim, "contrastive.pca_dim (0 = epoch length)");
  cmd->add_option("--augment.n-min", opt.aug.n_segments_min, "augment.n_min");
  cmd->add_option("--augment.n-max", opt.aug.n_segments_max, "augment.n_max");
}

std::vector<ingest::Epoch> load_epochs(const Options& opt, const std::string& dir) {
  auto cfg = opt.ingest_config();
  cfg.data_dir = dir;
  auto result = pipeline::ingest_directory(cfg);
  if (result.epochs.empty()) {
    throw ingest::IngestError("no epochs ingested from " + dir);
  }
  return result.epochs;
}

train::TrainConfig finetune_config(const Options& opt) {
  auto cfg = opt.tr;
  cfg.base_lr = opt.finetune_lr;
  cfg.total_steps = opt.finetune_steps;
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  pipeline::write_text_atomic(path.string(), j.dump(2) + "\n");
  std::cout << "wrote " << path.string() << "\n";
}

void emit_evaluation(const fs::path& dir, const std::string& prefix, const eval::Evaluation& ev,
                     const Options& opt) {
  nlohmann::json j = ev.metrics.to_json();
  j["seed"] = opt.tr.seed;
  j["config_digest"] = opt.digest();
  write_json(dir / (prefix + "-metrics.json"), j);
  pipeline::write_text_atomic((dir / (prefix + "-confusion.csv")).string(),
                              ev.confusion.to_csv());
  pipeline::write_confusion_ppm((dir / (prefix + "-confusion.ppm")).string(), ev.confusion);
  pipeline::write_text_atomic((dir / (prefix + "-report.txt")).string(),
                              ev.metrics.to_table() + "\n");
  std::cout << ev.metrics.to_table() << "\n";
}

void save_train_artifacts(const fs::path& dir, const std::string& prefix,
                          const train::TrainReport& report, const nn::Checkpoint& ckpt) {
  nn::save_checkpoint((dir / (prefix + ".ckpt")).string(), ckpt);
  std::cout << "wrote " << (dir / (prefix + ".ckpt")).string() << "\n";
  write_json(dir / (prefix + "-report.json"), report.to_json());
  report.write_loss_csv((dir / (prefix + "-loss.csv")).string());
}

int run(int argc, char** argv) {
  CLI::App app{"Sleep-staging pipeline: EDF ingestion, contrastive pre-training, "
               "1D MobileViT classification, LOSO evaluation"};
  app.set_config("--config", "", "Plain-text key-value config file (sections supported)");
  app.require_subcommand(1);

  Options opt;

  auto* c_ingest = app.add_subcommand("ingest", "Parse EDF pairs and emit a dataset manifest");
  std::string manifest_out = "manifest.json";
  add_common(c_ingest, opt);
  c_ingest->add_option("--out", manifest_out, "Manifest output path");

  auto* c_pre = app.add_subcommand("pretrain", "Self-contrast pre-training");
  add_common(c_pre, opt);
  add_model(c_pre, opt);
  add_train(c_pre, opt);

  auto* c_isc = app.add_subcommand("pretrain-isc", "Cross-subject (ISC) pre-training");
  add_common(c_isc, opt);
  add_model(c_isc, opt);
  add_train(c_isc, opt);

  auto* c_ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with a classifier");
  std::string ckpt_path;
  add_common(c_ft, opt);
  add_train(c_ft, opt);
  c_ft->add_option("--checkpoint", ckpt_path, "Starting checkpoint")->required();

  auto* c_comb = app.add_subcommand("combine", "Combine self- and cross-subject backbones");
  std::string self_path, cross_path, mode = "full";
  add_common(c_comb, opt);
  add_train(c_comb, opt);
  c_comb->add_option("--self", self_path, "Self-contrast checkpoint")->required();
  c_comb->add_option("--cross", cross_path, "Cross-subject checkpoint")->required();
  c_comb->add_option("--mode", mode, "features | full");

  auto* c_eval = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  add_common(c_eval, opt);
  c_eval->add_option("--checkpoint", ckpt_path, "Checkpoint to evaluate")->required();

  auto* c_loso = app.add_subcommand("loso", "Leave-one-subject-out comparison of the three variants");
  add_common(c_loso, opt);
  add_model(c_loso, opt);
  add_train(c_loso, opt);

  auto* c_abl = app.add_subcommand("ablation", "Baseline / +CL / +CL-Large comparison");
  add_common(c_abl, opt);
  add_model(c_abl, opt);
  add_train(c_abl, opt);
  c_abl->add_option("--pretrain-data-dir", opt.pretrain_data_dir,
                    "Disjoint-subject data for CL-Large");

  auto* c_rep = app.add_subcommand("report", "Print a metrics JSON as a table");
  std::string metrics_path;
  c_rep->add_option("--metrics", metrics_path, "Path to a *-metrics.json file")->required();

  CLI11_PARSE(app, argc, argv);

  if (*c_ingest) {
    auto cfg = opt.ingest_config();
    auto result = pipeline::ingest_directory(cfg);
    write_json(manifest_out, pipeline::make_manifest(result, cfg, opt.tr.seed));
    return kOk;
  }
  if (*c_rep) {
    std::ifstream in(metrics_path);
    if (!in) throw std::runtime_error("cannot open " + metrics_path);
    const auto j = nlohmann::json::parse(in);
    std::cout << "Acc " << j.at("accuracy") << "  F1 " << j.at("macro_f1") << "\n";
    for (const char* n : ingest::kStageNames) {
      std::cout << "  " << n << " F1 " << j.at("per_class").at(n).at("f1") << "\n";
    }
    return kOk;
  }

  const fs::path dir = opt.run_dir();
  auto epochs = load_epochs(opt, opt.data_dir);
  const int L = static_cast<int>(epochs.front().samples.size());

  if (*c_pre) {
    auto res = train::pretrain_self(epochs, opt.model_config(L), opt.tr, opt.aug);
    save_train_artifacts(dir, "pretrain", res.report, res.checkpoint);
  } else if (*c_isc) {
    auto res = train::pretrain_cross_subject(epochs, opt.model_config(L), opt.tr, opt.aug);
    save_train_artifacts(dir, "pretrain-isc", res.report, res.checkpoint);
  } else if (*c_ft) {
    auto start = nn::load_checkpoint(ckpt_path);
    auto res = train::finetune(start, epochs, finetune_config(opt));
    std::cout << "final train accuracy " << res.final_train_accuracy << "\n";
    save_train_artifacts(dir, "finetune", res.report, res.checkpoint);
  } else if (*c_comb) {
    const auto cm = mode == "features" ? train::CombineMode::Features : train::CombineMode::Full;
    train::CombinedModel combined(nn::load_checkpoint(self_path), nn::load_checkpoint(cross_path),
                                  opt.tr.combine_alpha, cm, opt.tr.seed);
    auto report = combined.finetune(epochs, finetune_config(opt));
    write_json(dir / "combine-report.json", report.to_json());
    nn::save_checkpoint((dir / "combine-self.ckpt").string(),
                        nn::to_checkpoint(combined.self_branch()));
    nn::save_checkpoint((dir / "combine-cross.ckpt").string(),
                        nn::to_checkpoint(combined.cross_branch()));
    write_json(dir / "combine.json", {{"alpha", opt.tr.combine_alpha},
                                      {"mode", mode},
                                      {"self", "combine-self.ckpt"},
                                      {"cross", "combine-cross.ckpt"}});
  } else if (*c_eval) {
    auto model = nn::from_checkpoint<float>(nn::load_checkpoint(ckpt_path));
    emit_evaluation(dir, "evaluate", eval::evaluate(model, epochs), opt);
  } else if (*c_loso) {
    std::vector<std::string> held = opt.subjects;
    if (held.empty()) {
      std::set<std::string> all;
      for (const auto& e : epochs) all.insert(e.subject_id);
      held.assign(all.begin(), all.end());
    }
    auto results = pipeline::run_loso_cross_subject(epochs, held, opt.model_config(L), opt.tr,
                                                    finetune_config(opt), opt.aug);
    write_json(dir / "loso.json", pipeline::loso_report_json(results));
    pipeline::write_text_atomic((dir / "loso.txt").string(),
                                pipeline::loso_report_table(results));
    std::cout << pipeline::loso_report_table(results);
  } else if (*c_abl) {
    // hold the last subject out as the test night
    std::set<std::string> all;
    for (const auto& e : epochs) all.insert(e.subject_id);
    if (all.size() < 2) throw ingest::IngestError("ablation needs >= 2 subjects");
    const std::string held = *all.rbegin();
    auto split = eval::loso_split(epochs, held);
    std::vector<ingest::Epoch> extra;
    if (!opt.pretrain_data_dir.empty()) extra = load_epochs(opt, opt.pretrain_data_dir);
    auto rows = pipeline::run_ablation(split.train, split.test, extra, opt.model_config(L),
                                       opt.tr, finetune_config(opt), opt.aug);
    write_json(dir / "ablation.json", pipeline::ablation_report_json(rows));
    pipeline::write_text_atomic((dir / "ablation.txt").string(),
                                pipeline::ablation_report_table(rows));
    std::cout << pipeline::ablation_report_table(rows);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pipeline::SubjectOverlap& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOverlapError;
  } catch (const edf::EdfError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEdfError;
  } catch (const ingest::IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIngestError;
  } catch (const eval::UnknownSubject& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEvalError;
  } catch (const eval::LengthMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEvalError;
  } catch (const train::EmptyDataset& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainError;
  } catch (const train::ConfigMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainError;
  } catch (const train::DimMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainError;
  } catch (const contrastive::MissingStage& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainError;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
