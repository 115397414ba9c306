#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "mvitime/pipeline.hpp"

using namespace mvitime::pipeline;
using mvitime::ingest::Epoch;
using mvitime::ingest::SleepStage;
namespace fs = std::filesystem;

namespace {

// One night of 10-Hz signal: 10 epochs (300 s), hypnogram
// W W S1 S2 S2 S3 R R W W, with an optional unmappable tail label.
void write_night(const fs::path& dir, const std::string& rec_prefix, std::uint64_t seed,
                 bool with_movement = false, int spr = 300,
                 const std::string& channel = "EEG Fpz-Cz") {
  const int n_records = with_movement ? 11 : 10;
  auto synth = helpers::make_synth_edf(1, spr, n_records, seed);
  synth.header.signals[0].label = channel;
  mvitime::edf::write_file((dir / (rec_prefix + "0-PSG.edf")).string(), synth.bytes());

  std::vector<mvitime::edf::HypnogramEntry> hyp = {
      {0, 60, "Sleep stage W"},   {60, 30, "Sleep stage 1"}, {90, 60, "Sleep stage 2"},
      {150, 30, "Sleep stage 3"}, {180, 60, "Sleep stage R"}, {240, 60, "Sleep stage W"},
  };
  if (with_movement) hyp.push_back({300, 30, "Movement time"});
  mvitime::edf::write_file((dir / (rec_prefix + "C-Hypnogram.edf")).string(),
                           mvitime::edf::write_hypnogram(hyp));
}

std::vector<Epoch> labeled_subjects(const std::vector<std::string>& subjects, int length) {
  std::vector<Epoch> out;
  int salt = 0;
  for (const auto& s : subjects) {
    for (int c = 0; c < 5; ++c) {
      for (int k = 0; k < 2; ++k) {
        out.push_back(helpers::make_epoch(s, static_cast<SleepStage>(c), length,
                                          static_cast<std::uint64_t>(salt++)));
      }
    }
  }
  return out;
}

mvitime::train::TrainConfig tiny_train(long steps) {
  mvitime::train::TrainConfig cfg;
  cfg.total_steps = steps;
  cfg.warmup_steps = 1;
  cfg.base_lr = 0.01;
  cfg.pretrain_batch = 4;
  cfg.finetune_batch = 8;
  cfg.seed = 2;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("subject key groups the two nights of one subject") {
  CHECK(subject_key("SC4001E0") == "SC400");
  CHECK(subject_key("SC4002E0") == "SC400");  // night 2, same subject
  CHECK(subject_key("SC4112E0") == "SC411");
  CHECK(subject_key("ST7022J0") == "ST702");
  CHECK(subject_key("myrec-01") == "myrec");
  CHECK(subject_key("plain") == "plain");
}

TEST_CASE("directory ingest pairs PSG and hypnogram files") {
  TempDir tmp("mvitime_ingest_basic");
  write_night(tmp.path, "SC4001E", 1);
  write_night(tmp.path, "SC4011E", 2, /*with_movement=*/true);
  // unpaired PSG
  auto lonely = helpers::make_synth_edf(1, 300, 2, 3);
  mvitime::edf::write_file((tmp.path / "SC4021E0-PSG.edf").string(), lonely.bytes());
  // stray file that should be ignored entirely
  std::ofstream(tmp.path / "README.txt") << "notes";

  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();
  cfg.trim_min = 30;  // wider than the recording: keeps everything
  auto result = ingest_directory(cfg);

  CHECK(result.epochs.size() == 20);  // 10 mappable epochs per paired night
  CHECK(result.per_subject.at("SC400") == 10);
  CHECK(result.per_subject.at("SC401") == 10);
  REQUIRE(result.skipped_files.size() == 1);
  CHECK(result.skipped_files[0].find("SC4021E0-PSG.edf") != std::string::npos);
  CHECK(result.exclusions.at("Movement time") == 1);

  // stage sequence of the first night survives in order
  std::vector<SleepStage> expect = {SleepStage::Wake, SleepStage::Wake, SleepStage::S1,
                                    SleepStage::S2,   SleepStage::S2,   SleepStage::S3,
                                    SleepStage::REM,  SleepStage::REM,  SleepStage::Wake,
                                    SleepStage::Wake};
  for (int i = 0; i < 10; ++i) {
    CHECK(result.epochs[static_cast<std::size_t>(i)].stage == expect[static_cast<std::size_t>(i)]);
    CHECK(result.epochs[static_cast<std::size_t>(i)].subject_id == "SC400");
    CHECK(result.epochs[static_cast<std::size_t>(i)].samples.size() == 300);
  }
}

TEST_CASE("wake trimming is applied per recording") {
  TempDir tmp("mvitime_ingest_trim");
  write_night(tmp.path, "SC4001E", 1);
  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();
  cfg.trim_min = 0;  // strip all leading/trailing wake
  auto result = ingest_directory(cfg);
  CHECK(result.epochs.size() == 6);
  CHECK(result.epochs.front().stage == SleepStage::S1);
  CHECK(result.epochs.back().stage == SleepStage::REM);
}

TEST_CASE("missing channel is skipped, not fatal") {
  TempDir tmp("mvitime_ingest_chan");
  write_night(tmp.path, "SC4001E", 1, false, 300, "EEG Pz-Oz");
  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();
  auto result = ingest_directory(cfg);
  CHECK(result.epochs.empty());
  REQUIRE(result.skipped_files.size() == 1);
  CHECK(result.skipped_files[0].find("EEG Fpz-Cz") != std::string::npos);
}

TEST_CASE("sampling-rate mismatch across recordings is fatal") {
  TempDir tmp("mvitime_ingest_rate");
  write_night(tmp.path, "SC4001E", 1, false, 300);
  write_night(tmp.path, "SC4011E", 2, false, 600);  // 20 Hz vs 10 Hz
  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();
  CHECK_THROWS_AS(ingest_directory(cfg), mvitime::ingest::IngestError);
}

TEST_CASE("subset filters select subjects by number") {
  TempDir tmp("mvitime_ingest_subset");
  write_night(tmp.path, "SC4001E", 1);   // subject 00
  write_night(tmp.path, "SC4401E", 2);   // subject 40
  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();

  cfg.subset = Subset::Edf20;
  auto r20 = ingest_directory(cfg);
  CHECK(r20.per_subject.count("SC400") == 1);
  CHECK(r20.per_subject.count("SC440") == 0);

  cfg.subset = Subset::Edf78;
  auto r78 = ingest_directory(cfg);
  CHECK(r78.per_subject.size() == 2);

  cfg.subset = Subset::Custom;
  cfg.custom_subjects = {"SC440"};
  auto rc = ingest_directory(cfg);
  CHECK(rc.per_subject.size() == 1);
  CHECK(rc.per_subject.count("SC440") == 1);
}

TEST_CASE("manifest summarizes the ingest and diffs published counts") {
  TempDir tmp("mvitime_ingest_manifest");
  write_night(tmp.path, "SC4001E", 1);
  IngestConfig cfg;
  cfg.data_dir = tmp.path.string();
  cfg.subset = Subset::Edf20;
  auto result = ingest_directory(cfg);
  auto manifest = make_manifest(result, cfg, 77);

  CHECK(manifest.at("seed") == 77);
  CHECK(manifest.at("subset") == "edf-20");
  CHECK(manifest.at("total_epochs") == 10);
  CHECK(manifest.at("per_subject").at("SC400") == 10);
  CHECK(manifest.at("class_distribution").at("W").at("count") == 4);
  CHECK(manifest.at("class_distribution").at("S2").at("fraction") == doctest::Approx(0.2));
  // 10 epochs against the published 42308
  CHECK(manifest.at("published_count_diff").at("total") == 10 - 42308);
  CHECK(manifest.at("published_count_diff").at("W") == 4 - 8285);

  cfg.subset = Subset::All;
  auto m2 = make_manifest(result, cfg, 0);
  CHECK(m2.at("subset") == "all");
  CHECK(m2.count("published_count_diff") == 0);
}

TEST_CASE("ablation produces the three comparison rows in order") {
  auto model_cfg = mvitime::nn::ModelConfig::tiny(32);
  auto train_e = labeled_subjects({"A", "B"}, 32);
  auto test_e = labeled_subjects({"C"}, 32);
  auto extra_e = labeled_subjects({"D", "E"}, 32);
  mvitime::augment::AugmentConfig aug;
  auto pre_cfg = tiny_train(2);
  auto ft_cfg = tiny_train(2);

  auto rows = run_ablation(train_e, test_e, extra_e, model_cfg, pre_cfg, ft_cfg, aug);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "Baseline");
  CHECK(rows[1].name == "Baseline + CL");
  CHECK(rows[2].name == "Baseline + CL-Large");
  for (const auto& r : rows) {
    CHECK(r.metrics.accuracy >= 0.0);
    CHECK(r.metrics.accuracy <= 1.0);
  }

  auto j = ablation_report_json(rows);
  REQUIRE(j.size() == 3);
  CHECK(j[0].at("method") == "Baseline");
  CHECK(j[1].at("metrics").count("accuracy") == 1);
  auto table = ablation_report_table(rows);
  CHECK(table.find("Baseline + CL-Large") != std::string::npos);
  CHECK(table.find("Acc") != std::string::npos);

  // without extra pre-training data the third arm is skipped
  auto two = run_ablation(train_e, test_e, {}, model_cfg, pre_cfg, ft_cfg, aug);
  REQUIRE(two.size() == 2);
  CHECK(two[1].name == "Baseline + CL");
}

TEST_CASE("ablation refuses pre-training subjects that overlap the evaluation") {
  auto model_cfg = mvitime::nn::ModelConfig::tiny(32);
  auto train_e = labeled_subjects({"A", "B"}, 32);
  auto test_e = labeled_subjects({"C"}, 32);
  auto leaky = labeled_subjects({"A", "D"}, 32);  // A leaks
  mvitime::augment::AugmentConfig aug;
  CHECK_THROWS_AS(
      run_ablation(train_e, test_e, leaky, model_cfg, tiny_train(1), tiny_train(1), aug),
      SubjectOverlap);
  auto leaky_test = labeled_subjects({"C"}, 32);  // test-set leak
  CHECK_THROWS_AS(
      run_ablation(train_e, test_e, leaky_test, model_cfg, tiny_train(1), tiny_train(1), aug),
      SubjectOverlap);
}

TEST_CASE("LOSO protocol evaluates the three method variants per subject") {
  auto model_cfg = mvitime::nn::ModelConfig::tiny(32);
  auto epochs = labeled_subjects({"A", "B", "C"}, 32);
  mvitime::augment::AugmentConfig aug;
  aug.n_segments_max = 4;

  auto results = run_loso_cross_subject(epochs, {"C"}, model_cfg, tiny_train(2), tiny_train(2), aug);
  REQUIRE(results.size() == 1);
  CHECK(results[0].subject == "C");
  REQUIRE(results[0].methods.size() == 3);
  CHECK(results[0].methods[0].method == "MViTime");
  CHECK(results[0].methods[1].method == "MViTime+");
  CHECK(results[0].methods[2].method == "MViTime++");

  auto j = loso_report_json(results);
  REQUIRE(j.size() == 1);
  CHECK(j[0].at("subject") == "C");
  CHECK(j[0].at("methods").size() == 3);
  auto table = loso_report_table(results);
  CHECK(table.find("MViTime++") != std::string::npos);
  CHECK(table.find("Subject") != std::string::npos);

  CHECK_THROWS_AS(
      run_loso_cross_subject(epochs, {"Z"}, model_cfg, tiny_train(1), tiny_train(1), aug),
      mvitime::eval::UnknownSubject);
}

TEST_CASE("confusion heatmap is a valid PPM with darker diagonal") {
  mvitime::eval::ConfusionMatrix cm;
  for (int i = 0; i < 5; ++i) cm.m[i][i] = 10;
  cm.m[0][1] = 5;
  TempDir tmp("mvitime_ppm");
  const std::string path = (tmp.path / "cm.ppm").string();
  write_confusion_ppm(path, cm, 4);

  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic, dims, maxval;
  std::getline(in, magic);
  std::getline(in, dims);
  std::getline(in, maxval);
  CHECK(magic == "P6");
  CHECK(dims == "20 20");
  CHECK(maxval == "255");
  std::vector<unsigned char> px((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(px.size() == 20u * 20u * 3u);
  // top-left cell (max count): fully saturated blue -> red channel 0
  CHECK(px[0] == 0);
  CHECK(px[2] == 255);
  // an empty cell, e.g. row 0 col 2: white
  const std::size_t off = (0 * 20 + 2 * 4) * 3;
  CHECK(px[off] == 255);
  CHECK(px[off + 1] == 255);
  CHECK(px[off + 2] == 255);
}

TEST_CASE("atomic text writes replace the target and leave no temp file") {
  TempDir tmp("mvitime_atomic");
  const std::string path = (tmp.path / "out.txt").string();
  write_text_atomic(path, "first");
  write_text_atomic(path, "second");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), {});
  CHECK(content == "second");
  CHECK_FALSE(fs::exists(path + ".tmp"));
}
