#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mvitime/eval.hpp"

using namespace mvitime::eval;
using mvitime::ingest::Epoch;
using mvitime::ingest::SleepStage;

namespace {

std::vector<SleepStage> stages(std::initializer_list<int> xs) {
  std::vector<SleepStage> out;
  for (int x : xs) out.push_back(static_cast<SleepStage>(x));
  return out;
}

}  // namespace

TEST_CASE("confusion matrix counts reference rows against prediction columns") {
  auto refs = stages({0, 0, 1, 2, 2, 2, 4});
  auto preds = stages({0, 1, 1, 2, 2, 0, 4});
  auto cm = confusion_matrix(preds, refs);
  CHECK(cm.total() == 7);
  CHECK(cm.trace() == 5);
  CHECK(cm.m[0][0] == 1);
  CHECK(cm.m[0][1] == 1);  // W misread as S1
  CHECK(cm.m[1][1] == 1);
  CHECK(cm.m[2][2] == 2);
  CHECK(cm.m[2][0] == 1);
  CHECK(cm.m[4][4] == 1);
  CHECK(cm.m[3][3] == 0);

  auto csv = cm.to_csv();
  CHECK(csv.find("ref\\pred,W,S1,S2,S3,REM") == 0);
  CHECK(csv.find("S2,1,0,2,0,0") != std::string::npos);
}

TEST_CASE("confusion matrix validation") {
  CHECK_THROWS_AS(confusion_matrix(stages({0}), stages({0, 1})), LengthMismatch);
  CHECK_THROWS_AS(confusion_matrix({}, {}), LengthMismatch);
}

TEST_CASE("metrics hand computation") {
  // refs:  4x W (2 right), 3x S2 (2 right, 1 predicted W)
  auto refs = stages({0, 0, 0, 0, 2, 2, 2});
  auto preds = stages({0, 0, 2, 2, 2, 2, 0});
  auto m = metrics(confusion_matrix(preds, refs));

  CHECK(m.accuracy == doctest::Approx(4.0 / 7.0));
  // W: tp=2, predicted W 3 times, support 4
  CHECK(m.per_class[0].precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class[0].recall == doctest::Approx(0.5));
  const double f1_w = 2 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5);
  CHECK(m.per_class[0].f1 == doctest::Approx(f1_w));
  CHECK(m.per_class[0].support == 4);
  // S2: tp=2, predicted S2 4 times, support 3
  CHECK(m.per_class[2].precision == doctest::Approx(0.5));
  CHECK(m.per_class[2].recall == doctest::Approx(2.0 / 3.0));
  const double f1_s2 = 2 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0);
  CHECK(m.per_class[2].f1 == doctest::Approx(f1_s2));
  // S1, S3, REM absent: flagged, excluded from the macro average
  for (int c : {1, 3, 4}) {
    CHECK(m.per_class[c].zero_support);
    CHECK(m.per_class[c].support == 0);
  }
  CHECK(m.macro_f1 == doctest::Approx((f1_w + f1_s2) / 2.0));
}

TEST_CASE("perfect and all-wrong predictions bound the metrics") {
  auto refs = stages({0, 1, 2, 3, 4, 0, 1, 2, 3, 4});
  auto perfect = metrics(confusion_matrix(refs, refs));
  CHECK(perfect.accuracy == doctest::Approx(1.0));
  CHECK(perfect.macro_f1 == doctest::Approx(1.0));

  auto shifted = stages({1, 2, 3, 4, 0, 1, 2, 3, 4, 0});
  auto wrong = metrics(confusion_matrix(shifted, refs));
  CHECK(wrong.accuracy == doctest::Approx(0.0));
  CHECK(wrong.macro_f1 == doctest::Approx(0.0));
}

TEST_CASE("metrics report serialization") {
  auto refs = stages({0, 0, 2, 2});
  auto m = metrics(confusion_matrix(refs, refs));
  auto j = m.to_json();
  CHECK(j.at("accuracy") == doctest::Approx(1.0));
  CHECK(j.at("per_class").at("W").at("f1") == doctest::Approx(1.0));
  CHECK(j.at("per_class").at("REM").at("zero_support") == true);

  auto table = m.to_table();
  CHECK(table.find("Acc 1.000") != std::string::npos);
  CHECK(table.find("Per Class F1") != std::string::npos);
  CHECK(table.find("(no support)") != std::string::npos);

  ConfusionMatrix empty;
  CHECK_THROWS_AS(metrics(empty), EmptyMatrix);
}

TEST_CASE("LOSO split partitions strictly by subject") {
  std::vector<Epoch> epochs;
  for (const char* s : {"A", "B", "C"}) {
    for (int i = 0; i < 4; ++i) {
      epochs.push_back(helpers::make_epoch(s, SleepStage::S2, 8, i));
    }
  }
  auto split = loso_split(epochs, "B");
  CHECK(split.test.size() == 4);
  CHECK(split.train.size() == 8);
  for (const auto& e : split.test) CHECK(e.subject_id == "B");
  for (const auto& e : split.train) CHECK(e.subject_id != "B");
  CHECK(split.test.size() + split.train.size() == epochs.size());

  CHECK_THROWS_AS(loso_split(epochs, "Z"), UnknownSubject);
}

TEST_CASE("argmax prediction breaks ties toward the lowest class index") {
  auto cfg = mvitime::nn::ModelConfig::tiny(16);
  mvitime::nn::MViTime<float> model(cfg, 1);
  // Zero every parameter: all logits are exactly 0, a five-way tie.
  for (auto& [name, t] : model.params) std::fill(t.v.begin(), t.v.end(), 0.0f);

  std::vector<Epoch> epochs;
  for (int i = 0; i < 5; ++i) {
    epochs.push_back(helpers::make_epoch("s", static_cast<SleepStage>(i), 16, i));
  }
  auto preds = predict_stages(model, epochs);
  REQUIRE(preds.size() == 5);
  for (auto p : preds) CHECK(p == SleepStage::Wake);

  auto ev = evaluate(model, epochs);
  CHECK(ev.confusion.total() == 5);
  CHECK(ev.metrics.accuracy == doctest::Approx(0.2));  // only the true-W epoch
  for (int r = 0; r < 5; ++r) CHECK(ev.confusion.m[r][0] == 1);
}

TEST_CASE("chunked prediction agrees with per-epoch prediction") {
  auto cfg = mvitime::nn::ModelConfig::tiny(16);
  mvitime::nn::MViTime<float> model(cfg, 3);
  std::vector<Epoch> epochs;
  for (int i = 0; i < 70; ++i) {  // forces two chunks
    epochs.push_back(helpers::make_epoch("s", static_cast<SleepStage>(i % 5), 16,
                                         static_cast<std::uint64_t>(i)));
  }
  auto all = predict_stages(model, epochs);
  REQUIRE(all.size() == 70);
  for (int i = 0; i < 70; ++i) {
    auto one = predict_stages(model, {epochs[static_cast<std::size_t>(i)]});
    CHECK(one[0] == all[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("prediction validates epoch length") {
  auto cfg = mvitime::nn::ModelConfig::tiny(16);
  mvitime::nn::MViTime<float> model(cfg, 3);
  auto bad = helpers::make_epoch("s", SleepStage::Wake, 20, 1);
  CHECK_THROWS_AS(predict_stages(model, {bad}), mvitime::train::ConfigMismatch);
}

TEST_CASE("evaluate on a combined model produces a full report") {
  auto cfg = mvitime::nn::ModelConfig::tiny(16);
  mvitime::nn::MViTime<float> a(cfg, 1), b(cfg, 2);
  mvitime::train::CombinedModel cm(mvitime::nn::to_checkpoint(a), mvitime::nn::to_checkpoint(b),
                                   0.5, mvitime::train::CombineMode::Full);
  std::vector<Epoch> epochs;
  for (int i = 0; i < 10; ++i) {
    epochs.push_back(helpers::make_epoch("s", static_cast<SleepStage>(i % 5), 16,
                                         static_cast<std::uint64_t>(i)));
  }
  auto ev = evaluate(cm, epochs);
  CHECK(ev.confusion.total() == 10);
  CHECK(ev.metrics.accuracy >= 0.0);
  CHECK(ev.metrics.accuracy <= 1.0);

  auto preds = predict_stages(cm, epochs);
  auto refs = std::vector<SleepStage>();
  for (const auto& e : epochs) refs.push_back(e.stage);
  auto cm2 = confusion_matrix(preds, refs);
  CHECK(cm2.total() == ev.confusion.total());
  CHECK(cm2.trace() == ev.confusion.trace());
}
