#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "hpguide/server.hpp"
#include "test_support.hpp"

namespace hpguide {
namespace {

using namespace hpguide::testing;

SpaceDef image_space() { return parse_space_text(read_file(HPGUIDE_SAMPLES_DIR "/image_classification.space.json")); }
SpaceDef translation_space() {
  return parse_space_text(read_file(HPGUIDE_SAMPLES_DIR "/machine_translation.space.json"));
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

TEST(Space, ParsesImageClassificationRanges) {
  const auto space = image_space();
  ASSERT_EQ(space.dims(), 3u);
  EXPECT_EQ(space.params[0].name, "beta1");
  EXPECT_EQ(space.params[0].lower, 0.5);
  EXPECT_EQ(space.params[0].upper, 0.9);
  EXPECT_EQ(space.params[1].lower, 0.9);
  EXPECT_EQ(space.params[1].upper, 0.999);
  EXPECT_EQ(space.params[2].lower, 1e-6);
  EXPECT_EQ(space.params[2].upper, 1.0);
  EXPECT_EQ(space.params[2].display_scale, DisplayScale::log);
  EXPECT_EQ(space.metrics[0].direction, Direction::maximize);
}

TEST(Space, ParsesDiscreteTranslationSpace) {
  const auto space = translation_space();
  ASSERT_EQ(space.dims(), 6u);
  for (const auto& p : space.params) EXPECT_TRUE(p.is_discrete()) << p.name;
  EXPECT_EQ(space.params[0].lower, 8.0);
  EXPECT_EQ(space.params[0].upper, 16.0);
  EXPECT_EQ(*space.params[0].step, 8.0);
  EXPECT_EQ(space.metric("perplexity").direction, Direction::minimize);
}

TEST(Space, RejectsDegenerateBounds) {
  const auto message = error_of([] {
    parse_space_text(R"({"params":[{"name":"a","kind":"continuous","lower":1,"upper":1}],
                         "metrics":[{"name":"m","direction":"maximize"}]})");
  });
  EXPECT_NE(message.find("inverted or empty bounds"), std::string::npos) << message;
}

TEST(Space, RejectsDuplicatesAndBadFields) {
  EXPECT_NE(error_of([] {
              parse_space_text(R"({"params":[{"name":"a","kind":"continuous","lower":0,"upper":1},
                                             {"name":"a","kind":"continuous","lower":0,"upper":1}],
                                   "metrics":[{"name":"m","direction":"maximize"}]})");
            }).find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of([] {
              parse_space_text(R"({"params":[{"name":"a","kind":"discrete","lower":0,"upper":1,"step":0.3}],
                                   "metrics":[{"name":"m","direction":"maximize"}]})");
            }).find("step"),
            std::string::npos);
  EXPECT_NE(error_of([] {
              parse_space_text(R"({"params":[{"name":"a","kind":"continuous","lower":0,"upper":1}],
                                   "metrics":[{"name":"m"}]})");
            }).find("direction"),
            std::string::npos);
  EXPECT_FALSE(error_of([] { parse_space_text("{not json"); }).empty());
}

TEST(Space, JsonRoundTrip) {
  const auto space = translation_space();
  const auto again = parse_space(to_json(space));
  EXPECT_EQ(to_json(again), to_json(space));
  EXPECT_EQ(again.fingerprint(), space.fingerprint());
  EXPECT_NE(image_space().fingerprint(), space.fingerprint());
}

TEST(Ingest, InRangeRecordHasNoWarnings) {
  const auto result = ingest_trials(
      R"({"id":"a","config":{"beta1":0.7,"beta2":0.95,"learning_rate":0.5},"metrics":{"accuracy":0.98},"status":"complete","created_at":"2026-01-01T00:00:00Z"})",
      image_space());
  ASSERT_EQ(result.accepted.size(), 1u);
  EXPECT_TRUE(result.warnings.empty());
  EXPECT_TRUE(result.rejected.empty());
}

TEST(Ingest, OutOfRangeIsKeptWithWarning) {
  const auto result = ingest_trials(
      R"({"id":"a","config":{"beta1":0.7,"beta2":0.95,"learning_rate":2.0},"metrics":{"accuracy":0.5}})",
      image_space());
  ASSERT_EQ(result.accepted.size(), 1u);
  EXPECT_EQ(result.accepted[0].config[2], 2.0);
  ASSERT_EQ(result.warnings.size(), 1u);
  EXPECT_NE(result.warnings[0].message.find("value outside declared range"), std::string::npos);
}

TEST(Ingest, NonFiniteMetricIsRejected) {
  const auto space = translation_space();
  const std::string record =
      R"({"id":"x","config":{"encoder_heads":8,"decoder_heads":8,"dropout":0.1,"encoder_hidden":128,"decoder_hidden":128,"batch_size":512},"metrics":{"bleu":NaN}})";
  const auto result = ingest_trials(record, space);
  EXPECT_TRUE(result.accepted.empty());
  ASSERT_EQ(result.rejected.size(), 1u);
  EXPECT_EQ(result.rejected[0].line, 1u);
  EXPECT_NE(result.rejected[0].reason.find("non-finite metric value"), std::string::npos);
}

TEST(Ingest, MalformedAndDuplicateRecordsReportLines) {
  const std::string jsonl =
      R"({"id":"a","config":{"beta1":0.7,"beta2":0.95,"learning_rate":0.5},"metrics":{"accuracy":0.9}})"
      "\n{broken\n"
      R"({"id":"a","config":{"beta1":0.6,"beta2":0.95,"learning_rate":0.5},"metrics":{"accuracy":0.8}})"
      "\n";
  const auto result = ingest_trials(jsonl, image_space());
  EXPECT_EQ(result.accepted.size(), 1u);
  ASSERT_EQ(result.rejected.size(), 2u);
  EXPECT_EQ(result.rejected[0].line, 2u);
  EXPECT_EQ(result.rejected[0].reason, "malformed record");
  EXPECT_EQ(result.rejected[1].line, 3u);
  EXPECT_NE(result.rejected[1].reason.find("duplicate"), std::string::npos);
}

TEST(Ingest, MissingTargetIsStoredEarlyStopped) {
  const auto result = ingest_trials(
      R"({"id":"a","config":{"beta1":0.7,"beta2":0.95,"learning_rate":0.5},"metrics":{},"status":"complete"})",
      image_space());
  ASSERT_EQ(result.accepted.size(), 1u);
  EXPECT_EQ(result.accepted[0].status, TrialStatus::early_stopped);
  EXPECT_EQ(result.warnings.size(), 1u);
}

TEST(Ingest, ResendingBatchAddsNothing) {
  const auto jsonl = read_file(HPGUIDE_SAMPLES_DIR "/image_classification.trials.jsonl");
  const auto [once, first] = Dataset(image_space()).ingest(jsonl);
  EXPECT_EQ(first.accepted.size(), 120u);
  EXPECT_EQ(once.version(), 120u);
  const auto [twice, second] = once.ingest(jsonl);
  EXPECT_TRUE(second.accepted.empty());
  EXPECT_EQ(second.rejected.size(), 120u);
  EXPECT_EQ(twice.size(), 120u);
  EXPECT_EQ(twice.version(), once.version());
}

TEST(Ingest, SerializationRoundTrip) {
  const auto jsonl = read_file(HPGUIDE_SAMPLES_DIR "/image_classification.trials.jsonl");
  const auto [dataset, result] = Dataset(image_space()).ingest(jsonl);
  const auto [again, again_result] = Dataset(image_space()).ingest(dataset.to_jsonl());
  EXPECT_TRUE(again_result.rejected.empty());
  EXPECT_EQ(again.trials(), dataset.trials());
  const auto a = design_matrix(dataset, "accuracy");
  const auto b = design_matrix(again, "accuracy");
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.ids, b.ids);
}

TEST(DesignMatrix, RowsMatchTrialsExactly) {
  const auto jsonl = read_file(HPGUIDE_SAMPLES_DIR "/image_classification.trials.jsonl");
  const auto [dataset, result] = Dataset(image_space()).ingest(jsonl);
  const auto dm = design_matrix(dataset, "accuracy");
  ASSERT_EQ(dm.X.cols(), 3u);
  for (std::size_t i = 0; i < dm.ids.size(); ++i) {
    const auto& trial = *std::find_if(dataset.trials().begin(), dataset.trials().end(),
                                      [&](const Trial& t) { return t.id == dm.ids[i]; });
    EXPECT_TRUE(std::equal(trial.config.begin(), trial.config.end(), dm.X.row(i).begin()));
    EXPECT_EQ(dm.y[i], trial.metrics.at("accuracy"));
  }
}

TEST(DesignMatrix, PresenceAndStatusFilters) {
  const auto space = translation_space();
  const std::vector<double> x{8, 16, 0.1, 256, 512, 1024};
  std::string jsonl;
  for (int i = 0; i < 10; ++i) {
    std::map<std::string, double> metrics{{"perplexity", 5.0 + i}};
    if (i % 2 == 0) metrics["bleu"] = 20.0 + i;
    jsonl += trial_line(space, "t" + std::to_string(i), x, metrics) + "\n";
  }
  // One early-stopped trial that carries bleu.
  jsonl += trial_line(space, "es", x, {{"bleu", 1.0}}, "early_stopped") + "\n";
  const auto [dataset, result] = Dataset(space).ingest(jsonl);
  ASSERT_EQ(dataset.size(), 11u);
  EXPECT_EQ(design_matrix(dataset, "bleu").X.rows(), 5u);
  EXPECT_EQ(design_matrix(dataset, "bleu", true).X.rows(), 6u);
  EXPECT_EQ(design_matrix(dataset, "perplexity").X.rows(), 5u);
  EXPECT_EQ(design_matrix(dataset, "perplexity", true).X.rows(), 10u);
}

TEST(DesignMatrix, EmptyDatasetIsInsufficient) {
  const auto message = error_of([] { design_matrix(Dataset(image_space()), "accuracy"); });
  EXPECT_NE(message.find("insufficient trials"), std::string::npos);
  EXPECT_THROW(design_matrix(Dataset(image_space()), "nope"), ValidationError);
}

}  // namespace
}  // namespace hpguide
