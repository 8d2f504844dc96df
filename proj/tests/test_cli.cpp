#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <string>

#include "server_harness.hpp"
#include "test_support.hpp"

namespace hpguide {
namespace {

using namespace hpguide::testing;

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string command = std::string(HPGUIDE_CLI_PATH) + " " + args + " 2>/dev/null";
  Run run;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) return run;
  std::array<char, 4096> buffer{};
  std::size_t n = 0;
  while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) run.out.append(buffer.data(), n);
  const int raw = ::pclose(pipe);
  run.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return run;
}

const std::string kSpace = HPGUIDE_SAMPLES_DIR "/image_classification.space.json";
const std::string kTrials = HPGUIDE_SAMPLES_DIR "/image_classification.trials.jsonl";
const std::string kData = " --space " + kSpace + " --trials " + kTrials + " --metric accuracy";

TEST(Cli, ImportanceJsonIsDeterministicAndNormalized) {
  const auto a = cli("importance" + kData + " --seed 4 --json");
  const auto b = cli("importance" + kData + " --seed 4 --json");
  ASSERT_EQ(a.status, 0);
  EXPECT_EQ(a.out, b.out);
  const Json doc = Json::parse(a.out);
  double sum = 0.0;
  for (const auto& e : doc.at("entries")) sum += e.at("displayed_score").get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Cli, HumanTablesByDefault) {
  const auto importance = cli("importance" + kData);
  ASSERT_EQ(importance.status, 0);
  EXPECT_NE(importance.out.find("learning_rate"), std::string::npos);
  const auto bounds = cli("bounds" + kData);
  ASSERT_EQ(bounds.status, 0);
  EXPECT_NE(bounds.out.find("surrogate R^2"), std::string::npos);
  const auto cv = cli("cv" + kData + " --k 5 --trees 20");
  ASSERT_EQ(cv.status, 0);
  EXPECT_NE(cv.out.find("mean R^2"), std::string::npos);
}

TEST(Cli, JsonMatchesServerPayloadBytes) {
  const TempDir dir;
  RunningServer server(parse_space_text(read_file(kSpace)), dir.path() / "log.jsonl");
  auto client = server.client();
  ASSERT_EQ(client.Post("/api/trials", read_file(kTrials), "application/x-ndjson")->status, 200);
  EXPECT_EQ(cli("importance" + kData + " --seed 9 --json").out,
            client.Get("/api/importance?metric=accuracy&seed=9")->body);
  EXPECT_EQ(cli("importance" + kData + " --seed 9 --json --params beta1,learning_rate --pairs").out,
            client.Get("/api/importance?metric=accuracy&seed=9&params=beta1,learning_rate&pairs=true")->body);
  EXPECT_EQ(cli("bounds" + kData + " --seed 9 --json").out, client.Get("/api/bounds?metric=accuracy&seed=9")->body);
  EXPECT_EQ(cli("cv" + kData + " --seed 9 --k 10 --json").out,
            client.Get("/api/model-fit?metric=accuracy&seed=9&k=10")->body);
  const std::string spec = HPGUIDE_SAMPLES_DIR "/image_classification.grid.json";
  const Json request = {{"strategy", "adaptive_init"}, {"spec", Json::parse(read_file(spec))}};
  EXPECT_EQ(cli("suggest --strategy adaptive_init --spec " + spec + " --json").out,
            client.Post("/api/suggest", request.dump(), "application/json")->body);
}

TEST(Cli, SuggestNaiveEmits1500Lines) {
  const auto run = cli("suggest --strategy naive --spec " HPGUIDE_SAMPLES_DIR "/machine_translation.grid.json");
  ASSERT_EQ(run.status, 0);
  std::size_t lines = 0;
  for (const char c : run.out) lines += c == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 1500u);
  const Json first = Json::parse(run.out.substr(0, run.out.find('\n')));
  EXPECT_EQ(first.at("round"), 0);
  EXPECT_EQ(first.at("config").at("batch_size"), 512.0);
}

TEST(Cli, AdaptiveSessionThroughFiles) {
  const TempDir dir;
  const auto state = (dir.path() / "state.json").string();
  const auto next_state = (dir.path() / "state2.json").string();
  const auto results = (dir.path() / "results.jsonl").string();
  const auto init = cli("suggest --strategy adaptive_init --spec " HPGUIDE_SAMPLES_DIR
                        "/image_classification.grid.json --state-out " + state);
  ASSERT_EQ(init.status, 0);
  {
    std::ofstream out(results);
    std::size_t start = 0;
    while (start < init.out.size()) {
      const auto end = init.out.find('\n', start);
      const Json line = Json::parse(init.out.substr(start, end - start));
      const double lr = line.at("config").at("learning_rate").get<double>();
      out << Json{{"config", line.at("config")}, {"score", -std::abs(lr - 0.3)}}.dump() << "\n";
      start = end + 1;
    }
  }
  const auto refine = cli("suggest --strategy adaptive_refine --state " + state + " --results " + results +
                          " --direction maximize --json --state-out " + next_state);
  ASSERT_EQ(refine.status, 0);
  const Json payload = Json::parse(refine.out);
  EXPECT_EQ(payload.at("state").at("round"), 1);
  EXPECT_EQ(Json::parse(read_file(next_state)), payload.at("state"));
}

TEST(Cli, IngestIntoStoreAndExitCodes) {
  const TempDir dir;
  const auto store = (dir.path() / "store.jsonl").string();
  const auto first = cli("ingest --space " + kSpace + " --trials " + kTrials + " --store " + store + " --json");
  ASSERT_EQ(first.status, 0);
  EXPECT_EQ(Json::parse(first.out).at("version"), 120);
  // Second pass: every id is a duplicate, so every record is rejected.
  const auto second = cli("ingest --space " + kSpace + " --trials " + kTrials + " --store " + store + " --json");
  EXPECT_EQ(second.status, 1);
  EXPECT_EQ(Json::parse(second.out).at("accepted"), 0);
  EXPECT_EQ(split_jsonl(read_file(store)).size(), 120u);

  const auto bad = (dir.path() / "bad.jsonl").string();
  {
    std::ofstream out(bad);
    out << "{oops\n";
  }
  EXPECT_EQ(cli("importance --space " + kSpace + " --trials " + bad + " --metric accuracy").status, 1);
  EXPECT_EQ(cli("importance" + kData + " --params nope").status, 1);
  EXPECT_EQ(cli("bounds --space " + kSpace + " --trials " + kTrials + " --metric nope").status, 1);
  EXPECT_EQ(cli("cv" + kData + " --min-trials 500").status, 1);
  EXPECT_EQ(cli("frobnicate").status, 1);
  EXPECT_EQ(cli("--help").status, 0);
}

TEST(Cli, HoldoutThenCrossValidate) {
  const auto run = cli("cv" + kData + " --holdout-train 0.4 --k 5 --trees 20 --json");
  ASSERT_EQ(run.status, 0);
  // 120 trials at 0.4 leave 72 held out.
  EXPECT_EQ(Json::parse(run.out).at("n_train"), 72);
}

}  // namespace
}  // namespace hpguide
