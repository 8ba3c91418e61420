#include "simulstream/agent.hpp"

#include <future>
#include <random>

#include "gtest/gtest.h"
#include "simulstream/session.hpp"
#include "test_util.hpp"

namespace simulstream {
namespace {

using testing::EndlessAgent;
using testing::materialize;
using testing::OracleModel;
using testing::RecordingOracleAgent;
using testing::temp_dir;
using testing::tiny_corpus;

Utterance demo_utterance(int packets = 10, int ref_es = 7, int ref_fr = 9) {
  Utterance utt;
  utt.id = "demo";
  std::vector<FrameVector> frames(packets, FrameVector(2, 1.0f));
  utt.stream = make_stream(frames, 1);
  for (int i = 1; i <= ref_es; ++i)
    utt.references["es"].push_back("es" + std::to_string(i));
  for (int i = 1; i <= ref_fr; ++i)
    utt.references["fr"].push_back("fr" + std::to_string(i));
  return utt;
}

class ImmediateEosAgent : public Agent {
 public:
  bool supports(const std::string&) const override { return true; }
  void begin_session(const SessionInfo&) override {}
  void on_source(const Packet&) override {}
  std::optional<std::string> write(const std::string&, int) override {
    return std::nullopt;
  }
  void end_session() override {}
};

TEST(RunSession, OracleSyncK6BothLanguages) {
  const Utterance utt = demo_utterance();
  auto agent = oracle_agent(utt);
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 6), *agent);
  ASSERT_FALSE(trace.failed);
  EXPECT_EQ(trace.hypothesis("es"), utt.references.at("es"));
  EXPECT_EQ(trace.hypothesis("fr"), utt.references.at("fr"));
  EXPECT_EQ(trace.languages.at("es").g_record.front(), 6);
  EXPECT_EQ(trace.languages.at("fr").g_record.front(), 6);
}

TEST(RunSession, OracleAsyncStaggersFirstWrites) {
  const Utterance utt = demo_utterance();
  auto agent = oracle_agent(utt);
  const auto trace =
      run_session(utt, Schedule::async({{"es", 4}, {"fr", 6}}), *agent);
  ASSERT_FALSE(trace.failed);
  EXPECT_EQ(trace.languages.at("es").g_record.front(), 4);
  EXPECT_EQ(trace.languages.at("fr").g_record.front(), 6);
  EXPECT_EQ(trace.hypothesis("es"), utt.references.at("es"));
  EXPECT_EQ(trace.hypothesis("fr"), utt.references.at("fr"));
}

TEST(RunSession, ImmediateEosGivesEmptyHypotheses) {
  const Utterance utt = demo_utterance();
  ImmediateEosAgent agent;
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 3), agent);
  ASSERT_FALSE(trace.failed);
  EXPECT_TRUE(trace.hypothesis("es").empty());
  EXPECT_TRUE(trace.hypothesis("fr").empty());
  EXPECT_TRUE(trace.languages.at("es").g_record.empty());
  // FINISH happened at the first write grant
  int finishes = 0;
  for (const auto& ev : trace.events)
    finishes += ev.action.kind == ActionKind::kFinish ? 1 : 0;
  EXPECT_EQ(finishes, 2);
}

TEST(RunSession, OracleFinishesLanguagesAtDifferentSteps) {
  const Utterance utt = demo_utterance(10, 3, 8);
  auto agent = oracle_agent(utt);
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 2), *agent);
  ASSERT_FALSE(trace.failed);
  int es_finish_step = -1, fr_finish_step = -1;
  for (const auto& ev : trace.events) {
    if (ev.action.kind != ActionKind::kFinish) continue;
    (ev.action.lang == "es" ? es_finish_step : fr_finish_step) = ev.step;
  }
  EXPECT_GE(es_finish_step, 0);
  EXPECT_GT(fr_finish_step, es_finish_step);
  EXPECT_EQ(trace.hypothesis("es").size(), 3u);
  EXPECT_EQ(trace.hypothesis("fr").size(), 8u);
}

TEST(RunSession, EndlessAgentTruncatesAtCap) {
  const Utterance utt = demo_utterance(5);
  EndlessAgent agent;
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 2), agent);
  ASSERT_FALSE(trace.failed);
  for (const auto& lang : {"es", "fr"}) {
    EXPECT_TRUE(trace.languages.at(lang).truncated);
    EXPECT_EQ(trace.hypothesis(lang).size(), static_cast<size_t>(2 * 5 + 10));
  }
}

TEST(RunSession, UnsupportedLanguageFailsSession) {
  const Utterance utt = demo_utterance();
  std::map<std::string, std::vector<std::string>> only_es{
      {"es", utt.references.at("es")}};
  OracleAgent agent(only_es);
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 3), agent);
  EXPECT_TRUE(trace.failed);
  EXPECT_NE(trace.failure_reason.find("fr"), std::string::npos);
}

TEST(RunSession, EmptyStreamFailsSession) {
  Utterance utt;
  utt.id = "empty";
  utt.references["es"] = {"x"};
  OracleAgent agent(utt.references);
  const auto trace = run_session(utt, Schedule::sync({"es"}, 1), agent);
  EXPECT_TRUE(trace.failed);
}

TEST(RunSession, AgentNeverSeesUndeliveredPackets) {
  const Utterance utt = demo_utterance(12, 9, 11);
  RecordingOracleAgent agent(utt);
  const auto trace =
      run_session(utt, Schedule::async({{"es", 3}, {"fr", 5}}), agent);
  ASSERT_FALSE(trace.failed);
  // delivery order is exactly the stream order
  for (size_t i = 0; i < agent.seen_indices.size(); ++i)
    EXPECT_EQ(agent.seen_indices[i], static_cast<int>(i) + 1);
  // at each write grant the agent had exactly g(t) packets
  std::vector<int> expected;
  for (const auto& ev : trace.events) {
    if (ev.action.kind != ActionKind::kWrite) continue;
    expected.push_back(
        trace.languages.at(ev.action.lang).g_record[ev.action.slot - 1]);
  }
  ASSERT_LE(expected.size(), agent.packets_at_write.size());
  for (size_t i = 0; i < expected.size(); ++i)
    EXPECT_EQ(agent.packets_at_write[i], expected[i]);
}

TEST(ModelAgentTest, OracleProbabilityModelMatchesOracleAgent) {
  const Utterance utt = demo_utterance(8, 5, 6);
  std::vector<std::vector<std::string>> sentences{utt.references.at("es"),
                                                  utt.references.at("fr")};
  auto vocab = std::make_shared<Vocabulary>(
      Vocabulary::build(sentences, {"es", "fr"}));
  auto set = std::make_shared<ModelSet>();
  set->variant = Conditioning::kSeparate;
  set->vocabulary = vocab;
  set->k_per_lang = {{"es", 3}, {"fr", 3}};
  set->separate["es"] =
      std::make_shared<OracleModel>(vocab, utt.references.at("es"));
  set->separate["fr"] =
      std::make_shared<OracleModel>(vocab, utt.references.at("fr"));

  ModelAgent model_side(set);
  auto oracle_side = oracle_agent(utt);
  const Schedule schedule = Schedule::sync({"es", "fr"}, 3);
  const auto a = run_session(utt, schedule, model_side);
  const auto b = run_session(utt, schedule, *oracle_side);
  EXPECT_TRUE(a == b);
}

TEST(ModelAgentTest, UniformModelEmitsLowestIdUntilTruncation) {
  const Utterance utt = demo_utterance(4, 3, 3);
  auto vocab = std::make_shared<Vocabulary>(
      Vocabulary::build({{"a", "b"}}, {"es", "fr"}));
  auto set = std::make_shared<ModelSet>();
  set->variant = Conditioning::kSeparate;
  set->vocabulary = vocab;
  set->k_per_lang = {{"es", 2}, {"fr", 2}};
  set->separate["es"] = std::make_shared<UniformModel>(vocab);
  set->separate["fr"] = std::make_shared<UniformModel>(vocab);
  ModelAgent agent(set);
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 2), agent);
  ASSERT_FALSE(trace.failed);
  EXPECT_TRUE(trace.languages.at("es").truncated);
  for (const auto& tok : trace.hypothesis("es")) EXPECT_EQ(tok, "<pad>");
}

TEST(ModelAgentTest, TrainedModelReachesBleu100AboveThreshold) {
  auto dir = temp_dir("agent_trained");
  auto corpus_files = tiny_corpus(dir, {{"es", 2}}, 60, 16);
  auto train = materialize(corpus_files.train, {"es"}, 3);
  auto set = std::make_shared<ModelSet>(
      train_count_model(train, Conditioning::kSeparate, {{"es", 3}}, 1e-3));
  auto eval_set = materialize(corpus_files.test, {"es"}, 3);
  for (const auto& utt : eval_set) {
    ModelAgent agent(set);
    const auto trace = run_session(utt, Schedule::sync({"es"}, 3), agent, 3);
    ASSERT_FALSE(trace.failed);
    EXPECT_EQ(trace.hypothesis("es"), utt.reference("es")) << utt.id;
    EXPECT_FALSE(trace.languages.at("es").truncated);
  }
}

TEST(UniformAgentTest, DeterministicPerUtteranceAndLanguage) {
  const Utterance utt = demo_utterance();
  UniformAgent a(utt.references, utt.id, 42);
  UniformAgent b(utt.references, utt.id, 42);
  const Schedule schedule = Schedule::async({{"es", 2}, {"fr", 4}});
  EXPECT_TRUE(run_session(utt, schedule, a) == run_session(utt, schedule, b));

  UniformAgent c(utt.references, utt.id, 43);
  EXPECT_FALSE(run_session(utt, schedule, a) == run_session(utt, schedule, c));
}

TEST(UniformAgentTest, StopsAtReferenceLength) {
  const Utterance utt = demo_utterance(10, 4, 6);
  UniformAgent agent(utt.references, utt.id, 1);
  const auto trace = run_session(utt, Schedule::sync({"es", "fr"}, 2), agent);
  ASSERT_FALSE(trace.failed);
  EXPECT_EQ(trace.hypothesis("es").size(), 4u);
  EXPECT_EQ(trace.hypothesis("fr").size(), 6u);
}

TEST(Sessions, ConcurrentSessionsMatchSoloRuns) {
  std::vector<Utterance> utts;
  std::mt19937 rng(51);
  for (int i = 0; i < 40; ++i) {
    Utterance utt = demo_utterance(3 + static_cast<int>(rng() % 10),
                                   1 + static_cast<int>(rng() % 12),
                                   1 + static_cast<int>(rng() % 12));
    utt.id = "utt" + std::to_string(i);
    utts.push_back(std::move(utt));
  }
  const Schedule schedule = Schedule::async({{"es", 2}, {"fr", 5}});
  std::vector<SessionTrace> solo;
  for (const auto& utt : utts) {
    auto agent = oracle_agent(utt);
    solo.push_back(run_session(utt, schedule, *agent));
  }
  std::vector<std::future<SessionTrace>> futures;
  for (const auto& utt : utts) {
    futures.push_back(std::async(std::launch::async, [&utt, &schedule] {
      auto agent = oracle_agent(utt);
      return run_session(utt, schedule, *agent);
    }));
  }
  for (size_t i = 0; i < utts.size(); ++i)
    EXPECT_TRUE(futures[i].get() == solo[i]) << i;
}

}  // namespace
}  // namespace simulstream
