#include <doctest.h>

#include "mcqrag/mock_providers.hpp"
#include "mcqrag/runner.hpp"
#include "support.hpp"

using namespace mcqrag;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = MCQRAG_FIXTURES;

const char* kSmallDataset =
    "id,question,option_a,option_b,option_c,option_d,answer,rationale\n"
    "s1,Which organ pumps blood?,Liver,Heart,Kidney,Lung,B,The heart pumps blood.\n"
    "s2,Which mosquito spreads dengue?,Anopheles,Culex,Aedes,Mansonia,C,Aedes mosquitoes spread dengue.\n"
    "s3,Scurvy follows a lack of which vitamin?,A,B12,C,D,C,\n"
    "s4,Largest organ of the body?,Liver,Brain,Skin,Lung,C,The skin is the largest organ.\n"
    "s5,\"Bad labels ক. x খ. y গ. z ঘ. w\",,,,,খ,\n";

// Answers every question with `letter_for(subject)` and a fixed rationale.
std::shared_ptr<ChatBackend> answering(std::function<std::string(const std::string&)> letter_for) {
  return std::make_shared<RuleChatBackend>([letter_for](const ChatRequest& r) {
    if (r.purpose == "router") return std::string("Yes");
    if (r.purpose != "answer") return std::string("notes");
    return "{\"O\": \"" + letter_for(r.subject) + "\", \"R\": \"The heart pumps blood.\"}";
  });
}

std::unique_ptr<ProviderHub> hub_with(std::shared_ptr<ChatBackend> chat) {
  ProviderBackends b;
  b.chat = std::move(chat);
  b.embedding = std::make_shared<HashEmbeddingBackend>(64);
  ProviderSettings s;
  s.retry.base_delay = std::chrono::milliseconds(1);
  s.retry.max_attempts = 2;
  return std::make_unique<ProviderHub>(b, s, std::make_shared<RecordingSleeper>());
}

ExperimentConfig small_config(const testing::TempDir& dir, Strategy strategy = Strategy::zero_shot) {
  testing::write_file(dir / "data.csv", kSmallDataset);
  ExperimentConfig cfg;
  cfg.dataset = dir / "data.csv";
  cfg.corpus_manifest = kFixtures / "corpus/manifest.json";
  cfg.strategy = strategy;
  cfg.pipeline.model_id = "unit-model";
  cfg.seed = 7;
  cfg.output_dir = dir / "out";
  return cfg;
}

ResultRow sample_row() {
  ResultRow r;
  r.question_id = "q,1";
  r.strategy = Strategy::aggregate;
  r.model = "m";
  r.gold = Option::C;
  r.predicted = Option::C;
  r.gold_rationale = "line one\nline \"two\"";
  r.generated_rationale = "বাংলা, ব্যাখ্যা";
  r.route = Route::local;
  r.decision_kind = DecisionKind::tie;
  r.attempts = 3;
  MetricBundle m;
  m.correct = 1;
  m.bert_f1 = 0.123456789;
  m.meteor = 0.5;
  m.rouge1 = {1.0 / 3.0, 0.25, 0.2857142857};
  m.bleu2 = 2.0 / 3.0;
  r.metrics = quantize(m);
  r.has_bert = true;
  r.trace = {{"local", "k=3", 1200}, {"vote", "k=3:C", 0}};
  return r;
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("config files resolve relative paths and reject unknown keys") {
  testing::TempDir dir;
  testing::write_file(dir / "cfg/exp.json", R"({
    "dataset": "data.csv", "corpus": "../corpus/manifest.json", "strategy": "agentic",
    "model": "gpt-x", "seed": 3, "concurrency": 4, "output_dir": "runs/a",
    "chunking": {"chunk_size": 500, "overlap": 100},
    "agentic": {"tau1": 250}, "aggregate": {"k_values": [2, 4, 8], "tiebreak_k": 8},
    "iterative": {"judge_mode": "self_check"}, "providers": {"mode": "mock", "max_attempts": 2}
  })");
  const auto cfg = load_config(dir / "cfg/exp.json");
  CHECK(cfg.dataset == dir / "cfg/data.csv");
  CHECK(cfg.corpus_manifest == dir / "corpus/manifest.json");
  CHECK(cfg.output_dir == dir / "cfg/runs/a");
  CHECK(cfg.strategy == Strategy::agentic);
  CHECK(cfg.pipeline.model_id == "gpt-x");
  CHECK(cfg.seed == 3u);
  CHECK(cfg.concurrency == 4);
  CHECK(cfg.chunking.chunk_size == 500);
  CHECK(cfg.pipeline.agentic.tau1 == 250);
  CHECK(cfg.pipeline.agentic.tau2 == 200);
  CHECK(cfg.pipeline.aggregate.k_values == std::vector<int>{2, 4, 8});
  CHECK(cfg.pipeline.iterative.judge_mode == JudgeMode::self_check);
  CHECK(cfg.providers.max_attempts == 2);

  testing::write_file(dir / "typo.json", R"({"dataset": "d.csv", "modle": "x"})");
  CHECK_THROWS_AS(load_config(dir / "typo.json"), ConfigError);
  testing::write_file(dir / "nested.json", R"({"agentic": {"tau3": 1}})");
  CHECK_THROWS_AS(load_config(dir / "nested.json"), ConfigError);
  testing::write_file(dir / "strategy.json", R"({"strategy": "magic"})");
  CHECK_THROWS_AS(load_config(dir / "strategy.json"), ConfigError);
  testing::write_file(dir / "broken.json", "{");
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
}

TEST_CASE("config validation") {
  testing::TempDir dir;
  auto cfg = small_config(dir);
  CHECK_NOTHROW(cfg.validate());
  auto c = cfg;
  c.seed.reset();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg;
  c.concurrency = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg;
  c.strategy = Strategy::local_rag;
  c.corpus_manifest.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg;
  c.chunking.overlap = c.chunking.chunk_size;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = cfg;
  c.providers.mode = "remote";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config hash ignores scheduling and locations") {
  testing::TempDir dir;
  const auto cfg = small_config(dir);
  auto c = cfg;
  c.concurrency = 16;
  c.output_dir = dir / "elsewhere";
  c.cache_dir = dir / "cache";
  c.providers.base_delay_ms = 5;
  CHECK(c.hash() == cfg.hash());
  c.pipeline.model_id = "other";
  CHECK(c.hash() != cfg.hash());
  c = cfg;
  c.seed = 8;
  CHECK(c.hash() != cfg.hash());
}

TEST_CASE("results rows round-trip through CSV") {
  testing::TempDir dir;
  auto plain = sample_row();
  plain.question_id = "q2";
  plain.metrics.reset();
  plain.has_bert = false;
  plain.gold_rationale.reset();
  plain.predicted = Option::NA;
  plain.route = Route::null_answer;
  plain.decision_kind.reset();
  plain.confidence = Confidence::medium;
  write_results_csv({sample_row(), plain}, dir / "r.csv");
  const auto file = read_results_csv(dir / "r.csv");
  CHECK(file.skipped == 0);
  REQUIRE(file.rows.size() == 2);
  const auto& a = file.rows[0];
  CHECK(a.question_id == "q,1");
  CHECK(a.gold_rationale == "line one\nline \"two\"");
  CHECK(a.generated_rationale == "বাংলা, ব্যাখ্যা");
  CHECK(a.decision_kind == DecisionKind::tie);
  CHECK(a.trace == sample_row().trace);
  REQUIRE(a.metrics.has_value());
  CHECK(a.metrics->bert_f1 == sample_row().metrics->bert_f1);
  CHECK(a.metrics->rouge1.f == sample_row().metrics->rouge1.f);
  const auto& b = file.rows[1];
  CHECK(b.predicted == Option::NA);
  CHECK_FALSE(b.metrics.has_value());
  CHECK(b.confidence == Confidence::medium);
  // Writing what was read reproduces the file byte for byte.
  write_results_csv(file.rows, dir / "again.csv");
  CHECK(testing::read_file(dir / "again.csv") == testing::read_file(dir / "r.csv"));
}

TEST_CASE("a torn final line is skipped") {
  testing::TempDir dir;
  write_results_csv({sample_row()}, dir / "r.csv");
  auto text = testing::read_file(dir / "r.csv");
  text += format_result_row(sample_row()).substr(0, 20);
  testing::write_file(dir / "r.csv", text);
  const auto file = read_results_csv(dir / "r.csv");
  CHECK(file.rows.size() == 1);
  CHECK(file.skipped == 1);
}

TEST_CASE("fixed four-decimal formatting") {
  CHECK(format_fixed4(2.0 / 3.0) == "0.6667");
  CHECK(format_fixed4(0.5) == "0.5000");
  CHECK(format_fixed4(-0.00001) == "0.0000");
  CHECK(format_fixed4(-0.25) == "-0.2500");
}

TEST_CASE("report counts and means") {
  auto a = sample_row();
  auto b = sample_row();
  b.question_id = "b";
  b.predicted = Option::failed;
  b.metrics->meteor = 0.25;
  b.has_bert = false;
  auto c = sample_row();
  c.question_id = "c";
  c.metrics.reset();
  c.route = Route::web;
  c.predicted = Option::NA;
  const auto r = build_report({a, b, c}, json{{"strategy", "aggregate"}}, 2);
  CHECK(r["N"] == 3);
  CHECK(r["accuracy"] == "0.3333");
  CHECK(r["correct"] == 1);
  CHECK(r["failures"] == 1);
  CHECK(r["null_answers"] == 1);
  CHECK(r["metric_rows"] == 2);
  CHECK(r["means"]["meteor"] == "0.3750");
  CHECK(r["means"]["bert_f1"] == "0.1235");
  CHECK(r["routes"]["local"] == 2);
  CHECK(r["routes"]["web"] == 1);
  CHECK(r["routes"]["zero_shot"] == 0);
  CHECK(r["decisions"]["tie"] == 3);
  CHECK_FALSE(r.contains("confidence"));
  CHECK(r["unanswered"] == 2);
  CHECK(r["complete"] == false);
}

TEST_CASE("comparison of two reports") {
  auto a = build_report({sample_row()}, json{{"strategy", "zero_shot"}, {"model", "m1"}}, 0);
  auto wrong = sample_row();
  wrong.predicted = Option::A;
  wrong.metrics->meteor = 0.75;
  auto b = build_report({wrong}, json{{"strategy", "agentic"}, {"model", "m2"}}, 0);
  const auto cmp = compare_reports(a, b);
  CHECK(cmp.csv.rfind("metric,zero_shot/m1,agentic/m2,delta\n", 0) == 0);
  CHECK(cmp.csv.find("accuracy,1.0000,0.0000,-1.0000\n") != std::string::npos);
  CHECK(cmp.csv.find("meteor,0.5000,0.7500,0.2500\n") != std::string::npos);
  CHECK(cmp.text.find("accuracy") != std::string::npos);
  auto bigger = build_report({sample_row(), wrong}, json::object(), 0);
  CHECK_THROWS_AS(compare_reports(a, bigger), std::invalid_argument);
}

TEST_CASE("a run writes every artifact") {
  testing::TempDir dir;
  const auto cfg = small_config(dir);
  auto hub = hub_with(answering([](const std::string& id) { return id == "s2" ? "A" : "C"; }));
  const auto summary = run_experiment(cfg, *hub);
  CHECK(summary.exit_code == 0);
  CHECK(summary.total == 4);
  CHECK(summary.rejected == 1);
  CHECK(summary.answered == 4);
  for (const char* f : {"results.csv", "report.json", "rejections.csv", "run.json", "timings.csv"}) {
    CHECK_MESSAGE(fs::exists(cfg.output_dir / f), f);
  }
  const auto report = read_report(summary.report_path);
  CHECK(report["N"] == 4);
  CHECK(report["accuracy"] == "0.5000");
  CHECK(report["metric_rows"] == 3);
  CHECK(report["config_hash"] == cfg.hash());
  const auto rows = read_results_csv(summary.results_path).rows;
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].question_id == "s1");
  CHECK(rows[0].metrics->rouge1.f == 1.0);
  CHECK(rows[0].has_bert);
  CHECK_FALSE(rows[2].metrics.has_value());
  CHECK(testing::read_file(cfg.output_dir / "rejections.csv").find("bad_option_labels") != std::string::npos);
}

TEST_CASE("a second run reuses finished rows") {
  testing::TempDir dir;
  const auto cfg = small_config(dir);
  auto hub = hub_with(answering([](const std::string&) { return "B"; }));
  run_experiment(cfg, *hub);
  const auto before = testing::read_file(cfg.output_dir / "results.csv");
  const auto calls = hub->call_log().size();
  auto again = cfg;
  again.concurrency = 3;
  const auto summary = run_experiment(again, *hub);
  CHECK(summary.reused == 4);
  CHECK(summary.answered == 0);
  CHECK(hub->call_log().size() == calls);
  CHECK(testing::read_file(cfg.output_dir / "results.csv") == before);
}

TEST_CASE("a different config cannot reuse an output directory") {
  testing::TempDir dir;
  auto cfg = small_config(dir);
  auto hub = hub_with(answering([](const std::string&) { return "B"; }));
  run_experiment(cfg, *hub);
  cfg.pipeline.model_id = "another-model";
  CHECK_THROWS_AS(run_experiment(cfg, *hub), ConfigError);
}

TEST_CASE("outages leave questions for a resumed run") {
  testing::TempDir dir;
  const auto cfg = small_config(dir);
  auto flaky = std::make_shared<RuleChatBackend>([](const ChatRequest& r) -> std::string {
    if (r.subject == "s2" || r.subject == "s4") throw ProviderError(ErrorClass::server, "503");
    return R"({"O": "B", "R": "x"})";
  });
  auto hub = hub_with(flaky);
  const auto first = run_experiment(cfg, *hub);
  CHECK(first.exit_code == 2);
  CHECK(first.unanswered == 2);
  CHECK(read_report(first.report_path)["complete"] == false);
  CHECK(read_results_csv(first.results_path).rows.size() == 2);

  auto healthy = hub_with(answering([](const std::string&) { return "B"; }));
  const auto second = run_experiment(cfg, *healthy);
  CHECK(second.exit_code == 0);
  CHECK(second.reused == 2);
  CHECK(second.answered == 2);
  const auto rows = read_results_csv(second.results_path).rows;
  REQUIRE(rows.size() == 4);
  CHECK(rows[1].question_id == "s2");
  CHECK(rows[3].question_id == "s4");
}

TEST_CASE("repeated outages stop the run early") {
  testing::TempDir dir;
  auto cfg = small_config(dir);
  cfg.providers.abort_after_consecutive_outages = 1;
  auto down = std::make_shared<RuleChatBackend>([](const ChatRequest&) -> std::string {
    throw ProviderError(ErrorClass::timeout, "slow");
  });
  auto hub = hub_with(down);
  const auto summary = run_experiment(cfg, *hub);
  CHECK(summary.unanswered == 4);
  CHECK(hub->call_log().size() == 2);  // one question, two attempts
}

TEST_CASE("retrieval strategies run against the fixture corpus") {
  testing::TempDir dir;
  auto cfg = small_config(dir, Strategy::local_fallback);
  cfg.cache_dir = dir / "cache";
  auto hub = hub_with(answering([](const std::string&) { return "C"; }));
  const auto summary = run_experiment(cfg, *hub);
  CHECK(summary.exit_code == 0);
  const auto rows = read_results_csv(summary.results_path).rows;
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].route == Route::local);
  CHECK(rows[0].trace.at(0).origin == "local");
  CHECK(fs::exists(cfg.cache_dir / "index"));
}

TEST_CASE("missing inputs are configuration errors") {
  testing::TempDir dir;
  auto cfg = small_config(dir, Strategy::local_rag);
  auto hub = hub_with(answering([](const std::string&) { return "C"; }));
  auto c = cfg;
  c.corpus_manifest = dir / "no-such-manifest.json";
  CHECK_THROWS_AS(run_experiment(c, *hub), ConfigError);
  c = cfg;
  c.dataset = dir / "missing.csv";
  c.output_dir = dir / "out2";
  CHECK_THROWS_AS(run_experiment(c, *hub), ConfigError);
}

TEST_CASE("rescoring recomputes metrics from the stored text") {
  auto row = sample_row();
  row.generated_rationale = "line one line two";
  const auto rows = rescore({row}, {});
  REQUIRE(rows[0].metrics.has_value());
  CHECK(rows[0].metrics->bert_f1 == row.metrics->bert_f1);
  CHECK(rows[0].metrics->rouge1.recall > 0.5);
  CHECK(rows[0].metrics->correct == 1);
}

TEST_CASE("live mode needs credentials") {
  testing::TempDir dir;
  auto cfg = small_config(dir);
  cfg.providers.mode = "live";
  cfg.providers.chat_api_key_env = "MCQRAG_TEST_UNSET_KEY";
  CHECK_THROWS_AS(make_provider_hub(cfg), ConfigError);
}

TEST_CASE("mock mode builds an offline hub") {
  testing::TempDir dir;
  auto cfg = small_config(dir, Strategy::agentic);
  auto hub = make_provider_hub(cfg, std::make_shared<RecordingSleeper>());
  CHECK(hub->has_embedding());
  CHECK(hub->has_search());
  const auto summary = run_experiment(cfg, *hub);
  CHECK(summary.exit_code == 0);
  CHECK(summary.answered == 4);
}

}
