#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcqrag/dataset.hpp"
#include "mcqrag/evalmetrics.hpp"
#include "mcqrag/providers.hpp"
#include "mcqrag/strategies.hpp"
#include "mcqrag/textcorpus.hpp"

namespace mcqrag {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProviderConfig {
  /// "mock" runs fully offline; "live" talks to the HTTP services.
  std::string mode = "mock";
  std::string chat_base_url = "https://api.openai.com/v1";
  std::string chat_api_key_env = "OPENAI_API_KEY";
  std::string embedding_base_url = "https://api.openai.com/v1";
  std::string embedding_api_key_env = "OPENAI_API_KEY";
  std::string embedding_model = "text-embedding-3-small";
  std::string search_base_url = "https://google.serper.dev";
  std::string search_api_key_env = "SERPER_API_KEY";
  /// Optional JSON object {question_id: letter} steering the offline chat mock.
  std::filesystem::path mock_answers;
  int mock_embedding_dim = 256;
  int max_attempts = 4;
  int base_delay_ms = 1000;
  double backoff_factor = 2.0;
  int min_request_interval_ms = 0;
  std::size_t embed_batch_size = 32;
  /// Stop dispatching questions after this many consecutive provider outages.
  int abort_after_consecutive_outages = 8;
};

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::optional<DatasetFormat> dataset_format;
  std::filesystem::path corpus_manifest;
  ChunkingConfig chunking;
  Strategy strategy = Strategy::zero_shot;
  PipelineSettings pipeline;
  std::optional<std::uint64_t> seed;
  int concurrency = 1;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  std::filesystem::path prompts_dir;
  double rouge_beta = 1.0;
  bool bertscore = true;
  ProviderConfig providers;

  /// Throws ConfigError.
  void validate() const;
  /// Settings that shape the results. Concurrency, output/cache locations,
  /// retry pacing and credentials are left out.
  nlohmann::json echo() const;
  std::string hash() const;
};

/// Reads a JSON config; relative paths resolve against the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies the keys present in `j` on top of `cfg`.
void apply_config(ExperimentConfig& cfg, const nlohmann::json& j, const std::filesystem::path& base_dir);

struct ResultRow {
  std::string question_id;
  Strategy strategy = Strategy::zero_shot;
  std::string model;
  Option gold = Option::A;
  Option predicted = Option::failed;
  std::optional<std::string> gold_rationale;
  std::string generated_rationale;
  Route route = Route::zero_shot;
  std::optional<Confidence> confidence;
  std::optional<DecisionKind> decision_kind;
  int attempts = 0;
  /// Absent when the question has no gold rationale.
  std::optional<MetricBundle> metrics;
  bool has_bert = false;
  std::vector<TraceEntry> trace;
  /// Wall time; written to the timings sidecar, not the results file.
  std::chrono::milliseconds latency{0};

  bool correct() const { return is_choice(predicted) && predicted == gold; }
};

/// Rounds every metric to the precision stored in the results file, so a
/// report built from in-memory rows equals one built from the file.
MetricBundle quantize(const MetricBundle& m);

const std::vector<std::string>& results_header();
std::string format_result_row(const ResultRow& row);
/// Atomic write: header plus one line per row, in the given order.
void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path);

struct ResultsFile {
  std::vector<ResultRow> rows;
  /// Records that could not be read back (for example a line cut short by a crash).
  std::size_t skipped = 0;
};

ResultsFile read_results_csv(const std::filesystem::path& path);

/// N, accuracy, metric means, route/confidence/decision counts, failure count.
/// Numbers are fixed 4-decimal strings.
nlohmann::json build_report(const std::vector<ResultRow>& rows, const nlohmann::json& config_echo,
                            std::size_t unanswered);

std::string format_fixed4(double value);

struct Comparison {
  std::string csv;
  std::string text;
};

/// Side-by-side accuracy and metric means with deltas (b - a). Throws
/// std::invalid_argument when the reports cover different N.
Comparison compare_reports(const nlohmann::json& a, const nlohmann::json& b);

nlohmann::json read_report(const std::filesystem::path& path);

struct RunSummary {
  int exit_code = 0;
  std::size_t total = 0;       // accepted questions
  std::size_t reused = 0;      // rows carried over from an earlier run
  std::size_t answered = 0;    // rows produced by this run
  std::size_t unanswered = 0;  // questions left for a resumed run
  std::size_t rejected = 0;
  std::filesystem::path results_path;
  std::filesystem::path report_path;
};

/// Builds the provider hub described by cfg.providers. Throws ConfigError
/// when a live credential is missing.
std::unique_ptr<ProviderHub> make_provider_hub(const ExperimentConfig& cfg,
                                               std::shared_ptr<Sleeper> sleeper = std::make_shared<RealSleeper>());

/// Answers every accepted question not already in the output directory and
/// writes results.csv, report.json, rejections.csv, timings.csv and run.json.
/// Throws ConfigError for an invalid config or a foreign output directory.
RunSummary run_experiment(const ExperimentConfig& cfg, ProviderHub& hub);

/// Recomputes correctness and rationale metrics of an existing results file.
/// With an embedder BERTScore is recomputed, otherwise the stored value is kept.
std::vector<ResultRow> rescore(std::vector<ResultRow> rows, const TokenEmbedder& embed, double rouge_beta = 1.0);

}  // namespace mcqrag
