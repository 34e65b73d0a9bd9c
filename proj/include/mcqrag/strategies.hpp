#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcqrag/dataset.hpp"
#include "mcqrag/prompts.hpp"
#include "mcqrag/providers.hpp"
#include "mcqrag/vecindex.hpp"

namespace mcqrag {

enum class Strategy { zero_shot, local_rag, local_fallback, web_fallback, agentic, iterative, aggregate };
enum class Route { local, web, zero_shot, null_answer };
enum class Confidence { high, medium, low };
enum class DecisionKind { majority, unanimous, tie };
enum class JudgeMode { oracle, self_check };

std::string_view to_string(Strategy s);
std::string_view to_string(Route r);
std::string_view to_string(Confidence c);
std::string_view to_string(DecisionKind d);
std::string_view to_string(JudgeMode m);
std::optional<Strategy> parse_strategy(std::string_view name);
std::optional<JudgeMode> parse_judge_mode(std::string_view name);

/// Every strategy except zero_shot and web_fallback reads the local index.
bool uses_local_index(Strategy s);
bool uses_web(Strategy s);

/// "The answer was not found": the rationale attached to a local-RAG NA.
inline constexpr std::string_view kNullAnswerPhrase = "উত্তর পাওয়া যায়নি";

/// One step of a prediction's provenance. `origin` is local, web, summary,
/// router, vote, judge or note; `ref` is "k=<n>", a URL, or free text.
struct TraceEntry {
  std::string origin;
  std::string ref;
  std::size_t total_chars = 0;

  bool operator==(const TraceEntry&) const = default;
};

struct Prediction {
  std::string question_id;
  Strategy strategy = Strategy::zero_shot;
  Option option = Option::failed;
  std::string rationale;
  Route route = Route::zero_shot;
  std::optional<Confidence> confidence;
  std::optional<DecisionKind> decision_kind;
  std::vector<TraceEntry> retrieval_trace;
  int attempts = 0;
  /// The chat provider gave up on this question; the runner leaves it out of
  /// the results so a resumed run retries it.
  bool provider_outage = false;
};

struct AgenticConfig {
  std::size_t tau1 = 300;
  std::size_t tau2 = 200;
  int k_local = 5;
  /// Empty means the answering model also routes.
  std::string router_model;
  /// Send (router Yes, short local context) to web retrieval instead of zero-shot.
  bool yes_short_routes_to_web = false;

  void validate() const;
};

struct AggregateConfig {
  std::vector<int> k_values{3, 5, 6};
  double temperature = 0.7;
  int tiebreak_k = 6;

  void validate() const;
};

struct IterativeConfig {
  int max_refinements = 2;
  JudgeMode judge_mode = JudgeMode::oracle;

  void validate() const;
};

struct WebConfig {
  int max_links = 8;
  int pages_to_read = 3;
  std::chrono::seconds fetch_timeout{30};
  /// Each extracted page is cut to this many characters before summarizing.
  std::size_t max_page_chars = 4000;
};

struct PipelineSettings {
  std::string model_id;
  double temperature = 0.0;
  int timeout_seconds = 300;
  /// Passages retrieved by the single-retrieval strategies.
  int k = 5;
  AgenticConfig agentic;
  AggregateConfig aggregate;
  IterativeConfig iterative;
  WebConfig web;

  void validate() const;
};

class UnparsableAnswer : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelAnswer {
  Option option = Option::A;
  std::string rationale;
};

/// Strict JSON first, then a salvage scan for the first "O" whose value is
/// A-D and the "R" value of the same object. Throws UnparsableAnswer.
ModelAnswer parse_model_answer(std::string_view text);

/// First case-insensitive "yes" or "no" standing as an ASCII word.
std::optional<bool> parse_yes_no(std::string_view text);

Route route(bool router_says_yes, std::size_t local_chars, std::size_t web_chars, const AgenticConfig& cfg);

struct Vote {
  int k = 0;
  Option option = Option::A;
  std::string rationale;
};

struct AggregateDecision {
  Option option = Option::A;
  DecisionKind kind = DecisionKind::unanimous;
  std::string rationale;
};

/// Throws std::logic_error unless there is exactly one A-D vote per k in
/// cfg.k_values.
AggregateDecision aggregate_votes(const std::vector<Vote>& votes, const AggregateConfig& cfg);

/// Per-question seed, independent of scheduling order.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view question_id);

/// "Bangla" when the question or any option contains Bengali script.
std::string rationale_language(const McqRecord& record);

/// "A. ...\nB. ...\nC. ...\nD. ..."
std::string format_options(const McqRecord& record);

/// Numbered passages, "[1] (source)\ntext", separated by blank lines.
std::string format_context(const RetrievedContext& context);

/// Runs the answering pipelines against one provider hub and, for the
/// retrieval strategies, one read-only index. Safe to share across threads.
class Pipeline {
 public:
  Pipeline(ProviderHub& hub, const VectorIndex* index, PromptSet prompts, PipelineSettings settings);

  /// Dispatches on `strategy`; `seed` feeds the aggregate vote fallback.
  Prediction answer(Strategy strategy, const McqRecord& record, std::uint64_t seed);

  /// A context with total_chars 0 is treated as absent.
  ChatRequest build_prompt(const McqRecord& record, const RetrievedContext* context,
                           Strategy strategy = Strategy::zero_shot) const;

  Prediction answer_zero_shot(const McqRecord& record);
  Prediction answer_local_rag(const McqRecord& record);
  Prediction answer_local_fallback(const McqRecord& record);
  Prediction answer_web_fallback(const McqRecord& record);
  Prediction answer_agentic(const McqRecord& record);
  Prediction answer_iterative(const McqRecord& record);
  Prediction answer_aggregate(const McqRecord& record, std::uint64_t seed);

  /// Bullet-point notes from the extracted pages; "" when every page is
  /// empty (no call) or the summarizer fails (trace note added).
  std::string summarize_web(const std::vector<std::string>& pages, const McqRecord& record,
                            std::vector<TraceEntry>& trace);

  /// The question followed by the extracted key terms; the question alone
  /// when extraction fails or yields nothing.
  std::string refine_query(const std::string& question, const RetrievedContext& context,
                           std::vector<TraceEntry>& trace, const std::string& subject = {});

  const PipelineSettings& settings() const { return settings_; }

 private:
  struct Answered {
    Option option = Option::failed;
    std::string rationale;
    int attempts = 0;
    bool outage = false;
  };

  Answered ask(ChatRequest req, std::vector<TraceEntry>& trace);
  RetrievedContext retrieve_local(std::string_view query, int k, std::vector<TraceEntry>& trace);
  RetrievedContext gather_web(const McqRecord& record, std::vector<TraceEntry>& trace);
  void answer_from(Prediction& p, const McqRecord& record, const RetrievedContext* context, Route route);
  bool judge(const McqRecord& record, const Answered& answered, std::vector<TraceEntry>& trace);
  Prediction start(const McqRecord& record, Strategy strategy) const;

  ProviderHub& hub_;
  const VectorIndex* index_;
  PromptSet prompts_;
  PipelineSettings settings_;
};

}  // namespace mcqrag
