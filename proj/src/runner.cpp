#include "mcqrag/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "mcqrag/csv.hpp"
#include "mcqrag/http_providers.hpp"
#include "mcqrag/mock_providers.hpp"
#include "mcqrag/prompts.hpp"
#include "mcqrag/sha256.hpp"
#include "mcqrag/vecindex.hpp"

namespace mcqrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string dump(const json& j, int indent = -1) {
  return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

// ---- config parsing -------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

void read_path(const json& j, const char* key, const fs::path& base, fs::path& out) {
  std::string s;
  read_into(j, key, s);
  if (s.empty()) return;
  fs::path p(s);
  out = (p.is_relative() && !base.empty() ? base / p : p).lexically_normal();
}

std::string path_text(const fs::path& p) { return p.generic_string(); }

std::string dataset_digest(const fs::path& path) {
  try {
    return sha256_hex(read_file(path));
  } catch (const std::exception&) {
    return {};
  }
}

PromptSet load_prompts(const ExperimentConfig& cfg) {
  try {
    return cfg.prompts_dir.empty() ? PromptSet::builtin() : PromptSet::with_overrides(cfg.prompts_dir);
  } catch (const PromptError& e) {
    throw ConfigError(e.what());
  }
}

// ---- results rows ---------------------------------------------------------

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double quantize6(double v) { return std::strtod(fixed6(v).c_str(), nullptr); }

template <typename E, std::size_t N>
std::optional<E> parse_enum(std::string_view text, const E (&values)[N]) {
  for (auto v : values) {
    if (to_string(v) == text) return v;
  }
  return std::nullopt;
}

constexpr Route kRoutes[] = {Route::local, Route::web, Route::zero_shot, Route::null_answer};
constexpr Confidence kConfidences[] = {Confidence::high, Confidence::medium, Confidence::low};
constexpr DecisionKind kDecisions[] = {DecisionKind::majority, DecisionKind::unanimous, DecisionKind::tie};

json trace_to_json(const std::vector<TraceEntry>& trace) {
  json arr = json::array();
  for (const auto& t : trace) arr.push_back({{"origin", t.origin}, {"ref", t.ref}, {"chars", t.total_chars}});
  return arr;
}

std::vector<TraceEntry> trace_from_json(const json& arr) {
  std::vector<TraceEntry> out;
  for (const auto& t : arr) {
    out.push_back({t.at("origin").get<std::string>(), t.at("ref").get<std::string>(), t.at("chars").get<std::size_t>()});
  }
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad number " + s);
  return v;
}

ResultRow parse_result_row(const std::vector<std::string>& f) {
  ResultRow row;
  row.question_id = f[0];
  row.strategy = parse_strategy(f[1]).value();
  row.model = f[2];
  row.gold = parse_option(f[3]).value();
  row.predicted = parse_option(f[4]).value();
  if (f[5] != (row.correct() ? "1" : "0")) throw std::invalid_argument("correct column disagrees");
  if (!f[6].empty()) row.gold_rationale = f[6];
  row.generated_rationale = f[7];
  row.route = parse_enum(f[8], kRoutes).value();
  if (!f[9].empty()) row.confidence = parse_enum(f[9], kConfidences).value();
  if (!f[10].empty()) row.decision_kind = parse_enum(f[10], kDecisions).value();
  row.attempts = std::stoi(f[11]);
  if (!f[13].empty()) {
    MetricBundle m;
    m.correct = row.correct() ? 1 : 0;
    row.has_bert = !f[12].empty();
    if (row.has_bert) m.bert_f1 = parse_double(f[12]);
    m.meteor = parse_double(f[13]);
    m.rouge1 = {parse_double(f[14]), parse_double(f[15]), parse_double(f[16])};
    m.rouge2 = {parse_double(f[17]), parse_double(f[18]), parse_double(f[19])};
    m.rougeL = {parse_double(f[20]), parse_double(f[21]), parse_double(f[22])};
    m.bleu1 = parse_double(f[23]);
    m.bleu2 = parse_double(f[24]);
    row.metrics = m;
  }
  row.trace = trace_from_json(json::parse(f[25]));
  return row;
}

// ---- reports ----------------------------------------------------------------

struct MetricColumn {
  const char* name;
  double (*get)(const MetricBundle&);
  bool is_bert;
};

const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> cols{
      {"bert_f1", [](const MetricBundle& m) { return m.bert_f1; }, true},
      {"meteor", [](const MetricBundle& m) { return m.meteor; }, false},
      {"rouge1_f", [](const MetricBundle& m) { return m.rouge1.f; }, false},
      {"rouge2_f", [](const MetricBundle& m) { return m.rouge2.f; }, false},
      {"rougeL_f", [](const MetricBundle& m) { return m.rougeL.f; }, false},
      {"bleu1", [](const MetricBundle& m) { return m.bleu1; }, false},
      {"bleu2", [](const MetricBundle& m) { return m.bleu2; }, false},
  };
  return cols;
}

std::optional<double> report_value(const json& report, const std::string& name) {
  const json* v = nullptr;
  if (name == "accuracy") {
    if (report.contains("accuracy")) v = &report["accuracy"];
  } else if (report.contains("means") && report["means"].contains(name)) {
    v = &report["means"][name];
  }
  if (v == nullptr || v->is_null()) return std::nullopt;
  return v->is_string() ? std::stod(v->get<std::string>()) : v->get<double>();
}

std::string report_label(const json& report) {
  if (!report.contains("config")) return "?";
  const auto& c = report["config"];
  return c.value("strategy", std::string("?")) + "/" + c.value("model", std::string("?"));
}

}  // namespace

// ---- ExperimentConfig ------------------------------------------------------

void apply_config(ExperimentConfig& cfg, const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"dataset", "dataset_format", "corpus", "chunking", "strategy", "model", "temperature",
              "timeout_seconds", "k", "agentic", "aggregate", "iterative", "web", "seed", "concurrency", "cache_dir",
              "output_dir", "prompts_dir", "rouge_beta", "bertscore", "providers"},
             "config");
  read_path(j, "dataset", base_dir, cfg.dataset);
  if (j.contains("dataset_format")) {
    std::string name;
    read_into(j, "dataset_format", name);
    cfg.dataset_format = parse_format(name);
    if (!cfg.dataset_format) throw ConfigError("unknown dataset_format '" + name + "'");
  }
  read_path(j, "corpus", base_dir, cfg.corpus_manifest);
  if (j.contains("chunking")) {
    const auto& c = j["chunking"];
    check_keys(c, {"chunk_size", "overlap"}, "chunking");
    read_into(c, "chunk_size", cfg.chunking.chunk_size);
    read_into(c, "overlap", cfg.chunking.overlap);
  }
  if (j.contains("strategy")) {
    std::string name;
    read_into(j, "strategy", name);
    auto s = parse_strategy(name);
    if (!s) throw ConfigError("unknown strategy '" + name + "'");
    cfg.strategy = *s;
  }
  auto& p = cfg.pipeline;
  read_into(j, "model", p.model_id);
  read_into(j, "temperature", p.temperature);
  read_into(j, "timeout_seconds", p.timeout_seconds);
  read_into(j, "k", p.k);
  if (j.contains("agentic")) {
    const auto& a = j["agentic"];
    check_keys(a, {"tau1", "tau2", "k_local", "router_model", "yes_short_routes_to_web"}, "agentic");
    read_into(a, "tau1", p.agentic.tau1);
    read_into(a, "tau2", p.agentic.tau2);
    read_into(a, "k_local", p.agentic.k_local);
    read_into(a, "router_model", p.agentic.router_model);
    read_into(a, "yes_short_routes_to_web", p.agentic.yes_short_routes_to_web);
  }
  if (j.contains("aggregate")) {
    const auto& a = j["aggregate"];
    check_keys(a, {"k_values", "temperature", "tiebreak_k"}, "aggregate");
    read_into(a, "k_values", p.aggregate.k_values);
    read_into(a, "temperature", p.aggregate.temperature);
    read_into(a, "tiebreak_k", p.aggregate.tiebreak_k);
  }
  if (j.contains("iterative")) {
    const auto& it = j["iterative"];
    check_keys(it, {"max_refinements", "judge_mode"}, "iterative");
    read_into(it, "max_refinements", p.iterative.max_refinements);
    if (it.contains("judge_mode")) {
      std::string name;
      read_into(it, "judge_mode", name);
      auto m = parse_judge_mode(name);
      if (!m) throw ConfigError("unknown judge_mode '" + name + "'");
      p.iterative.judge_mode = *m;
    }
  }
  if (j.contains("web")) {
    const auto& w = j["web"];
    check_keys(w, {"max_links", "pages_to_read", "fetch_timeout_seconds", "max_page_chars"}, "web");
    read_into(w, "max_links", p.web.max_links);
    read_into(w, "pages_to_read", p.web.pages_to_read);
    int fetch_timeout = static_cast<int>(p.web.fetch_timeout.count());
    read_into(w, "fetch_timeout_seconds", fetch_timeout);
    p.web.fetch_timeout = std::chrono::seconds(fetch_timeout);
    read_into(w, "max_page_chars", p.web.max_page_chars);
  }
  if (j.contains("seed")) {
    const auto& s = j["seed"];
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0)) {
      throw ConfigError("seed must be a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }
  read_into(j, "concurrency", cfg.concurrency);
  read_path(j, "cache_dir", base_dir, cfg.cache_dir);
  read_path(j, "output_dir", base_dir, cfg.output_dir);
  read_path(j, "prompts_dir", base_dir, cfg.prompts_dir);
  read_into(j, "rouge_beta", cfg.rouge_beta);
  read_into(j, "bertscore", cfg.bertscore);
  if (j.contains("providers")) {
    const auto& pr = j["providers"];
    auto& c = cfg.providers;
    check_keys(pr,
               {"mode", "chat_base_url", "chat_api_key_env", "embedding_base_url", "embedding_api_key_env",
                "embedding_model", "search_base_url", "search_api_key_env", "mock_answers", "mock_embedding_dim",
                "max_attempts", "base_delay_ms", "backoff_factor", "min_request_interval_ms", "embed_batch_size",
                "abort_after_consecutive_outages"},
               "providers");
    read_into(pr, "mode", c.mode);
    read_into(pr, "chat_base_url", c.chat_base_url);
    read_into(pr, "chat_api_key_env", c.chat_api_key_env);
    read_into(pr, "embedding_base_url", c.embedding_base_url);
    read_into(pr, "embedding_api_key_env", c.embedding_api_key_env);
    read_into(pr, "embedding_model", c.embedding_model);
    read_into(pr, "search_base_url", c.search_base_url);
    read_into(pr, "search_api_key_env", c.search_api_key_env);
    read_path(pr, "mock_answers", base_dir, c.mock_answers);
    read_into(pr, "mock_embedding_dim", c.mock_embedding_dim);
    read_into(pr, "max_attempts", c.max_attempts);
    read_into(pr, "base_delay_ms", c.base_delay_ms);
    read_into(pr, "backoff_factor", c.backoff_factor);
    read_into(pr, "min_request_interval_ms", c.min_request_interval_ms);
    read_into(pr, "embed_batch_size", c.embed_batch_size);
    read_into(pr, "abort_after_consecutive_outages", c.abort_after_consecutive_outages);
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
  ExperimentConfig cfg;
  apply_config(cfg, j, path.parent_path());
  return cfg;
}

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset is required");
  if (!seed) throw ConfigError("seed is required");
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (uses_local_index(strategy) && corpus_manifest.empty()) {
    throw ConfigError("strategy " + std::string(to_string(strategy)) + " needs a corpus manifest");
  }
  if (!(rouge_beta > 0.0)) throw ConfigError("rouge_beta must be positive");
  try {
    pipeline.validate();
    mcqrag::validate(chunking);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto& p = providers;
  if (p.mode != "mock" && p.mode != "live") throw ConfigError("providers.mode must be mock or live");
  if (p.max_attempts < 1) throw ConfigError("providers.max_attempts must be >= 1");
  if (p.base_delay_ms < 0 || p.min_request_interval_ms < 0) throw ConfigError("provider delays must be >= 0");
  if (!(p.backoff_factor >= 1.0)) throw ConfigError("providers.backoff_factor must be >= 1");
  if (p.embed_batch_size == 0) throw ConfigError("providers.embed_batch_size must be positive");
  if (p.mock_embedding_dim <= 0) throw ConfigError("providers.mock_embedding_dim must be positive");
  if (p.abort_after_consecutive_outages < 1) throw ConfigError("abort_after_consecutive_outages must be >= 1");
}

json ExperimentConfig::echo() const {
  const auto& p = pipeline;
  json j{
      {"dataset", path_text(dataset)},
      {"dataset_sha256", dataset_digest(dataset)},
      {"dataset_format", dataset_format ? json(dataset_format == DatasetFormat::csv ? "csv" : "jsonl") : json()},
      {"corpus", path_text(corpus_manifest)},
      {"chunking", {{"chunk_size", chunking.chunk_size}, {"overlap", chunking.overlap}}},
      {"strategy", to_string(strategy)},
      {"model", p.model_id},
      {"temperature", p.temperature},
      {"k", p.k},
      {"agentic",
       {{"tau1", p.agentic.tau1},
        {"tau2", p.agentic.tau2},
        {"k_local", p.agentic.k_local},
        {"router_model", p.agentic.router_model},
        {"yes_short_routes_to_web", p.agentic.yes_short_routes_to_web}}},
      {"aggregate",
       {{"k_values", p.aggregate.k_values},
        {"temperature", p.aggregate.temperature},
        {"tiebreak_k", p.aggregate.tiebreak_k}}},
      {"iterative", {{"max_refinements", p.iterative.max_refinements}, {"judge_mode", to_string(p.iterative.judge_mode)}}},
      {"web",
       {{"max_links", p.web.max_links},
        {"pages_to_read", p.web.pages_to_read},
        {"max_page_chars", p.web.max_page_chars}}},
      {"seed", seed ? json(*seed) : json()},
      {"prompts", load_prompts(*this).digest()},
      {"rouge_beta", rouge_beta},
      {"bertscore", bertscore},
      {"providers",
       {{"mode", providers.mode},
        {"embedding", providers.mode == "mock" ? "hash-embedder/" + std::to_string(providers.mock_embedding_dim)
                                                : providers.embedding_model},
        {"mock_answers", path_text(providers.mock_answers)}}},
  };
  return j;
}

std::string ExperimentConfig::hash() const { return sha256_hex(dump(echo())); }

// ---- results files ---------------------------------------------------------

MetricBundle quantize(const MetricBundle& m) {
  MetricBundle q = m;
  q.bert_f1 = quantize6(m.bert_f1);
  q.meteor = quantize6(m.meteor);
  for (auto* s : {&q.rouge1, &q.rouge2, &q.rougeL}) {
    s->precision = quantize6(s->precision);
    s->recall = quantize6(s->recall);
    s->f = quantize6(s->f);
  }
  q.bleu1 = quantize6(m.bleu1);
  q.bleu2 = quantize6(m.bleu2);
  return q;
}

const std::vector<std::string>& results_header() {
  static const std::vector<std::string> header{
      "question_id", "strategy", "model",    "gold",     "predicted", "correct",  "gold_rationale",
      "generated_rationale",    "route",    "confidence", "decision_kind", "attempts", "bert_f1",  "meteor",
      "rouge1_p",    "rouge1_r", "rouge1_f", "rouge2_p", "rouge2_r",  "rouge2_f", "rougeL_p", "rougeL_r",
      "rougeL_f",    "bleu1",    "bleu2",    "trace"};
  return header;
}

std::string format_result_row(const ResultRow& row) {
  std::vector<std::string> f{row.question_id,
                             std::string(to_string(row.strategy)),
                             row.model,
                             std::string(to_string(row.gold)),
                             std::string(to_string(row.predicted)),
                             row.correct() ? "1" : "0",
                             row.gold_rationale.value_or(""),
                             row.generated_rationale,
                             std::string(to_string(row.route)),
                             row.confidence ? std::string(to_string(*row.confidence)) : "",
                             row.decision_kind ? std::string(to_string(*row.decision_kind)) : "",
                             std::to_string(row.attempts)};
  if (row.metrics) {
    const auto& m = *row.metrics;
    f.push_back(row.has_bert ? fixed6(m.bert_f1) : "");
    for (double v : {m.meteor, m.rouge1.precision, m.rouge1.recall, m.rouge1.f, m.rouge2.precision, m.rouge2.recall,
                     m.rouge2.f, m.rougeL.precision, m.rougeL.recall, m.rougeL.f, m.bleu1, m.bleu2}) {
      f.push_back(fixed6(v));
    }
  } else {
    f.insert(f.end(), 13, "");
  }
  f.push_back(dump(trace_to_json(row.trace)));
  return csv::format_row(f);
}

void write_results_csv(const std::vector<ResultRow>& rows, const fs::path& path) {
  std::string out = csv::format_row(results_header());
  for (const auto& r : rows) out += format_result_row(r);
  write_file_atomic(path, out);
}

ResultsFile read_results_csv(const fs::path& path) {
  const auto records = csv::parse(read_file(path));
  if (records.empty() || records.front().fields != results_header()) {
    throw std::runtime_error(path.string() + " is not a results file");
  }
  ResultsFile out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.malformed || rec.fields.size() != results_header().size()) {
      ++out.skipped;
      continue;
    }
    try {
      out.rows.push_back(parse_result_row(rec.fields));
    } catch (const std::exception&) {
      ++out.skipped;
    }
  }
  return out;
}

std::string format_fixed4(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  std::string s = buf;
  if (s == "-0.0000") s = "0.0000";
  return s;
}

json build_report(const std::vector<ResultRow>& rows, const json& config_echo, std::size_t unanswered) {
  json r;
  r["config"] = config_echo;
  r["config_hash"] = sha256_hex(dump(config_echo));
  r["N"] = rows.size();
  std::size_t correct = 0, failures = 0, nulls = 0, metric_rows = 0;
  std::map<std::string, std::size_t> routes{{"local", 0}, {"web", 0}, {"zero_shot", 0}, {"null_answer", 0}};
  std::map<std::string, std::size_t> confidence, decisions;
  std::vector<double> sums(metric_columns().size(), 0.0);
  std::vector<std::size_t> counts(metric_columns().size(), 0);
  for (const auto& row : rows) {
    if (row.correct()) ++correct;
    if (row.predicted == Option::failed) ++failures;
    if (row.predicted == Option::NA) ++nulls;
    ++routes[std::string(to_string(row.route))];
    if (row.confidence) ++confidence[std::string(to_string(*row.confidence))];
    if (row.decision_kind) ++decisions[std::string(to_string(*row.decision_kind))];
    if (!row.metrics) continue;
    ++metric_rows;
    for (std::size_t c = 0; c < metric_columns().size(); ++c) {
      if (metric_columns()[c].is_bert && !row.has_bert) continue;
      sums[c] += metric_columns()[c].get(*row.metrics);
      ++counts[c];
    }
  }
  r["accuracy"] = rows.empty() ? json() : json(format_fixed4(static_cast<double>(correct) / static_cast<double>(rows.size())));
  r["correct"] = correct;
  json means = json::object();
  for (std::size_t c = 0; c < metric_columns().size(); ++c) {
    means[metric_columns()[c].name] =
        counts[c] ? json(format_fixed4(sums[c] / static_cast<double>(counts[c]))) : json();
  }
  r["means"] = means;
  r["metric_rows"] = metric_rows;
  r["routes"] = routes;
  if (!confidence.empty()) r["confidence"] = confidence;
  if (!decisions.empty()) r["decisions"] = decisions;
  r["failures"] = failures;
  r["null_answers"] = nulls;
  r["unanswered"] = unanswered;
  r["complete"] = unanswered == 0;
  return r;
}

json read_report(const fs::path& path) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::runtime_error(path.string() + " is not a report");
  return j;
}

Comparison compare_reports(const json& a, const json& b) {
  if (a.value("N", -1) != b.value("N", -1)) {
    throw std::invalid_argument("reports cover different N (" + dump(a.value("N", json())) + " vs " +
                                dump(b.value("N", json())) + ")");
  }
  std::vector<std::string> names{"accuracy"};
  for (const auto& c : metric_columns()) names.emplace_back(c.name);

  const std::string label_a = report_label(a), label_b = report_label(b);
  std::vector<std::array<std::string, 4>> table{{"metric", label_a, label_b, "delta"}};
  for (const auto& name : names) {
    const auto va = report_value(a, name), vb = report_value(b, name);
    table.push_back({name, va ? format_fixed4(*va) : "NA", vb ? format_fixed4(*vb) : "NA",
                     va && vb ? format_fixed4(*vb - *va) : "NA"});
  }

  Comparison out;
  std::array<std::size_t, 4> width{};
  for (const auto& row : table) {
    out.csv += csv::format_row({row[0], row[1], row[2], row[3]});
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : table) {
    std::ostringstream line;
    line << std::left << std::setw(static_cast<int>(width[0])) << row[0];
    for (std::size_t c = 1; c < 4; ++c) line << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    out.text += line.str() + "\n";
  }
  return out;
}

std::vector<ResultRow> rescore(std::vector<ResultRow> rows, const TokenEmbedder& embed, double rouge_beta) {
  for (auto& row : rows) {
    if (!row.gold_rationale) {
      row.metrics.reset();
      row.has_bert = false;
      continue;
    }
    auto fresh = score_rationale(row.generated_rationale, *row.gold_rationale, embed, rouge_beta);
    fresh.correct = row.correct() ? 1 : 0;
    if (!embed) {
      fresh.bert_f1 = row.metrics && row.has_bert ? row.metrics->bert_f1 : 0.0;
    } else {
      row.has_bert = true;
    }
    row.metrics = quantize(fresh);
  }
  return rows;
}

// ---- providers -------------------------------------------------------------

std::unique_ptr<ProviderHub> make_provider_hub(const ExperimentConfig& cfg, std::shared_ptr<Sleeper> sleeper) {
  const auto& pc = cfg.providers;
  ProviderBackends backends;
  if (pc.mode == "mock") {
    std::map<std::string, std::string> answers;
    if (!pc.mock_answers.empty()) {
      json j;
      try {
        j = json::parse(read_file(pc.mock_answers));
        answers = j.get<std::map<std::string, std::string>>();
      } catch (const std::exception& e) {
        throw ConfigError("bad mock_answers file: " + std::string(e.what()));
      }
    }
    backends.chat = std::make_shared<OfflineChatBackend>(std::move(answers));
    backends.embedding = std::make_shared<HashEmbeddingBackend>(pc.mock_embedding_dim);
    backends.search = std::make_shared<RuleSearchBackend>([](std::string_view, int) {
      return std::vector<SearchResult>{};
    });
    backends.fetch = std::make_shared<StaticFetchBackend>();
  } else {
    auto env = [](const std::string& name) -> std::string {
      const char* v = name.empty() ? nullptr : std::getenv(name.c_str());
      return v ? v : "";
    };
    const auto chat_key = env(pc.chat_api_key_env);
    if (chat_key.empty()) throw ConfigError("environment variable " + pc.chat_api_key_env + " is not set");
    backends.chat = std::make_shared<OpenAiChatBackend>(pc.chat_base_url, chat_key);
    const auto embed_key = env(pc.embedding_api_key_env);
    if (!embed_key.empty()) {
      backends.embedding = std::make_shared<OpenAiEmbeddingBackend>(pc.embedding_base_url, embed_key,
                                                                    pc.embedding_model);
    } else if (uses_local_index(cfg.strategy)) {
      throw ConfigError("environment variable " + pc.embedding_api_key_env + " is not set");
    }
    const auto search_key = env(pc.search_api_key_env);
    if (!search_key.empty()) {
      backends.search = std::make_shared<SerperSearchBackend>(search_key, pc.search_base_url);
      backends.fetch = std::make_shared<HttpFetchBackend>();
    } else if (uses_web(cfg.strategy)) {
      throw ConfigError("environment variable " + pc.search_api_key_env + " is not set");
    }
  }

  ProviderSettings settings;
  settings.retry.max_attempts = pc.max_attempts;
  settings.retry.base_delay = std::chrono::milliseconds(pc.base_delay_ms);
  settings.retry.backoff_factor = pc.backoff_factor;
  settings.min_request_interval = std::chrono::milliseconds(pc.min_request_interval_ms);
  settings.embed_batch_size = pc.embed_batch_size;
  if (!cfg.cache_dir.empty()) settings.response_cache_dir = cfg.cache_dir / "responses";
  if (!cfg.output_dir.empty()) settings.call_log_path = cfg.output_dir / "calls.jsonl";
  return std::make_unique<ProviderHub>(std::move(backends), std::move(settings), std::move(sleeper));
}

// ---- run_experiment --------------------------------------------------------

RunSummary run_experiment(const ExperimentConfig& cfg, ProviderHub& hub) {
  cfg.validate();
  const json echo = cfg.echo();
  const std::string hash = sha256_hex(dump(echo));
  const PromptSet prompts = load_prompts(cfg);

  RunSummary summary;
  const fs::path out_dir = cfg.output_dir;
  summary.results_path = out_dir / "results.csv";
  summary.report_path = out_dir / "report.json";
  const fs::path manifest_path = out_dir / "run.json";

  if (fs::exists(manifest_path)) {
    const auto manifest = json::parse(read_file(manifest_path), nullptr, false);
    if (manifest.is_discarded() || manifest.value("config_hash", std::string()) != hash) {
      throw ConfigError("output directory " + out_dir.string() + " holds a run with a different configuration");
    }
  } else if (fs::exists(summary.results_path)) {
    throw ConfigError("output directory " + out_dir.string() + " holds results without a run manifest");
  }

  ValidationReport data;
  try {
    data = prepare_dataset(cfg.dataset, cfg.dataset_format.value_or(format_from_path(cfg.dataset)));
  } catch (const DatasetError& e) {
    throw ConfigError(e.what());
  }
  std::vector<RawDocument> docs;
  if (uses_local_index(cfg.strategy)) {
    try {
      docs = load_corpus(cfg.corpus_manifest);
    } catch (const CorpusError& e) {
      throw ConfigError(e.what());
    }
  }

  fs::create_directories(out_dir);
  write_rejections_csv(data.rejected, out_dir / "rejections.csv");
  write_file_atomic(manifest_path, dump(json{{"config_hash", hash}, {"config", echo}}, 2) + "\n");

  const auto& records = data.accepted;
  summary.total = records.size();
  summary.rejected = data.rejected.size();

  std::vector<std::optional<ResultRow>> rows(records.size());
  if (fs::exists(summary.results_path)) {
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < records.size(); ++i) position.emplace(records[i].id, i);
    for (auto& row : read_results_csv(summary.results_path).rows) {
      auto it = position.find(row.question_id);
      if (it == position.end() || rows[it->second]) continue;
      rows[it->second] = std::move(row);
      ++summary.reused;
    }
  }
  auto collect = [&] {
    std::vector<ResultRow> out;
    for (const auto& r : rows) {
      if (r) out.push_back(*r);
    }
    return out;
  };
  write_results_csv(collect(), summary.results_path);

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!rows[i]) pending.push_back(i);
  }

  std::vector<std::pair<std::string, std::chrono::milliseconds>> timings;
  if (!pending.empty()) {
    std::unique_ptr<VectorIndex> index;
    bool index_failed = false;
    if (uses_local_index(cfg.strategy)) {
      try {
        const auto cache = cfg.cache_dir.empty() ? fs::path() : cfg.cache_dir / "index";
        index = std::make_unique<VectorIndex>(build_index(chunk_corpus(docs, cfg.chunking), hub, cache));
      } catch (const IndexError& e) {
        std::cerr << "index build failed: " << e.what() << "\n";
        index_failed = true;
      }
    }

    if (!index_failed) {
      Pipeline pipeline(hub, index.get(), prompts, cfg.pipeline);
      TokenEmbedder embedder;
      if (cfg.bertscore && hub.has_embedding()) {
        embedder = [&hub](const std::vector<std::string>& tokens) { return hub.embed(tokens); };
      }
      const std::string model = cfg.pipeline.model_id;

      enum class Slot { waiting, done, outage, skipped };
      std::vector<Slot> state(pending.size(), Slot::waiting);
      std::vector<ResultRow> fresh(pending.size());
      std::mutex mu;
      std::condition_variable cv;
      std::atomic<std::size_t> next{0};
      std::atomic<int> consecutive_outages{0};
      std::atomic<bool> stop{false};
      std::exception_ptr failure;

      auto answer_one = [&](const McqRecord& record, ResultRow& row) -> bool {
        const auto started = std::chrono::steady_clock::now();
        auto p = pipeline.answer(cfg.strategy, record, derive_seed(*cfg.seed, record.id));
        if (p.provider_outage) return false;
        row.question_id = record.id;
        row.strategy = cfg.strategy;
        row.model = model;
        row.gold = record.answer_key;
        row.predicted = p.option;
        row.gold_rationale = record.rationale;
        row.generated_rationale = p.rationale;
        row.route = p.route;
        row.confidence = p.confidence;
        row.decision_kind = p.decision_kind;
        row.attempts = p.attempts;
        row.trace = std::move(p.retrieval_trace);
        if (record.rationale) {
          try {
            auto bundle = score_rationale(row.generated_rationale, *record.rationale, embedder, cfg.rouge_beta);
            bundle.correct = row.correct() ? 1 : 0;
            row.metrics = quantize(bundle);
            row.has_bert = static_cast<bool>(embedder);
          } catch (const ProviderError&) {
            return false;
          }
        }
        row.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
        return true;
      };

      auto worker = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= pending.size()) return;
          Slot result = Slot::skipped;
          if (!stop.load()) {
            try {
              if (answer_one(records[pending[i]], fresh[i])) {
                result = Slot::done;
                consecutive_outages.store(0);
              } else {
                result = Slot::outage;
                if (consecutive_outages.fetch_add(1) + 1 >= cfg.providers.abort_after_consecutive_outages) {
                  stop.store(true);
                }
              }
            } catch (...) {
              std::lock_guard lock(mu);
              if (!failure) failure = std::current_exception();
              stop.store(true);
            }
          }
          {
            std::lock_guard lock(mu);
            state[i] = result;
          }
          cv.notify_all();
        }
      };

      const auto workers_n = std::min<std::size_t>(static_cast<std::size_t>(cfg.concurrency), pending.size());
      std::vector<std::thread> workers;
      workers.reserve(workers_n);
      for (std::size_t w = 0; w < workers_n; ++w) workers.emplace_back(worker);

      // Single writer: emit finished rows in input order as they become ready.
      {
        std::ofstream journal(summary.results_path, std::ios::binary | std::ios::app);
        for (std::size_t emit = 0; emit < pending.size(); ++emit) {
          Slot s;
          {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return state[emit] != Slot::waiting; });
            s = state[emit];
          }
          if (s != Slot::done) continue;
          journal << format_result_row(fresh[emit]);
          journal.flush();
        }
      }
      for (auto& t : workers) t.join();
      if (failure) std::rethrow_exception(failure);

      for (std::size_t i = 0; i < pending.size(); ++i) {
        if (state[i] != Slot::done) continue;
        timings.emplace_back(fresh[i].question_id, fresh[i].latency);
        rows[pending[i]] = std::move(fresh[i]);
        ++summary.answered;
      }
      if (stop.load()) std::cerr << "stopped early after repeated provider outages\n";
    }
  }

  const auto final_rows = collect();
  summary.unanswered = records.size() - final_rows.size();
  write_results_csv(final_rows, summary.results_path);
  write_file_atomic(summary.report_path, dump(build_report(final_rows, echo, summary.unanswered), 2) + "\n");

  std::string timing_csv = csv::format_row({"question_id", "latency_ms"});
  for (const auto& [id, ms] : timings) timing_csv += csv::format_row({id, std::to_string(ms.count())});
  write_file_atomic(out_dir / "timings.csv", timing_csv);

  summary.exit_code = summary.unanswered > 0 ? 2 : 0;
  return summary;
}

}  // namespace mcqrag
