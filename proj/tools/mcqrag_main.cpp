// Command-line front end: ingest, index, run, score, compare.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mcqrag/runner.hpp"
#include "mcqrag/textcorpus.hpp"
#include "mcqrag/vecindex.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcqrag;

namespace {

struct Overrides {
  std::string config;
  std::string dataset;
  std::string corpus;
  std::string strategy;
  std::string model;
  std::string mode;
  std::string cache_dir;
  std::string output_dir;
  std::string prompts_dir;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
  std::optional<int> concurrency;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON experiment config");
  cmd->add_option("--dataset", o.dataset, "Dataset file (.csv or .jsonl)");
  cmd->add_option("--corpus", o.corpus, "Corpus manifest (JSON)");
  cmd->add_option("--strategy", o.strategy, "zero_shot, local_rag, local_fallback, web_fallback, agentic, iterative, aggregate");
  cmd->add_option("--model", o.model, "Chat model id");
  cmd->add_option("--mode", o.mode, "Provider mode: mock or live");
  cmd->add_option("--k", o.k, "Passages per retrieval");
  cmd->add_option("--seed", o.seed, "Root random seed");
  cmd->add_option("--concurrency", o.concurrency, "Worker count");
  cmd->add_option("--cache-dir", o.cache_dir, "Index and response cache directory");
  cmd->add_option("-o,--output-dir", o.output_dir, "Output directory");
  cmd->add_option("--prompts-dir", o.prompts_dir, "Directory of prompt template overrides");
}

// Flags win over file values.
ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  json j = json::object();
  if (!o.dataset.empty()) j["dataset"] = o.dataset;
  if (!o.corpus.empty()) j["corpus"] = o.corpus;
  if (!o.strategy.empty()) j["strategy"] = o.strategy;
  if (!o.model.empty()) j["model"] = o.model;
  if (o.k) j["k"] = *o.k;
  if (o.seed) j["seed"] = *o.seed;
  if (o.concurrency) j["concurrency"] = *o.concurrency;
  if (!o.cache_dir.empty()) j["cache_dir"] = o.cache_dir;
  if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
  if (!o.prompts_dir.empty()) j["prompts_dir"] = o.prompts_dir;
  if (!o.mode.empty()) j["providers"] = {{"mode", o.mode}};
  apply_config(cfg, j, fs::current_path());
  if (cfg.pipeline.model_id.empty() && cfg.providers.mode == "mock") cfg.pipeline.model_id = "mock-model";
  return cfg;
}

int cmd_ingest(const std::string& corpus, const ChunkingConfig& chunking, const std::string& out) {
  validate(chunking);
  const auto chunks = chunk_corpus(load_corpus(corpus), chunking);
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + out);
  for (const auto& c : chunks) {
    file << json{{"chunk_id", c.chunk_id},
                 {"doc_id", c.doc_id},
                 {"char_start", c.char_start},
                 {"char_len", c.char_len},
                 {"text", c.text}}
                .dump(-1, ' ', false, json::error_handler_t::replace)
         << "\n";
  }
  std::cout << chunks.size() << " chunks written to " << out << "\n";
  return 0;
}

int cmd_index(const Overrides& o, const std::string& out) {
  auto cfg = resolve(o);
  if (cfg.corpus_manifest.empty()) throw ConfigError("--corpus or a config with a corpus is required");
  auto hub = make_provider_hub(cfg);
  const auto chunks = chunk_corpus(load_corpus(cfg.corpus_manifest), cfg.chunking);
  const auto index = build_index(chunks, *hub, cfg.cache_dir.empty() ? fs::path() : cfg.cache_dir / "index");
  if (!out.empty()) index.save(out);
  std::cout << index.size() << " vectors, dimension " << index.dimension() << ", fingerprint "
            << index.fingerprint() << "\n";
  return 0;
}

int cmd_run(const Overrides& o) {
  const auto cfg = resolve(o);
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  auto hub = make_provider_hub(cfg);
  const auto summary = run_experiment(cfg, *hub);
  const auto report = read_report(summary.report_path);
  std::cout << "questions " << summary.total << " (rejected " << summary.rejected << "), answered "
            << summary.answered << ", reused " << summary.reused << ", unanswered " << summary.unanswered << "\n"
            << "accuracy " << report["accuracy"].dump() << "\n"
            << "results " << summary.results_path.string() << "\n"
            << "report " << summary.report_path.string() << "\n";
  return summary.exit_code;
}

int cmd_score(const std::string& results, const std::string& out_dir, const Overrides& o) {
  auto file = read_results_csv(results);
  if (file.skipped) std::cerr << file.skipped << " unreadable rows skipped\n";
  TokenEmbedder embed;
  std::unique_ptr<ProviderHub> hub;
  double beta = 1.0;
  if (!o.config.empty() || !o.mode.empty()) {
    auto cfg = resolve(o);
    beta = cfg.rouge_beta;
    if (cfg.bertscore) {
      hub = make_provider_hub(cfg);
      if (hub->has_embedding()) {
        embed = [&hub](const std::vector<std::string>& tokens) { return hub->embed(tokens); };
      }
    }
  }
  const auto rows = rescore(std::move(file.rows), embed, beta);
  json echo = json::object();
  const auto manifest = fs::path(results).parent_path() / "run.json";
  if (fs::exists(manifest)) echo = read_report(manifest).value("config", json::object());
  fs::create_directories(out_dir);
  write_results_csv(rows, fs::path(out_dir) / "results.csv");
  std::ofstream(fs::path(out_dir) / "report.json", std::ios::binary | std::ios::trunc)
      << build_report(rows, echo, 0).dump(2, ' ', false, json::error_handler_t::replace) << "\n";
  std::cout << rows.size() << " rows rescored into " << out_dir << "\n";
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& csv_out) {
  const auto cmp = compare_reports(read_report(a), read_report(b));
  std::cout << cmp.text;
  if (!csv_out.empty()) {
    std::ofstream(csv_out, std::ios::binary | std::ios::trunc) << cmp.csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented multiple-choice QA runner"};
  app.require_subcommand(1);

  std::string ingest_corpus, ingest_out;
  ChunkingConfig chunking;
  auto* ingest = app.add_subcommand("ingest", "Normalize and chunk a corpus into JSONL");
  ingest->add_option("--corpus", ingest_corpus, "Corpus manifest (JSON)")->required();
  ingest->add_option("--chunk-size", chunking.chunk_size, "Characters per chunk");
  ingest->add_option("--overlap", chunking.overlap, "Characters shared by neighbouring chunks");
  ingest->add_option("-o,--out", ingest_out, "Output JSONL")->required();

  Overrides index_opts;
  std::string index_out;
  auto* index = app.add_subcommand("index", "Embed the corpus and cache the vector index");
  add_override_flags(index, index_opts);
  index->add_option("--out", index_out, "Also save the index to this file");

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "Run one experiment (strategy x model x dataset)");
  add_override_flags(run, run_opts);

  Overrides score_opts;
  std::string score_results, score_out;
  auto* score = app.add_subcommand("score", "Recompute metrics for an existing results file");
  score->add_option("--results", score_results, "results.csv to rescore")->required();
  score->add_option("-o,--out", score_out, "Output directory")->required();
  score->add_option("-c,--config", score_opts.config, "Config supplying the embedding provider");
  score->add_option("--mode", score_opts.mode, "Provider mode for BERTScore embeddings");

  std::string report_a, report_b, compare_csv;
  auto* compare = app.add_subcommand("compare", "Compare two report.json files");
  compare->add_option("a", report_a, "Baseline report")->required();
  compare->add_option("b", report_b, "Other report")->required();
  compare->add_option("--csv", compare_csv, "Also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return cmd_ingest(ingest_corpus, chunking, ingest_out);
    if (*index) return cmd_index(index_opts, index_out);
    if (*run) return cmd_run(run_opts);
    if (*score) return cmd_score(score_results, score_out, score_opts);
    if (*compare) return cmd_compare(report_a, report_b, compare_csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
