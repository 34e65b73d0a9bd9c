#pragma once

#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcqrag/providers.hpp"

// Deterministic in-process backends. They make every pipeline runnable
// offline and are what the test suites script against.

namespace mcqrag {

/// Pops one scripted step per call; when the script runs dry the responder
/// (if any) answers, otherwise the call fails with bad_request.
class ScriptedChatBackend final : public ChatBackend {
 public:
  using Responder = std::function<std::string(const ChatRequest&)>;

  explicit ScriptedChatBackend(Responder fallback = {}) : fallback_(std::move(fallback)) {}

  ScriptedChatBackend& reply(std::string text);
  ScriptedChatBackend& fail(ErrorClass cls, int times = 1);

  std::string complete_once(const ChatRequest& req) override;
  std::string endpoint() const override { return "mock://chat"; }

  int calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  struct Step {
    std::string text;
    std::optional<ErrorClass> failure;
  };
  mutable std::mutex mu_;
  std::deque<Step> steps_;
  Responder fallback_;
  std::vector<ChatRequest> requests_;
};

/// Stateless: every reply is a pure function of the request.
class RuleChatBackend final : public ChatBackend {
 public:
  explicit RuleChatBackend(std::function<std::string(const ChatRequest&)> rule) : rule_(std::move(rule)) {}
  std::string complete_once(const ChatRequest& req) override { return rule_(req); }
  std::string endpoint() const override { return "mock://chat-rule"; }

 private:
  std::function<std::string(const ChatRequest&)> rule_;
};

/// Heuristic offline model used by the CLI's mock mode. Answers come from
/// `answers` (question id -> letter) when present, otherwise from a hash of
/// the prompt; the router and verifier always say "Yes".
class OfflineChatBackend final : public ChatBackend {
 public:
  explicit OfflineChatBackend(std::map<std::string, std::string> answers = {}) : answers_(std::move(answers)) {}
  std::string complete_once(const ChatRequest& req) override;
  std::string endpoint() const override { return "mock://offline-chat"; }

 private:
  std::map<std::string, std::string> answers_;
};

/// Signed feature hashing of tokens into `dim` buckets, L2-normalised. Texts
/// sharing words get positive cosine.
class HashEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit HashEmbeddingBackend(int dim = 256) : dim_(dim) {}
  std::vector<EmbeddingVector> embed_once(const std::vector<std::string>& texts) override;
  std::string identity() const override { return "hash-embedder/" + std::to_string(dim_); }

 private:
  int dim_;
};

/// Each distinct string gets the next standard basis vector.
class OneHotEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit OneHotEmbeddingBackend(int dim = 512) : dim_(dim) {}
  std::vector<EmbeddingVector> embed_once(const std::vector<std::string>& texts) override;
  std::string identity() const override { return "one-hot/" + std::to_string(dim_); }

 private:
  int dim_;
  std::mutex mu_;
  std::unordered_map<std::string, int> slots_;
};

class RuleEmbeddingBackend final : public EmbeddingBackend {
 public:
  using Rule = std::function<EmbeddingVector(const std::string&)>;
  RuleEmbeddingBackend(std::string identity, Rule rule) : identity_(std::move(identity)), rule_(std::move(rule)) {}

  std::vector<EmbeddingVector> embed_once(const std::vector<std::string>& texts) override;
  std::string identity() const override { return identity_; }
  int calls() const { return calls_; }

 private:
  std::string identity_;
  Rule rule_;
  std::atomic<int> calls_{0};
};

class RuleSearchBackend final : public SearchBackend {
 public:
  using Rule = std::function<std::vector<SearchResult>(std::string_view query, int max_links)>;
  explicit RuleSearchBackend(Rule rule) : rule_(std::move(rule)) {}

  /// Hits 1..n with urls https://example.test/<i>.
  static std::vector<SearchResult> numbered_hits(int n);

  std::vector<SearchResult> search_once(std::string_view query, int max_links) override;
  std::string endpoint() const override { return "mock://search"; }
  int calls() const { return calls_; }

 private:
  Rule rule_;
  std::atomic<int> calls_{0};
};

/// Serves pages from a map; unknown urls are 404s.
class StaticFetchBackend final : public FetchBackend {
 public:
  explicit StaticFetchBackend(std::map<std::string, FetchedPage> pages = {}) : pages_(std::move(pages)) {}
  FetchedPage fetch_once(std::string_view url, std::chrono::seconds timeout) override;

 private:
  std::map<std::string, FetchedPage> pages_;
};

}  // namespace mcqrag
