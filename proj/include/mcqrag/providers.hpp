#pragma once

#include <Eigen/Core>

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace mcqrag {

using EmbeddingVector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorClass {
  timeout,
  rate_limit,
  server,
  connection,
  auth,
  bad_request,
  not_found,
  malformed_response,
  not_configured,
};

std::string_view to_string(ErrorClass cls);

/// One failed attempt against an external service.
class ProviderError : public std::runtime_error {
 public:
  ProviderError(ErrorClass cls, const std::string& detail)
      : std::runtime_error(std::string(to_string(cls)) + ": " + detail), class_(cls) {}

  ErrorClass error_class() const { return class_; }

 private:
  ErrorClass class_;
};

/// Raised after the retry policy gave up, or on a non-retryable failure.
/// Carries the class of the last failure.
class ProviderUnavailable : public ProviderError {
 public:
  ProviderUnavailable(ErrorClass last, const std::string& detail, int attempts)
      : ProviderError(last, detail), attempts_(attempts) {}

  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// ---------------------------------------------------------------------------
// Requests and results
// ---------------------------------------------------------------------------

enum class ChatRole { system, user };

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::string model_id;
  double temperature = 0.0;
  std::optional<int> max_response_chars;
  int timeout_seconds = 300;

  // Not sent over the wire: what the call is for ("answer", "router",
  // "summarize", "extract_terms", "verify") and which question it serves.
  // Mock backends use these to script replies.
  std::string purpose;
  std::string subject;

  /// Throws std::invalid_argument when the request breaks its invariants.
  void validate() const;

  /// Hash over the wire-relevant fields only.
  std::string cache_key() const;

  /// Concatenated text of all user messages.
  std::string user_text() const;
};

struct ChatReply {
  std::string text;
  int attempts = 0;
};

struct SearchResult {
  std::string url;
  std::string title;
  std::string snippet;
  int rank = 0;
};

struct FetchedPage {
  int status = 200;
  std::string content_type;
  std::string body;
};

// ---------------------------------------------------------------------------
// Retry, rate limiting, logging, caching
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{1000};
  double backoff_factor = 2.0;
  std::set<ErrorClass> retryable_classes{ErrorClass::timeout, ErrorClass::rate_limit, ErrorClass::server,
                                         ErrorClass::connection};

  void validate() const;
  bool is_retryable(ErrorClass cls) const { return retryable_classes.count(cls) > 0; }

  /// Wait after the n-th failed attempt (n >= 1): base * factor^(n-1).
  std::chrono::milliseconds delay_after_failure(int n) const;
};

class Sleeper {
 public:
  virtual ~Sleeper() = default;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class RealSleeper final : public Sleeper {
 public:
  void sleep_for(std::chrono::milliseconds d) override;
};

/// Records requested delays without sleeping.
class RecordingSleeper final : public Sleeper {
 public:
  void sleep_for(std::chrono::milliseconds d) override;
  std::vector<std::chrono::milliseconds> delays() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::chrono::milliseconds> delays_;
};

enum class ProviderKind { chat, embedding, search, fetch };
enum class CallOutcome { ok, retried, failed };

std::string_view to_string(ProviderKind kind);
std::string_view to_string(CallOutcome outcome);

struct CallLogEntry {
  ProviderKind kind = ProviderKind::chat;
  std::string endpoint;
  int attempt = 1;
  std::chrono::microseconds latency{0};
  CallOutcome outcome = CallOutcome::ok;
  std::string detail;
};

/// Append-only attempt log; optionally mirrored to a JSONL file.
class CallLog {
 public:
  CallLog() = default;
  explicit CallLog(const std::filesystem::path& jsonl_path);

  void append(CallLogEntry entry);
  std::vector<CallLogEntry> entries() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<CallLogEntry> entries_;
  std::ofstream file_;
};

/// Enforces a minimum spacing between consecutive requests across threads.
class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::milliseconds min_interval, std::shared_ptr<Sleeper> sleeper);

  void acquire();

 private:
  std::chrono::milliseconds min_interval_;
  std::shared_ptr<Sleeper> sleeper_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// On-disk store of successful responses keyed by (provider kind, request hash).
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> get(ProviderKind kind, const std::string& key) const;
  void put(ProviderKind kind, const std::string& key, const std::string& value);

 private:
  std::filesystem::path path_for(ProviderKind kind, const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

template <typename T>
struct Attempted {
  T value;
  int attempts = 0;
};

/// Runs one logical call under the retry policy. Every attempt goes through
/// the rate limiter and lands in the call log.
class RetryExecutor {
 public:
  RetryExecutor(RetryPolicy policy, std::shared_ptr<Sleeper> sleeper, std::shared_ptr<RateLimiter> limiter,
                std::shared_ptr<CallLog> log);

  template <typename Fn>
  auto run(ProviderKind kind, const std::string& endpoint, Fn&& attempt_fn)
      -> Attempted<std::invoke_result_t<Fn&>> {
    for (int attempt = 1;; ++attempt) {
      if (limiter_) limiter_->acquire();
      const auto started = std::chrono::steady_clock::now();
      try {
        auto value = attempt_fn();
        record(kind, endpoint, attempt, started, CallOutcome::ok, "");
        return {std::move(value), attempt};
      } catch (const ProviderUnavailable&) {
        throw;
      } catch (const ProviderError& e) {
        const bool retry = policy_.is_retryable(e.error_class()) && attempt < policy_.max_attempts;
        record(kind, endpoint, attempt, started, retry ? CallOutcome::retried : CallOutcome::failed, e.what());
        if (!retry) throw ProviderUnavailable(e.error_class(), e.what(), attempt);
        sleeper_->sleep_for(policy_.delay_after_failure(attempt));
      }
    }
  }

  const RetryPolicy& policy() const { return policy_; }

 private:
  void record(ProviderKind kind, const std::string& endpoint, int attempt,
              std::chrono::steady_clock::time_point started, CallOutcome outcome, std::string detail);

  RetryPolicy policy_;
  std::shared_ptr<Sleeper> sleeper_;
  std::shared_ptr<RateLimiter> limiter_;
  std::shared_ptr<CallLog> log_;
};

// ---------------------------------------------------------------------------
// Backends: a single attempt each, throwing ProviderError on failure.
// ---------------------------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete_once(const ChatRequest& req) = 0;
  virtual std::string endpoint() const = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<EmbeddingVector> embed_once(const std::vector<std::string>& texts) = 0;
  /// Stable name of the model; part of the index fingerprint.
  virtual std::string identity() const = 0;
  virtual std::string endpoint() const { return identity(); }
};

class SearchBackend {
 public:
  virtual ~SearchBackend() = default;
  virtual std::vector<SearchResult> search_once(std::string_view query, int max_links) = 0;
  virtual std::string endpoint() const = 0;
};

class FetchBackend {
 public:
  virtual ~FetchBackend() = default;
  virtual FetchedPage fetch_once(std::string_view url, std::chrono::seconds timeout) = 0;
};

struct ProviderBackends {
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<EmbeddingBackend> embedding;
  std::shared_ptr<SearchBackend> search;
  std::shared_ptr<FetchBackend> fetch;
};

struct ProviderSettings {
  RetryPolicy retry;
  std::chrono::milliseconds min_request_interval{0};
  std::size_t embed_batch_size = 32;
  /// Empty disables the response cache.
  std::filesystem::path response_cache_dir;
  /// Empty keeps the call log in memory only.
  std::filesystem::path call_log_path;
};

/// Uniform entry point for every external service. Safe for concurrent use.
class ProviderHub {
 public:
  ProviderHub(ProviderBackends backends, ProviderSettings settings,
              std::shared_ptr<Sleeper> sleeper = std::make_shared<RealSleeper>());

  /// Returns the assistant text verbatim.
  ChatReply chat_complete(const ChatRequest& req);

  /// One vector per input, in order. Inputs must be non-blank.
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

  /// At most `max_links` results, ranks renumbered 1..n. Throws
  /// ProviderUnavailable on exhaustion; an empty vector means zero hits.
  std::vector<SearchResult> web_search(std::string_view query, int max_links = 8);

  /// Visible text of the page's article/main/p/h1-h6/li elements. Non-HTML
  /// bodies extract to "".
  std::string fetch_and_extract(std::string_view url, std::chrono::seconds timeout);

  std::string embedder_identity() const;
  bool has_search() const { return backends_.search && backends_.fetch; }
  bool has_embedding() const { return static_cast<bool>(backends_.embedding); }

  CallLog& call_log() { return *log_; }
  const RetryPolicy& retry_policy() const { return executor_.policy(); }
  std::size_t embed_batch_size() const { return settings_.embed_batch_size; }

 private:
  ProviderBackends backends_;
  ProviderSettings settings_;
  std::shared_ptr<CallLog> log_;
  std::unique_ptr<ResponseCache> cache_;
  RetryExecutor executor_;
};

/// Allowlist extraction (article, main, p, h1-h6, li) with script/style removed.
std::string extract_visible_text(std::string_view html);

}  // namespace mcqrag
