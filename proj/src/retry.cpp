#include <json.hpp>

#include <cmath>
#include <sstream>
#include <thread>

#include "mcqrag/providers.hpp"

namespace mcqrag {

std::string_view to_string(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::timeout: return "timeout";
    case ErrorClass::rate_limit: return "rate_limit";
    case ErrorClass::server: return "server";
    case ErrorClass::connection: return "connection";
    case ErrorClass::auth: return "auth";
    case ErrorClass::bad_request: return "bad_request";
    case ErrorClass::not_found: return "not_found";
    case ErrorClass::malformed_response: return "malformed_response";
    case ErrorClass::not_configured: return "not_configured";
  }
  return "unknown";
}

std::string_view to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::chat: return "chat";
    case ProviderKind::embedding: return "embedding";
    case ProviderKind::search: return "search";
    case ProviderKind::fetch: return "fetch";
  }
  return "unknown";
}

std::string_view to_string(CallOutcome outcome) {
  switch (outcome) {
    case CallOutcome::ok: return "ok";
    case CallOutcome::retried: return "retried";
    case CallOutcome::failed: return "failed";
  }
  return "unknown";
}

void RetryPolicy::validate() const {
  if (max_attempts < 1) throw std::invalid_argument("retry max_attempts must be >= 1");
  if (base_delay.count() <= 0) throw std::invalid_argument("retry base_delay must be positive");
  if (!(backoff_factor >= 1.0)) throw std::invalid_argument("retry backoff_factor must be >= 1");
}

std::chrono::milliseconds RetryPolicy::delay_after_failure(int n) const {
  const double ms = static_cast<double>(base_delay.count()) * std::pow(backoff_factor, n - 1);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(ms)));
}

void RealSleeper::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

void RecordingSleeper::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  delays_.push_back(d);
}

std::vector<std::chrono::milliseconds> RecordingSleeper::delays() const {
  std::lock_guard lock(mu_);
  return delays_;
}

CallLog::CallLog(const std::filesystem::path& jsonl_path) {
  if (jsonl_path.has_parent_path()) std::filesystem::create_directories(jsonl_path.parent_path());
  file_.open(jsonl_path, std::ios::app);
  if (!file_) throw std::runtime_error("cannot open call log " + jsonl_path.string());
}

void CallLog::append(CallLogEntry entry) {
  std::lock_guard lock(mu_);
  if (file_.is_open()) {
    nlohmann::json rec{{"kind", to_string(entry.kind)},
                       {"endpoint", entry.endpoint},
                       {"attempt", entry.attempt},
                       {"latency_us", entry.latency.count()},
                       {"outcome", to_string(entry.outcome)},
                       {"detail", entry.detail}};
    file_ << rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    file_.flush();
  }
  entries_.push_back(std::move(entry));
}

std::vector<CallLogEntry> CallLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t CallLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

RateLimiter::RateLimiter(std::chrono::milliseconds min_interval, std::shared_ptr<Sleeper> sleeper)
    : min_interval_(min_interval), sleeper_(std::move(sleeper)) {}

void RateLimiter::acquire() {
  if (min_interval_.count() <= 0) return;
  std::chrono::milliseconds wait{0};
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto slot = std::max(now, next_slot_);
    wait = std::chrono::ceil<std::chrono::milliseconds>(slot - now);
    next_slot_ = slot + min_interval_;
  }
  if (wait.count() > 0) sleeper_->sleep_for(wait);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(ProviderKind kind, const std::string& key) const {
  return dir_ / std::string(to_string(kind)) / (key + ".json");
}

std::optional<std::string> ResponseCache::get(ProviderKind kind, const std::string& key) const {
  std::lock_guard lock(mu_);
  std::ifstream in(path_for(kind, key), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void ResponseCache::put(ProviderKind kind, const std::string& key, const std::string& value) {
  std::lock_guard lock(mu_);
  const auto path = path_for(kind, key);
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << value;
    if (!out) throw std::runtime_error("cannot write response cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RetryExecutor::RetryExecutor(RetryPolicy policy, std::shared_ptr<Sleeper> sleeper,
                             std::shared_ptr<RateLimiter> limiter, std::shared_ptr<CallLog> log)
    : policy_(std::move(policy)), sleeper_(std::move(sleeper)), limiter_(std::move(limiter)), log_(std::move(log)) {
  policy_.validate();
}

void RetryExecutor::record(ProviderKind kind, const std::string& endpoint, int attempt,
                           std::chrono::steady_clock::time_point started, CallOutcome outcome, std::string detail) {
  if (!log_) return;
  log_->append(CallLogEntry{kind, endpoint, attempt,
                            std::chrono::duration_cast<std::chrono::microseconds>(
                                std::chrono::steady_clock::now() - started),
                            outcome, std::move(detail)});
}

}  // namespace mcqrag
