#include <json.hpp>

#include "mcqrag/providers.hpp"
#include "mcqrag/sha256.hpp"
#include "mcqrag/utf8.hpp"

namespace mcqrag {

using nlohmann::json;

void ChatRequest::validate() const {
  bool has_user = false;
  for (const auto& m : messages) has_user = has_user || m.role == ChatRole::user;
  if (!has_user) throw std::invalid_argument("chat request needs at least one user message");
  if (!std::isfinite(temperature) || temperature < 0.0 || temperature > 2.0) {
    throw std::invalid_argument("chat temperature must be finite and within [0, 2]");
  }
  if (timeout_seconds <= 0) throw std::invalid_argument("chat timeout must be positive");
}

std::string ChatRequest::cache_key() const {
  Sha256 h;
  h.field(model_id);
  char temp[32];
  std::snprintf(temp, sizeof(temp), "%.6f", temperature);
  h.field(temp);
  h.field(max_response_chars ? std::to_string(*max_response_chars) : "-");
  for (const auto& m : messages) {
    h.field(m.role == ChatRole::system ? "system" : "user");
    h.field(m.content);
  }
  return h.hex_digest();
}

std::string ChatRequest::user_text() const {
  std::string out;
  for (const auto& m : messages) {
    if (m.role != ChatRole::user) continue;
    if (!out.empty()) out += '\n';
    out += m.content;
  }
  return out;
}

ProviderHub::ProviderHub(ProviderBackends backends, ProviderSettings settings, std::shared_ptr<Sleeper> sleeper)
    : backends_(std::move(backends)),
      settings_(std::move(settings)),
      log_(settings_.call_log_path.empty() ? std::make_shared<CallLog>()
                                           : std::make_shared<CallLog>(settings_.call_log_path)),
      cache_(settings_.response_cache_dir.empty() ? nullptr
                                                  : std::make_unique<ResponseCache>(settings_.response_cache_dir)),
      executor_(settings_.retry, sleeper, std::make_shared<RateLimiter>(settings_.min_request_interval, sleeper),
                log_) {
  if (settings_.embed_batch_size == 0) throw std::invalid_argument("embed_batch_size must be positive");
}

ChatReply ProviderHub::chat_complete(const ChatRequest& req) {
  req.validate();
  if (!backends_.chat) throw ProviderUnavailable(ErrorClass::not_configured, "no chat backend", 0);
  const std::string key = cache_ ? req.cache_key() : std::string{};
  if (cache_) {
    if (auto hit = cache_->get(ProviderKind::chat, key)) {
      auto j = json::parse(*hit, nullptr, false);
      if (!j.is_discarded()) return {j.value("text", ""), j.value("attempts", 1)};
    }
  }
  auto result = executor_.run(ProviderKind::chat, backends_.chat->endpoint(),
                              [&] { return backends_.chat->complete_once(req); });
  ChatReply reply{std::move(result.value), result.attempts};
  if (cache_) {
    cache_->put(ProviderKind::chat, key,
                json{{"text", reply.text}, {"attempts", reply.attempts}}.dump(-1, ' ', false,
                                                                            json::error_handler_t::replace));
  }
  return reply;
}

std::vector<EmbeddingVector> ProviderHub::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  if (!backends_.embedding) throw ProviderUnavailable(ErrorClass::not_configured, "no embedding backend", 0);
  for (const auto& t : texts) {
    if (utf8::trim(t).empty()) throw std::invalid_argument("cannot embed blank text");
  }
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  const std::string identity = backends_.embedding->identity();
  for (std::size_t begin = 0; begin < texts.size(); begin += settings_.embed_batch_size) {
    const std::size_t end = std::min(texts.size(), begin + settings_.embed_batch_size);
    std::vector<std::string> batch(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                   texts.begin() + static_cast<std::ptrdiff_t>(end));
    std::string key;
    if (cache_) {
      Sha256 h;
      h.field(identity);
      for (const auto& t : batch) h.field(t);
      key = h.hex_digest();
      if (auto hit = cache_->get(ProviderKind::embedding, key)) {
        auto j = json::parse(*hit, nullptr, false);
        if (j.is_array() && j.size() == batch.size()) {
          for (const auto& row : j) {
            auto values = row.get<std::vector<double>>();
            out.emplace_back(Eigen::Map<const EmbeddingVector>(values.data(), static_cast<Eigen::Index>(values.size())));
          }
          continue;
        }
      }
    }
    auto result = executor_.run(ProviderKind::embedding, backends_.embedding->endpoint(), [&] {
      auto vectors = backends_.embedding->embed_once(batch);
      if (vectors.size() != batch.size()) {
        throw ProviderError(ErrorClass::malformed_response,
                            "embedding count " + std::to_string(vectors.size()) + " for " +
                                std::to_string(batch.size()) + " inputs");
      }
      return vectors;
    });
    if (cache_) {
      json rows = json::array();
      for (const auto& v : result.value) rows.push_back(std::vector<double>(v.data(), v.data() + v.size()));
      cache_->put(ProviderKind::embedding, key, rows.dump());
    }
    for (auto& v : result.value) out.push_back(std::move(v));
  }
  return out;
}

std::vector<SearchResult> ProviderHub::web_search(std::string_view query, int max_links) {
  if (!backends_.search) throw ProviderUnavailable(ErrorClass::not_configured, "no search backend", 0);
  if (max_links <= 0) return {};
  std::string key;
  std::vector<SearchResult> results;
  bool cached = false;
  if (cache_) {
    key = Sha256().field(backends_.search->endpoint()).field(query).field(std::to_string(max_links)).hex_digest();
    if (auto hit = cache_->get(ProviderKind::search, key)) {
      auto j = json::parse(*hit, nullptr, false);
      if (j.is_array()) {
        for (const auto& r : j) {
          results.push_back({r.value("url", ""), r.value("title", ""), r.value("snippet", ""), r.value("rank", 0)});
        }
        cached = true;
      }
    }
  }
  if (!cached) {
    results = executor_
                  .run(ProviderKind::search, backends_.search->endpoint(),
                       [&] { return backends_.search->search_once(query, max_links); })
                  .value;
    std::stable_sort(results.begin(), results.end(),
                     [](const SearchResult& a, const SearchResult& b) { return a.rank < b.rank; });
    if (results.size() > static_cast<std::size_t>(max_links)) results.resize(static_cast<std::size_t>(max_links));
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = static_cast<int>(i) + 1;
    if (cache_) {
      json rows = json::array();
      for (const auto& r : results) {
        rows.push_back({{"url", r.url}, {"title", r.title}, {"snippet", r.snippet}, {"rank", r.rank}});
      }
      cache_->put(ProviderKind::search, key, rows.dump(-1, ' ', false, json::error_handler_t::replace));
    }
  }
  return results;
}

std::string ProviderHub::fetch_and_extract(std::string_view url, std::chrono::seconds timeout) {
  if (!backends_.fetch) throw ProviderUnavailable(ErrorClass::not_configured, "no page fetcher", 0);
  if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0) {
    throw std::invalid_argument("not an http(s) url: " + std::string(url));
  }
  const std::string key = cache_ ? sha256_hex(url) : std::string{};
  if (cache_) {
    if (auto hit = cache_->get(ProviderKind::fetch, key)) return *hit;
  }
  auto page = executor_
                  .run(ProviderKind::fetch, std::string(url),
                       [&] { return backends_.fetch->fetch_once(url, timeout); })
                  .value;
  std::string text;
  const auto& ct = page.content_type;
  const bool html = ct.empty() || ct.find("html") != std::string::npos;
  if (html) text = extract_visible_text(page.body);
  if (cache_) cache_->put(ProviderKind::fetch, key, text);
  return text;
}

std::string ProviderHub::embedder_identity() const {
  return backends_.embedding ? backends_.embedding->identity() : std::string{};
}

}  // namespace mcqrag
