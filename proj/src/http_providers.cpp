// Eigen must come before httplib: glibc's <resolv.h> defines a `_res` macro
// that collides with Eigen parameter names.
#include "mcqrag/http_providers.hpp"

#include <httplib.h>
#include <json.hpp>

namespace mcqrag {

using nlohmann::json;

namespace {

std::string strip_trailing_slash(std::string s) {
  while (!s.empty() && s.back() == '/') s.pop_back();
  return s;
}

ErrorClass classify_transport(httplib::Error err) {
  switch (err) {
    case httplib::Error::ConnectionTimeout:
    case httplib::Error::Read:
    case httplib::Error::Write:
      return ErrorClass::timeout;
    default:
      return ErrorClass::connection;
  }
}

httplib::Client make_client(const std::string& origin, int timeout_seconds) {
  httplib::Client cli(origin);
  cli.set_connection_timeout(std::chrono::seconds(std::min(timeout_seconds, 30)));
  cli.set_read_timeout(std::chrono::seconds(timeout_seconds));
  cli.set_write_timeout(std::chrono::seconds(timeout_seconds));
  cli.set_follow_location(true);
  return cli;
}

json post_json(const std::string& url, const httplib::Headers& headers, const json& body, int timeout_seconds) {
  const auto parts = split_url(url);
  auto cli = make_client(parts.origin, timeout_seconds);
  auto res = cli.Post(parts.target, headers, body.dump(-1, ' ', false, json::error_handler_t::replace),
                      "application/json");
  if (!res) throw ProviderError(classify_transport(res.error()), url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError(classify_status(res->status),
                        url + " returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  auto parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) throw ProviderError(ErrorClass::malformed_response, url + " returned non-JSON body");
  return parsed;
}

httplib::Headers bearer(const std::string& key) {
  httplib::Headers h;
  if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
  return h;
}

}  // namespace

UrlParts split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw std::invalid_argument("malformed url: " + std::string(url));
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw std::invalid_argument("unsupported scheme: " + std::string(url));
  const auto host_begin = scheme_end + 3;
  const auto path_begin = url.find_first_of("/?#", host_begin);
  UrlParts parts;
  parts.origin = std::string(url.substr(0, path_begin));
  if (parts.origin.size() <= host_begin) throw std::invalid_argument("url without host: " + std::string(url));
  if (path_begin == std::string_view::npos) {
    parts.target = "/";
  } else {
    auto rest = url.substr(path_begin);
    rest = rest.substr(0, rest.find('#'));
    parts.target = rest.empty() || rest[0] != '/' ? "/" + std::string(rest) : std::string(rest);
  }
  return parts;
}

ErrorClass classify_status(int status) {
  if (status == 408) return ErrorClass::timeout;
  if (status == 429) return ErrorClass::rate_limit;
  if (status >= 500) return ErrorClass::server;
  if (status == 401 || status == 403) return ErrorClass::auth;
  if (status == 404 || status == 410) return ErrorClass::not_found;
  return ErrorClass::bad_request;
}

OpenAiChatBackend::OpenAiChatBackend(std::string base_url, std::string api_key)
    : base_url_(strip_trailing_slash(std::move(base_url))), api_key_(std::move(api_key)) {}

std::string OpenAiChatBackend::complete_once(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", m.role == ChatRole::system ? "system" : "user"}, {"content", m.content}});
  }
  json body{{"model", req.model_id}, {"messages", messages}, {"temperature", req.temperature}};
  if (req.max_response_chars) {
    // Rough chars-to-tokens bound; the exact cut is applied below.
    body["max_tokens"] = std::max(1, *req.max_response_chars / 2);
  }
  auto reply = post_json(endpoint(), bearer(api_key_), body, req.timeout_seconds);
  try {
    std::string text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    if (req.max_response_chars && text.size() > static_cast<std::size_t>(*req.max_response_chars)) {
      text.resize(static_cast<std::size_t>(*req.max_response_chars));
    }
    return text;
  } catch (const json::exception& e) {
    throw ProviderError(ErrorClass::malformed_response, std::string("chat reply: ") + e.what());
  }
}

OpenAiEmbeddingBackend::OpenAiEmbeddingBackend(std::string base_url, std::string api_key, std::string model,
                                               int timeout_seconds)
    : base_url_(strip_trailing_slash(std::move(base_url))),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      timeout_seconds_(timeout_seconds) {}

std::vector<EmbeddingVector> OpenAiEmbeddingBackend::embed_once(const std::vector<std::string>& texts) {
  auto reply = post_json(endpoint(), bearer(api_key_), json{{"model", model_}, {"input", texts}}, timeout_seconds_);
  try {
    std::vector<EmbeddingVector> out(texts.size());
    for (const auto& item : reply.at("data")) {
      const auto index = item.value("index", std::size_t{0});
      const auto values = item.at("embedding").get<std::vector<double>>();
      if (index >= out.size()) throw ProviderError(ErrorClass::malformed_response, "embedding index out of range");
      out[index] = Eigen::Map<const EmbeddingVector>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ErrorClass::malformed_response, std::string("embedding reply: ") + e.what());
  }
}

SerperSearchBackend::SerperSearchBackend(std::string api_key, std::string base_url)
    : api_key_(std::move(api_key)), base_url_(strip_trailing_slash(std::move(base_url))) {}

std::vector<SearchResult> SerperSearchBackend::search_once(std::string_view query, int max_links) {
  httplib::Headers headers{{"X-API-KEY", api_key_}};
  auto reply = post_json(endpoint(), headers, json{{"q", std::string(query)}, {"num", max_links}}, 30);
  std::vector<SearchResult> out;
  if (!reply.contains("organic")) return out;
  int fallback_rank = 0;
  for (const auto& item : reply["organic"]) {
    ++fallback_rank;
    if (!item.contains("link")) continue;
    out.push_back({item["link"].get<std::string>(), item.value("title", ""), item.value("snippet", ""),
                   item.value("position", fallback_rank)});
  }
  return out;
}

HttpFetchBackend::HttpFetchBackend(std::string user_agent) : user_agent_(std::move(user_agent)) {}

FetchedPage HttpFetchBackend::fetch_once(std::string_view url, std::chrono::seconds timeout) {
  const auto parts = split_url(url);
  auto cli = make_client(parts.origin, static_cast<int>(timeout.count()));
  auto res = cli.Get(parts.target, httplib::Headers{{"User-Agent", user_agent_}});
  if (!res) {
    throw ProviderError(classify_transport(res.error()), std::string(url) + ": " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError(classify_status(res->status), std::string(url) + " returned HTTP " + std::to_string(res->status));
  }
  return FetchedPage{res->status, res->get_header_value("Content-Type"), res->body};
}

}  // namespace mcqrag
