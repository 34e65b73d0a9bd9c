#pragma once

#include <string>

#include "mcqrag/providers.hpp"

namespace mcqrag {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string target;  // /path?query, at least "/"
};

/// Throws std::invalid_argument for anything but http(s) URLs.
UrlParts split_url(std::string_view url);

/// Maps an HTTP status to the retry taxonomy (429 -> rate_limit, 5xx -> server, ...).
ErrorClass classify_status(int status);

/// Chat-completions protocol: POST {base_url}/chat/completions with
/// {"model", "messages": [{"role", "content"}], "temperature"}; the reply is
/// choices[0].message.content.
class OpenAiChatBackend final : public ChatBackend {
 public:
  OpenAiChatBackend(std::string base_url, std::string api_key);
  std::string complete_once(const ChatRequest& req) override;
  std::string endpoint() const override { return base_url_ + "/chat/completions"; }

 private:
  std::string base_url_;
  std::string api_key_;
};

/// POST {base_url}/embeddings with {"model", "input": [...]}.
class OpenAiEmbeddingBackend final : public EmbeddingBackend {
 public:
  OpenAiEmbeddingBackend(std::string base_url, std::string api_key, std::string model, int timeout_seconds = 120);
  std::vector<EmbeddingVector> embed_once(const std::vector<std::string>& texts) override;
  std::string identity() const override { return "openai-embeddings:" + model_; }
  std::string endpoint() const override { return base_url_ + "/embeddings"; }

 private:
  std::string base_url_;
  std::string api_key_;
  std::string model_;
  int timeout_seconds_;
};

/// Serper-style search: POST {base_url}/search with {"q", "num"} and an
/// X-API-KEY header; reads organic[].{link,title,snippet,position}.
class SerperSearchBackend final : public SearchBackend {
 public:
  explicit SerperSearchBackend(std::string api_key, std::string base_url = "https://google.serper.dev");
  std::vector<SearchResult> search_once(std::string_view query, int max_links) override;
  std::string endpoint() const override { return base_url_ + "/search"; }

 private:
  std::string api_key_;
  std::string base_url_;
};

/// Plain GET with redirects followed and a static user agent.
class HttpFetchBackend final : public FetchBackend {
 public:
  explicit HttpFetchBackend(std::string user_agent = "mcqrag/1.0");
  FetchedPage fetch_once(std::string_view url, std::chrono::seconds timeout) override;

 private:
  std::string user_agent_;
};

}  // namespace mcqrag
