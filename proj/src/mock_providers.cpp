#include "mcqrag/mock_providers.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

#include "mcqrag/utf8.hpp"

namespace mcqrag {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::u32string current;
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_whitespace(cp) || utf8::is_punctuation(cp)) {
      if (!current.empty()) out.push_back(utf8::fold_case(utf8::encode(current)));
      current.clear();
    } else {
      current.push_back(cp);
    }
  }
  if (!current.empty()) out.push_back(utf8::fold_case(utf8::encode(current)));
  return out;
}

// Text after the first line that starts with `marker`, up to the next blank line.
std::string section_after(const std::string& text, std::string_view marker) {
  const auto pos = text.find(marker);
  if (pos == std::string::npos) return {};
  const auto begin = text.find('\n', pos);
  if (begin == std::string::npos) return {};
  const auto end = text.find("\n\n", begin + 1);
  return text.substr(begin + 1, end == std::string::npos ? std::string::npos : end - begin - 1);
}

}  // namespace

ScriptedChatBackend& ScriptedChatBackend::reply(std::string text) {
  std::lock_guard lock(mu_);
  steps_.push_back({std::move(text), std::nullopt});
  return *this;
}

ScriptedChatBackend& ScriptedChatBackend::fail(ErrorClass cls, int times) {
  std::lock_guard lock(mu_);
  for (int i = 0; i < times; ++i) steps_.push_back({{}, cls});
  return *this;
}

std::string ScriptedChatBackend::complete_once(const ChatRequest& req) {
  Step step;
  {
    std::lock_guard lock(mu_);
    requests_.push_back(req);
    if (steps_.empty()) {
      if (!fallback_) throw ProviderError(ErrorClass::bad_request, "chat script exhausted");
    } else {
      step = std::move(steps_.front());
      steps_.pop_front();
      if (step.failure) throw ProviderError(*step.failure, "scripted failure");
      return step.text;
    }
  }
  return fallback_(req);
}

int ScriptedChatBackend::calls() const {
  std::lock_guard lock(mu_);
  return static_cast<int>(requests_.size());
}

std::vector<ChatRequest> ScriptedChatBackend::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::string OfflineChatBackend::complete_once(const ChatRequest& req) {
  const std::string text = req.user_text();
  if (req.purpose == "router" || req.purpose == "verify") return "Yes";
  if (req.purpose == "summarize") {
    std::string out;
    int bullets = 0;
    std::size_t start = 0;
    const std::string pages = section_after(text, "Pages:");
    while (bullets < 5 && start < pages.size()) {
      auto end = pages.find('\n', start);
      if (end == std::string::npos) end = pages.size();
      auto line = utf8::trim(std::string_view(pages).substr(start, end - start));
      if (!line.empty()) {
        out += "- " + line + "\n";
        ++bullets;
      }
      start = end + 1;
    }
    return out;
  }
  if (req.purpose == "extract_terms") {
    auto ws = words(section_after(text, "Context:"));
    std::stable_sort(ws.begin(), ws.end(),
                     [](const std::string& a, const std::string& b) { return utf8::length(a) > utf8::length(b); });
    std::set<std::string> seen;
    std::string out;
    for (const auto& w : ws) {
      if (seen.size() == 5) break;
      if (!seen.insert(w).second) continue;
      if (!out.empty()) out += ", ";
      out += w;
    }
    return out;
  }
  std::string option;
  if (auto it = answers_.find(req.subject); it != answers_.end()) {
    option = it->second;
  } else {
    option = std::string(1, "ABCD"[fnv1a(req.subject + "\x1f" + text) % 4]);
  }
  const bool bangla = utf8::contains_bengali(text);
  nlohmann::json reply{{"O", option}, {"R", bangla ? "প্রসঙ্গ অনুযায়ী এটি সঠিক উত্তর।" : "This option fits the context."}};
  return reply.dump(-1, ' ', false);
}

std::vector<EmbeddingVector> HashEmbeddingBackend::embed_once(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    EmbeddingVector v = EmbeddingVector::Zero(dim_);
    for (const auto& w : words(t)) {
      const auto h = fnv1a(w);
      v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_))] += (h >> 63) ? -1.0 : 1.0;
    }
    const double norm = v.norm();
    if (norm > 0) v /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<EmbeddingVector> OneHotEmbeddingBackend::embed_once(const std::vector<std::string>& texts) {
  std::lock_guard lock(mu_);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto [it, inserted] = slots_.try_emplace(t, static_cast<int>(slots_.size()));
    if (it->second >= dim_) {
      slots_.erase(it);
      throw ProviderError(ErrorClass::bad_request, "one-hot embedder ran out of dimensions");
    }
    out.push_back(EmbeddingVector::Unit(dim_, it->second));
  }
  return out;
}

std::vector<EmbeddingVector> RuleEmbeddingBackend::embed_once(const std::vector<std::string>& texts) {
  ++calls_;
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(rule_(t));
  return out;
}

std::vector<SearchResult> RuleSearchBackend::numbered_hits(int n) {
  std::vector<SearchResult> hits;
  for (int i = 1; i <= n; ++i) {
    hits.push_back({"https://example.test/" + std::to_string(i), "hit " + std::to_string(i), "", i});
  }
  return hits;
}

std::vector<SearchResult> RuleSearchBackend::search_once(std::string_view query, int max_links) {
  ++calls_;
  return rule_(query, max_links);
}

FetchedPage StaticFetchBackend::fetch_once(std::string_view url, std::chrono::seconds) {
  auto it = pages_.find(std::string(url));
  if (it == pages_.end()) throw ProviderError(ErrorClass::not_found, std::string(url) + " returned HTTP 404");
  if (it->second.status < 200 || it->second.status >= 300) {
    throw ProviderError(it->second.status >= 500 ? ErrorClass::server : ErrorClass::not_found,
                        std::string(url) + " returned HTTP " + std::to_string(it->second.status));
  }
  return it->second;
}

}  // namespace mcqrag
